//! Implementations behind the CLI subcommands. Each one resolves its
//! effective configuration, runs the corresponding library entry point, and
//! writes artifacts whose bytes depend only on the inputs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use stablemind_core::alignment::RetrievalAccuracy;
use stablemind_core::harness::{
    ablation_run, adapt, pretrain, subject_embeddings, AblationReport, EpochRecord, Grid,
    PretrainOutcome, SubjectMetrics, Toggles, World,
};
use stablemind_core::image::{
    blend_images, blend_mask, clear_radius, mask_to_image, prepare_blur_context, write_ppm,
    BlurStrategy,
};
use stablemind_core::harness::render_stimulus;
use stablemind_core::rng::{SeededRng, StreamDomain};
use stablemind_core::spectral::{pairwise_gaps, subject_signature, SpectralGaps, SubjectSignature};

use crate::config::{load_config, RunConfig};
use crate::container;
use crate::data::{effective_config, load_manifest, load_world, write_dataset};
use crate::error::{CliError, CliResult};
use crate::model::{load_pretrained, save_adapted, save_pretrained};
use crate::report::{ablation_csv, adapt_csv, pretrain_csv, spectral_csv, write_json};

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io_at(dir, e))
}

/// Effective config for a command that reads a dataset: explicit config (if
/// any) reconciled with the manifest, then the seed override.
fn dataset_config(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> CliResult<(crate::data::DataManifest, RunConfig, World)> {
    let manifest = load_manifest(data)?;
    let explicit = match config {
        Some(p) => Some(load_config(Some(p), None)?),
        None => None,
    };
    let cfg = effective_config(&manifest, explicit, seed)?;
    let world = load_world(data, &manifest)?;
    Ok((manifest, cfg, world))
}

pub fn cmd_gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let world = World::generate(&cfg.world, cfg.train.seed)?;
    ensure_dir(out)?;
    let manifest = write_dataset(out, &cfg, &world)?;
    info!(
        "dataset: {} subjects, {} train / {} val stimuli, seed {}",
        manifest.subjects.len(),
        manifest.splits.n_train,
        manifest.splits.n_val,
        manifest.seed
    );
    println!(
        "wrote dataset with {} subjects to {}",
        manifest.subjects.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PretrainMetrics {
    config: RunConfig,
    world_seed: u64,
    epoch_loss: Vec<f64>,
    subjects: Vec<SubjectMetrics>,
}

pub fn cmd_pretrain(
    config: Option<&Path>,
    data: &Path,
    seed: Option<u64>,
    out: &Path,
) -> CliResult<()> {
    let (manifest, cfg, world) = dataset_config(data, config, seed)?;
    let retrieval = cfg.retrieval_config()?;
    info!(
        "pretraining on {} sources, {} epochs, seed {}",
        world.subjects.len() - 1,
        cfg.train.epochs,
        cfg.train.seed
    );
    let outcome = pretrain(&world, &cfg.encoder, &cfg.train, &retrieval)?;
    ensure_dir(out)?;
    save_pretrained(&out.join("model"), &cfg, &outcome)?;
    write_json(
        &out.join("metrics.json"),
        &PretrainMetrics {
            config: cfg,
            world_seed: manifest.seed,
            epoch_loss: outcome.epoch_loss.clone(),
            subjects: outcome.subject_metrics.clone(),
        },
    )?;
    pretrain_csv(&out.join("retrieval.csv"), &outcome.subject_metrics)?;
    for m in &outcome.subject_metrics {
        println!(
            "source {}: val image {:.4} / brain {:.4}",
            m.subject_id, m.val.image_retrieval, m.val.brain_retrieval
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AdaptMetrics {
    config: RunConfig,
    world_seed: u64,
    toggles: Toggles,
    baseline: bool,
    pinned_source: Option<usize>,
    steps: usize,
    step_losses: Vec<f64>,
    history: Vec<EpochRecord>,
    final_val: RetrievalAccuracy,
}

fn obtain_pretrained(
    model: Option<&Path>,
    cfg: &RunConfig,
    world: &World,
) -> CliResult<PretrainOutcome> {
    match model {
        Some(dir) => {
            let (mm, outcome) = load_pretrained(dir)?;
            if mm.config.world != cfg.world || mm.config.encoder != cfg.encoder {
                return Err(CliError::Config(format!(
                    "{}: pretrained model was built for a different world or encoder configuration",
                    dir.display()
                )));
            }
            info!("reusing pretrained model from {}", dir.display());
            Ok(outcome)
        }
        None => {
            let retrieval = cfg.retrieval_config()?;
            info!("no --model given; pretraining inline");
            Ok(pretrain(world, &cfg.encoder, &cfg.train, &retrieval)?)
        }
    }
}

pub fn cmd_adapt(
    config: Option<&Path>,
    data: &Path,
    seed: Option<u64>,
    out: &Path,
    toggles: Toggles,
    model: Option<&Path>,
) -> CliResult<()> {
    let (manifest, cfg, world) = dataset_config(data, config, seed)?;
    let retrieval = cfg.retrieval_config()?;
    let pretrained = obtain_pretrained(model, &cfg, &world)?;
    info!(
        "adapting target {} with csrr={} fba={} dib={}",
        world.target().spec.subject_id,
        toggles.csrr,
        toggles.fba,
        toggles.dib
    );
    let adapted = adapt(&world, &pretrained, toggles, &cfg.encoder, &cfg.train, &retrieval)?;
    ensure_dir(out)?;
    save_adapted(&out.join("model"), &cfg, &pretrained.bank, &adapted)?;
    write_json(
        &out.join("metrics.json"),
        &AdaptMetrics {
            world_seed: manifest.seed,
            toggles: adapted.toggles,
            baseline: adapted.baseline(),
            pinned_source: adapted.pinned_source,
            steps: adapted.step_losses.len(),
            step_losses: adapted.step_losses.clone(),
            history: adapted.history.clone(),
            final_val: adapted.final_val,
            config: cfg.clone(),
        },
    )?;
    adapt_csv(
        &out.join("result.csv"),
        adapted.toggles,
        adapted.final_val.image_retrieval,
        adapted.final_val.brain_retrieval,
    )?;
    let emb_dir = out.join("embeddings");
    ensure_dir(&emb_dir)?;
    for (id, emb) in subject_embeddings(&world, &pretrained.bank, &adapted, &cfg.encoder)? {
        container::save(&emb_dir.join(format!("subject_{id}_val.sma")), &emb)?;
    }
    println!(
        "target val: image {:.4} / brain {:.4} (baseline: {})",
        adapted.final_val.image_retrieval,
        adapted.final_val.brain_retrieval,
        adapted.baseline()
    );
    Ok(())
}

#[derive(Serialize)]
struct AblateDoc {
    config: RunConfig,
    world_seed: u64,
    seeds: Vec<u64>,
    threads: usize,
    report: AblationReport,
}

pub fn cmd_ablate(
    config: Option<&Path>,
    data: &Path,
    seed: Option<u64>,
    out: &Path,
    grid: Grid,
    seeds: Vec<u64>,
    threads: usize,
) -> CliResult<()> {
    let (manifest, cfg, world) = dataset_config(data, config, seed)?;
    let retrieval = cfg.retrieval_config()?;
    let seeds = if seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        seeds
    };
    info!(
        "ablation grid {} over {} seeds with {} threads",
        grid,
        seeds.len(),
        threads
    );
    let report = ablation_run(
        &world,
        grid,
        &cfg.encoder,
        &cfg.train,
        &retrieval,
        &seeds,
        threads,
    )?;
    ensure_dir(out)?;
    ablation_csv(&out.join("table.csv"), &report)?;
    write_json(
        &out.join("report.json"),
        &AblateDoc {
            config: cfg,
            world_seed: manifest.seed,
            seeds,
            threads,
            report,
        },
    )?;
    println!("grid {grid} finished: table at {}", out.join("table.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct SpectralPair {
    a: String,
    b: String,
    gaps: SpectralGaps,
}

#[derive(Serialize)]
struct SpectralDoc {
    inputs: Vec<String>,
    pairs: Vec<SpectralPair>,
    average: SpectralGaps,
}

fn file_label(path: &Path, index: usize) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("input{index}"))
}

pub fn cmd_spectral_report(files: &[PathBuf], out: &Path) -> CliResult<()> {
    if files.len() < 2 {
        return Err(CliError::Config(format!(
            "spectral report needs at least two embedding files, got {}",
            files.len()
        )));
    }
    let mut signatures: Vec<(u32, SubjectSignature)> = Vec::with_capacity(files.len());
    let mut labels = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let embeddings = container::load(f)?;
        signatures.push((i as u32, subject_signature(&embeddings)?));
        labels.push(file_label(f, i));
    }
    let (pairs, average) = pairwise_gaps(&signatures)?;
    let named: Vec<(String, String, SpectralGaps)> = pairs
        .iter()
        .map(|&(a, b, g)| (labels[a as usize].clone(), labels[b as usize].clone(), g))
        .collect();
    ensure_dir(out)?;
    spectral_csv(&out.join("spectral.csv"), &named, &average)?;
    write_json(
        &out.join("spectral.json"),
        &SpectralDoc {
            inputs: files.iter().map(|f| f.display().to_string()).collect(),
            pairs: named
                .iter()
                .map(|(a, b, g)| SpectralPair {
                    a: a.clone(),
                    b: b.clone(),
                    gaps: *g,
                })
                .collect(),
            average,
        },
    )?;
    println!(
        "average gaps over {} pairs: D_freq {:.6} D_amp {:.6} D_pha {:.6}",
        named.len(),
        average.d_freq,
        average.d_amp,
        average.d_pha
    );
    Ok(())
}

#[derive(Serialize)]
struct DumpDoc {
    config: RunConfig,
    stimuli: usize,
    hardness_levels: Vec<f64>,
}

/// Debug visualization: renders a few stimuli and writes the clean image,
/// the fully blurred base, and the mask/blend at several hardness levels.
pub fn cmd_dump_blur(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let size = cfg.world.image_size;
    let dib = &cfg.encoder.dib;
    if dib.strategy != BlurStrategy::DifficultyAware {
        info!("strategy {:?}; masks below show the difficulty-aware geometry anyway", dib.strategy);
    }
    ensure_dir(out)?;
    // Same latent stream the generated world reads, so these are exactly the
    // first training stimuli of the dataset this config + seed would create.
    let mut rng = SeededRng::for_domain(cfg.train.seed, StreamDomain::WorldLatent, 0, 0);
    let hardness_levels = vec![0.0, 0.5, 1.0];
    let n = 4;
    for i in 0..n {
        let latent: Vec<f64> = (0..cfg.world.latent_dim)
            .map(|_| rng.standard_gaussian())
            .collect();
        let image = render_stimulus(&latent, size)?;
        let ctx = prepare_blur_context(&image, dib)?;
        write_image(&out.join(format!("stim{i}_clean.ppm")), &image)?;
        write_image(&out.join(format!("stim{i}_whole.ppm")), &ctx.base)?;
        for &h in &hardness_levels {
            let r = clear_radius(ctx.rho, h, dib);
            let mask = blend_mask(size, size, r, dib.lambda_alpha)?;
            let tag = (h * 100.0).round() as u32;
            write_image(
                &out.join(format!("stim{i}_mask_h{tag:03}.ppm")),
                &mask_to_image(&mask)?,
            )?;
            write_image(
                &out.join(format!("stim{i}_blur_h{tag:03}.ppm")),
                &blend_images(&mask, &image, &ctx.base)?,
            )?;
        }
    }
    write_json(
        &out.join("dump.json"),
        &DumpDoc {
            config: cfg,
            stimuli: n,
            hardness_levels,
        },
    )?;
    println!("wrote {n} stimuli as PPM files to {}", out.display());
    Ok(())
}

fn write_image(path: &Path, image: &stablemind_core::image::Image) -> CliResult<()> {
    let mut buf = Vec::new();
    write_ppm(image, &mut buf).map_err(|e| CliError::io_at(path, e))?;
    let mut f = fs::File::create(path).map_err(|e| CliError::io_at(path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io_at(path, e))
}
