//! Dataset directory layout: a JSON manifest describing subjects, splits and
//! seeds, plus one array container per tensor under `arrays/`.
//!
//! Stimulus images are derived data; the manifest stores the latent codes
//! they render from, so a reloaded world is bitwise-identical to the
//! generated one without shipping megabytes of pixels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stablemind_core::harness::{render_stimulus, FrozenImageEncoder, Stimulus, SubjectData, World};
use stablemind_core::tensor::Tensor;

use crate::config::RunConfig;
use crate::container;
use crate::error::{CliError, CliResult};
use crate::report::write_json;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: u32,
    pub voxel_dim: usize,
    pub role: String,
    pub basis: String,
    pub train_voxels: String,
    pub val_voxels: String,
}

/// Stimulus id ranges backing each split; val ids continue after train ids.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub n_train: usize,
    pub n_adapt: usize,
    pub n_val: usize,
    pub train_id_start: u64,
    pub val_id_start: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    /// World seed; training seeds live in the config.
    pub seed: u64,
    pub config: RunConfig,
    pub subjects: Vec<SubjectEntry>,
    pub splits: Splits,
    pub train_latents: String,
    pub val_latents: String,
}

fn latents_tensor(stimuli: &[Stimulus], k: usize) -> CliResult<Tensor> {
    let mut data = Vec::with_capacity(stimuli.len() * k);
    for s in stimuli {
        data.extend_from_slice(&s.latent);
    }
    Ok(Tensor::new(vec![stimuli.len(), k], data)?)
}

/// Writes the world out as manifest + containers. Rerunning with the same
/// seed and config reproduces every byte.
pub fn write_dataset(dir: &Path, cfg: &RunConfig, world: &World) -> CliResult<DataManifest> {
    let arrays = dir.join("arrays");
    fs::create_dir_all(&arrays).map_err(|e| CliError::io_at(&arrays, e))?;

    let k = world.spec.latent_dim;
    let train_latents = "arrays/train_latents.sma".to_string();
    let val_latents = "arrays/val_latents.sma".to_string();
    container::save(&dir.join(&train_latents), &latents_tensor(&world.train_stimuli, k)?)?;
    container::save(&dir.join(&val_latents), &latents_tensor(&world.val_stimuli, k)?)?;

    let n_subjects = world.subjects.len();
    let mut subjects = Vec::with_capacity(n_subjects);
    for (i, sub) in world.subjects.iter().enumerate() {
        let id = sub.spec.subject_id;
        let role = if i + 1 == n_subjects { "target" } else { "source" };
        let entry = SubjectEntry {
            subject_id: id,
            voxel_dim: sub.spec.voxel_dim,
            role: role.to_string(),
            basis: format!("arrays/subject_{id}_basis.sma"),
            train_voxels: format!("arrays/subject_{id}_train.sma"),
            val_voxels: format!("arrays/subject_{id}_val.sma"),
        };
        container::save(&dir.join(&entry.basis), &sub.basis)?;
        container::save(&dir.join(&entry.train_voxels), &sub.train_voxels)?;
        container::save(&dir.join(&entry.val_voxels), &sub.val_voxels)?;
        subjects.push(entry);
    }

    let manifest = DataManifest {
        seed: world.seed,
        config: cfg.clone(),
        subjects,
        splits: Splits {
            n_train: world.spec.n_train_per_subject,
            n_adapt: world.spec.n_target_adapt,
            n_val: world.spec.n_target_val,
            train_id_start: 0,
            val_id_start: world.spec.n_train_per_subject as u64,
        },
        train_latents,
        val_latents,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> CliResult<DataManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io_at(&path, e))?;
    let manifest: DataManifest =
        serde_json::from_str(&text).map_err(|e| CliError::config_at(&path, e))?;
    manifest.config.validate()?;
    Ok(manifest)
}

fn expect_shape(path: &PathBuf, t: &Tensor, shape: &[usize]) -> CliResult<()> {
    if t.shape() != shape {
        return Err(CliError::Io(format!(
            "{}: shape {:?}, expected {:?}",
            path.display(),
            t.shape(),
            shape
        )));
    }
    Ok(())
}

fn load_stimuli(
    dir: &Path,
    rel: &str,
    id_start: u64,
    count: usize,
    k: usize,
    encoder: &FrozenImageEncoder,
    image_size: usize,
) -> CliResult<Vec<Stimulus>> {
    let path = dir.join(rel);
    let latents = container::load(&path)?;
    expect_shape(&path, &latents, &[count, k])?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let latent = latents.row(i).to_vec();
        let image = render_stimulus(&latent, image_size)?;
        let clean_embedding = encoder.embed(&image)?;
        out.push(Stimulus {
            id: id_start + i as u64,
            latent,
            image,
            clean_embedding,
        });
    }
    Ok(out)
}

/// Reassembles the world from a dataset directory. Latents and voxels come
/// from the containers; images and clean embeddings are re-derived, which is
/// exact because both pipelines are deterministic in the stored bits.
pub fn load_world(dir: &Path, manifest: &DataManifest) -> CliResult<World> {
    let spec = &manifest.config.world;
    if manifest.subjects.len() != spec.subjects.len() {
        return Err(CliError::Config(format!(
            "{}: {} subjects listed, config declares {}",
            dir.join(MANIFEST).display(),
            manifest.subjects.len(),
            spec.subjects.len()
        )));
    }
    let k = spec.latent_dim;
    let image_encoder = FrozenImageEncoder::new(manifest.seed, spec.image_size, spec.embed_dim)?;
    let splits = &manifest.splits;
    let train_stimuli = load_stimuli(
        dir,
        &manifest.train_latents,
        splits.train_id_start,
        splits.n_train,
        k,
        &image_encoder,
        spec.image_size,
    )?;
    let val_stimuli = load_stimuli(
        dir,
        &manifest.val_latents,
        splits.val_id_start,
        splits.n_val,
        k,
        &image_encoder,
        spec.image_size,
    )?;

    let mut subjects = Vec::with_capacity(spec.subjects.len());
    for (entry, sub_spec) in manifest.subjects.iter().zip(&spec.subjects) {
        if entry.subject_id != sub_spec.subject_id || entry.voxel_dim != sub_spec.voxel_dim {
            return Err(CliError::Config(format!(
                "{}: subject {} ({} voxels) does not match config subject {} ({} voxels)",
                dir.join(MANIFEST).display(),
                entry.subject_id,
                entry.voxel_dim,
                sub_spec.subject_id,
                sub_spec.voxel_dim
            )));
        }
        let d = entry.voxel_dim;
        let basis_path = dir.join(&entry.basis);
        let basis = container::load(&basis_path)?;
        expect_shape(&basis_path, &basis, &[d, k])?;
        let train_path = dir.join(&entry.train_voxels);
        let train_voxels = container::load(&train_path)?;
        expect_shape(&train_path, &train_voxels, &[splits.n_train, d])?;
        let val_path = dir.join(&entry.val_voxels);
        let val_voxels = container::load(&val_path)?;
        expect_shape(&val_path, &val_voxels, &[splits.n_val, d])?;
        subjects.push(SubjectData {
            spec: *sub_spec,
            basis,
            train_voxels,
            val_voxels,
        });
    }

    Ok(World {
        spec: spec.clone(),
        seed: manifest.seed,
        train_stimuli,
        val_stimuli,
        subjects,
        image_encoder,
    })
}

/// Resolves the effective run configuration for a command that reads a
/// dataset: an explicit config must agree with the manifest on the world it
/// was generated from; otherwise the manifest's own config applies.
pub fn effective_config(
    manifest: &DataManifest,
    explicit: Option<RunConfig>,
    seed: Option<u64>,
) -> CliResult<RunConfig> {
    let mut cfg = match explicit {
        Some(cfg) => {
            if cfg.world != manifest.config.world {
                return Err(CliError::Config(
                    "config world section does not match the dataset manifest; \
                     regenerate the data or drop the world overrides"
                        .to_string(),
                ));
            }
            cfg
        }
        None => manifest.config.clone(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
