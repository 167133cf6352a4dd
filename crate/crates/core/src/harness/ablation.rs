//! Ablation grids over the adaptation mechanisms.
//!
//! A grid is an ordered list of rows, each pairing a mechanism toggle set
//! with an encoder configuration; rows differ only in adaptation-time
//! settings, so every row of a grid shares one pretrained model per seed.
//! The world stays fixed across seeds; seeds vary initialization, shuffling,
//! and augmentation streams. Runs aggregate final validation retrieval
//! across seeds with population standard deviations, and seed-level work
//! parallelizes without changing any result: placement is by seed index,
//! never by completion order.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::alignment::{RetrievalAccuracy, RetrievalConfig};
use crate::error::{Error, Result};
use crate::harness::encoder::EncoderConfig;
use crate::harness::train::{adapt, pretrain, Toggles, TrainConfig};
use crate::harness::world::World;
use crate::image::BlurStrategy;
use crate::ridge::PriorMode;
use crate::spectral::FbaVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    /// Mechanism on/off matrix: baseline, each mechanism alone, all three.
    Tab3,
    /// Source prior selection modes, fusion mechanism only.
    Tab5,
    /// Augmentation variants plus a no-augmentation control.
    Tab6,
    /// Blur supervision strategies.
    Blur,
    /// Augmentation hook placement across encoder blocks.
    FbaPos,
}

impl Grid {
    pub const ALL: [Grid; 5] = [Grid::Tab3, Grid::Tab5, Grid::Tab6, Grid::Blur, Grid::FbaPos];

    pub fn name(&self) -> &'static str {
        match self {
            Grid::Tab3 => "tab3",
            Grid::Tab5 => "tab5",
            Grid::Tab6 => "tab6",
            Grid::Blur => "blur",
            Grid::FbaPos => "fba-pos",
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Grid> {
        Grid::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown grid '{s}'; expected one of tab3, tab5, tab6, blur, fba-pos"
                ))
            })
    }
}

/// One configuration to adapt and evaluate.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub label: String,
    pub toggles: Toggles,
    pub encoder_cfg: EncoderConfig,
}

fn row(label: &str, toggles: Toggles, encoder_cfg: EncoderConfig) -> GridRow {
    GridRow {
        label: label.to_string(),
        toggles,
        encoder_cfg,
    }
}

fn only(csrr: bool, fba: bool, dib: bool) -> Toggles {
    Toggles { csrr, fba, dib }
}

/// Expands a grid against a base configuration. Rows override only
/// adaptation-time settings, never the encoder architecture, which keeps one
/// pretrained model valid for the whole grid.
pub fn grid_rows(grid: Grid, base: &EncoderConfig) -> Result<Vec<GridRow>> {
    base.validate()?;
    let rows = match grid {
        Grid::Tab3 => vec![
            row("baseline", Toggles::baseline(), base.clone()),
            row("csrr-only", only(true, false, false), base.clone()),
            row("fba-only", only(false, true, false), base.clone()),
            row("dib-only", only(false, false, true), base.clone()),
            row("full", Toggles::full(), base.clone()),
        ],
        Grid::Tab5 => [
            ("all-average", PriorMode::AllAverage),
            ("random-one", PriorMode::RandomOne),
            ("nearest-one", PriorMode::NearestOne),
        ]
        .into_iter()
        .map(|(label, mode)| {
            let mut cfg = base.clone();
            cfg.csrr.prior_mode = mode;
            row(label, only(true, false, false), cfg)
        })
        .collect(),
        Grid::Tab6 => {
            let mut rows = vec![row("vanilla", only(false, false, false), base.clone())];
            for (label, variant) in [
                ("gaussian", FbaVariant::Gaussian),
                ("random-noise", FbaVariant::RandomNoise),
                ("uniform", FbaVariant::Uniform),
                ("swap", FbaVariant::Swap),
                ("mix", FbaVariant::Mix),
            ] {
                let mut cfg = base.clone();
                cfg.fba_variant = variant;
                rows.push(row(label, only(false, true, false), cfg));
            }
            rows
        }
        Grid::Blur => [
            ("clean", BlurStrategy::Clean),
            ("whole", BlurStrategy::Whole),
            ("fixed-radius", BlurStrategy::FixedRadius),
            ("difficulty-aware", BlurStrategy::DifficultyAware),
        ]
        .into_iter()
        .map(|(label, strategy)| {
            let mut cfg = base.clone();
            cfg.dib.strategy = strategy;
            row(label, only(false, false, true), cfg)
        })
        .collect(),
        Grid::FbaPos => {
            if base.n_blocks < 4 {
                return Err(Error::invalid(format!(
                    "grid fba-pos: hooks go up to block 4, encoder has {} blocks",
                    base.n_blocks
                )));
            }
            [
                ("none", vec![]),
                ("b1", vec![1]),
                ("b2", vec![2]),
                ("b3", vec![3]),
                ("b4", vec![4]),
                ("b1-2", vec![1, 2]),
                ("b2-3", vec![2, 3]),
                ("b3-4", vec![3, 4]),
            ]
            .into_iter()
            .map(|(label, positions)| {
                let mut cfg = base.clone();
                cfg.fba_positions = positions.into_iter().collect();
                row(label, only(false, true, false), cfg)
            })
            .collect()
        }
    };
    for r in &rows {
        r.encoder_cfg.validate()?;
    }
    Ok(rows)
}

/// One grid row aggregated across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct AggregatedRow {
    pub label: String,
    pub csrr: bool,
    pub fba: bool,
    pub dib: bool,
    pub image_mean: f64,
    pub image_std: f64,
    pub brain_mean: f64,
    pub brain_std: f64,
    pub seeds: usize,
}

/// One (row, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub image_retrieval: f64,
    pub brain_retrieval: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub grid: String,
    /// Aggregates in grid declaration order.
    pub rows: Vec<AggregatedRow>,
    /// Every run, row-major over (row, seed).
    pub runs: Vec<RunRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pretrains once, then adapts and evaluates every row. Accuracies come back
/// in row order.
fn run_seed(
    world: &World,
    base: &EncoderConfig,
    rows: &[GridRow],
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
    seed: u64,
) -> Result<Vec<RetrievalAccuracy>> {
    let cfg = TrainConfig { seed, ..*train_cfg };
    let pretrained = pretrain(world, base, &cfg, retrieval)?;
    rows.iter()
        .map(|r| {
            Ok(adapt(world, &pretrained, r.toggles, &r.encoder_cfg, &cfg, retrieval)?.final_val)
        })
        .collect()
}

fn run_seeds(
    world: &World,
    base: &EncoderConfig,
    rows: &[GridRow],
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<Vec<RetrievalAccuracy>>> {
    let workers = threads.max(1).min(seeds.len());
    if workers <= 1 {
        return seeds
            .iter()
            .map(|&s| run_seed(world, base, rows, train_cfg, retrieval, s))
            .collect();
    }
    let mut slots: Vec<Option<Vec<RetrievalAccuracy>>> = vec![None; seeds.len()];
    let collected: Vec<Result<Vec<(usize, Vec<RetrievalAccuracy>)>>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = w;
                        while i < seeds.len() {
                            out.push((i, run_seed(world, base, rows, train_cfg, retrieval, seeds[i])?));
                            i += workers;
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        });
    for worker_rows in collected {
        for (i, accs) in worker_rows? {
            slots[i] = Some(accs);
        }
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every seed index is covered by exactly one worker"))
        .collect())
}

/// Runs an explicit row list over the given seeds, optionally spreading
/// seeds across threads. The report carries every individual run plus
/// per-row aggregates of final validation retrieval.
pub fn ablation_run_rows(
    world: &World,
    grid_name: &str,
    base: &EncoderConfig,
    rows: &[GridRow],
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation: no seeds"));
    }
    if rows.is_empty() {
        return Err(Error::invalid("ablation: no rows"));
    }
    train_cfg.validate()?;
    base.validate()?;
    for r in &rows[..] {
        r.encoder_cfg.validate()?;
        // One pretrained model serves the whole grid, so rows must not
        // disagree with the pretraining architecture.
        if r.encoder_cfg.n_blocks != base.n_blocks || r.encoder_cfg.hidden_dim != base.hidden_dim {
            return Err(Error::invalid(format!(
                "ablation: row '{}' changes the encoder architecture",
                r.label
            )));
        }
    }
    let per_seed = run_seeds(world, base, rows, train_cfg, retrieval, seeds, threads)?;
    let mut runs = Vec::with_capacity(rows.len() * seeds.len());
    let aggregated = rows
        .iter()
        .enumerate()
        .map(|(ri, r)| {
            for (si, &seed) in seeds.iter().enumerate() {
                runs.push(RunRecord {
                    label: r.label.clone(),
                    seed,
                    image_retrieval: per_seed[si][ri].image_retrieval,
                    brain_retrieval: per_seed[si][ri].brain_retrieval,
                });
            }
            let images: Vec<f64> = per_seed.iter().map(|s| s[ri].image_retrieval).collect();
            let brains: Vec<f64> = per_seed.iter().map(|s| s[ri].brain_retrieval).collect();
            let (image_mean, image_std) = mean_std(&images);
            let (brain_mean, brain_std) = mean_std(&brains);
            AggregatedRow {
                label: r.label.clone(),
                csrr: r.toggles.csrr,
                fba: r.toggles.fba,
                dib: r.toggles.dib,
                image_mean,
                image_std,
                brain_mean,
                brain_std,
                seeds: seeds.len(),
            }
        })
        .collect();
    Ok(AblationReport {
        grid: grid_name.to_string(),
        rows: aggregated,
        runs,
    })
}

/// Expands a named grid against `base` and runs it.
pub fn ablation_run(
    world: &World,
    grid: Grid,
    base: &EncoderConfig,
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<AblationReport> {
    let rows = grid_rows(grid, base)?;
    ablation_run_rows(world, grid.name(), base, &rows, train_cfg, retrieval, seeds, threads)
}
