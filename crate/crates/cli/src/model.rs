//! Model directory layout: `model.json` describing the run plus one array
//! container per parameter tensor. A pretrained model carries the shared
//! encoder and the frozen source mappers; an adapted model adds the target
//! mapper, the mechanism toggles, and any pinned prior source.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stablemind_core::harness::{AdaptOutcome, BrainEncoder, PretrainOutcome, Toggles};
use stablemind_core::ridge::{RidgeMapper, SourcePriorBank};
use stablemind_core::rng::SeededRng;

use crate::config::RunConfig;
use crate::container;
use crate::error::{CliError, CliResult};
use crate::report::write_json;

pub const MODEL: &str = "model.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperEntry {
    pub subject_id: u32,
    pub voxel_dim: usize,
    pub weight: String,
    pub bias: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    /// "pretrained" or "adapted".
    pub kind: String,
    /// Training seed the run used; the world seed lives in the dataset.
    pub seed: u64,
    pub config: RunConfig,
    /// Encoder parameter files in the encoder's canonical parameter order.
    pub encoder_params: Vec<String>,
    pub sources: Vec<MapperEntry>,
    pub target: Option<MapperEntry>,
    pub toggles: Option<Toggles>,
    pub pinned_source: Option<usize>,
}

fn save_mapper(dir: &Path, prefix: &str, mapper: &RidgeMapper) -> CliResult<MapperEntry> {
    let entry = MapperEntry {
        subject_id: mapper.subject_id,
        voxel_dim: mapper.voxel_dim,
        weight: format!("arrays/{prefix}_weight.sma"),
        bias: format!("arrays/{prefix}_bias.sma"),
    };
    container::save(&dir.join(&entry.weight), &mapper.weight)?;
    container::save(&dir.join(&entry.bias), &mapper.bias)?;
    Ok(entry)
}

fn load_mapper(dir: &Path, entry: &MapperEntry, frozen: bool) -> CliResult<RidgeMapper> {
    let weight = container::load(&dir.join(&entry.weight))?;
    let bias = container::load(&dir.join(&entry.bias))?;
    Ok(RidgeMapper::new(
        entry.subject_id,
        entry.voxel_dim,
        weight,
        bias,
        frozen,
    )?)
}

fn save_encoder(dir: &Path, encoder: &BrainEncoder) -> CliResult<Vec<String>> {
    let mut files = Vec::new();
    for (i, t) in encoder.param_tensors().into_iter().enumerate() {
        let rel = format!("arrays/encoder_{i:02}.sma");
        container::save(&dir.join(&rel), t)?;
        files.push(rel);
    }
    Ok(files)
}

fn load_encoder(dir: &Path, manifest: &ModelManifest) -> CliResult<BrainEncoder> {
    let cfg = &manifest.config;
    // Any seed works here: every initialized value is overwritten below.
    let mut rng = SeededRng::new(0, 0);
    let mut encoder = BrainEncoder::init(
        &cfg.encoder,
        cfg.world.latent_dim,
        cfg.world.embed_dim,
        &mut rng,
    )?;
    let slots = encoder.param_tensors_mut();
    if slots.len() != manifest.encoder_params.len() {
        return Err(CliError::Io(format!(
            "{}: {} encoder parameter files, architecture has {}",
            dir.join(MODEL).display(),
            manifest.encoder_params.len(),
            slots.len()
        )));
    }
    for (slot, rel) in slots.into_iter().zip(&manifest.encoder_params) {
        let path = dir.join(rel);
        let loaded = container::load(&path)?;
        if loaded.shape() != slot.shape() {
            return Err(CliError::Io(format!(
                "{}: shape {:?}, expected {:?}",
                path.display(),
                loaded.shape(),
                slot.shape()
            )));
        }
        *slot = loaded;
    }
    Ok(encoder)
}

pub fn save_pretrained(dir: &Path, cfg: &RunConfig, outcome: &PretrainOutcome) -> CliResult<()> {
    let arrays = dir.join("arrays");
    fs::create_dir_all(&arrays).map_err(|e| CliError::io_at(&arrays, e))?;
    let encoder_params = save_encoder(dir, &outcome.encoder)?;
    let mut sources = Vec::new();
    for m in outcome.bank.mappers() {
        sources.push(save_mapper(dir, &format!("source_{}", m.subject_id), m)?);
    }
    let manifest = ModelManifest {
        kind: "pretrained".to_string(),
        seed: cfg.train.seed,
        config: cfg.clone(),
        encoder_params,
        sources,
        target: None,
        toggles: None,
        pinned_source: None,
    };
    write_json(&dir.join(MODEL), &manifest)
}

pub fn save_adapted(
    dir: &Path,
    cfg: &RunConfig,
    bank: &SourcePriorBank,
    adapted: &AdaptOutcome,
) -> CliResult<()> {
    let arrays = dir.join("arrays");
    fs::create_dir_all(&arrays).map_err(|e| CliError::io_at(&arrays, e))?;
    let encoder_params = save_encoder(dir, &adapted.encoder)?;
    let mut sources = Vec::new();
    for m in bank.mappers() {
        sources.push(save_mapper(dir, &format!("source_{}", m.subject_id), m)?);
    }
    let target = save_mapper(dir, "target", &adapted.target_ridge)?;
    let manifest = ModelManifest {
        kind: "adapted".to_string(),
        seed: cfg.train.seed,
        config: cfg.clone(),
        encoder_params,
        sources,
        target: Some(target),
        toggles: Some(adapted.toggles),
        pinned_source: adapted.pinned_source,
    };
    write_json(&dir.join(MODEL), &manifest)
}

pub fn load_model_manifest(dir: &Path) -> CliResult<ModelManifest> {
    let path = dir.join(MODEL);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io_at(&path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| CliError::config_at(&path, e))?;
    manifest.config.validate()?;
    Ok(manifest)
}

/// Rebuilds the pretraining outcome a consumer needs (encoder + prior bank);
/// training curves stay in the original metrics file.
pub fn load_pretrained(dir: &Path) -> CliResult<(ModelManifest, PretrainOutcome)> {
    let manifest = load_model_manifest(dir)?;
    if manifest.kind != "pretrained" {
        return Err(CliError::Config(format!(
            "{}: kind '{}', expected 'pretrained'",
            dir.join(MODEL).display(),
            manifest.kind
        )));
    }
    let encoder = load_encoder(dir, &manifest)?;
    let mappers: Vec<RidgeMapper> = manifest
        .sources
        .iter()
        .map(|e| load_mapper(dir, e, true))
        .collect::<CliResult<_>>()?;
    let bank = SourcePriorBank::new(mappers)?;
    let outcome = PretrainOutcome {
        encoder,
        bank,
        subject_metrics: Vec::new(),
        epoch_loss: Vec::new(),
    };
    Ok((manifest, outcome))
}
