//! Cross-subject ridge reuse.
//!
//! Each subject owns an affine mapper from voxel space to a shared latent
//! space. Source subjects' mappers are frozen after pretraining and reused
//! during target adaptation: target voxels are dimension-matched to each
//! source's voxel width, pushed through the frozen mappers, aggregated into a
//! source prior, fused with the target mapper's output, and used as a
//! stop-gradient distillation anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{cosine, Tensor};

/// Affine voxel-to-latent mapper `R = W v + b` for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMapper {
    pub subject_id: u32,
    pub voxel_dim: usize,
    /// `latent_dim x voxel_dim`.
    pub weight: Tensor,
    /// `[latent_dim]`.
    pub bias: Tensor,
    pub frozen: bool,
}

impl RidgeMapper {
    pub fn new(
        subject_id: u32,
        voxel_dim: usize,
        weight: Tensor,
        bias: Tensor,
        frozen: bool,
    ) -> Result<Self> {
        let (latent, w_voxel) = weight.dims2()?;
        if w_voxel != voxel_dim {
            return Err(Error::invalid(format!(
                "ridge mapper: weight width {w_voxel} does not match voxel_dim {voxel_dim}"
            )));
        }
        if bias.shape() != [latent] {
            return Err(Error::invalid(format!(
                "ridge mapper: bias shape {:?}, expected [{latent}]",
                bias.shape()
            )));
        }
        Ok(RidgeMapper {
            subject_id,
            voxel_dim,
            weight,
            bias,
            frozen,
        })
    }

    /// Seeded initialization with weights scaled by `1/sqrt(voxel_dim)` and
    /// zero bias.
    pub fn init(
        subject_id: u32,
        voxel_dim: usize,
        latent_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let scale = 1.0 / (voxel_dim as f64).sqrt();
        let data = (0..latent_dim * voxel_dim)
            .map(|_| rng.standard_gaussian() * scale)
            .collect();
        RidgeMapper::new(
            subject_id,
            voxel_dim,
            Tensor::new(vec![latent_dim, voxel_dim], data)?,
            Tensor::zeros(&[latent_dim]),
            false,
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Maps a single voxel vector into the latent space.
    pub fn forward(&self, voxels: &[f64]) -> Result<Vec<f64>> {
        if voxels.len() != self.voxel_dim {
            return Err(Error::invalid(format!(
                "ridge forward: expected {} voxels, got {}",
                self.voxel_dim,
                voxels.len()
            )));
        }
        let latent = self.latent_dim();
        let mut out = Vec::with_capacity(latent);
        for k in 0..latent {
            out.push(crate::tensor::dot(self.weight.row(k), voxels) + self.bias.data()[k]);
        }
        Ok(out)
    }

    /// Maps a `B x voxel_dim` batch into `B x latent_dim`.
    pub fn forward_batch(&self, voxels: &Tensor) -> Result<Tensor> {
        let (rows, cols) = voxels.dims2()?;
        if cols != self.voxel_dim {
            return Err(Error::invalid(format!(
                "ridge forward: expected width {}, got {cols}",
                self.voxel_dim
            )));
        }
        let mut out = Vec::with_capacity(rows * self.latent_dim());
        for i in 0..rows {
            out.extend(self.forward(voxels.row(i))?);
        }
        Tensor::new(vec![rows, self.latent_dim()], out)
    }
}

/// Matches a voxel vector to another subject's width: keep the head when
/// truncating, zero-pad the tail when extending. Head voxels are the ones that
/// correspond across subjects in the synthetic world, which is what makes the
/// reused mappers see familiar structure.
pub fn adapt_dims(voxels: &[f64], target_dim: usize) -> Result<Vec<f64>> {
    if target_dim == 0 {
        return Err(Error::invalid("adapt_dims: target width must be positive"));
    }
    let mut out = Vec::with_capacity(target_dim);
    out.extend_from_slice(&voxels[..voxels.len().min(target_dim)]);
    out.resize(target_dim, 0.0);
    Ok(out)
}

/// How the frozen source mappers are aggregated into a prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Mean of every source projection.
    AllAverage,
    /// One uniformly drawn source (fresh draw per step unless pinned).
    RandomOne,
    /// The source whose batch-mean projection has the highest cosine to the
    /// batch-mean target projection; ties go to the lowest subject id.
    NearestOne,
}

/// Cross-subject reuse settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsrrConfig {
    /// Fusion weight on the source prior.
    pub alpha: f64,
    pub prior_mode: PriorMode,
    /// Fuse the prior into the representation (Eq. output path).
    pub fuse: bool,
    /// Add the cosine distillation term to the loss.
    pub cos_loss: bool,
    /// Pin the RandomOne draw once per run instead of once per step.
    pub random_one_fixed: bool,
}

impl Default for CsrrConfig {
    fn default() -> Self {
        CsrrConfig {
            alpha: 0.1,
            prior_mode: PriorMode::AllAverage,
            fuse: true,
            cos_loss: true,
            random_one_fixed: false,
        }
    }
}

impl CsrrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "csrr alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Frozen source mappers available during adaptation.
#[derive(Debug, Clone)]
pub struct SourcePriorBank {
    mappers: Vec<RidgeMapper>,
}

impl SourcePriorBank {
    /// All mappers must be frozen; the bank is read-only by construction.
    pub fn new(mappers: Vec<RidgeMapper>) -> Result<Self> {
        if mappers.is_empty() {
            return Err(Error::invalid("source prior bank: no mappers"));
        }
        if let Some(open) = mappers.iter().find(|m| !m.frozen) {
            return Err(Error::invalid(format!(
                "source prior bank: mapper for subject {} is not frozen",
                open.subject_id
            )));
        }
        let latent = mappers[0].latent_dim();
        if mappers.iter().any(|m| m.latent_dim() != latent) {
            return Err(Error::invalid(
                "source prior bank: mappers disagree on latent width".to_string(),
            ));
        }
        Ok(SourcePriorBank { mappers })
    }

    pub fn mappers(&self) -> &[RidgeMapper] {
        &self.mappers
    }

    pub fn len(&self) -> usize {
        self.mappers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mappers.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.mappers[0].latent_dim()
    }

    /// Projects a target voxel batch through every source mapper after
    /// dimension matching. Returns one `B x latent` tensor per source.
    pub fn project_batch(&self, target_voxels: &Tensor) -> Result<Vec<Tensor>> {
        let (rows, _) = target_voxels.dims2()?;
        let mut out = Vec::with_capacity(self.mappers.len());
        for mapper in &self.mappers {
            let mut data = Vec::with_capacity(rows * mapper.latent_dim());
            for i in 0..rows {
                let matched = adapt_dims(target_voxels.row(i), mapper.voxel_dim)?;
                data.extend(mapper.forward(&matched)?);
            }
            out.push(Tensor::new(vec![rows, mapper.latent_dim()], data)?);
        }
        Ok(out)
    }

    /// Index of the source chosen by the configured mode for this batch.
    ///
    /// `NearestOne` compares batch means, so selection happens once per batch;
    /// `RandomOne` consumes one draw from the caller's prior stream.
    pub fn select(
        &self,
        projections: &[Tensor],
        target_latents: &Tensor,
        mode: PriorMode,
        rng: &mut SeededRng,
    ) -> Result<Option<usize>> {
        match mode {
            PriorMode::AllAverage => Ok(None),
            PriorMode::RandomOne => Ok(Some(rng.below(self.mappers.len() as u64) as usize)),
            PriorMode::NearestOne => {
                let target_mean = column_mean(target_latents)?;
                let mut best: Option<(usize, f64)> = None;
                for (idx, proj) in projections.iter().enumerate() {
                    let sim = cosine(&column_mean(proj)?, &target_mean)?;
                    let better = match best {
                        None => true,
                        // Strict improvement only: ties keep the earlier
                        // (lowest-id) source.
                        Some((_, best_sim)) => sim > best_sim,
                    };
                    if better {
                        best = Some((idx, sim));
                    }
                }
                Ok(Some(best.expect("bank is non-empty").0))
            }
        }
    }

    /// Aggregates projections into the prior batch used for fusion and
    /// distillation.
    pub fn prior_batch(
        &self,
        projections: &[Tensor],
        selection: Option<usize>,
    ) -> Result<Tensor> {
        match selection {
            Some(idx) => Ok(projections[idx].clone()),
            None => {
                let mut acc = projections[0].clone();
                for proj in &projections[1..] {
                    acc = acc.add(proj)?;
                }
                acc.scale(1.0 / projections.len() as f64)
            }
        }
    }
}

fn column_mean(t: &Tensor) -> Result<Vec<f64>> {
    let (rows, cols) = t.dims2()?;
    if rows == 0 {
        return Err(Error::invalid("column_mean: empty tensor"));
    }
    let mut mean = vec![0.0; cols];
    for i in 0..rows {
        for (m, v) in mean.iter_mut().zip(t.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    Ok(mean)
}

/// Source prior for a single voxel vector (batch of one).
pub fn source_prior(
    bank: &SourcePriorBank,
    target_voxels: &[f64],
    target_latent: &[f64],
    mode: PriorMode,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let batch = Tensor::new(vec![1, target_voxels.len()], target_voxels.to_vec())?;
    let latents = Tensor::new(vec![1, target_latent.len()], target_latent.to_vec())?;
    let projections = bank.project_batch(&batch)?;
    let selection = bank.select(&projections, &latents, mode, rng)?;
    Ok(bank.prior_batch(&projections, selection)?.into_data())
}

/// Convex fusion `(1 - alpha) R_t + alpha R_src`.
pub fn fuse(r_t: &[f64], r_src: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("fuse: alpha {alpha} outside [0, 1]")));
    }
    if r_t.len() != r_src.len() {
        return Err(Error::invalid(format!(
            "fuse: lengths differ ({} vs {})",
            r_t.len(),
            r_src.len()
        )));
    }
    Ok(r_t
        .iter()
        .zip(r_src)
        .map(|(&t, &s)| (1.0 - alpha) * t + alpha * s)
        .collect())
}

/// Cosine distillation `1 - cos(r_t, r_src)`, averaged over a batch by the
/// training loop. The caller is responsible for detaching the source side.
pub fn distill_loss(r_t: &[f64], r_src: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine(r_t, r_src)?)
}
