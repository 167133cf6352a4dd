//! Brain-image alignment objective and retrieval evaluation.
//!
//! Training aligns brain and image embeddings with a symmetric contrastive
//! loss over cosine-similarity logits. The combined objective adds the blur
//! supervision branch and the source-distillation penalty when those
//! mechanisms are enabled. Evaluation measures top-1 retrieval accuracy over
//! random candidate pools in both directions.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{stream_id, SeededRng, StreamDomain};
use crate::tensor::Tensor;

/// Weights of the combined training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Blur-branch weight.
    pub w_blur: f64,
    /// Source-distillation weight.
    pub w_src: f64,
    /// Contrastive temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_blur: 0.5,
            w_src: 0.05,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("loss weights: tau {}", self.tau)));
        }
        if self.w_blur < 0.0 || self.w_src < 0.0 {
            return Err(Error::invalid(
                "loss weights: w_blur and w_src must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Symmetric contrastive loss between two `B x C` embedding batches with
/// matching rows as positives.
///
/// Rows are L2-normalized inside, so callers pass raw embeddings. Both
/// softmax directions are realized as affine products against a zero bias:
/// `affine(a, b, 0) = a . b^T` gives the `B x B` cosine logits, and swapping
/// the arguments gives the transposed direction without a transpose
/// operation.
pub fn contrastive_loss(g: &mut Graph, z_b: NodeId, z_v: NodeId, tau: f64) -> Result<NodeId> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("contrastive: tau {tau}")));
    }
    let (rows_b, cols_b) = g.value(z_b).dims2()?;
    let (rows_v, cols_v) = g.value(z_v).dims2()?;
    if rows_b != rows_v || cols_b != cols_v {
        return Err(Error::invalid(format!(
            "contrastive: shapes {:?} vs {:?}",
            g.value(z_b).shape(),
            g.value(z_v).shape()
        )));
    }
    if rows_b < 2 {
        return Err(Error::invalid(
            "contrastive: needs at least two rows".to_string(),
        ));
    }
    let zb_n = g.l2_normalize_rows(z_b)?;
    let zv_n = g.l2_normalize_rows(z_v)?;
    let zero_bias = g.leaf(Tensor::zeros(&[rows_b]));
    let targets: Vec<usize> = (0..rows_b).collect();

    let logits_bv = g.affine(zb_n, zv_n, zero_bias)?;
    let logits_bv = g.scale(logits_bv, 1.0 / tau)?;
    let loss_bv = g.softmax_xent_rows(logits_bv, targets.clone())?;

    let logits_vb = g.affine(zv_n, zb_n, zero_bias)?;
    let logits_vb = g.scale(logits_vb, 1.0 / tau)?;
    let loss_vb = g.softmax_xent_rows(logits_vb, targets)?;

    let sum = g.add(loss_bv, loss_vb)?;
    g.scale(sum, 0.5)
}

/// Value-only convenience wrapper around [`contrastive_loss`].
pub fn contrastive_loss_value(z_b: &Tensor, z_v: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.leaf(z_b.clone());
    let b = g.leaf(z_v.clone());
    let loss = contrastive_loss(&mut g, a, b, tau)?;
    g.value(loss).item()
}

/// Distillation penalty `1 - mean_i cos(r_t_i, r_src_i)` as a graph node.
/// The source batch must already be gradient-free (a leaf or detached node);
/// gradients flow only into the target rows.
pub fn distill_loss_node(g: &mut Graph, r_t: NodeId, r_src: NodeId) -> Result<NodeId> {
    let r_src = g.detach(r_src);
    let cos = g.cosine_rows(r_t, r_src)?;
    let mean_cos = g.mean(cos)?;
    let neg = g.scale(mean_cos, -1.0)?;
    let one = g.leaf(Tensor::scalar(1.0));
    g.add(one, neg)
}

/// Node ids of the combined objective and its individual terms, so callers
/// can report a loss breakdown after the forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub total: NodeId,
    pub clean: NodeId,
    pub blur: Option<NodeId>,
    pub distill: Option<NodeId>,
}

/// Scalar values of the combined objective terms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub clean: f64,
    pub blur: Option<f64>,
    pub distill: Option<f64>,
}

impl ObjectiveNodes {
    pub fn terms(&self, g: &Graph) -> Result<ObjectiveTerms> {
        Ok(ObjectiveTerms {
            total: g.value(self.total).item()?,
            clean: g.value(self.clean).item()?,
            blur: self.blur.map(|n| g.value(n).item()).transpose()?,
            distill: self.distill.map(|n| g.value(n).item()).transpose()?,
        })
    }
}

/// Builds `L = clean + w_blur * blur + w_src * distill`, including only the
/// branches whose inputs are provided. Each optional input pair must be
/// complete: a blurred image batch alone, or a target batch without the
/// source batch, is a contract violation.
pub fn combined_objective(
    g: &mut Graph,
    z_brain: NodeId,
    z_img_clean: NodeId,
    z_img_blur: Option<NodeId>,
    distill_pair: Option<(NodeId, NodeId)>,
    weights: &LossWeights,
) -> Result<ObjectiveNodes> {
    weights.validate()?;
    let clean = contrastive_loss(g, z_brain, z_img_clean, weights.tau)?;
    let mut total = clean;
    let blur = match z_img_blur {
        Some(zb) => {
            let loss = contrastive_loss(g, z_brain, zb, weights.tau)?;
            let scaled = g.scale(loss, weights.w_blur)?;
            total = g.add(total, scaled)?;
            Some(loss)
        }
        None => None,
    };
    let distill = match distill_pair {
        Some((r_t, r_src)) => {
            let loss = distill_loss_node(g, r_t, r_src)?;
            let scaled = g.scale(loss, weights.w_src)?;
            total = g.add(total, scaled)?;
            Some(loss)
        }
        None => None,
    };
    Ok(ObjectiveNodes {
        total,
        clean,
        blur,
        distill,
    })
}

/// Retrieval evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Candidate pool size per trial.
    pub pool_size: usize,
    /// Number of random pools to average over.
    pub trials: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_size: 300,
            trials: 30,
        }
    }
}

/// Top-1 accuracy in both retrieval directions, averaged over trials.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetrievalAccuracy {
    /// Brain query retrieving its image from the pool.
    pub image_retrieval: f64,
    /// Image query retrieving its brain response from the pool.
    pub brain_retrieval: f64,
}

/// Measures top-1 cosine retrieval accuracy over `trials` random pools drawn
/// without replacement. A query counts as correct only when its paired
/// candidate is the strict maximum; ties are failures. Trial `t` draws its
/// pool from an independent stream keyed by `(seed, context, t)`, so results
/// do not depend on evaluation order.
pub fn retrieval_eval(
    brain: &Tensor,
    image: &Tensor,
    cfg: &RetrievalConfig,
    seed: u64,
    context: u64,
) -> Result<RetrievalAccuracy> {
    let (n, dim) = brain.dims2()?;
    if image.shape() != [n, dim] {
        return Err(Error::invalid(format!(
            "retrieval: shapes {:?} vs {:?}",
            brain.shape(),
            image.shape()
        )));
    }
    if cfg.pool_size < 2 || cfg.pool_size > n {
        return Err(Error::invalid(format!(
            "retrieval: pool size {} outside [2, {n}]",
            cfg.pool_size
        )));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("retrieval: zero trials"));
    }
    let normalize = |t: &Tensor| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| {
                let row = t.row(i);
                let norm = crate::tensor::norm(row);
                if norm == 0.0 {
                    return Err(Error::DegenerateVector(format!(
                        "retrieval: zero embedding row {i}"
                    )));
                }
                Ok(row.iter().map(|v| v / norm).collect())
            })
            .collect()
    };
    let brain_n = normalize(brain)?;
    let image_n = normalize(image)?;
    let dot = |bi: usize, ij: usize| -> f64 {
        brain_n[bi]
            .iter()
            .zip(&image_n[ij])
            .map(|(a, b)| a * b)
            .sum()
    };
    // Hoist the pairwise similarities once the trial loops would recompute
    // more dot products than the full matrix holds. Each entry comes from the
    // same expression either way, so the accuracies are bitwise identical.
    let full: Option<Vec<f64>> = if cfg.trials * cfg.pool_size * cfg.pool_size > n * n {
        let mut m = vec![0.0; n * n];
        for (bi, row) in m.chunks_exact_mut(n).enumerate() {
            for (ij, v) in row.iter_mut().enumerate() {
                *v = dot(bi, ij);
            }
        }
        Some(m)
    } else {
        None
    };

    let mut image_hits = 0usize;
    let mut brain_hits = 0usize;
    for trial in 0..cfg.trials {
        let mut rng = SeededRng::new(seed, stream_id(StreamDomain::Retrieval, context, trial as u64));
        let pool = rng.sample_indices(n, cfg.pool_size)?;
        let p = pool.len();
        let mut sims = vec![0.0; p * p];
        for (qi, &bi) in pool.iter().enumerate() {
            for (cj, &ij) in pool.iter().enumerate() {
                sims[qi * p + cj] = match &full {
                    Some(m) => m[bi * n + ij],
                    None => dot(bi, ij),
                };
            }
        }
        for q in 0..p {
            let own = sims[q * p + q];
            if (0..p).all(|c| c == q || sims[q * p + c] < own) {
                image_hits += 1;
            }
            if (0..p).all(|r| r == q || sims[r * p + q] < own) {
                brain_hits += 1;
            }
        }
    }
    let denom = (cfg.trials * cfg.pool_size) as f64;
    Ok(RetrievalAccuracy {
        image_retrieval: image_hits as f64 / denom,
        brain_retrieval: brain_hits as f64 / denom,
    })
}
