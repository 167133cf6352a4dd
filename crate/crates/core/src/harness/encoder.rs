//! Image and brain encoders.
//!
//! The image side is a frozen seeded random projection with L2
//! normalization, a stand-in for a large pretrained embedding model: fixed,
//! deterministic, never receives gradients. The brain side is a small
//! trainable residual network that maps ridge latents to the shared
//! embedding space, with augmentation hook points after configurable blocks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::alignment::LossWeights;
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::image::{BlurConfig, Image};
use crate::ridge::CsrrConfig;
use crate::rng::{SeededRng, StreamDomain};
use crate::spectral::{sample_fba_draw, FbaDraw, FbaVariant};
use crate::tensor::Tensor;

/// Fixed random projection from pixels to the shared embedding space.
#[derive(Debug, Clone)]
pub struct FrozenImageEncoder {
    weight: Tensor,
    image_size: usize,
    embed_dim: usize,
}

impl FrozenImageEncoder {
    pub fn new(seed: u64, image_size: usize, embed_dim: usize) -> Result<Self> {
        if image_size == 0 || embed_dim == 0 {
            return Err(Error::invalid("image encoder: zero dimension"));
        }
        let input_dim = image_size * image_size * 3;
        let mut rng = SeededRng::for_domain(seed, StreamDomain::ImageEncoder, 0, 0);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let data = (0..embed_dim * input_dim)
            .map(|_| rng.standard_gaussian() * scale)
            .collect();
        Ok(FrozenImageEncoder {
            weight: Tensor::new(vec![embed_dim, input_dim], data)?,
            image_size,
            embed_dim,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Unit-norm embedding of one image.
    pub fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        if image.height() != self.image_size || image.width() != self.image_size {
            return Err(Error::invalid(format!(
                "image encoder: expected {0}x{0} image, got {1}x{2}",
                self.image_size,
                image.height(),
                image.width()
            )));
        }
        let mut out = Vec::with_capacity(self.embed_dim);
        for c in 0..self.embed_dim {
            out.push(crate::tensor::dot(self.weight.row(c), image.pixels()));
        }
        let norm = crate::tensor::norm(&out);
        if norm == 0.0 {
            return Err(Error::DegenerateVector(
                "image encoder: zero projection".to_string(),
            ));
        }
        for v in &mut out {
            *v /= norm;
        }
        Ok(out)
    }

    pub fn embed_batch<'a>(
        &self,
        images: impl IntoIterator<Item = &'a Image>,
    ) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = images
            .into_iter()
            .map(|img| self.embed(img))
            .collect::<Result<_>>()?;
        Tensor::from_rows(&rows)
    }
}

/// Brain-encoder architecture and per-mechanism settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub hidden_dim: usize,
    /// 1-based residual-block indices whose outputs get augmented.
    pub fba_positions: BTreeSet<usize>,
    pub fba_variant: FbaVariant,
    pub csrr: CsrrConfig,
    pub dib: BlurConfig,
    pub weights: LossWeights,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_blocks: 4,
            hidden_dim: 64,
            fba_positions: [2, 3].into_iter().collect(),
            fba_variant: FbaVariant::Gaussian,
            csrr: CsrrConfig::default(),
            dib: BlurConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::invalid("encoder: zero blocks"));
        }
        if self.hidden_dim < 2 {
            return Err(Error::invalid(format!(
                "encoder: hidden_dim {} below the augmentation minimum of 2",
                self.hidden_dim
            )));
        }
        if let Some(&bad) = self
            .fba_positions
            .iter()
            .find(|&&p| p == 0 || p > self.n_blocks)
        {
            return Err(Error::invalid(format!(
                "encoder: augmentation position {bad} outside 1..={}",
                self.n_blocks
            )));
        }
        self.csrr.validate()?;
        self.dib.validate()?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Trainable residual MLP from ridge latents to the embedding space.
#[derive(Debug, Clone)]
pub struct BrainEncoder {
    pub input_weight: Tensor,
    pub input_bias: Tensor,
    pub blocks: Vec<ResidualBlock>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// How augmentation hooks behave during a forward pass.
pub enum FbaMode<'a> {
    /// No augmentation (evaluation, or the mechanism is disabled).
    Off,
    /// Draw fresh augmentation statistics at each hook.
    Sample {
        variant: FbaVariant,
        rng: &'a mut SeededRng,
    },
    /// Replay fixed draws, keyed by block index. Used by gradient checks.
    Inject(&'a BTreeMap<usize, FbaDraw>),
}

/// Result of a graph-building forward pass.
pub struct GraphForward {
    /// Unit-norm `B x C` embedding node.
    pub embedding: NodeId,
    /// Parameter nodes in [`BrainEncoder::param_shapes`] order; empty when
    /// the forward was built with frozen parameters.
    pub params: Vec<NodeId>,
    /// Draws consumed at each hook, for later replay.
    pub draws: BTreeMap<usize, FbaDraw>,
}

impl BrainEncoder {
    pub fn init(cfg: &EncoderConfig, latent_dim: usize, embed_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        if latent_dim == 0 || embed_dim == 0 {
            return Err(Error::invalid("encoder init: zero dimension"));
        }
        let h = cfg.hidden_dim;
        let mut weight = |rows: usize, cols: usize| -> Result<Tensor> {
            let scale = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.standard_gaussian() * scale)
                .collect();
            Tensor::new(vec![rows, cols], data)
        };
        let input_weight = weight(h, latent_dim)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for _ in 0..cfg.n_blocks {
            blocks.push(ResidualBlock {
                w1: weight(h, h)?,
                b1: Tensor::zeros(&[h]),
                w2: weight(h, h)?,
                b2: Tensor::zeros(&[h]),
            });
        }
        let head_weight = weight(embed_dim, h)?;
        Ok(BrainEncoder {
            input_weight,
            input_bias: Tensor::zeros(&[h]),
            blocks,
            head_weight,
            head_bias: Tensor::zeros(&[embed_dim]),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.input_weight.shape()[1]
    }

    pub fn embed_dim(&self) -> usize {
        self.head_weight.shape()[0]
    }

    /// Parameter tensors in canonical order.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input_weight, &self.input_bias];
        for b in &self.blocks {
            out.extend([&b.w1, &b.b1, &b.w2, &b.b2]);
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input_weight, &mut self.input_bias];
        for b in &mut self.blocks {
            out.extend([&mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2]);
        }
        out.extend([&mut self.head_weight, &mut self.head_bias]);
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.param_tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect()
    }

    /// Builds the forward pass into `g` starting from the latent node `r`.
    /// Hooks fire after each block index in `positions`, in block order.
    /// With `trainable` false the weights enter as constants and
    /// `GraphForward::params` is empty.
    pub fn graph_forward(
        &self,
        g: &mut Graph,
        r: NodeId,
        positions: &BTreeSet<usize>,
        mut mode: FbaMode<'_>,
        trainable: bool,
    ) -> Result<GraphForward> {
        if let Some(&bad) = positions.iter().find(|&&p| p == 0 || p > self.blocks.len()) {
            return Err(Error::invalid(format!(
                "encoder forward: hook position {bad} outside 1..={}",
                self.blocks.len()
            )));
        }
        let mut params = Vec::new();
        let mut node = |g: &mut Graph, t: &Tensor| {
            if trainable {
                let id = g.param(t.clone());
                params.push(id);
                id
            } else {
                g.leaf(t.clone())
            }
        };
        let iw = node(g, &self.input_weight);
        let ib = node(g, &self.input_bias);
        let mut block_nodes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            block_nodes.push((node(g, &b.w1), node(g, &b.b1), node(g, &b.w2), node(g, &b.b2)));
        }
        let hw = node(g, &self.head_weight);
        let hb = node(g, &self.head_bias);

        let mut h = g.affine(r, iw, ib)?;
        let mut draws = BTreeMap::new();
        for (i, &(w1, b1, w2, b2)) in block_nodes.iter().enumerate() {
            let t = g.affine(h, w1, b1)?;
            let t = g.relu(t)?;
            let t = g.affine(t, w2, b2)?;
            h = g.add(h, t)?;
            let block_index = i + 1;
            if positions.contains(&block_index) {
                match &mut mode {
                    FbaMode::Off => {}
                    FbaMode::Sample { variant, rng } => {
                        let draw = sample_fba_draw(g.value(h), rng, *variant)?;
                        draws.insert(block_index, draw.clone());
                        h = g.fba(h, draw)?;
                    }
                    FbaMode::Inject(map) => {
                        let draw = map.get(&block_index).ok_or_else(|| {
                            Error::invalid(format!(
                                "encoder forward: no injected draw for block {block_index}"
                            ))
                        })?;
                        draws.insert(block_index, draw.clone());
                        h = g.fba(h, draw.clone())?;
                    }
                }
            }
        }
        let e = g.affine(h, hw, hb)?;
        let embedding = g.l2_normalize_rows(e)?;
        Ok(GraphForward {
            embedding,
            params,
            draws,
        })
    }

    /// Evaluation-mode forward: no augmentation, no gradients, no rng.
    /// Shares the graph code path, so it is bitwise-identical to a training
    /// forward with the hooks disabled.
    pub fn eval_forward(&self, r: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let input = g.leaf(r.clone());
        let fwd = self.graph_forward(&mut g, input, &BTreeSet::new(), FbaMode::Off, false)?;
        Ok(g.value(fwd.embedding).clone())
    }
}
