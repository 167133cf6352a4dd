//! Synthetic multi-subject world.
//!
//! Every subject observes the same stimuli; what differs is how the shared
//! semantic latent projects into that subject's voxel space. The projection
//! bases share a common master matrix plus a small per-subject jitter, so
//! source-subject mappers carry real information about the target, and each
//! basis is scaled by the subject's amplitude shift, which injects the
//! cross-subject amplitude-statistics discrepancy the adaptation mechanisms
//! are built to absorb.
//!
//! The last subject in the spec is the adaptation target by convention; the
//! ones before it are the pretraining sources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::encoder::FrozenImageEncoder;
use crate::harness::render::render_stimulus;
use crate::image::Image;
use crate::rng::{SeededRng, StreamDomain};
use crate::tensor::Tensor;

/// Relative strength of per-subject basis jitter. Small enough that reused
/// source mappers stay informative on the target, large enough that subjects
/// are genuinely distinct.
pub const BASIS_JITTER: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    /// Label and rng stream key. Two entries with the same id, width, shift,
    /// and noise produce bitwise-identical responses.
    pub subject_id: u32,
    pub voxel_dim: usize,
    /// Multiplicative factor on the projection basis; shifts the subject's
    /// mean response amplitude by the same factor.
    pub amplitude_shift: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub image_size: usize,
    /// Sources first, target last.
    pub subjects: Vec<SubjectSpec>,
    pub n_train_per_subject: usize,
    pub n_target_adapt: usize,
    /// Validation-set size, shared by sources and target.
    pub n_target_val: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            latent_dim: 16,
            embed_dim: 32,
            image_size: 32,
            subjects: vec![
                SubjectSpec {
                    subject_id: 1,
                    voxel_dim: 160,
                    amplitude_shift: 1.0,
                    noise_std: 0.1,
                },
                SubjectSpec {
                    subject_id: 2,
                    voxel_dim: 144,
                    amplitude_shift: 1.3,
                    noise_std: 0.1,
                },
                SubjectSpec {
                    subject_id: 3,
                    voxel_dim: 128,
                    amplitude_shift: 1.6,
                    noise_std: 0.1,
                },
                SubjectSpec {
                    subject_id: 4,
                    voxel_dim: 120,
                    amplitude_shift: 1.9,
                    noise_std: 0.1,
                },
            ],
            n_train_per_subject: 1000,
            n_target_adapt: 25,
            n_target_val: 200,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 4 {
            return Err(Error::invalid(format!(
                "world: latent_dim {} is below the renderer's minimum of 4",
                self.latent_dim
            )));
        }
        if self.embed_dim < 2 || self.image_size < 8 {
            return Err(Error::invalid(format!(
                "world: embed_dim {} / image_size {} too small",
                self.embed_dim, self.image_size
            )));
        }
        if self.subjects.len() < 2 {
            return Err(Error::invalid(
                "world: need at least one source and the target".to_string(),
            ));
        }
        for s in &self.subjects {
            // Subject ids feed the 24-bit stream-id packing, with one bit
            // reserved above them for retrieval contexts.
            if s.subject_id >= (1 << 22) {
                return Err(Error::invalid(format!(
                    "world: subject id {} exceeds the stream id bound",
                    s.subject_id
                )));
            }
            if s.voxel_dim < self.latent_dim {
                return Err(Error::invalid(format!(
                    "world: subject {} voxel_dim {} below latent_dim {}",
                    s.subject_id, s.voxel_dim, self.latent_dim
                )));
            }
            if !(s.amplitude_shift > 0.0) || !s.amplitude_shift.is_finite() {
                return Err(Error::invalid(format!(
                    "world: subject {} amplitude_shift {}",
                    s.subject_id, s.amplitude_shift
                )));
            }
            if s.noise_std < 0.0 || !s.noise_std.is_finite() {
                return Err(Error::invalid(format!(
                    "world: subject {} noise_std {}",
                    s.subject_id, s.noise_std
                )));
            }
        }
        if self.n_train_per_subject < 2 || self.n_target_val < 2 {
            return Err(Error::invalid(
                "world: train and val splits need at least 2 samples".to_string(),
            ));
        }
        if self.n_target_adapt < 2 || self.n_target_adapt > self.n_train_per_subject {
            return Err(Error::invalid(format!(
                "world: n_target_adapt {} outside [2, {}]",
                self.n_target_adapt, self.n_train_per_subject
            )));
        }
        Ok(())
    }

    pub fn target(&self) -> &SubjectSpec {
        self.subjects.last().expect("validated: non-empty")
    }
}

/// One presented stimulus, shared across subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub id: u64,
    pub latent: Vec<f64>,
    pub image: Image,
    /// Frozen-encoder embedding of `image`, cached at generation time.
    pub clean_embedding: Vec<f64>,
}

/// A subject's voxel responses to the shared stimuli.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub spec: SubjectSpec,
    /// `voxel_dim x latent_dim` projection basis, kept for diagnostics.
    pub basis: Tensor,
    /// `n_train x voxel_dim`, aligned with the world's train stimuli.
    pub train_voxels: Tensor,
    /// `n_val x voxel_dim`, aligned with the world's val stimuli.
    pub val_voxels: Tensor,
}

impl SubjectData {
    /// First `n` training rows as their own tensor.
    pub fn train_head(&self, n: usize) -> Result<Tensor> {
        let (rows, cols) = self.train_voxels.dims2()?;
        if n == 0 || n > rows {
            return Err(Error::invalid(format!(
                "train_head: {n} rows requested from {rows}"
            )));
        }
        let mut data = Vec::with_capacity(n * cols);
        for i in 0..n {
            data.extend_from_slice(self.train_voxels.row(i));
        }
        Tensor::new(vec![n, cols], data)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub seed: u64,
    pub train_stimuli: Vec<Stimulus>,
    pub val_stimuli: Vec<Stimulus>,
    pub subjects: Vec<SubjectData>,
    pub image_encoder: FrozenImageEncoder,
}

impl World {
    pub fn generate(spec: &WorldSpec, seed: u64) -> Result<World> {
        spec.validate()?;
        let k = spec.latent_dim;
        let image_encoder = FrozenImageEncoder::new(seed, spec.image_size, spec.embed_dim)?;

        let n_train = spec.n_train_per_subject;
        let n_val = spec.n_target_val;
        let mut latent_rng = SeededRng::for_domain(seed, StreamDomain::WorldLatent, 0, 0);
        let mut make_stimuli = |ids: std::ops::Range<u64>| -> Result<Vec<Stimulus>> {
            ids.map(|id| {
                let latent: Vec<f64> = (0..k).map(|_| latent_rng.standard_gaussian()).collect();
                let image = render_stimulus(&latent, spec.image_size)?;
                let clean_embedding = image_encoder.embed(&image)?;
                Ok(Stimulus {
                    id,
                    latent,
                    image,
                    clean_embedding,
                })
            })
            .collect()
        };
        let train_stimuli = make_stimuli(0..n_train as u64)?;
        let val_stimuli = make_stimuli(n_train as u64..(n_train + n_val) as u64)?;

        let d_max = spec
            .subjects
            .iter()
            .map(|s| s.voxel_dim)
            .max()
            .expect("validated: non-empty");
        let latent_scale = 1.0 / (k as f64).sqrt();
        let mut basis_rng = SeededRng::for_domain(seed, StreamDomain::WorldBasis, 0, 0);
        let master: Vec<f64> = (0..d_max * k)
            .map(|_| basis_rng.standard_gaussian() * latent_scale)
            .collect();

        let mut subjects = Vec::with_capacity(spec.subjects.len());
        for sub in &spec.subjects {
            let d = sub.voxel_dim;
            let mut jitter_rng =
                SeededRng::for_domain(seed, StreamDomain::WorldJitter, sub.subject_id as u64, 0);
            let mut basis = Vec::with_capacity(d * k);
            for r in 0..d {
                for c in 0..k {
                    let jit = jitter_rng.standard_gaussian() * latent_scale * BASIS_JITTER;
                    basis.push(sub.amplitude_shift * (master[r * k + c] + jit));
                }
            }
            let basis = Tensor::new(vec![d, k], basis)?;
            let mut noise_rng =
                SeededRng::for_domain(seed, StreamDomain::WorldNoise, sub.subject_id as u64, 0);
            let mut respond = |stimuli: &[Stimulus]| -> Result<Tensor> {
                let mut data = Vec::with_capacity(stimuli.len() * d);
                for st in stimuli {
                    for r in 0..d {
                        let clean = crate::tensor::dot(basis.row(r), &st.latent);
                        data.push(clean + sub.noise_std * noise_rng.standard_gaussian());
                    }
                }
                Tensor::new(vec![stimuli.len(), d], data)
            };
            let train_voxels = respond(&train_stimuli)?;
            let val_voxels = respond(&val_stimuli)?;
            subjects.push(SubjectData {
                spec: *sub,
                basis,
                train_voxels,
                val_voxels,
            });
        }
        Ok(World {
            spec: spec.clone(),
            seed,
            train_stimuli,
            val_stimuli,
            subjects,
            image_encoder,
        })
    }

    pub fn target_index(&self) -> usize {
        self.subjects.len() - 1
    }

    pub fn target(&self) -> &SubjectData {
        &self.subjects[self.target_index()]
    }

    pub fn sources(&self) -> &[SubjectData] {
        &self.subjects[..self.target_index()]
    }

    /// The stimuli paired with the target's adaptation rows.
    pub fn adapt_stimuli(&self) -> &[Stimulus] {
        &self.train_stimuli[..self.spec.n_target_adapt]
    }

    /// Row-stacked clean embeddings for a stimulus slice.
    pub fn embedding_rows(stimuli: &[Stimulus]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = stimuli.iter().map(|s| s.clean_embedding.clone()).collect();
        Tensor::from_rows(&rows)
    }
}
