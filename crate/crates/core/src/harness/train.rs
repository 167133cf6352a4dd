//! Pretraining and adaptation loops.
//!
//! Pretraining alternates mini-batches across source subjects, training each
//! subject's ridge mapper plus the shared brain encoder against the plain
//! contrastive loss; the resulting source mappers are frozen into a prior
//! bank. Adaptation fine-tunes a fresh target ridge (and, by default, the
//! encoder) on the small target session with the optional mechanisms: prior
//! fusion and distillation, spectral feature augmentation, and
//! difficulty-aware blur supervision.
//!
//! Every random decision draws from a stream keyed by purpose, so disabling
//! a mechanism leaves the remaining draw sequences untouched and the
//! baseline run is bitwise-reproducible by a loop without any of this code.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::alignment::{
    combined_objective, contrastive_loss, retrieval_eval, ObjectiveTerms, RetrievalAccuracy,
    RetrievalConfig,
};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::harness::encoder::{BrainEncoder, EncoderConfig, FbaMode};
use crate::harness::world::{Stimulus, World};
use crate::image::{
    cosine_rows, difficulty_blur_cached, easiness, prepare_blur_context, BlurContext,
    DifficultyBank, Image,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::ridge::{CsrrConfig, PriorMode, RidgeMapper, SourcePriorBank};
use crate::rng::{SeededRng, StreamDomain};
use crate::spectral::{subject_signature, SubjectSignature};
use crate::tensor::Tensor;

/// Which adaptation mechanisms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub csrr: bool,
    pub fba: bool,
    pub dib: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::full()
    }
}

impl Toggles {
    pub fn full() -> Self {
        Toggles {
            csrr: true,
            fba: true,
            dib: true,
        }
    }

    pub fn baseline() -> Self {
        Toggles {
            csrr: false,
            fba: false,
            dib: false,
        }
    }

    pub fn is_baseline(&self) -> bool {
        !self.csrr && !self.fba && !self.dib
    }
}

/// Loop hyperparameters shared by pretraining and adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Train only the target ridge during adaptation.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 10,
            learning_rate: 3e-4,
            seed: 7,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "train: batch_size {} below the contrastive minimum of 2",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "train: learning_rate {}",
                self.learning_rate
            )));
        }
        // Epochs double as retrieval stream contexts, which reserve bit 23.
        if self.epochs >= (1 << 23) {
            return Err(Error::invalid(format!(
                "train: epochs {} exceeds the stream context bound",
                self.epochs
            )));
        }
        Ok(())
    }
}

/// Final retrieval accuracy of one pretraining subject.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SubjectMetrics {
    pub subject_id: u32,
    pub train: RetrievalAccuracy,
    pub val: RetrievalAccuracy,
}

pub struct PretrainOutcome {
    pub encoder: BrainEncoder,
    pub bank: SourcePriorBank,
    pub subject_metrics: Vec<SubjectMetrics>,
    /// Mean contrastive loss per epoch across all source steps.
    pub epoch_loss: Vec<f64>,
}

/// Loss breakdown and validation accuracy after one adaptation epoch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub clean: f64,
    pub blur: Option<f64>,
    pub distill: Option<f64>,
    pub val: RetrievalAccuracy,
}

#[derive(Debug)]
pub struct AdaptOutcome {
    pub target_ridge: RidgeMapper,
    pub encoder: BrainEncoder,
    pub toggles: Toggles,
    pub history: Vec<EpochRecord>,
    /// Total objective per optimization step, in step order.
    pub step_losses: Vec<f64>,
    pub final_val: RetrievalAccuracy,
    /// Source pinned for the whole run when the random prior is configured
    /// as fixed; also reused at evaluation time.
    pub pinned_source: Option<usize>,
}

impl AdaptOutcome {
    pub fn baseline(&self) -> bool {
        self.toggles.is_baseline()
    }
}

/// Retrieval settings capped to the available sample count.
pub fn capped_retrieval(cfg: &RetrievalConfig, n: usize) -> RetrievalConfig {
    RetrievalConfig {
        pool_size: cfg.pool_size.min(n),
        trials: cfg.trials,
    }
}

/// Shuffled index batches for one epoch; chunks below the contrastive
/// minimum of two rows are dropped.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (_, cols) = t.dims2()?;
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), cols], data)
}

fn gather_embeddings(stimuli: &[Stimulus], idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| stimuli[i].clean_embedding.clone())
        .collect();
    Tensor::from_rows(&rows)
}

/// Rewraps a mid-training numeric failure as a divergence report.
fn diverged(err: Error, step: usize, last_finite: f64) -> Error {
    match err {
        Error::NonFinite(m) => Error::TrainingDiverged(format!(
            "step {step}: {m}; last finite loss {last_finite}"
        )),
        other => other,
    }
}

/// Retrieval stream contexts. Adaptation epochs use the epoch number
/// directly; pretraining metrics set bit 23 (above any supported epoch
/// count, below the 24-bit stream packing bound) so the families never
/// collide.
fn pretrain_context(subject_id: u32, val: bool) -> u64 {
    (1 << 23) | ((subject_id as u64) << 1) | (val as u64)
}

fn embed_eval(encoder: &BrainEncoder, ridge: &RidgeMapper, voxels: &Tensor) -> Result<Tensor> {
    encoder.eval_forward(&ridge.forward_batch(voxels)?)
}

/// Evaluation-mode target embedding, including prior fusion when active.
///
/// The per-step random prior is a training-time device; at evaluation a
/// pinned draw is honored and an unpinned random prior falls back to the
/// deterministic average so that metrics never depend on training rng state.
pub fn target_eval_embeddings(
    encoder: &BrainEncoder,
    ridge: &RidgeMapper,
    bank: &SourcePriorBank,
    voxels: &Tensor,
    csrr_on: bool,
    csrr: &CsrrConfig,
    pinned_source: Option<usize>,
) -> Result<Tensor> {
    let r_t = ridge.forward_batch(voxels)?;
    let input = if csrr_on && csrr.fuse {
        let projections = bank.project_batch(voxels)?;
        let selection = match csrr.prior_mode {
            PriorMode::AllAverage => None,
            PriorMode::RandomOne => pinned_source,
            PriorMode::NearestOne => {
                // Deterministic mode; the rng argument is never consumed.
                let mut unused = SeededRng::new(0, 0);
                bank.select(&projections, &r_t, PriorMode::NearestOne, &mut unused)?
            }
        };
        let prior = bank.prior_batch(&projections, selection)?;
        r_t.scale(1.0 - csrr.alpha)?.add(&prior.scale(csrr.alpha)?)?
    } else {
        r_t
    };
    encoder.eval_forward(&input)
}

/// Trains per-source ridge mappers and the shared encoder on clean pairs,
/// round-robin over subjects, then freezes the mappers into a prior bank.
pub fn pretrain(
    world: &World,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
) -> Result<PretrainOutcome> {
    enc_cfg.validate()?;
    train_cfg.validate()?;
    if world.sources().is_empty() {
        return Err(Error::invalid("pretrain: no source subjects"));
    }
    let seed = train_cfg.seed;
    let k = world.spec.latent_dim;
    let c = world.spec.embed_dim;
    let n_train = world.spec.n_train_per_subject;

    let mut enc_rng = SeededRng::for_domain(seed, StreamDomain::EncoderInit, 0, 0);
    let mut encoder = BrainEncoder::init(enc_cfg, k, c, &mut enc_rng)?;
    let opt_cfg = AdamWConfig {
        learning_rate: train_cfg.learning_rate,
        ..AdamWConfig::default()
    };
    let enc_shapes = encoder.param_shapes();
    let enc_shape_refs: Vec<&[usize]> = enc_shapes.iter().map(|s| s.as_slice()).collect();
    let mut enc_opt = AdamW::new(opt_cfg, &enc_shape_refs)?;

    let mut ridges = Vec::new();
    let mut ridge_opts = Vec::new();
    for source in world.sources() {
        let id = source.spec.subject_id;
        let mut rng = SeededRng::for_domain(seed, StreamDomain::RidgeInit, id as u64, 0);
        let ridge = RidgeMapper::init(id, source.spec.voxel_dim, k, &mut rng)?;
        ridge_opts.push(AdamW::new(
            opt_cfg,
            &[ridge.weight.shape(), ridge.bias.shape()],
        )?);
        ridges.push(ridge);
    }

    let train_images = World::embedding_rows(&world.train_stimuli)?;
    let mut epoch_loss = Vec::with_capacity(train_cfg.epochs);
    let mut step = 0usize;
    let mut last_finite = f64::NAN;
    for epoch in 0..train_cfg.epochs {
        let per_subject: Vec<Vec<Vec<usize>>> = world
            .sources()
            .iter()
            .map(|s| {
                let mut rng = SeededRng::for_domain(
                    seed,
                    StreamDomain::Shuffle,
                    s.spec.subject_id as u64,
                    epoch as u64,
                );
                epoch_batches(n_train, train_cfg.batch_size, &mut rng)
            })
            .collect();
        let rounds = per_subject.iter().map(Vec::len).max().unwrap_or(0);
        let mut sum = 0.0;
        let mut count = 0usize;
        for round in 0..rounds {
            for (si, batches) in per_subject.iter().enumerate() {
                let Some(idx) = batches.get(round) else {
                    continue;
                };
                let voxels = gather_rows(&world.sources()[si].train_voxels, idx)?;
                let images = gather_embeddings(&world.train_stimuli, idx)?;
                let value = pretrain_step(
                    &mut encoder,
                    &mut enc_opt,
                    &mut ridges[si],
                    &mut ridge_opts[si],
                    &voxels,
                    &images,
                    enc_cfg.weights.tau,
                )
                .map_err(|e| diverged(e, step, last_finite))?;
                last_finite = value;
                sum += value;
                count += 1;
                step += 1;
            }
        }
        epoch_loss.push(sum / count as f64);
    }

    for ridge in &mut ridges {
        ridge.frozen = true;
    }
    let mut subject_metrics = Vec::with_capacity(ridges.len());
    let val_images = World::embedding_rows(&world.val_stimuli)?;
    for (source, ridge) in world.sources().iter().zip(&ridges) {
        let id = ridge.subject_id;
        let train_emb = embed_eval(&encoder, ridge, &source.train_voxels)?;
        let val_emb = embed_eval(&encoder, ridge, &source.val_voxels)?;
        subject_metrics.push(SubjectMetrics {
            subject_id: id,
            train: retrieval_eval(
                &train_emb,
                &train_images,
                &capped_retrieval(retrieval, n_train),
                seed,
                pretrain_context(id, false),
            )?,
            val: retrieval_eval(
                &val_emb,
                &val_images,
                &capped_retrieval(retrieval, world.spec.n_target_val),
                seed,
                pretrain_context(id, true),
            )?,
        });
    }
    Ok(PretrainOutcome {
        encoder,
        bank: SourcePriorBank::new(ridges)?,
        subject_metrics,
        epoch_loss,
    })
}

fn pretrain_step(
    encoder: &mut BrainEncoder,
    enc_opt: &mut AdamW,
    ridge: &mut RidgeMapper,
    ridge_opt: &mut AdamW,
    voxels: &Tensor,
    images: &Tensor,
    tau: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.leaf(voxels.clone());
    let w = g.param(ridge.weight.clone());
    let b = g.param(ridge.bias.clone());
    let r = g.affine(v, w, b)?;
    let fwd = encoder.graph_forward(&mut g, r, &BTreeSet::new(), FbaMode::Off, true)?;
    let img = g.leaf(images.clone());
    let loss = contrastive_loss(&mut g, fwd.embedding, img, tau)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    ridge_opt.step(
        &mut [&mut ridge.weight, &mut ridge.bias],
        &[grads.param_grad(w), grads.param_grad(b)],
    )?;
    let enc_grads: Vec<&Tensor> = fwd.params.iter().map(|&id| grads.param_grad(id)).collect();
    let mut enc_params = encoder.param_tensors_mut();
    enc_opt.step(&mut enc_params, &enc_grads)?;
    Ok(value)
}

struct AdaptLoop<'w> {
    world: &'w World,
    bank: &'w SourcePriorBank,
    enc_cfg: &'w EncoderConfig,
    toggles: Toggles,
    freeze_encoder: bool,
    hook_positions: BTreeSet<usize>,
    encoder: BrainEncoder,
    ridge: RidgeMapper,
    opt: AdamW,
    fba_rng: SeededRng,
    prior_rng: SeededRng,
    difficulty: Option<DifficultyBank>,
    blur_contexts: Vec<BlurContext>,
    pinned_source: Option<usize>,
}

impl AdaptLoop<'_> {
    fn step(&mut self, adapt_voxels: &Tensor, idx: &[usize]) -> Result<ObjectiveTerms> {
        let stimuli = self.world.adapt_stimuli();
        let voxels = gather_rows(adapt_voxels, idx)?;
        let images = gather_embeddings(stimuli, idx)?;
        let csrr = &self.enc_cfg.csrr;

        let mut g = Graph::new();
        let v = g.leaf(voxels.clone());
        let w = g.param(self.ridge.weight.clone());
        let b = g.param(self.ridge.bias.clone());
        let r_t = g.affine(v, w, b)?;

        let mut encoder_input = r_t;
        let mut distill_pair = None;
        if self.toggles.csrr {
            let projections = self.bank.project_batch(&voxels)?;
            let selection = match (csrr.prior_mode, self.pinned_source) {
                (PriorMode::RandomOne, Some(pinned)) => Some(pinned),
                _ => self
                    .bank
                    .select(&projections, g.value(r_t), csrr.prior_mode, &mut self.prior_rng)?,
            };
            let prior = self.bank.prior_batch(&projections, selection)?;
            let r_src = g.leaf(prior);
            if csrr.fuse {
                encoder_input = g.blend(csrr.alpha, r_src, r_t)?;
            }
            if csrr.cos_loss {
                distill_pair = Some((r_t, r_src));
            }
        }

        let mode = if self.toggles.fba {
            FbaMode::Sample {
                variant: self.enc_cfg.fba_variant,
                rng: &mut self.fba_rng,
            }
        } else {
            FbaMode::Off
        };
        let fwd = self.encoder.graph_forward(
            &mut g,
            encoder_input,
            &self.hook_positions,
            mode,
            !self.freeze_encoder,
        )?;

        let z_img = g.leaf(images.clone());
        let z_blur = if self.toggles.dib {
            let sims = cosine_rows(g.value(fwd.embedding), &images)?;
            let ease = easiness(&sims, self.enc_cfg.dib.temperature)?;
            let ids: Vec<u64> = idx.iter().map(|&i| stimuli[i].id).collect();
            let hardness = self
                .difficulty
                .as_mut()
                .expect("difficulty bank exists while dib is on")
                .update(&ids, &ease)?;
            let blurred: Vec<Image> = idx
                .iter()
                .zip(&hardness)
                .map(|(&i, &h)| {
                    difficulty_blur_cached(
                        &stimuli[i].image,
                        &self.blur_contexts[i],
                        h,
                        &self.enc_cfg.dib,
                    )
                })
                .collect::<Result<_>>()?;
            let emb = self.world.image_encoder.embed_batch(blurred.iter())?;
            Some(g.leaf(emb))
        } else {
            None
        };

        let nodes = combined_objective(
            &mut g,
            fwd.embedding,
            z_img,
            z_blur,
            distill_pair,
            &self.enc_cfg.weights,
        )?;
        let terms = nodes.terms(&g)?;
        let grads = g.backward(nodes.total)?;

        let mut params: Vec<&mut Tensor> = vec![&mut self.ridge.weight, &mut self.ridge.bias];
        let mut grad_refs: Vec<&Tensor> = vec![grads.param_grad(w), grads.param_grad(b)];
        if !self.freeze_encoder {
            grad_refs.extend(fwd.params.iter().map(|&id| grads.param_grad(id)));
            params.extend(self.encoder.param_tensors_mut());
        }
        self.opt.step(&mut params, &grad_refs)?;
        Ok(terms)
    }

    fn eval(&self, voxels: &Tensor) -> Result<Tensor> {
        target_eval_embeddings(
            &self.encoder,
            &self.ridge,
            self.bank,
            voxels,
            self.toggles.csrr,
            &self.enc_cfg.csrr,
            self.pinned_source,
        )
    }
}

/// Fine-tunes a fresh target ridge (plus the encoder unless frozen) on the
/// target's small adaptation session, with per-epoch validation retrieval.
pub fn adapt(
    world: &World,
    pretrained: &PretrainOutcome,
    toggles: Toggles,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    retrieval: &RetrievalConfig,
) -> Result<AdaptOutcome> {
    enc_cfg.validate()?;
    train_cfg.validate()?;
    let seed = train_cfg.seed;
    let target = world.target();
    let target_id = target.spec.subject_id;
    let n_adapt = world.spec.n_target_adapt;
    let adapt_voxels = target.train_head(n_adapt)?;
    let k = world.spec.latent_dim;

    let mut ridge_rng = SeededRng::for_domain(seed, StreamDomain::RidgeInit, target_id as u64, 0);
    let ridge = RidgeMapper::init(target_id, target.spec.voxel_dim, k, &mut ridge_rng)?;
    let encoder = pretrained.encoder.clone();

    let mut shapes: Vec<Vec<usize>> =
        vec![ridge.weight.shape().to_vec(), ridge.bias.shape().to_vec()];
    if !train_cfg.freeze_encoder {
        shapes.extend(encoder.param_shapes());
    }
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let opt = AdamW::new(
        AdamWConfig {
            learning_rate: train_cfg.learning_rate,
            ..AdamWConfig::default()
        },
        &shape_refs,
    )?;

    let mut prior_rng = SeededRng::for_domain(seed, StreamDomain::RandomPrior, 0, 0);
    let pinned_source = if toggles.csrr
        && enc_cfg.csrr.prior_mode == PriorMode::RandomOne
        && enc_cfg.csrr.random_one_fixed
    {
        Some(prior_rng.below(pretrained.bank.len() as u64) as usize)
    } else {
        None
    };
    let blur_contexts: Vec<BlurContext> = if toggles.dib {
        world
            .adapt_stimuli()
            .iter()
            .map(|s| prepare_blur_context(&s.image, &enc_cfg.dib))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut run = AdaptLoop {
        world,
        bank: &pretrained.bank,
        enc_cfg,
        toggles,
        freeze_encoder: train_cfg.freeze_encoder,
        hook_positions: if toggles.fba {
            enc_cfg.fba_positions.clone()
        } else {
            BTreeSet::new()
        },
        encoder,
        ridge,
        opt,
        fba_rng: SeededRng::for_domain(seed, StreamDomain::Fba, 0, 0),
        prior_rng,
        difficulty: if toggles.dib {
            Some(DifficultyBank::new(enc_cfg.dib.momentum)?)
        } else {
            None
        },
        blur_contexts,
        pinned_source,
    };

    let val_images = World::embedding_rows(&world.val_stimuli)?;
    let eval_cfg = capped_retrieval(retrieval, world.spec.n_target_val);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut step_losses = Vec::new();
    let mut step = 0usize;
    let mut last_finite = f64::NAN;
    for epoch in 0..train_cfg.epochs {
        let mut shuffle_rng =
            SeededRng::for_domain(seed, StreamDomain::Shuffle, target_id as u64, epoch as u64);
        let batches = epoch_batches(n_adapt, train_cfg.batch_size, &mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        let mut blur_seen = false;
        let mut distill_seen = false;
        let mut count = 0usize;
        for idx in &batches {
            let terms = run
                .step(&adapt_voxels, idx)
                .map_err(|e| diverged(e, step, last_finite))?;
            last_finite = terms.total;
            step_losses.push(terms.total);
            sums[0] += terms.total;
            sums[1] += terms.clean;
            if let Some(v) = terms.blur {
                sums[2] += v;
                blur_seen = true;
            }
            if let Some(v) = terms.distill {
                sums[3] += v;
                distill_seen = true;
            }
            count += 1;
            step += 1;
        }
        let n = count.max(1) as f64;
        let val_emb = run.eval(&target.val_voxels)?;
        let val = retrieval_eval(&val_emb, &val_images, &eval_cfg, seed, epoch as u64)?;
        history.push(EpochRecord {
            epoch,
            total: sums[0] / n,
            clean: sums[1] / n,
            blur: blur_seen.then(|| sums[2] / n),
            distill: distill_seen.then(|| sums[3] / n),
            val,
        });
    }
    let final_val = match history.last() {
        Some(record) => record.val,
        None => {
            let val_emb = run.eval(&target.val_voxels)?;
            retrieval_eval(&val_emb, &val_images, &eval_cfg, seed, 0)?
        }
    };
    Ok(AdaptOutcome {
        target_ridge: run.ridge,
        encoder: run.encoder,
        toggles,
        history,
        step_losses,
        final_val,
        pinned_source,
    })
}

/// Evaluation-mode embeddings of every subject's validation responses under
/// the adapted model: sources through their frozen mappers, the target
/// through its adapted path. Ordered sources-first, target last.
pub fn subject_embeddings(
    world: &World,
    bank: &SourcePriorBank,
    adapted: &AdaptOutcome,
    enc_cfg: &EncoderConfig,
) -> Result<Vec<(u32, Tensor)>> {
    let mut out = Vec::with_capacity(world.subjects.len());
    for (source, mapper) in world.sources().iter().zip(bank.mappers()) {
        debug_assert_eq!(source.spec.subject_id, mapper.subject_id);
        out.push((
            mapper.subject_id,
            embed_eval(&adapted.encoder, mapper, &source.val_voxels)?,
        ));
    }
    let target = world.target();
    out.push((
        target.spec.subject_id,
        target_eval_embeddings(
            &adapted.encoder,
            &adapted.target_ridge,
            bank,
            &target.val_voxels,
            adapted.toggles.csrr,
            &enc_cfg.csrr,
            adapted.pinned_source,
        )?,
    ));
    Ok(out)
}

/// Spectral fingerprints of every subject under the adapted model.
pub fn subject_signatures(
    world: &World,
    bank: &SourcePriorBank,
    adapted: &AdaptOutcome,
    enc_cfg: &EncoderConfig,
) -> Result<Vec<(u32, SubjectSignature)>> {
    subject_embeddings(world, bank, adapted, enc_cfg)?
        .into_iter()
        .map(|(id, emb)| Ok((id, subject_signature(&emb)?)))
        .collect()
}
