//! End-to-end contracts of the training loops that unit tests cannot state:
//! the baseline run is bitwise-reproducible by a plain loop written from
//! scratch, evaluation never leaks training state, and the pretraining
//! recipe actually learns on a small but non-trivial world.

use std::collections::BTreeSet;

use stablemind_core::alignment::{
    combined_objective, contrastive_loss, retrieval_eval, LossWeights, RetrievalConfig,
};
use stablemind_core::autograd::Graph;
use stablemind_core::harness::encoder::{EncoderConfig, FbaMode};
use stablemind_core::harness::train::{
    adapt, capped_retrieval, pretrain, target_eval_embeddings, Toggles, TrainConfig,
};
use stablemind_core::harness::world::{SubjectSpec, World, WorldSpec};
use stablemind_core::image::BlurConfig;
use stablemind_core::optim::{AdamW, AdamWConfig};
use stablemind_core::ridge::{CsrrConfig, RidgeMapper};
use stablemind_core::rng::{SeededRng, StreamDomain};
use stablemind_core::tensor::Tensor;

fn small_spec() -> WorldSpec {
    WorldSpec {
        latent_dim: 4,
        embed_dim: 8,
        image_size: 16,
        subjects: vec![
            SubjectSpec {
                subject_id: 1,
                voxel_dim: 20,
                amplitude_shift: 1.0,
                noise_std: 0.05,
            },
            SubjectSpec {
                subject_id: 2,
                voxel_dim: 18,
                amplitude_shift: 1.3,
                noise_std: 0.05,
            },
            SubjectSpec {
                subject_id: 3,
                voxel_dim: 16,
                amplitude_shift: 1.6,
                noise_std: 0.05,
            },
        ],
        n_train_per_subject: 24,
        n_target_adapt: 8,
        n_target_val: 10,
    }
}

fn small_encoder_cfg() -> EncoderConfig {
    EncoderConfig {
        n_blocks: 2,
        hidden_dim: 10,
        fba_positions: [2].into_iter().collect(),
        dib: BlurConfig::desk(16),
        ..EncoderConfig::default()
    }
}

fn small_train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn small_retrieval() -> RetrievalConfig {
    RetrievalConfig {
        pool_size: 10,
        trials: 4,
    }
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

/// With every mechanism off and the extra loss weights at zero, the
/// adaptation loop must be bitwise-reproducible by a from-scratch loop that
/// knows nothing about priors, augmentation, or blur: same ridge
/// initialization stream, same shuffles, plain contrastive loss, one
/// optimizer over ridge-then-encoder parameters.
#[test]
fn baseline_with_zero_extra_weights_reduces_bitwise_to_a_plain_loop() {
    let world = World::generate(&small_spec(), 21).unwrap();
    let mut cfg = small_encoder_cfg();
    cfg.weights = LossWeights {
        w_blur: 0.0,
        w_src: 0.0,
        ..cfg.weights
    };
    let train = small_train_cfg(3);
    let retrieval = small_retrieval();
    let pre = pretrain(&world, &cfg, &small_train_cfg(1), &retrieval).unwrap();
    let out = adapt(&world, &pre, Toggles::baseline(), &cfg, &train, &retrieval).unwrap();

    let seed = train.seed;
    let target = world.target();
    let target_id = target.spec.subject_id;
    let n_adapt = world.spec.n_target_adapt;
    let adapt_voxels = target.train_head(n_adapt).unwrap();
    let stimuli = world.adapt_stimuli();

    let mut ridge_rng = SeededRng::for_domain(seed, StreamDomain::RidgeInit, target_id as u64, 0);
    let mut ridge = RidgeMapper::init(
        target_id,
        target.spec.voxel_dim,
        world.spec.latent_dim,
        &mut ridge_rng,
    )
    .unwrap();
    let mut encoder = pre.encoder.clone();
    let mut shapes = vec![ridge.weight.shape().to_vec(), ridge.bias.shape().to_vec()];
    shapes.extend(encoder.param_shapes());
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            learning_rate: train.learning_rate,
            ..AdamWConfig::default()
        },
        &shape_refs,
    )
    .unwrap();

    let mut step_losses = Vec::new();
    for epoch in 0..train.epochs {
        let mut rng =
            SeededRng::for_domain(seed, StreamDomain::Shuffle, target_id as u64, epoch as u64);
        let mut order: Vec<usize> = (0..n_adapt).collect();
        rng.shuffle(&mut order);
        for idx in order.chunks(train.batch_size).filter(|c| c.len() >= 2) {
            let voxels = gather_rows(&adapt_voxels, idx);
            let images: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| stimuli[i].clean_embedding.clone())
                .collect();
            let images = Tensor::from_rows(&images).unwrap();

            let mut g = Graph::new();
            let v = g.leaf(voxels);
            let w = g.param(ridge.weight.clone());
            let b = g.param(ridge.bias.clone());
            let r = g.affine(v, w, b).unwrap();
            let fwd = encoder
                .graph_forward(&mut g, r, &BTreeSet::new(), FbaMode::Off, true)
                .unwrap();
            let img = g.leaf(images);
            let loss = contrastive_loss(&mut g, fwd.embedding, img, cfg.weights.tau).unwrap();
            step_losses.push(g.value(loss).item().unwrap());
            let grads = g.backward(loss).unwrap();
            let mut grad_refs = vec![grads.param_grad(w), grads.param_grad(b)];
            grad_refs.extend(fwd.params.iter().map(|&id| grads.param_grad(id)));
            let mut params: Vec<&mut Tensor> = vec![&mut ridge.weight, &mut ridge.bias];
            params.extend(encoder.param_tensors_mut());
            opt.step(&mut params, &grad_refs).unwrap();
        }
    }

    assert_eq!(out.step_losses, step_losses);
    assert_eq!(out.target_ridge.weight.data(), ridge.weight.data());
    assert_eq!(out.target_ridge.bias.data(), ridge.bias.data());
    assert_eq!(out.encoder.input_weight.data(), encoder.input_weight.data());
    assert_eq!(out.encoder.head_weight.data(), encoder.head_weight.data());

    // The recorded validation metric is plain eval-mode retrieval too.
    let val_emb = encoder
        .eval_forward(&ridge.forward_batch(&target.val_voxels).unwrap())
        .unwrap();
    let val_images = World::embedding_rows(&world.val_stimuli).unwrap();
    let eval_cfg = capped_retrieval(&retrieval, world.spec.n_target_val);
    let expected = retrieval_eval(
        &val_emb,
        &val_images,
        &eval_cfg,
        seed,
        (train.epochs - 1) as u64,
    )
    .unwrap();
    let last = out.history.last().unwrap();
    assert_eq!(last.val.image_retrieval, expected.image_retrieval);
    assert_eq!(last.val.brain_retrieval, expected.brain_retrieval);
    assert_eq!(out.final_val.image_retrieval, expected.image_retrieval);
}

#[test]
fn adaptation_never_touches_the_frozen_source_mappers() {
    let world = World::generate(&small_spec(), 22).unwrap();
    let cfg = small_encoder_cfg();
    let pre = pretrain(&world, &cfg, &small_train_cfg(1), &small_retrieval()).unwrap();
    let before: Vec<(Vec<f64>, Vec<f64>)> = pre
        .bank
        .mappers()
        .iter()
        .map(|m| (m.weight.data().to_vec(), m.bias.data().to_vec()))
        .collect();
    for toggles in [Toggles::full(), Toggles::baseline()] {
        let _ = adapt(
            &world,
            &pre,
            toggles,
            &cfg,
            &small_train_cfg(2),
            &small_retrieval(),
        )
        .unwrap();
        for (mapper, (w, b)) in pre.bank.mappers().iter().zip(&before) {
            assert!(mapper.frozen);
            assert_eq!(mapper.weight.data(), w.as_slice());
            assert_eq!(mapper.bias.data(), b.as_slice());
        }
    }
}

/// Changing only the evaluation settings must not move a single training
/// step, and re-evaluating an adapted model gives identical embeddings no
/// matter what other rng activity happened in between.
#[test]
fn evaluation_is_pure_and_independent_of_interleaved_rng_use() {
    let world = World::generate(&small_spec(), 23).unwrap();
    let cfg = small_encoder_cfg();
    let pre = pretrain(&world, &cfg, &small_train_cfg(1), &small_retrieval()).unwrap();
    let train = small_train_cfg(2);

    let sparse = adapt(
        &world,
        &pre,
        Toggles::full(),
        &cfg,
        &train,
        &RetrievalConfig {
            pool_size: 6,
            trials: 1,
        },
    )
    .unwrap();
    let dense = adapt(
        &world,
        &pre,
        Toggles::full(),
        &cfg,
        &train,
        &RetrievalConfig {
            pool_size: 10,
            trials: 8,
        },
    )
    .unwrap();
    assert_eq!(sparse.step_losses, dense.step_losses);
    assert_eq!(
        sparse.target_ridge.weight.data(),
        dense.target_ridge.weight.data()
    );
    assert_eq!(
        sparse.encoder.head_weight.data(),
        dense.encoder.head_weight.data()
    );

    let eval = |out: &stablemind_core::harness::train::AdaptOutcome| {
        target_eval_embeddings(
            &out.encoder,
            &out.target_ridge,
            &pre.bank,
            &world.target().val_voxels,
            out.toggles.csrr,
            &cfg.csrr,
            out.pinned_source,
        )
        .unwrap()
    };
    let first = eval(&dense);
    // Burn unrelated draws; a pure evaluation cannot see them.
    let mut noise = SeededRng::for_domain(99, StreamDomain::Test, 0, 0);
    for _ in 0..1000 {
        noise.standard_gaussian();
    }
    let second = eval(&dense);
    assert_eq!(first.data(), second.data());

    let cfg_eval = RetrievalConfig {
        pool_size: 10,
        trials: 5,
    };
    let a = retrieval_eval(&first, &World::embedding_rows(&world.val_stimuli).unwrap(), &cfg_eval, 7, 3).unwrap();
    let b = retrieval_eval(&second, &World::embedding_rows(&world.val_stimuli).unwrap(), &cfg_eval, 7, 3).unwrap();
    assert_eq!(a.image_retrieval, b.image_retrieval);
    assert_eq!(a.brain_retrieval, b.brain_retrieval);
}

#[test]
fn adaptation_and_validation_stimuli_never_share_ids() {
    let world = World::generate(&small_spec(), 24).unwrap();
    for a in world.adapt_stimuli() {
        assert!(world.val_stimuli.iter().all(|v| v.id != a.id));
    }
    // The adaptation session is a strict subset of the training split.
    assert!(world.adapt_stimuli().len() < world.train_stimuli.len());
}

/// Two sources with 300 samples each and thirty epochs of pretraining must
/// clear five times chance on image retrieval over the full validation pool.
#[test]
fn two_source_pretraining_beats_five_times_chance_on_the_full_val_pool() {
    let spec = WorldSpec {
        latent_dim: 8,
        embed_dim: 16,
        image_size: 16,
        subjects: vec![
            SubjectSpec {
                subject_id: 1,
                voxel_dim: 40,
                amplitude_shift: 1.0,
                noise_std: 0.1,
            },
            SubjectSpec {
                subject_id: 2,
                voxel_dim: 36,
                amplitude_shift: 1.3,
                noise_std: 0.1,
            },
            SubjectSpec {
                subject_id: 3,
                voxel_dim: 32,
                amplitude_shift: 1.6,
                noise_std: 0.1,
            },
        ],
        n_train_per_subject: 300,
        n_target_adapt: 25,
        n_target_val: 60,
    };
    let world = World::generate(&spec, 7).unwrap();
    let cfg = EncoderConfig {
        n_blocks: 2,
        hidden_dim: 32,
        fba_positions: [2].into_iter().collect(),
        dib: BlurConfig::desk(16),
        ..EncoderConfig::default()
    };
    let train = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    // Pool is the entire validation set, so chance is 1/60 per direction.
    let retrieval = RetrievalConfig {
        pool_size: spec.n_target_val,
        trials: 10,
    };
    let out = pretrain(&world, &cfg, &train, &retrieval).unwrap();
    assert_eq!(out.subject_metrics.len(), 2);
    let chance = 1.0 / spec.n_target_val as f64;
    for m in &out.subject_metrics {
        assert!(
            m.val.image_retrieval > 5.0 * chance,
            "subject {}: val image retrieval {} not above 5x chance {}",
            m.subject_id,
            m.val.image_retrieval,
            5.0 * chance
        );
    }
    assert!(
        out.epoch_loss.last().unwrap() < out.epoch_loss.first().unwrap(),
        "loss never improved: {:?}",
        out.epoch_loss
    );
}

/// At full fusion weight the encoder input is the source prior alone, and
/// with the distillation weight at zero the only other path to the ridge is
/// scaled by zero: every ridge gradient entry must be exactly 0.0.
#[test]
fn full_fusion_with_zero_distill_weight_gives_the_ridge_zero_gradient() {
    let world = World::generate(&small_spec(), 25).unwrap();
    let cfg = small_encoder_cfg();
    let pre = pretrain(&world, &cfg, &small_train_cfg(1), &small_retrieval()).unwrap();
    let csrr = CsrrConfig {
        alpha: 1.0,
        ..CsrrConfig::default()
    };
    assert!(csrr.fuse && csrr.cos_loss);
    let weights = LossWeights {
        w_src: 0.0,
        ..LossWeights::default()
    };

    let target = world.target();
    let voxels = target.train_head(4).unwrap();
    let images: Vec<Vec<f64>> = world.adapt_stimuli()[..4]
        .iter()
        .map(|s| s.clean_embedding.clone())
        .collect();
    let images = Tensor::from_rows(&images).unwrap();
    let mut rng = SeededRng::for_domain(7, StreamDomain::RidgeInit, target.spec.subject_id as u64, 0);
    let ridge = RidgeMapper::init(
        target.spec.subject_id,
        target.spec.voxel_dim,
        world.spec.latent_dim,
        &mut rng,
    )
    .unwrap();

    let mut g = Graph::new();
    let v = g.leaf(voxels.clone());
    let w = g.param(ridge.weight.clone());
    let b = g.param(ridge.bias.clone());
    let r_t = g.affine(v, w, b).unwrap();
    let projections = pre.bank.project_batch(&voxels).unwrap();
    let prior = pre.bank.prior_batch(&projections, None).unwrap();
    let r_src = g.leaf(prior);
    let fused = g.blend(csrr.alpha, r_src, r_t).unwrap();
    // Frozen encoder: weights enter the graph as constants.
    let fwd = pre
        .encoder
        .graph_forward(&mut g, fused, &BTreeSet::new(), FbaMode::Off, false)
        .unwrap();
    let z_img = g.leaf(images);
    let nodes =
        combined_objective(&mut g, fwd.embedding, z_img, None, Some((r_t, r_src)), &weights)
            .unwrap();
    let grads = g.backward(nodes.total).unwrap();
    assert!(grads.param_grad(w).data().iter().all(|&v| v == 0.0));
    assert!(grads.param_grad(b).data().iter().all(|&v| v == 0.0));

    // At the paper's fusion weight the same graph feeds the ridge a live
    // gradient, so the zero above is the alpha=1 endpoint, not a dead path.
    let mut g = Graph::new();
    let v = g.leaf(voxels.clone());
    let w = g.param(ridge.weight.clone());
    let b = g.param(ridge.bias.clone());
    let r_t = g.affine(v, w, b).unwrap();
    let prior = pre.bank.prior_batch(&projections, None).unwrap();
    let r_src = g.leaf(prior);
    let fused = g.blend(0.1, r_src, r_t).unwrap();
    let fwd = pre
        .encoder
        .graph_forward(&mut g, fused, &BTreeSet::new(), FbaMode::Off, false)
        .unwrap();
    let z_img = g.leaf(Tensor::from_rows(
        &world.adapt_stimuli()[..4]
            .iter()
            .map(|s| s.clean_embedding.clone())
            .collect::<Vec<_>>(),
    )
    .unwrap());
    let nodes =
        combined_objective(&mut g, fwd.embedding, z_img, None, Some((r_t, r_src)), &weights)
            .unwrap();
    let grads = g.backward(nodes.total).unwrap();
    assert!(grads.param_grad(w).data().iter().any(|&v| v != 0.0));
}
