//! Desk-scale experiment harness.
//!
//! Everything needed to run the adaptation experiments end to end on a
//! laptop: a synthetic multi-subject world with controllable amplitude
//! discrepancies, a procedural stimulus renderer, a frozen image encoder
//! standing in for a large pretrained one, a small trainable brain encoder
//! with augmentation hook points, and the pretrain/adapt/ablate loops.

pub mod ablation;
pub mod encoder;
pub mod render;
pub mod train;
pub mod world;

pub use ablation::{
    ablation_run, ablation_run_rows, grid_rows, AblationReport, AggregatedRow, Grid, GridRow,
    RunRecord,
};
pub use encoder::{BrainEncoder, EncoderConfig, FbaMode, FrozenImageEncoder};
pub use render::render_stimulus;
pub use train::{
    adapt, capped_retrieval, pretrain, subject_embeddings, subject_signatures,
    target_eval_embeddings, AdaptOutcome, EpochRecord, PretrainOutcome, SubjectMetrics, Toggles,
    TrainConfig,
};
pub use world::{Stimulus, SubjectData, SubjectSpec, World, WorldSpec};
