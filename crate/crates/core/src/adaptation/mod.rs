//! Patching variants, transfer-learning baselines and their building blocks.

pub mod builders;
pub mod config;
pub mod model;
pub mod selection;

pub use builders::{
    base_layers, build_base, build_estimator, build_patch, default_engagement_layer, EngagementCandidates,
};
pub use config::{
    format_arch, parse_arch, AdaptationSettings, BaseArch, ErrorTarget, ModelSpec, PatchConfig, PatchInit,
    TailInit, TrainOrder, TrainingScheme, VariantId, VariantSpec,
};
pub use model::{build_freezing, AdaptiveModel, ChunkContext, ChunkPrediction, ModelKind, TrainInfo};
pub use selection::{
    choose_patch_init, perfect_ensemble_accuracy, select_training_set, ErrorRegionLabels, PatchInitChoice,
};
