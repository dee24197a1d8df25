//! Soft actor-critic from stacked pixel observations.
//!
//! Training observations pass through the adapter, then weak augmentation,
//! then frame stacking. Evaluation drops the augmentation and can prepend a
//! moving-average de-noising stage for dynamic backgrounds.

mod sac;
mod train;
mod transform;

pub use sac::{ActionSample, ReplayBuffer, SacAgent, SacBatch, SacConfig, SacMetrics, SAC_KIND};
pub use train::{
    evaluate_policy, mean_std, random_policy_returns, train_policy, EvalConfig, EvaluationReport, PolicyConfig,
    PolicyLog, SeedSummary,
};
pub use transform::{
    denoise_moving_average, weak_augment, Denoise, DenoiseConfig, DenoiseState, FrameStacker, FrameTransform,
    ObservationAdapter, ObservationPipeline, StackedObservation, WeakAugment, WeakAugmentConfig,
};
