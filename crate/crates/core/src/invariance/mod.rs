//! Distractor-invariant foreground prediction.
//!
//! Clean targets are the masked frames from attention; noisy inputs keep the
//! (lightly jittered) foreground and replace the background with strong
//! augmentations. The adapter learns to recover the clean mask from the
//! noisy input, and at deployment gates raw observations with it.

mod adapter;
mod augment;

pub use adapter::{
    adapt_observation, adapt_observations, adapter_loss, adapter_loss_tensor, adapter_objective, train_adapter,
    AdapterConfig, AdapterLog, AdapterLoss, AdapterModel, ADAPTER_KIND,
};
pub use augment::{
    augment_background, crop_pair, make_training_pair, multicolorout, AppliedOps, AugmentConfig, Augmenter,
    BackgroundFill, TrainingPair,
};
