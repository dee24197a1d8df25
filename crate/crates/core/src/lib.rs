//! Unsupervised visual attention and invariance for pixel-based control.
//!
//! The pipeline learns, without labels, which pixels of an observation
//! belong to the moving foreground, trains a small adapter that recovers
//! that foreground under heavy background augmentation, and feeds the
//! adapted observations to a soft actor-critic agent.
//!
//! * [`data`]: episode storage, random-policy collection, pair sampling
//! * [`keypoint`]: keypoint detector, feature transport, reconstruction
//! * [`attention`]: counterfactual foreground maps and binary masks
//! * [`invariance`]: augmentation, adapter training, deployment-time masking
//! * [`policy`]: SAC agent, frame stacking, evaluation
//! * [`envs`]: SpriteWorld and the drawer reward functions

pub mod attention;
pub mod data;
pub mod envs;
pub mod error;
pub mod frame;
pub mod invariance;
pub mod keypoint;
pub mod nn;
pub mod policy;
pub mod rng;

pub use error::{Result, VaiError};
pub use frame::{BinaryMask, Frame};
