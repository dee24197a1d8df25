//! Environments with pixel observations.

pub mod drawer;
pub mod sprite;
pub mod texture;

pub use drawer::{drawer_reward, drawer_success, DrawerGeometry, ExponentSign, RewardParams};
pub use sprite::{SpriteStep, SpriteWorld, SpriteWorldConfig, SpriteWorldEnv, SpriteWorldState};
pub use texture::Texture;

use crate::error::Result;
use crate::frame::{BinaryMask, Frame};

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub frame: Frame,
    pub reward: f32,
    pub done: bool,
    /// Task success indicator, for environments that define one.
    pub success: Option<bool>,
}

/// A resettable environment producing pixel observations.
pub trait Environment {
    fn id(&self) -> &str;
    fn texture_id(&self) -> String;
    fn action_dim(&self) -> usize;
    fn frame_shape(&self) -> (usize, usize, usize);
    fn reset(&mut self, seed: u64) -> Result<Frame>;
    fn step(&mut self, action: &[f32]) -> Result<Transition>;

    /// Exact foreground mask of the current frame, when the environment knows it.
    fn ground_truth_mask(&self) -> Option<BinaryMask> {
        None
    }
}
