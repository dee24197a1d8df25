//! SpriteWorld: a small articulated sprite chasing a target over a
//! swappable background texture, rendered without anti-aliasing so the
//! foreground mask of every frame is known exactly.

use ndarray::Array3;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use super::{Environment, Transition};
use crate::error::{Result, VaiError};
use crate::frame::{BinaryMask, Frame};
use crate::rng::Rng;

pub const ENV_ID: &str = "spriteworld";

const HEAD_COLOR: [f32; 3] = [1.0, 0.85, 0.2];
const TAIL_COLOR: [f32; 3] = [0.95, 0.6, 0.15];
const TARGET_COLOR: [f32; 3] = [0.95, 0.25, 0.35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpriteWorldConfig {
    pub height: usize,
    pub width: usize,
    pub episode_length: usize,
    /// Head displacement per step at full action, in arena units.
    pub max_speed: f32,
    pub head_radius: f32,
    pub segments: usize,
    pub segment_length: f32,
    pub segment_radius: f32,
    pub target_radius: f32,
    /// Minimum head-target distance at reset.
    pub min_start_distance: f32,
    /// When false the arena is rendered empty (background only).
    pub render_foreground: bool,
}

impl Default for SpriteWorldConfig {
    fn default() -> Self {
        Self {
            height: 84,
            width: 84,
            episode_length: 100,
            max_speed: 0.05,
            head_radius: 0.11,
            segments: 2,
            segment_length: 0.13,
            segment_radius: 0.06,
            target_radius: 0.10,
            min_start_distance: 0.3,
            render_foreground: true,
        }
    }
}

impl SpriteWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.max_speed,
            self.head_radius,
            self.segment_length,
            self.segment_radius,
            self.target_radius,
        ];
        if self.height == 0 || self.width == 0 || self.episode_length == 0 {
            return Err(VaiError::InvalidArgument(
                "environment height, width and episode_length must be positive".into(),
            ));
        }
        if positive.iter().any(|v| !(*v > 0.0 && *v < 0.5)) {
            return Err(VaiError::InvalidArgument(
                "sprite sizes and speed must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteWorldState {
    /// Joint positions in arena coordinates `[0,1]²`; index 0 is the head (tip).
    pub joints: Vec<[f32; 2]>,
    /// Per-joint displacement over the last step.
    pub velocities: Vec<[f32; 2]>,
    pub target: [f32; 2],
    pub texture_id: String,
    pub step: usize,
    /// Number of action components clamped into `[-1, 1]` so far.
    pub clamped_actions: u64,
}

impl SpriteWorldState {
    pub fn tip(&self) -> [f32; 2] {
        self.joints[0]
    }

    pub fn tip_distance(&self) -> f32 {
        let [x, y] = self.tip();
        ((x - self.target[0]).powi(2) + (y - self.target[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SpriteStep {
    pub state: SpriteWorldState,
    pub frame: Frame,
    pub reward: f32,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct SpriteWorld {
    config: SpriteWorldConfig,
    texture: Texture,
    background: Frame,
}

impl SpriteWorld {
    pub fn new(config: SpriteWorldConfig) -> Result<Self> {
        Self::with_texture(config, Texture::Grid)
    }

    pub fn with_texture(config: SpriteWorldConfig, texture: Texture) -> Result<Self> {
        config.validate()?;
        let background = texture.render(config.height, config.width)?;
        Ok(Self {
            config,
            texture,
            background,
        })
    }

    pub fn config(&self) -> &SpriteWorldConfig {
        &self.config
    }

    pub fn texture(&self) -> &Texture {
        &self.texture
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, 3)
    }

    /// Swaps the background. Dynamics, rewards and masks are unaffected.
    pub fn set_texture(&mut self, texture: Texture) -> Result<()> {
        self.background = texture.render(self.config.height, self.config.width)?;
        self.texture = texture;
        Ok(())
    }

    pub fn reset(&self, seed: u64) -> (SpriteWorldState, Frame) {
        let mut rng = Rng::seed_from_u64(seed);
        let c = &self.config;
        let lo = c.head_radius;
        let hi = 1.0 - c.head_radius;
        let head = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let mut joints = vec![head];
        for i in 1..=c.segments {
            let d = c.segment_length * i as f32;
            joints.push([
                (head[0] + d * angle.cos()).clamp(0.0, 1.0),
                (head[1] + d * angle.sin()).clamp(0.0, 1.0),
            ]);
        }
        let tlo = c.target_radius + 0.05;
        let thi = 1.0 - tlo;
        let mut target = [0.5, 0.5];
        for _ in 0..100 {
            target = [rng.random_range(tlo..thi), rng.random_range(tlo..thi)];
            let d = ((target[0] - head[0]).powi(2) + (target[1] - head[1]).powi(2)).sqrt();
            if d >= c.min_start_distance {
                break;
            }
        }
        let state = SpriteWorldState {
            velocities: vec![[0.0; 2]; joints.len()],
            joints,
            target,
            texture_id: self.texture.to_string(),
            step: 0,
            clamped_actions: 0,
        };
        let frame = self.render(&state);
        (state, frame)
    }

    pub fn step(&self, state: &SpriteWorldState, action: &[f32]) -> Result<SpriteStep> {
        if action.len() != self.action_dim() {
            return Err(VaiError::shape(self.action_dim(), action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(VaiError::InvalidArgument(format!("non-finite action {action:?}")));
        }
        let c = &self.config;
        let mut next = state.clone();
        next.texture_id = self.texture.to_string();
        let mut a = [0.0f32; 2];
        for (k, &v) in action.iter().enumerate() {
            if !(-1.0..=1.0).contains(&v) {
                next.clamped_actions += 1;
            }
            a[k] = v.clamp(-1.0, 1.0);
        }
        let lo = c.head_radius;
        let hi = 1.0 - c.head_radius;
        let old = state.joints.clone();
        let head = &mut next.joints[0];
        head[0] = (head[0] + a[0] * c.max_speed).clamp(lo, hi);
        head[1] = (head[1] + a[1] * c.max_speed).clamp(lo, hi);
        // follow-the-leader: each joint is dragged to stay one segment behind its parent;
        // the slack keeps rounding error from moving a joint that sits exactly at length
        for i in 1..next.joints.len() {
            let parent = next.joints[i - 1];
            let cur = next.joints[i];
            let (dx, dy) = (cur[0] - parent[0], cur[1] - parent[1]);
            let len = (dx * dx + dy * dy).sqrt();
            if len > c.segment_length * (1.0 + 1e-5) {
                let s = c.segment_length / len;
                next.joints[i] = [
                    (parent[0] + dx * s).clamp(0.0, 1.0),
                    (parent[1] + dy * s).clamp(0.0, 1.0),
                ];
            }
        }
        for (i, (n, o)) in next.joints.iter().zip(&old).enumerate() {
            next.velocities[i] = [n[0] - o[0], n[1] - o[1]];
        }
        next.step += 1;
        let frame = self.render(&next);
        Ok(SpriteStep {
            reward: self.reward(&next),
            done: next.step >= c.episode_length,
            success: next.tip_distance() < c.target_radius,
            state: next,
            frame,
        })
    }

    /// Negative tip-to-target distance; 0 at the target.
    pub fn reward(&self, state: &SpriteWorldState) -> f32 {
        -state.tip_distance()
    }

    pub fn render(&self, state: &SpriteWorldState) -> Frame {
        self.render_with_count(state).0
    }

    /// Renders the state and reports how many pixels the foreground layer covered.
    pub fn render_with_count(&self, state: &SpriteWorldState) -> (Frame, usize) {
        let (h, w, _) = self.frame_shape();
        let mut px: Array3<f32> = self.background.pixels().clone();
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                if let Some(color) = self.foreground_color(state, pixel_center(x, w), pixel_center(y, h)) {
                    count += 1;
                    for k in 0..3 {
                        px[[y, x, k]] = color[k];
                    }
                }
            }
        }
        (Frame::from_clamped(px).quantized(), count)
    }

    /// Exact mask of the pixels covered by the sprite and the target.
    pub fn ground_truth_mask(&self, state: &SpriteWorldState) -> BinaryMask {
        let (h, w, _) = self.frame_shape();
        BinaryMask::from_fn(h, w, |y, x| {
            self.foreground_color(state, pixel_center(x, w), pixel_center(y, h))
                .is_some()
        })
    }

    fn foreground_color(&self, state: &SpriteWorldState, u: f32, v: f32) -> Option<[f32; 3]> {
        let c = &self.config;
        if !c.render_foreground {
            return None;
        }
        let p = [u, v];
        if dist2(p, state.joints[0]) <= c.head_radius * c.head_radius {
            return Some(HEAD_COLOR);
        }
        let r2 = c.segment_radius * c.segment_radius;
        for pair in state.joints.windows(2) {
            if segment_dist2(p, pair[0], pair[1]) <= r2 {
                return Some(TAIL_COLOR);
            }
        }
        if dist2(p, state.target) <= c.target_radius * c.target_radius {
            return Some(TARGET_COLOR);
        }
        None
    }
}

fn pixel_center(i: usize, n: usize) -> f32 {
    (i as f32 + 0.5) / n as f32
}

fn dist2(a: [f32; 2], b: [f32; 2]) -> f32 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn segment_dist2(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Stateful wrapper exposing [`SpriteWorld`] through [`Environment`].
#[derive(Debug, Clone)]
pub struct SpriteWorldEnv {
    world: SpriteWorld,
    state: Option<SpriteWorldState>,
}

impl SpriteWorldEnv {
    pub fn new(world: SpriteWorld) -> Self {
        Self { world, state: None }
    }

    pub fn world(&self) -> &SpriteWorld {
        &self.world
    }

    pub fn set_texture(&mut self, texture: Texture) -> Result<()> {
        self.world.set_texture(texture)
    }

    pub fn state(&self) -> Option<&SpriteWorldState> {
        self.state.as_ref()
    }
}

impl Environment for SpriteWorldEnv {
    fn id(&self) -> &str {
        ENV_ID
    }

    fn texture_id(&self) -> String {
        self.world.texture().to_string()
    }

    fn action_dim(&self) -> usize {
        self.world.action_dim()
    }

    fn frame_shape(&self) -> (usize, usize, usize) {
        self.world.frame_shape()
    }

    fn reset(&mut self, seed: u64) -> Result<Frame> {
        let (state, frame) = self.world.reset(seed);
        self.state = Some(state);
        Ok(frame)
    }

    fn step(&mut self, action: &[f32]) -> Result<Transition> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| VaiError::InvalidArgument("step called before reset".into()))?;
        let out = self.world.step(state, action)?;
        self.state = Some(out.state);
        Ok(Transition {
            frame: out.frame,
            reward: out.reward,
            done: out.done,
            success: Some(out.success),
        })
    }

    fn ground_truth_mask(&self) -> Option<BinaryMask> {
        self.state.as_ref().map(|s| self.world.ground_truth_mask(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SpriteWorldConfig {
        SpriteWorldConfig {
            height: 32,
            width: 32,
            ..Default::default()
        }
    }

    #[test]
    fn zero_action_from_rest_only_advances_step() {
        let world = SpriteWorld::new(small()).unwrap();
        let (s0, f0) = world.reset(3);
        let out = world.step(&s0, &[0.0, 0.0]).unwrap();
        assert_eq!(out.state.joints, s0.joints);
        assert_eq!(out.state.target, s0.target);
        assert_eq!(out.state.step, 1);
        assert_eq!(out.frame, f0);
    }

    #[test]
    fn same_seed_and_actions_reproduce_frames() {
        let world = SpriteWorld::new(small()).unwrap();
        let run = || {
            let (mut s, f) = world.reset(11);
            let mut frames = vec![f];
            for i in 0..20 {
                let a = [((i * 7) % 5) as f32 / 2.0 - 1.0, ((i * 3) % 4) as f32 / 1.5 - 1.0];
                let out = world.step(&s, &a).unwrap();
                frames.push(out.frame);
                s = out.state;
            }
            frames
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reward_is_zero_at_target() {
        let world = SpriteWorld::new(small()).unwrap();
        let (mut s, _) = world.reset(0);
        s.joints[0] = s.target;
        assert_eq!(world.reward(&s), 0.0);
        let (s2, _) = world.reset(0);
        assert!(world.reward(&s2) < 0.0);
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_counted() {
        let world = SpriteWorld::new(small()).unwrap();
        let (s, _) = world.reset(1);
        let a = world.step(&s, &[3.0, -0.5]).unwrap();
        let b = world.step(&s, &[1.0, -0.5]).unwrap();
        assert_eq!(a.state.joints, b.state.joints);
        assert_eq!(a.state.clamped_actions, 1);
        assert_eq!(b.state.clamped_actions, 0);
        assert!(world.step(&s, &[0.0]).is_err());
        assert!(world.step(&s, &[f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn positions_stay_in_arena_and_episode_ends() {
        let world = SpriteWorld::new(small()).unwrap();
        let (mut s, _) = world.reset(5);
        let mut done = false;
        let mut steps = 0;
        while !done {
            let out = world.step(&s, &[1.0, 1.0]).unwrap();
            for j in &out.state.joints {
                assert!((0.0..=1.0).contains(&j[0]) && (0.0..=1.0).contains(&j[1]));
            }
            s = out.state;
            done = out.done;
            steps += 1;
        }
        assert_eq!(steps, world.config().episode_length);
    }

    #[test]
    fn empty_arena_has_empty_mask() {
        let cfg = SpriteWorldConfig {
            render_foreground: false,
            ..small()
        };
        let world = SpriteWorld::new(cfg).unwrap();
        let (s, f) = world.reset(2);
        assert_eq!(world.ground_truth_mask(&s).count(), 0);
        assert_eq!(f, Texture::Grid.render(32, 32).unwrap());
    }

    #[test]
    fn mask_matches_renderer() {
        let world = SpriteWorld::new(small()).unwrap();
        let (s, _) = world.reset(9);
        let (frame, count) = world.render_with_count(&s);
        let mask = world.ground_truth_mask(&s);
        assert_eq!(mask.count(), count);
        assert!(count > 0);
        // the mask selects exactly the sprite layer
        let masked = mask.apply(&frame).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                for k in 0..3 {
                    let expect = if mask.get(y, x) { frame.get(y, x, k) } else { 0.0 };
                    assert_eq!(masked.get(y, x, k), expect);
                }
            }
        }
    }

    #[test]
    fn texture_changes_pixels_only() {
        let mut a = SpriteWorld::new(small()).unwrap();
        let b = SpriteWorld::with_texture(small(), Texture::Wood).unwrap();
        let (sa, fa) = a.reset(4);
        let (sb, fb) = b.reset(4);
        assert_eq!(sa.joints, sb.joints);
        assert_ne!(fa, fb);
        assert_eq!(a.ground_truth_mask(&sa), b.ground_truth_mask(&sb));
        let ra = a.step(&sa, &[0.3, -0.2]).unwrap();
        let rb = b.step(&sb, &[0.3, -0.2]).unwrap();
        assert_eq!(ra.reward, rb.reward);
        assert_eq!(ra.state.joints, rb.state.joints);

        a.set_texture(Texture::Wood).unwrap();
        let (_, fa2) = a.reset(4);
        assert_eq!(fa2, fb);
        let (_, fa3) = a.reset(5);
        assert_eq!(a.texture(), &Texture::Wood);
        assert_ne!(fa3, fa2);
    }

    #[test]
    fn env_wrapper_steps() {
        let mut env = SpriteWorldEnv::new(SpriteWorld::new(small()).unwrap());
        assert!(env.step(&[0.0, 0.0]).is_err());
        let f = env.reset(0).unwrap();
        assert_eq!(f.shape(), (32, 32, 3));
        let t = env.step(&[0.5, 0.5]).unwrap();
        assert!(t.reward <= 0.0);
        assert!(env.ground_truth_mask().is_some());
    }
}
