use std::collections::VecDeque;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaiError};
use crate::frame::{clamp01, Frame};
use crate::invariance::{adapt_observation, multicolorout, AdapterModel};
use crate::rng::Rng;

/// Light training-time augmentation: Gaussian pixel noise plus a few small boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakAugmentConfig {
    pub noise_std: f32,
    pub boxes: [usize; 2],
    /// Box side range as a fraction of the frame side.
    pub box_size: [f32; 2],
}

impl Default for WeakAugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.01,
            boxes: [0, 2],
            box_size: [0.05, 0.15],
        }
    }
}

impl WeakAugmentConfig {
    pub fn disabled() -> Self {
        Self {
            noise_std: 0.0,
            boxes: [0, 0],
            box_size: [0.05, 0.15],
        }
    }
}

pub fn weak_augment(frame: &Frame, cfg: &WeakAugmentConfig, rng: &mut Rng) -> Result<Frame> {
    let mut out = frame.clone();
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, cfg.noise_std).map_err(|e| VaiError::InvalidArgument(e.to_string()))?;
        out.map_inplace(|_, _, _, v| v + normal.sample(rng));
    }
    if cfg.boxes[1] > 0 {
        let side = frame.height().min(frame.width()) as f32;
        let lo = ((cfg.box_size[0] * side).round() as usize).max(1);
        let hi = ((cfg.box_size[1] * side).round() as usize).max(lo);
        out = multicolorout(&out, rng, cfg.boxes[0]..=cfg.boxes[1], lo..=hi);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    /// Scale of the subtracted moving average; 0 disables the wrapper.
    pub alpha: f32,
    /// Moving-average update rate.
    pub beta: f32,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.05 }
    }
}

/// Exponential moving average of past frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseState {
    pub running_average: Option<Frame>,
    pub alpha: f32,
    pub beta: f32,
}

impl DenoiseState {
    pub fn new(config: DenoiseConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.alpha) || !(0.0..=1.0).contains(&config.beta) {
            return Err(VaiError::InvalidArgument(format!(
                "denoise alpha and beta must lie in [0, 1], got {} and {}",
                config.alpha, config.beta
            )));
        }
        Ok(Self {
            running_average: None,
            alpha: config.alpha,
            beta: config.beta,
        })
    }

    pub fn reset(&mut self) {
        self.running_average = None;
    }
}

/// `clamp(frame − α·avg + mean_color(α·avg))`, then `avg ← (1−β)·avg + β·frame`.
/// The average starts at the first frame seen.
pub fn denoise_moving_average(frame: &Frame, mut state: DenoiseState) -> Result<(Frame, DenoiseState)> {
    let avg = match state.running_average.take() {
        Some(a) => {
            frame.ensure_shape(a.shape())?;
            a
        }
        None => frame.clone(),
    };
    let a = state.alpha;
    let mean = avg.mean_color();
    let mut out = frame.clone();
    out.map_inplace(|y, x, c, v| v - a * avg.get(y, x, c) + a * mean[c]);
    let b = state.beta;
    let mut next = avg;
    next.map_inplace(|y, x, c, v| clamp01((1.0 - b) * v + b * frame.get(y, x, c)));
    state.running_average = Some(next);
    Ok((out, state))
}

/// One per-frame stage of the observation pipeline.
pub trait FrameTransform {
    fn name(&self) -> &str;
    fn apply(&mut self, frame: &Frame, rng: &mut Rng) -> Result<Frame>;
    /// Called at episode start.
    fn reset(&mut self) {}
    /// Training-only augmentations report `true`; the pipeline counts their calls.
    fn is_training_augmentation(&self) -> bool {
        false
    }
}

/// The observation adapter used by the policy: learned masking or pass-through.
#[derive(Debug, Clone)]
pub enum ObservationAdapter {
    Identity,
    Learned(AdapterModel),
}

impl FrameTransform for ObservationAdapter {
    fn name(&self) -> &str {
        match self {
            Self::Identity => "identity-adapter",
            Self::Learned(_) => "adapter",
        }
    }

    fn apply(&mut self, frame: &Frame, _: &mut Rng) -> Result<Frame> {
        match self {
            Self::Identity => Ok(frame.clone()),
            Self::Learned(m) => adapt_observation(m, frame),
        }
    }
}

pub struct WeakAugment(pub WeakAugmentConfig);

impl FrameTransform for WeakAugment {
    fn name(&self) -> &str {
        "weak-augment"
    }

    fn apply(&mut self, frame: &Frame, rng: &mut Rng) -> Result<Frame> {
        weak_augment(frame, &self.0, rng)
    }

    fn is_training_augmentation(&self) -> bool {
        true
    }
}

pub struct Denoise {
    config: DenoiseConfig,
    state: Option<DenoiseState>,
}

impl Denoise {
    pub fn new(config: DenoiseConfig) -> Result<Self> {
        Ok(Self {
            state: Some(DenoiseState::new(config)?),
            config,
        })
    }
}

impl FrameTransform for Denoise {
    fn name(&self) -> &str {
        "denoise"
    }

    fn apply(&mut self, frame: &Frame, _: &mut Rng) -> Result<Frame> {
        let state = self.state.take().expect("state restored after every call");
        let (out, state) = denoise_moving_average(frame, state)?;
        self.state = Some(state);
        Ok(out)
    }

    fn reset(&mut self) {
        self.state = Some(DenoiseState::new(self.config).expect("validated at construction"));
    }
}

/// The `k` most recent frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedObservation {
    pub frames: Vec<Frame>,
}

impl StackedObservation {
    /// Channel-major concatenation, `k·C×H×W`.
    pub fn to_chw(&self) -> Vec<f32> {
        self.frames.iter().flat_map(|f| f.to_chw()).collect()
    }

    pub fn to_u8_chw(&self) -> Vec<u8> {
        self.to_chw().into_iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    /// `(k·C, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let (h, w, c) = self.frames[0].shape();
        (c * self.frames.len(), h, w)
    }
}

/// Sliding window over the last `k` frames; episode starts repeat the first frame.
#[derive(Debug, Clone)]
pub struct FrameStacker {
    k: usize,
    window: VecDeque<Frame>,
}

impl FrameStacker {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(VaiError::InvalidArgument("frame stack must be at least 1".into()));
        }
        Ok(Self {
            k,
            window: VecDeque::with_capacity(k),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reset(&mut self, first: Frame) -> StackedObservation {
        self.window.clear();
        for _ in 0..self.k {
            self.window.push_back(first.clone());
        }
        self.current()
    }

    pub fn push(&mut self, frame: Frame) -> StackedObservation {
        if self.window.is_empty() {
            return self.reset(frame);
        }
        self.window.pop_front();
        self.window.push_back(frame);
        self.current()
    }

    fn current(&self) -> StackedObservation {
        StackedObservation {
            frames: self.window.iter().cloned().collect(),
        }
    }
}

/// Raw frame → stages in order → stack.
pub struct ObservationPipeline {
    stages: Vec<Box<dyn FrameTransform>>,
    stacker: FrameStacker,
    augment_calls: usize,
}

impl ObservationPipeline {
    pub fn new(stages: Vec<Box<dyn FrameTransform>>, frame_stack: usize) -> Result<Self> {
        Ok(Self {
            stages,
            stacker: FrameStacker::new(frame_stack)?,
            augment_calls: 0,
        })
    }

    /// `[denoise] → adapt → [weak augment] → stack`.
    pub fn standard(
        denoise: Option<Box<dyn FrameTransform>>,
        adapter: Box<dyn FrameTransform>,
        augment: Option<Box<dyn FrameTransform>>,
        frame_stack: usize,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        stages.extend(denoise);
        stages.push(adapter);
        stages.extend(augment);
        Self::new(stages, frame_stack)
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    /// Number of training-augmentation applications so far.
    pub fn augment_calls(&self) -> usize {
        self.augment_calls
    }

    fn transform(&mut self, frame: &Frame, rng: &mut Rng) -> Result<Frame> {
        let mut f = frame.clone();
        for s in &mut self.stages {
            if s.is_training_augmentation() {
                self.augment_calls += 1;
            }
            f = s.apply(&f, rng)?;
        }
        Ok(f)
    }

    pub fn reset(&mut self, frame: &Frame, rng: &mut Rng) -> Result<StackedObservation> {
        for s in &mut self.stages {
            s.reset();
        }
        let f = self.transform(frame, rng)?;
        Ok(self.stacker.reset(f))
    }

    pub fn step(&mut self, frame: &Frame, rng: &mut Rng) -> Result<StackedObservation> {
        let f = self.transform(frame, rng)?;
        Ok(self.stacker.push(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng as _, SeedableRng};

    fn frame(rng: &mut Rng) -> Frame {
        Frame::from_clamped(Array3::from_shape_fn((12, 12, 3), |_| rng.random::<f32>()))
    }

    #[test]
    fn disabled_weak_augment_is_identity() {
        let mut rng = Rng::seed_from_u64(0);
        let f = frame(&mut rng);
        assert_eq!(weak_augment(&f, &WeakAugmentConfig::disabled(), &mut rng).unwrap(), f);
    }

    #[test]
    fn weak_noise_stays_within_five_sigma() {
        let mut rng = Rng::seed_from_u64(1);
        let f = Frame::filled(32, 32, &[0.5, 0.5, 0.5]);
        let cfg = WeakAugmentConfig { noise_std: 0.01, boxes: [0, 0], ..Default::default() };
        let out = weak_augment(&f, &cfg, &mut rng).unwrap();
        let diffs: Vec<f32> = out.pixels().iter().zip(f.pixels()).map(|(a, b)| a - b).collect();
        assert!(diffs.iter().all(|d| d.abs() <= 0.05));
        let mean = diffs.iter().sum::<f32>() / diffs.len() as f32;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f32>() / diffs.len() as f32).sqrt();
        assert!((sd - 0.01).abs() < 0.002, "std {sd}");
        assert!(mean.abs() < 0.002);
    }

    #[test]
    fn weak_augment_is_deterministic() {
        let f = frame(&mut Rng::seed_from_u64(2));
        let a = weak_augment(&f, &WeakAugmentConfig::default(), &mut Rng::seed_from_u64(3)).unwrap();
        let b = weak_augment(&f, &WeakAugmentConfig::default(), &mut Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn denoise_alpha_zero_is_identity() {
        let mut rng = Rng::seed_from_u64(4);
        let mut state = DenoiseState::new(DenoiseConfig { alpha: 0.0, beta: 0.3 }).unwrap();
        for _ in 0..10 {
            let f = frame(&mut rng);
            let (out, s) = denoise_moving_average(&f, state).unwrap();
            assert_eq!(out, f);
            state = s;
        }
    }

    #[test]
    fn denoise_static_video_fixed_point() {
        // converged average equals the frame: output = (1-α)·f + α·mean(f)
        let f = frame(&mut Rng::seed_from_u64(5));
        let alpha = 0.6;
        let mut state = DenoiseState::new(DenoiseConfig { alpha, beta: 0.05 }).unwrap();
        let mut out = f.clone();
        for _ in 0..5 {
            let (o, s) = denoise_moving_average(&f, state).unwrap();
            out = o;
            state = s;
        }
        let mean = f.mean_color();
        for ((y, x, c), &v) in out.pixels().indexed_iter() {
            let want = ((1.0 - alpha) * f.get(y, x, c) + alpha * mean[c]).clamp(0.0, 1.0);
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn denoise_rejects_bad_alpha() {
        assert!(DenoiseState::new(DenoiseConfig { alpha: 1.5, beta: 0.1 }).is_err());
    }

    #[test]
    fn stacking_rules() {
        let mut rng = Rng::seed_from_u64(6);
        let fs: Vec<Frame> = (0..4).map(|_| frame(&mut rng)).collect();
        let mut s = FrameStacker::new(3).unwrap();
        let first = s.reset(fs[0].clone());
        assert_eq!(first.frames, vec![fs[0].clone(); 3]);
        assert_eq!(first.shape(), (9, 12, 12));
        s.push(fs[1].clone());
        s.push(fs[2].clone());
        let last = s.push(fs[3].clone());
        assert_eq!(last.frames, fs[1..].to_vec());
        let mut one = FrameStacker::new(1).unwrap();
        assert_eq!(one.reset(fs[2].clone()).frames, vec![fs[2].clone()]);
        assert_eq!(one.push(fs[3].clone()).frames, vec![fs[3].clone()]);
        assert!(FrameStacker::new(0).is_err());
    }
}
