use std::path::Path;

use candle_core::{Device, Module, Tensor};
use candle_nn::{Conv2d, Optimizer};
use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::augment::{AugmentConfig, Augmenter};
use crate::attention::MaskedDataset;
use crate::error::{Result, VaiError};
use crate::frame::{fmt_shape, frames_to_tensor, BinaryMask, Frame};
use crate::keypoint::TrainLog;
use crate::nn::{adam, optimize, to_scalar, Checkpoint, ParamStore};
use crate::rng::{derive_seed, stream, Rng};

pub const ADAPTER_KIND: &str = "adapter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub hidden_channels: usize,
    pub feature_channels: usize,
    /// Weight of the encoder feature-matching term.
    pub lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cut-off that turns the predicted soft mask into a binary one.
    pub mask_threshold: f32,
    /// Mask value the untrained decoder predicts everywhere. Starting near the
    /// foreground fraction keeps the sigmoid out of saturation early on.
    pub initial_mask: f32,
    /// Linear learning-rate ramp length.
    pub warmup_steps: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 32,
            feature_channels: 32,
            lambda: 1.0,
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            mask_threshold: 0.5,
            initial_mask: 0.1,
            warmup_steps: 200,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels < 2 || self.feature_channels == 0 || self.batch_size == 0 {
            return Err(VaiError::InvalidArgument(
                "adapter needs hidden_channels >= 2 and positive feature_channels, batch_size".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(VaiError::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.initial_mask > 0.0 && self.initial_mask < 1.0) {
            return Err(VaiError::InvalidArgument(format!(
                "initial_mask must lie in (0, 1), got {}",
                self.initial_mask
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredConfig {
    frame_shape: (usize, usize, usize),
    seed: u64,
    adapter: AdapterConfig,
}

/// Encoder `E` and mask decoder `D̂`. `D̂` reads `E`'s output.
#[derive(Debug, Clone)]
pub struct AdapterModel {
    config: AdapterConfig,
    frame_shape: (usize, usize, usize),
    seed: u64,
    params: ParamStore,
    enc: [Conv2d; 3],
    dec: [Conv2d; 3],
}

impl AdapterModel {
    pub fn new(config: AdapterConfig, frame_shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        let (h, w, c) = frame_shape;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(VaiError::InvalidArgument(format!(
                "frame height and width must be positive multiples of 4, got {}",
                fmt_shape(frame_shape)
            )));
        }
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "adapter-init"));
        let mut ps = ParamStore::new();
        let hid = config.hidden_channels;
        let f = config.feature_channels;
        let enc = [
            ps.conv2d("encoder.c1", c, hid / 2, 3, 2, &mut rng)?,
            ps.conv2d("encoder.c2", hid / 2, hid, 3, 2, &mut rng)?,
            ps.conv2d("encoder.c3", hid, f, 3, 1, &mut rng)?,
        ];
        let dec = [
            ps.conv2d("decoder.c1", f, hid, 3, 1, &mut rng)?,
            ps.conv2d("decoder.c2", hid, hid / 2, 3, 1, &mut rng)?,
            ps.conv2d("decoder.c3", hid / 2, 1, 3, 1, &mut rng)?,
        ];
        // Small output weights and a bias at logit(initial_mask).
        let p = config.initial_mask;
        if let Some(w) = ps.get("decoder.c3.weight") {
            w.set(&w.as_tensor().affine(0.1, 0.0)?)?;
        }
        if let Some(b) = ps.get("decoder.c3.bias") {
            b.set(&Tensor::new(&[(p / (1.0 - p)).ln()], &Device::Cpu)?)?;
        }
        Ok(Self {
            config,
            frame_shape,
            seed,
            params: ps,
            enc,
            dec,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frame_shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `E`: `B×C×H×W → B×F×H/4×W/4`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.enc[0].forward(x)?.relu()?;
        let h = self.enc[1].forward(&h)?.relu()?;
        Ok(self.enc[2].forward(&h)?)
    }

    /// `D̂`: encoder features to a `B×1×H×W` soft mask in `[0,1]`.
    pub fn decode_mask(&self, features: &Tensor) -> Result<Tensor> {
        let (_, _, gh, gw) = features.dims4()?;
        let x = self.dec[0].forward(features)?.relu()?;
        let x = x.upsample_nearest2d(gh * 2, gw * 2)?;
        let x = self.dec[1].forward(&x)?.relu()?;
        let x = x.upsample_nearest2d(gh * 4, gw * 4)?;
        Ok(candle_nn::ops::sigmoid(&self.dec[2].forward(&x)?)?)
    }

    pub fn to_input(&self, frames: &[&Frame]) -> Result<Tensor> {
        for f in frames {
            f.ensure_shape(self.frame_shape)?;
        }
        frames_to_tensor(frames, &Device::Cpu)
    }

    /// Soft masks `D̂(E(frame))` as `H×W` arrays.
    pub fn predict_masks(&self, frames: &[&Frame]) -> Result<Vec<Array2<f32>>> {
        let (h, w, _) = self.frame_shape;
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(32) {
            let m = self.decode_mask(&self.encode(&self.to_input(chunk)?)?)?;
            let flat: Vec<f32> = m.flatten_all()?.to_vec1()?;
            for i in 0..chunk.len() {
                out.push(
                    Array2::from_shape_vec((h, w), flat[i * h * w..(i + 1) * h * w].to_vec())
                        .map_err(|e| VaiError::InvalidArgument(e.to_string()))?,
                );
            }
        }
        Ok(out)
    }

    pub fn predict_mask(&self, frame: &Frame) -> Result<Array2<f32>> {
        Ok(self.predict_masks(&[frame])?.remove(0))
    }

    /// Predicted mask thresholded at `config.mask_threshold`.
    pub fn predict_binary_mask(&self, frame: &Frame) -> Result<BinaryMask> {
        Ok(self.predict_binary_masks(&[frame])?.remove(0))
    }

    pub fn predict_binary_masks(&self, frames: &[&Frame]) -> Result<Vec<BinaryMask>> {
        let t = self.config.mask_threshold;
        Ok(self
            .predict_masks(frames)?
            .into_iter()
            .map(|m| {
                let (h, w) = m.dim();
                BinaryMask::from_fn(h, w, |y, x| m[[y, x]] >= t).with_threshold(t)
            })
            .collect())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(
            ADAPTER_KIND,
            &StoredConfig {
                frame_shape: self.frame_shape,
                seed: self.seed,
                adapter: self.config.clone(),
            },
            &self.params,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(ADAPTER_KIND, path)?;
        let stored: StoredConfig = ck.config(path)?;
        let model = Self::new(stored.adapter, stored.frame_shape, stored.seed)?;
        model
            .params
            .load_arrays(&ck.arrays)
            .map_err(|e| VaiError::format(path, e.to_string()))?;
        Ok(model)
    }
}

/// `frame ⊗ D̂(E(frame))`, the observation handed to the policy.
pub fn adapt_observation(model: &AdapterModel, frame: &Frame) -> Result<Frame> {
    frame.gated(&model.predict_mask(frame)?)
}

pub fn adapt_observations(model: &AdapterModel, frames: &[&Frame]) -> Result<Vec<Frame>> {
    model
        .predict_masks(frames)?
        .iter()
        .zip(frames)
        .map(|(m, f)| f.gated(m))
        .collect()
}

/// Loss terms, each a per-sample sum of squares averaged over the batch.
#[derive(Debug, Clone)]
pub struct AdapterLoss {
    pub total: Tensor,
    pub mask: Tensor,
    pub feature: Tensor,
}

/// `‖mask_pred − mask_target‖² + λ‖feat_noisy − feat_clean‖²`.
pub fn adapter_objective(
    mask_pred: &Tensor,
    mask_target: &Tensor,
    feat_noisy: &Tensor,
    feat_clean: &Tensor,
    lambda: f64,
) -> Result<AdapterLoss> {
    let b = mask_pred.dim(0)? as f64;
    let mask = (mask_pred.sub(mask_target)?.sqr()?.sum_all()? / b)?;
    let feature = (feat_noisy.sub(feat_clean)?.sqr()?.sum_all()? / b)?;
    let total = (&mask + (&feature * lambda)?)?;
    Ok(AdapterLoss { total, mask, feature })
}

/// Full adapter loss on a batch of training pairs.
pub fn adapter_loss_tensor(
    model: &AdapterModel,
    noisy: &Tensor,
    clean: &Tensor,
    target_mask: &Tensor,
) -> Result<AdapterLoss> {
    let fs = model.encode(noisy)?;
    let ft = model.encode(clean)?;
    let pred = model.decode_mask(&fs)?;
    adapter_objective(&pred, target_mask, &fs, &ft, model.config.lambda)
}

/// Loss of a single pair as a scalar.
pub fn adapter_loss(model: &AdapterModel, pair: &super::TrainingPair) -> Result<f64> {
    let noisy = model.to_input(&[&pair.noisy])?;
    let clean = model.to_input(&[&pair.clean])?;
    let mask = mask_tensor(&[&pair.target_mask])?;
    Ok(f64::from(to_scalar(&adapter_loss_tensor(model, &noisy, &clean, &mask)?.total)?))
}

fn mask_tensor(masks: &[&BinaryMask]) -> Result<Tensor> {
    let (h, w) = (masks[0].height(), masks[0].width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.values().iter().map(|&v| f32::from(v)));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), &Device::Cpu)?)
}

/// Per-step loss terms of adapter training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterLog {
    pub total: TrainLog,
    pub mask: Vec<f32>,
    pub feature: Vec<f32>,
}

/// Trains `E`/`D̂` to recover the clean mask from augmented frames.
pub fn train_adapter(
    dataset: &MaskedDataset,
    augment: &AugmentConfig,
    config: &AdapterConfig,
    seed: u64,
) -> Result<(AdapterModel, AdapterLog)> {
    if dataset.is_empty() {
        return Err(VaiError::EmptyStore);
    }
    config.validate()?;
    let (h, w, c) = dataset.store().frame_shape();
    let probe = Augmenter::new(augment.clone(), (h, w))?;
    let (ch, cw) = probe.crop_size(h, w)?;
    let augmenter = Augmenter::new(augment.clone(), (ch, cw))?;
    let model = AdapterModel::new(config.clone(), (ch, cw, c), seed)?;
    let frames: Vec<&Frame> = dataset.store().frames().collect();
    let masks = dataset.masks();
    let mut rng = stream(seed, "adapter-pairs");
    let mut opt = adam(model.params().vars(), config.learning_rate)?;
    let mut log = AdapterLog::default();
    for step in 0..config.steps {
        let ramp = ((step + 1) as f64 / config.warmup_steps.max(1) as f64).min(1.0);
        opt.set_learning_rate(config.learning_rate * ramp);
        let mut noisy = Vec::with_capacity(config.batch_size);
        let mut clean = Vec::with_capacity(config.batch_size);
        let mut target = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..frames.len());
            let pair = augmenter.make_training_pair(frames[i], &masks[i], &mut rng)?;
            noisy.push(pair.noisy);
            clean.push(pair.clean);
            target.push(pair.target_mask);
        }
        let noisy = model.to_input(&noisy.iter().collect::<Vec<_>>())?;
        let clean = model.to_input(&clean.iter().collect::<Vec<_>>())?;
        let target = mask_tensor(&target.iter().collect::<Vec<_>>())?;
        let loss = adapter_loss_tensor(&model, &noisy, &clean, &target)?;
        let value = optimize(&mut opt, &loss.total)?;
        if !value.is_finite() {
            return Err(VaiError::Divergence { step, loss: value });
        }
        if step % 100 == 0 {
            log::info!("adapter step {step}: loss {value:.4}");
        }
        log.total.losses.push(value);
        log.mask.push(to_scalar(&loss.mask)?);
        log.feature.push(to_scalar(&loss.feature)?);
    }
    Ok((model, log))
}
