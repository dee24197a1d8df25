use candle_core::{Device, Tensor};

use super::model::{TransporterConfig, TransporterModel};
use crate::data::{sample_frame_pair, EpisodeStore, FrameIndex};
use crate::error::{Result, VaiError};
use crate::nn::{adam, optimize};
use crate::rng::stream;

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f32>,
}

impl TrainLog {
    /// Trailing moving average with the given window.
    pub fn smoothed(&self, window: usize) -> Vec<f32> {
        let w = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut acc = 0.0f64;
        for (i, &l) in self.losses.iter().enumerate() {
            acc += f64::from(l);
            if i >= w {
                acc -= f64::from(self.losses[i - w]);
            }
            out.push((acc / (i + 1).min(w) as f64) as f32);
        }
        out
    }

    /// Mean of the first `window` losses.
    pub fn initial(&self, window: usize) -> f32 {
        mean(&self.losses[..window.min(self.losses.len())])
    }

    /// Mean of the last `window` losses.
    pub fn last(&self, window: usize) -> f32 {
        let n = self.losses.len();
        mean(&self.losses[n - window.min(n)..])
    }

    /// `last(window) / initial(window)`.
    pub fn ratio(&self, window: usize) -> f32 {
        self.last(window) / self.initial(window)
    }
}

fn mean(v: &[f32]) -> f32 {
    if v.is_empty() {
        return f32::NAN;
    }
    (v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64) as f32
}

/// Sum of squared differences per sample, averaged over the batch.
pub fn reconstruction_loss_tensor(target: &Tensor, reconstruction: &Tensor) -> Result<Tensor> {
    let b = target.dim(0)?;
    Ok((reconstruction.sub(target)?.sqr()?.sum_all()? / b as f64)?)
}

/// Channel-major copies of every frame, addressed by episode offset.
pub(crate) struct FrameCache {
    data: Vec<Vec<f32>>,
    offsets: Vec<usize>,
    shape: (usize, usize, usize),
}

impl FrameCache {
    pub(crate) fn new(store: &EpisodeStore) -> Self {
        let mut offsets = Vec::with_capacity(store.num_episodes());
        let mut acc = 0;
        for ep in store.episodes() {
            offsets.push(acc);
            acc += ep.len();
        }
        Self {
            data: store.frames().map(|f| f.to_chw()).collect(),
            offsets,
            shape: store.frame_shape(),
        }
    }

    fn flat(&self, idx: FrameIndex) -> usize {
        self.offsets[idx.episode] + idx.frame
    }

    pub(crate) fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w, c) = self.shape;
        let mut buf = Vec::with_capacity(indices.len() * h * w * c);
        for &i in indices {
            buf.extend_from_slice(&self.data[i]);
        }
        Ok(Tensor::from_vec(buf, (indices.len(), c, h, w), &Device::Cpu)?)
    }
}

/// Trains keypoints, features and decoder end-to-end on target-frame
/// reconstruction from (source, target) pairs drawn from `store`.
pub fn train_transporter(
    store: &EpisodeStore,
    config: &TransporterConfig,
    seed: u64,
) -> Result<(TransporterModel, TrainLog)> {
    if store.is_empty() {
        return Err(VaiError::EmptyStore);
    }
    config.validate()?;
    let model = TransporterModel::new(config.clone(), store.frame_shape(), seed)?;
    // a single-episode store cannot provide cross-episode pairs
    let cross = if store.num_episodes() < 2 { 0.0 } else { config.cross_episode_prob };
    let cache = FrameCache::new(store);
    let mut rng = stream(seed, "transporter-pairs");
    let mut opt = adam(model.params().vars(), config.learning_rate)?;
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let mut src = Vec::with_capacity(config.batch_size);
        let mut tgt = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let pair = sample_frame_pair(store, cross, &mut rng)?;
            src.push(cache.flat(pair.source_index));
            tgt.push(cache.flat(pair.target_index));
        }
        let source = cache.batch(&src)?;
        let target = cache.batch(&tgt)?;
        let recon = model.reconstruct(&source, &target)?;
        let loss = reconstruction_loss_tensor(&target, &recon)?;
        let value = optimize(&mut opt, &loss)?;
        if !value.is_finite() {
            return Err(VaiError::Divergence { step, loss: value });
        }
        if step % 100 == 0 {
            log::info!("transporter step {step}: loss {value:.4}");
        }
        log.losses.push(value);
    }
    Ok((model, log))
}
