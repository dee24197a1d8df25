//! Counterfactual foreground extraction.
//!
//! The attention decoder of a trained transporter is run twice on the same
//! weights: once on the keypoint-gated feature of a frame and once on an
//! all-zero feature. Their difference removes what the decoder paints from
//! its biases alone; thresholding it gives the binary foreground mask.

use std::path::Path;

use candle_core::Tensor;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{self, EpisodeStore};
use crate::error::{Result, VaiError};
use crate::frame::{tensor_to_frames, BinaryMask, Frame};
use crate::keypoint::TransporterModel;

const BATCH: usize = 32;

/// Per-pixel difference between the real-feature and null-feature decodes,
/// averaged over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CdeMap {
    pub values: Array2<f32>,
}

/// How the mask threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    /// Fraction of calibration values that fall below the threshold.
    pub quantile: f64,
    /// Absolute threshold; overrides `quantile` when set.
    pub epsilon: Option<f32>,
    /// Evenly spaced frames used for quantile calibration.
    pub calibration_frames: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            quantile: 0.9,
            epsilon: None,
            calibration_frames: 256,
        }
    }
}

/// `decode(G(Ψ(o)) ⊗ Φ(o))`: the foreground-gated reconstruction.
pub fn masked_decode(model: &TransporterModel, frame: &Frame) -> Result<Frame> {
    let x = model.to_input(&[frame])?;
    let out = model.decode(&model.gated_features(&x)?)?;
    Ok(tensor_to_frames(&out)?.remove(0))
}

/// Decoder output for the null (all-zero) feature; depends only on the weights.
pub fn bias_image(model: &TransporterModel) -> Result<Frame> {
    Ok(tensor_to_frames(&null_decode(model, 1)?)?.remove(0))
}

fn null_decode(model: &TransporterModel, batch: usize) -> Result<Tensor> {
    let (gh, gw) = model.grid();
    let zeros = Tensor::zeros(
        (batch, model.config().feature_channels, gh, gw),
        candle_core::DType::F32,
        &candle_core::Device::Cpu,
    )?;
    model.decode(&zeros)
}

/// CDE from explicit counterfactual features `a_t` and `a_null`, both `B×F×H'×W'`.
/// Decoder weights, biases included, are shared by both branches.
pub fn cde_from_features(model: &TransporterModel, a_t: &Tensor, a_null: &Tensor) -> Result<Vec<CdeMap>> {
    let y_t = model.decode(a_t)?;
    let y_0 = model.decode(a_null)?;
    maps_from_tensor(&y_t.sub(&y_0)?.mean(1)?)
}

fn maps_from_tensor(t: &Tensor) -> Result<Vec<CdeMap>> {
    let (b, h, w) = t.dims3()?;
    let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| {
            Array2::from_shape_vec((h, w), flat[i * h * w..(i + 1) * h * w].to_vec())
                .map(|values| CdeMap { values })
                .map_err(|e| VaiError::InvalidArgument(e.to_string()))
        })
        .collect()
}

pub fn compute_cde(model: &TransporterModel, frame: &Frame) -> Result<CdeMap> {
    Ok(compute_cde_batch(model, &[frame])?.remove(0))
}

pub fn compute_cde_batch(model: &TransporterModel, frames: &[&Frame]) -> Result<Vec<CdeMap>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(BATCH) {
        let x = model.to_input(chunk)?;
        let y_t = model.decode(&model.gated_features(&x)?)?;
        let y_0 = null_decode(model, 1)?;
        out.extend(maps_from_tensor(&y_t.broadcast_sub(&y_0)?.mean(1)?)?);
    }
    Ok(out)
}

/// Channel-mean intensity of [`masked_decode`], the non-counterfactual baseline.
pub fn decode_intensity_batch(model: &TransporterModel, frames: &[&Frame]) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(BATCH) {
        let x = model.to_input(chunk)?;
        let y = model.decode(&model.gated_features(&x)?)?.mean(1)?;
        out.extend(maps_from_tensor(&y)?.into_iter().map(|m| m.values));
    }
    Ok(out)
}

/// 1 where `value >= epsilon`, else 0.
pub fn threshold_values(values: &Array2<f32>, epsilon: f32) -> BinaryMask {
    let (h, w) = values.dim();
    BinaryMask::from_fn(h, w, |y, x| values[[y, x]] >= epsilon).with_threshold(epsilon)
}

pub fn threshold_mask(cde: &CdeMap, epsilon: f32) -> BinaryMask {
    threshold_values(&cde.values, epsilon)
}

/// Smallest calibration value with at least `quantile` of all values strictly below or equal to its rank.
///
/// Returns the sorted value at rank `floor(quantile · n)` (clamped to `n - 1`).
pub fn quantile_threshold<'a>(maps: impl IntoIterator<Item = &'a Array2<f32>>, quantile: f64) -> Result<f32> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(VaiError::InvalidArgument(format!("quantile {quantile} outside [0, 1]")));
    }
    let mut all: Vec<f32> = maps.into_iter().flat_map(|m| m.iter().copied()).collect();
    if all.is_empty() {
        return Err(VaiError::InvalidArgument("no values to calibrate on".into()));
    }
    all.sort_by(f32::total_cmp);
    let rank = ((quantile * all.len() as f64).floor() as usize).min(all.len() - 1);
    Ok(all[rank])
}

/// Evenly spaced subset of `n` items, at most `count` long.
fn calibration_indices(n: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n.max(1));
    (0..count).map(|i| i * n / count).collect()
}

/// Chooses ε for a set of CDE maps according to `config`.
pub fn select_epsilon(maps: &[CdeMap], config: &AttentionConfig) -> Result<f32> {
    if let Some(eps) = config.epsilon {
        return Ok(eps);
    }
    let idx = calibration_indices(maps.len(), config.calibration_frames);
    quantile_threshold(idx.iter().map(|&i| &maps[i].values), config.quantile)
}

/// Every frame of a store paired with its foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDataset {
    store: EpisodeStore,
    masks: Vec<BinaryMask>,
    epsilon: f32,
}

impl MaskedDataset {
    /// `masks` are in store order.
    pub fn new(store: EpisodeStore, masks: Vec<BinaryMask>, epsilon: f32) -> Result<Self> {
        if masks.len() != store.len() {
            return Err(VaiError::shape(store.len(), masks.len()));
        }
        let (h, w, _) = store.frame_shape();
        if let Some((i, _)) = masks.iter().enumerate().find(|(_, m)| (m.height(), m.width()) != (h, w)) {
            return Err(VaiError::Frame {
                index: i,
                source: Box::new(VaiError::shape(format!("{h}x{w}"), format!("{}x{}", masks[i].height(), masks[i].width()))),
            });
        }
        Ok(Self { store, masks, epsilon })
    }

    pub fn store(&self) -> &EpisodeStore {
        &self.store
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// `(frame, mask)` pairs in store order.
    pub fn pairs(&self) -> impl Iterator<Item = (&Frame, &BinaryMask)> + '_ {
        self.store.frames().zip(self.masks.iter())
    }

    /// Store layout plus one single-channel `mask_NNNNN.png` per frame.
    pub fn save(&self, dir: &Path) -> Result<()> {
        data::write_frames(&self.store, dir)?;
        let mut k = 0;
        for (e, ep) in self.store.episodes().iter().enumerate() {
            for i in 0..ep.len() {
                data::write_mask_png(&data::mask_path(dir, e, i), &self.masks[k])?;
                k += 1;
            }
        }
        let mut m = data::store_manifest(&self.store);
        m.push("masks", "true");
        m.push("mask.epsilon", self.epsilon);
        data::write_manifest(dir, &m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = data::read_manifest(dir)?;
        let manifest = dir.join(data::MANIFEST_FILE);
        if m.get("masks") != Some("true") {
            return Err(VaiError::format(&manifest, "dataset has no masks"));
        }
        let epsilon = m
            .get("mask.epsilon")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| VaiError::format(&manifest, "missing or bad `mask.epsilon`"))?;
        let store = data::load_store(dir)?;
        let (h, w, _) = store.frame_shape();
        let mut masks = Vec::with_capacity(store.len());
        for (e, ep) in store.episodes().iter().enumerate() {
            for i in 0..ep.len() {
                masks.push(data::read_mask_png(&data::mask_path(dir, e, i), h, w)?);
            }
        }
        Self::new(store, masks, epsilon)
    }
}

/// Computes a CDE mask for every frame in `store`.
pub fn extract_masked_dataset(
    model: &TransporterModel,
    store: &EpisodeStore,
    config: &AttentionConfig,
) -> Result<MaskedDataset> {
    if store.is_empty() {
        return Err(VaiError::EmptyStore);
    }
    let frames: Vec<&Frame> = store.frames().collect();
    let mut maps = Vec::with_capacity(frames.len());
    for (c, chunk) in frames.chunks(BATCH).enumerate() {
        let batch = compute_cde_batch(model, chunk).map_err(|e| {
            // pin the failure on the first frame that does not fit the model
            let index = chunk
                .iter()
                .position(|f| model.check_frame(f).is_err())
                .unwrap_or(0)
                + c * BATCH;
            VaiError::Frame {
                index,
                source: Box::new(e),
            }
        })?;
        maps.extend(batch);
    }
    let epsilon = select_epsilon(&maps, config)?;
    let masks = maps.iter().map(|m| threshold_mask(m, epsilon)).collect();
    MaskedDataset::new(store.clone(), masks, epsilon)
}
