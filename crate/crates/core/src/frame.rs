//! Observation frames and binary foreground masks.

use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3, Axis};

use crate::error::{Result, VaiError};

/// An H×W×C image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(VaiError::InvalidArgument(format!(
                "frame dimensions must be positive, got {h}x{w}x{c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VaiError::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    /// Builds a frame, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(mut pixels: Array3<f32>) -> Self {
        pixels.mapv_inplace(clamp01);
        Self { pixels }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            pixels: Array3::zeros((height, width, channels)),
        }
    }

    pub fn filled(height: usize, width: usize, color: &[f32]) -> Self {
        let c = color.len();
        Self::from_clamped(Array3::from_shape_fn((height, width, c), |(_, _, k)| color[k]))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[[y, x, c]]
    }

    /// Mutates pixels in place; results are clamped back into `[0, 1]`.
    pub fn map_inplace(&mut self, mut f: impl FnMut(usize, usize, usize, f32) -> f32) {
        for ((y, x, c), v) in self.pixels.indexed_iter_mut() {
            *v = clamp01(f(y, x, c, *v));
        }
    }

    pub fn ensure_shape(&self, shape: (usize, usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(VaiError::shape(fmt_shape(shape), fmt_shape(self.shape())));
        }
        Ok(())
    }

    /// Mean color over all pixels, one value per channel.
    pub fn mean_color(&self) -> Vec<f32> {
        let n = (self.height() * self.width()) as f32;
        (0..self.channels())
            .map(|c| self.pixels.index_axis(Axis(2), c).sum() / n)
            .collect()
    }

    /// Quantises to 8-bit, row-major interleaved.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, data: &[u8]) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(VaiError::shape(
                height * width * channels,
                data.len(),
            ));
        }
        let pixels = Array3::from_shape_vec(
            (height, width, channels),
            data.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
        .map_err(|e| VaiError::InvalidArgument(e.to_string()))?;
        Ok(Self { pixels })
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Self {
        Self {
            pixels: self.pixels.mapv(|v| f32::from(quantize(v)) / 255.0),
        }
    }

    /// Channel-major copy, `C×H×W`.
    pub fn to_chw(&self) -> Vec<f32> {
        let (h, w, c) = self.shape();
        let mut out = Vec::with_capacity(h * w * c);
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.push(self.pixels[[y, x, k]]);
                }
            }
        }
        out
    }

    pub fn from_chw(channels: usize, height: usize, width: usize, data: &[f32]) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(VaiError::shape(channels * height * width, data.len()));
        }
        let pixels = Array3::from_shape_fn((height, width, channels), |(y, x, k)| {
            clamp01(data[(k * height + y) * width + x])
        });
        Ok(Self { pixels })
    }

    /// `1×C×H×W` tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        frames_to_tensor(&[self], device)
    }

    /// Elementwise product with a per-pixel gate in `[0, 1]`, broadcast over channels.
    pub fn gated(&self, gate: &Array2<f32>) -> Result<Self> {
        if gate.dim() != (self.height(), self.width()) {
            return Err(VaiError::shape(
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", gate.dim().0, gate.dim().1),
            ));
        }
        let pixels = Array3::from_shape_fn(self.shape(), |(y, x, c)| {
            clamp01(self.pixels[[y, x, c]] * gate[[y, x]])
        });
        Ok(Self { pixels })
    }

    /// Mean absolute difference over all values.
    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f32> {
        other.ensure_shape(self.shape())?;
        let n = self.pixels.len() as f32;
        Ok(self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / n)
    }

    /// Horizontally mirrored copy.
    pub fn flipped_horizontal(&self) -> Self {
        let w = self.width();
        Self {
            pixels: Array3::from_shape_fn(self.shape(), |(y, x, c)| self.pixels[[y, w - 1 - x, c]]),
        }
    }
}

/// Stacks frames into a `B×C×H×W` tensor. All frames must share a shape.
pub fn frames_to_tensor(frames: &[&Frame], device: &Device) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| VaiError::InvalidArgument("empty frame batch".into()))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(frames.len() * h * w * c);
    for f in frames {
        f.ensure_shape((h, w, c))?;
        data.extend(f.to_chw());
    }
    Ok(Tensor::from_vec(data, (frames.len(), c, h, w), device)?)
}

/// Splits a `B×C×H×W` tensor back into frames (values clamped into `[0, 1]`).
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Frame>> {
    let (b, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let n = c * h * w;
    (0..b)
        .map(|i| Frame::from_chw(c, h, w, &flat[i * n..(i + 1) * n]))
        .collect()
}

/// An H×W foreground indicator with every value exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    values: Array2<u8>,
    threshold: Option<f32>,
}

impl BinaryMask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(VaiError::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            values,
            threshold: None,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            values: Array2::from_shape_fn((height, width), |(y, x)| u8::from(f(y, x))),
            threshold: None,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    pub fn with_threshold(mut self, threshold: f32) -> Self {
        self.threshold = Some(threshold);
        self
    }

    /// The threshold this mask was cut at, if it came from thresholding.
    pub fn threshold_used(&self) -> Option<f32> {
        self.threshold
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[[y, x]] == 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_f32(&self) -> Array2<f32> {
        self.values.mapv(f32::from)
    }

    pub fn inverted(&self) -> Self {
        Self {
            values: self.values.mapv(|v| 1 - v),
            threshold: None,
        }
    }

    /// `frame ⊗ mask`.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        frame.gated(&self.to_f32())
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(VaiError::shape(
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", other.height(), other.width()),
            ));
        }
        Ok(())
    }

    /// Intersection over union. Two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f32> {
        self.check_same(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.values.iter().zip(other.values.iter()) {
            inter += usize::from(a & b);
            union += usize::from(a | b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f32 / union as f32
        })
    }

    /// Fraction of `truth`'s background pixels marked as foreground here.
    pub fn false_positive_rate(&self, truth: &BinaryMask) -> Result<f32> {
        self.check_same(truth)?;
        let (mut fp, mut bg) = (0usize, 0usize);
        for (&p, &t) in self.values.iter().zip(truth.values.iter()) {
            if t == 0 {
                bg += 1;
                fp += usize::from(p);
            }
        }
        Ok(if bg == 0 { 0.0 } else { fp as f32 / bg as f32 })
    }

    /// True if every foreground pixel here is also foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .all(|(&a, &b)| a <= b))
    }
}

pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn quantize(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

pub(crate) fn fmt_shape((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}
