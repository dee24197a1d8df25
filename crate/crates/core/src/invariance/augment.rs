use std::ops::RangeInclusive;
use std::path::PathBuf;

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::texture::{image_files, load_image_texture};
use crate::error::{Result, VaiError};
use crate::frame::{clamp01, BinaryMask, Frame};
use crate::rng::Rng;

/// Crop, foreground (`T_f`) and background (`T_b`) augmentation settings.
///
/// At most one background fill is drawn per sample, weighted by the three
/// `*_prob` fill fields (which must sum to at most 1; the rest of the mass
/// leaves the background empty); every other background op fires
/// independently with its own probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Output size `[h, w]`; `None` keeps the frame size.
    pub crop_size: Option<[usize; 2]>,
    /// Replicate padding on each side before the random crop.
    pub crop_pad: usize,
    pub color_jitter_prob: f64,
    /// Per-channel additive shift range `±color_jitter`.
    pub color_jitter: f32,
    pub brightness_prob: f64,
    pub brightness: [f32; 2],
    pub train_background_prob: f64,
    pub random_color_prob: f64,
    pub perturbed_fg_mean_prob: f64,
    pub fg_mean_perturbation: f32,
    pub gaussian_noise_prob: f64,
    pub noise_std: f32,
    pub multicolorout_prob: f64,
    pub boxes: [usize; 2],
    /// Box side range as a fraction of the frame side.
    pub box_size: [f32; 2],
    pub darkened_copy_prob: f64,
    pub darken: f32,
    pub overlay_prob: f64,
    pub overlay_alpha: f32,
    pub overlay_dir: Option<PathBuf>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_size: None,
            crop_pad: 8,
            color_jitter_prob: 0.5,
            color_jitter: 0.1,
            brightness_prob: 0.5,
            brightness: [0.8, 1.2],
            train_background_prob: 1.0 / 3.0,
            random_color_prob: 1.0 / 3.0,
            perturbed_fg_mean_prob: 1.0 / 3.0,
            fg_mean_perturbation: 0.05,
            gaussian_noise_prob: 0.5,
            noise_std: 0.05,
            multicolorout_prob: 0.5,
            boxes: [1, 4],
            box_size: [0.1, 0.4],
            darkened_copy_prob: 0.5,
            darken: 0.3,
            overlay_prob: 0.0,
            overlay_alpha: 0.5,
            overlay_dir: None,
        }
    }
}

impl AugmentConfig {
    /// Crop only; the background is always the training background and the
    /// foreground is untouched, so the noisy input is the raw cropped frame.
    pub fn train_background_only() -> Self {
        Self {
            color_jitter_prob: 0.0,
            brightness_prob: 0.0,
            train_background_prob: 1.0,
            random_color_prob: 0.0,
            perturbed_fg_mean_prob: 0.0,
            gaussian_noise_prob: 0.0,
            multicolorout_prob: 0.0,
            darkened_copy_prob: 0.0,
            overlay_prob: 0.0,
            ..Self::default()
        }
    }

    /// Every transform disabled and no background fill, full-frame crop
    /// without jitter: the noisy input is the masked frame itself.
    pub fn identity() -> Self {
        Self {
            crop_pad: 0,
            train_background_prob: 0.0,
            ..Self::train_background_only()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("color_jitter_prob", self.color_jitter_prob),
            ("brightness_prob", self.brightness_prob),
            ("train_background_prob", self.train_background_prob),
            ("random_color_prob", self.random_color_prob),
            ("perturbed_fg_mean_prob", self.perturbed_fg_mean_prob),
            ("gaussian_noise_prob", self.gaussian_noise_prob),
            ("multicolorout_prob", self.multicolorout_prob),
            ("darkened_copy_prob", self.darkened_copy_prob),
            ("overlay_prob", self.overlay_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(VaiError::InvalidArgument(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let fill = self.train_background_prob + self.random_color_prob + self.perturbed_fg_mean_prob;
        if fill > 1.0 + 1e-6 {
            return Err(VaiError::InvalidArgument(format!(
                "background fill probabilities must sum to at most 1, got {fill}"
            )));
        }
        if self.boxes[0] > self.boxes[1]
            || !(0.0..=1.0).contains(&self.box_size[0])
            || !(0.0..=1.0).contains(&self.box_size[1])
            || self.box_size[0] > self.box_size[1]
        {
            return Err(VaiError::InvalidArgument("invalid box count or size range".into()));
        }
        if self.brightness[0] > self.brightness[1] || self.brightness[0] < 0.0 {
            return Err(VaiError::InvalidArgument("invalid brightness range".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.color_jitter >= 0.0) || !(self.fg_mean_perturbation >= 0.0) {
            return Err(VaiError::InvalidArgument("noise and jitter magnitudes must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.darken) || !(0.0..=1.0).contains(&self.overlay_alpha) {
            return Err(VaiError::InvalidArgument("darken and overlay_alpha must lie in [0, 1]".into()));
        }
        if self.overlay_prob > 0.0 && self.overlay_dir.is_none() {
            return Err(VaiError::InvalidArgument("overlay_prob > 0 needs overlay_dir".into()));
        }
        Ok(())
    }
}

/// Which background fill was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundFill {
    TrainBackground,
    RandomColor,
    PerturbedForegroundMean,
    /// Background left at zero.
    Empty,
}

/// Record of the background ops applied to one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedOps {
    pub fill: BackgroundFill,
    pub gaussian_noise: bool,
    pub multicolorout: bool,
    pub darkened_copy: bool,
    pub overlay: bool,
}

/// `(I_s, I_t, D(I_t))` plus the crop offset into the padded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Frame,
    pub clean: Frame,
    pub target_mask: BinaryMask,
    pub crop_offset: (usize, usize),
}

/// A validated [`AugmentConfig`] with its overlay images loaded.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
    overlays: Vec<Frame>,
}

impl Augmenter {
    /// `output_hw` is the crop size overlay images are resized to.
    pub fn new(config: AugmentConfig, output_hw: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let mut overlays = Vec::new();
        if let Some(dir) = &config.overlay_dir {
            for path in image_files(dir)? {
                overlays.push(load_image_texture(&path, output_hw.0, output_hw.1)?);
            }
        }
        Ok(Self { config, overlays })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    /// Crop size for frames of `(h, w)`; errors when it exceeds the frame.
    pub fn crop_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ch, cw) = self.config.crop_size.map_or((h, w), |[a, b]| (a, b));
        if ch > h || cw > w || ch == 0 || cw == 0 {
            return Err(VaiError::InvalidArgument(format!(
                "crop {ch}x{cw} does not fit in frame {h}x{w}"
            )));
        }
        Ok((ch, cw))
    }

    /// Strong background augmentation `T_b`. Pixels where `fg_region` is set
    /// are returned bit-identical.
    pub fn augment_background(
        &self,
        background: &Frame,
        fg_region: &BinaryMask,
        train_bg: &Frame,
        rng: &mut Rng,
    ) -> Result<Frame> {
        Ok(self.augment_background_traced(background, fg_region, train_bg, rng)?.0)
    }

    pub fn augment_background_traced(
        &self,
        background: &Frame,
        fg_region: &BinaryMask,
        train_bg: &Frame,
        rng: &mut Rng,
    ) -> Result<(Frame, AppliedOps)> {
        let (h, w, c) = background.shape();
        train_bg.ensure_shape((h, w, c))?;
        if (fg_region.height(), fg_region.width()) != (h, w) {
            return Err(VaiError::shape(
                format!("{h}x{w}"),
                format!("{}x{}", fg_region.height(), fg_region.width()),
            ));
        }
        let cfg = &self.config;
        let mut px = background.pixels().clone();

        let u: f64 = rng.random();
        let fill = if u < cfg.train_background_prob {
            BackgroundFill::TrainBackground
        } else if u < cfg.train_background_prob + cfg.random_color_prob {
            BackgroundFill::RandomColor
        } else if u < cfg.train_background_prob + cfg.random_color_prob + cfg.perturbed_fg_mean_prob {
            BackgroundFill::PerturbedForegroundMean
        } else {
            BackgroundFill::Empty
        };
        match fill {
            BackgroundFill::TrainBackground => px.assign(train_bg.pixels()),
            BackgroundFill::Empty => px.fill(0.0),
            BackgroundFill::RandomColor => {
                let color: Vec<f32> = (0..c).map(|_| rng.random()).collect();
                fill_color(&mut px, &color);
            }
            BackgroundFill::PerturbedForegroundMean => {
                let p = cfg.fg_mean_perturbation;
                let color: Vec<f32> = masked_mean(train_bg, fg_region)
                    .into_iter()
                    .map(|m| {
                        let d = if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 };
                        clamp01(m + d)
                    })
                    .collect();
                fill_color(&mut px, &color);
            }
        }

        let gaussian_noise = rng.random_bool(cfg.gaussian_noise_prob);
        if gaussian_noise && cfg.noise_std > 0.0 {
            let normal = Normal::new(0.0f32, cfg.noise_std).map_err(|e| VaiError::InvalidArgument(e.to_string()))?;
            px.mapv_inplace(|v| clamp01(v + normal.sample(rng)));
        }

        let multicolorout = rng.random_bool(cfg.multicolorout_prob);
        if multicolorout {
            let (lo, hi) = box_pixels(cfg.box_size, h.min(w));
            paint_boxes(&mut px, rng, cfg.boxes[0]..=cfg.boxes[1], lo..=hi);
        }

        let darkened_copy = rng.random_bool(cfg.darkened_copy_prob);
        if darkened_copy {
            let dy = rng.random_range(-(h as i64) / 2..=(h as i64) / 2);
            let dx = rng.random_range(-(w as i64) / 2..=(w as i64) / 2);
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                        continue;
                    }
                    let (sy, sx) = (sy as usize, sx as usize);
                    if fg_region.get(sy, sx) {
                        for k in 0..c {
                            px[[y, x, k]] = cfg.darken * train_bg.get(sy, sx, k);
                        }
                    }
                }
            }
        }

        let overlay = rng.random_bool(cfg.overlay_prob);
        if overlay {
            if self.overlays.is_empty() {
                return Err(VaiError::EmptyOverlayDir);
            }
            let img = &self.overlays[rng.random_range(0..self.overlays.len())];
            img.ensure_shape((h, w, c))?;
            let a = cfg.overlay_alpha;
            ndarray::Zip::from(&mut px)
                .and(img.pixels())
                .for_each(|p, &o| *p = clamp01((1.0 - a) * *p + a * o));
        }

        // the foreground region is never touched
        for y in 0..h {
            for x in 0..w {
                if fg_region.get(y, x) {
                    for k in 0..c {
                        px[[y, x, k]] = background.get(y, x, k);
                    }
                }
            }
        }
        let ops = AppliedOps {
            fill,
            gaussian_noise,
            multicolorout,
            darkened_copy,
            overlay,
        };
        Ok((Frame::from_clamped(px), ops))
    }

    /// Foreground augmentation `T_f`, applied to pixels inside `mask` only.
    pub fn augment_foreground(&self, frame: &Frame, mask: &BinaryMask, rng: &mut Rng) -> Frame {
        let cfg = &self.config;
        let c = frame.channels();
        let shift: Vec<f32> = if rng.random_bool(cfg.color_jitter_prob) && cfg.color_jitter > 0.0 {
            (0..c).map(|_| rng.random_range(-cfg.color_jitter..=cfg.color_jitter)).collect()
        } else {
            vec![0.0; c]
        };
        let scale = if rng.random_bool(cfg.brightness_prob) && cfg.brightness[0] < cfg.brightness[1] {
            rng.random_range(cfg.brightness[0]..=cfg.brightness[1])
        } else {
            1.0
        };
        let mut out = frame.clone();
        out.map_inplace(|y, x, k, v| if mask.get(y, x) { (v + shift[k]) * scale } else { v });
        out
    }

    /// Builds `(I_s, I_t)` from a frame and its mask with one synchronized crop.
    pub fn make_training_pair(&self, frame: &Frame, mask: &BinaryMask, rng: &mut Rng) -> Result<TrainingPair> {
        let (h, w, _) = frame.shape();
        if (mask.height(), mask.width()) != (h, w) {
            return Err(VaiError::shape(
                format!("{h}x{w}"),
                format!("{}x{}", mask.height(), mask.width()),
            ));
        }
        let (ch, cw) = self.crop_size(h, w)?;
        let pad = self.config.crop_pad;
        let oy = rng.random_range(0..=h + 2 * pad - ch);
        let ox = rng.random_range(0..=w + 2 * pad - cw);
        let (o, d) = crop_pair(frame, mask, (oy, ox), (ch, cw), pad);

        let clean = d.apply(&o)?;
        let background = d.inverted().apply(&o)?;
        let noisy_fg = self.augment_foreground(&clean, &d, rng);
        let noisy_bg = self.augment_background(&background, &d, &o, rng)?;
        let mut noisy = noisy_fg;
        noisy.map_inplace(|y, x, k, v| v + noisy_bg.get(y, x, k));
        Ok(TrainingPair {
            noisy,
            clean,
            target_mask: d,
            crop_offset: (oy, ox),
        })
    }
}

/// Crops `(frame, mask)` at the same offset into their padded versions.
/// Frames are padded by edge replication, masks by zeros.
pub fn crop_pair(
    frame: &Frame,
    mask: &BinaryMask,
    offset: (usize, usize),
    size: (usize, usize),
    pad: usize,
) -> (Frame, BinaryMask) {
    let (h, w, c) = frame.shape();
    let src = |i: usize, n: usize| -> (usize, bool) {
        let p = i as i64 - pad as i64;
        (p.clamp(0, n as i64 - 1) as usize, p >= 0 && p < n as i64)
    };
    let mut px = Array3::zeros((size.0, size.1, c));
    let mut m = Array2::zeros(size);
    for y in 0..size.0 {
        let (sy, iny) = src(y + offset.0, h);
        for x in 0..size.1 {
            let (sx, inx) = src(x + offset.1, w);
            for k in 0..c {
                px[[y, x, k]] = frame.get(sy, sx, k);
            }
            m[[y, x]] = u8::from(iny && inx && mask.get(sy, sx));
        }
    }
    (
        Frame::from_clamped(px),
        BinaryMask::new(m).expect("binary by construction"),
    )
}

/// Pastes `n_boxes` axis-aligned boxes of uniform random colour. Box sides are
/// drawn from `size` (clamped to the frame) and positions so that boxes fit.
pub fn multicolorout(frame: &Frame, rng: &mut Rng, n_boxes: RangeInclusive<usize>, size: RangeInclusive<usize>) -> Frame {
    let mut px = frame.pixels().clone();
    paint_boxes(&mut px, rng, n_boxes, size);
    Frame::from_clamped(px)
}

fn paint_boxes(px: &mut Array3<f32>, rng: &mut Rng, n_boxes: RangeInclusive<usize>, size: RangeInclusive<usize>) {
    let (h, w, c) = px.dim();
    let n = rng.random_range(n_boxes);
    for _ in 0..n {
        let bh = rng.random_range(size.clone()).clamp(1, h);
        let bw = rng.random_range(size.clone()).clamp(1, w);
        let y0 = rng.random_range(0..=h - bh);
        let x0 = rng.random_range(0..=w - bw);
        let color: Vec<f32> = (0..c).map(|_| rng.random()).collect();
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                for k in 0..c {
                    px[[y, x, k]] = color[k];
                }
            }
        }
    }
}

fn box_pixels(frac: [f32; 2], side: usize) -> (usize, usize) {
    let lo = ((frac[0] * side as f32).round() as usize).max(1);
    let hi = ((frac[1] * side as f32).round() as usize).max(lo);
    (lo, hi)
}

fn fill_color(px: &mut Array3<f32>, color: &[f32]) {
    for ((_, _, k), v) in px.indexed_iter_mut() {
        *v = color[k];
    }
}

/// Mean colour over the masked pixels, or over the whole frame if the mask is empty.
fn masked_mean(frame: &Frame, mask: &BinaryMask) -> Vec<f32> {
    if mask.count() == 0 {
        return frame.mean_color();
    }
    let c = frame.channels();
    let mut sum = vec![0.0f64; c];
    for ((y, x, k), &v) in frame.pixels().indexed_iter() {
        if mask.get(y, x) {
            sum[k] += f64::from(v);
        }
    }
    sum.into_iter().map(|s| (s / mask.count() as f64) as f32).collect()
}

/// Free-function form of [`Augmenter::make_training_pair`].
pub fn make_training_pair(frame: &Frame, mask: &BinaryMask, cfg: &AugmentConfig, rng: &mut Rng) -> Result<TrainingPair> {
    Augmenter::new(cfg.clone(), (frame.height(), frame.width()))?.make_training_pair(frame, mask, rng)
}

/// Free-function form of [`Augmenter::augment_background`].
pub fn augment_background(
    background: &Frame,
    fg_region: &BinaryMask,
    train_bg: &Frame,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Frame> {
    Augmenter::new(cfg.clone(), (background.height(), background.width()))?
        .augment_background(background, fg_region, train_bg, rng)
}
