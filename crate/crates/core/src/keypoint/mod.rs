//! Unsupervised keypoints learned by transporting features between two
//! frames and reconstructing the target frame.

mod model;
mod train;

pub use model::{TransporterConfig, TransporterModel, TRANSPORTER_KIND};
pub use train::{reconstruction_loss_tensor, train_transporter, TrainLog};

use ndarray::{Array2, Array3};

use crate::error::{Result, VaiError};
use crate::frame::{fmt_shape, Frame};

/// `K` keypoints as `(x, y)` in normalised image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    locations: Vec<[f32; 2]>,
}

impl KeypointSet {
    pub fn new(locations: Vec<[f32; 2]>) -> Result<Self> {
        if let Some(p) = locations
            .iter()
            .find(|p| !p.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            return Err(VaiError::InvalidArgument(format!(
                "keypoint {p:?} outside [0,1]²"
            )));
        }
        Ok(Self { locations })
    }

    pub fn locations(&self) -> &[[f32; 2]] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Foreground heatmap on the `H'×W'` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array2<f32>,
    pub sigma: f32,
}

/// `H'×W'×F` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f32>,
}

/// Normalised coordinate of grid cell `i` out of `n` (cell centres).
pub fn grid_coord(i: usize, n: usize) -> f32 {
    (i as f32 + 0.5) / n as f32
}

/// `max_k exp(-‖p - μ_k‖² / 2σ²)` at an arbitrary point `p = (x, y)`.
pub fn heatmap_value(keypoints: &KeypointSet, point: [f32; 2], sigma: f32) -> f32 {
    keypoints
        .locations
        .iter()
        .map(|mu| {
            let d2 = (point[0] - mu[0]).powi(2) + (point[1] - mu[1]).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .fold(0.0, f32::max)
}

/// Renders the max-of-Gaussians heatmap on a `(rows, cols)` grid of cell centres.
pub fn render_heatmap(keypoints: &KeypointSet, grid: (usize, usize), sigma: f32) -> Result<Heatmap> {
    if keypoints.is_empty() {
        return Err(VaiError::EmptyKeypoints);
    }
    if !(sigma > 0.0) {
        return Err(VaiError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let (rows, cols) = grid;
    let values = Array2::from_shape_fn((rows, cols), |(i, j)| {
        heatmap_value(keypoints, [grid_coord(j, cols), grid_coord(i, rows)], sigma)
    });
    Ok(Heatmap { values, sigma })
}

/// `feat_s ⊗ (1 - heat_s)(1 - heat_t) + feat_t ⊗ heat_t`, per location and channel.
pub fn transport_features(
    feat_s: &FeatureMap,
    feat_t: &FeatureMap,
    heat_s: &Heatmap,
    heat_t: &Heatmap,
) -> Result<FeatureMap> {
    let (h, w, c) = feat_s.values.dim();
    if feat_t.values.dim() != (h, w, c) {
        return Err(VaiError::shape(fmt_shape((h, w, c)), fmt_shape(feat_t.values.dim())));
    }
    for heat in [heat_s, heat_t] {
        if heat.values.dim() != (h, w) {
            return Err(VaiError::shape(
                format!("{h}x{w}"),
                format!("{}x{}", heat.values.dim().0, heat.values.dim().1),
            ));
        }
    }
    let values = Array3::from_shape_fn((h, w, c), |(y, x, k)| {
        let gs = heat_s.values[[y, x]];
        let gt = heat_t.values[[y, x]];
        feat_s.values[[y, x, k]] * (1.0 - gs) * (1.0 - gt) + feat_t.values[[y, x, k]] * gt
    });
    Ok(FeatureMap { values })
}

/// `‖target - reconstruction‖²₂`, summed over every pixel and channel.
pub fn reconstruction_loss(target: &Frame, reconstruction: &Frame) -> Result<f64> {
    reconstruction.ensure_shape(target.shape())?;
    Ok(target
        .pixels()
        .iter()
        .zip(reconstruction.pixels().iter())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum())
}
