use std::path::Path;

use candle_core::{Device, Module, Tensor, D};
use candle_nn::Conv2d;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{KeypointSet, FeatureMap, Heatmap, grid_coord};
use crate::error::{Result, VaiError};
use crate::frame::{fmt_shape, frames_to_tensor, Frame};
use crate::nn::{Checkpoint, ParamStore};
use crate::rng::{derive_seed, Rng};

pub const TRANSPORTER_KIND: &str = "transporter";

/// Hyperparameters of the keypoint/transport model and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransporterConfig {
    /// Number of keypoints `K`.
    pub keypoints: usize,
    /// Heatmap standard deviation, normalised coordinates.
    pub sigma: f32,
    pub feature_channels: usize,
    pub hidden_channels: usize,
    pub softargmax_temperature: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cross_episode_prob: f64,
}

impl Default for TransporterConfig {
    fn default() -> Self {
        Self {
            keypoints: 4,
            sigma: 0.1,
            feature_channels: 32,
            hidden_channels: 32,
            softargmax_temperature: 1.0,
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            cross_episode_prob: 0.5,
        }
    }
}

impl TransporterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keypoints == 0 {
            return Err(VaiError::EmptyKeypoints);
        }
        if !(self.sigma > 0.0) || !(self.softargmax_temperature > 0.0) {
            return Err(VaiError::InvalidArgument(
                "sigma and softargmax_temperature must be positive".into(),
            ));
        }
        if self.feature_channels == 0 || self.hidden_channels == 0 || self.batch_size == 0 {
            return Err(VaiError::InvalidArgument(
                "channel counts and batch_size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cross_episode_prob) {
            return Err(VaiError::InvalidArgument("cross_episode_prob outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredConfig {
    frame_shape: (usize, usize, usize),
    seed: u64,
    transporter: TransporterConfig,
}

/// Two-layer stride-2 encoder: `C×H×W → hidden×H/4×W/4`.
#[derive(Debug, Clone)]
struct Encoder {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl Encoder {
    fn new(ps: &mut ParamStore, name: &str, in_ch: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            c1: ps.conv2d(&format!("{name}.c1"), in_ch, hidden / 2, 3, 2, rng)?,
            c2: ps.conv2d(&format!("{name}.c2"), hidden / 2, hidden, 3, 2, rng)?,
            c3: ps.conv2d(&format!("{name}.c3"), hidden, hidden, 3, 1, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c1.forward(x)?.relu()?;
        let h = self.c2.forward(&h)?.relu()?;
        Ok(self.c3.forward(&h)?.relu()?)
    }
}

/// Keypoint detector Ψ, feature extractor Φ and the attention decoder.
#[derive(Debug, Clone)]
pub struct TransporterModel {
    config: TransporterConfig,
    frame_shape: (usize, usize, usize),
    seed: u64,
    params: ParamStore,
    keynet: Encoder,
    keynet_head: Conv2d,
    feature_net: Encoder,
    feature_head: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    dec3: Conv2d,
    grid_x: Tensor,
    grid_y: Tensor,
}

impl TransporterModel {
    /// Freshly initialised model for frames of `frame_shape` (`H`, `W` divisible by 4).
    pub fn new(config: TransporterConfig, frame_shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        let (h, w, c) = frame_shape;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(VaiError::InvalidArgument(format!(
                "frame height and width must be positive multiples of 4, got {}",
                fmt_shape(frame_shape)
            )));
        }
        if config.hidden_channels < 2 {
            return Err(VaiError::InvalidArgument("hidden_channels must be at least 2".into()));
        }
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "transporter-init"));
        let mut ps = ParamStore::new();
        let hid = config.hidden_channels;
        let keynet = Encoder::new(&mut ps, "keynet", c, hid, &mut rng)?;
        let keynet_head = ps.conv2d("keynet.head", hid, config.keypoints, 1, 1, &mut rng)?;
        let feature_net = Encoder::new(&mut ps, "features", c, hid, &mut rng)?;
        let feature_head = ps.conv2d("features.head", hid, config.feature_channels, 3, 1, &mut rng)?;
        let dec1 = ps.conv2d("decoder.c1", config.feature_channels, hid, 3, 1, &mut rng)?;
        let dec2 = ps.conv2d("decoder.c2", hid, hid / 2, 3, 1, &mut rng)?;
        let dec3 = ps.conv2d("decoder.c3", hid / 2, c, 3, 1, &mut rng)?;
        let (gh, gw) = (h / 4, w / 4);
        let dev = Device::Cpu;
        let grid_x = Tensor::from_vec((0..gw).map(|j| grid_coord(j, gw)).collect::<Vec<_>>(), (1, 1, 1, gw), &dev)?;
        let grid_y = Tensor::from_vec((0..gh).map(|i| grid_coord(i, gh)).collect::<Vec<_>>(), (1, 1, gh, 1), &dev)?;
        Ok(Self {
            config,
            frame_shape,
            seed,
            params: ps,
            keynet,
            keynet_head,
            feature_net,
            feature_head,
            dec1,
            dec2,
            dec3,
            grid_x,
            grid_y,
        })
    }

    pub fn config(&self) -> &TransporterConfig {
        &self.config
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frame_shape
    }

    /// Feature grid `(H', W')`.
    pub fn grid(&self) -> (usize, usize) {
        (self.frame_shape.0 / 4, self.frame_shape.1 / 4)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn check_frame(&self, frame: &Frame) -> Result<()> {
        frame.ensure_shape(self.frame_shape)
    }

    pub fn to_input(&self, frames: &[&Frame]) -> Result<Tensor> {
        for f in frames {
            self.check_frame(f)?;
        }
        frames_to_tensor(frames, &Device::Cpu)
    }

    /// Spatial soft-argmax keypoints, `B×K×2` with `(x, y)` in `[0,1]`.
    pub fn keypoints(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, _, _) = x.dims4()?;
        let logits = self.keynet_head.forward(&self.keynet.forward(x)?)?;
        let (gh, gw) = self.grid();
        let k = self.config.keypoints;
        let logits = (logits.reshape((b, k, gh * gw))? / f64::from(self.config.softargmax_temperature))?;
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?.reshape((b, k, gh, gw))?;
        let mx = probs.broadcast_mul(&self.grid_x)?.sum(D::Minus1)?.sum(D::Minus1)?;
        let my = probs.broadcast_mul(&self.grid_y)?.sum(D::Minus1)?.sum(D::Minus1)?;
        Ok(Tensor::stack(&[mx, my], 2)?)
    }

    /// Max-of-Gaussians heatmap `B×1×H'×W'` for keypoints `B×K×2`.
    pub fn heatmap(&self, keypoints: &Tensor) -> Result<Tensor> {
        let (b, k, _) = keypoints.dims3()?;
        let mx = keypoints.narrow(2, 0, 1)?.reshape((b, k, 1, 1))?;
        let my = keypoints.narrow(2, 1, 1)?.reshape((b, k, 1, 1))?;
        let dx = self.grid_x.broadcast_sub(&mx)?.sqr()?;
        let dy = self.grid_y.broadcast_sub(&my)?.sqr()?;
        let d2 = dx.broadcast_add(&dy)?;
        let s2 = 2.0 * f64::from(self.config.sigma).powi(2);
        let g = (d2 / -s2)?.exp()?;
        Ok(g.max_keepdim(1)?)
    }

    /// Φ: `B×F×H'×W'`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.feature_head.forward(&self.feature_net.forward(x)?)?)
    }

    /// Attention decoder: feature grid to an image in `[0,1]`.
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        let (h, w, _) = self.frame_shape;
        let x = self.dec1.forward(features)?.relu()?;
        let x = x.upsample_nearest2d(h / 2, w / 2)?;
        let x = self.dec2.forward(&x)?.relu()?;
        let x = x.upsample_nearest2d(h, w)?;
        Ok(candle_nn::ops::sigmoid(&self.dec3.forward(&x)?)?)
    }

    /// Transported feature for target reconstruction.
    pub fn transport(&self, source: &Tensor, target: &Tensor) -> Result<Tensor> {
        let heat_s = self.heatmap(&self.keypoints(source)?)?;
        let heat_t = self.heatmap(&self.keypoints(target)?)?;
        let feat_s = self.features(source)?;
        let feat_t = self.features(target)?;
        let keep = heat_s.affine(-1.0, 1.0)?.mul(&heat_t.affine(-1.0, 1.0)?)?;
        Ok((feat_s.broadcast_mul(&keep)? + feat_t.broadcast_mul(&heat_t)?)?)
    }

    pub fn reconstruct(&self, source: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.decode(&self.transport(source, target)?)
    }

    /// `G(Ψ(o)) ⊗ Φ(o)`: the attention-gated visual feature.
    pub fn gated_features(&self, x: &Tensor) -> Result<Tensor> {
        let heat = self.heatmap(&self.keypoints(x)?)?;
        Ok(self.features(x)?.broadcast_mul(&heat)?)
    }

    pub fn detect_keypoints(&self, frame: &Frame) -> Result<KeypointSet> {
        let kp = self.keypoints(&self.to_input(&[frame])?)?;
        let v: Vec<Vec<Vec<f32>>> = kp.to_vec3()?;
        KeypointSet::new(v[0].iter().map(|p| [p[0], p[1]]).collect())
    }

    /// Heatmap for a single frame, on the feature grid.
    pub fn frame_heatmap(&self, frame: &Frame) -> Result<Heatmap> {
        let heat = self.heatmap(&self.keypoints(&self.to_input(&[frame])?)?)?;
        let (gh, gw) = self.grid();
        let data: Vec<f32> = heat.flatten_all()?.to_vec1()?;
        Ok(Heatmap {
            values: ndarray::Array2::from_shape_vec((gh, gw), data)
                .map_err(|e| VaiError::InvalidArgument(e.to_string()))?,
            sigma: self.config.sigma,
        })
    }

    /// Φ for a single frame as an `H'×W'×F` array.
    pub fn frame_features(&self, frame: &Frame) -> Result<FeatureMap> {
        let f = self.features(&self.to_input(&[frame])?)?;
        let (_, c, gh, gw) = f.dims4()?;
        let data: Vec<f32> = f.flatten_all()?.to_vec1()?;
        Ok(FeatureMap {
            values: ndarray::Array3::from_shape_fn((gh, gw, c), |(y, x, k)| data[(k * gh + y) * gw + x]),
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(
            TRANSPORTER_KIND,
            &StoredConfig {
                frame_shape: self.frame_shape,
                seed: self.seed,
                transporter: self.config.clone(),
            },
            &self.params,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(TRANSPORTER_KIND, path)?;
        let stored: StoredConfig = ck.config(path)?;
        let model = Self::new(stored.transporter, stored.frame_shape, stored.seed)?;
        model
            .params
            .load_arrays(&ck.arrays)
            .map_err(|e| VaiError::format(path, e.to_string()))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoint::render_heatmap;
    use ndarray::Array3;
    use rand::Rng as _;

    fn small_config() -> TransporterConfig {
        TransporterConfig {
            keypoints: 3,
            feature_channels: 8,
            hidden_channels: 8,
            ..Default::default()
        }
    }

    fn random_frame(rng: &mut Rng, h: usize, w: usize) -> Frame {
        Frame::from_clamped(Array3::from_shape_fn((h, w, 3), |_| rng.random::<f32>()))
    }

    #[test]
    fn keypoints_in_range_and_deterministic() {
        let model = TransporterModel::new(small_config(), (16, 16, 3), 0).unwrap();
        let zero = Frame::zeros(16, 16, 3);
        let kp = model.detect_keypoints(&zero).unwrap();
        assert_eq!(kp.len(), 3);
        assert_eq!(kp, model.detect_keypoints(&zero).unwrap());
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..10 {
            let f = random_frame(&mut rng, 16, 16);
            for frame in [f.clone(), f.flipped_horizontal()] {
                let kp = model.detect_keypoints(&frame).unwrap();
                assert!(kp.locations().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let model = TransporterModel::new(small_config(), (16, 16, 3), 0).unwrap();
        let err = model.detect_keypoints(&Frame::zeros(8, 16, 3)).unwrap_err().to_string();
        assert!(err.contains("16x16x3") && err.contains("8x16x3"), "{err}");
        assert!(TransporterModel::new(small_config(), (10, 16, 3), 0).is_err());
    }

    #[test]
    fn tensor_heatmap_matches_reference() {
        let model = TransporterModel::new(small_config(), (24, 32, 3), 3).unwrap();
        let frame = random_frame(&mut Rng::seed_from_u64(2), 24, 32);
        let kp = model.detect_keypoints(&frame).unwrap();
        let reference = render_heatmap(&kp, model.grid(), model.config().sigma).unwrap();
        let got = model.frame_heatmap(&frame).unwrap();
        for (a, b) in got.values.iter().zip(reference.values.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn decoder_output_in_frame_shape() {
        let model = TransporterModel::new(small_config(), (16, 20, 3), 0).unwrap();
        let f = random_frame(&mut Rng::seed_from_u64(0), 16, 20);
        let x = model.to_input(&[&f, &f]).unwrap();
        let y = model.reconstruct(&x, &x).unwrap();
        assert_eq!(y.dims(), &[2, 3, 16, 20]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = TransporterModel::new(small_config(), (16, 16, 3), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        model.save(&p).unwrap();
        let back = TransporterModel::load(&p).unwrap();
        let f = random_frame(&mut Rng::seed_from_u64(4), 16, 16);
        assert_eq!(model.detect_keypoints(&f).unwrap(), back.detect_keypoints(&f).unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), back.checkpoint().unwrap().to_bytes());
    }
}
