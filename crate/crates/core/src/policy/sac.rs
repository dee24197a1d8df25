use std::path::Path;

use candle_core::{Device, Module, Tensor, D};
use candle_nn::{AdamW, Conv2d, Linear};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaiError};
use crate::nn::{adam, optimize, soft_update, to_scalar, Checkpoint, ParamStore};
use crate::rng::{derive_seed, Rng};

pub const SAC_KIND: &str = "sac";
const LOG_STD_MIN: f64 = -10.0;
const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub learning_rate: f64,
    pub discount: f64,
    /// Soft target-update rate.
    pub tau: f64,
    pub batch_size: usize,
    pub init_temperature: f64,
    /// Average-pooling factor applied to observations before the encoder.
    pub pool: usize,
    pub conv_channels: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            discount: 0.99,
            tau: 0.01,
            batch_size: 128,
            init_temperature: 0.1,
            pool: 2,
            conv_channels: 32,
            feature_dim: 50,
            hidden_dim: 256,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.tau) {
            return Err(VaiError::InvalidArgument("discount and tau must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.pool == 0 || self.conv_channels == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(VaiError::InvalidArgument("SAC sizes must be positive".into()));
        }
        if !(self.init_temperature > 0.0) {
            return Err(VaiError::InvalidArgument("init_temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Conv trunk → linear → layer norm → tanh.
#[derive(Debug, Clone)]
struct PixelEncoder {
    pool: usize,
    c1: Conv2d,
    c2: Conv2d,
    fc: Linear,
    ln_gain: Tensor,
    ln_bias: Tensor,
}

impl PixelEncoder {
    fn new(ps: &mut ParamStore, name: &str, obs: (usize, usize, usize), cfg: &SacConfig, rng: &mut Rng) -> Result<Self> {
        let (c, h, w) = obs;
        let (ph, pw) = (h / cfg.pool, w / cfg.pool);
        let (oh, ow) = (ph.div_ceil(2), pw.div_ceil(2));
        let ch = cfg.conv_channels;
        Ok(Self {
            pool: cfg.pool,
            c1: ps.conv2d(&format!("{name}.c1"), c, ch, 3, 2, rng)?,
            c2: ps.conv2d(&format!("{name}.c2"), ch, ch, 3, 1, rng)?,
            fc: ps.linear(&format!("{name}.fc"), ch * oh * ow, cfg.feature_dim, rng)?,
            ln_gain: ps.constant(&format!("{name}.ln.gain"), &[cfg.feature_dim], 1.0)?.as_tensor().clone(),
            ln_bias: ps.constant(&format!("{name}.ln.bias"), &[cfg.feature_dim], 0.0)?.as_tensor().clone(),
        })
    }

    fn forward(&self, obs: &Tensor) -> Result<Tensor> {
        let x = if self.pool > 1 { obs.avg_pool2d(self.pool)? } else { obs.clone() };
        let x = self.c1.forward(&x)?.relu()?;
        let x = self.c2.forward(&x)?.relu()?;
        let x = self.fc.forward(&x.flatten_from(1)?)?;
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.ln_gain)?.broadcast_add(&self.ln_bias)?.tanh()?)
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn new(ps: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, s)| ps.linear(&format!("{name}.l{i}"), s[0], s[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct Critic {
    encoder: PixelEncoder,
    q1: Mlp,
    q2: Mlp,
}

impl Critic {
    fn new(ps: &mut ParamStore, name: &str, obs: (usize, usize, usize), act: usize, cfg: &SacConfig, rng: &mut Rng) -> Result<Self> {
        let sizes = [cfg.feature_dim + act, cfg.hidden_dim, cfg.hidden_dim, 1];
        Ok(Self {
            encoder: PixelEncoder::new(ps, &format!("{name}.encoder"), obs, cfg, rng)?,
            q1: Mlp::new(ps, &format!("{name}.q1"), &sizes, rng)?,
            q2: Mlp::new(ps, &format!("{name}.q2"), &sizes, rng)?,
        })
    }

    fn q_from_features(&self, feat: &Tensor, action: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = Tensor::cat(&[feat, action], 1)?;
        Ok((self.q1.forward(&x)?, self.q2.forward(&x)?))
    }
}

/// Sampled tanh-Gaussian actions with their log-probabilities.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub action: Tensor,
    pub log_prob: Tensor,
    pub mean_action: Tensor,
}

/// One transition batch; observations are `B×k·C×H×W` in `[0,1]`.
#[derive(Debug, Clone)]
pub struct SacBatch {
    pub obs: Tensor,
    pub action: Tensor,
    pub reward: Tensor,
    pub next_obs: Tensor,
    /// 1 where the episode terminated (no bootstrap), else 0.
    pub done: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacMetrics {
    pub critic_loss: f32,
    pub actor_loss: f32,
    pub temperature_loss: f32,
    pub temperature: f32,
    pub entropy: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredConfig {
    obs_shape: (usize, usize, usize),
    action_dim: usize,
    seed: u64,
    sac: SacConfig,
}

/// Soft actor-critic with a shared pixel encoder. The actor reads detached
/// critic-encoder features; target critics track the critics by EMA.
pub struct SacAgent {
    config: SacConfig,
    obs_shape: (usize, usize, usize),
    action_dim: usize,
    seed: u64,
    params: ParamStore,
    critic: Critic,
    critic_target: Critic,
    actor: Mlp,
    log_alpha: Tensor,
    critic_opt: AdamW,
    actor_opt: AdamW,
    alpha_opt: AdamW,
    target_entropy: f64,
}

impl SacAgent {
    /// `obs_shape` is `(k·C, H, W)`.
    pub fn new(config: SacConfig, obs_shape: (usize, usize, usize), action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, h, w) = obs_shape;
        if h % config.pool != 0 || w % config.pool != 0 {
            return Err(VaiError::InvalidArgument(format!(
                "observation {h}x{w} not divisible by pool {}",
                config.pool
            )));
        }
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "sac-init"));
        let mut ps = ParamStore::new();
        let critic = Critic::new(&mut ps, "critic", obs_shape, action_dim, &config, &mut rng)?;
        let critic_target = Critic::new(&mut ps, "critic_target", obs_shape, action_dim, &config, &mut rng)?;
        let actor = Mlp::new(
            &mut ps,
            "actor",
            &[config.feature_dim, config.hidden_dim, config.hidden_dim, 2 * action_dim],
            &mut rng,
        )?;
        let log_alpha = ps
            .constant("log_alpha", &[1], config.init_temperature.ln() as f32)?
            .as_tensor()
            .clone();
        let critic_opt = adam(ps.vars_with_prefix("critic."), config.learning_rate)?;
        let actor_opt = adam(ps.vars_with_prefix("actor."), config.learning_rate)?;
        let alpha_opt = adam(ps.vars_with_prefix("log_alpha"), config.learning_rate)?;
        let agent = Self {
            target_entropy: -(action_dim as f64),
            config,
            obs_shape,
            action_dim,
            seed,
            params: ps,
            critic,
            critic_target,
            actor,
            log_alpha,
            critic_opt,
            actor_opt,
            alpha_opt,
        };
        soft_update(&agent.target_vars(), &agent.online_critic_vars(), 1.0)?;
        Ok(agent)
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_shape(&self) -> (usize, usize, usize) {
        self.obs_shape
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn temperature(&self) -> Result<f32> {
        Ok(to_scalar(&self.log_alpha.exp()?.squeeze(0)?)?)
    }

    fn online_critic_vars(&self) -> Vec<candle_core::Var> {
        self.params.vars_with_prefix("critic.")
    }

    fn target_vars(&self) -> Vec<candle_core::Var> {
        self.params.vars_with_prefix("critic_target.")
    }

    /// Gaussian draws for the reparameterised actor, `B×A`.
    pub fn noise(&self, batch: usize, rng: &mut Rng) -> Result<Tensor> {
        let data: Vec<f32> = (0..batch * self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Tensor::from_vec(data, (batch, self.action_dim), &Device::Cpu)?)
    }

    fn actor_from_features(&self, feat: &Tensor, noise: &Tensor) -> Result<ActionSample> {
        let out = self.actor.forward(feat)?;
        let a = self.action_dim;
        let mu = out.narrow(1, 0, a)?;
        let log_std = out.narrow(1, a, a)?.tanh()?;
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let log_std = log_std.affine(half, LOG_STD_MIN + half)?;
        let pre = mu.add(&log_std.exp()?.mul(noise)?)?;
        let action = pre.tanh()?;
        let gauss = noise
            .sqr()?
            .affine(-0.5, -0.5 * (2.0 * std::f64::consts::PI).ln())?
            .sub(&log_std)?;
        let squash = (action.sqr()?.affine(-1.0, 1.0 + 1e-6)?).log()?;
        let log_prob = gauss.sub(&squash)?.sum_keepdim(1)?;
        Ok(ActionSample {
            action,
            log_prob,
            mean_action: mu.tanh()?,
        })
    }

    /// Samples actions for a batch of observations.
    pub fn sample(&self, obs: &Tensor, noise: &Tensor) -> Result<ActionSample> {
        let feat = self.critic.encoder.forward(obs)?.detach();
        self.actor_from_features(&feat, noise)
    }

    /// Exploration action for a single `k·C×H×W` observation.
    pub fn act(&self, obs: &[f32], explore: bool, rng: &mut Rng) -> Result<Vec<f32>> {
        let (c, h, w) = self.obs_shape;
        let t = Tensor::from_slice(obs, (1, c, h, w), &Device::Cpu)?;
        let noise = if explore { self.noise(1, rng)? } else { Tensor::zeros((1, self.action_dim), candle_core::DType::F32, &Device::Cpu)? };
        let s = self.sample(&t, &noise)?;
        let a = if explore { s.action } else { s.mean_action };
        Ok(a.squeeze(0)?.to_vec1()?)
    }

    /// Soft Bellman target `r + γ(1−done)(min Q̄(s′,a′) − α log π(a′|s′))`.
    pub fn critic_target(&self, batch: &SacBatch, noise: &Tensor) -> Result<Tensor> {
        let next = self.sample(&batch.next_obs, noise)?;
        let feat_t = self.critic_target.encoder.forward(&batch.next_obs)?;
        let (q1, q2) = self.critic_target.q_from_features(&feat_t, &next.action)?;
        let alpha = self.log_alpha.exp()?;
        let v = q1.minimum(&q2)?.sub(&next.log_prob.broadcast_mul(&alpha)?)?;
        let not_done = batch.done.affine(-1.0, 1.0)?;
        Ok(batch.reward.add(&(v.mul(&not_done)? * self.config.discount)?)?.detach())
    }

    /// One critic, actor and temperature step, then a soft target update.
    pub fn update(&mut self, batch: &SacBatch, rng: &mut Rng) -> Result<SacMetrics> {
        let b = batch.obs.dim(0)?;
        let target = self.critic_target(batch, &self.noise(b, rng)?)?;
        let feat = self.critic.encoder.forward(&batch.obs)?;
        let (q1, q2) = self.critic.q_from_features(&feat, &batch.action)?;
        let critic_loss = (q1.sub(&target)?.sqr()?.mean_all()? + q2.sub(&target)?.sqr()?.mean_all()?)?;
        let critic_loss = optimize(&mut self.critic_opt, &critic_loss)?;

        // the actor reuses this batch's encoder features from before the critic step
        let feat = feat.detach();
        let s = self.actor_from_features(&feat, &self.noise(b, rng)?)?;
        let (q1, q2) = self.critic.q_from_features(&feat, &s.action)?;
        let alpha = self.log_alpha.exp()?.detach();
        let actor_loss = s.log_prob.broadcast_mul(&alpha)?.sub(&q1.minimum(&q2)?)?.mean_all()?;
        let actor_loss = optimize(&mut self.actor_opt, &actor_loss)?;

        let log_prob = s.log_prob.detach();
        let (alpha_loss, entropy) = self.temperature_loss(&log_prob)?;
        let alpha_loss = optimize(&mut self.alpha_opt, &alpha_loss)?;

        soft_update(&self.target_vars(), &self.online_critic_vars(), self.config.tau)?;
        let m = SacMetrics {
            critic_loss,
            actor_loss,
            temperature_loss: alpha_loss,
            temperature: self.temperature()?,
            entropy,
        };
        if !(m.critic_loss.is_finite() && m.actor_loss.is_finite() && m.temperature_loss.is_finite()) {
            return Err(VaiError::InvalidArgument(format!("non-finite SAC losses {m:?}")));
        }
        Ok(m)
    }

    /// `−log α · mean(log π + H̄)`; returns the loss and the batch entropy estimate.
    pub fn temperature_loss(&self, log_prob: &Tensor) -> Result<(Tensor, f32)> {
        let gap = (log_prob + self.target_entropy)?.mean_all()?.detach();
        let loss = self.log_alpha.squeeze(0)?.mul(&gap)?.neg()?;
        let entropy = -to_scalar(&log_prob.mean_all()?)?;
        Ok((loss, entropy))
    }

    /// One temperature-only step on precomputed log-probabilities.
    pub fn step_temperature(&mut self, log_prob: &Tensor) -> Result<f32> {
        let (loss, _) = self.temperature_loss(log_prob)?;
        optimize(&mut self.alpha_opt, &loss)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(
            SAC_KIND,
            &StoredConfig {
                obs_shape: self.obs_shape,
                action_dim: self.action_dim,
                seed: self.seed,
                sac: self.config.clone(),
            },
            &self.params,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(SAC_KIND, path)?;
        let s: StoredConfig = ck.config(path)?;
        let agent = Self::new(s.sac, s.obs_shape, s.action_dim, s.seed)?;
        agent
            .params
            .load_arrays(&ck.arrays)
            .map_err(|e| VaiError::format(path, e.to_string()))?;
        Ok(agent)
    }
}

/// Fixed-capacity ring buffer of byte-quantised stacked observations.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_shape: (usize, usize, usize),
    action_dim: usize,
    obs: Vec<Vec<u8>>,
    next_obs: Vec<Vec<u8>>,
    actions: Vec<Vec<f32>>,
    rewards: Vec<f32>,
    dones: Vec<f32>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_shape: (usize, usize, usize), action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(VaiError::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_shape,
            action_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<u8>, action: Vec<f32>, reward: f32, next_obs: Vec<u8>, done: bool) -> Result<()> {
        let n = self.obs_shape.0 * self.obs_shape.1 * self.obs_shape.2;
        if obs.len() != n || next_obs.len() != n {
            return Err(VaiError::shape(n, obs.len().max(next_obs.len())));
        }
        if action.len() != self.action_dim {
            return Err(VaiError::shape(self.action_dim, action.len()));
        }
        let d = f32::from(u8::from(done));
        if self.obs.len() < self.capacity {
            self.obs.push(obs);
            self.next_obs.push(next_obs);
            self.actions.push(action);
            self.rewards.push(reward);
            self.dones.push(d);
        } else {
            let i = self.cursor;
            self.obs[i] = obs;
            self.next_obs[i] = next_obs;
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.dones[i] = d;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<SacBatch> {
        if self.is_empty() {
            return Err(VaiError::InvalidArgument("sampling from an empty replay buffer".into()));
        }
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Result<SacBatch> {
        let (c, h, w) = self.obs_shape;
        let b = idx.len();
        let to_f = |src: &Vec<Vec<u8>>| -> Result<Tensor> {
            let mut v = Vec::with_capacity(b * c * h * w);
            for &i in idx {
                v.extend(src[i].iter().map(|&x| f32::from(x) / 255.0));
            }
            Ok(Tensor::from_vec(v, (b, c, h, w), &Device::Cpu)?)
        };
        let dev = Device::Cpu;
        Ok(SacBatch {
            obs: to_f(&self.obs)?,
            next_obs: to_f(&self.next_obs)?,
            action: Tensor::from_vec(
                idx.iter().flat_map(|&i| self.actions[i].iter().copied()).collect::<Vec<_>>(),
                (b, self.action_dim),
                &dev,
            )?,
            reward: Tensor::from_vec(idx.iter().map(|&i| self.rewards[i]).collect::<Vec<_>>(), (b, 1), &dev)?,
            done: Tensor::from_vec(idx.iter().map(|&i| self.dones[i]).collect::<Vec<_>>(), (b, 1), &dev)?,
        })
    }
}
