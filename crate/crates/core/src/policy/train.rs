use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::sac::{ReplayBuffer, SacAgent, SacConfig, SacMetrics};
use super::transform::{
    Denoise, DenoiseConfig, FrameTransform, ObservationAdapter, ObservationPipeline, WeakAugment, WeakAugmentConfig,
};
use crate::envs::Environment;
use crate::error::{Result, VaiError};
use crate::rng::{derive_seed_n, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub sac: SacConfig,
    pub frame_stack: usize,
    /// Environment steps per agent decision; rewards are summed over them.
    pub action_repeat: usize,
    /// Training budget in environment steps.
    pub env_steps: usize,
    /// Uniform-random agent steps before learning starts.
    pub seed_steps: usize,
    pub replay_capacity: usize,
    pub weak_augment: WeakAugmentConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            sac: SacConfig::default(),
            frame_stack: 3,
            action_repeat: 4,
            env_steps: 30_000,
            seed_steps: 250,
            replay_capacity: 100_000,
            weak_augment: WeakAugmentConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.frame_stack == 0 || self.action_repeat == 0 || self.replay_capacity == 0 {
            return Err(VaiError::InvalidArgument(
                "frame_stack, action_repeat and replay_capacity must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn obs_shape(&self, frame_shape: (usize, usize, usize)) -> (usize, usize, usize) {
        let (h, w, c) = frame_shape;
        (c * self.frame_stack, h, w)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyLog {
    /// Cumulative environment reward of each finished training episode.
    pub episode_returns: Vec<f64>,
    /// `(agent step, metrics)` every 100 updates.
    pub metrics: Vec<(usize, SacMetrics)>,
}

/// Trains SAC on `raw → adapt → weak augment → stack` observations.
pub fn train_policy(
    env: &mut dyn Environment,
    adapter: ObservationAdapter,
    config: &PolicyConfig,
    seed: u64,
) -> Result<(SacAgent, PolicyLog)> {
    config.validate()?;
    let obs_shape = config.obs_shape(env.frame_shape());
    let act_dim = env.action_dim();
    let mut agent = SacAgent::new(config.sac.clone(), obs_shape, act_dim, seed)?;
    let mut replay = ReplayBuffer::new(config.replay_capacity, obs_shape, act_dim)?;
    let augment: Box<dyn FrameTransform> = Box::new(WeakAugment(config.weak_augment.clone()));
    let mut pipeline = ObservationPipeline::standard(None, Box::new(adapter), Some(augment), config.frame_stack)?;
    let mut act_rng = stream(seed, "policy-actions");
    let mut aug_rng = stream(seed, "policy-augment");
    let mut upd_rng = stream(seed, "policy-updates");
    let mut log = PolicyLog::default();

    let agent_steps = config.env_steps / config.action_repeat;
    let mut episode = 0u64;
    let mut obs = None;
    let mut ep_return = 0.0f64;
    let mut updates = 0usize;
    for step in 0..agent_steps {
        let current = match obs.take() {
            Some(o) => o,
            None => {
                let frame = env
                    .reset(derive_seed_n(seed, "train-episode", episode))
                    .map_err(|e| env_error(episode, 0, e))?;
                ep_return = 0.0;
                pipeline.reset(&frame, &mut aug_rng)?
            }
        };
        let flat = current.to_chw();
        let action = if step < config.seed_steps {
            (0..act_dim).map(|_| act_rng.random_range(-1.0f32..=1.0)).collect()
        } else {
            agent.act(&flat, true, &mut act_rng)?
        };
        let mut reward = 0.0f32;
        let mut done = false;
        let mut last = None;
        for _ in 0..config.action_repeat {
            let t = env.step(&action).map_err(|e| env_error(episode, step, e))?;
            reward += t.reward;
            done = t.done;
            last = Some(t.frame);
            if done {
                break;
            }
        }
        ep_return += f64::from(reward);
        let next = pipeline.step(&last.expect("action_repeat >= 1"), &mut aug_rng)?;
        // episodes end on the time limit only, so every transition bootstraps
        replay.push(current.to_u8_chw(), action, reward, next.to_u8_chw(), false)?;
        if done {
            log.episode_returns.push(ep_return);
            log::info!("policy episode {episode}: return {ep_return:.2}");
            episode += 1;
        } else {
            obs = Some(next);
        }
        if step >= config.seed_steps {
            let batch = replay.sample(config.sac.batch_size, &mut upd_rng)?;
            let m = agent.update(&batch, &mut upd_rng).map_err(|e| match e {
                VaiError::InvalidArgument(msg) if msg.starts_with("non-finite") => VaiError::Divergence {
                    step,
                    loss: f32::NAN,
                },
                other => other,
            })?;
            if updates % 100 == 0 {
                log.metrics.push((step, m));
            }
            updates += 1;
        }
    }
    Ok((agent, log))
}

fn env_error(episode: u64, step: usize, source: VaiError) -> VaiError {
    VaiError::Environment {
        episode: episode as usize,
        step,
        source: Box::new(source),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub denoise: Option<DenoiseConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seeds: (0..10).collect(),
            denoise: None,
        }
    }
}

/// Returns of one evaluation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
    pub success_rate: Option<f64>,
}

impl SeedSummary {
    pub fn new(seed: u64, returns: Vec<f64>, successes: Option<Vec<bool>>) -> Self {
        let (mean, std) = mean_std(&returns);
        let success_rate = successes
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().filter(|&&b| b).count() as f64 / s.len() as f64);
        Self {
            seed,
            returns,
            mean,
            std,
            success_rate,
        }
    }
}

/// Per-seed summaries plus mean ± std of the per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_seed: Vec<SeedSummary>,
    pub mean: f64,
    pub std: f64,
    pub success_rate: Option<f64>,
    /// Training augmentations applied during evaluation; always 0.
    pub weak_augment_calls: usize,
}

impl EvaluationReport {
    pub fn from_seeds(per_seed: Vec<SeedSummary>) -> Self {
        let means: Vec<f64> = per_seed.iter().map(|s| s.mean).collect();
        let (mean, std) = mean_std(&means);
        let rates: Option<Vec<f64>> = per_seed.iter().map(|s| s.success_rate).collect();
        let success_rate = rates.filter(|r| !r.is_empty()).map(|r| mean_std(&r).0);
        Self {
            per_seed,
            mean,
            std,
            success_rate,
            weak_augment_calls: 0,
        }
    }

    /// Every episode return, seed-major.
    pub fn all_returns(&self) -> Vec<f64> {
        self.per_seed.iter().flat_map(|s| s.returns.iter().copied()).collect()
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Deterministic evaluation: mean actions, no weak augmentation.
/// An episode counts as a success if the environment reported success at any step.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    agent: &SacAgent,
    adapter: &ObservationAdapter,
    policy: &PolicyConfig,
    eval: &EvalConfig,
) -> Result<EvaluationReport> {
    let mut per_seed = Vec::with_capacity(eval.seeds.len());
    let mut augment_calls = 0;
    for &seed in &eval.seeds {
        let denoise: Option<Box<dyn FrameTransform>> = match eval.denoise {
            Some(cfg) => Some(Box::new(Denoise::new(cfg)?)),
            None => None,
        };
        let mut pipeline = ObservationPipeline::standard(denoise, Box::new(adapter.clone()), None, policy.frame_stack)?;
        let mut rng = stream(seed, "evaluation");
        let mut returns = Vec::with_capacity(eval.episodes);
        let mut successes = Vec::with_capacity(eval.episodes);
        let mut has_success = false;
        for e in 0..eval.episodes {
            let frame = env
                .reset(derive_seed_n(seed, "eval-episode", e as u64))
                .map_err(|err| env_error(e as u64, 0, err))?;
            let mut obs = pipeline.reset(&frame, &mut rng)?;
            let mut total = 0.0f64;
            let mut success = false;
            let mut step = 0;
            'episode: loop {
                let action = agent.act(&obs.to_chw(), false, &mut rng)?;
                let mut last = None;
                for _ in 0..policy.action_repeat {
                    let t = env.step(&action).map_err(|err| env_error(e as u64, step, err))?;
                    step += 1;
                    total += f64::from(t.reward);
                    if let Some(s) = t.success {
                        has_success = true;
                        success |= s;
                    }
                    if t.done {
                        break 'episode;
                    }
                    last = Some(t.frame);
                }
                obs = pipeline.step(&last.expect("action_repeat >= 1"), &mut rng)?;
            }
            returns.push(total);
            successes.push(success);
        }
        augment_calls += pipeline.augment_calls();
        per_seed.push(SeedSummary::new(seed, returns, has_success.then_some(successes)));
    }
    let mut report = EvaluationReport::from_seeds(per_seed);
    report.weak_augment_calls = augment_calls;
    Ok(report)
}

/// Episode returns of a uniform-random policy, for reference.
pub fn random_policy_returns(env: &mut dyn Environment, episodes: usize, action_repeat: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream(seed, "random-policy");
    let act_dim = env.action_dim();
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        env.reset(derive_seed_n(seed, "random-episode", e as u64))
            .map_err(|err| env_error(e as u64, 0, err))?;
        let mut total = 0.0;
        let mut step = 0;
        'episode: loop {
            let action: Vec<f32> = (0..act_dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
            for _ in 0..action_repeat.max(1) {
                let t = env.step(&action).map_err(|err| env_error(e as u64, step, err))?;
                step += 1;
                total += f64::from(t.reward);
                if t.done {
                    break 'episode;
                }
            }
        }
        out.push(total);
    }
    Ok(out)
}
