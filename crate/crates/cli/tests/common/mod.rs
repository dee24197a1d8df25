#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// A pipeline small enough to run every stage in a few seconds.
pub const TINY_CONFIG: &str = "\
seed = 7
dataset.count = 40
environment.height = 16
environment.width = 16
environment.episode_length = 12
transporter.keypoints = 2
transporter.hidden_channels = 4
transporter.feature_channels = 4
transporter.steps = 3
transporter.batch_size = 2
attention.calibration_frames = 16
augmentation.crop_pad = 2
adapter.hidden_channels = 4
adapter.feature_channels = 4
adapter.steps = 3
adapter.batch_size = 2
policy.env_steps = 48
policy.seed_steps = 4
policy.replay_capacity = 64
policy.sac.batch_size = 4
policy.sac.pool = 1
policy.sac.conv_channels = 4
policy.sac.feature_dim = 8
policy.sac.hidden_dim = 16
evaluation.seeds = 2
evaluation.episodes = 2
evaluation.textures = [\"grid\", \"marble\"]
visualize.count = 3
";

pub const STAGES: &[&str] = &[
    "collect",
    "train-keypoints",
    "extract-masks",
    "train-adapter",
    "train-policy",
    "evaluate",
    "visualize",
];

pub fn vai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vai"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vai")
}

/// Writes the tiny config with `output_dir` pointing at `out`.
pub fn write_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    let text = format!("{TINY_CONFIG}output_dir = {:?}\n", out.display().to_string());
    std::fs::write(&path, text).unwrap();
    path
}

pub fn run_all(config: &Path) {
    for stage in STAGES {
        let out = vai(&[stage, "--config", config.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{stage} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
