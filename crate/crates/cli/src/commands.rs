//! The seven pipeline commands. Each reads upstream artifacts from the
//! output directory, writes its own, and leaves a `<command>.run.log`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vai_core::attention::{compute_cde_batch, extract_masked_dataset, select_epsilon, threshold_mask, MaskedDataset};
use vai_core::data::{collect_random_transitions, load_store, save_store, MANIFEST_FILE};
use vai_core::envs::texture::load_image_texture;
use vai_core::envs::{SpriteWorld, SpriteWorldEnv, Texture};
use vai_core::invariance::{adapt_observation, train_adapter, AdapterModel};
use vai_core::keypoint::{train_transporter, TransporterModel};
use vai_core::policy::{evaluate_policy, train_policy, EvaluationReport, ObservationAdapter, SacAgent};
use vai_core::Frame;

use crate::config::PipelineConfig;
use crate::error::{CliError, StageExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Collect,
    TrainKeypoints,
    ExtractMasks,
    TrainAdapter,
    TrainPolicy,
    Evaluate,
    Visualize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Collect => "collect",
            Command::TrainKeypoints => "train-keypoints",
            Command::ExtractMasks => "extract-masks",
            Command::TrainAdapter => "train-adapter",
            Command::TrainPolicy => "train-policy",
            Command::Evaluate => "evaluate",
            Command::Visualize => "visualize",
        }
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn transporter(&self) -> PathBuf {
        self.root.join("transporter.ckpt")
    }

    pub fn masks(&self) -> PathBuf {
        self.root.join("masks")
    }

    pub fn adapter(&self) -> PathBuf {
        self.root.join("adapter.ckpt")
    }

    pub fn agent(&self) -> PathBuf {
        self.root.join("agent.ckpt")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }

    pub fn visualize(&self) -> PathBuf {
        self.root.join("visualize")
    }

    pub fn metrics(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}_metrics.csv"))
    }

    pub fn run_log(&self, command: Command) -> PathBuf {
        self.root.join(format!("{}.run.log", command.name()))
    }
}

/// Runs one command and writes its run log.
pub fn run(command: Command, config: &PipelineConfig) -> Result<(), CliError> {
    let layout = Layout::new(&config.output_dir);
    fs::create_dir_all(&layout.root).map_err(|e| CliError::io(&layout.root, e))?;
    let start = Instant::now();
    let inputs = match command {
        Command::Collect => collect(config, &layout)?,
        Command::TrainKeypoints => train_keypoints(config, &layout)?,
        Command::ExtractMasks => extract_masks(config, &layout)?,
        Command::TrainAdapter => cmd_train_adapter(config, &layout)?,
        Command::TrainPolicy => cmd_train_policy(config, &layout)?,
        Command::Evaluate => evaluate(config, &layout)?,
        Command::Visualize => visualize(config, &layout)?,
    };
    write_run_log(&layout.run_log(command), command, config, &inputs, start.elapsed().as_secs_f64())
}

fn write_run_log(
    path: &Path,
    command: Command,
    config: &PipelineConfig,
    inputs: &[PathBuf],
    seconds: f64,
) -> Result<(), CliError> {
    let mut text = format!("command = {:?}\nwall_time_seconds = {seconds:.3}\n", command.name());
    for input in inputs {
        writeln!(text, "input {} = {}", input.display(), content_hash(input)?).unwrap();
    }
    text.push_str("\n# resolved config\n");
    text.push_str(&config.to_lines());
    write_file(path, text.as_bytes())
}

/// SHA-256 of a file, or of a directory's sorted `(relative path, file hash)` listing.
pub fn content_hash(path: &Path) -> Result<String, CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        return Ok(hex::encode(Sha256::digest(&bytes)));
    }
    let mut files = Vec::new();
    list_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let file_hash = content_hash(&path.join(&rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(file_hash.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("listed under root").to_path_buf());
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn require(path: PathBuf, what: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, what })
    }
}

fn require_dir(dir: PathBuf, what: &'static str) -> Result<PathBuf, CliError> {
    require(dir.join(MANIFEST_FILE), what)?;
    Ok(dir)
}

/// Replaces a directory artifact so stale files from a larger earlier run cannot survive.
fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn make_env(config: &PipelineConfig, texture: &str) -> Result<SpriteWorldEnv, CliError> {
    let texture = Texture::parse(texture).map_err(|e| CliError::Config(e.to_string()))?;
    let world = SpriteWorld::with_texture(config.environment.clone(), texture).stage("environment")?;
    Ok(SpriteWorldEnv::new(world))
}

fn collect(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let mut env = make_env(config, &config.dataset.texture)?;
    let store = collect_random_transitions(&mut env, config.dataset.count, config.seed).stage("collect")?;
    fresh_dir(&layout.dataset())?;
    save_store(&store, &layout.dataset()).stage("collect")?;
    log::info!("collected {} frames in {} episodes", store.len(), store.num_episodes());
    Ok(Vec::new())
}

fn train_keypoints(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let dataset = require_dir(layout.dataset(), "dataset (run `collect`)")?;
    let store = load_store(&dataset).stage("train-keypoints")?;
    let (model, log) = train_transporter(&store, &config.transporter, config.seed).stage("train-keypoints")?;
    model.save(&layout.transporter()).stage("train-keypoints")?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        writeln!(csv, "{i},{l}").unwrap();
    }
    write_file(&layout.metrics("transporter"), csv.as_bytes())?;
    Ok(vec![dataset])
}

fn extract_masks(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = require(layout.transporter(), "transporter checkpoint (run `train-keypoints`)")?;
    let dataset = require_dir(layout.dataset(), "dataset (run `collect`)")?;
    let model = TransporterModel::load(&ckpt).stage("extract-masks")?;
    let store = load_store(&dataset).stage("extract-masks")?;
    let masked = extract_masked_dataset(&model, &store, &config.attention).stage("extract-masks")?;
    fresh_dir(&layout.masks())?;
    masked.save(&layout.masks()).stage("extract-masks")?;
    log::info!("extracted {} masks at epsilon {}", masked.len(), masked.epsilon());
    Ok(vec![ckpt, dataset])
}

fn cmd_train_adapter(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let masks = require_dir(layout.masks(), "masked dataset (run `extract-masks`)")?;
    let dataset = MaskedDataset::load(&masks).stage("train-adapter")?;
    let (model, log) =
        train_adapter(&dataset, &config.augmentation, &config.adapter, config.seed).stage("train-adapter")?;
    model.save(&layout.adapter()).stage("train-adapter")?;
    let mut csv = String::from("step,loss,mask_loss,feature_loss\n");
    for (i, ((t, m), f)) in log.total.losses.iter().zip(&log.mask).zip(&log.feature).enumerate() {
        writeln!(csv, "{i},{t},{m},{f}").unwrap();
    }
    write_file(&layout.metrics("adapter"), csv.as_bytes())?;
    Ok(vec![masks])
}

fn load_adapter(config: &PipelineConfig, layout: &Layout, inputs: &mut Vec<PathBuf>) -> Result<ObservationAdapter, CliError> {
    if !config.use_adapter {
        return Ok(ObservationAdapter::Identity);
    }
    let path = require(layout.adapter(), "adapter checkpoint (run `train-adapter`)")?;
    let model = AdapterModel::load(&path).stage("adapter")?;
    inputs.push(path);
    Ok(ObservationAdapter::Learned(model))
}

fn cmd_train_policy(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let mut inputs = Vec::new();
    let adapter = load_adapter(config, layout, &mut inputs)?;
    let mut env = make_env(config, &config.dataset.texture)?;
    let (agent, log) = train_policy(&mut env, adapter, &config.policy, config.seed).stage("train-policy")?;
    agent.save(&layout.agent()).stage("train-policy")?;
    let mut csv = String::from("episode,return\n");
    for (i, r) in log.episode_returns.iter().enumerate() {
        writeln!(csv, "{i},{r}").unwrap();
    }
    write_file(&layout.root.join("policy_returns.csv"), csv.as_bytes())?;
    let mut csv = String::from("step,critic_loss,actor_loss,temperature_loss,temperature,entropy\n");
    for (s, m) in &log.metrics {
        writeln!(
            csv,
            "{s},{},{},{},{},{}",
            m.critic_loss, m.actor_loss, m.temperature_loss, m.temperature, m.entropy
        )
        .unwrap();
    }
    write_file(&layout.metrics("policy"), csv.as_bytes())?;
    Ok(inputs)
}

/// One evaluated texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub texture: String,
    pub report: EvaluationReport,
}

fn evaluate(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let mut inputs = vec![require(layout.agent(), "agent checkpoint (run `train-policy`)")?];
    let agent = SacAgent::load(&inputs[0]).stage("evaluate")?;
    let adapter = load_adapter(config, layout, &mut inputs)?;
    let eval = config.evaluation.eval_config();
    if config.evaluation.textures.is_empty() {
        return Err(CliError::Config("evaluation.textures is empty".into()));
    }
    let mut records = Vec::new();
    for texture in &config.evaluation.textures {
        let mut env = make_env(config, texture)?;
        let report = evaluate_policy(&mut env, &agent, &adapter, &config.policy, &eval).stage("evaluate")?;
        records.push(EvaluationRecord {
            texture: texture.clone(),
            report,
        });
    }
    let summary = write_evaluation(&layout.evaluation(), &records)?;
    print!("{summary}");
    Ok(inputs)
}

/// Writes `records.json` and `summary.txt`; returns the summary table.
pub fn write_evaluation(dir: &Path, records: &[EvaluationRecord]) -> Result<String, CliError> {
    let json = serde_json::to_string_pretty(records).expect("records serialise");
    write_file(&dir.join("records.json"), json.as_bytes())?;
    let summary = summary_table(records);
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    Ok(summary)
}

/// Mean ± std across seeds of the per-seed mean return, one row per texture.
pub fn summary_table(records: &[EvaluationRecord]) -> String {
    let mut out = format!("{:<24} {:>6} {:>9} {:>22} {:>8}\n", "texture", "seeds", "episodes", "return", "success");
    for r in records {
        let episodes = r.report.per_seed.first().map_or(0, |s| s.returns.len());
        let success = r.report.success_rate.map_or("-".to_string(), |s| format!("{:.1}%", 100.0 * s));
        writeln!(
            out,
            "{:<24} {:>6} {:>9} {:>22} {:>8}",
            r.texture,
            r.report.per_seed.len(),
            episodes,
            format!("{:.2} ± {:.2}", r.report.mean, r.report.std),
            success
        )
        .unwrap();
    }
    out
}

pub fn read_records(dir: &Path) -> Result<Vec<EvaluationRecord>, CliError> {
    let path = dir.join("records.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn visualize(config: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    let adapter_path = require(layout.adapter(), "adapter checkpoint (run `train-adapter`)")?;
    let adapter = AdapterModel::load(&adapter_path).stage("visualize")?;
    let (h, w, _) = (config.environment.height, config.environment.width, 3);
    let mut inputs = vec![adapter_path];
    let frames: Vec<Frame> = if config.visualize.inputs.is_empty() {
        let dataset = require_dir(layout.dataset(), "dataset (run `collect`) or visualize.inputs")?;
        let store = load_store(&dataset).stage("visualize")?;
        inputs.push(dataset);
        let all: Vec<&Frame> = store.frames().collect();
        let n = config.visualize.count.min(all.len());
        (0..n).map(|i| all[i * all.len() / n].clone()).collect()
    } else {
        let files = expand_inputs(&config.visualize.inputs);
        let mut frames = Vec::new();
        for f in &files {
            match load_image_texture(f, h, w) {
                Ok(frame) => {
                    frames.push(frame);
                    inputs.push(f.clone());
                }
                Err(e) => log::warn!("skipping {}: {e}", f.display()),
            }
        }
        if frames.is_empty() && !files.is_empty() {
            return Err(CliError::Usage(format!("none of the {} input files could be read", files.len())));
        }
        frames
    };
    if frames.is_empty() {
        return Err(CliError::Usage("no input frames to visualize".into()));
    }
    let adapted = frames
        .iter()
        .map(|f| adapt_observation(&adapter, f))
        .collect::<vai_core::Result<Vec<_>>>()
        .stage("visualize")?;
    let out = layout.visualize();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    save_grid(&out.join("grid.png"), &[frames.clone(), adapted])?;

    // keypoints over the raw frame, counterfactual mask below
    if let Ok(ckpt) = require(layout.transporter(), "transporter checkpoint") {
        let model = TransporterModel::load(&ckpt).stage("visualize")?;
        inputs.push(ckpt);
        let refs: Vec<&Frame> = frames.iter().collect();
        let maps = compute_cde_batch(&model, &refs).stage("visualize")?;
        let eps = select_epsilon(&maps, &config.attention).stage("visualize")?;
        let mut top = Vec::new();
        let mut bottom = Vec::new();
        for (f, m) in frames.iter().zip(&maps) {
            let kp = model.detect_keypoints(f).stage("visualize")?;
            top.push(draw_keypoints(f, kp.locations()));
            bottom.push(threshold_mask(m, eps).apply(f).stage("visualize")?);
        }
        save_grid(&out.join("overlay.png"), &[top, bottom])?;
    }
    Ok(inputs)
}

fn expand_inputs(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            match fs::read_dir(p) {
                Ok(entries) => {
                    let mut files: Vec<PathBuf> = entries
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                        .collect();
                    files.sort();
                    out.extend(files);
                }
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        } else {
            out.push(p.clone());
        }
    }
    out
}

fn draw_keypoints(frame: &Frame, points: &[[f32; 2]]) -> Frame {
    let (h, w, _) = frame.shape();
    let mut out = frame.clone();
    for p in points {
        let cx = (p[0] * w as f32).floor() as i64;
        let cy = (p[1] * h as f32).floor() as i64;
        out.map_inplace(|y, x, c, v| {
            let (dx, dy) = (x as i64 - cx, y as i64 - cy);
            if (dx == 0 && dy.abs() <= 2) || (dy == 0 && dx.abs() <= 2) {
                if c == 1 { 1.0 } else { 0.0 }
            } else {
                v
            }
        });
    }
    out
}

/// Tiles equally sized frames row by row into one PNG.
fn save_grid(path: &Path, rows: &[Vec<Frame>]) -> Result<(), CliError> {
    let (h, w, _) = rows[0][0].shape();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut img = image::RgbImage::new((cols * w) as u32, (rows.len() * h) as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, frame) in row.iter().enumerate() {
            let bytes = frame.to_u8();
            for y in 0..h {
                for x in 0..w {
                    let i = (y * w + x) * 3;
                    img.put_pixel(
                        (c * w + x) as u32,
                        (r * h + y) as u32,
                        image::Rgb([bytes[i], bytes[i + 1], bytes[i + 2]]),
                    );
                }
            }
        }
    }
    img.save(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
