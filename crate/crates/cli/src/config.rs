//! Pipeline configuration: dotted `section.key = value` lines, parsed as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vai_core::attention::AttentionConfig;
use vai_core::envs::SpriteWorldConfig;
use vai_core::invariance::{AdapterConfig, AugmentConfig};
use vai_core::keypoint::TransporterConfig;
use vai_core::policy::{DenoiseConfig, EvalConfig, PolicyConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Transitions to collect with the random policy.
    pub count: usize,
    /// Background texture used for collection and training.
    pub texture: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 5000,
            texture: "grid".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub episodes: usize,
    /// Number of evaluation seeds; seeds are `0..seeds`.
    pub seeds: u64,
    pub textures: Vec<String>,
    /// Enables moving-average de-noising with this α.
    pub denoise_alpha: Option<f32>,
    pub denoise_beta: f32,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            seeds: 10,
            textures: vec!["grid".into()],
            denoise_alpha: None,
            denoise_beta: DenoiseConfig::default().beta,
        }
    }
}

impl EvaluationSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.episodes,
            seeds: (0..self.seeds).collect(),
            denoise: self.denoise_alpha.map(|alpha| DenoiseConfig {
                alpha,
                beta: self.denoise_beta,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizeSection {
    /// Frames taken from the dataset when no inputs are given.
    pub count: usize,
    /// PNG files or directories of PNG files.
    pub inputs: Vec<PathBuf>,
}

impl Default for VisualizeSection {
    fn default() -> Self {
        Self {
            count: 6,
            inputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Train and evaluate the policy on adapter output; `false` is the weak-augmentation-only ablation.
    pub use_adapter: bool,
    pub dataset: DatasetSection,
    pub environment: SpriteWorldConfig,
    pub transporter: TransporterConfig,
    pub attention: AttentionConfig,
    pub augmentation: AugmentConfig,
    pub adapter: AdapterConfig,
    pub policy: PolicyConfig,
    pub evaluation: EvaluationSection,
    pub visualize: VisualizeSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            use_adapter: true,
            dataset: DatasetSection::default(),
            environment: SpriteWorldConfig::default(),
            transporter: TransporterConfig::default(),
            attention: AttentionConfig::default(),
            augmentation: AugmentConfig::default(),
            adapter: AdapterConfig::default(),
            policy: PolicyConfig::default(),
            evaluation: EvaluationSection::default(),
            visualize: VisualizeSection::default(),
        }
    }
}

/// Short flags accepted in place of full dotted keys.
pub const ALIASES: &[(&str, &str)] = &[
    ("count", "dataset.count"),
    ("lambda", "adapter.lambda"),
    ("texture", "evaluation.textures"),
    ("denoise-alpha", "evaluation.denoise_alpha"),
    ("seeds", "evaluation.seeds"),
    ("episodes", "evaluation.episodes"),
    ("input", "visualize.inputs"),
    ("output", "output_dir"),
];

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_table(parse_table(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Loads `path` (or defaults) and applies `key = value` overrides in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => parse_table(
                &std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            )?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            let key = ALIASES
                .iter()
                .find(|(alias, _)| alias == key)
                .map_or(key.as_str(), |(_, full)| full);
            set_path(&mut table, key, parse_value(key, value))?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: vai_core::VaiError| CliError::Config(e.to_string());
        self.environment.validate().map_err(wrap)?;
        self.transporter.validate().map_err(wrap)?;
        self.augmentation.validate().map_err(wrap)?;
        self.adapter.validate().map_err(wrap)?;
        self.policy.validate().map_err(wrap)?;
        if !(0.0..=1.0).contains(&self.attention.quantile) {
            return Err(CliError::Config("attention.quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// One `dotted.key = value` line per leaf, sorted by key.
    pub fn to_lines(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serialises to TOML");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse_table(text: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>().map_err(|e| CliError::Config(e.to_string()))
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

/// A TOML literal if the text parses as one, otherwise a bare string.
/// List-valued keys also accept a single bare item or a comma-separated list.
fn parse_value(key: &str, text: &str) -> toml::Value {
    let literal = format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"));
    let list_key = matches!(key, "evaluation.textures" | "visualize.inputs");
    match literal {
        Some(v @ toml::Value::Array(_)) => v,
        Some(v) if !list_key => v,
        _ if list_key => toml::Value::Array(
            text.split(',')
                .map(|s| toml::Value::String(s.trim().to_string()))
                .filter(|v| v.as_str() != Some(""))
                .collect(),
        ),
        Some(v) => v,
        None => toml::Value::String(text.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let text = c.to_lines();
        assert!(text.contains("transporter.keypoints = 4\n"));
        assert!(text.contains("dataset.count = 5000\n"));
        let back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_lines(), text);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::parse("transporter.kepoints = 3\n").unwrap_err();
        assert!(err.to_string().contains("kepoints"), "{err}");
        let err = PipelineConfig::parse("nonsense = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn overrides_and_aliases() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = PipelineConfig::resolve(
            None,
            &[
                o("count", "10"),
                o("lambda", "0"),
                o("texture", "marble"),
                o("transporter.steps", "12"),
                o("output_dir", "/tmp/x"),
                o("evaluation.denoise_alpha", "0.5"),
                o("augmentation.crop_size", "[44, 44]"),
            ],
        )
        .unwrap();
        assert_eq!(c.dataset.count, 10);
        assert_eq!(c.adapter.lambda, 0.0);
        assert_eq!(c.evaluation.textures, vec!["marble".to_string()]);
        assert_eq!(c.transporter.steps, 12);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.evaluation.denoise_alpha, Some(0.5));
        assert_eq!(c.augmentation.crop_size, Some([44, 44]));
        let c2 = PipelineConfig::parse(&c.to_lines()).unwrap();
        assert_eq!(c2, c);
    }

    #[test]
    fn integer_for_float_field_is_accepted() {
        let c = PipelineConfig::parse("adapter.lambda = 2\n").unwrap();
        assert_eq!(c.adapter.lambda, 2.0);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            PipelineConfig::parse("transporter.keypoints = 0\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(PipelineConfig::parse("seed = \"x\"\n"), Err(CliError::Config(_))));
    }
}
