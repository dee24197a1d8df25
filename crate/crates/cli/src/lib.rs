//! Pipeline orchestration for `vai`: configuration, the seven commands,
//! and the on-disk artifact layout they share.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command, Layout};
pub use config::PipelineConfig;
pub use error::CliError;

/// Splits `--key value` / `--key=value` arguments into override pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected `--key value`, found `{arg}`")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let value = it
                .next()
                .ok_or_else(|| CliError::Usage(format!("`--{key}` needs a value")))?;
            out.push((key.to_string(), value.clone()));
        }
    }
    Ok(out)
}
