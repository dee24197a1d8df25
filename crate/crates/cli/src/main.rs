use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vai_cli::{parse_overrides, run, Command, PipelineConfig};

/// Unsupervised visual attention and invariance pipeline.
///
/// Any config key can be overridden as `--section.key value`; the short
/// forms --count, --lambda, --seed, --output, --texture, --denoise-alpha,
/// --seeds, --episodes and --input are also accepted.
#[derive(Parser, Debug)]
#[command(name = "vai", version)]
struct Args {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    command: Command,

    /// Config file of `section.key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,

    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = parse_overrides(&args.overrides)
        .and_then(|o| PipelineConfig::resolve(args.config.as_deref(), &o))
        .and_then(|config| {
            if args.print_config {
                print!("{}", config.to_lines());
                Ok(())
            } else {
                run(args.command, &config)
            }
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
