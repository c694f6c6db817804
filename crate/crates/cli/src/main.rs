use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pepr_cli::config::{parse_method_list, parse_seeds, ConfigError};
use pepr_cli::{exit_code, pipeline, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "pepr",
    version,
    about = "Out-of-distribution detection by predicted embedding power regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load features and write the feature cache.
    Precompute,
    /// Train every model the configured methods need.
    Train,
    /// Score test data and write score dumps and evaluation records.
    Evaluate,
    /// Write summary and per-dataset tables and score histograms.
    Report,
    /// precompute, train, evaluate and report.
    Run,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; unset keys keep the desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds: "3", "0,2,5" or "0..10".
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Single seed; may be repeated.
    #[arg(long, global = true)]
    seed: Vec<u64>,
    /// Comma-separated methods, e.g. "MSP,MOS,CPEPR-10".
    #[arg(long, global = true)]
    methods: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Members for "-ensemble" methods.
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,
    /// Network width multiplier.
    #[arg(long, global = true)]
    scale_factor: Option<f64>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seeds = match (&self.seeds, self.seed.is_empty()) {
            (Some(_), false) => return Err(ConfigError("use either --seeds or --seed".into()).into()),
            (Some(s), true) => Some(parse_seeds(s)?),
            (None, false) => Some(self.seed.clone()),
            (None, true) => None,
        };
        Overrides {
            seeds,
            methods: self.methods.as_deref().map(parse_method_list),
            out: self.out.clone(),
            ensemble_size: self.ensemble_size,
            scale_factor: self.scale_factor,
        }
        .apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::Precompute => {
            let o = pipeline::precompute(&cfg)?;
            println!("cache: {} written, {} unchanged", o.written.len(), o.reused.len());
        }
        Command::Train => {
            let o = pipeline::train(&cfg)?;
            println!("trained {} artifact(s)", o.checkpoints.len());
        }
        Command::Evaluate => {
            let r = pipeline::evaluate(&cfg)?;
            println!("{} evaluation records", r.len());
        }
        Command::Report | Command::Run => {
            let o = if matches!(cli.command, Command::Run) {
                pipeline::run(&cfg)?
            } else {
                pipeline::report(&cfg)?
            };
            print!("{}", pepr_core::metrics::summary_markdown(&o.summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
