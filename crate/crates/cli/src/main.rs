use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use evbench_cli::{Pipeline, PipelineError, RunConfig, Stage};

/// Run the EV charging load forecasting benchmark.
#[derive(Debug, Parser)]
#[command(name = "evbench", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// One of ingest, series, features, train, forecast, report, all.
    #[arg(long, default_value = "all")]
    stage: String,
    /// Worker threads within a stage.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace outputs produced from a different configuration.
    #[arg(long)]
    overwrite: bool,
    /// Overrides `output_dir` from the config.
    #[arg(long, env = "EVBENCH_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

fn stages(name: &str) -> Result<Vec<Stage>, PipelineError> {
    if name.eq_ignore_ascii_case("all") {
        return Ok(Stage::ALL.to_vec());
    }
    name.parse::<Stage>().map(|s| vec![s]).map_err(|e| {
        PipelineError::Validation(vec![format!(
            "{}; expected one of ingest, series, features, train, forecast, report, all",
            e
        )])
    })
}

fn run(args: Args) -> Result<(), PipelineError> {
    let stages = stages(&args.stage)?;
    if args.jobs == 0 {
        return Err(PipelineError::Validation(vec!["--jobs must be at least 1".into()]));
    }
    let cfg = RunConfig::load(&args.config, args.output_dir)?;
    let pipeline = Pipeline::new(cfg, args.jobs)?;
    let meta = pipeline.run(&stages, args.overwrite)?;
    for s in &stages {
        let rec = &meta.stages[s.name()];
        eprintln!("{:<9} {:>8.1}s  {} files", s.name(), rec.seconds, rec.artifacts.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = args.config.clone();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::new(e).context(format!("evbench run with {}", config.display()));
            eprintln!("error: {:#}", err);
            ExitCode::from(code as u8)
        }
    }
}
