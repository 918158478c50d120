use clap::{Parser, Subcommand};
use fourbar_opt::pipeline::{self, PipelineConfig, PipelineError, Run};
use std::path::PathBuf;
use std::process::ExitCode;

/// Four-bar point-to-point mechanism optimizer.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sample cache file (default: <output dir>/samples.csv).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Model file (default: <output dir>/model.json).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Seed for the holdout lines, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the training lines.
    Sample,
    /// Fit the sparse surrogate to the samples.
    Fit,
    /// Compare the surrogate with the simulator on random holdout lines.
    Validate,
    /// Grid-search the surrogate and verify the optimum.
    Optimize,
    /// Summarize the run.
    Report,
    /// All stages in order.
    Run,
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let Some(config_path) = &cli.config else {
        return Err(PipelineError::Input {
            path: PathBuf::new(),
            message: "--config is required".into(),
        });
    };
    let config = PipelineConfig::load(config_path)?;
    let run = Run::new(config, cli.cache.as_deref(), cli.model.as_deref(), cli.seed)?;
    match cli.command {
        Command::Sample => {
            let out = pipeline::cmd_sample(&run)?;
            let plan = out.cache.plan.as_ref().expect("training plan");
            println!(
                "{} lines, {} samples{}",
                plan.shifts.len(),
                plan.total_samples(),
                if out.reused { " (cached)" } else { "" }
            );
        }
        Command::Fit => {
            let m = pipeline::cmd_fit(&run)?;
            println!("{} terms from {} samples", m.n_terms, m.n_samples);
        }
        Command::Validate => {
            let v = pipeline::cmd_validate(&run)?;
            println!(
                "{} points, RMSE {:?}, relative RMSE {:?}",
                v.report.count, v.report.rmse, v.relative_rmse
            );
        }
        Command::Optimize => {
            let o = pipeline::cmd_optimize(&run)?;
            println!(
                "optimum {:?}: model {}, simulated {:?}",
                o.argmin.design.as_slice(),
                o.argmin.model,
                o.argmin.simulated
            );
        }
        Command::Report => print!("{}", pipeline::cmd_report(&run)?.to_text()),
        Command::Run => print!("{}", pipeline::run_all(&run)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
