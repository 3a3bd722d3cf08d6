use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use galerkin_cli::{run_mkv, run_pipeline, run_snse, Options, PipelineError, RunConfig, Stage, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "galerkin", version, about = "Superposition checks for Galerkin-truncated SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out` in the config, then `./out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
    /// Multiplies every tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Step 1: sample the structural hypotheses.
    CheckAssumptions(Common),
    /// Step 2: solve the Fokker-Planck equation.
    Solve(Common),
    /// Steps 3 and 4: simulate and run the a-priori diagnostics.
    Simulate(Common),
    /// Steps 6 to 9 against the stored flow and ensemble.
    Verify(Common),
    /// Step 5: Galerkin convergence across truncation levels.
    Converge(Common),
    /// Picard iteration for a measure-dependent model.
    Mkv(Common),
    /// Stochastic Navier-Stokes truncation end to end.
    SnseDemo(Common),
    /// Any subset of the nine steps.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step numbers or names.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
}

fn options(common: &Common, cfg: &RunConfig, stages: Option<Vec<Stage>>) -> Options {
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    Options {
        out,
        stages,
        seed_override: common.seed_override,
        tol_scale: common.tol_scale,
    }
}

enum Failure {
    Pipeline(PipelineError),
    Stage(PipelineError, Stage),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn staged(e: PipelineError, stage: Stage) -> Failure {
    match e {
        PipelineError::Config(_) => Failure::Pipeline(e),
        other => Failure::Stage(other, stage),
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    let (common, stages) = match command {
        Command::Mkv(c) => {
            let cfg = RunConfig::from_path(&c.config)?;
            let (report, code) = run_mkv(&cfg, &options(&c, &cfg, None)).map_err(|e| staged(e, Stage::Mkv))?;
            println!(
                "mkv: {} after {} iterations",
                if report.passed { "pass" } else { "fail" },
                report.iterations
            );
            return Ok(code);
        }
        Command::SnseDemo(c) => {
            let cfg = RunConfig::from_path(&c.config)?;
            let (report, code) = run_snse(&cfg, &options(&c, &cfg, None)).map_err(|e| staged(e, Stage::Snse))?;
            println!("snse: {} on H_{}", if report.passed { "pass" } else { "fail" }, report.n);
            return Ok(code);
        }
        Command::CheckAssumptions(c) => (c, Some(vec![Stage::Project])),
        Command::Solve(c) => (c, Some(vec![Stage::Solve])),
        Command::Simulate(c) => (c, Some(vec![Stage::Simulate, Stage::Diagnostics])),
        Command::Verify(c) => (
            c,
            Some(vec![Stage::Residual, Stage::Martingale, Stage::Coincide, Stage::Mass]),
        ),
        Command::Converge(c) => (c, Some(vec![Stage::Converge])),
        Command::Run { common, stages } => {
            let stages = stages
                .map(|s| s.iter().map(|t| Stage::parse(t)).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            (common, stages)
        }
    };
    let cfg = RunConfig::from_path(&common.config)?;
    let summary = run_pipeline(&cfg, &options(&common, &cfg, stages))?;
    for s in &summary.stages {
        let status = serde_json::to_string(&s.status).unwrap_or_default();
        match &s.error {
            Some(e) => println!("step {} {}: {} ({e})", s.step.unwrap_or(0), s.stage.name(), status.trim_matches('"')),
            None => println!("step {} {}: {}", s.step.unwrap_or(0), s.stage.name(), status.trim_matches('"')),
        }
    }
    Ok(summary.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Stage(e, stage)) => {
            eprintln!("error in {}: {e}", stage.name());
            stage.error_code()
        }
        Err(Failure::Pipeline(e @ PipelineError::Io(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    };
    ExitCode::from(code as u8)
}
