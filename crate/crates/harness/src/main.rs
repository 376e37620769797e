use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fwaccel_harness::config::{ScenarioConfig, ScenarioKind, SCHEMA_HELP};
use fwaccel_harness::log::read_log;
use fwaccel_harness::metrics::{compute_metrics, MetricSettings, Summary};
use fwaccel_harness::runner::{is_metric_key, run_batch, BatchJob, RunError, RunOutput};
use fwaccel_harness::tune;

#[derive(Parser)]
#[command(
    name = "fwaccel",
    version,
    about = "Acceleration-command outer loop for a fixed-wing UAV"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly the thrust calibration and write the identified model.
    Calibrate(RunArgs),
    /// Track piecewise normal-acceleration steps.
    Track(RunArgs),
    /// Proportional-navigation intercept of a fixed target.
    Intercept(RunArgs),
    /// Recompute the metrics of a finished run and compare with its summary.
    Replay {
        /// Run output directory holding log.csv and summary.txt.
        dir: PathBuf,
    },
    /// Print the derived airframe and the gain sweeps.
    Tune,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Runs every seed in `A..B` in parallel, each into `<out>/seed-<n>`.
    #[arg(long, value_parser = parse_range)]
    seeds: Option<Range<u64>>,
    /// Output directory; defaults to the config's `output.dir` or `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.parse().map_err(|e| format!("{e}"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok(a..b)
}

enum Failure {
    Usage(String),
    Run(RunError),
    Aborted {
        category: &'static str,
        message: String,
    },
    Mismatch(Vec<String>),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e)
    }
}

fn report(out: &RunOutput, dir: &Path, quiet: bool) -> Result<(), Failure> {
    if !quiet {
        println!("{}", dir.display());
        for (k, v) in out.summary.entries() {
            println!("  {k} = {v}");
        }
    }
    match &out.abort {
        None => Ok(()),
        Some(a) => Err(Failure::Aborted {
            category: a.category,
            message: a.message.clone(),
        }),
    }
}

fn run(expected: ScenarioKind, args: RunArgs) -> Result<(), Failure> {
    let (cfg, text) = ScenarioConfig::load(&args.config).map_err(RunError::from)?;
    if cfg.scenario.kind() != expected {
        return Err(Failure::Usage(format!(
            "{} holds a `{}` scenario, not `{}`",
            args.config.display(),
            cfg.scenario.kind().as_str(),
            expected.as_str()
        )));
    }
    let base_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| {
            Path::new("out").join(if cfg.name.is_empty() {
                expected.as_str()
            } else {
                &cfg.name
            })
        });

    let jobs: Vec<BatchJob> = match &args.seeds {
        None => {
            let mut cfg = cfg.clone();
            if let Some(seed) = args.seed {
                cfg.seed = Some(seed);
            }
            vec![BatchJob {
                config: cfg,
                config_text: text,
                base_dir,
                out_dir: Some(out.clone()),
            }]
        }
        Some(range) => range
            .clone()
            .map(|seed| BatchJob {
                config: ScenarioConfig {
                    seed: Some(seed),
                    ..cfg.clone()
                },
                config_text: text.clone(),
                base_dir: base_dir.clone(),
                out_dir: Some(out.join(format!("seed-{seed}"))),
            })
            .collect(),
    };
    let mut first_failure = None;
    for (job, res) in jobs.iter().zip(run_batch(&jobs)) {
        let dir = job.out_dir.as_deref().unwrap_or(&out);
        let outcome = res
            .map_err(Failure::from)
            .and_then(|o| report(&o, dir, args.quiet));
        if let Err(f) = outcome {
            if args.seeds.is_some() {
                eprintln!("seed {}: failed", job.config.seed());
            }
            first_failure.get_or_insert(f);
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn replay(dir: &Path) -> Result<(), Failure> {
    let rows = read_log(&dir.join("log.csv")).map_err(RunError::from)?;
    let summary_path = dir.join("summary.txt");
    let text = std::fs::read_to_string(&summary_path).map_err(|source| RunError::Io {
        path: summary_path,
        source,
    })?;
    let recorded = Summary::parse(&text);
    let kind = recorded
        .get("kind")
        .and_then(ScenarioKind::parse)
        .ok_or_else(|| Failure::Usage("summary has no valid `kind`".into()))?;
    let settings = MetricSettings::read(&recorded)
        .ok_or_else(|| Failure::Usage("summary has no settings".into()))?;
    let recomputed = compute_metrics(kind, &rows, &settings).map_err(RunError::from)?;

    let mut diffs = Vec::new();
    for (k, v) in recorded.entries().iter().filter(|(k, _)| is_metric_key(k)) {
        match recomputed.get(k) {
            Some(r) if r == v => {}
            other => diffs.push(format!(
                "{k}: recorded {v}, recomputed {}",
                other.unwrap_or("<missing>")
            )),
        }
    }
    for (k, _) in recomputed.entries() {
        if recorded.get(k).is_none() {
            diffs.push(format!("{k}: missing from summary"));
        }
    }
    if diffs.is_empty() {
        println!("replay: {} metrics match", recomputed.entries().len());
        Ok(())
    } else {
        Err(Failure::Mismatch(diffs))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            eprintln!("\nconfig schema:\n{SCHEMA_HELP}");
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => run(ScenarioKind::Calibration, a),
        Command::Track(a) => run(ScenarioKind::AccelSteps, a),
        Command::Intercept(a) => run(ScenarioKind::PnIntercept, a),
        Command::Replay { dir } => replay(&dir),
        Command::Tune => tune::report().map(|s| print!("{s}")).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: category=usage {msg}\n\nconfig schema:\n{SCHEMA_HELP}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: category={} {e}", e.category());
            if matches!(e, RunError::Config(_)) {
                eprintln!("\nconfig schema:\n{SCHEMA_HELP}");
                return ExitCode::from(2);
            }
            ExitCode::FAILURE
        }
        Err(Failure::Aborted { category, message }) => {
            eprintln!("error: category={category} {message}");
            ExitCode::FAILURE
        }
        Err(Failure::Mismatch(diffs)) => {
            eprintln!("error: category=replay-mismatch");
            for d in diffs {
                eprintln!("  {d}");
            }
            ExitCode::FAILURE
        }
    }
}
