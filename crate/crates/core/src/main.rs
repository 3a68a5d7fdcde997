use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hullwalk::harness::{
    checks_to_csv, checks_to_json, run_experiment, run_lemma_checks, with_threads, Experiment, ExperimentConfig,
    OutputFormat, RunOutput, SweepParam, SweepSpec,
};
use hullwalk::hull::{default_tolerance, origin_membership};
use hullwalk::separator::ConstantsMode;
use hullwalk::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser)]
#[command(name = "hullwalk", version, about = "Convex hulls of Brownian paths: Monte Carlo experiments and separator runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Containment frequency of the path sampled on the block grid up to 2^horizon_exp.
    HullTest(Common),
    /// Containment frequency of the path at Poisson(alpha) times in (0, 1].
    Poisson(Common),
    /// Separating-direction construction with grid and continuum certificates.
    SeparatorRun(Common),
    /// One row per value of a swept parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Experiment to repeat.
        #[arg(long, value_enum, default_value = "hull-test")]
        experiment: SweptExperiment,
        /// Parameter to vary: n, horizon_exp, depth or alpha.
        #[arg(long)]
        over: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Statistical sanity checks of the sampling primitives.
    LemmaChecks(Common),
    /// Origin membership for a point set given as a JSON array of arrays.
    Membership {
        /// Input file; `-` reads stdin.
        input: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweptExperiment {
    HullTest,
    Poisson,
    SeparatorRun,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long = "horizon-exp", default_value_t = 1.0)]
    horizon_exp: f64,
    #[arg(long, default_value_t = 0)]
    depth: u32,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Constant override, e.g. `--set C_h=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VAL")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    output: Format,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the first trial's path snapshot as JSON.
    #[arg(long = "dump-path", value_name = "PATH")]
    dump_path: Option<PathBuf>,
    /// Write the first trial's certificate as JSON.
    #[arg(long = "dump-certificate", value_name = "PATH")]
    dump_certificate: Option<PathBuf>,
    /// Write every trial report as JSON.
    #[arg(long = "dump-trials", value_name = "PATH")]
    dump_trials: Option<PathBuf>,
    /// Worker threads; falls back to HULLWALK_THREADS, then to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "bridge-variance-scale", default_value_t = 1.0, hide = true)]
    bridge_variance_scale: f64,
}

impl Common {
    fn config(&self, experiment: Experiment) -> Result<ExperimentConfig, Error> {
        let overrides = self
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("expected KEY=VAL, got '{kv}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentConfig {
            experiment,
            n: self.n,
            horizon_exp: self.horizon_exp,
            depth: self.depth,
            alpha: self.alpha,
            trials: self.trials,
            seed: self.seed,
            preset: match self.preset {
                Preset::Paper => ConstantsMode::Paper,
                Preset::Desk => ConstantsMode::Desk,
            },
            overrides,
            sweep: None,
            bridge_variance_scale: self.bridge_variance_scale,
        })
    }

    fn format(&self) -> OutputFormat {
        match self.output {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }

    fn threads(&self) -> Result<Option<usize>, Error> {
        if self.threads.is_some() {
            return Ok(self.threads);
        }
        match std::env::var("HULLWALK_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("HULLWALK_THREADS must be a positive integer, got '{v}'"))),
            Err(_) => Ok(None),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes()).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    emit(Some(path), &s)
}

fn run_and_report(common: &Common, cfg: ExperimentConfig) -> Result<ExitCode, Error> {
    let threads = common.threads()?;
    let out: RunOutput = with_threads(threads, || run_experiment(&cfg))??;
    let text = match common.format() {
        OutputFormat::Csv => out.summary.to_csv(),
        OutputFormat::Json => out.summary.to_json(),
    };
    emit(common.out.as_deref(), &text)?;
    if let Some(p) = &common.dump_path {
        write_json(p, &out.first_path)?;
    }
    if let Some(p) = &common.dump_certificate {
        write_json(p, &out.first_certificate)?;
    }
    if let Some(p) = &common.dump_trials {
        write_json(p, &out.trials)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::HullTest(c) => {
            let cfg = c.config(Experiment::HullTest)?;
            run_and_report(&c, cfg)
        }
        Command::Poisson(c) => {
            let cfg = c.config(Experiment::Poisson)?;
            run_and_report(&c, cfg)
        }
        Command::SeparatorRun(c) => {
            let cfg = c.config(Experiment::SeparatorRun)?;
            run_and_report(&c, cfg)
        }
        Command::Sweep { common, experiment, over, values } => {
            let mut cfg = common.config(Experiment::Sweep)?;
            cfg.sweep = Some(SweepSpec {
                experiment: match experiment {
                    SweptExperiment::HullTest => Experiment::HullTest,
                    SweptExperiment::Poisson => Experiment::Poisson,
                    SweptExperiment::SeparatorRun => Experiment::SeparatorRun,
                },
                over: SweepParam::parse(&over)?,
                values,
            });
            run_and_report(&common, cfg)
        }
        Command::LemmaChecks(c) => {
            let cfg = c.config(Experiment::LemmaChecks)?;
            let rows = with_threads(c.threads()?, || run_lemma_checks(&cfg))??;
            let text = match c.format() {
                OutputFormat::Csv => checks_to_csv(&rows),
                OutputFormat::Json => checks_to_json(&rows),
            };
            emit(c.out.as_deref(), &text)?;
            Ok(if rows.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(EXIT_ASSERTION) })
        }
        Command::Membership { input, tol, out } => {
            let raw = if input.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin()).map_err(|e| Error::Config(e.to_string()))?
            } else {
                fs::read_to_string(&input).map_err(|e| Error::Config(format!("{}: {e}", input.display())))?
            };
            let points: Vec<Vec<f64>> =
                serde_json::from_str(&raw).map_err(|e| Error::Config(format!("invalid point set: {e}")))?;
            if points.is_empty() {
                return Err(Error::Config("point set is empty".into()));
            }
            let tol = tol.unwrap_or_else(|| default_tolerance(&points));
            let cert = origin_membership(&points, tol)?;
            let mut s = serde_json::to_string_pretty(&cert).map_err(|e| Error::Config(e.to_string()))?;
            s.push('\n');
            emit(out.as_deref(), &s)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::NonPositiveConstant(_)
                | Error::BlockBudgetExceeded { .. }
                | Error::BlockTooSmall { .. } => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_ASSERTION),
            }
        }
    }
}
