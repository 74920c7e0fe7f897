//! Command-line front end: single-image fits, estimator benchmarks and
//! sweeps, synthetic cohort generation, and full pipeline runs.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ggdfit::benchmark::{run_experiment, run_sweep, write_csv, ExperimentConfig};
use ggdfit::estimation::{FitConfig, Method};
use ggdfit::pipeline::{
    fit_image, generate_synthetic_cohort, read_image, run, CohortSpec, PipelineError,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "ggdfit", version, about = "Shifted-gamma intensity model toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Override the seed of the loaded config or spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    NaturalGradient,
    Newton,
    Analytical,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::NaturalGradient => Method::NaturalGradient,
            MethodArg::Newton => Method::Newton,
            MethodArg::Analytical => Method::Analytical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Classes share identical depth profiles.
    Null,
    /// Lentigo shifted in β and ρ inside the 40–60 µm window.
    Separated,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit one image (PGM or CSV) and print the estimate as JSON.
    Fit {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "natural-gradient")]
        method: MethodArg,
        /// Include the per-iteration trace in the JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Run a bias/variance/error benchmark over sample sizes (CSV out).
    Bench { config: PathBuf },
    /// Run the one-parameter sweep experiment (CSV out).
    Sweep { config: PathBuf },
    /// Generate a synthetic cohort tree from a spec file or preset.
    Synth {
        /// Cohort spec JSON; omit when using --preset.
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Image width/height for presets.
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
    },
    /// Execute the full pipeline described by a run config JSON.
    Run { config: PathBuf },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("ggdfit: cannot configure {jobs} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ggdfit: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Fit { file, method, trace } => {
            let sample = read_image(&file)?;
            let mut result = fit_image(&sample, method.into(), &FitConfig::default())
                .with_context(|| format!("fit of {} failed", file.display()))?;
            if !trace {
                result.trace.clear();
            }
            let mut json = serde_json::to_string_pretty(&result)?;
            json.push('\n');
            emit(&cli.out, json.as_bytes())
        }
        Cmd::Bench { config } => {
            let mut cfg: ExperimentConfig = load_json(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let rows = run_experiment(&cfg)?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            emit(&cli.out, &buf)
        }
        Cmd::Sweep { config } => {
            let mut cfg: ExperimentConfig = load_json(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let rows = run_sweep(&cfg)?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            emit(&cli.out, &buf)
        }
        Cmd::Synth { spec, preset, width, height } => {
            let mut cohort: CohortSpec = match (spec, preset) {
                (Some(path), None) => load_json(&path)?,
                (None, Some(Preset::Null)) => {
                    CohortSpec::default_null(width, height, cli.seed.unwrap_or(0))
                }
                (None, Some(Preset::Separated)) => {
                    CohortSpec::default_separated(width, height, cli.seed.unwrap_or(0))
                }
                _ => bail!("pass either a spec file or --preset, not both"),
            };
            if let Some(seed) = cli.seed {
                cohort.seed = seed;
            }
            let Some(out) = cli.out else {
                bail!("synth needs --out <directory>");
            };
            let truth = generate_synthetic_cohort(&cohort, &out)?;
            eprintln!(
                "wrote {} patients x {} acquisitions x {} depths under {}",
                truth.patients.len(),
                cohort.acquisitions,
                cohort.healthy_profile.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Run { config } => {
            let mut cfg: RunConfig = load_json(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(out) = cli.out {
                cfg.out_dir = out;
            }
            match run(&cfg) {
                Ok(summary) => {
                    for s in &summary.stages {
                        eprintln!("stage {:10} {:>8.3}s  {}", s.name, s.seconds, s.status);
                    }
                    eprintln!(
                        "{} patients, {} images, {} fit failures; reports in {}",
                        summary.n_patients,
                        summary.n_images,
                        summary.n_fit_failures,
                        summary.out_dir.display()
                    );
                    Ok(())
                }
                Err(PipelineError::Stage { stage, message }) => {
                    bail!("stage {stage} failed: {message}")
                }
            }
        }
    }
}
