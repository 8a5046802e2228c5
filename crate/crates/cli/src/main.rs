//! `trae`: generate, corrupt and recover structured image collections.
//!
//! Settings come from an optional preset, then an optional `key = value`
//! config file, then `--key=value` overrides, in that order.
//! `RECOVERY_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trae::dataset::{self, StructuredDataset};
use trae::experiment::{self, DataSource, ExperimentConfig, ReportRow};
use trae::measurement::MeasurementOp;
use trae::recovery::{self, Method};
use trae::{Error, MultiIndex, Result};

#[derive(Parser)]
#[command(name = "trae", version, about = "Tensor-ring autoencoder image recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic glyph collection to a directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Corrupt a dataset directory and write measurements plus a replay sidecar.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train one method on a directory of measurements; ground truth is never read.
    Recover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "tr-ae")]
        method: Method,
        #[command(flatten)]
        settings: Settings,
    },
    /// Score recovered directories against ground truth and write report.csv.
    Report {
        /// Dataset directory holding the clean images.
        #[arg(long)]
        truth: PathBuf,
        /// Measurement directory written by `corrupt`; supplies inpainting holes.
        #[arg(long)]
        measurements: PathBuf,
        /// Output directories of `recover`.
        #[arg(long, required = true, num_args = 1..)]
        recovered: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, corrupt, recover and report in one go.
    Run {
        /// Run the methods of a seed concurrently.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Print every configuration key with its value.
    Config {
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(Args)]
struct Settings {
    /// Named starting point (toy-denoise, toy-inpaint).
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` file applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key=value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.preset {
            Some(name) => ExperimentConfig::preset(name)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        let mut rest = self.overrides.iter();
        while let Some(arg) = rest.next() {
            let body = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key=value, got {arg:?}")))?;
            match body.split_once('=') {
                Some((k, v)) => cfg.set(k, v)?,
                None => {
                    let v = rest
                        .next()
                        .ok_or_else(|| Error::Config(format!("missing value for `{body}`")))?;
                    cfg.set(body, v)?;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

const RUN_INFO: &str = "run.txt";

fn recover(input: &Path, out: &Path, method: Method, cfg: &ExperimentConfig) -> Result<()> {
    let obs = dataset::load_observations(input)?;
    let [c, h, w] = obs.image_shape;
    let latent = trae::autoencoder::Architecture::standard(c, h, w).latent_dim();
    if method == Method::TrAe && !recovery::ring_compresses(&obs.attribute_dims, latent, cfg.rank) {
        return Err(Error::Config(format!(
            "rank {} does not compress a {latent}-dimensional code over {:?}",
            cfg.rank, obs.attribute_dims
        )));
    }
    let seed = cfg.seeds[0];
    let result = recovery::train(&obs, &cfg.recovery_config(method, seed))?;
    experiment::save_result(&result, &obs.attribute_dims, out, true)?;
    let seconds = if cfg.record_seconds { result.seconds } else { 0.0 };
    write_text(
        &out.join(RUN_INFO),
        &format!(
            "method {}\nsteps {}\nseconds {seconds:.3}\nimages {}\n",
            method.name(),
            result.steps,
            if c == 1 { "pgm" } else { "ppm" }
        ),
    )?;
    println!("{}: {} steps, final loss {:.6}", method.name(), result.steps, result.trace.last().map_or(f64::NAN, |r| r.terms.total));
    Ok(())
}

fn run_info(dir: &Path) -> Result<(String, usize, f64)> {
    let path = dir.join(RUN_INFO);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).map(str::trim))
            .ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: format!("missing `{key}`"),
            })
    };
    let steps = field("steps ")?;
    let seconds = field("seconds ")?;
    Ok((
        field("method ")?.to_string(),
        steps.parse().map_err(|_| Error::Invalid(format!("bad step count {steps:?}")))?,
        seconds.parse().map_err(|_| Error::Invalid(format!("bad seconds {seconds:?}")))?,
    ))
}

fn report(truth: &Path, measurements: &Path, recovered: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let clean = StructuredDataset::load_directory(truth)?;
    let obs = dataset::load_observations(measurements)?;
    if obs.attribute_dims != clean.attribute_dims {
        return Err(Error::Invalid(format!(
            "measurements cover {:?} but ground truth covers {:?}",
            obs.attribute_dims, clean.attribute_dims
        )));
    }
    let task = match obs.ops.first() {
        Some(MeasurementOp::Mask { .. }) => "inpaint",
        _ => "denoise",
    };
    let holes: Vec<_> = obs.ops.iter().map(MeasurementOp::hole).collect();
    let truth_images = clean.images()?;
    let mut rows = Vec::new();
    for dir in recovered {
        let (method, iterations, seconds) = run_info(dir)?;
        let images = (0..clean.len())
            .map(|flat| {
                let idx = MultiIndex::from_flat(flat, &clean.attribute_dims)?;
                trae::pnm::read(&StructuredDataset::image_path(dir, &idx, clean.image_shape[0]))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, std, masked) = experiment::score(&images, truth_images, &holes)?;
        rows.push(ReportRow {
            method,
            task: task.into(),
            psnr_mean_db: mean,
            psnr_std_db: std,
            masked_psnr_db: masked,
            iterations,
            seconds,
        });
    }
    let csv = experiment::report_csv(&rows);
    match out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn print_summary(rows: &[ReportRow]) {
    println!("{:<8} {:<8} {:>10} {:>12} {:>6}", "method", "task", "psnr_db", "masked_db", "seeds");
    for (method, task, psnr, masked, n) in experiment::aggregate(rows) {
        let masked = masked.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into());
        println!("{method:<8} {task:<8} {psnr:>10.2} {masked:>12} {n:>6}");
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, settings } => {
            let cfg = settings.resolve()?;
            let DataSource::Synthetic(spec) = &cfg.source else {
                return Err(Error::Config("generate needs `dataset = synthetic`".into()));
            };
            let ds = dataset::generate_synthetic(spec)?;
            ds.save_directory(&out)?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::Corrupt { input, out, settings } => {
            let cfg = settings.resolve()?;
            let clean = StructuredDataset::load_directory(&input)?;
            let corrupted = dataset::corrupt_dataset(&clean, cfg.task(), cfg.seeds[0])?;
            let info = corrupted.corruption.clone();
            StructuredDataset {
                images: None,
                ..corrupted
            }
            .save_directory(&out)?;
            if let Some(db) = info.and_then(|i| i.input_psnr_db) {
                println!("measurement PSNR {db:.2} dB");
            }
        }
        Command::Recover {
            input,
            out,
            method,
            settings,
        } => recover(&input, &out, method, &settings.resolve()?)?,
        Command::Report {
            truth,
            measurements,
            recovered,
            out,
        } => report(&truth, &measurements, &recovered, out.as_deref())?,
        Command::Run { parallel, settings } => {
            let mut cfg = settings.resolve()?;
            cfg.parallel_methods |= parallel;
            let outcome = experiment::run_experiment(&cfg)?;
            for (seed, db) in cfg.seeds.iter().zip(&outcome.input_psnr_db) {
                println!("seed {seed}: measurement PSNR {db:.2} dB");
            }
            print_summary(&outcome.rows);
            println!("report written to {}", cfg.out.join("report.csv").display());
        }
        Command::Config { settings } => print!("{}", settings.resolve()?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("RECOVERY_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                trae::parallel::init_thread_pool(n);
            }
            _ => {
                eprintln!("error: RECOVERY_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
