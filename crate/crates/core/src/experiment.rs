//! Experiment configuration and the end-to-end corrupt, recover and score
//! pipeline.
//!
//! Configuration is flat `key = value` text with `#` comments. Every key
//! has a default (see [`ExperimentConfig::default`]) and unknown keys are
//! rejected.
//!
//! `run_experiment` writes into the output directory:
//!
//! * `report.csv` with columns
//!   `method,task,psnr_mean_db,psnr_std_db,masked_psnr_db,iterations,seconds`,
//!   one row per method and seed (seed-major). PSNRs are averaged per image;
//!   the standard deviation is over images. `masked_psnr_db` is empty for
//!   denoising. `seconds` is `0` unless `record_seconds = true`, so that
//!   repeated runs produce identical reports.
//! * `seed<s>/replay.txt` and `seed<s>/measurements.bin` for each seed.
//! * `<method>/seed<s>/` with recovered images, `loss.csv` and checkpoints
//!   (`cores.trc`, `params.aep`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autoencoder::Architecture;
use crate::dataset::{corrupt_dataset, generate_synthetic, Placement, StructuredDataset, SyntheticSpec, Task};
use crate::error::{Error, Result};
use crate::metrics::{masked_psnr, mean_std, psnr};
use crate::optim::AdamConfig;
use crate::parallel::Execution;
use crate::recovery::{self, BatchStrategy, Method, RecoveryConfig, RecoveryResult};
use crate::tensor::DenseTensor;
use crate::tensor_ring::MultiIndex;

pub const REPORT_HEADER: &str = "method,task,psnr_mean_db,psnr_std_db,masked_psnr_db,iterations,seconds";

/// Where images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

/// A recovery method or the measurements themselves as a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entry {
    Method(Method),
    /// Scores the measurements as if they were reconstructions.
    Input,
}

impl Entry {
    pub fn name(self) -> &'static str {
        match self {
            Entry::Method(m) => m.name(),
            Entry::Input => "input",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "input" {
            Ok(Entry::Input)
        } else {
            Ok(Entry::Method(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Inpainting when set, denoising otherwise.
    pub inpaint: bool,
    pub snr_db: f64,
    /// Side of the square hole in pixels.
    pub block: usize,
    pub methods: Vec<Entry>,
    pub source: DataSource,
    pub seeds: Vec<u64>,
    pub rank: usize,
    pub iterations: usize,
    /// LSTR step budget; `None` uses `iterations`.
    pub lstr_iterations: Option<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub lstr_lr: f64,
    pub batch: BatchStrategy,
    pub batch_cap: Option<usize>,
    pub csae_batch: usize,
    pub init_std: f64,
    pub lstr_init_std: f64,
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
    pub out: PathBuf,
    pub record_seconds: bool,
    pub save_images: bool,
    /// Run the methods of a seed concurrently.
    pub parallel_methods: bool,
    pub exec: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let r = RecoveryConfig::default();
        Self {
            inpaint: false,
            snr_db: 20.0,
            block: 16,
            methods: Method::ALL.iter().map(|&m| Entry::Method(m)).collect(),
            source: DataSource::Synthetic(SyntheticSpec::toy()),
            seeds: vec![0],
            rank: r.rank,
            iterations: r.iterations,
            lstr_iterations: None,
            lambda1: r.lambda1,
            lambda2: r.lambda2,
            adam_lr: r.adam.lr,
            sgd_lr: r.sgd_lr,
            lstr_lr: r.lstr_lr,
            batch: r.batch,
            batch_cap: r.batch_cap,
            csae_batch: r.csae_batch,
            init_std: r.init_std,
            lstr_init_std: r.lstr_init_std,
            early_stop_window: r.early_stop_window,
            early_stop_tol: r.early_stop_tol,
            out: PathBuf::from("out"),
            record_seconds: false,
            save_images: true,
            parallel_methods: false,
            exec: Execution::default(),
        }
    }
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 2] = ["toy-denoise", "toy-inpaint"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

impl ExperimentConfig {
    /// 4×5×5 grayscale 64×64 glyphs, rank 8, 3000 steps, core SGD rate
    /// 0.01, LSTR rate 0.002, core slices capped at 8 samples.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self {
            rank: 8,
            iterations: 3000,
            sgd_lr: 0.01,
            lstr_lr: 0.002,
            batch_cap: Some(8),
            csae_batch: 8,
            ..Self::default()
        };
        match name {
            "toy-denoise" => cfg.inpaint = false,
            "toy-inpaint" => cfg.inpaint = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (available: {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    fn spec_mut(&mut self) -> &mut SyntheticSpec {
        if !matches!(self.source, DataSource::Synthetic(_)) {
            self.source = DataSource::Synthetic(SyntheticSpec::toy());
        }
        match &mut self.source {
            DataSource::Synthetic(s) => s,
            DataSource::Directory(_) => unreachable!(),
        }
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => {
                self.inpaint = match v {
                    "denoise" => false,
                    "inpaint" => true,
                    _ => return Err(Error::Config(format!("bad value {v:?} for key `task` (denoise, inpaint)"))),
                }
            }
            "snr_db" => self.snr_db = parse(key, v)?,
            "block" => self.block = parse(key, v)?,
            "methods" => {
                self.methods = v.split(',').map(|m| Entry::parse(m.trim())).collect::<Result<_>>()?;
            }
            "dataset" => {
                self.source = if v == "synthetic" {
                    DataSource::Synthetic(SyntheticSpec::toy())
                } else {
                    DataSource::Directory(PathBuf::from(v))
                }
            }
            "glyphs" => self.spec_mut().glyphs = parse(key, v)?,
            "levels" => self.spec_mut().levels = parse(key, v)?,
            "placements" => self.spec_mut().placements = parse(key, v)?,
            "placement" => {
                self.spec_mut().placement = match v {
                    "position" => Placement::Position,
                    "scale" => Placement::Scale,
                    _ => return Err(Error::Config(format!("bad value {v:?} for key `placement` (position, scale)"))),
                }
            }
            "size" => self.spec_mut().size = parse(key, v)?,
            "channels" => self.spec_mut().channels = parse(key, v)?,
            "seed" | "seeds" => self.seeds = parse_list(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "lstr_iterations" => {
                let n: usize = parse(key, v)?;
                self.lstr_iterations = (n > 0).then_some(n);
            }
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "adam_lr" => self.adam_lr = parse(key, v)?,
            "sgd_lr" => self.sgd_lr = parse(key, v)?,
            "lstr_lr" => self.lstr_lr = parse(key, v)?,
            "batch" => {
                self.batch = match v {
                    "core-slice" => BatchStrategy::CoreSlice,
                    "full" => BatchStrategy::Full,
                    _ => return Err(Error::Config(format!("bad value {v:?} for key `batch` (core-slice, full)"))),
                }
            }
            "batch_cap" => {
                let n: usize = parse(key, v)?;
                self.batch_cap = (n > 0).then_some(n);
            }
            "csae_batch" => self.csae_batch = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "lstr_init_std" => self.lstr_init_std = parse(key, v)?,
            "early_stop_window" => self.early_stop_window = parse(key, v)?,
            "early_stop_tol" => self.early_stop_tol = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "record_seconds" => self.record_seconds = parse(key, v)?,
            "save_images" => self.save_images = parse(key, v)?,
            "parallel" => self.parallel_methods = parse(key, v)?,
            "execution" => {
                self.exec = match v {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(Error::Config(format!("bad value {v:?} for key `execution` (parallel, sequential)"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        if self.block == 0 {
            return Err(Error::Config("block must be positive".into()));
        }
        if let DataSource::Synthetic(spec) = &self.source {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.recovery_config(Method::TrAe, 0).validate()
    }

    /// Per-method recovery settings for one seed.
    pub fn recovery_config(&self, method: Method, seed: u64) -> RecoveryConfig {
        let iterations = match method {
            Method::Lstr => self.lstr_iterations.unwrap_or(self.iterations),
            _ => self.iterations,
        };
        RecoveryConfig {
            method,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            rank: self.rank,
            iterations,
            batch: self.batch,
            batch_cap: self.batch_cap,
            csae_batch: self.csae_batch,
            adam: AdamConfig {
                lr: self.adam_lr,
                ..AdamConfig::default()
            },
            sgd_lr: self.sgd_lr,
            lstr_lr: self.lstr_lr,
            seed,
            arch: None,
            init_std: self.init_std,
            lstr_init_std: self.lstr_init_std,
            early_stop_window: self.early_stop_window,
            early_stop_tol: self.early_stop_tol,
            exec: self.exec,
        }
    }

    /// Renders every key with its current value, in a form accepted by
    /// [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task_name().into());
        kv("snr_db", self.snr_db.to_string());
        kv("block", self.block.to_string());
        kv("methods", self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        match &self.source {
            DataSource::Synthetic(s) => {
                kv("dataset", "synthetic".into());
                kv("glyphs", s.glyphs.to_string());
                kv("levels", s.levels.to_string());
                kv("placements", s.placements.to_string());
                kv(
                    "placement",
                    match s.placement {
                        Placement::Position => "position".into(),
                        Placement::Scale => "scale".into(),
                    },
                );
                kv("size", s.size.to_string());
                kv("channels", s.channels.to_string());
            }
            DataSource::Directory(p) => kv("dataset", p.display().to_string()),
        }
        kv("seeds", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
        kv("rank", self.rank.to_string());
        kv("iterations", self.iterations.to_string());
        kv("lstr_iterations", self.lstr_iterations.unwrap_or(0).to_string());
        kv("lambda1", self.lambda1.to_string());
        kv("lambda2", self.lambda2.to_string());
        kv("adam_lr", self.adam_lr.to_string());
        kv("sgd_lr", self.sgd_lr.to_string());
        kv("lstr_lr", self.lstr_lr.to_string());
        kv(
            "batch",
            match self.batch {
                BatchStrategy::CoreSlice => "core-slice".into(),
                BatchStrategy::Full => "full".into(),
            },
        );
        kv("batch_cap", self.batch_cap.unwrap_or(0).to_string());
        kv("csae_batch", self.csae_batch.to_string());
        kv("init_std", self.init_std.to_string());
        kv("lstr_init_std", self.lstr_init_std.to_string());
        kv("early_stop_window", self.early_stop_window.to_string());
        kv("early_stop_tol", self.early_stop_tol.to_string());
        kv("out", self.out.display().to_string());
        kv("record_seconds", self.record_seconds.to_string());
        kv("save_images", self.save_images.to_string());
        kv("parallel", self.parallel_methods.to_string());
        kv(
            "execution",
            match self.exec {
                Execution::Parallel => "parallel".into(),
                Execution::Sequential => "sequential".into(),
            },
        );
        out
    }

    pub fn task(&self) -> Task {
        if self.inpaint {
            Task::Inpaint { block: self.block }
        } else {
            Task::Denoise { snr_db: self.snr_db }
        }
    }

    pub fn task_name(&self) -> &'static str {
        self.task().name()
    }
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub task: String,
    pub psnr_mean_db: f64,
    pub psnr_std_db: f64,
    pub masked_psnr_db: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{},{},{:.3}",
            self.method,
            self.task,
            self.psnr_mean_db,
            self.psnr_std_db,
            self.masked_psnr_db.map(|m| format!("{m:.4}")).unwrap_or_default(),
            self.iterations,
            self.seconds
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Invalid(format!("report row needs 7 fields: {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Invalid(format!("bad number {s:?} in {line:?}")));
        Ok(Self {
            method: f[0].into(),
            task: f[1].into(),
            psnr_mean_db: num(f[2])?,
            psnr_std_db: num(f[3])?,
            masked_psnr_db: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            iterations: f[5].parse().map_err(|_| Error::Invalid(format!("bad count in {line:?}")))?,
            seconds: num(f[6])?,
        })
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Invalid("report does not start with the expected header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(ReportRow::from_csv).collect()
}

/// Scores reconstructions against ground truth; the masked PSNR is taken
/// over each operator's hole when every operator has one.
pub fn score(
    recovered: &[DenseTensor],
    truth: &[DenseTensor],
    holes: &[Option<DenseTensor>],
) -> Result<(f64, f64, Option<f64>)> {
    if recovered.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "{} reconstructions for {} images",
            recovered.len(),
            truth.len()
        )));
    }
    let per_image = recovered
        .iter()
        .zip(truth)
        .map(|(x, t)| psnr(x, t))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&per_image);
    let masked = if !holes.is_empty() && holes.iter().all(Option::is_some) {
        let per_image = recovered
            .iter()
            .zip(truth)
            .zip(holes)
            .map(|((x, t), h)| masked_psnr(x, t, h.as_ref().expect("checked")))
            .collect::<Result<Vec<_>>>()?;
        Some(mean_std(&per_image).0)
    } else {
        None
    };
    Ok((mean, std, masked))
}

/// Outcome of one method on one seed.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub seed: u64,
    pub entry: Entry,
    pub row: ReportRow,
    pub result: Option<RecoveryResult>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<MethodRun>,
    /// Mean input PSNR per seed.
    pub input_psnr_db: Vec<f64>,
}

fn load_source(cfg: &ExperimentConfig) -> Result<StructuredDataset> {
    match &cfg.source {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::Directory(dir) => StructuredDataset::load_directory(dir),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes recovered images, the loss trace and checkpoints of `result`.
pub fn save_result(result: &RecoveryResult, dims: &[usize], dir: &Path, images: bool) -> Result<()> {
    create_dir(dir)?;
    if images {
        for (flat, img) in result.recovered.iter().enumerate() {
            let idx = MultiIndex::from_flat(flat, dims)?;
            crate::pnm::write(&StructuredDataset::image_path(dir, &idx, img.shape()[0]), img)?;
        }
    }
    recovery::write_loss_csv(&dir.join("loss.csv"), &result.trace)?;
    if let Some(cores) = &result.cores {
        cores.save(&dir.join("cores.trc"))?;
    }
    if let Some(params) = &result.params {
        params.save(&dir.join("params.aep"))?;
    }
    Ok(())
}

/// Generates or loads the dataset, then for every seed corrupts it, runs
/// every requested method on the measurements alone and scores the
/// reconstructions against ground truth.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let clean = load_source(cfg)?;
    let truth = clean.images()?.to_vec();
    let [c, h, w] = clean.image_shape;
    let latent = Architecture::standard(c, h, w).latent_dim();
    if cfg.methods.contains(&Entry::Method(Method::TrAe)) && !recovery::ring_compresses(&clean.attribute_dims, latent, cfg.rank) {
        return Err(Error::Config(format!(
            "rank {} does not compress a {latent}-dimensional code over {:?}",
            cfg.rank, clean.attribute_dims
        )));
    }
    create_dir(&cfg.out)?;
    let mut runs = Vec::new();
    let mut input_psnr_db = Vec::new();
    for &seed in &cfg.seeds {
        let corrupted = corrupt_dataset(&clean, cfg.task(), seed)?;
        let info = corrupted.corruption.as_ref().expect("just corrupted");
        input_psnr_db.push(info.input_psnr_db.expect("computed during corruption"));
        let seed_dir = cfg.out.join(format!("seed{seed}"));
        StructuredDataset {
            images: None,
            ..corrupted.clone()
        }
        .save_directory(&seed_dir)?;
        let obs = corrupted.observations()?.clone();
        let holes: Vec<Option<DenseTensor>> = obs.ops.iter().map(|op| op.hole()).collect();

        let train_one = |entry: Entry| -> Result<Option<RecoveryResult>> {
            match entry {
                Entry::Method(m) => {
                    log::info!("seed {seed}: training {}", m.name());
                    recovery::train(&obs, &cfg.recovery_config(m, seed)).map(Some)
                }
                Entry::Input => Ok(None),
            }
        };
        let results: Vec<Result<Option<RecoveryResult>>> = if cfg.parallel_methods {
            std::thread::scope(|s| {
                let handles: Vec<_> = cfg.methods.iter().map(|&e| s.spawn(move || train_one(e))).collect();
                handles.into_iter().map(|h| h.join().expect("method thread panicked")).collect()
            })
        } else {
            cfg.methods.iter().map(|&e| train_one(e)).collect()
        };

        for (&entry, result) in cfg.methods.iter().zip(results) {
            let result = result?;
            let (recovered, iterations, seconds) = match &result {
                Some(r) => (r.recovered.clone(), r.steps, r.seconds),
                None => (obs.measurements.iter().map(|y| y.map(|v| v.clamp(0.0, 1.0))).collect(), 0, 0.0),
            };
            let (mean, std, masked) = score(&recovered, &truth, &holes)?;
            let row = ReportRow {
                method: entry.name().into(),
                task: cfg.task_name().into(),
                psnr_mean_db: mean,
                psnr_std_db: std,
                masked_psnr_db: masked,
                iterations,
                seconds: if cfg.record_seconds { seconds } else { 0.0 },
            };
            log::info!("seed {seed}: {}", row.to_csv());
            if let Some(r) = &result {
                let dir = cfg.out.join(entry.name()).join(format!("seed{seed}"));
                save_result(r, &obs.attribute_dims, &dir, cfg.save_images)?;
            }
            runs.push(MethodRun {
                seed,
                entry,
                row,
                result,
            });
        }
    }
    let rows: Vec<ReportRow> = runs.iter().map(|r| r.row.clone()).collect();
    let path = cfg.out.join("report.csv");
    std::fs::write(&path, report_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentOutcome {
        rows,
        runs,
        input_psnr_db,
    })
}

/// Mean over seeds of each method's PSNRs, in first-appearance order.
pub fn aggregate(rows: &[ReportRow]) -> Vec<(String, String, f64, Option<f64>, usize)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.task.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(m, t)| {
            let group: Vec<&ReportRow> = rows.iter().filter(|r| r.method == m && r.task == t).collect();
            let psnr = mean_std(&group.iter().map(|r| r.psnr_mean_db).collect::<Vec<_>>()).0;
            let masked: Option<Vec<f64>> = group.iter().map(|r| r.masked_psnr_db).collect();
            let masked = masked.map(|v| mean_std(&v).0);
            (m, t, psnr, masked, group.len())
        })
        .collect()
}
