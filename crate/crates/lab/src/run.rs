//! Run directories: training, resuming and population evaluation.
//!
//! A finished run directory holds `config.toml` (explicit snapshot),
//! `run.json`, `metrics.jsonl`, `checkpoint.ofas`, `population.csv` and
//! `summary.json`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use ofa_core::data::{AugmentPolicy, Dataset, DatasetId, Normalization};
use ofa_core::eval::{format_bin, BinSummary, EvalSettings};
use ofa_core::rng::Stream;
use ofa_core::schemes::{describe, Method};
use ofa_core::train::{train_from, EpochRecord, Resume, TrainObserver};
use ofa_core::{build_supernet, evaluate_population, PopulationReport, SupernetParams};

use crate::checkpoint::{write_atomic, Checkpoint, CheckpointHeader};
use crate::config::ExperimentConfig;
use crate::datasets::{prepare, resolve_root, Prepared};
use crate::error::{LabError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const RECORD_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ofas";
pub const POPULATION_FILE: &str = "population.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: Method,
    pub dataset: DatasetId,
    pub seed: u64,
    pub version: String,
    pub scheme: String,
    pub augment: AugmentPolicy,
    pub normalization: Normalization,
    pub train_examples: usize,
    pub total_epochs: usize,
    pub epochs_completed: usize,
    pub cumulative_macs: u64,
    /// Training wall-clock from the start of the first epoch to the end of the
    /// last, summed over resumed segments.
    pub wall_seconds: f64,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub config: String,
    pub metrics: String,
    pub checkpoint: String,
    pub population: Option<String>,
    pub summary: Option<String>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(RECORD_FILE))
    }

    pub fn is_complete(&self) -> bool {
        self.epochs_completed == self.total_epochs && self.population.is_some()
    }
}

/// One row of `population.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub run_id: String,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub bin_mflops: f64,
    pub subnet_index: usize,
    pub config_hash: String,
    pub exact_mflops: f64,
    pub params: usize,
    pub top1: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub run_id: String,
    pub method: Method,
    pub dataset: DatasetId,
    pub seed: u64,
    pub settings: EvalSettings,
    pub test_examples: usize,
    pub calibration_images: usize,
    pub mean_over_bins: f64,
    pub bin_spread: f64,
    pub overall_mean: f64,
    pub bins: Vec<BinSummary>,
    pub eval_seconds: f64,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data_root: Option<PathBuf>,
    pub no_eval: bool,
}

struct RunObserver<'a> {
    clock: Instant,
    dir: &'a Path,
    metrics: File,
    header: CheckpointHeader,
}

impl TrainObserver for RunObserver<'_> {
    fn now(&mut self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, record: &EpochRecord, net: &SupernetParams) -> ofa_core::Result<()> {
        let io = |e: LabError| ofa_core::Error::Config(e.to_string());
        let line = serde_json::to_string(record).expect("epoch record serialises");
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| io(LabError::io(self.dir.join(METRICS_FILE), e)))?;
        self.header.epochs_completed = record.epoch + 1;
        self.header.cumulative_macs = record.cumulative_macs;
        Checkpoint::capture(self.header.clone(), net)
            .save(&self.dir.join(CHECKPOINT_FILE))
            .map_err(io)?;
        log::info!(
            "epoch {}/{} lr {:.5} loss {:.4} subnets {} ({} distinct) {:.1}s",
            record.epoch + 1,
            self.header.total_epochs,
            record.lr,
            record.mean_loss,
            record.subnet_samples,
            record.distinct_subnets,
            record.seconds
        );
        Ok(())
    }
}

/// Reads the epoch log, keeping only records before `completed`.
pub fn read_metrics(path: &Path, completed: usize) -> Result<Vec<EpochRecord>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(LabError::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpochRecord = serde_json::from_str(&line).map_err(|e| LabError::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        if r.epoch < completed {
            out.push(r);
        }
    }
    Ok(out)
}

fn training_subset(cfg: &ExperimentConfig, train: &Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < train.len() => train.random_subset(n, cfg.seed, Stream::Shuffle),
        _ => train.clone(),
    }
}

/// Trains `cfg` in a fresh run directory and, unless disabled, evaluates the
/// resulting population.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<RunRecord> {
    let snapshot = cfg.explicit()?;
    let dir = snapshot.run_dir();
    if dir.join(CHECKPOINT_FILE).exists() || dir.join(RECORD_FILE).exists() {
        return Err(LabError::Usage(format!(
            "{} already holds a run; pass --resume to continue it",
            dir.display()
        )));
    }
    let root = resolve_root(opts.data_root.as_deref().or(snapshot.data_root.as_deref()));
    let data = prepare(&root, snapshot.dataset, None)?;
    std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    write_atomic(&dir.join(CONFIG_FILE), snapshot.to_toml()?.as_bytes())?;
    run_training(&snapshot, &dir, data, None, opts)
}

/// Continues the run in `dir` from its last completed epoch.
pub fn resume(dir: &Path, opts: &TrainOptions) -> Result<RunRecord> {
    let snapshot = ExperimentConfig::from_file(&dir.join(CONFIG_FILE), &[])?;
    let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let root = resolve_root(opts.data_root.as_deref().or(snapshot.data_root.as_deref()));
    let data = prepare(&root, snapshot.dataset, ck.header.normalization.as_ref())?;
    run_training(&snapshot, dir, data, Some(ck), opts)
}

fn run_training(
    snapshot: &ExperimentConfig,
    dir: &Path,
    data: Prepared,
    from: Option<Checkpoint>,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    let r = snapshot.resolve()?;
    let train_set = training_subset(snapshot, &data.train, r.train_subset);
    let (mut net, start, prior) = match &from {
        Some(ck) => {
            if ck.header.arch != r.arch || ck.header.method != snapshot.method {
                return Err(LabError::Usage(format!(
                    "checkpoint in {} does not match its config snapshot",
                    dir.display()
                )));
            }
            let resume = Resume {
                epoch: ck.header.epochs_completed,
                cumulative_macs: ck.header.cumulative_macs,
            };
            let prior = RunRecord::load(dir).ok();
            (ck.restore()?, resume, prior)
        }
        None => (
            build_supernet(&r.arch, snapshot.seed)?.with_dropout(r.train.dropout)?,
            Resume::default(),
            None,
        ),
    };
    let kept = read_metrics(&dir.join(METRICS_FILE), start.epoch)?;
    let prior_wall: f64 = kept.iter().map(|k| k.seconds).sum();
    let mut metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(dir.join(METRICS_FILE))
        .map_err(|e| LabError::io(dir.join(METRICS_FILE), e))?;
    for k in &kept {
        writeln!(metrics, "{}", serde_json::to_string(k).expect("serialises"))
            .map_err(|e| LabError::io(dir.join(METRICS_FILE), e))?;
    }
    let mut record = RunRecord {
        run_id: snapshot.run_id(),
        method: snapshot.method,
        dataset: snapshot.dataset,
        seed: snapshot.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        scheme: format!("{} ({:?} lr)", describe(&r.spec.kind), r.spec.lr_policy),
        augment: r.train.augment,
        normalization: data.normalization.clone(),
        train_examples: train_set.len(),
        total_epochs: r.train.epochs,
        epochs_completed: start.epoch,
        cumulative_macs: start.cumulative_macs,
        wall_seconds: prior_wall,
        started_unix: prior.as_ref().map_or_else(unix_now, |p| p.started_unix),
        finished_unix: None,
        config: CONFIG_FILE.into(),
        metrics: METRICS_FILE.into(),
        checkpoint: CHECKPOINT_FILE.into(),
        population: None,
        summary: None,
    };
    write_json(&dir.join(RECORD_FILE), &record)?;
    log::info!(
        "{}: {} on {} from epoch {} of {}",
        record.run_id,
        snapshot.method,
        snapshot.dataset,
        start.epoch,
        r.train.epochs
    );
    let header = CheckpointHeader {
        arch: r.arch.clone(),
        dataset: snapshot.dataset,
        method: snapshot.method,
        seed: snapshot.seed,
        dropout: r.train.dropout,
        epochs_completed: start.epoch,
        total_epochs: r.train.epochs,
        cumulative_macs: start.cumulative_macs,
        normalization: Some(data.normalization.clone()),
    };
    if from.is_none() {
        Checkpoint::capture(header.clone(), &net).save(&dir.join(CHECKPOINT_FILE))?;
    }
    let mut observer = RunObserver {
        clock: Instant::now(),
        dir,
        metrics,
        header,
    };
    let summary = train_from(&mut net, &r.spec, &r.train, &train_set, start, &mut observer)?;
    record.epochs_completed = r.train.epochs;
    record.cumulative_macs = summary.cumulative_macs;
    record.wall_seconds += summary.finished - summary.started;
    record.finished_unix = Some(unix_now());
    write_json(&dir.join(RECORD_FILE), &record)?;
    if !opts.no_eval {
        let (report, _) = evaluate_loaded(snapshot, dir, &net, &data, &r.eval, r.test_subset)?;
        log::info!("mean over bins {:.4}", report.mean_over_bins());
        record = RunRecord::load(dir)?;
    }
    Ok(record)
}

fn evaluate_loaded(
    snapshot: &ExperimentConfig,
    dir: &Path,
    net: &SupernetParams,
    data: &Prepared,
    settings: &EvalSettings,
    test_subset: Option<usize>,
) -> Result<(PopulationReport, EvalSummary)> {
    let t0 = Instant::now();
    let test = match test_subset {
        Some(n) if n < data.test.len() => data.test.random_subset(n, settings.seed, Stream::Eval),
        _ => data.test.clone(),
    };
    let calib = settings.calibrate.then(|| {
        data.train
            .random_subset(settings.calibration_images, settings.seed, Stream::Calibration)
    });
    let report = evaluate_population(net, settings, &test, calib.as_ref())?;
    for b in &report.bins {
        log::info!("{}", format_bin(b));
    }
    let run_id = snapshot.run_id();
    let rows: Vec<PopulationRow> = report
        .entries
        .iter()
        .map(|e| PopulationRow {
            run_id: run_id.clone(),
            method: snapshot.method.name().into(),
            dataset: snapshot.dataset.name().into(),
            seed: snapshot.seed,
            bin_mflops: e.bin_mflops,
            subnet_index: e.subnet_index,
            config_hash: e.config_hash.clone(),
            exact_mflops: e.exact_mflops,
            params: e.params,
            top1: e.top1,
        })
        .collect();
    write_atomic(&dir.join(POPULATION_FILE), &population_csv(&rows)?)?;
    let summary = EvalSummary {
        run_id,
        method: snapshot.method,
        dataset: snapshot.dataset,
        seed: snapshot.seed,
        settings: settings.clone(),
        test_examples: test.len(),
        calibration_images: report.calibration_images,
        mean_over_bins: report.mean_over_bins(),
        bin_spread: report.bin_spread(),
        overall_mean: report.overall_mean,
        bins: report.bins.clone(),
        eval_seconds: t0.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    if let Ok(mut record) = RunRecord::load(dir) {
        record.population = Some(POPULATION_FILE.into());
        record.summary = Some(SUMMARY_FILE.into());
        write_json(&dir.join(RECORD_FILE), &record)?;
    }
    Ok((report, summary))
}

pub fn population_csv(rows: &[PopulationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| LabError::Usage(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| LabError::Usage(format!("csv: {}", e.error())))
}

pub fn read_population(path: &Path) -> Result<Vec<PopulationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::format(path, offset, format!("{other:?}")),
    }
}

/// Settings changes accepted by [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalOverrides {
    pub bins: Option<Vec<f64>>,
    pub n_per_bin: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub calibrate: Option<bool>,
    pub test_subset: Option<usize>,
    pub data_root: Option<PathBuf>,
}

/// Evaluates the population of a trained run directory, or of a bare
/// checkpoint file (results are written next to it).
pub fn evaluate(target: &Path, ov: &EvalOverrides) -> Result<EvalSummary> {
    let (dir, ck_path) = if target.is_dir() {
        (target.to_path_buf(), target.join(CHECKPOINT_FILE))
    } else {
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty());
        (parent.unwrap_or(Path::new(".")).to_path_buf(), target.to_path_buf())
    };
    let ck = Checkpoint::load(&ck_path)?;
    let snapshot = match ExperimentConfig::from_file(&dir.join(CONFIG_FILE), &[]) {
        Ok(c) => c,
        Err(LabError::Io { .. }) => {
            let mut c = ExperimentConfig::new(ck.header.method, ck.header.dataset);
            c.seed = ck.header.seed;
            c.arch = Some(ck.header.arch.clone());
            c.run_id = dir.file_name().map(|n| n.to_string_lossy().into_owned());
            c
        }
        Err(e) => return Err(e),
    };
    let r = snapshot.resolve()?;
    let mut settings = r.eval.clone();
    if let Some(b) = &ov.bins {
        settings.bins = b.clone();
    }
    if let Some(n) = ov.n_per_bin {
        settings.n_per_bin = n;
    }
    if let Some(t) = ov.tol {
        settings.tol = t;
    }
    if let Some(s) = ov.seed {
        settings.seed = s;
    }
    if let Some(c) = ov.calibrate {
        settings.calibrate = c;
    }
    let test_subset = ov.test_subset.or(r.test_subset);
    let root = resolve_root(ov.data_root.as_deref().or(snapshot.data_root.as_deref()));
    let data = prepare(&root, ck.header.dataset, ck.header.normalization.as_ref())?;
    let net = ck.restore()?;
    let (_, summary) = evaluate_loaded(&snapshot, &dir, &net, &data, &settings, test_subset)?;
    Ok(summary)
}
