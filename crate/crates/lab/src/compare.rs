//! Cross-run comparison: per-bin accuracy series and training cost.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::write_atomic;
use crate::error::{LabError, Result};
use crate::run::{read_population, PopulationRow, RunRecord, POPULATION_FILE};

pub const SERIES_FILE: &str = "series.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone)]
pub struct RunData {
    pub record: RunRecord,
    pub rows: Vec<PopulationRow>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let record = RunRecord::load(dir)?;
        let rows = read_population(&dir.join(POPULATION_FILE))?;
        Ok(RunData { record, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub bin_mflops: f64,
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub count: usize,
    pub mean_top1: f64,
    pub best_top1: f64,
    pub worst_top1: f64,
    pub stddev_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub wall_hours: f64,
    pub cumulative_macs: u64,
    /// First run's wall-clock over this run's.
    pub speedup: f64,
    /// First run's training MACs over this run's.
    pub mac_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub series: Vec<SeriesRow>,
    pub timing: Vec<TimingRow>,
}

pub fn compare(runs: &[RunData]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(LabError::Usage("compare needs at least two runs".into()));
    }
    let dataset = runs[0].record.dataset;
    if let Some(other) = runs.iter().find(|r| r.record.dataset != dataset) {
        return Err(LabError::Usage(format!(
            "runs mix datasets: {} is {}, {} is {}",
            runs[0].record.run_id, dataset, other.record.run_id, other.record.dataset
        )));
    }
    let mut bins: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.bin_mflops))
        .collect();
    bins.sort_by(f64::total_cmp);
    bins.dedup();
    let mut series = Vec::new();
    for &bin in &bins {
        for run in runs {
            let accs: Vec<f64> = run
                .rows
                .iter()
                .filter(|r| r.bin_mflops == bin)
                .map(|r| r.top1)
                .collect();
            if accs.is_empty() {
                continue;
            }
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            series.push(SeriesRow {
                bin_mflops: bin,
                run_id: run.record.run_id.clone(),
                method: run.record.method.name().into(),
                seed: run.record.seed,
                count: accs.len(),
                mean_top1: mean,
                best_top1: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                worst_top1: accs.iter().copied().fold(f64::INFINITY, f64::min),
                stddev_top1: var.sqrt(),
            });
        }
    }
    let first = &runs[0].record;
    let timing = runs
        .iter()
        .map(|r| {
            let rec = &r.record;
            TimingRow {
                run_id: rec.run_id.clone(),
                method: rec.method.name().into(),
                seed: rec.seed,
                epochs: rec.epochs_completed,
                wall_seconds: rec.wall_seconds,
                wall_hours: rec.wall_seconds / 3600.0,
                cumulative_macs: rec.cumulative_macs,
                speedup: first.wall_seconds / rec.wall_seconds,
                mac_ratio: first.cumulative_macs as f64 / rec.cumulative_macs as f64,
            }
        })
        .collect();
    Ok(Comparison { series, timing })
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| LabError::Usage(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| LabError::Usage(format!("csv: {}", e.error())))
}

/// Loads the run directories, compares them and writes the two CSV files
/// into `out`. Returns the written paths.
pub fn compare_dirs(dirs: &[PathBuf], out: &Path) -> Result<(Comparison, Vec<PathBuf>)> {
    let runs: Vec<RunData> = dirs.iter().map(|d| RunData::load(d)).collect::<Result<_>>()?;
    let cmp = compare(&runs)?;
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let series = out.join(SERIES_FILE);
    let timing = out.join(TIMING_FILE);
    write_atomic(&series, &to_csv(&cmp.series)?)?;
    write_atomic(&timing, &to_csv(&cmp.timing)?)?;
    Ok((cmp, vec![series, timing]))
}
