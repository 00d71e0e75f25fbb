use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ofa_core::data::DatasetId;
use ofa_core::schemes::{describe, Method};
use ofa_core::{count_macs, mflops, population_size, ArchSpec, SubnetConfig};
use ofa_lab::compare::compare_dirs;
use ofa_lab::config::ExperimentConfig;
use ofa_lab::run::{self, EvalOverrides, TrainOptions};
use ofa_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "ofa", version, about = "Train and evaluate weight-sharing supernets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a supernet and evaluate its population.
    Train {
        /// Experiment config (TOML).
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Dotted override, e.g. `train.batch_size=128`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        no_eval: bool,
        /// Continue the run in this directory from its last checkpoint.
        #[arg(long, value_name = "RUN_DIR", conflicts_with_all = ["config", "method", "dataset"])]
        resume: Option<PathBuf>,
        /// Dataset root (defaults to $OFA_DATA_ROOT, then ./data).
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Evaluate the subnet population of a run directory or checkpoint.
    Eval {
        target: PathBuf,
        /// Comma-separated MFLOP bin centres.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<f64>>,
        #[arg(long)]
        n_per_bin: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_calibrate: bool,
        #[arg(long)]
        test_subset: Option<usize>,
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Compare finished runs on one dataset.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Exact MFLOPs of a subnet config given as JSON.
    Flops {
        #[arg(long)]
        config: String,
        #[arg(long, default_value = "mnist")]
        dataset: String,
        /// Print the integer MAC count instead.
        #[arg(long)]
        macs: bool,
    },
    /// Number of distinct subnets in the search space.
    PopulationSize {
        #[arg(long, default_value = "mnist")]
        dataset: String,
    },
    /// List the available training methods.
    Schemes {
        #[arg(long, default_value = "mnist")]
        dataset: String,
    },
}

fn dataset(s: &str) -> Result<DatasetId> {
    s.parse().map_err(|e: ofa_core::Error| LabError::Usage(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            method,
            dataset,
            seed,
            out_dir,
            overrides,
            no_augment,
            no_eval,
            resume,
            data_root,
        } => {
            let opts = TrainOptions { data_root, no_eval };
            let record = match resume {
                Some(dir) => run::resume(&dir, &opts)?,
                None => {
                    let mut ov = Vec::new();
                    if let Some(m) = method {
                        ov.push(format!("method={m}"));
                    }
                    if let Some(d) = dataset {
                        ov.push(format!("dataset={d}"));
                    }
                    if let Some(s) = seed {
                        ov.push(format!("seed={s}"));
                    }
                    if let Some(o) = out_dir {
                        ov.push(format!("out_dir=\"{}\"", o.display()));
                    }
                    if no_augment {
                        ov.push("train.augment=false".into());
                    }
                    ov.extend(overrides);
                    let cfg = match config {
                        Some(p) => ExperimentConfig::from_file(&p, &ov)?,
                        None => ExperimentConfig::from_toml("", &ov)?,
                    };
                    run::train(&cfg, &opts)?
                }
            };
            println!(
                "{}: {} epochs, {:.1} s, {} training MACs",
                record.run_id, record.epochs_completed, record.wall_seconds, record.cumulative_macs
            );
        }
        Command::Eval {
            target,
            bins,
            n_per_bin,
            tol,
            seed,
            no_calibrate,
            test_subset,
            data_root,
        } => {
            let ov = EvalOverrides {
                bins,
                n_per_bin,
                tol,
                seed,
                calibrate: no_calibrate.then_some(false),
                test_subset,
                data_root,
            };
            let s = run::evaluate(&target, &ov)?;
            for b in &s.bins {
                println!("{}", ofa_core::eval::format_bin(b));
            }
            println!("mean over bins {:.4}, spread {:.4}", s.mean_over_bins, s.bin_spread);
        }
        Command::Compare { runs, out } => {
            let (cmp, files) = compare_dirs(&runs, &out)?;
            for t in &cmp.timing {
                println!(
                    "{:<32} {:>10.1} s {:>22} MACs  speedup {:.2}x  MAC ratio {:.2}x",
                    t.run_id, t.wall_seconds, t.cumulative_macs, t.speedup, t.mac_ratio
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Flops {
            config,
            dataset: d,
            macs,
        } => {
            let arch = ArchSpec::for_dataset(dataset(&d)?);
            let cfg: SubnetConfig = serde_json::from_str(&config).map_err(|e| LabError::Json {
                context: "subnet config".into(),
                source: e,
            })?;
            let m = count_macs(&cfg, &arch)?;
            if macs {
                println!("{m}");
            } else {
                println!("{}", mflops(m));
            }
        }
        Command::PopulationSize { dataset: d } => {
            println!("{}", population_size(&ArchSpec::for_dataset(dataset(&d)?)));
        }
        Command::Schemes { dataset: d } => {
            let id = dataset(&d)?;
            for m in Method::ALL {
                let spec = m.scheme(id);
                println!(
                    "{:<16} {:>4} epochs  {:?} lr  {}  [{}]",
                    m.name(),
                    m.epochs(id),
                    spec.lr_policy,
                    m.description(),
                    describe(&spec.kind)
                );
            }
        }
    }
    Ok(())
}

/// Keeps large buffers on the heap instead of fresh mappings; training
/// reallocates tens of megabytes per step and page faults dominate otherwise.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tune_allocator();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
