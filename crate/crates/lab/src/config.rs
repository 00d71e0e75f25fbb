//! Experiment configuration: a TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use ofa_core::data::{AugmentPolicy, DatasetId};
use ofa_core::eval::EvalSettings;
use ofa_core::optim::{LrPolicy, DEFAULT_BASE_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use ofa_core::schemes::{epoch_budget, Method, SchemeKind, SchemeSpec};
use ofa_core::supernet::DEFAULT_DROPOUT;
use ofa_core::{ArchSpec, TrainConfig};

use crate::error::{LabError, Result};

fn method_de<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Method, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn method_ser<S: Serializer>(m: &Method, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(m.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "method_de", serialize_with = "method_ser")]
    pub method: Method,
    pub dataset: DatasetId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchSpec>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Defaults to the method's budget for the dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Progressive shrinking only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supernet_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_policy: Option<LrPolicy>,
    /// Use the dataset's augmentation policy.
    pub augment: bool,
    /// Train on a seeded random subset of this many examples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
}

/// Shortest decimal form of `x`, so `0.01f32` becomes `0.01` rather than
/// `0.009999999776482582`.
fn widen(x: f32) -> f64 {
    x.to_string().parse().expect("f32 display parses as f64")
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 64,
            base_lr: widen(DEFAULT_BASE_LR),
            momentum: widen(DEFAULT_MOMENTUM),
            weight_decay: widen(DEFAULT_WEIGHT_DECAY),
            dropout: widen(DEFAULT_DROPOUT),
            epochs: None,
            supernet_epochs: None,
            lr_policy: None,
            augment: true,
            train_subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub bins: Vec<f64>,
    pub n_per_bin: usize,
    pub tol: f64,
    pub max_tries: usize,
    pub calibrate: bool,
    pub calibration_images: usize,
    pub batch_size: usize,
    /// Defaults to the experiment seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Evaluate on a seeded random subset of the test split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalSettings::default();
        EvalSection {
            bins: d.bins,
            n_per_bin: d.n_per_bin,
            tol: d.tol,
            max_tries: d.max_tries,
            calibrate: d.calibrate,
            calibration_images: d.calibration_images,
            batch_size: d.batch_size,
            seed: None,
            test_subset: None,
        }
    }
}

pub const TOP_KEYS: [&str; 9] = [
    "method", "dataset", "seed", "out_dir", "run_id", "data_root", "train", "eval", "arch",
];
pub const TRAIN_KEYS: [&str; 10] = [
    "batch_size",
    "base_lr",
    "momentum",
    "weight_decay",
    "dropout",
    "epochs",
    "supernet_epochs",
    "lr_policy",
    "augment",
    "train_subset",
];
pub const EVAL_KEYS: [&str; 9] = [
    "bins",
    "n_per_bin",
    "tol",
    "max_tries",
    "calibrate",
    "calibration_images",
    "batch_size",
    "seed",
    "test_subset",
];
pub const ARCH_KEYS: [&str; 13] = [
    "num_blocks",
    "max_depth",
    "in_channels",
    "stem_channels",
    "stem_kernel",
    "stem_padding",
    "block_out_channels",
    "block_strides",
    "num_classes",
    "input_hw",
    "kernel_choices",
    "width_choices",
    "depth_choices",
];

/// Every key accepted in a file or as an override, dotted.
pub fn valid_keys() -> Vec<String> {
    let mut keys: Vec<String> = TOP_KEYS
        .iter()
        .filter(|k| !matches!(**k, "train" | "eval" | "arch"))
        .map(|k| k.to_string())
        .collect();
    keys.extend(TRAIN_KEYS.iter().map(|k| format!("train.{k}")));
    keys.extend(EVAL_KEYS.iter().map(|k| format!("eval.{k}")));
    keys.extend(ARCH_KEYS.iter().map(|k| format!("arch.{k}")));
    keys
}

fn usage(msg: impl Into<String>) -> LabError {
    LabError::Usage(msg.into())
}

fn check_key(key: &str) -> Result<()> {
    if valid_keys().iter().any(|k| k == key) {
        Ok(())
    } else {
        Err(usage(format!(
            "unknown config key `{key}`; valid keys: {}",
            valid_keys().join(", ")
        )))
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
pub fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    check_key(key)?;
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("non-empty key");
    let mut cur = table;
    for section in parts {
        if section == "arch" && !cur.contains_key("arch") {
            let dataset: DatasetId = cur
                .get("dataset")
                .and_then(|v| v.as_str())
                .ok_or_else(|| usage("arch overrides need `dataset` to be set"))?
                .parse()?;
            let default = toml::Value::try_from(ArchSpec::for_dataset(dataset))
                .map_err(|e| usage(format!("arch: {e}")))?;
            cur.insert("arch".into(), default);
        }
        cur = cur
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| usage(format!("`{section}` is not a table")))?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn new(method: Method, dataset: DatasetId) -> Self {
        ExperimentConfig {
            method,
            dataset,
            seed: 0,
            out_dir: default_out_dir(),
            run_id: None,
            data_root: None,
            train: TrainSection::default(),
            eval: EvalSection::default(),
            arch: None,
        }
    }

    /// Parses TOML text and applies `key=value` overrides in order. Non-arch
    /// overrides go first so `dataset` is known when a default arch is filled in.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        for key in table.keys() {
            if !TOP_KEYS.contains(&key.as_str()) {
                check_key(key)?;
            }
        }
        let mut parsed = Vec::with_capacity(overrides.len());
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("override `{o}` is not key=value")))?;
            parsed.push((k.trim().to_string(), parse_value(v.trim())));
        }
        let (arch, rest): (Vec<_>, Vec<_>) =
            parsed.into_iter().partition(|(k, _)| k.starts_with("arch."));
        for (k, v) in rest.into_iter().chain(arch) {
            apply_override(&mut table, &k, v)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        ExperimentConfig::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}-s{}", self.method, self.dataset, self.seed))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_id())
    }

    /// Fills in everything that defaults from the method and dataset so the
    /// result reruns identically even if those defaults change.
    pub fn explicit(&self) -> Result<Self> {
        let r = self.resolve()?;
        let mut out = self.clone();
        out.run_id = Some(self.run_id());
        out.train.epochs = Some(r.train.epochs);
        out.train.lr_policy = Some(r.spec.lr_policy);
        if let SchemeKind::ProgressiveShrinking {
            supernet_epochs, ..
        } = r.spec.kind
        {
            out.train.supernet_epochs = Some(supernet_epochs);
        }
        out.eval.seed = Some(r.eval.seed);
        out.arch = Some(r.arch);
        Ok(out)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let arch = self
            .arch
            .clone()
            .unwrap_or_else(|| ArchSpec::for_dataset(self.dataset));
        arch.validate()?;
        let (c, h, w) = self.dataset.image_shape();
        if arch.in_channels != c || arch.input_hw != (h, w) {
            return Err(usage(format!(
                "arch expects {}x{:?} inputs, {} has {c}x({h}, {w})",
                arch.in_channels,
                arch.input_hw,
                self.dataset
            )));
        }
        if arch.num_classes != self.dataset.class_count() {
            return Err(usage(format!(
                "arch has {} classes, {} has {}",
                arch.num_classes,
                self.dataset,
                self.dataset.class_count()
            )));
        }
        let t = &self.train;
        let epochs = t.epochs.unwrap_or_else(|| self.method.epochs(self.dataset));
        let mut spec = self.method.scheme(self.dataset);
        match spec.kind {
            SchemeKind::ProgressiveShrinking { .. } => {
                let b = epoch_budget(self.dataset);
                let supernet = match (t.supernet_epochs, t.epochs) {
                    (Some(s), _) => s,
                    (None, None) => b.supernet,
                    (None, Some(e)) => {
                        let share = b.supernet as f64 / (b.supernet + b.shrinking) as f64;
                        (e as f64 * share).round() as usize
                    }
                };
                if supernet > epochs {
                    return Err(usage(format!(
                        "supernet_epochs {supernet} exceeds epochs {epochs}"
                    )));
                }
                spec.kind = SchemeKind::progressive_shrinking(supernet, epochs - supernet);
            }
            _ if t.supernet_epochs.is_some() => {
                return Err(usage(format!(
                    "train.supernet_epochs only applies to {}",
                    Method::OfaPs
                )));
            }
            _ => {}
        }
        if let Some(p) = t.lr_policy {
            spec = spec.with_lr_policy(p);
        }
        let train = TrainConfig {
            dataset: self.dataset,
            batch_size: t.batch_size,
            base_lr: t.base_lr as f32,
            momentum: t.momentum as f32,
            weight_decay: t.weight_decay as f32,
            dropout: t.dropout as f32,
            epochs,
            seed: self.seed,
            augment: if t.augment {
                self.dataset.default_augment()
            } else {
                AugmentPolicy::NONE
            },
        };
        train.validate(&spec)?;
        let e = &self.eval;
        let eval = EvalSettings {
            bins: e.bins.clone(),
            n_per_bin: e.n_per_bin,
            tol: e.tol,
            max_tries: e.max_tries,
            calibrate: e.calibrate,
            calibration_images: e.calibration_images,
            batch_size: e.batch_size,
            seed: e.seed.unwrap_or(self.seed),
        };
        if eval.batch_size == 0 || !(eval.tol > 0.0) {
            return Err(usage("eval.batch_size and eval.tol must be positive"));
        }
        if t.train_subset == Some(0) || e.test_subset == Some(0) {
            return Err(usage("subsets must be non-empty"));
        }
        Ok(Resolved {
            arch,
            spec,
            train,
            eval,
            train_subset: t.train_subset,
            test_subset: e.test_subset,
        })
    }
}

/// A configuration turned into the values the trainer and evaluator take.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub arch: ArchSpec,
    pub spec: SchemeSpec,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
}
