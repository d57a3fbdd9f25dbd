use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::netgraph::{Task, CONNECTION_INIT_STD, DESK_WIDTHS};

/// What a training run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainMode {
    SingleDet,
    SingleSeg,
    CrossConnected,
    CrossStitch,
    /// Share-k with k in 1..=4.
    Share(usize),
    /// Cross-connected net fine-tuned on one task's dataset only.
    SingleTaskCrossConnected,
}

impl TrainMode {
    pub fn is_pretraining(self) -> bool {
        matches!(self, TrainMode::SingleDet | TrainMode::SingleSeg)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::SingleDet => f.write_str("single_det"),
            TrainMode::SingleSeg => f.write_str("single_seg"),
            TrainMode::CrossConnected => f.write_str("cross_connected"),
            TrainMode::CrossStitch => f.write_str("cross_stitch"),
            TrainMode::Share(k) => write!(f, "share{k}"),
            TrainMode::SingleTaskCrossConnected => f.write_str("single_task_cross_connected"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "single_det" => TrainMode::SingleDet,
            "single_seg" => TrainMode::SingleSeg,
            "cross_connected" => TrainMode::CrossConnected,
            "cross_stitch" => TrainMode::CrossStitch,
            "single_task_cross_connected" => TrainMode::SingleTaskCrossConnected,
            "share1" => TrainMode::Share(1),
            "share2" => TrainMode::Share(2),
            "share3" => TrainMode::Share(3),
            "share4" => TrainMode::Share(4),
            other => return Err(Error::config(format!("unknown mode {other:?}"))),
        })
    }
}

pub const PRETRAIN_LEARNING_RATE: f64 = 0.01;
pub const FINETUNE_LEARNING_RATE: f64 = 0.001;
pub const PRETRAIN_ITERATIONS: usize = 1500;
pub const FINETUNE_ITERATIONS: usize = 600;
/// Training crop `(height, width)`.
pub const DEFAULT_PATCH: (usize, usize) = (48, 64);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    pub switch_interval: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cross_depth: usize,
    pub init_std: f64,
    /// Detection (box) dataset directory.
    pub dataset_a: Option<PathBuf>,
    /// Segmentation (mask) dataset directory.
    pub dataset_b: Option<PathBuf>,
    /// Pre-trained weights: none for single-task modes, otherwise the
    /// detection net followed by the segmentation net.
    pub weights_in: Vec<PathBuf>,
    pub weights_out: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
    /// Random crop size used as augmentation; `None` trains on full images.
    pub patch: Option<(usize, usize)>,
}

const KEYS: [&str; 15] = [
    "mode",
    "lambda",
    "switch_interval",
    "learning_rate",
    "momentum",
    "iterations",
    "batch_size",
    "seed",
    "cross_depth",
    "init_std",
    "dataset_a",
    "dataset_b",
    "weights_in",
    "weights_out",
    "log_csv",
];

impl TrainConfig {
    /// Defaults for `mode`: pre-training uses the higher learning rate.
    pub fn for_mode(mode: TrainMode) -> Self {
        let pre = mode.is_pretraining();
        TrainConfig {
            mode,
            lambda: 1.0,
            switch_interval: 100,
            learning_rate: if pre { PRETRAIN_LEARNING_RATE } else { FINETUNE_LEARNING_RATE },
            momentum: 0.9,
            iterations: if pre { PRETRAIN_ITERATIONS } else { FINETUNE_ITERATIONS },
            batch_size: 4,
            seed: 0,
            cross_depth: DESK_WIDTHS.len(),
            init_std: CONNECTION_INIT_STD,
            dataset_a: None,
            dataset_b: None,
            weights_in: Vec::new(),
            weights_out: None,
            log_csv: None,
            patch: Some(DEFAULT_PATCH),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.switch_interval == 0 {
            return Err(Error::config("switch_interval must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config(format!("init_std must be non-negative, got {}", self.init_std)));
        }
        Ok(())
    }

    /// Tasks trained by this run, in alternation order.
    pub fn trained_tasks(&self) -> Result<Vec<Task>> {
        let a = self.dataset_a.is_some();
        let b = self.dataset_b.is_some();
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("mode {} {what}", self.mode)))
            }
        };
        match self.mode {
            TrainMode::SingleDet => need(a, "needs dataset_a").map(|_| vec![Task::Detection]),
            TrainMode::SingleSeg => need(b, "needs dataset_b").map(|_| vec![Task::Segmentation]),
            TrainMode::SingleTaskCrossConnected => {
                need(a != b, "needs exactly one of dataset_a and dataset_b")?;
                Ok(vec![if a { Task::Detection } else { Task::Segmentation }])
            }
            _ => need(a && b, "needs dataset_a and dataset_b")
                .map(|_| vec![Task::Detection, Task::Segmentation]),
        }
    }

    /// Parses the flat `key=value` format. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {n}: expected key=value, got {line:?}")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::config(format!("line {n}: unknown key {key:?}")));
            }
            if values.insert(key, (n, value.trim())).is_some() {
                return Err(Error::config(format!("line {n}: duplicate key {key:?}")));
            }
        }
        let (_, mode) = values
            .get("mode")
            .ok_or_else(|| Error::config("missing required key \"mode\""))?;
        let mut cfg = TrainConfig::for_mode(
            mode.parse()
                .map_err(|e| Error::config(format!("line {}: {e}", values["mode"].0)))?,
        );
        fn num<T: FromStr>(key: &str, (n, v): (usize, &str)) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("line {n}: invalid value {v:?} for {key:?}")))
        }
        let path = |(_, v): (usize, &str)| (!v.is_empty()).then(|| PathBuf::from(v));
        for (&key, &entry) in &values {
            match key {
                "mode" => {}
                "lambda" => cfg.lambda = num(key, entry)?,
                "switch_interval" => cfg.switch_interval = num(key, entry)?,
                "learning_rate" => cfg.learning_rate = num(key, entry)?,
                "momentum" => cfg.momentum = num(key, entry)?,
                "iterations" => cfg.iterations = num(key, entry)?,
                "batch_size" => cfg.batch_size = num(key, entry)?,
                "seed" => cfg.seed = num(key, entry)?,
                "cross_depth" => cfg.cross_depth = num(key, entry)?,
                "init_std" => cfg.init_std = num(key, entry)?,
                "dataset_a" => cfg.dataset_a = path(entry),
                "dataset_b" => cfg.dataset_b = path(entry),
                "weights_in" => {
                    cfg.weights_in = entry
                        .1
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(PathBuf::from)
                        .collect()
                }
                "weights_out" => cfg.weights_out = path(entry),
                "log_csv" => cfg.log_csv = path(entry),
                _ => unreachable!("keys are checked while reading"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Serializes every key in canonical order; unset paths are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("mode", self.mode.to_string());
        put("lambda", self.lambda.to_string());
        put("switch_interval", self.switch_interval.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("momentum", self.momentum.to_string());
        put("iterations", self.iterations.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("cross_depth", self.cross_depth.to_string());
        put("init_std", self.init_std.to_string());
        let show = |p: &Path| p.display().to_string();
        if let Some(p) = &self.dataset_a {
            put("dataset_a", show(p));
        }
        if let Some(p) = &self.dataset_b {
            put("dataset_b", show(p));
        }
        if !self.weights_in.is_empty() {
            let joined: Vec<String> = self.weights_in.iter().map(|p| show(p)).collect();
            put("weights_in", joined.join(","));
        }
        if let Some(p) = &self.weights_out {
            put("weights_out", show(p));
        }
        if let Some(p) = &self.log_csv {
            put("log_csv", show(p));
        }
        out
    }
}
