use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crossnet::evalmetrics::{evaluate_detection, evaluate_segmentation, EvalConfig, MetricReport};
use crossnet::netgraph::{
    build_single_stream, compose_cross_connected, compose_cross_stitch, compose_shared,
    load_weights, save_weights, Mode, MultiTaskNet, StreamSpec, Task,
};
use crossnet::synthdata::{read_dataset, Dataset};
use crossnet::trainer::{finetune, pretrain_single, LossTrace, TrainConfig, TrainMode};

use crate::error::{config_error, data_error, io_error, CliError, CliResult};
use crate::manifest::{RunManifest, RUN_MANIFEST};

/// Manifest path written next to a weights file.
pub fn weights_manifest_path(weights: &Path) -> PathBuf {
    let mut name = weights.as_os_str().to_owned();
    name.push(".manifest.txt");
    PathBuf::from(name)
}

/// Resolves the relative paths of `cfg` against `base`.
pub fn resolve_paths(cfg: &mut TrainConfig, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for p in [
        &mut cfg.dataset_a,
        &mut cfg.dataset_b,
        &mut cfg.weights_out,
        &mut cfg.log_csv,
    ]
    .into_iter()
    .flatten()
    {
        fix(p);
    }
    cfg.weights_in.iter_mut().for_each(fix);
}

fn load_task_dataset(path: &Path, task: Task) -> CliResult<Dataset> {
    let ds = read_dataset(path)?;
    let ok = match task {
        Task::Detection => ds.kind.has_boxes(),
        Task::Segmentation => ds.kind.has_masks(),
    };
    if !ok {
        let need = match task {
            Task::Detection => "box",
            Task::Segmentation => "mask",
        };
        return Err(data_error(format!(
            "{} task needs {need} annotations but {} holds {} annotations",
            TaskArg(task),
            path.display(),
            ds.kind
        )));
    }
    Ok(ds)
}

fn load_pretrained(path: &Path, task: Task) -> CliResult<MultiTaskNet<f32>> {
    let prereq = match task {
        Task::Detection => TrainMode::SingleDet,
        Task::Segmentation => TrainMode::SingleSeg,
    };
    if !path.exists() {
        return Err(config_error(format!(
            "pre-trained weights {} not found; train them first with mode={prereq}",
            path.display()
        )));
    }
    let net = load_weights(path)?;
    if net.mode() != Mode::Single(task) {
        return Err(config_error(format!(
            "{} is not a mode={prereq} network",
            path.display()
        )));
    }
    Ok(net)
}

/// Builds the network for `cfg` and trains it. Multi-task modes start from
/// the pre-trained pair in `weights_in`.
pub fn train_network(cfg: &TrainConfig) -> CliResult<(MultiTaskNet<f32>, LossTrace)> {
    cfg.validate()?;
    let tasks = cfg.trained_tasks()?;
    let det_data = match &cfg.dataset_a {
        Some(p) if tasks.contains(&Task::Detection) => Some(load_task_dataset(p, Task::Detection)?),
        _ => None,
    };
    let seg_data = match &cfg.dataset_b {
        Some(p) if tasks.contains(&Task::Segmentation) => {
            Some(load_task_dataset(p, Task::Segmentation)?)
        }
        _ => None,
    };
    if cfg.mode.is_pretraining() {
        if !cfg.weights_in.is_empty() {
            return Err(config_error(format!("mode {} takes no weights_in", cfg.mode)));
        }
        let (spec, data) = match cfg.mode {
            TrainMode::SingleDet => (StreamSpec::default_detection(), det_data),
            _ => (StreamSpec::default_segmentation(), seg_data),
        };
        let data = data.expect("trained task has a dataset");
        let mut net = build_single_stream(&spec, cfg.seed)?;
        let trace = pretrain_single(&mut net, data.train(), cfg)?;
        return Ok((net, trace));
    }
    if cfg.weights_in.len() != 2 {
        return Err(config_error(format!(
            "mode {} needs pre-trained weights: train mode=single_det and mode=single_seg \
             first and set weights_in=<detection weights>,<segmentation weights>",
            cfg.mode
        )));
    }
    let det = load_pretrained(&cfg.weights_in[0], Task::Detection)?;
    let seg = load_pretrained(&cfg.weights_in[1], Task::Segmentation)?;
    let mut net = match cfg.mode {
        TrainMode::CrossConnected | TrainMode::SingleTaskCrossConnected => {
            compose_cross_connected(&det, &seg, cfg.cross_depth, cfg.init_std, cfg.seed)?
        }
        TrainMode::CrossStitch => compose_cross_stitch(&det, &seg, cfg.cross_depth)?,
        TrainMode::Share(k) => compose_shared(&det, &seg, k)?,
        TrainMode::SingleDet | TrainMode::SingleSeg => unreachable!("handled above"),
    };
    let trace = finetune(
        &mut net,
        det_data.as_ref().map(|d| d.train()),
        seg_data.as_ref().map(|d| d.train()),
        cfg,
    )?;
    Ok((net, trace))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Trains per `cfg` and writes the weights, the optional loss log and a
/// manifest next to the weights. `config_text` is the configuration as
/// written, before relative paths were resolved.
pub fn run_training(cfg: &TrainConfig, config_text: &str) -> CliResult<LossTrace> {
    let weights_out = cfg
        .weights_out
        .clone()
        .ok_or_else(|| config_error("missing required key \"weights_out\""))?;
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(cfg.dataset_a.as_deref());
    inputs.extend(cfg.dataset_b.as_deref());
    inputs.extend(cfg.weights_in.iter().map(PathBuf::as_path));
    let (net, trace) = train_network(cfg)?;
    let manifest = RunManifest::new("train", config_text, Some(cfg.seed), &inputs)?;
    if let Some(dir) = weights_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_weights(&net, &weights_out)?;
    if let Some(log) = &cfg.log_csv {
        write_file(log, trace.to_csv())?;
    }
    manifest.write(&weights_manifest_path(&weights_out))?;
    Ok(trace)
}

/// `train --config <file>`. Relative paths in the file are taken relative
/// to the file's directory.
pub fn cmd_train(config_path: &Path) -> CliResult<LossTrace> {
    let text = fs::read_to_string(config_path).map_err(|e| io_error(config_path, e))?;
    let mut cfg = TrainConfig::read(config_path)?;
    resolve_paths(&mut cfg, config_path.parent().unwrap_or(Path::new("")));
    run_training(&cfg, &text)
}

/// Task selector accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskArg(pub Task);

impl FromStr for TaskArg {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "det" | "detection" => Ok(TaskArg(Task::Detection)),
            "seg" | "segmentation" => Ok(TaskArg(Task::Segmentation)),
            other => Err(CliError::Usage(format!(
                "unknown task {other:?}; expected det or seg"
            ))),
        }
    }
}

impl fmt::Display for TaskArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            Task::Detection => "detection",
            Task::Segmentation => "segmentation",
        })
    }
}

/// Evaluates `net` on the test split of `dataset` for `task`.
pub fn evaluate(
    net: &MultiTaskNet<f32>,
    dataset: &Dataset,
    task: Task,
    config: &EvalConfig,
) -> CliResult<MetricReport> {
    if !net.has_task(task) {
        return Err(config_error(format!("network has no {} head", TaskArg(task))));
    }
    let ok = match task {
        Task::Detection => dataset.kind.has_boxes(),
        Task::Segmentation => dataset.kind.has_masks(),
    };
    if !ok {
        return Err(data_error(format!(
            "cannot evaluate {} on a dataset with {} annotations",
            TaskArg(task),
            dataset.kind
        )));
    }
    if dataset.n_test == 0 {
        return Err(data_error("dataset has no test images"));
    }
    Ok(match task {
        Task::Detection => evaluate_detection(net, dataset.test(), config)?,
        Task::Segmentation => evaluate_segmentation(net, dataset.test())?,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub weights: PathBuf,
    pub dataset: PathBuf,
    pub task: Task,
    pub config: EvalConfig,
    pub out: PathBuf,
}

impl EvalArgs {
    fn config_text(&self) -> String {
        let c = &self.config;
        format!(
            "task={}\nnms={}\nfppi_lo={}\nfppi_hi={}\nmatch_iou={}\nscore_floor={}\n",
            TaskArg(self.task),
            c.nms_threshold,
            c.fppi_lo,
            c.fppi_hi,
            c.match_iou,
            c.score_floor
        )
    }
}

/// `eval`: writes the curve (detection), summary CSV and a manifest into
/// `args.out`.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<MetricReport> {
    args.config.validate()?;
    let net = load_weights(&args.weights)?;
    let dataset = read_dataset(&args.dataset)?;
    let report = evaluate(&net, &dataset, args.task, &args.config)?;
    report.write_csv(&args.out)?;
    RunManifest::new(
        "eval",
        &args.config_text(),
        None,
        &[args.weights.as_path(), args.dataset.as_path()],
    )?
    .write(&args.out.join(RUN_MANIFEST))?;
    Ok(report)
}
