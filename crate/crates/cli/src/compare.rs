use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crossnet::evalmetrics::{EvalConfig, MetricReport};
use crossnet::netgraph::{load_weights, Task};
use crossnet::synthdata::{read_dataset, Dataset, MANIFEST};
use crossnet::trainer::{LossTrace, TrainConfig, TrainMode, SMOOTHING_WINDOW};

use crate::error::{config_error, data_error, io_error, CliError, CliResult};
use crate::gendata::{DETECTION_DIR, SEGMENTATION_DIR, TRANSFER_DIR};
use crate::keyvalue::KeyValues;
use crate::manifest::{RunManifest, RUN_MANIFEST};
use crate::run::{cmd_train, evaluate};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_TXT: &str = "results.txt";
pub const TRAINING_CSV: &str = "training.csv";
pub const RUNS_DIR: &str = "runs";
pub const RUN_CONFIG: &str = "config.txt";
pub const RUN_WEIGHTS: &str = "weights.xcnw";
pub const RUN_LOG: &str = "loss.csv";

/// Every variant, in result-table order.
pub const VARIANTS: [TrainMode; 9] = [
    TrainMode::SingleDet,
    TrainMode::SingleSeg,
    TrainMode::Share(1),
    TrainMode::Share(2),
    TrainMode::Share(3),
    TrainMode::Share(4),
    TrainMode::CrossStitch,
    TrainMode::CrossConnected,
    TrainMode::SingleTaskCrossConnected,
];

const KEYS: [&str; 19] = [
    "variants",
    "data",
    "out",
    "seed",
    "execute",
    "pretrain_iterations",
    "finetune_iterations",
    "pretrain_learning_rate",
    "finetune_learning_rate",
    "momentum",
    "batch_size",
    "lambda",
    "switch_interval",
    "cross_depth",
    "init_std",
    "nms",
    "fppi_lo",
    "fppi_hi",
    "match_iou",
];

/// A comparison: which variants to train and evaluate on one data
/// directory (as written by `gen-data`), with shared hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub variants: Vec<TrainMode>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// Train missing runs instead of reporting them.
    pub execute: bool,
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    pub pretrain_learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub switch_interval: usize,
    pub cross_depth: usize,
    pub init_std: f64,
    pub eval: EvalConfig,
}

impl Plan {
    pub fn new(variants: Vec<TrainMode>, data: PathBuf, out: PathBuf) -> Self {
        let pre = TrainConfig::for_mode(TrainMode::SingleDet);
        let fine = TrainConfig::for_mode(TrainMode::CrossConnected);
        Plan {
            variants,
            data,
            out,
            seed: 0,
            execute: true,
            pretrain_iterations: pre.iterations,
            finetune_iterations: fine.iterations,
            pretrain_learning_rate: pre.learning_rate,
            finetune_learning_rate: fine.learning_rate,
            momentum: fine.momentum,
            batch_size: fine.batch_size,
            lambda: fine.lambda,
            switch_interval: fine.switch_interval,
            cross_depth: fine.cross_depth,
            init_std: fine.init_std,
            eval: EvalConfig::default(),
        }
    }

    /// Parses a plan file; `data` and `out` are relative to `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let kv = KeyValues::parse(text, &KEYS)?;
        let names = kv.list("variants").unwrap_or_default();
        if names.is_empty() {
            return Err(CliError::Usage("plan lists no variants".to_string()));
        }
        let mut variants = Vec::new();
        for name in &names {
            let mode: TrainMode = name
                .parse()
                .map_err(|_| kv.reject("variants", &format!("unknown variant {name:?}")))?;
            if variants.contains(&mode) {
                return Err(kv.reject("variants", &format!("{name} listed twice")));
            }
            variants.push(mode);
        }
        variants.sort_by_key(|m| VARIANTS.iter().position(|v| v == m));
        let path = |key: &str| -> CliResult<PathBuf> {
            let p = kv
                .raw(key)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| config_error(format!("plan needs {key}=<dir>")))?;
            Ok(base.join(p))
        };
        let mut plan = Plan::new(variants, path("data")?, path("out")?);
        kv.set("seed", &mut plan.seed)?;
        kv.set("execute", &mut plan.execute)?;
        kv.set("pretrain_iterations", &mut plan.pretrain_iterations)?;
        kv.set("finetune_iterations", &mut plan.finetune_iterations)?;
        kv.set("pretrain_learning_rate", &mut plan.pretrain_learning_rate)?;
        kv.set("finetune_learning_rate", &mut plan.finetune_learning_rate)?;
        kv.set("momentum", &mut plan.momentum)?;
        kv.set("batch_size", &mut plan.batch_size)?;
        kv.set("lambda", &mut plan.lambda)?;
        kv.set("switch_interval", &mut plan.switch_interval)?;
        kv.set("cross_depth", &mut plan.cross_depth)?;
        kv.set("init_std", &mut plan.init_std)?;
        kv.set("nms", &mut plan.eval.nms_threshold)?;
        kv.set("fppi_lo", &mut plan.eval.fppi_lo)?;
        kv.set("fppi_hi", &mut plan.eval.fppi_hi)?;
        kv.set("match_iou", &mut plan.eval.match_iou)?;
        plan.eval.validate()?;
        Ok(plan)
    }

    pub fn read(path: &Path) -> CliResult<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok((Self::parse(&text, base)?, text))
    }
}

/// One training run inside a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub name: String,
    pub mode: TrainMode,
    pub detection: bool,
    pub segmentation: bool,
}

impl RunSpec {
    fn new(name: &str, mode: TrainMode, detection: bool, segmentation: bool) -> Self {
        RunSpec {
            name: name.to_string(),
            mode,
            detection,
            segmentation,
        }
    }

    fn single(task: Task) -> Self {
        match task {
            Task::Detection => RunSpec::new("single_det", TrainMode::SingleDet, true, false),
            Task::Segmentation => RunSpec::new("single_seg", TrainMode::SingleSeg, false, true),
        }
    }
}

/// Runs that produce `variant`'s detection and segmentation networks. The
/// single-task cross-connected variant is fine-tuned once per task.
pub fn variant_runs(variant: TrainMode) -> (Option<RunSpec>, Option<RunSpec>) {
    match variant {
        TrainMode::SingleDet => (Some(RunSpec::single(Task::Detection)), None),
        TrainMode::SingleSeg => (None, Some(RunSpec::single(Task::Segmentation))),
        TrainMode::SingleTaskCrossConnected => (
            Some(RunSpec::new("stcc_det", variant, true, false)),
            Some(RunSpec::new("stcc_seg", variant, false, true)),
        ),
        _ => {
            let run = RunSpec::new(&variant.to_string(), variant, true, true);
            (Some(run.clone()), Some(run))
        }
    }
}

/// All runs needed by the plan, pre-training first, without duplicates.
pub fn planned_runs(plan: &Plan) -> Vec<RunSpec> {
    let multitask = plan.variants.iter().any(|v| !v.is_pretraining());
    let mut runs = Vec::new();
    for (mode, task) in [
        (TrainMode::SingleDet, Task::Detection),
        (TrainMode::SingleSeg, Task::Segmentation),
    ] {
        if multitask || plan.variants.contains(&mode) {
            runs.push(RunSpec::single(task));
        }
    }
    for v in plan.variants.iter().filter(|v| !v.is_pretraining()) {
        let (d, s) = variant_runs(*v);
        for r in [d, s].into_iter().flatten() {
            if !runs.contains(&r) {
                runs.push(r);
            }
        }
    }
    runs
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(p).map_err(|e| io_error(p, e))
}

/// Training configuration of `run`, with paths relative to the run
/// directory except for the datasets.
pub fn run_config(plan: &Plan, run: &RunSpec, data: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::for_mode(run.mode);
    if run.mode.is_pretraining() {
        cfg.iterations = plan.pretrain_iterations;
        cfg.learning_rate = plan.pretrain_learning_rate;
    } else {
        cfg.iterations = plan.finetune_iterations;
        cfg.learning_rate = plan.finetune_learning_rate;
        cfg.weights_in = ["single_det", "single_seg"]
            .iter()
            .map(|r| Path::new("..").join(r).join(RUN_WEIGHTS))
            .collect();
    }
    cfg.seed = if run.mode == TrainMode::SingleSeg {
        plan.seed.wrapping_add(1)
    } else {
        plan.seed
    };
    cfg.momentum = plan.momentum;
    cfg.batch_size = plan.batch_size;
    cfg.lambda = plan.lambda;
    cfg.switch_interval = plan.switch_interval;
    cfg.cross_depth = plan.cross_depth;
    cfg.init_std = plan.init_std;
    if run.detection {
        cfg.dataset_a = Some(data.join(DETECTION_DIR));
    }
    if run.segmentation {
        cfg.dataset_b = Some(data.join(SEGMENTATION_DIR));
    }
    cfg.weights_out = Some(PathBuf::from(RUN_WEIGHTS));
    cfg.log_csv = Some(PathBuf::from(RUN_LOG));
    cfg
}

fn parse_loss_csv(text: &str, path: &Path) -> CliResult<LossTrace> {
    let bad = |n: usize| data_error(format!("{}: malformed line {n}", path.display()));
    let mut trace = LossTrace::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let (Some(it), Some(tag), Some(loss), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(i + 1));
        };
        let task = [Task::Detection, Task::Segmentation]
            .into_iter()
            .find(|t| t.tag() == tag)
            .ok_or_else(|| bad(i + 1))?;
        trace.push(
            it.parse().map_err(|_| bad(i + 1))?,
            task,
            loss.parse().map_err(|_| bad(i + 1))?,
        );
    }
    Ok(trace)
}

/// One row of `training.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub run: String,
    pub phase: &'static str,
    pub task: Task,
    pub iterations: usize,
    pub smoothed_first: Option<f64>,
    pub smoothed_last: Option<f64>,
}

impl TrainingRow {
    /// Final smoothed loss strictly below the initial one.
    pub fn decreased(&self) -> bool {
        matches!((self.smoothed_first, self.smoothed_last), (Some(a), Some(b)) if b < a)
    }
}

/// One row of `results.csv`; `None` cells do not apply to the variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: TrainMode,
    pub test_set: &'static str,
    pub lamr: Option<f64>,
    /// IoU of the target class; inner `None` when it is undefined.
    pub iou_target: Option<Option<f64>>,
    pub mean_iou: Option<Option<f64>>,
    pub detection_rate_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    pub results: Vec<ResultRow>,
    pub training: Vec<TrainingRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| v.to_string())
}

fn iou_cell(v: Option<Option<f64>>) -> String {
    match v {
        None => "n/a".to_string(),
        Some(None) => "undefined".to_string(),
        Some(Some(v)) => v.to_string(),
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("variant,test_set,lamr,iou_target,mean_iou,detection_rate_avg\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.variant,
            r.test_set,
            cell(r.lamr),
            iou_cell(r.iou_target),
            iou_cell(r.mean_iou),
            cell(r.detection_rate_avg)
        );
    }
    out
}

/// Fixed-width rendering of the results with four decimals.
pub fn results_table(rows: &[ResultRow]) -> String {
    let fmt4 = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let fmt_iou = |v: Option<Option<f64>>| match v {
        Some(Some(v)) => format!("{v:.4}"),
        other => iou_cell(other),
    };
    let header = ["variant", "test_set", "lamr", "iou_target", "mean_iou", "det_rate_avg"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.variant.to_string(),
                r.test_set.to_string(),
                fmt4(r.lamr),
                fmt_iou(r.iou_target),
                fmt_iou(r.mean_iou),
                fmt4(r.detection_rate_avg),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header.map(String::from));
    for row in &cells {
        line(row);
    }
    out
}

pub fn training_csv(rows: &[TrainingRow]) -> String {
    let mut out = String::from(
        "run,phase,task_tag,iterations,smoothed_first,smoothed_last,decreased\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.run,
            r.phase,
            r.task.tag(),
            r.iterations,
            cell(r.smoothed_first),
            cell(r.smoothed_last),
            r.decreased()
        );
    }
    out
}

fn training_rows(run: &RunSpec, trace: &LossTrace) -> Vec<TrainingRow> {
    trace
        .tasks()
        .into_iter()
        .map(|task| {
            let ends = trace.smoothed_endpoints(task, SMOOTHING_WINDOW);
            TrainingRow {
                run: run.name.clone(),
                phase: if run.mode.is_pretraining() { "pretrain" } else { "finetune" },
                task,
                iterations: trace.losses(task).len(),
                smoothed_first: ends.map(|e| e.0),
                smoothed_last: ends.map(|e| e.1),
            }
        })
        .collect()
}

fn evaluate_run(
    plan: &Plan,
    runs_dir: &Path,
    run: &RunSpec,
    task: Task,
    dataset: &Dataset,
) -> CliResult<MetricReport> {
    let net = load_weights(&runs_dir.join(&run.name).join(RUN_WEIGHTS))?;
    evaluate(&net, dataset, task, &plan.eval)
}

/// Trains whatever the plan still needs (or lists it when `execute` is
/// off), evaluates every variant and writes the result tables into `out`.
pub fn run_compare(plan: &Plan, plan_text: &str) -> CliResult<CompareOutcome> {
    if plan.variants.is_empty() {
        return Err(CliError::Usage("plan lists no variants".to_string()));
    }
    let results_path = plan.out.join(RESULTS_CSV);
    if results_path.exists() {
        return Err(config_error(format!(
            "{} already exists; choose a fresh out directory",
            results_path.display()
        )));
    }
    let mut missing = Vec::new();
    for name in [DETECTION_DIR, SEGMENTATION_DIR, TRANSFER_DIR] {
        let m = plan.data.join(name).join(MANIFEST);
        if !m.exists() {
            missing.push(m.display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }
    let data = absolute(&plan.data)?;
    let runs_dir = plan.out.join(RUNS_DIR);
    let runs = planned_runs(plan);

    let mut pending = Vec::new();
    for run in &runs {
        let dir = runs_dir.join(&run.name);
        let expected = run_config(plan, run, &data).to_text();
        let done = [RUN_WEIGHTS, RUN_LOG].iter().all(|f| dir.join(f).exists());
        if done {
            let found = fs::read_to_string(dir.join(RUN_CONFIG)).unwrap_or_default();
            if found != expected {
                return Err(config_error(format!(
                    "{} was trained with a different configuration",
                    dir.display()
                )));
            }
        } else {
            pending.push((run, expected));
        }
    }
    if !plan.execute && !pending.is_empty() {
        let mut missing = Vec::new();
        for (run, _) in &pending {
            for f in [RUN_WEIGHTS, RUN_LOG] {
                let p = runs_dir.join(&run.name).join(f);
                if !p.exists() {
                    missing.push(p.display().to_string());
                }
            }
        }
        return Err(CliError::MissingArtifacts(missing));
    }
    for (run, text) in &pending {
        let dir = runs_dir.join(&run.name);
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let cfg_path = dir.join(RUN_CONFIG);
        fs::write(&cfg_path, text).map_err(|e| io_error(&cfg_path, e))?;
        cmd_train(&cfg_path)?;
    }

    let mut training = Vec::new();
    for run in &runs {
        let log = runs_dir.join(&run.name).join(RUN_LOG);
        let text = fs::read_to_string(&log).map_err(|e| io_error(&log, e))?;
        training.extend(training_rows(run, &parse_loss_csv(&text, &log)?));
    }

    let det_set = read_dataset(&data.join(DETECTION_DIR))?;
    let seg_set = read_dataset(&data.join(SEGMENTATION_DIR))?;
    let transfer_set = read_dataset(&data.join(TRANSFER_DIR))?;
    let mut results = Vec::new();
    for &variant in &plan.variants {
        let (det_run, seg_run) = variant_runs(variant);
        let mut det = (None, None);
        if let Some(run) = &det_run {
            let in_dist = evaluate_run(plan, &runs_dir, run, Task::Detection, &det_set)?;
            let transfer = evaluate_run(plan, &runs_dir, run, Task::Detection, &transfer_set)?;
            det = (in_dist.lamr, transfer.lamr);
        }
        let seg = match &seg_run {
            Some(run) => Some(evaluate_run(plan, &runs_dir, run, Task::Segmentation, &seg_set)?),
            None => None,
        };
        results.push(ResultRow {
            variant,
            test_set: "in_distribution",
            lamr: det.0,
            iou_target: seg
                .as_ref()
                .map(|r| r.iou_per_class.get(crossnet::synthdata::TARGET as usize).copied().flatten()),
            mean_iou: seg.as_ref().map(MetricReport::mean_iou),
            detection_rate_avg: seg.as_ref().and_then(|r| r.detection_rate.as_ref().map(|d| d.avg)),
        });
        results.push(ResultRow {
            variant,
            test_set: "transfer",
            lamr: det.1,
            iou_target: None,
            mean_iou: None,
            detection_rate_avg: None,
        });
    }

    let write = |name: &str, text: String| {
        let p = plan.out.join(name);
        fs::write(&p, text).map_err(|e| io_error(&p, e))
    };
    fs::create_dir_all(&plan.out).map_err(|e| io_error(&plan.out, e))?;
    write(RESULTS_TXT, results_table(&results))?;
    write(TRAINING_CSV, training_csv(&training))?;
    RunManifest::new("compare", plan_text, Some(plan.seed), &[data.as_path()])?
        .write(&plan.out.join(RUN_MANIFEST))?;
    write(RESULTS_CSV, results_csv(&results))?;
    Ok(CompareOutcome { results, training })
}

/// `compare --plan <file>`.
pub fn cmd_compare(plan_path: &Path) -> CliResult<CompareOutcome> {
    let (plan, text) = Plan::read(plan_path)?;
    run_compare(&plan, &text)
}
