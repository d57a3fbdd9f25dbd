use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crossnet::netgraph::{load_weights, Mode};
use tempfile::TempDir;

const SMALL_SPEC: &str = "height=48\nwidth=64\nn_train=6\nn_test=3\ntarget_size=8,16\n";

fn crossnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_data(dir: &Path) {
    fs::write(dir.join("spec.txt"), SMALL_SPEC).unwrap();
    let out = crossnet(&["gen-data", "--spec", "spec.txt", "--out", "data"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn train(dir: &Path, name: &str, config: &str) -> Output {
    fs::write(dir.join(name), config).unwrap();
    crossnet(&["train", "--config", name], dir)
}

/// Pre-trains both single-task nets for a few iterations.
fn pretrained(dir: &Path) {
    small_data(dir);
    let det = train(
        dir,
        "det.txt",
        "mode=single_det\niterations=4\ndataset_a=data/detection\nweights_out=det.xcnw\nlog_csv=det.csv\n",
    );
    assert_eq!(code(&det), 0, "{}", stderr(&det));
    let seg = train(
        dir,
        "seg.txt",
        "mode=single_seg\niterations=4\nseed=1\ndataset_b=data/segmentation\nweights_out=seg.xcnw\n",
    );
    assert_eq!(code(&seg), 0, "{}", stderr(&seg));
}

#[test]
fn gen_data_writes_three_datasets() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    let data = tmp.path().join("data");
    for d in ["detection", "segmentation", "transfer"] {
        assert!(data.join(d).join("manifest.txt").exists(), "{d}");
    }
    let manifest = fs::read_to_string(data.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("command=gen-data") && manifest.contains("seed=1"), "{manifest}");
    assert!(!data.join("transfer/train_0000.ppm").exists());
    assert!(data.join("transfer/test_0002.ppm").exists());
}

#[test]
fn gen_data_refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    let stamp = fs::read(tmp.path().join("data/detection/test_0000.ppm")).unwrap();
    let again = crossnet(&["gen-data", "--spec", "spec.txt", "--out", "data"], tmp.path());
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    let forced = crossnet(&["gen-data", "--spec", "spec.txt", "--out", "data", "--force"], tmp.path());
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
    assert_eq!(fs::read(tmp.path().join("data/detection/test_0000.ppm")).unwrap(), stamp);
}

#[test]
fn gen_data_names_the_bad_key() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("spec.txt"), "height=32\nn_trian=5\n").unwrap();
    let out = crossnet(&["gen-data", "--spec", "spec.txt", "--out", "data"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("n_trian") && err.contains("line 2"), "{err}");
}

#[test]
fn multitask_training_needs_pretrained_weights() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    let out = train(
        tmp.path(),
        "cc.txt",
        "mode=cross_connected\ndataset_a=data/detection\ndataset_b=data/segmentation\nweights_out=cc.xcnw\n",
    );
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("mode=single_det") && err.contains("mode=single_seg"), "{err}");

    let out = train(
        tmp.path(),
        "cc.txt",
        "mode=cross_connected\ndataset_a=data/detection\ndataset_b=data/segmentation\n\
         weights_in=det.xcnw,seg.xcnw\nweights_out=cc.xcnw\n",
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train them first with mode=single_det"), "{}", stderr(&out));
}

#[test]
fn identical_configs_give_identical_weights() {
    let tmp = TempDir::new().unwrap();
    pretrained(tmp.path());
    let first = fs::read(tmp.path().join("det.xcnw")).unwrap();
    let log = fs::read_to_string(tmp.path().join("det.csv")).unwrap();
    let manifest = fs::read(tmp.path().join("det.xcnw.manifest.txt")).unwrap();
    assert!(log.starts_with("iteration,task_tag,loss\n0,A_detection,"), "{log}");
    assert_eq!(log.lines().count(), 5);
    let again = crossnet(&["train", "--config", "det.txt"], tmp.path());
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read(tmp.path().join("det.xcnw")).unwrap(), first);
    assert_eq!(fs::read(tmp.path().join("det.xcnw.manifest.txt")).unwrap(), manifest);
}

#[test]
fn share3_shares_seven_convs() {
    let tmp = TempDir::new().unwrap();
    pretrained(tmp.path());
    let out = train(
        tmp.path(),
        "share3.txt",
        "mode=share3\niterations=2\nswitch_interval=1\ndataset_a=data/detection\n\
         dataset_b=data/segmentation\nweights_in=det.xcnw,seg.xcnw\nweights_out=share3.xcnw\n\
         log_csv=share3.csv\n",
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let net = load_weights(&tmp.path().join("share3.xcnw")).unwrap();
    assert_eq!(net.mode(), Mode::Shared(3));
    assert_eq!(net.shared_units(), 7);
    let log = fs::read_to_string(tmp.path().join("share3.csv")).unwrap();
    assert!(log.contains("0,A_detection,") && log.contains("1,B_segmentation,"), "{log}");
}

#[test]
fn eval_writes_reports_and_rejects_mismatched_data() {
    let tmp = TempDir::new().unwrap();
    pretrained(tmp.path());
    let det = crossnet(
        &[
            "eval", "--weights", "det.xcnw", "--dataset", "data/transfer", "--task", "det",
            "--out", "eval_det", "--nms", "0.1", "--fppi-hi", "100",
        ],
        tmp.path(),
    );
    assert_eq!(code(&det), 0, "{}", stderr(&det));
    assert!(String::from_utf8_lossy(&det.stdout).contains("lamr"));
    let dir = tmp.path().join("eval_det");
    assert!(fs::read_to_string(dir.join("curve.csv")).unwrap().starts_with("fppi,miss_rate\n"));
    assert!(fs::read_to_string(dir.join("summary.csv")).unwrap().starts_with("metric,value\nlamr,"));
    assert!(dir.join("run_manifest.txt").exists());

    let seg = crossnet(
        &["eval", "--weights", "seg.xcnw", "--dataset", "data/segmentation", "--task", "seg", "--out", "eval_seg"],
        tmp.path(),
    );
    assert_eq!(code(&seg), 0, "{}", stderr(&seg));
    let summary = fs::read_to_string(tmp.path().join("eval_seg/summary.csv")).unwrap();
    assert!(summary.contains("iou_target,") && summary.contains("detection_rate_avg,"), "{summary}");

    let mismatch = crossnet(
        &["eval", "--weights", "seg.xcnw", "--dataset", "data/detection", "--task", "seg", "--out", "x"],
        tmp.path(),
    );
    assert_eq!(code(&mismatch), 3);
    assert!(stderr(&mismatch).contains("boxes annotations"), "{}", stderr(&mismatch));

    let wrong_head = crossnet(
        &["eval", "--weights", "det.xcnw", "--dataset", "data/segmentation", "--task", "seg", "--out", "x"],
        tmp.path(),
    );
    assert_eq!(code(&wrong_head), 2);
}

#[test]
fn compare_rejects_an_empty_plan() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("plan.txt"), "# nothing yet\ndata=data\nout=cmp\n").unwrap();
    let out = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no variants"), "{}", stderr(&out));
}

#[test]
fn compare_lists_every_missing_artifact() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    fs::write(
        tmp.path().join("plan.txt"),
        "variants=single_det,single_task_cross_connected\ndata=data\nout=cmp\nexecute=false\n",
    )
    .unwrap();
    let out = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    for run in ["single_det", "single_seg", "stcc_det", "stcc_seg"] {
        for file in ["weights.xcnw", "loss.csv"] {
            assert!(err.contains(&format!("runs/{run}/{file}")), "{run}/{file} not listed:\n{err}");
        }
    }
    assert!(!tmp.path().join("cmp/results.csv").exists());
}

#[test]
fn compare_of_all_variants_gives_two_rows_each() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    let plan = "variants=cross_connected,single_det,single_seg,single_task_cross_connected,\
                share1,share2,share3,share4,cross_stitch\ndata=data\nout=cmp\n\
                pretrain_iterations=3\nfinetune_iterations=4\nswitch_interval=2\n";
    fs::write(tmp.path().join("plan.txt"), plan).unwrap();
    let out = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("cmp/results.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 18);
    let order: Vec<&str> = rows.iter().step_by(2).map(|r| r[0]).collect();
    assert_eq!(
        order,
        [
            "single_det", "single_seg", "share1", "share2", "share3", "share4", "cross_stitch",
            "cross_connected", "single_task_cross_connected"
        ]
    );
    for pair in rows.chunks(2) {
        assert_eq!((pair[0][1], pair[1][1]), ("in_distribution", "transfer"));
        let has_det = pair[0][0] != "single_seg";
        let has_seg = pair[0][0] != "single_det";
        assert_eq!(pair[0][2] != "n/a", has_det, "{:?}", pair[0]);
        assert_eq!(pair[1][2] != "n/a", has_det, "{:?}", pair[1]);
        assert_eq!(pair[0][5] != "n/a", has_seg, "{:?}", pair[0]);
        assert!(pair[1][3..].iter().all(|c| *c == "n/a"), "{:?}", pair[1]);
    }
    let training = fs::read_to_string(tmp.path().join("cmp/training.csv")).unwrap();
    assert_eq!(training.lines().count(), 1 + 2 + 2 * 6 + 2);
    assert!(tmp.path().join("cmp/results.txt").exists());
    assert!(tmp.path().join("cmp/run_manifest.txt").exists());
    assert!(tmp.path().join("cmp/runs/share2/config.txt").exists());

    let again = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&again), 2, "{}", stderr(&again));

    // a fresh output directory reuses nothing and reproduces every number
    fs::write(tmp.path().join("plan2.txt"), plan.replace("out=cmp", "out=cmp2")).unwrap();
    let second = crossnet(&["compare", "--plan", "plan2.txt"], tmp.path());
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    assert_eq!(fs::read_to_string(tmp.path().join("cmp2/results.csv")).unwrap(), csv);
    assert_eq!(
        fs::read(tmp.path().join("cmp2/runs/cross_connected/weights.xcnw")).unwrap(),
        fs::read(tmp.path().join("cmp/runs/cross_connected/weights.xcnw")).unwrap()
    );
}

#[test]
fn compare_reuses_finished_runs() {
    let tmp = TempDir::new().unwrap();
    small_data(tmp.path());
    let plan = "variants=single_det\ndata=data\nout=cmp\npretrain_iterations=2\n";
    fs::write(tmp.path().join("plan.txt"), plan).unwrap();
    assert_eq!(code(&crossnet(&["compare", "--plan", "plan.txt"], tmp.path())), 0);
    let weights = tmp.path().join("cmp/runs/single_det/weights.xcnw");
    let before = fs::metadata(&weights).unwrap().modified().unwrap();
    fs::remove_file(tmp.path().join("cmp/results.csv")).unwrap();
    fs::write(tmp.path().join("plan.txt"), format!("{plan}execute=false\n")).unwrap();
    let out = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::metadata(&weights).unwrap().modified().unwrap(), before);

    fs::remove_file(tmp.path().join("cmp/results.csv")).unwrap();
    fs::write(tmp.path().join("plan.txt"), "variants=single_det\ndata=data\nout=cmp\npretrain_iterations=3\n").unwrap();
    let out = crossnet(&["compare", "--plan", "plan.txt"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("different configuration"), "{}", stderr(&out));
}

#[test]
fn unknown_task_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = crossnet(
        &["eval", "--weights", "w", "--dataset", "d", "--task", "boxes", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
}
