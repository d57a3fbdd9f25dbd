//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use crossnet::evalmetrics::{
    detection_rate, greedy_match, iou, lamr_reference_points, log_average_miss_rate,
    miss_rate_at, nms, CurvePoint, ScoredBox,
};
use crossnet::gradcheck::{run_suite, SUITE_INSTANCES, SUITE_TOLERANCE};
use crossnet::netgraph::weights::{decode_weights, encode_weights};
use crossnet::netgraph::{
    build_single_stream, compose_cross_connected, compose_cross_stitch, compose_shared,
    load_weights, save_weights, DetectionHeadSpec, HeadSpec, MultiTaskNet, SegmentationHeadSpec,
    StreamSpec, Task,
};
use crossnet::synthdata::{
    generate_dataset, read_dataset, write_dataset, AnnotationKind, BackgroundStyle, GrayMap,
    SceneSpec,
};
use crossnet::trainer::{alternation_schedule, multitask_loss, task_loss, Batch, TrainMode};
use crossnet::{Shape, Tape, Tensor};
use crossnet_cli::compare::{
    run_compare, CompareOutcome, Plan, RESULTS_CSV, RUNS_DIR, TRAINING_CSV, VARIANTS,
};
use crossnet_cli::gendata::{gen_data, GenSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let shape = Shape::new(1, 3, h, w);
    let data = (0..shape.len()).map(|_| rng.random_range(-0.5..0.5f32)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn default_pair(seed: u64) -> (MultiTaskNet, MultiTaskNet) {
    (
        build_single_stream(&StreamSpec::default_detection(), seed).unwrap(),
        build_single_stream(&StreamSpec::default_segmentation(), seed + 1).unwrap(),
    )
}

fn gradient_suite() -> Verdict {
    let results = run_suite(0).map_err(|e| e.to_string())?;
    let total: Duration = results.iter().map(|r| r.elapsed).sum();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let min_instances = results.iter().map(|r| r.instances).min().unwrap_or(0);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    check(
        failed.is_empty() && total < Duration::from_secs(120) && min_instances >= SUITE_INSTANCES,
        format!(
            "{} cases, >= {min_instances} instances each, max rel error {worst:.2e} (limit {SUITE_TOLERANCE:e}), {:.1}s, failed: {failed:?}",
            results.len(),
            total.as_secs_f64()
        ),
    )
}

fn zero_connection_identity() -> Verdict {
    let (det, seg) = default_pair(7);
    let net = compose_cross_connected(&det, &seg, 10, 0.0, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..50 {
        let x = random_image(&mut rng, 96, 128);
        let (a, b) = net.forward_multitask(&x).unwrap();
        let (sa, _) = det.forward_multitask(&x).unwrap();
        let (_, sb) = seg.forward_multitask(&x).unwrap();
        if bits(&a.unwrap()) != bits(&sa.unwrap()) || bits(&b.unwrap()) != bits(&sb.unwrap()) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 50 inputs differ from the single nets"))
}

fn set(net: &mut MultiTaskNet, name: &str, values: &[f32]) {
    let id = net.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    net.params_mut().get_mut(id).data_mut().copy_from_slice(values);
}

fn stitch_embedding() -> Verdict {
    let (det, seg) = default_pair(9);
    let mut stitch = compose_cross_stitch(&det, &seg, 10).unwrap();
    let mut cross = compose_cross_connected(&det, &seg, 10, 0.0, 0).unwrap();
    let widths: Vec<usize> = stitch.units().iter().map(|u| u.out_channels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f32;
    for _ in 0..50 {
        for (u, &c) in widths.iter().enumerate() {
            for side in ["to_a", "to_b"] {
                let s: Vec<f32> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
                let mut diag = vec![0.0f32; c * c];
                for k in 0..c {
                    diag[k * c + k] = s[k];
                }
                set(&mut stitch, &format!("stitch{}.{side}.scale", u + 1), &s);
                set(&mut cross, &format!("cross{}.{side}.weight", u + 1), &diag);
            }
        }
        let x = random_image(&mut rng, 96, 128);
        let (sa, sb) = stitch.forward_multitask(&x).unwrap();
        let (ca, cb) = cross.forward_multitask(&x).unwrap();
        for (s, c) in [(sa.unwrap(), ca.unwrap()), (sb.unwrap(), cb.unwrap())] {
            for (p, q) in s.data().iter().zip(c.data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    check(worst < 1e-5, format!("max abs diff {worst:.2e} over 50 scale sets"))
}

fn random_box(rng: &mut ChaCha8Rng) -> ScoredBox {
    let score = rng.random();
    ScoredBox::new(
        rng.random_range(0.0..40.0),
        rng.random_range(0.0..40.0),
        rng.random_range(2.0..20.0),
        rng.random_range(2.0..20.0),
        score,
    )
}

fn exhaustive_matches(preds: &[ScoredBox], gts: &[ScoredBox], thr: f64) -> usize {
    fn go(i: usize, preds: &[ScoredBox], gts: &[ScoredBox], used: &mut [bool], thr: f64) -> usize {
        if i == preds.len() {
            return 0;
        }
        let mut best = go(i + 1, preds, gts, used, thr);
        for j in 0..gts.len() {
            if !used[j] && iou(&preds[i], &gts[j]) >= thr {
                used[j] = true;
                best = best.max(1 + go(i + 1, preds, gts, used, thr));
                used[j] = false;
            }
        }
        best
    }
    go(0, preds, gts, &mut vec![false; gts.len()], thr)
}

fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayMap {
    let mut m = GrayMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            m.set(x, y, f(x, y));
        }
    }
    m
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nms_failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..12);
        let boxes: Vec<ScoredBox> = (0..n).map(|_| random_box(&mut rng)).collect();
        let thr = rng.random_range(0.05..=1.0);
        let mut shuffled = boxes.clone();
        shuffled.shuffle(&mut rng);
        if nms(&shuffled, thr) != nms(&boxes, thr) {
            nms_failures += 1;
        }
    }

    // ground truths sit in separate cells of a 3x2 grid
    let mut match_failures = 0;
    for trial in 0..500 {
        let mut cells: Vec<usize> = (0..6).collect();
        cells.shuffle(&mut rng);
        let n_gt = rng.random_range(0..=5);
        let gts: Vec<ScoredBox> = cells[..n_gt]
            .iter()
            .map(|&c| {
                let (cx, cy) = ((c % 3) as f64 * 30.0, (c / 3) as f64 * 30.0);
                ScoredBox::new(
                    cx + rng.random_range(0.0..8.0),
                    cy + rng.random_range(0.0..8.0),
                    rng.random_range(6.0..20.0),
                    rng.random_range(6.0..20.0),
                    1.0,
                )
            })
            .collect();
        let preds: Vec<ScoredBox> = (0..rng.random_range(0..=5))
            .map(|_| {
                if !gts.is_empty() && rng.random_bool(0.7) {
                    let g = gts[rng.random_range(0..gts.len())];
                    ScoredBox::new(
                        g.x + rng.random_range(-4.0..4.0),
                        g.y + rng.random_range(-4.0..4.0),
                        g.w * rng.random_range(0.7..1.3),
                        g.h * rng.random_range(0.7..1.3),
                        rng.random(),
                    )
                } else {
                    random_box(&mut rng)
                }
            })
            .collect();
        let thr = [0.3, 0.5, 0.7][trial % 3];
        let greedy = greedy_match(&preds, &gts, thr).iter().filter(|(_, m)| m.is_some()).count();
        if greedy != exhaustive_matches(&preds, &gts, thr) {
            match_failures += 1;
        }
    }

    let dr = detection_rate(&map(10, 1, |x, _| (x < 5) as u8), &map(10, 1, |_, _| 1), 1)
        .map_err(|e| e.to_string())?;
    let dr_err = (dr.avg - 5.0 / 9.0).abs();

    let oracle = |sampled: &[f64]| {
        (sampled.iter().map(|m| m.max(1e-4).ln()).sum::<f64>() / sampled.len() as f64).exp()
    };
    let flat = [CurvePoint { fppi: 0.0, miss_rate: 0.5 }, CurvePoint { fppi: 3.0, miss_rate: 0.5 }];
    let step = [CurvePoint { fppi: 0.0, miss_rate: 1.0 }, CurvePoint { fppi: 0.1, miss_rate: 0.01 }];
    let perfect = [CurvePoint { fppi: 0.0, miss_rate: 0.0 }];
    let refs = lamr_reference_points(1e-2, 1.0).unwrap();
    let step_sampled: Vec<f64> = refs.iter().map(|&r| miss_rate_at(&step, r)).collect();
    let lamr_err = [
        (log_average_miss_rate(&flat, 1e-2, 1.0).unwrap() - 0.5).abs(),
        (log_average_miss_rate(&step, 1e-2, 1.0).unwrap() - oracle(&step_sampled)).abs(),
        (log_average_miss_rate(&perfect, 1e-2, 1e2).unwrap() - 1e-4).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    check(
        nms_failures == 0 && match_failures == 0 && dr_err < 1e-9 && lamr_err < 1e-6,
        format!(
            "NMS order-dependent in {nms_failures}/1000, greedy != exhaustive in {match_failures}/500, \
             DR error {dr_err:.1e}, LAMR error {lamr_err:.1e}"
        ),
    )
}

fn masking_and_schedule() -> Verdict {
    let scenes = |style, seed, kind| {
        let spec = SceneSpec {
            height: 32,
            width: 48,
            target_count: (1, 2),
            target_size: (8, 14),
            distractor_count: (0, 1),
            background: style,
            contrast: 1.0,
            seed,
        };
        generate_dataset(&spec, 12, 0, kind).unwrap()
    };
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes);
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks);
    let stream = |head| StreamSpec::from_widths(3, &[4, 4, 6], &[1, 2], head);
    let det = build_single_stream(
        &stream(HeadSpec::Detection(DetectionHeadSpec { hidden: 6, anchors: vec![(8.0, 8.0), (13.0, 13.0)] })),
        3,
    )
    .unwrap();
    let seg = build_single_stream(
        &stream(HeadSpec::Segmentation(SegmentationHeadSpec { hidden: 6, classes: 3 })),
        4,
    )
    .unwrap();
    let net = compose_cross_connected(&det, &seg, 3, 0.1, 5).unwrap();
    let sizes = [(Task::Detection, 12), (Task::Segmentation, 12)];
    let mut mismatches = 0;
    let mut batches = 0;
    for draw in alternation_schedule(&sizes, 2, 7, 100, 1).unwrap() {
        let set = if draw.task == Task::Detection { &det_set } else { &seg_set };
        let samples: Vec<_> = draw.indices.iter().map(|&i| &set.samples[i]).collect();
        let batch = Batch::from_samples(&samples, draw.task).unwrap();
        let mut tape = Tape::new();
        let params = net.bind(&mut tape).unwrap();
        let joint = multitask_loss(&net, &mut tape, &params, &batch, 1.0).unwrap();
        let mut alone_tape = Tape::new();
        let alone_params = net.bind(&mut alone_tape).unwrap();
        let alone = task_loss(&net, &mut alone_tape, &alone_params, &batch).unwrap();
        if tape.scalar(joint).to_bits() != alone_tape.scalar(alone).to_bits() {
            mismatches += 1;
        }
        batches += 1;
    }

    let big = [(Task::Detection, 300), (Task::Segmentation, 300)];
    let tasks: Vec<Task> = alternation_schedule(&big, 4, 100, 1000, 0).unwrap().map(|d| d.task).collect();
    let off_pattern = tasks
        .iter()
        .enumerate()
        .filter(|(i, t)| **t != if (i / 100) % 2 == 0 { Task::Detection } else { Task::Segmentation })
        .count();
    check(
        batches == 100 && mismatches == 0 && tasks.len() == 1000 && off_pattern == 0,
        format!(
            "{mismatches}/{batches} batches differ from the task loss, \
             {off_pattern}/{} iterations off the interval-100 pattern",
            tasks.len()
        ),
    )
}

/// Every file below `root`, relative path and contents, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn plan_text(variants: &[TrainMode], out: &str, seed: u64) -> String {
    let names: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
    format!("variants={}\ndata=data\nout={out}\nseed={seed}\n", names.join(","))
}

fn compare(work: &Path, variants: &[TrainMode], out: &str, seed: u64) -> (CompareOutcome, Duration) {
    let text = plan_text(variants, out, seed);
    let plan = Plan::parse(&text, work).unwrap();
    let start = Instant::now();
    let outcome = run_compare(&plan, &text).unwrap();
    (outcome, start.elapsed())
}

fn transfer_lamr(outcome: &CompareOutcome, variant: TrainMode) -> f64 {
    outcome
        .results
        .iter()
        .find(|r| r.variant == variant && r.test_set == "transfer")
        .and_then(|r| r.lamr)
        .expect("detection variant has a transfer LAMR")
}

fn protocol_run(work: &Path) -> (Verdict, Option<CompareOutcome>) {
    let (first, t1) = compare(work, &VARIANTS, "seed0_a", 0);
    let (_, t2) = compare(work, &VARIANTS, "seed0_b", 0);
    let limit = Duration::from_secs(30 * 60);
    let a = work.join("seed0_a");
    let b = work.join("seed0_b");
    let mut differing = Vec::new();
    for name in [RESULTS_CSV, TRAINING_CSV] {
        if fs::read(a.join(name)).unwrap() != fs::read(b.join(name)).unwrap() {
            differing.push(name.to_string());
        }
    }
    let (ta, tb) = (tree(&a.join(RUNS_DIR)), tree(&b.join(RUNS_DIR)));
    if ta != tb {
        differing.push(RUNS_DIR.to_string());
    }
    let not_decreasing: Vec<String> = first
        .training
        .iter()
        .filter(|r| !r.decreased())
        .map(|r| {
            format!(
                "{} {} {} ({:.4} -> {:.4})",
                r.run,
                r.phase,
                r.task.tag(),
                r.smoothed_first.unwrap_or(f64::NAN),
                r.smoothed_last.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let verdict = check(
        first.results.len() == 18 && t1 < limit && t2 < limit && differing.is_empty() && not_decreasing.is_empty(),
        format!(
            "{} rows, {:.0}s and {:.0}s, {} run files compared, differing: {differing:?}, \
             traces not decreasing: {}/{} [{}]",
            first.results.len(),
            t1.as_secs_f64(),
            t2.as_secs_f64(),
            ta.len(),
            not_decreasing.len(),
            first.training.len(),
            not_decreasing.join("; ")
        ),
    );
    (verdict, Some(first))
}

fn directional(work: &Path, seed0: &CompareOutcome) -> Verdict {
    let mut lines = Vec::new();
    let mut wins = 0;
    let variants = [TrainMode::SingleDet, TrainMode::CrossConnected];
    for seed in 0..5u64 {
        let outcome;
        let o = if seed == 0 {
            seed0
        } else {
            outcome = compare(work, &variants, &format!("seed{seed}"), seed).0;
            &outcome
        };
        let single = transfer_lamr(o, TrainMode::SingleDet);
        let cc = transfer_lamr(o, TrainMode::CrossConnected);
        if cc <= single {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {cc:.4} vs {single:.4}"));
    }
    check(
        wins >= 3,
        format!("cross_connected transfer LAMR <= single_det on {wins}/5 seeds ({})", lines.join(", ")),
    )
}

fn random_network(rng: &mut ChaCha8Rng) -> MultiTaskNet {
    let depth = rng.random_range(1..=4);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    let mut pools: Vec<usize> = (1..=depth).filter(|_| rng.random_bool(0.5)).collect();
    if pools.is_empty() {
        pools.push(depth);
    }
    let anchors = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(2.0..30.0f32), rng.random_range(2.0..30.0f32)))
        .collect();
    let det_spec = StreamSpec::from_widths(
        3,
        &widths,
        &pools,
        HeadSpec::Detection(DetectionHeadSpec { hidden: rng.random_range(1..=5), anchors }),
    );
    let seg_spec = StreamSpec::from_widths(
        3,
        &widths,
        &pools,
        HeadSpec::Segmentation(SegmentationHeadSpec {
            hidden: rng.random_range(1..=5),
            classes: rng.random_range(2..=4),
        }),
    );
    let det = build_single_stream(&det_spec, rng.random()).unwrap();
    let seg = build_single_stream(&seg_spec, rng.random()).unwrap();
    let mut net = match rng.random_range(0..5) {
        0 => det,
        1 => seg,
        2 => compose_cross_connected(&det, &seg, rng.random_range(1..=depth), 0.1, rng.random()).unwrap(),
        3 => compose_cross_stitch(&det, &seg, rng.random_range(1..=depth)).unwrap(),
        _ => compose_shared(&det, &seg, rng.random_range(1..=pools.len())).unwrap(),
    };
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
    }
    net
}

fn round_trips(work: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut weight_failures = 0;
    for i in 0..100 {
        let net = random_network(&mut rng);
        let path = work.join(format!("net{i}.xcnw"));
        save_weights(&net, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        if loaded != net || encode_weights(&loaded) != bytes || decode_weights(&bytes).unwrap() != net {
            weight_failures += 1;
        }
    }
    let styles = [BackgroundStyle::SmoothGradient, BackgroundStyle::ClutterNoise, BackgroundStyle::HeavyClutter];
    let kinds = [AnnotationKind::Boxes, AnnotationKind::Masks, AnnotationKind::Both];
    let mut data_failures = 0;
    for i in 0..100 {
        let spec = loop {
            let (h, w) = (rng.random_range(12..40), rng.random_range(12..40));
            let hi = rng.random_range(4..=h.min(w) - 4);
            let spec = SceneSpec {
                height: h,
                width: w,
                target_count: (0, rng.random_range(0..=3)),
                target_size: (4, hi),
                distractor_count: (0, rng.random_range(0..=2)),
                background: styles[rng.random_range(0..3)],
                contrast: rng.random_range(0.2..1.5),
                seed: rng.random(),
            };
            if spec.validate().is_ok() {
                break spec;
            }
        };
        let n_train = rng.random_range(0..3);
        let n_test = rng.random_range(1..3);
        let ds = generate_dataset(&spec, n_train, n_test, kinds[rng.random_range(0..3)]).unwrap();
        let (first, second) = (work.join(format!("ds{i}a")), work.join(format!("ds{i}b")));
        write_dataset(&ds, &first).unwrap();
        let loaded = read_dataset(&first).unwrap();
        write_dataset(&loaded, &second).unwrap();
        if loaded != ds || tree(&first) != tree(&second) {
            data_failures += 1;
        }
    }
    check(
        weight_failures == 0 && data_failures == 0,
        format!("{weight_failures}/100 networks and {data_failures}/100 datasets changed on a round trip"),
    )
}

fn report(n: usize, name: &str, verdict: Verdict) -> bool {
    let (tag, detail, ok) = match verdict {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {n} {tag} ({name}): {detail}");
    ok
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".to_string())
    })
}

fn main() -> ExitCode {
    let work = tempfile::TempDir::new().unwrap();
    let mut all = true;
    all &= report(1, "gradient suite", guarded(gradient_suite).and_then(|v| v));
    all &= report(2, "zero-connection identity", guarded(zero_connection_identity).and_then(|v| v));
    all &= report(3, "cross-stitch embedding", guarded(stitch_embedding).and_then(|v| v));
    all &= report(4, "metric oracles", guarded(metric_oracles).and_then(|v| v));
    all &= report(5, "masking and scheduling", guarded(masking_and_schedule).and_then(|v| v));

    let setup = guarded(|| gen_data(&GenSpec::default(), &work.path().join("data"), false).unwrap());
    let (protocol, seed0) = match setup.and_then(|_| guarded(|| protocol_run(work.path()))) {
        Ok(r) => r,
        Err(e) => (Err(e), None),
    };
    all &= report(6, "protocol run", protocol);
    let direction = match &seed0 {
        Some(o) => guarded(|| directional(work.path(), o)).and_then(|v| v),
        None => Err("protocol run did not finish".to_string()),
    };
    all &= report(7, "directional sanity", direction);
    all &= report(8, "format round trips", guarded(|| round_trips(work.path())).and_then(|v| v));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
