use crossnet::netgraph::{
    build_single_stream, compose_cross_connected, DetectionHeadSpec, HeadSpec, MultiTaskNet,
    SegmentationHeadSpec, StreamSpec, Task,
};
use crossnet::synthdata::{generate_dataset, AnnotationKind, BackgroundStyle, Dataset, SceneSpec};
use crossnet::trainer::{
    alternation_schedule, finetune, multitask_loss, pretrain_single, sgd_update, task_loss, Batch,
    TrainConfig, TrainMode, SMOOTHING_WINDOW,
};
use crossnet::{Shape, Tape, Tensor};

fn scenes(style: BackgroundStyle, seed: u64, kind: AnnotationKind, n: usize) -> Dataset {
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
    generate_dataset(&spec, n, 0, kind).unwrap()
}

fn small_stream(head: HeadSpec) -> StreamSpec {
    StreamSpec::from_widths(3, &[4, 4, 6], &[1, 2], head)
}

fn small_pair(seed: u64) -> (MultiTaskNet, MultiTaskNet) {
    let det = build_single_stream(
        &small_stream(HeadSpec::Detection(DetectionHeadSpec {
            hidden: 6,
            anchors: vec![(8.0, 8.0), (13.0, 13.0)],
        })),
        seed,
    )
    .unwrap();
    let seg = build_single_stream(
        &small_stream(HeadSpec::Segmentation(SegmentationHeadSpec {
            hidden: 6,
            classes: 3,
        })),
        seed + 1,
    )
    .unwrap();
    (det, seg)
}

fn config(mode: TrainMode, iterations: usize) -> TrainConfig {
    let mut c = TrainConfig::for_mode(mode);
    c.iterations = iterations;
    c.batch_size = 2;
    c.switch_interval = 5;
    c.patch = Some((32, 32));
    c
}

#[test]
fn masked_joint_loss_equals_the_task_loss_exactly() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 12);
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks, 12);
    let (det, seg) = small_pair(3);
    let net = compose_cross_connected(&det, &seg, 3, 0.1, 4).unwrap();
    let sizes = [(Task::Detection, 12), (Task::Segmentation, 12)];
    let schedule = alternation_schedule(&sizes, 2, 3, 100, 9).unwrap();
    let mut seen = [0usize; 2];
    for draw in schedule {
        let set = if draw.task == Task::Detection { &det_set } else { &seg_set };
        let samples: Vec<_> = draw.indices.iter().map(|&i| &set.samples[i]).collect();
        let batch = Batch::from_samples(&samples, draw.task).unwrap();

        let mut tape = Tape::new();
        let params = net.bind(&mut tape).unwrap();
        let joint = multitask_loss(&net, &mut tape, &params, &batch, 1.0).unwrap();
        let joint_value = tape.scalar(joint);
        let grads = tape.backward(joint).unwrap();

        let mut alone_tape = Tape::new();
        let alone_params = net.bind(&mut alone_tape).unwrap();
        let alone = task_loss(&net, &mut alone_tape, &alone_params, &batch).unwrap();
        assert_eq!(joint_value.to_bits(), alone_tape.scalar(alone).to_bits());

        // the absent task's head takes no part in the graph
        let absent = match draw.task {
            Task::Detection => "seg.",
            Task::Segmentation => "det.",
        };
        for (i, (name, _)) in net.params().iter().enumerate() {
            if name.starts_with(absent) {
                assert!(grads.get(params[i]).is_none(), "{name} reached on a {} batch", draw.task.tag());
            }
        }
        seen[draw.task as usize] += 1;
    }
    assert_eq!(seen, [51, 49]);
}

#[test]
fn lambda_scales_only_the_segmentation_loss() {
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks, 2);
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 2);
    let (det, seg) = small_pair(5);
    let net = compose_cross_connected(&det, &seg, 3, 0.1, 6).unwrap();
    let value = |batch: &Batch, lambda: f64| {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape).unwrap();
        let v = multitask_loss(&net, &mut tape, &params, batch, lambda).unwrap();
        tape.scalar(v)
    };
    let seg_batch = Batch::from_samples(&seg_set.samples.iter().collect::<Vec<_>>(), Task::Segmentation).unwrap();
    let det_batch = Batch::from_samples(&det_set.samples.iter().collect::<Vec<_>>(), Task::Detection).unwrap();
    assert_eq!(value(&seg_batch, 2.0), 2.0 * value(&seg_batch, 1.0));
    assert_eq!(value(&det_batch, 2.0), value(&det_batch, 1.0));
    assert!(multitask_loss(&det, &mut Tape::new(), &[], &det_batch, 1.0).is_err());
}

#[test]
fn detection_batches_train_the_connections_into_stream_b() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 2);
    let (det, seg) = small_pair(7);
    let net = compose_cross_connected(&det, &seg, 3, 0.3, 8).unwrap().cast::<f64>();
    let batch = Batch::from_samples(&det_set.samples.iter().collect::<Vec<_>>(), Task::Detection).unwrap();
    let loss_of = |net: &MultiTaskNet<f64>| {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape).unwrap();
        let l = multitask_loss(net, &mut tape, &params, &batch, 1.0).unwrap();
        tape.scalar(l)
    };
    let mut tape = Tape::new();
    let params = net.bind(&mut tape).unwrap();
    let loss = multitask_loss(&net, &mut tape, &params, &batch, 1.0).unwrap();
    let grads = tape.backward(loss).unwrap();
    let id = net.params().find("cross1.to_b.weight").unwrap();
    let analytic = grads.get(params[id.index()]).unwrap().clone();
    let (k, &g) = analytic
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    assert!(g != 0.0);
    let eps = 1e-4;
    let mut plus = net.clone();
    plus.params_mut().get_mut(id).data_mut()[k] += eps;
    let mut minus = net.clone();
    minus.params_mut().get_mut(id).data_mut()[k] -= eps;
    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
    assert!((numeric - g).abs() <= 1e-3 * g.abs().max(numeric.abs()), "{numeric} vs {g}");
}

#[test]
fn alternation_follows_the_interval() {
    let sizes = [(Task::Detection, 300), (Task::Segmentation, 300)];
    let tags: Vec<Task> = alternation_schedule(&sizes, 4, 100, 1000, 0)
        .unwrap()
        .map(|d| d.task)
        .collect();
    assert_eq!(tags.len(), 1000);
    for (i, t) in tags.iter().enumerate() {
        let expected = if (i / 100) % 2 == 0 { Task::Detection } else { Task::Segmentation };
        assert_eq!(*t, expected, "iteration {i}");
    }
    let strict: Vec<Task> = alternation_schedule(&sizes, 1, 1, 4, 0).unwrap().map(|d| d.task).collect();
    assert_eq!(strict, [Task::Detection, Task::Segmentation, Task::Detection, Task::Segmentation]);
    let short: Vec<Task> = alternation_schedule(&sizes, 1, 3, 5, 0).unwrap().map(|d| d.task).collect();
    use Task::*;
    assert_eq!(short, [Detection, Detection, Detection, Segmentation, Segmentation]);
    assert!(alternation_schedule(&[(Detection, 0), (Segmentation, 3)], 1, 3, 5, 0).is_err());
}

#[test]
fn sgd_arithmetic() {
    let shape = Shape::new(1, 1, 1, 1);
    let mut p = Tensor::filled(shape, 1.0f32);
    let mut v = Tensor::zeros(shape);
    sgd_update(&mut p, &mut v, &Tensor::filled(shape, 0.5), 1.0, 0.0).unwrap();
    assert_eq!(p.data(), &[0.5]);

    let mut p = Tensor::zeros(shape);
    let mut v = Tensor::zeros(shape);
    for _ in 0..2 {
        sgd_update(&mut p, &mut v, &Tensor::filled(shape, 1.0), 0.1, 0.9).unwrap();
    }
    assert!((p.data()[0] + 0.29).abs() < 1e-6);

    let mut p = Tensor::filled(shape, 2.0f32);
    let mut v = Tensor::filled(shape, 0.5);
    sgd_update(&mut p, &mut v, &Tensor::zeros(shape), 0.1, 0.9).unwrap();
    assert_eq!(v.data(), &[0.45]);
    assert_eq!(p.data(), &[2.45]);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 6);
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks, 6);
    let (det, seg) = small_pair(11);
    let mut trained = det.clone();
    let mut c = config(TrainMode::SingleDet, 15);
    c.learning_rate = 0.0;
    pretrain_single(&mut trained, det_set.train(), &c).unwrap();
    assert_eq!(trained, det);

    let net = compose_cross_connected(&det, &seg, 3, 0.1, 1).unwrap();
    let mut joint = net.clone();
    let mut c = config(TrainMode::CrossConnected, 15);
    c.learning_rate = 0.0;
    finetune(&mut joint, Some(det_set.train()), Some(seg_set.train()), &c).unwrap();
    assert_eq!(joint, net);
}

#[test]
fn training_is_reproducible() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 6);
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks, 6);
    let run = || {
        let (mut det, seg) = small_pair(13);
        let t1 = pretrain_single(&mut det, det_set.train(), &config(TrainMode::SingleDet, 20)).unwrap();
        let mut net = compose_cross_connected(&det, &seg, 3, 0.1, 2).unwrap();
        let t2 = finetune(
            &mut net,
            Some(det_set.train()),
            Some(seg_set.train()),
            &config(TrainMode::CrossConnected, 20),
        )
        .unwrap();
        (t1, t2, crossnet::netgraph::weights::encode_weights(&net))
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(first.1.tasks(), vec![Task::Detection, Task::Segmentation]);
}

#[test]
fn single_dataset_finetuning_leaves_the_other_head_alone() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 1, AnnotationKind::Boxes, 6);
    let (det, seg) = small_pair(17);
    let net = compose_cross_connected(&det, &seg, 3, 0.1, 3).unwrap();
    let mut tuned = net.clone();
    let trace = finetune(&mut tuned, Some(det_set.train()), None, &config(TrainMode::SingleTaskCrossConnected, 25)).unwrap();
    assert_eq!(trace.tasks(), vec![Task::Detection]);
    let mut changed = false;
    for ((name, before), (_, after)) in net.params().iter().zip(tuned.params().iter()) {
        if name.starts_with("seg.") {
            assert_eq!(before, after, "{name} moved");
        } else if before != after {
            changed = true;
        }
    }
    assert!(changed);
}

#[test]
fn mismatched_datasets_are_rejected() {
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 2, AnnotationKind::Masks, 4);
    let (mut det, _) = small_pair(19);
    assert!(pretrain_single(&mut det, seg_set.train(), &config(TrainMode::SingleDet, 5)).is_err());
}

#[test]
fn pretraining_lowers_the_smoothed_loss() {
    let det_set = scenes(BackgroundStyle::ClutterNoise, 21, AnnotationKind::Boxes, 40);
    let seg_set = scenes(BackgroundStyle::SmoothGradient, 22, AnnotationKind::Masks, 40);
    let (mut det, mut seg) = small_pair(23);
    let det_trace = pretrain_single(&mut det, det_set.train(), &config(TrainMode::SingleDet, 200)).unwrap();
    let seg_trace = pretrain_single(&mut seg, seg_set.train(), &config(TrainMode::SingleSeg, 200)).unwrap();
    for trace in [det_trace, seg_trace] {
        assert_eq!(trace.records.len(), 200);
        assert!(trace.decreased(SMOOTHING_WINDOW), "{:?}", trace.smoothed_endpoints(trace.tasks()[0], SMOOTHING_WINDOW));
    }
}
