//! Two-phase training: single-task pre-training, then joint fine-tuning
//! with dataset alternation and loss masking.

mod config;
mod loss;
mod schedule;
mod sgd;
mod trace;

pub use config::{
    TrainConfig, TrainMode, DEFAULT_PATCH, FINETUNE_ITERATIONS, FINETUNE_LEARNING_RATE,
    PRETRAIN_ITERATIONS, PRETRAIN_LEARNING_RATE,
};
pub use loss::{multitask_loss, task_loss, Annotations, Batch};
pub use schedule::{alternation_schedule, AlternationSchedule, Draw};
pub use sgd::{sgd_update, Sgd};
pub use trace::{moving_average, LossRecord, LossTrace, SMOOTHING_WINDOW};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netgraph::{Mode, MultiTaskNet, Task};
use crate::synthdata::{crop_patch, Sample};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Forward, backward and one optimizer step on `loss_fn`'s graph.
fn optimize<F>(net: &mut MultiTaskNet<f32>, sgd: &mut Sgd, loss_fn: F) -> Result<f64>
where
    F: FnOnce(&MultiTaskNet<f32>, &mut Tape<f32>, &[crate::Var]) -> Result<crate::Var>,
{
    let mut tape = Tape::new();
    let params = net.bind(&mut tape)?;
    let loss = loss_fn(net, &mut tape, &params)?;
    let value = tape.scalar(loss) as f64;
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Option<Tensor<f32>>> = params.iter().map(|&p| grads.take(p)).collect();
    sgd.step(net.params_mut(), &grads)?;
    Ok(value)
}

/// One joint training step on a single-task batch; returns `L_all`.
pub fn multitask_step(
    net: &mut MultiTaskNet<f32>,
    sgd: &mut Sgd,
    batch: &Batch,
    lambda: f64,
) -> Result<f64> {
    optimize(net, sgd, |net, tape, params| {
        multitask_loss(net, tape, params, batch, lambda)
    })
}

/// One single-task step; returns the task loss.
pub fn single_step(net: &mut MultiTaskNet<f32>, sgd: &mut Sgd, batch: &Batch) -> Result<f64> {
    optimize(net, sgd, |net, tape, params| task_loss(net, tape, params, batch))
}

fn check_annotated(samples: &[Sample], task: Task) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::data(format!("{} training set is empty", task.tag())));
    }
    for s in samples {
        let ok = match task {
            Task::Detection => s.boxes.is_some(),
            Task::Segmentation => s.labels.is_some(),
        };
        if !ok {
            return Err(Error::data(format!(
                "sample {} has no {} annotations",
                s.name,
                if task == Task::Detection { "box" } else { "mask" }
            )));
        }
    }
    Ok(())
}

fn run(
    net: &mut MultiTaskNet<f32>,
    sets: &[(Task, &[Sample])],
    config: &TrainConfig,
    joint: bool,
) -> Result<LossTrace> {
    config.validate()?;
    for &(task, samples) in sets {
        check_annotated(samples, task)?;
        if !net.has_task(task) {
            return Err(Error::config(format!(
                "network has no head for the {} dataset",
                task.tag()
            )));
        }
    }
    let sizes: Vec<(Task, usize)> = sets.iter().map(|&(t, s)| (t, s.len())).collect();
    let schedule = alternation_schedule(
        &sizes,
        config.batch_size,
        config.switch_interval,
        config.iterations,
        config.seed,
    )?;
    let mut crop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    crop_rng.set_stream(3);
    let mut sgd = Sgd::new(net.params(), config.learning_rate, config.momentum);
    let mut trace = LossTrace::default();
    for draw in schedule {
        let samples = sets
            .iter()
            .find(|(t, _)| *t == draw.task)
            .map(|(_, s)| *s)
            .expect("schedule only draws configured tasks");
        let picked: Vec<Sample> = draw
            .indices
            .iter()
            .map(|&i| match config.patch {
                Some(patch) => crop_patch(&samples[i], patch, crop_rng.random()),
                None => Ok(samples[i].clone()),
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Sample> = picked.iter().collect();
        let batch = Batch::from_samples(&refs, draw.task)?;
        let loss = if joint {
            multitask_step(net, &mut sgd, &batch, config.lambda)?
        } else {
            single_step(net, &mut sgd, &batch)?
        };
        trace.push(draw.iteration, draw.task, loss);
    }
    Ok(trace)
}

/// Trains a single-task network on its own dataset.
pub fn pretrain_single(
    net: &mut MultiTaskNet<f32>,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<LossTrace> {
    let Mode::Single(task) = net.mode() else {
        return Err(Error::config("pre-training needs a single-task network"));
    };
    run(net, &[(task, samples)], config, false)
}

/// Joint fine-tuning of a multi-task network. With both datasets the
/// batches alternate every `switch_interval` iterations, detection first;
/// with one dataset only that task is trained.
pub fn finetune(
    net: &mut MultiTaskNet<f32>,
    detection: Option<&[Sample]>,
    segmentation: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<LossTrace> {
    if !net.mode().is_multitask() {
        return Err(Error::config("fine-tuning needs a multi-task network"));
    }
    let mut sets = Vec::new();
    if let Some(s) = detection {
        sets.push((Task::Detection, s));
    }
    if let Some(s) = segmentation {
        sets.push((Task::Segmentation, s));
    }
    if sets.is_empty() {
        return Err(Error::config("fine-tuning needs at least one dataset"));
    }
    run(net, &sets, config, true)
}
