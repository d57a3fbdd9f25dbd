use crate::error::{Error, Result};
use crate::evalmetrics::{AnchorGrid, ScoredBox};
use crate::netgraph::{Mode, MultiTaskNet, Task};
use crate::ops::IGNORE_LABEL;
use crate::synthdata::{image_tensor, Sample};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Annotations of one task for every image of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Annotations {
    Boxes(Vec<Vec<ScoredBox>>),
    /// Class index per pixel, `(n, y, x)` row-major.
    Labels(Vec<i32>),
}

/// Images annotated for exactly one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub annotations: Annotations,
}

impl Batch {
    pub fn new(images: Tensor<f32>, annotations: Annotations) -> Result<Self> {
        let s = images.shape();
        if s.n == 0 {
            return Err(Error::config("batch is empty"));
        }
        let ok = match &annotations {
            Annotations::Boxes(b) => b.len() == s.n,
            Annotations::Labels(l) => l.len() == s.n * s.plane(),
        };
        if !ok {
            return Err(Error::data(format!("annotations do not cover a {s} batch")));
        }
        Ok(Batch {
            images,
            annotations,
        })
    }

    pub fn task(&self) -> Task {
        match self.annotations {
            Annotations::Boxes(_) => Task::Detection,
            Annotations::Labels(_) => Task::Segmentation,
        }
    }

    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks `samples` with their `task` annotations.
    pub fn from_samples(samples: &[&Sample], task: Task) -> Result<Self> {
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        if images.is_empty() {
            return Err(Error::config("batch is empty"));
        }
        let tensor = image_tensor(&images)?;
        let missing = |s: &Sample| {
            Error::data(format!(
                "sample {} lacks {} annotations",
                s.name,
                if task == Task::Detection { "box" } else { "mask" }
            ))
        };
        let annotations = match task {
            Task::Detection => Annotations::Boxes(
                samples
                    .iter()
                    .map(|s| {
                        s.boxes
                            .as_ref()
                            .map(|b| b.iter().map(ScoredBox::from).collect())
                            .ok_or_else(|| missing(s))
                    })
                    .collect::<Result<_>>()?,
            ),
            Task::Segmentation => {
                let mut labels = Vec::with_capacity(tensor.len() / 3);
                for s in samples {
                    let map = s.labels.as_ref().ok_or_else(|| missing(s))?;
                    labels.extend(map.data.iter().map(|&v| v as i32));
                }
                Annotations::Labels(labels)
            }
        };
        Batch::new(tensor, annotations)
    }
}

fn head_mismatch(task: Task) -> Error {
    Error::config(format!(
        "network has no {} head for a {} batch",
        match task {
            Task::Detection => "detection",
            Task::Segmentation => "segmentation",
        },
        task.tag()
    ))
}

fn detection_loss<T: Scalar>(
    net: &MultiTaskNet<T>,
    tape: &mut Tape<T>,
    params: &[Var],
    features: Var,
    images: Shape,
    boxes: &[Vec<ScoredBox>],
) -> Result<Var> {
    let head = net.detection_head().ok_or_else(|| head_mismatch(Task::Detection))?;
    let grid = AnchorGrid::new(net.downsample(), &head.spec.anchors, images.h, images.w)?;
    let targets = grid.assign(boxes);
    let (cls, reg) = net.detection_outputs(tape, params, features)?;
    let s = tape.shape(cls);
    let per_anchor = tape.reshape(cls, Shape::new(s.n * s.c / 2, 2, s.h, s.w))?;
    let (cls_loss, _) = tape.softmax_cross_entropy(per_anchor, &targets.labels, IGNORE_LABEL)?;
    let (reg_loss, _) = tape.smooth_l1(reg, &targets.deltas.cast(), &targets.mask.cast())?;
    tape.add(cls_loss, reg_loss)
}

fn segmentation_loss<T: Scalar>(
    net: &MultiTaskNet<T>,
    tape: &mut Tape<T>,
    params: &[Var],
    features: Var,
    labels: &[i32],
) -> Result<Var> {
    let logits = net.segmentation_outputs(tape, params, features)?;
    let (loss, _) = tape.softmax_cross_entropy(logits, labels, IGNORE_LABEL)?;
    Ok(loss)
}

/// Loss of the batch's own task. Detection: anchor classification
/// cross-entropy plus smooth-L1 box regression. Segmentation: per-pixel
/// cross-entropy. The other task's head is never evaluated.
pub fn task_loss<T: Scalar>(
    net: &MultiTaskNet<T>,
    tape: &mut Tape<T>,
    params: &[Var],
    batch: &Batch,
) -> Result<Var> {
    let task = batch.task();
    if !net.has_task(task) {
        return Err(head_mismatch(task));
    }
    let image = tape.leaf(batch.images.cast())?;
    let f = net.features(tape, params, image)?;
    match &batch.annotations {
        Annotations::Boxes(boxes) => {
            let fa = f.a.ok_or_else(|| head_mismatch(task))?;
            detection_loss(net, tape, params, fa, batch.images.shape(), boxes)
        }
        Annotations::Labels(labels) => {
            let fb = f.b.ok_or_else(|| head_mismatch(task))?;
            segmentation_loss(net, tape, params, fb, labels)
        }
    }
}

/// `L_all = L_A + lambda * L_B` where only the batch's task contributes:
/// `L_A` on detection batches, `lambda * L_B` on segmentation batches.
pub fn multitask_loss<T: Scalar>(
    net: &MultiTaskNet<T>,
    tape: &mut Tape<T>,
    params: &[Var],
    batch: &Batch,
    lambda: f64,
) -> Result<Var> {
    if !matches!(
        net.mode(),
        Mode::CrossConnected | Mode::CrossStitch | Mode::Shared(_)
    ) {
        return Err(Error::config("joint loss needs a multi-task network"));
    }
    let loss = task_loss(net, tape, params, batch)?;
    match batch.task() {
        Task::Detection => Ok(loss),
        Task::Segmentation => tape.scale(loss, T::from_f64(lambda)),
    }
}
