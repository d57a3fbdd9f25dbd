//! Detection decoding and the evaluation metrics: NMS, FPPI/miss-rate
//! curves, log-average miss rate, per-class IoU and Detection Rate.

mod anchors;
mod boxes;
mod curve;
mod report;
mod seg;

pub use anchors::{
    assemble_head_output, decode_detections, AnchorGrid, AnchorTargets, NEGATIVE_IOU, POSITIVE_IOU,
};
pub use boxes::{greedy_match, iou, nms, ScoredBox};
pub use curve::{
    fppi_missrate_curve, lamr_reference_points, log_average_miss_rate, miss_rate_at, CurvePoint,
    LAMR_POINTS, MISS_RATE_FLOOR,
};
pub use report::{MetricReport, CURVE_CSV, SUMMARY_CSV};
pub use seg::{
    detection_rate, iou_per_class, mean_iou, DetectionRate, DetectionRateAccumulator,
    IouAccumulator, DETECTION_RATE_STEPS,
};

use crate::error::{Error, Result};
use crate::netgraph::{MultiTaskNet, Task};
use crate::synthdata::{image_tensor, LabelMap, Sample, NUM_CLASSES, TARGET};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Images per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub nms_threshold: f64,
    pub fppi_lo: f64,
    pub fppi_hi: f64,
    pub match_iou: f64,
    pub score_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            nms_threshold: 0.7,
            fppi_lo: 1e-2,
            fppi_hi: 1.0,
            match_iou: 0.5,
            score_floor: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err(Error::config(format!(
                "NMS threshold {} outside (0, 1]",
                self.nms_threshold
            )));
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return Err(Error::config(format!("match IoU {} outside (0, 1]", self.match_iou)));
        }
        lamr_reference_points(self.fppi_lo, self.fppi_hi).map(|_| ())
    }
}

/// Post-NMS detections for every sample, in sample order.
pub fn predict_boxes(
    net: &MultiTaskNet<f32>,
    samples: &[Sample],
    config: &EvalConfig,
) -> Result<Vec<Vec<ScoredBox>>> {
    let head = net
        .detection_head()
        .ok_or_else(|| Error::config("network has no detection head"))?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let x = image_tensor(&images)?;
        let grid = AnchorGrid::new(net.downsample(), &head.spec.anchors, x.shape().h, x.shape().w)?;
        let mut tape = Tape::new();
        let params = net.bind(&mut tape)?;
        let input = tape.leaf(x)?;
        let features = net.features(&mut tape, &params, input)?;
        let fa = features.a.ok_or_else(|| Error::config("detection stream missing"))?;
        let (cls, reg) = net.detection_outputs(&mut tape, &params, fa)?;
        let head_out = assemble_head_output(tape.value(cls), tape.value(reg))?;
        for n in 0..chunk.len() {
            let one = head_out.batch_slice(n, 1)?;
            let boxes = decode_detections(&one, &grid, config.score_floor)?;
            out.push(nms(&boxes, config.nms_threshold));
        }
    }
    Ok(out)
}

/// Miss-rate curve and LAMR of the detection task over `samples`.
pub fn evaluate_detection(
    net: &MultiTaskNet<f32>,
    samples: &[Sample],
    config: &EvalConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if !net.has_task(Task::Detection) {
        return Err(Error::config("network has no detection head"));
    }
    let gts = samples
        .iter()
        .map(|s| {
            s.boxes
                .as_ref()
                .map(|b| b.iter().map(ScoredBox::from).collect::<Vec<_>>())
                .ok_or_else(|| {
                    Error::data(format!(
                        "sample {} has no box annotations; detection needs a boxes dataset",
                        s.name
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_boxes(net, samples, config)?;
    let curve = fppi_missrate_curve(&preds, &gts, config.match_iou)?;
    let lamr = log_average_miss_rate(&curve, config.fppi_lo, config.fppi_hi)?;
    Ok(MetricReport {
        curve,
        lamr: Some(lamr),
        ..MetricReport::default()
    })
}

/// Per-pixel argmax of `(1, C, H, W)` logits; ties go to the lower class.
pub fn argmax_labels(logits: &Tensor<f32>) -> Result<LabelMap> {
    let s = logits.shape();
    if s.n != 1 || s.c > 256 {
        return Err(Error::config(format!("cannot take a label map of logits {s}")));
    }
    let plane = s.plane();
    let x = logits.data();
    let mut map = LabelMap::new(s.w, s.h);
    for p in 0..plane {
        let mut best = 0;
        for c in 1..s.c {
            if x[c * plane + p] > x[best * plane + p] {
                best = c;
            }
        }
        map.data[p] = best as u8;
    }
    Ok(map)
}

/// Predicted label maps for every sample, in sample order.
pub fn predict_labels(net: &MultiTaskNet<f32>, samples: &[Sample]) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let x = image_tensor(&images)?;
        let mut tape = Tape::new();
        let params = net.bind(&mut tape)?;
        let input = tape.leaf(x)?;
        let features = net.features(&mut tape, &params, input)?;
        let fb = features.b.ok_or_else(|| Error::config("segmentation stream missing"))?;
        let logits = net.segmentation_outputs(&mut tape, &params, fb)?;
        for n in 0..chunk.len() {
            out.push(argmax_labels(&tape.value(logits).batch_slice(n, 1)?)?);
        }
    }
    Ok(out)
}

/// Per-class IoU and Detection Rate of the segmentation task over `samples`.
pub fn evaluate_segmentation(net: &MultiTaskNet<f32>, samples: &[Sample]) -> Result<MetricReport> {
    if !net.has_task(Task::Segmentation) {
        return Err(Error::config("network has no segmentation head"));
    }
    for s in samples {
        if s.labels.is_none() || s.instances.is_none() {
            return Err(Error::data(format!(
                "sample {} has no mask annotations; segmentation needs a masks dataset",
                s.name
            )));
        }
    }
    let preds = predict_labels(net, samples)?;
    let mut iou = IouAccumulator::new(NUM_CLASSES);
    let mut dr = DetectionRateAccumulator::new();
    for (s, pred) in samples.iter().zip(&preds) {
        iou.add(pred, s.labels.as_ref().expect("checked above"))?;
        dr.add(pred, s.instances.as_ref().expect("checked above"), TARGET)?;
    }
    Ok(MetricReport {
        iou_per_class: iou.finish(),
        detection_rate: Some(dr.finish()?),
        ..MetricReport::default()
    })
}
