use crate::error::{Error, Result};
use crate::synthdata::{InstanceMap, LabelMap};

/// Coverage thresholds 0.1, 0.2, ..., 0.9 as tenths.
pub const DETECTION_RATE_STEPS: usize = 9;

fn check_dims(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Eval(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Pixel counts for per-class IoU accumulated over many images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(n_classes: usize) -> Self {
        IouAccumulator {
            tp: vec![0; n_classes],
            fp: vec![0; n_classes],
            fn_: vec![0; n_classes],
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_dims(pred, gt)?;
        let n = self.tp.len();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            let (p, g) = (p as usize, g as usize);
            if p >= n || g >= n {
                return Err(Error::Eval(format!(
                    "class {} outside 0..{n}",
                    p.max(g)
                )));
            }
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    /// TP / (TP + FP + FN) per class; `None` for classes that appear in
    /// neither prediction nor ground truth.
    pub fn finish(&self) -> Vec<Option<f64>> {
        (0..self.tp.len())
            .map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
            })
            .collect()
    }
}

/// Per-class IoU of a single prediction.
pub fn iou_per_class(pred: &LabelMap, gt: &LabelMap, n_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut acc = IouAccumulator::new(n_classes);
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

/// Mean over the defined entries of a per-class IoU list.
pub fn mean_iou(per_class: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRate {
    pub avg: f64,
    /// Fraction of instances detected at thresholds 0.1 through 0.9.
    pub by_threshold: [f64; DETECTION_RATE_STEPS],
}

/// Covered and total pixel counts of every ground-truth instance seen.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectionRateAccumulator {
    instances: Vec<(u64, u64)>,
}

impl DetectionRateAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &LabelMap, instances: &InstanceMap, target_class: u8) -> Result<()> {
        check_dims(pred, instances)?;
        let mut counts = [(0u64, 0u64); 256];
        for (&p, &id) in pred.data.iter().zip(&instances.data) {
            if id == 0 {
                continue;
            }
            let c = &mut counts[id as usize];
            c.1 += 1;
            if p == target_class {
                c.0 += 1;
            }
        }
        self.instances
            .extend(counts.iter().filter(|c| c.1 > 0).copied());
        Ok(())
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// An instance counts as detected at threshold `k / 10` when at least
    /// that fraction of its pixels is predicted as the target class.
    pub fn finish(&self) -> Result<DetectionRate> {
        if self.instances.is_empty() {
            return Err(Error::Eval(
                "detection rate is undefined without ground-truth instances".into(),
            ));
        }
        let total = self.instances.len() as f64;
        let mut by_threshold = [0.0; DETECTION_RATE_STEPS];
        for (k, slot) in by_threshold.iter_mut().enumerate() {
            let tenths = k as u64 + 1;
            let hits = self
                .instances
                .iter()
                .filter(|(covered, size)| covered * 10 >= tenths * size)
                .count();
            *slot = hits as f64 / total;
        }
        let avg = by_threshold.iter().sum::<f64>() / DETECTION_RATE_STEPS as f64;
        Ok(DetectionRate { avg, by_threshold })
    }
}

/// Detection rate of a single prediction.
pub fn detection_rate(pred: &LabelMap, instances: &InstanceMap, target_class: u8) -> Result<DetectionRate> {
    let mut acc = DetectionRateAccumulator::new();
    acc.add(pred, instances, target_class)?;
    acc.finish()
}
