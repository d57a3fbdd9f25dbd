use crate::synthdata::GtBox;

/// Axis-aligned box in pixels with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, score: f64) -> Self {
        ScoredBox { x, y, w, h, score }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<&GtBox> for ScoredBox {
    fn from(b: &GtBox) -> Self {
        ScoredBox::new(b.x as f64, b.y as f64, b.w as f64, b.h as f64, 1.0)
    }
}

/// Intersection over union of two boxes; 0 when either is empty.
pub fn iou(a: &ScoredBox, b: &ScoredBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices of `boxes` sorted by descending score, ties by index.
pub(crate) fn score_order(boxes: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    order
}

/// Greedy non-maximum suppression. A box is suppressed when its IoU with
/// an already kept box is at least `iou_threshold`. Kept boxes are returned
/// in descending score order.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut kept: Vec<ScoredBox> = Vec::new();
    for i in score_order(boxes) {
        let b = boxes[i];
        if kept.iter().all(|k| iou(k, &b) < iou_threshold) {
            kept.push(b);
        }
    }
    kept
}

/// Greedy one-to-one matching in score order: each prediction takes the
/// unmatched ground-truth box with the highest IoU, if that IoU is at least
/// `match_iou`. Returns, per prediction in `score_order`, whether it matched.
pub fn greedy_match(preds: &[ScoredBox], gts: &[ScoredBox], match_iou: f64) -> Vec<(usize, Option<usize>)> {
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&preds[i], g);
            if v >= match_iou && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        out.push((i, best.map(|(j, _)| j)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64, s: f64) -> ScoredBox {
        ScoredBox::new(x, y, w, h, s)
    }

    #[test]
    fn iou_of_half_overlap() {
        let a = b(0.0, 0.0, 10.0, 10.0, 1.0);
        let c = b(5.0, 0.0, 10.0, 10.0, 1.0);
        assert!((iou(&a, &c) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b(10.0, 0.0, 5.0, 5.0, 1.0)), 0.0);
    }

    #[test]
    fn identical_boxes_keep_the_higher_score() {
        let kept = nms(&[b(0.0, 0.0, 4.0, 4.0, 0.8), b(0.0, 0.0, 4.0, 4.0, 0.9)], 0.7);
        assert_eq!(kept, vec![b(0.0, 0.0, 4.0, 4.0, 0.9)]);
    }

    #[test]
    fn disjoint_boxes_all_kept() {
        let boxes = [b(0.0, 0.0, 2.0, 2.0, 0.1), b(5.0, 5.0, 2.0, 2.0, 0.2)];
        assert_eq!(nms(&boxes, 0.1).len(), 2);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn suppression_is_inclusive() {
        // IoU exactly 0.5
        let boxes = [b(0.0, 0.0, 3.0, 1.0, 0.9), b(1.0, 0.0, 3.0, 1.0, 0.8)];
        assert_eq!(nms(&boxes, 0.5).len(), 1);
        assert_eq!(nms(&boxes, 0.5000001).len(), 2);
    }
}
