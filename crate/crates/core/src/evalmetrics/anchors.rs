use crate::error::{Error, Result};
use crate::ops::IGNORE_LABEL;
use crate::tensor::{Shape, Tensor};

use super::boxes::{iou, ScoredBox};

/// Anchors with IoU at least this against some ground truth are positives.
pub const POSITIVE_IOU: f64 = 0.5;
/// Anchors whose best IoU is below this are negatives.
pub const NEGATIVE_IOU: f64 = 0.3;
/// Upper bound on decoded log-size deltas.
const MAX_LOG_DELTA: f64 = 4.0;

/// Anchor boxes centered on the cells of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub stride: usize,
    /// Anchor `(w, h)` in pixels.
    pub anchors: Vec<(f64, f64)>,
    /// Feature map rows and columns.
    pub rows: usize,
    pub cols: usize,
}

/// Training targets for one batch of detection images.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    /// One label per (image, anchor, cell) in the order of class logits
    /// reshaped to `(N * A, 2, rows, cols)`; `IGNORE_LABEL` marks neutral
    /// anchors.
    pub labels: Vec<i32>,
    /// Regression targets `(N, 4A, rows, cols)`.
    pub deltas: Tensor<f32>,
    /// 1 where `deltas` applies (positive anchors), else 0.
    pub mask: Tensor<f32>,
    pub positives: usize,
}

impl AnchorGrid {
    /// Grid for an `image_h` x `image_w` input downsampled by `stride`.
    pub fn new(stride: usize, anchors: &[(f32, f32)], image_h: usize, image_w: usize) -> Result<Self> {
        if stride == 0 || anchors.is_empty() {
            return Err(Error::config("anchor grid needs a stride and at least one anchor"));
        }
        if image_h % stride != 0 || image_w % stride != 0 {
            return Err(Error::config(format!(
                "{image_w}x{image_h} input is not a multiple of stride {stride}"
            )));
        }
        Ok(AnchorGrid {
            stride,
            anchors: anchors.iter().map(|&(w, h)| (w as f64, h as f64)).collect(),
            rows: image_h / stride,
            cols: image_w / stride,
        })
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.rows * self.stride, self.cols * self.stride)
    }

    fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    /// Box of anchor `a` at cell `(row, col)`.
    pub fn anchor_box(&self, a: usize, row: usize, col: usize) -> ScoredBox {
        let (cx, cy) = self.center(row, col);
        let (w, h) = self.anchors[a];
        ScoredBox::new(cx - w / 2.0, cy - h / 2.0, w, h, 0.0)
    }

    /// Applies `(dx, dy, dw, dh)` to an anchor: center offsets in anchor
    /// units, log size ratios.
    pub fn decode_box(&self, a: usize, row: usize, col: usize, d: [f64; 4]) -> ScoredBox {
        let (cx, cy) = self.center(row, col);
        let (aw, ah) = self.anchors[a];
        let cx = cx + d[0] * aw;
        let cy = cy + d[1] * ah;
        let w = aw * d[2].min(MAX_LOG_DELTA).exp();
        let h = ah * d[3].min(MAX_LOG_DELTA).exp();
        ScoredBox::new(cx - w / 2.0, cy - h / 2.0, w, h, 0.0)
    }

    /// Inverse of [`AnchorGrid::decode_box`].
    pub fn encode_box(&self, a: usize, row: usize, col: usize, target: &ScoredBox) -> [f64; 4] {
        let (cx, cy) = self.center(row, col);
        let (aw, ah) = self.anchors[a];
        [
            (target.x + target.w / 2.0 - cx) / aw,
            (target.y + target.h / 2.0 - cy) / ah,
            (target.w / aw).ln(),
            (target.h / ah).ln(),
        ]
    }

    /// Labels and regression targets for a batch, one list of ground-truth
    /// boxes per image. An anchor is positive at IoU >= [`POSITIVE_IOU`] or
    /// when it is the best anchor of some ground truth, negative below
    /// [`NEGATIVE_IOU`], and ignored otherwise.
    pub fn assign(&self, gts: &[Vec<ScoredBox>]) -> AnchorTargets {
        let na = self.anchors.len();
        let plane = self.rows * self.cols;
        let n = gts.len();
        let mut labels = vec![0i32; n * na * plane];
        let shape = Shape::new(n, 4 * na, self.rows, self.cols);
        let mut deltas = Tensor::zeros(shape);
        let mut mask = Tensor::zeros(shape);
        let mut positives = 0;
        for (img, boxes) in gts.iter().enumerate() {
            let mut best_of_gt = vec![(0.0f64, usize::MAX); boxes.len()];
            let mut best_for_anchor = vec![(0.0f64, usize::MAX); na * plane];
            for a in 0..na {
                for p in 0..plane {
                    let anchor = self.anchor_box(a, p / self.cols, p % self.cols);
                    for (g, gt) in boxes.iter().enumerate() {
                        let v = iou(&anchor, gt);
                        let slot = a * plane + p;
                        if v > best_for_anchor[slot].0 {
                            best_for_anchor[slot] = (v, g);
                        }
                        if v > best_of_gt[g].0 {
                            best_of_gt[g] = (v, slot);
                        }
                    }
                }
            }
            let mut forced = vec![usize::MAX; na * plane];
            for (g, &(v, slot)) in best_of_gt.iter().enumerate() {
                if v > 0.0 {
                    forced[slot] = g;
                }
            }
            for slot in 0..na * plane {
                let (a, p) = (slot / plane, slot % plane);
                let (v, g) = best_for_anchor[slot];
                let target = if forced[slot] != usize::MAX {
                    Some(forced[slot])
                } else if v >= POSITIVE_IOU {
                    Some(g)
                } else {
                    None
                };
                let li = (img * na + a) * plane + p;
                match target {
                    Some(g) => {
                        labels[li] = 1;
                        positives += 1;
                        let d = self.encode_box(a, p / self.cols, p % self.cols, &boxes[g]);
                        for (k, dk) in d.iter().enumerate() {
                            let off = (img * 4 * na + 4 * a + k) * plane + p;
                            deltas.data_mut()[off] = *dk as f32;
                            mask.data_mut()[off] = 1.0;
                        }
                    }
                    None if v >= NEGATIVE_IOU => labels[li] = IGNORE_LABEL,
                    None => labels[li] = 0,
                }
            }
        }
        AnchorTargets {
            labels,
            deltas,
            mask,
            positives,
        }
    }
}

/// Interleaves class logits `(N, 2A, h, w)` and box deltas `(N, 4A, h, w)`
/// into one `(N, 6A, h, w)` tensor holding, per anchor, two logits followed
/// by four deltas.
pub fn assemble_head_output(cls: &Tensor<f32>, reg: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (cs, rs) = (cls.shape(), reg.shape());
    if cs.c % 2 != 0 || rs.c != 2 * cs.c || (cs.n, cs.h, cs.w) != (rs.n, rs.h, rs.w) {
        return Err(Error::Shape {
            op: "detection head output",
            left: cs,
            right: rs,
        });
    }
    let na = cs.c / 2;
    let plane = cs.plane();
    let out_shape = Shape::new(cs.n, 6 * na, cs.h, cs.w);
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..cs.n {
        for a in 0..na {
            for k in 0..2 {
                let off = (n * cs.c + 2 * a + k) * plane;
                out.extend_from_slice(&cls.data()[off..off + plane]);
            }
            for k in 0..4 {
                let off = (n * rs.c + 4 * a + k) * plane;
                out.extend_from_slice(&reg.data()[off..off + plane]);
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Decodes one image of a `(1, 6A, h, w)` head output into scored boxes
/// clipped to the image. The score is the softmax probability of the target
/// class; boxes scoring below `score_floor` are dropped.
pub fn decode_detections(
    head_output: &Tensor<f32>,
    grid: &AnchorGrid,
    score_floor: f64,
) -> Result<Vec<ScoredBox>> {
    let s = head_output.shape();
    let na = grid.anchors.len();
    if s.n != 1 || s.c != 6 * na || s.h != grid.rows || s.w != grid.cols {
        return Err(Error::Shape {
            op: "decode_detections",
            left: s,
            right: Shape::new(1, 6 * na, grid.rows, grid.cols),
        });
    }
    let (img_h, img_w) = grid.image_size();
    let plane = s.plane();
    let x = head_output.data();
    let mut out = Vec::new();
    for a in 0..na {
        let base = 6 * a * plane;
        for p in 0..plane {
            let at = |k: usize| x[base + k * plane + p] as f64;
            let score = 1.0 / (1.0 + (at(0) - at(1)).exp());
            if score < score_floor {
                continue;
            }
            let b = grid.decode_box(a, p / grid.cols, p % grid.cols, [at(2), at(3), at(4), at(5)]);
            let x0 = b.x.max(0.0);
            let y0 = b.y.max(0.0);
            let x1 = (b.x + b.w).min(img_w as f64);
            let y1 = (b.y + b.h).min(img_h as f64);
            if x1 > x0 && y1 > y0 {
                out.push(ScoredBox::new(x0, y0, x1 - x0, y1 - y0, score));
            }
        }
    }
    Ok(out)
}
