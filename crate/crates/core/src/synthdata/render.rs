use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::pnm::{GrayMap, RgbImage};
use super::{
    AnnotationKind, BackgroundStyle, GtBox, Sample, SceneSpec, DETECTION_CLASS, DISTRACTOR,
    TARGET,
};

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Free pixels required between any two placed objects.
const OBJECT_GAP: i64 = 2;

const TARGET_COLOR: [f32; 3] = [205.0, 50.0, 45.0];
const DISTRACTOR_COLOR: [f32; 3] = [45.0, 140.0, 205.0];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Ellipse,
    Rectangle,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Placed {
    fn overlaps(&self, other: &Placed) -> bool {
        let (ax0, ay0) = (self.x as i64 - OBJECT_GAP, self.y as i64 - OBJECT_GAP);
        let (ax1, ay1) = (
            (self.x + self.w) as i64 + OBJECT_GAP,
            (self.y + self.h) as i64 + OBJECT_GAP,
        );
        let (bx0, by0) = (other.x as i64, other.y as i64);
        let (bx1, by1) = ((other.x + other.w) as i64, (other.y + other.h) as i64);
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }

    fn contains(&self, shape: Shape, px: usize, py: usize) -> bool {
        if px < self.x || py < self.y || px >= self.x + self.w || py >= self.y + self.h {
            return false;
        }
        match shape {
            Shape::Rectangle => true,
            Shape::Ellipse => {
                let rx = self.w as f64 / 2.0;
                let ry = self.h as f64 / 2.0;
                let dx = (px as f64 + 0.5 - (self.x as f64 + rx)) / rx;
                let dy = (py as f64 + 0.5 - (self.y as f64 + ry)) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn rng_for(spec: &SceneSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    rng
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

struct StyleParams {
    blobs: usize,
    blob_alpha: f32,
    noise: f32,
}

fn style_params(style: BackgroundStyle) -> StyleParams {
    match style {
        BackgroundStyle::SmoothGradient => StyleParams {
            blobs: 0,
            blob_alpha: 0.0,
            noise: 3.0,
        },
        BackgroundStyle::ClutterNoise => StyleParams {
            blobs: 10,
            blob_alpha: 0.5,
            noise: 10.0,
        },
        BackgroundStyle::HeavyClutter => StyleParams {
            blobs: 28,
            blob_alpha: 0.75,
            noise: 22.0,
        },
    }
}

fn paint_background(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    let (w, h) = (spec.width, spec.height);
    let c0 = random_color(rng, 60.0, 190.0);
    let c1 = random_color(rng, 60.0, 190.0);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let diag = ((w * w + h * h) as f32).sqrt();
    let mut canvas = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f32 - w as f32 / 2.0) * ca + (y as f32 - h as f32 / 2.0) * sa) / diag + 0.5;
            canvas.push([
                c0[0] + (c1[0] - c0[0]) * t,
                c0[1] + (c1[1] - c0[1]) * t,
                c0[2] + (c1[2] - c0[2]) * t,
            ]);
        }
    }
    let style = style_params(spec.background);
    for _ in 0..style.blobs {
        let bw = rng.random_range(3..=20usize).min(w);
        let bh = rng.random_range(3..=20usize).min(h);
        let blob = Placed {
            x: rng.random_range(0..=w - bw),
            y: rng.random_range(0..=h - bh),
            w: bw,
            h: bh,
        };
        let shape = if rng.random_bool(0.5) {
            Shape::Ellipse
        } else {
            Shape::Rectangle
        };
        let color = random_color(rng, 30.0, 225.0);
        for y in blob.y..blob.y + blob.h {
            for x in blob.x..blob.x + blob.w {
                if blob.contains(shape, x, y) {
                    let px = &mut canvas[y * w + x];
                    for c in 0..3 {
                        px[c] += (color[c] - px[c]) * style.blob_alpha;
                    }
                }
            }
        }
    }
    canvas
}

fn place(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    placed: &[Placed],
    index: usize,
) -> Result<Placed> {
    let (lo, hi) = spec.target_size;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let w = rng.random_range(lo..=hi);
        let aspect: f64 = rng.random_range(0.7..1.4);
        let h = ((w as f64 * aspect).round() as usize).clamp(lo, hi);
        if w + 2 > spec.width || h + 2 > spec.height {
            continue;
        }
        let cand = Placed {
            x: rng.random_range(1..=spec.width - w - 1),
            y: rng.random_range(1..=spec.height - h - 1),
            w,
            h,
        };
        if placed.iter().all(|p| !p.overlaps(&cand)) {
            return Ok(cand);
        }
    }
    Err(Error::Generation(format!(
        "could not place object {} of image {index} after {MAX_PLACEMENT_ATTEMPTS} attempts",
        placed.len() + 1
    )))
}

/// Top-left corners of the `lo`x`lo` slots of a regular grid that keeps
/// the object gap and the 1 px border.
pub(super) fn grid_slots(spec: &SceneSpec) -> Vec<(usize, usize)> {
    let lo = spec.target_size.0;
    let pitch = lo + OBJECT_GAP as usize;
    let fit = |extent: usize| (extent.saturating_sub(2) + OBJECT_GAP as usize) / pitch;
    let mut slots = Vec::new();
    for gy in 0..fit(spec.height) {
        for gx in 0..fit(spec.width) {
            slots.push((1 + gx * pitch, 1 + gy * pitch));
        }
    }
    slots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Random,
    Grid,
}

/// Renders scene `index` of `spec`. Scenes too crowded for random
/// placement are redrawn with minimum-size objects on grid slots.
pub fn render_sample(
    spec: &SceneSpec,
    index: usize,
    kind: AnnotationKind,
    name: String,
) -> Result<Sample> {
    match render_with(spec, index, kind, &name, Layout::Random) {
        Err(Error::Generation(_)) => render_with(spec, index, kind, &name, Layout::Grid),
        other => other,
    }
}

fn render_with(
    spec: &SceneSpec,
    index: usize,
    kind: AnnotationKind,
    name: &str,
    layout: Layout,
) -> Result<Sample> {
    let mut rng = rng_for(spec, index);
    let (w, h) = (spec.width, spec.height);
    let mut canvas = paint_background(spec, &mut rng);
    let mut mean = [0.0f32; 3];
    for px in &canvas {
        for c in 0..3 {
            mean[c] += px[c];
        }
    }
    for m in &mut mean {
        *m /= canvas.len() as f32;
    }

    let n_targets = rng.random_range(spec.target_count.0..=spec.target_count.1);
    let n_distractors = rng.random_range(spec.distractor_count.0..=spec.distractor_count.1);
    if n_targets > 255 {
        return Err(Error::Generation("at most 255 targets per image".into()));
    }
    let mut placed: Vec<Placed> = Vec::new();
    let mut labels = GrayMap::new(w, h);
    let mut instances = GrayMap::new(w, h);
    let style = style_params(spec.background);
    let mut slots = match layout {
        Layout::Random => Vec::new(),
        Layout::Grid => grid_slots(spec),
    };
    slots.shuffle(&mut rng);
    for k in 0..n_targets + n_distractors {
        let is_target = k < n_targets;
        let obj = match layout {
            Layout::Random => place(spec, &mut rng, &placed, index)?,
            Layout::Grid => {
                let (x, y) = *slots.get(k).ok_or_else(|| {
                    Error::Generation(format!(
                        "image {index} needs {} objects but only {} fit",
                        n_targets + n_distractors,
                        slots.len()
                    ))
                })?;
                let lo = spec.target_size.0;
                Placed { x, y, w: lo, h: lo }
            }
        };
        placed.push(obj);
        let shape = if rng.random_bool(0.5) {
            Shape::Ellipse
        } else {
            Shape::Rectangle
        };
        let base = if is_target { TARGET_COLOR } else { DISTRACTOR_COLOR };
        let mut color = [0.0f32; 3];
        for c in 0..3 {
            let jittered = base[c] + rng.random_range(-20.0..20.0f32);
            color[c] = mean[c] + spec.contrast * (jittered - mean[c]);
        }
        for y in obj.y..obj.y + obj.h {
            for x in obj.x..obj.x + obj.w {
                if obj.contains(shape, x, y) {
                    canvas[y * w + x] = color;
                    if is_target {
                        labels.set(x, y, TARGET);
                        instances.set(x, y, (k + 1) as u8);
                    } else {
                        labels.set(x, y, DISTRACTOR);
                    }
                }
            }
        }
    }

    let mut image = RgbImage::new(w, h);
    for (i, px) in canvas.iter().enumerate() {
        for c in 0..3 {
            let noise = if style.noise > 0.0 {
                rng.random_range(-style.noise..style.noise)
            } else {
                0.0
            };
            image.data[i * 3 + c] = (px[c] + noise).round().clamp(0.0, 255.0) as u8;
        }
    }

    let boxes = if kind.has_boxes() {
        let mut boxes = Vec::with_capacity(n_targets);
        for id in 1..=n_targets {
            if let Some((x, y, bw, bh)) = super::instance_box(&instances, id as u8) {
                boxes.push(GtBox {
                    x: x as u32,
                    y: y as u32,
                    w: bw as u32,
                    h: bh as u32,
                    class: DETECTION_CLASS,
                });
            }
        }
        Some(boxes)
    } else {
        None
    };
    let (labels, instances) = if kind.has_masks() {
        (Some(labels), Some(instances))
    } else {
        (None, None)
    };
    Ok(Sample {
        name: name.to_string(),
        image,
        boxes,
        labels,
        instances,
    })
}
