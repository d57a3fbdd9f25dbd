//! Deterministic synthetic scenes with box and mask annotations.
//!
//! Three dataset roles are produced from one generator: a box-annotated
//! detection set, a mask-annotated segmentation set with a different
//! background distribution, and a harder transfer set used only for
//! detection testing.

mod crop;
mod pnm;
mod render;
mod store;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use crop::{crop_at, crop_patch, MIN_KEPT_AREA};
pub use pnm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, GrayMap, InstanceMap,
    LabelMap, RgbImage,
};
pub use render::render_sample;
pub use store::{read_dataset, write_dataset, MANIFEST};

pub const BACKGROUND: u8 = 0;
pub const TARGET: u8 = 1;
pub const DISTRACTOR: u8 = 2;
pub const NUM_CLASSES: usize = 3;
/// Class id written to box files for targets.
pub const DETECTION_CLASS: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundStyle {
    SmoothGradient,
    ClutterNoise,
    HeavyClutter,
}

impl fmt::Display for BackgroundStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackgroundStyle::SmoothGradient => "smooth_gradient",
            BackgroundStyle::ClutterNoise => "clutter_noise",
            BackgroundStyle::HeavyClutter => "heavy_clutter",
        })
    }
}

impl FromStr for BackgroundStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth_gradient" => Ok(BackgroundStyle::SmoothGradient),
            "clutter_noise" => Ok(BackgroundStyle::ClutterNoise),
            "heavy_clutter" => Ok(BackgroundStyle::HeavyClutter),
            other => Err(Error::config(format!("unknown background style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationKind {
    Boxes,
    Masks,
    Both,
}

impl AnnotationKind {
    pub fn has_boxes(self) -> bool {
        matches!(self, AnnotationKind::Boxes | AnnotationKind::Both)
    }

    pub fn has_masks(self) -> bool {
        matches!(self, AnnotationKind::Masks | AnnotationKind::Both)
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationKind::Boxes => "boxes",
            AnnotationKind::Masks => "masks",
            AnnotationKind::Both => "both",
        })
    }
}

impl FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxes" => Ok(AnnotationKind::Boxes),
            "masks" => Ok(AnnotationKind::Masks),
            "both" => Ok(AnnotationKind::Both),
            other => Err(Error::config(format!("unknown annotation kind {other:?}"))),
        }
    }
}

/// Scene distribution. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub target_count: (usize, usize),
    pub target_size: (usize, usize),
    pub distractor_count: (usize, usize),
    pub background: BackgroundStyle,
    pub contrast: f32,
    pub seed: u64,
}

impl SceneSpec {
    /// 128x96 scenes with one to four targets.
    pub fn desk_default(background: BackgroundStyle, seed: u64) -> Self {
        SceneSpec {
            height: 96,
            width: 128,
            target_count: (1, 4),
            target_size: (12, 30),
            distractor_count: (1, 3),
            background,
            contrast: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("target_count", self.target_count),
            ("target_size", self.target_size),
            ("distractor_count", self.distractor_count),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::config(format!("{name} range {lo}..{hi} is empty")));
            }
        }
        if self.target_size.0 < 4 {
            return Err(Error::config("targets must be at least 4 px"));
        }
        if self.target_size.1 + 4 > self.width.min(self.height) {
            return Err(Error::config(format!(
                "targets up to {} px do not fit a {}x{} image",
                self.target_size.1, self.width, self.height
            )));
        }
        let most = self.target_count.1 + self.distractor_count.1;
        let slots = render::grid_slots(self).len();
        if most > slots {
            return Err(Error::config(format!(
                "{most} objects of {} px cannot all fit a {}x{} image (at most {slots})",
                self.target_size.0, self.width, self.height
            )));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(Error::config(format!("contrast must be positive, got {}", self.contrast)));
        }
        Ok(())
    }
}

/// Target box in pixels: covers columns `x..x+w` and rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub class: u8,
}

impl GtBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: RgbImage,
    pub boxes: Option<Vec<GtBox>>,
    pub labels: Option<LabelMap>,
    pub instances: Option<InstanceMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub kind: AnnotationKind,
    pub n_train: usize,
    pub n_test: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.n_train]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.n_train..]
    }
}

/// Basename of sample `index` given the train/test split.
pub fn sample_name(index: usize, n_train: usize) -> String {
    if index < n_train {
        format!("train_{index:04}")
    } else {
        format!("test_{:04}", index - n_train)
    }
}

/// Renders `n_train + n_test` scenes. Sample `i` depends only on
/// `(spec.seed, i)`.
pub fn generate_dataset(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    kind: AnnotationKind,
) -> Result<Dataset> {
    spec.validate()?;
    if n_train + n_test == 0 {
        return Err(Error::config("dataset needs at least one image"));
    }
    let samples = (0..n_train + n_test)
        .map(|i| render_sample(spec, i, kind, sample_name(i, n_train)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        kind,
        n_train,
        n_test,
        samples,
    })
}

/// Tight box around the pixels of `labels` with instance id `id`.
pub fn instance_box(instances: &InstanceMap, id: u8) -> Option<(usize, usize, usize, usize)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..instances.height {
        for x in 0..instances.width {
            if instances.get(x, y) == id {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bounds.map(|(x0, y0, x1, y1)| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Stacks images into an `(N, 3, H, W)` tensor scaled to `[-0.5, 0.5]`.
pub fn image_tensor(images: &[&RgbImage]) -> Result<crate::tensor::Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::config("image batch is empty"))?;
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if (img.width, img.height) != (w, h) {
            return Err(Error::data(format!(
                "batch mixes {w}x{h} and {}x{} images",
                img.width, img.height
            )));
        }
        for p in 0..plane {
            for c in 0..3 {
                data[(n * 3 + c) * plane + p] = img.data[p * 3 + c] as f32 / 255.0 - 0.5;
            }
        }
    }
    crate::tensor::Tensor::from_vec(crate::tensor::Shape::new(images.len(), 3, h, w), data)
}
