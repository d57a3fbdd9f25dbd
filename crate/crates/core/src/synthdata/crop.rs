use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::pnm::{GrayMap, RgbImage};
use super::{GtBox, Sample};

/// Boxes keeping less than this fraction of their area after a crop are
/// dropped.
pub const MIN_KEPT_AREA: f64 = 0.25;

fn crop_gray(map: &GrayMap, x0: usize, y0: usize, w: usize, h: usize) -> GrayMap {
    let mut out = GrayMap::new(w, h);
    for y in 0..h {
        let src = (y0 + y) * map.width + x0;
        out.data[y * w..(y + 1) * w].copy_from_slice(&map.data[src..src + w]);
    }
    out
}

fn crop_rgb(img: &RgbImage, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        let src = ((y0 + y) * img.width + x0) * 3;
        out.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&img.data[src..src + w * 3]);
    }
    out
}

fn clip_box(b: &GtBox, x0: usize, y0: usize, w: usize, h: usize) -> Option<GtBox> {
    let (x0, y0, x1, y1) = (x0 as i64, y0 as i64, (x0 + w) as i64, (y0 + h) as i64);
    let bx0 = (b.x as i64).max(x0);
    let by0 = (b.y as i64).max(y0);
    let bx1 = (b.x as i64 + b.w as i64).min(x1);
    let by1 = (b.y as i64 + b.h as i64).min(y1);
    if bx1 <= bx0 || by1 <= by0 {
        return None;
    }
    let kept = ((bx1 - bx0) * (by1 - by0)) as f64;
    if kept < MIN_KEPT_AREA * b.area() as f64 {
        return None;
    }
    Some(GtBox {
        x: (bx0 - x0) as u32,
        y: (by0 - y0) as u32,
        w: (bx1 - bx0) as u32,
        h: (by1 - by0) as u32,
        class: b.class,
    })
}

/// Crops the `width`x`height` window with top-left corner `(x0, y0)`.
pub fn crop_at(sample: &Sample, x0: usize, y0: usize, width: usize, height: usize) -> Result<Sample> {
    let (iw, ih) = (sample.image.width, sample.image.height);
    if width == 0 || height == 0 || x0 + width > iw || y0 + height > ih {
        return Err(Error::config(format!(
            "crop {width}x{height} at ({x0}, {y0}) does not fit a {iw}x{ih} image"
        )));
    }
    Ok(Sample {
        name: sample.name.clone(),
        image: crop_rgb(&sample.image, x0, y0, width, height),
        boxes: sample.boxes.as_ref().map(|boxes| {
            boxes
                .iter()
                .filter_map(|b| clip_box(b, x0, y0, width, height))
                .collect()
        }),
        labels: sample.labels.as_ref().map(|m| crop_gray(m, x0, y0, width, height)),
        instances: sample.instances.as_ref().map(|m| crop_gray(m, x0, y0, width, height)),
    })
}

/// Crops a random `(height, width)` patch, position drawn from `seed`.
pub fn crop_patch(sample: &Sample, patch: (usize, usize), seed: u64) -> Result<Sample> {
    let (ph, pw) = patch;
    let (iw, ih) = (sample.image.width, sample.image.height);
    if ph > ih || pw > iw {
        return Err(Error::config(format!(
            "patch {pw}x{ph} is larger than the {iw}x{ih} image"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.random_range(0..=iw - pw);
    let y0 = rng.random_range(0..=ih - ph);
    crop_at(sample, x0, y0, pw, ph)
}
