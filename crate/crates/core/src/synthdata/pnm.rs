//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Single-channel 8-bit map: class labels or instance ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize) -> Self {
        GrayMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

pub type LabelMap = GrayMap;
pub type InstanceMap = GrayMap;

fn encode(magic: &str, width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn decode<'a>(bytes: &'a [u8], magic: &str, channels: usize, path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != magic {
        return Err(bad(&format!("expected {magic} image, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad header field {s:?}")));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("image dimensions overflow"))?;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(bad("raster size does not match header"));
    }
    Ok((width, height, &bytes[pos..]))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    encode("P6", img.width, img.height, &img.data)
}

pub fn encode_pgm(map: &GrayMap) -> Vec<u8> {
    encode("P5", map.width, map.height, &map.data)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (width, height, data) = decode(bytes, "P6", 3, path)?;
    Ok(RgbImage {
        width,
        height,
        data: data.to_vec(),
    })
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayMap> {
    let (width, height, data) = decode(bytes, "P5", 1, path)?;
    Ok(GrayMap {
        width,
        height,
        data: data.to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn read_pgm(path: &Path) -> Result<GrayMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}
