//! Binary weight files.
//!
//! ```text
//! "XCNW" 0x01
//! u32 record count
//! per record: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//!             f32 payload in row-major order
//! ```
//!
//! All integers and floats are little-endian. Records named `arch.*` carry
//! the network layout as small integers stored in the float payload; the
//! remaining records are the parameters in canonical order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Shape;

use super::net::{Layout, Mode, MultiTaskNet};
use super::spec::{DetectionHeadSpec, SegmentationHeadSpec, Task, UnitSpec};

pub const MAGIC: &[u8; 4] = b"XCNW";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn ints(values: impl IntoIterator<Item = usize>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

fn rank1(name: &str, data: Vec<f32>) -> Record {
    Record {
        name: name.to_string(),
        dims: vec![data.len() as u32],
        data,
    }
}

fn mode_code(mode: Mode) -> (usize, usize) {
    match mode {
        Mode::Single(Task::Detection) => (0, 0),
        Mode::Single(Task::Segmentation) => (1, 0),
        Mode::CrossConnected => (2, 0),
        Mode::CrossStitch => (3, 0),
        Mode::Shared(k) => (4, k),
    }
}

fn logical_dims(name: &str, shape: Shape) -> Vec<u32> {
    if name.ends_with(".bias") || name.ends_with(".scale") {
        vec![shape.len() as u32]
    } else {
        shape.dims().iter().map(|&d| d as u32).collect()
    }
}

/// Records describing `net`, layout first.
pub fn to_records(net: &MultiTaskNet<f32>) -> Vec<Record> {
    let (code, k) = mode_code(net.mode());
    let mut records = vec![rank1("arch.mode", ints([code, k, net.cross_depth()]))];
    let mut trunk = vec![net.input_channels()];
    trunk.extend(net.units().iter().map(|u| u.out_channels));
    records.push(rank1("arch.trunk", ints(trunk)));
    records.push(rank1("arch.pools", ints(net.pool_after().iter().copied())));
    if let Some(head) = net.detection_head() {
        let mut v = vec![head.spec.hidden as f32, head.spec.anchors.len() as f32];
        for &(w, h) in &head.spec.anchors {
            v.push(w);
            v.push(h);
        }
        records.push(rank1("arch.det_head", v));
    }
    if let Some(head) = net.segmentation_head() {
        records.push(rank1(
            "arch.seg_head",
            ints([head.spec.hidden, head.spec.classes]),
        ));
    }
    for (name, tensor) in net.params().iter() {
        records.push(Record {
            name: name.to_string(),
            dims: logical_dims(name, tensor.shape()),
            data: tensor.data().to_vec(),
        });
    }
    records
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dims.len() as u8);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!("truncated record: missing {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("bad magic, not a weight file"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::new();
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(format!("record {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")?);
        }
        let elems = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let (elems, byte_len) = match elems {
            Some(v) => v,
            None => {
                return Err(Error::format(format!(
                    "dimension overflow in record {name}: {dims:?}"
                )))
            }
        };
        if byte_len > r.remaining() {
            return Err(Error::format(format!(
                "truncated record {name}: payload of {elems} floats exceeds file"
            )));
        }
        let data = r
            .take(byte_len, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, data });
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!(
            "record count mismatch: header declares {count} records but {} bytes follow them",
            r.remaining()
        )));
    }
    Ok(records)
}

fn small_ints(record: &Record) -> Result<Vec<usize>> {
    record
        .data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e7 {
                Ok(v as usize)
            } else {
                Err(Error::format(format!("{} holds non-integer value {v}", record.name)))
            }
        })
        .collect()
}

pub fn from_records(records: &[Record]) -> Result<MultiTaskNet<f32>> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::format(format!("missing {name} record")));
    let mode = small_ints(need("arch.mode")?)?;
    let trunk = small_ints(need("arch.trunk")?)?;
    let pools = small_ints(need("arch.pools")?)?;
    if mode.len() != 3 || trunk.len() < 2 {
        return Err(Error::format("malformed layout records"));
    }
    let mode_value = match (mode[0], mode[1]) {
        (0, _) => Mode::Single(Task::Detection),
        (1, _) => Mode::Single(Task::Segmentation),
        (2, _) => Mode::CrossConnected,
        (3, _) => Mode::CrossStitch,
        (4, k) => Mode::Shared(k),
        (c, _) => return Err(Error::format(format!("unknown mode code {c}"))),
    };
    let units: Vec<UnitSpec> = trunk
        .windows(2)
        .map(|w| UnitSpec {
            in_channels: w[0],
            out_channels: w[1],
        })
        .collect();
    let det = match find("arch.det_head") {
        Some(r) => {
            if r.data.len() < 2 {
                return Err(Error::format("malformed arch.det_head"));
            }
            let n = r.data[1] as usize;
            if r.data.len() != 2 + 2 * n {
                return Err(Error::format("malformed arch.det_head"));
            }
            Some(DetectionHeadSpec {
                hidden: r.data[0] as usize,
                anchors: (0..n).map(|i| (r.data[2 + 2 * i], r.data[3 + 2 * i])).collect(),
            })
        }
        None => None,
    };
    let seg = match find("arch.seg_head") {
        Some(r) => {
            let v = small_ints(r)?;
            if v.len() != 2 {
                return Err(Error::format("malformed arch.seg_head"));
            }
            Some(SegmentationHeadSpec {
                hidden: v[0],
                classes: v[1],
            })
        }
        None => None,
    };
    let mut net = MultiTaskNet::skeleton(Layout {
        mode: mode_value,
        units: &units,
        pool_after: &pools,
        det: det.as_ref(),
        seg: seg.as_ref(),
        cross_depth: mode[2],
    })
    .map_err(|e| Error::format(format!("invalid layout: {e}")))?;
    let param_records: Vec<&Record> = records.iter().filter(|r| !r.name.starts_with("arch.")).collect();
    if param_records.len() != net.params().len() {
        return Err(Error::format(format!(
            "layout needs {} parameter records, file has {}",
            net.params().len(),
            param_records.len()
        )));
    }
    for (i, rec) in param_records.iter().enumerate() {
        let expected_name = net.params().iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default();
        if rec.name != expected_name {
            return Err(Error::format(format!(
                "record {} is {}, expected {expected_name}",
                i, rec.name
            )));
        }
        let shape = net.params().tensors()[i].shape();
        if rec.dims != logical_dims(&rec.name, shape) {
            return Err(Error::format(format!(
                "record {} has dims {:?}, layout expects {shape}",
                rec.name, rec.dims
            )));
        }
        net.params_mut().tensors_mut()[i].data_mut().copy_from_slice(&rec.data);
    }
    Ok(net)
}

pub fn encode_weights(net: &MultiTaskNet<f32>) -> Vec<u8> {
    encode_records(&to_records(net))
}

pub fn decode_weights(bytes: &[u8]) -> Result<MultiTaskNet<f32>> {
    from_records(&decode_records(bytes)?)
}

pub fn save_weights(net: &MultiTaskNet<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<MultiTaskNet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}
