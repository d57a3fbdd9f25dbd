use crate::error::{Error, Result};

/// The two tasks of a multi-task network. Task A is always detection and
/// task B segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Detection,
    Segmentation,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Detection => "A_detection",
            Task::Segmentation => "B_segmentation",
        }
    }

    pub fn other(self) -> Task {
        match self {
            Task::Detection => Task::Segmentation,
            Task::Segmentation => Task::Detection,
        }
    }
}

/// One 3x3 conv block (convolution followed by ReLU).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHeadSpec {
    pub hidden: usize,
    /// Anchor (width, height) in input pixels.
    pub anchors: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationHeadSpec {
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadSpec {
    Detection(DetectionHeadSpec),
    Segmentation(SegmentationHeadSpec),
}

impl HeadSpec {
    pub fn task(&self) -> Task {
        match self {
            HeadSpec::Detection(_) => Task::Detection,
            HeadSpec::Segmentation(_) => Task::Segmentation,
        }
    }
}

/// Layout of a single-task network: a stack of conv blocks, the blocks
/// followed by a 2x2 max-pool, and the task head on top.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub units: Vec<UnitSpec>,
    /// 1-based indices of the units followed by a max-pool, ascending.
    pub pool_after: Vec<usize>,
    pub head: HeadSpec,
}

/// Conv widths of the desk-scale trunk: ten blocks in VGG16's
/// conv1_1..conv4_3 arrangement.
pub const DESK_WIDTHS: [usize; 10] = [4, 4, 8, 8, 12, 12, 12, 16, 16, 16];
pub const DESK_POOLS: [usize; 4] = [2, 4, 7, 10];

impl StreamSpec {
    pub fn from_widths(
        input_channels: usize,
        widths: &[usize],
        pool_after: &[usize],
        head: HeadSpec,
    ) -> Self {
        let mut units = Vec::with_capacity(widths.len());
        let mut prev = input_channels;
        for &w in widths {
            units.push(UnitSpec {
                in_channels: prev,
                out_channels: w,
            });
            prev = w;
        }
        StreamSpec {
            units,
            pool_after: pool_after.to_vec(),
            head,
        }
    }

    /// Ten-block RGB trunk with pools after blocks 2, 4, 7 and 10.
    pub fn desk_default(head: HeadSpec) -> Self {
        Self::from_widths(3, &DESK_WIDTHS, &DESK_POOLS, head)
    }

    pub fn default_detection() -> Self {
        Self::desk_default(HeadSpec::Detection(DetectionHeadSpec {
            hidden: 16,
            anchors: vec![(12.0, 12.0), (18.0, 18.0), (26.0, 26.0)],
        }))
    }

    pub fn default_segmentation() -> Self {
        Self::desk_default(HeadSpec::Segmentation(SegmentationHeadSpec {
            hidden: 16,
            classes: 3,
        }))
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::config("stream needs at least one conv unit"));
        }
        for (i, pair) in self.units.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::config(format!(
                    "unit {} outputs {} channels but unit {} expects {}",
                    i + 1,
                    pair[0].out_channels,
                    i + 2,
                    pair[1].in_channels
                )));
            }
        }
        if self.units.iter().any(|u| u.in_channels == 0 || u.out_channels == 0) {
            return Err(Error::config("conv units need non-zero channel counts"));
        }
        let mut prev = 0;
        for &p in &self.pool_after {
            if p <= prev || p > self.units.len() {
                return Err(Error::config(format!(
                    "pool positions must be ascending unit indices in 1..={}, got {:?}",
                    self.units.len(),
                    self.pool_after
                )));
            }
            prev = p;
        }
        match &self.head {
            HeadSpec::Detection(d) if d.anchors.is_empty() || d.hidden == 0 => {
                Err(Error::config("detection head needs anchors and hidden width"))
            }
            HeadSpec::Segmentation(s) if s.classes < 2 || s.hidden == 0 => {
                Err(Error::config("segmentation head needs >= 2 classes and hidden width"))
            }
            _ => Ok(()),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.units[0].in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.units.last().map(|u| u.out_channels).unwrap_or(0)
    }

    /// Spatial reduction between the image and the head input.
    pub fn downsample(&self) -> usize {
        1 << self.pool_after.len()
    }

    pub fn same_trunk(&self, other: &StreamSpec) -> bool {
        self.units == other.units && self.pool_after == other.pool_after
    }

    /// Number of conv units below the `k`-th pool (1-based), i.e. the layer
    /// count shared by the Share-k baseline.
    pub fn shared_units(&self, k: usize) -> Option<usize> {
        if k == 0 {
            return None;
        }
        self.pool_after.get(k - 1).copied()
    }
}
