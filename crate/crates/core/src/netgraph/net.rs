use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::ConvGeometry;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

use super::spec::{DetectionHeadSpec, SegmentationHeadSpec, StreamSpec, Task, UnitSpec};

/// Index into a network's [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn alloc(&mut self, name: String, shape: Shape) -> ParamId {
        self.names.push(name);
        self.tensors.push(Tensor::zeros(shape));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Convolution parameters: weight `(C_out, C_in, K, K)` and bias `(C_out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geo: ConvGeometry,
}

/// Cross-stream connection of one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    /// 1x1 convolutions (each followed by ReLU) carrying B's maps into A
    /// (`to_a`) and A's maps into B (`to_b`).
    Conv { to_a: ConvLayer, to_b: ConvLayer },
    /// Per-channel scale factors on the cross term.
    Stitch { to_a: ParamId, to_b: ParamId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHead {
    pub spec: DetectionHeadSpec,
    pub conv: ConvLayer,
    pub cls: ConvLayer,
    pub reg: ConvLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationHead {
    pub spec: SegmentationHeadSpec,
    pub conv: ConvLayer,
    pub classifier: ConvLayer,
    pub upsample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single(Task),
    CrossConnected,
    CrossStitch,
    /// Share-k: conv layers below the k-th pool use one set of weights.
    Shared(usize),
}

impl Mode {
    pub fn is_multitask(self) -> bool {
        !matches!(self, Mode::Single(_))
    }
}

/// Head inputs produced by the trunk. A single-task network fills one side.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub a: Option<Var>,
    pub b: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskNet<T: Scalar = f32> {
    pub(crate) mode: Mode,
    pub(crate) units: Vec<UnitSpec>,
    pub(crate) pool_after: Vec<usize>,
    pub(crate) params: ParamStore<T>,
    pub(crate) stream_a: Vec<ConvLayer>,
    pub(crate) stream_b: Vec<ConvLayer>,
    pub(crate) connections: Vec<Connection>,
    pub(crate) head_a: Option<DetectionHead>,
    pub(crate) head_b: Option<SegmentationHead>,
}

/// Layout description used to allocate a network with zeroed parameters.
#[derive(Debug, Clone)]
pub(crate) struct Layout<'a> {
    pub mode: Mode,
    pub units: &'a [UnitSpec],
    pub pool_after: &'a [usize],
    pub det: Option<&'a DetectionHeadSpec>,
    pub seg: Option<&'a SegmentationHeadSpec>,
    pub cross_depth: usize,
}

const SAME_3X3: ConvGeometry = ConvGeometry::new(1, 1);
const POINTWISE: ConvGeometry = ConvGeometry::new(1, 0);

fn alloc_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> ConvLayer {
    let weight = store.alloc(format!("{prefix}.weight"), Shape::new(c_out, c_in, k, k));
    let bias = store.alloc(format!("{prefix}.bias"), Shape::new(c_out, 1, 1, 1));
    ConvLayer {
        weight,
        bias,
        geo: if k == 1 { POINTWISE } else { SAME_3X3 },
    }
}

impl<T: Scalar> MultiTaskNet<T> {
    /// Allocates every parameter of `layout` with zeros under its canonical
    /// name. Parameter order: stream A, stream B, connections, heads.
    pub(crate) fn skeleton(layout: Layout<'_>) -> Result<Self> {
        let Layout {
            mode,
            units,
            pool_after,
            det,
            seg,
            cross_depth,
        } = layout;
        if units.is_empty() {
            return Err(Error::config("network needs at least one conv unit"));
        }
        if cross_depth > units.len() {
            return Err(Error::config(format!(
                "cross depth {cross_depth} exceeds unit count {}",
                units.len()
            )));
        }
        let mut store = ParamStore::new();
        let (has_a, has_b) = match mode {
            Mode::Single(Task::Detection) => (true, false),
            Mode::Single(Task::Segmentation) => (false, true),
            _ => (true, true),
        };
        if has_a && det.is_none() || has_b && seg.is_none() {
            return Err(Error::config("missing head description for network layout"));
        }
        let shared = match mode {
            Mode::Shared(k) => {
                if k == 0 || k > pool_after.len() {
                    return Err(Error::config(format!(
                        "share level {k} out of range 1..={}",
                        pool_after.len()
                    )));
                }
                pool_after[k - 1]
            }
            _ => 0,
        };
        let mut stream_a = Vec::new();
        let mut stream_b = Vec::new();
        for (i, u) in units.iter().enumerate() {
            let prefix = if i < shared {
                format!("shared.conv{}", i + 1)
            } else {
                format!("a.conv{}", i + 1)
            };
            if has_a {
                stream_a.push(alloc_conv(&mut store, &prefix, u.out_channels, u.in_channels, 3));
            }
        }
        if has_b {
            for (i, u) in units.iter().enumerate() {
                if i < shared {
                    stream_b.push(stream_a[i]);
                } else {
                    let prefix = format!("b.conv{}", i + 1);
                    stream_b.push(alloc_conv(&mut store, &prefix, u.out_channels, u.in_channels, 3));
                }
            }
        }
        let mut connections = Vec::new();
        let depth = match mode {
            Mode::CrossConnected | Mode::CrossStitch => cross_depth,
            _ => 0,
        };
        for (i, u) in units.iter().take(depth).enumerate() {
            let c = u.out_channels;
            let conn = if mode == Mode::CrossConnected {
                Connection::Conv {
                    to_a: alloc_conv(&mut store, &format!("cross{}.to_a", i + 1), c, c, 1),
                    to_b: alloc_conv(&mut store, &format!("cross{}.to_b", i + 1), c, c, 1),
                }
            } else {
                Connection::Stitch {
                    to_a: store.alloc(format!("stitch{}.to_a.scale", i + 1), Shape::new(1, c, 1, 1)),
                    to_b: store.alloc(format!("stitch{}.to_b.scale", i + 1), Shape::new(1, c, 1, 1)),
                }
            };
            connections.push(conn);
        }
        let trunk_out = units.last().map(|u| u.out_channels).unwrap_or(0);
        let head_a = match (has_a, det) {
            (true, Some(spec)) => {
                let a = spec.anchors.len();
                Some(DetectionHead {
                    spec: spec.clone(),
                    conv: alloc_conv(&mut store, "det.conv", spec.hidden, trunk_out, 3),
                    cls: alloc_conv(&mut store, "det.cls", 2 * a, spec.hidden, 1),
                    reg: alloc_conv(&mut store, "det.reg", 4 * a, spec.hidden, 1),
                })
            }
            _ => None,
        };
        let head_b = match (has_b, seg) {
            (true, Some(spec)) => Some(SegmentationHead {
                spec: spec.clone(),
                conv: alloc_conv(&mut store, "seg.conv", spec.hidden, trunk_out, 3),
                classifier: alloc_conv(&mut store, "seg.cls", spec.classes, spec.hidden, 1),
                upsample: 1 << pool_after.len(),
            }),
            _ => None,
        };
        Ok(MultiTaskNet {
            mode,
            units: units.to_vec(),
            pool_after: pool_after.to_vec(),
            params: store,
            stream_a,
            stream_b,
            connections,
            head_a,
            head_b,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn units(&self) -> &[UnitSpec] {
        &self.units
    }

    pub fn pool_after(&self) -> &[usize] {
        &self.pool_after
    }

    pub fn cross_depth(&self) -> usize {
        self.connections.len()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn stream(&self, task: Task) -> &[ConvLayer] {
        match task {
            Task::Detection => &self.stream_a,
            Task::Segmentation => &self.stream_b,
        }
    }

    pub fn detection_head(&self) -> Option<&DetectionHead> {
        self.head_a.as_ref()
    }

    pub fn segmentation_head(&self) -> Option<&SegmentationHead> {
        self.head_b.as_ref()
    }

    pub fn has_task(&self, task: Task) -> bool {
        match task {
            Task::Detection => self.head_a.is_some(),
            Task::Segmentation => self.head_b.is_some(),
        }
    }

    /// Stream spec of the given task's single-task network.
    pub fn stream_spec(&self, task: Task) -> Option<StreamSpec> {
        let head = match task {
            Task::Detection => super::HeadSpec::Detection(self.head_a.as_ref()?.spec.clone()),
            Task::Segmentation => super::HeadSpec::Segmentation(self.head_b.as_ref()?.spec.clone()),
        };
        Some(StreamSpec {
            units: self.units.clone(),
            pool_after: self.pool_after.clone(),
            head,
        })
    }

    /// Number of trunk units whose weights both tasks use.
    pub fn shared_units(&self) -> usize {
        match self.mode {
            Mode::Shared(k) => self.pool_after[k - 1],
            _ => 0,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.units[0].in_channels
    }

    pub fn downsample(&self) -> usize {
        1 << self.pool_after.len()
    }

    pub fn cast<U: Scalar>(&self) -> MultiTaskNet<U> {
        MultiTaskNet {
            mode: self.mode,
            units: self.units.clone(),
            pool_after: self.pool_after.clone(),
            params: self.params.cast(),
            stream_a: self.stream_a.clone(),
            stream_b: self.stream_b.clone(),
            connections: self.connections.clone(),
            head_a: self.head_a.clone(),
            head_b: self.head_b.clone(),
        }
    }

    /// Places every parameter on the tape; the result is indexed by
    /// [`ParamId::index`].
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect()
    }

    fn conv(tape: &mut Tape<T>, params: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        tape.conv2d(x, params[layer.weight.0], params[layer.bias.0], layer.geo)
    }

    fn conv_relu(tape: &mut Tape<T>, params: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        let y = Self::conv(tape, params, layer, x)?;
        tape.relu(y)
    }

    fn cross_term(
        tape: &mut Tape<T>,
        params: &[Var],
        conn: &Connection,
        into_a: bool,
        source: Var,
    ) -> Result<Var> {
        match (conn, into_a) {
            (Connection::Conv { to_a, .. }, true) => Self::conv_relu(tape, params, to_a, source),
            (Connection::Conv { to_b, .. }, false) => Self::conv_relu(tape, params, to_b, source),
            (Connection::Stitch { to_a, .. }, true) => tape.channel_scale(source, params[to_a.0]),
            (Connection::Stitch { to_b, .. }, false) => tape.channel_scale(source, params[to_b.0]),
        }
    }

    /// Runs the trunk. Within the cross-connected depth each unit computes
    ///
    /// ```text
    /// x_a' = f_a(x_a) + g_a(f_b(x_b))
    /// x_b' = f_b(x_b) + g_b(f_a(x_a))
    /// ```
    ///
    /// where `f` is the stream's conv + ReLU and `g` the connection. Pools are
    /// applied to both streams after the addition.
    pub fn features(&self, tape: &mut Tape<T>, params: &[Var], image: Var) -> Result<Features> {
        let c = tape.shape(image).c;
        if c != self.input_channels() {
            return Err(Error::Shape {
                op: "network input",
                left: tape.shape(image),
                right: Shape::new(1, self.input_channels(), 0, 0),
            });
        }
        if params.len() != self.params.len() {
            return Err(Error::config(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut xa = self.head_a.as_ref().map(|_| image);
        let mut xb = self.head_b.as_ref().map(|_| image);
        let shared = self.shared_units();
        for i in 0..self.units.len() {
            if i < shared {
                let x = xa.expect("shared mode has both streams");
                let y = Self::conv_relu(tape, params, &self.stream_a[i], x)?;
                xa = Some(y);
                xb = Some(y);
            } else {
                let fa = match xa {
                    Some(x) => Some(Self::conv_relu(tape, params, &self.stream_a[i], x)?),
                    None => None,
                };
                let fb = match xb {
                    Some(x) => Some(Self::conv_relu(tape, params, &self.stream_b[i], x)?),
                    None => None,
                };
                match (self.connections.get(i), fa, fb) {
                    (Some(conn), Some(fa), Some(fb)) => {
                        let to_a = Self::cross_term(tape, params, conn, true, fb)?;
                        let to_b = Self::cross_term(tape, params, conn, false, fa)?;
                        xa = Some(tape.add(fa, to_a)?);
                        xb = Some(tape.add(fb, to_b)?);
                    }
                    _ => {
                        xa = fa;
                        xb = fb;
                    }
                }
            }
            if self.pool_after.contains(&(i + 1)) {
                if i < shared {
                    let y = tape.maxpool2x2(xa.expect("shared mode has both streams"))?;
                    xa = Some(y);
                    xb = Some(y);
                } else {
                    if let Some(x) = xa {
                        xa = Some(tape.maxpool2x2(x)?);
                    }
                    if let Some(x) = xb {
                        xb = Some(tape.maxpool2x2(x)?);
                    }
                }
            }
        }
        Ok(Features { a: xa, b: xb })
    }

    /// Detection head: `(class logits (N, 2A, h, w), box deltas (N, 4A, h, w))`.
    pub fn detection_outputs(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        features: Var,
    ) -> Result<(Var, Var)> {
        let head = self
            .head_a
            .as_ref()
            .ok_or_else(|| Error::config("network has no detection head"))?;
        let hidden = Self::conv_relu(tape, params, &head.conv, features)?;
        let cls = Self::conv(tape, params, &head.cls, hidden)?;
        let reg = Self::conv(tape, params, &head.reg, hidden)?;
        Ok((cls, reg))
    }

    /// Segmentation head: per-pixel class logits at input resolution.
    pub fn segmentation_outputs(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        features: Var,
    ) -> Result<Var> {
        let head = self
            .head_b
            .as_ref()
            .ok_or_else(|| Error::config("network has no segmentation head"))?;
        let hidden = Self::conv_relu(tape, params, &head.conv, features)?;
        let logits = Self::conv(tape, params, &head.classifier, hidden)?;
        tape.upsample_bilinear(logits, head.upsample)
    }

    /// Trunk outputs for a batch of images, outside of any training graph.
    pub fn forward_multitask(&self, image: &Tensor<T>) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let x = tape.leaf(image.clone())?;
        let f = self.features(&mut tape, &params, x)?;
        Ok((
            f.a.map(|v| tape.value(v).clone()),
            f.b.map(|v| tape.value(v).clone()),
        ))
    }

    /// Exchanges the roles of the two trunks and their connections. Heads
    /// stay in place, so only the trunk outputs are meaningful afterwards.
    pub fn with_streams_swapped(&self) -> Result<Self> {
        if !matches!(self.mode, Mode::CrossConnected | Mode::CrossStitch) {
            return Err(Error::config("stream swap needs a cross-connected or cross-stitch net"));
        }
        let mut out = self.clone();
        for (a, b) in self.stream_a.iter().zip(&self.stream_b) {
            swap_params(&mut out.params, a.weight, b.weight, &self.params);
            swap_params(&mut out.params, a.bias, b.bias, &self.params);
        }
        for conn in &self.connections {
            match conn {
                Connection::Conv { to_a, to_b } => {
                    swap_params(&mut out.params, to_a.weight, to_b.weight, &self.params);
                    swap_params(&mut out.params, to_a.bias, to_b.bias, &self.params);
                }
                Connection::Stitch { to_a, to_b } => {
                    swap_params(&mut out.params, *to_a, *to_b, &self.params);
                }
            }
        }
        Ok(out)
    }
}

fn swap_params<T: Scalar>(dst: &mut ParamStore<T>, a: ParamId, b: ParamId, src: &ParamStore<T>) {
    *dst.get_mut(a) = src.get(b).clone();
    *dst.get_mut(b) = src.get(a).clone();
}

/// Seeded normal initializer.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal<T: Scalar>(&mut self, tensor: &mut Tensor<T>, std: f64) -> Result<()> {
        if std == 0.0 {
            tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
            return Ok(());
        }
        let dist = Normal::new(0.0, std)
            .map_err(|e| Error::config(format!("invalid init std {std}: {e}")))?;
        for v in tensor.data_mut() {
            *v = T::from_f64(dist.sample(&mut self.rng));
        }
        Ok(())
    }

    /// He normal initialization, std = sqrt(2 / fan_in).
    pub fn he<T: Scalar>(&mut self, tensor: &mut Tensor<T>) -> Result<()> {
        let s = tensor.shape();
        let fan_in = s.c * s.h * s.w;
        self.normal(tensor, (2.0 / fan_in as f64).sqrt())
    }
}
