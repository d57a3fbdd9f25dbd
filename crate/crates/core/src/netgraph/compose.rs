use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::net::{Connection, Initializer, Layout, Mode, MultiTaskNet};
use super::spec::{HeadSpec, StreamSpec, Task};

/// Std of the RPN-style output layers (class logits, box deltas, pixel
/// classifier) of freshly built heads.
const OUTPUT_LAYER_STD: f64 = 0.01;

/// Initial value of every cross-stitch scale factor.
pub const STITCH_INIT: f32 = 0.1;

/// Default std of the Gaussian init of 1x1 connection kernels.
pub const CONNECTION_INIT_STD: f64 = 0.1;

/// Builds a single-task network from scratch: He-normal conv weights, zero
/// biases, small-std output layers. Deterministic in `seed`.
pub fn build_single_stream(spec: &StreamSpec, seed: u64) -> Result<MultiTaskNet<f32>> {
    spec.validate()?;
    let task = spec.head.task();
    let (det, seg) = match &spec.head {
        HeadSpec::Detection(d) => (Some(d), None),
        HeadSpec::Segmentation(s) => (None, Some(s)),
    };
    let mut net = MultiTaskNet::skeleton(Layout {
        mode: Mode::Single(task),
        units: &spec.units,
        pool_after: &spec.pool_after,
        det,
        seg,
        cross_depth: 0,
    })?;
    let mut init = Initializer::new(seed);
    let names: Vec<String> = net.params.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let tensor = &mut net.params.tensors_mut()[i];
        if name.ends_with(".bias") {
            continue;
        }
        if name.starts_with("det.cls") || name.starts_with("det.reg") || name.starts_with("seg.cls") {
            init.normal(tensor, OUTPUT_LAYER_STD)?;
        } else {
            init.he(tensor)?;
        }
    }
    Ok(net)
}

fn check_pair<T: Scalar>(det: &MultiTaskNet<T>, seg: &MultiTaskNet<T>) -> Result<()> {
    if det.mode() != Mode::Single(Task::Detection) {
        return Err(Error::config("first network must be a single-task detection net"));
    }
    if seg.mode() != Mode::Single(Task::Segmentation) {
        return Err(Error::config("second network must be a single-task segmentation net"));
    }
    if det.units() != seg.units() || det.pool_after() != seg.pool_after() {
        return Err(Error::config(
            "streams differ in unit count, channel widths or pool positions",
        ));
    }
    Ok(())
}

/// Source (network, parameter name) of a composed net's parameter, or
/// `None` for parameters that did not exist before composition.
fn source_of(name: &str) -> Option<(Task, String)> {
    if let Some(rest) = name.strip_prefix("shared.") {
        Some((Task::Detection, format!("a.{rest}")))
    } else if name.starts_with("a.") || name.starts_with("det.") {
        Some((Task::Detection, name.to_string()))
    } else if name.starts_with("b.") || name.starts_with("seg.") {
        Some((Task::Segmentation, name.to_string()))
    } else {
        None
    }
}

fn compose<T: Scalar>(
    det: &MultiTaskNet<T>,
    seg: &MultiTaskNet<T>,
    mode: Mode,
    cross_depth: usize,
) -> Result<MultiTaskNet<T>> {
    check_pair(det, seg)?;
    let mut net = MultiTaskNet::skeleton(Layout {
        mode,
        units: det.units(),
        pool_after: det.pool_after(),
        det: det.detection_head().map(|h| &h.spec),
        seg: seg.segmentation_head().map(|h| &h.spec),
        cross_depth,
    })?;
    let names: Vec<String> = net.params.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let Some((task, src_name)) = source_of(name) else {
            continue;
        };
        let src = if task == Task::Detection { det } else { seg };
        let id = src
            .params()
            .find(&src_name)
            .ok_or_else(|| Error::config(format!("source network lacks parameter {src_name}")))?;
        let tensor = src.params().get(id);
        if tensor.shape() != net.params.tensors()[i].shape() {
            return Err(Error::Shape {
                op: "compose",
                left: tensor.shape(),
                right: net.params.tensors()[i].shape(),
            });
        }
        net.params.tensors_mut()[i] = tensor.clone();
    }
    Ok(net)
}

/// Joins two pre-trained single-task nets with 1x1 cross connections on the
/// first `cross_depth` units. Connection kernels are drawn from
/// N(0, init_std^2) with zero bias; all pre-trained weights are copied.
pub fn compose_cross_connected(
    det: &MultiTaskNet<f32>,
    seg: &MultiTaskNet<f32>,
    cross_depth: usize,
    init_std: f64,
    seed: u64,
) -> Result<MultiTaskNet<f32>> {
    if !(init_std >= 0.0 && init_std.is_finite()) {
        return Err(Error::config(format!("invalid connection init std {init_std}")));
    }
    let mut net = compose(det, seg, Mode::CrossConnected, cross_depth)?;
    let mut init = Initializer::new(seed);
    for conn in net.connections.clone() {
        if let Connection::Conv { to_a, to_b } = conn {
            init.normal(net.params.get_mut(to_a.weight), init_std)?;
            init.normal(net.params.get_mut(to_b.weight), init_std)?;
        }
    }
    Ok(net)
}

/// Cross-stitch baseline: the 1x1 connections are replaced by per-channel
/// scale factors, all initialized to [`STITCH_INIT`].
pub fn compose_cross_stitch(
    det: &MultiTaskNet<f32>,
    seg: &MultiTaskNet<f32>,
    cross_depth: usize,
) -> Result<MultiTaskNet<f32>> {
    let mut net = compose(det, seg, Mode::CrossStitch, cross_depth)?;
    for conn in net.connections.clone() {
        if let Connection::Stitch { to_a, to_b } = conn {
            for id in [to_a, to_b] {
                net.params.get_mut(id).data_mut().fill(STITCH_INIT);
            }
        }
    }
    Ok(net)
}

/// Share-k baseline: conv layers below the k-th pool are one set of weights
/// (taken from the detection net) used by both tasks.
pub fn compose_shared(
    det: &MultiTaskNet<f32>,
    seg: &MultiTaskNet<f32>,
    k: usize,
) -> Result<MultiTaskNet<f32>> {
    if k == 0 || k > det.pool_after().len() {
        return Err(Error::config(format!(
            "share level {k} out of range 1..={}",
            det.pool_after().len()
        )));
    }
    compose(det, seg, Mode::Shared(k), 0)
}
