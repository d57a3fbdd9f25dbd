//! Finite-difference verification of the reverse-mode gradients.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalmetrics::ScoredBox;
use crate::netgraph::{
    build_single_stream, compose_cross_connected, compose_cross_stitch, compose_shared,
    DetectionHeadSpec, HeadSpec, MultiTaskNet, SegmentationHeadSpec, StreamSpec,
};
use crate::ops::{ConvGeometry, IGNORE_LABEL};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};
use crate::trainer::{multitask_loss, Annotations, Batch};

/// Step used by the verification suite.
pub const SUITE_EPSILON: f64 = 1e-3;
/// Random instances checked per suite case.
pub const SUITE_INSTANCES: usize = 20;
/// Largest relative error the suite accepts.
pub const SUITE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all input elements.
    pub max_rel_error: f64,
    /// Number of input elements compared.
    pub checked: usize,
    /// False when some perturbation switched a ReLU sign or max-pool
    /// winner, in which case the finite difference straddles a kink.
    pub branch_stable: bool,
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    if tape.shape(loss).len() != 1 {
        return Err(Error::config(format!(
            "gradient check needs a scalar loss, got shape {}",
            tape.shape(loss)
        )));
    }
    Ok((tape.scalar(loss), tape.branch_signature()))
}

/// Compares the backpropagated gradient of `f` with respect to every
/// element of every input against the central difference
/// `(f(x + eps) - f(x - eps)) / 2 eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("epsilon must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let base_signature = tape.branch_signature();
    let grads = tape.backward(loss)?;

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    let mut branch_stable = true;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            work[k].data_mut()[i] = x + eps;
            let (up, sig_up) = evaluate(&f, &work)?;
            work[k].data_mut()[i] = x - eps;
            let (down, sig_down) = evaluate(&f, &work)?;
            work[k].data_mut()[i] = x;
            branch_stable &= sig_up == base_signature && sig_down == base_signature;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            max_rel_error = max_rel_error.max(relative_error(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        checked,
        branch_stable,
    })
}

/// Outcome of one case of the verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    /// Instances redrawn because a perturbation crossed a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub elapsed: Duration,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.instances >= SUITE_INSTANCES && self.max_rel_error < SUITE_TOLERANCE
    }
}

type Instance = (
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>,
);

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn dims(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    )
}

fn even_dims(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        2 * rng.random_range(1..=3),
        2 * rng.random_range(1..=3),
    )
}

/// Reduces `out` to a scalar with fixed random weights.
fn reduce(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    tape.weighted_sum(out, weights.clone())
}

fn op_instance(op: &str, rng: &mut ChaCha8Rng) -> Instance {
    match op {
        "conv2d" => {
            let k = rng.random_range(1..=3);
            let geo = ConvGeometry::new(rng.random_range(1..=2), rng.random_range(0..=1));
            let mut s = dims(rng);
            s.h = s.h.max(k);
            s.w = s.w.max(k);
            let c_out = rng.random_range(1..=3);
            let input = uniform(rng, s, -1.0, 1.0);
            let weight = uniform(rng, Shape::new(c_out, s.c, k, k), -1.0, 1.0);
            let bias = uniform(rng, Shape::new(c_out, 1, 1, 1), -1.0, 1.0);
            let out = crate::ops::conv_output_shape(s, weight.shape(), geo).expect("valid conv");
            let w = uniform(rng, out, -1.0, 1.0);
            (
                vec![input, weight, bias],
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], geo)?;
                    reduce(t, y, &w)
                }),
            )
        }
        "relu" => {
            let s = dims(rng);
            let w = uniform(rng, s, -1.0, 1.0);
            (
                vec![uniform(rng, s, -1.0, 1.0)],
                Box::new(move |t, v| {
                    let y = t.relu(v[0])?;
                    reduce(t, y, &w)
                }),
            )
        }
        "maxpool2x2" => {
            let s = even_dims(rng);
            let w = uniform(rng, Shape::new(s.n, s.c, s.h / 2, s.w / 2), -1.0, 1.0);
            (
                vec![uniform(rng, s, -1.0, 1.0)],
                Box::new(move |t, v| {
                    let y = t.maxpool2x2(v[0])?;
                    reduce(t, y, &w)
                }),
            )
        }
        "add" => {
            let s = dims(rng);
            let w = uniform(rng, s, -1.0, 1.0);
            (
                vec![uniform(rng, s, -1.0, 1.0), uniform(rng, s, -1.0, 1.0)],
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1])?;
                    reduce(t, y, &w)
                }),
            )
        }
        "channel_scale" => {
            let s = dims(rng);
            let w = uniform(rng, s, -1.0, 1.0);
            (
                vec![
                    uniform(rng, s, -1.0, 1.0),
                    uniform(rng, Shape::new(1, s.c, 1, 1), -1.0, 1.0),
                ],
                Box::new(move |t, v| {
                    let y = t.channel_scale(v[0], v[1])?;
                    reduce(t, y, &w)
                }),
            )
        }
        "upsample_bilinear" => {
            let s = dims(rng);
            let f = rng.random_range(1..=3);
            let w = uniform(rng, Shape::new(s.n, s.c, s.h * f, s.w * f), -1.0, 1.0);
            (
                vec![uniform(rng, s, -1.0, 1.0)],
                Box::new(move |t, v| {
                    let y = t.upsample_bilinear(v[0], f)?;
                    reduce(t, y, &w)
                }),
            )
        }
        "softmax_cross_entropy" => {
            let mut s = dims(rng);
            s.c = rng.random_range(2..=4);
            let labels: Vec<i32> = (0..s.n * s.plane())
                .map(|_| {
                    if rng.random_bool(0.2) {
                        IGNORE_LABEL
                    } else {
                        rng.random_range(0..s.c as i32)
                    }
                })
                .collect();
            (
                vec![uniform(rng, s, -2.0, 2.0)],
                Box::new(move |t, v| Ok(t.softmax_cross_entropy(v[0], &labels, IGNORE_LABEL)?.0)),
            )
        }
        "smooth_l1" => {
            let s = dims(rng);
            let target = uniform(rng, s, -2.0, 2.0);
            let mask_data = (0..s.len())
                .map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 })
                .collect();
            let mask = Tensor::from_vec(s, mask_data).expect("length matches shape");
            (
                vec![uniform(rng, s, -2.0, 2.0)],
                Box::new(move |t, v| Ok(t.smooth_l1(v[0], &target, &mask)?.0)),
            )
        }
        other => unreachable!("unknown suite op {other}"),
    }
}

/// Operators checked by the suite.
pub const SUITE_OPS: [&str; 8] = [
    "conv2d",
    "relu",
    "maxpool2x2",
    "add",
    "channel_scale",
    "upsample_bilinear",
    "softmax_cross_entropy",
    "smooth_l1",
];

fn tiny_stream(head: HeadSpec) -> StreamSpec {
    StreamSpec::from_widths(3, &[3, 3, 4], &[1, 3], head)
}

fn tiny_pair(seed: u64) -> Result<(MultiTaskNet<f32>, MultiTaskNet<f32>)> {
    let det = build_single_stream(
        &tiny_stream(HeadSpec::Detection(DetectionHeadSpec {
            hidden: 3,
            anchors: vec![(3.0, 3.0), (5.0, 4.0)],
        })),
        seed,
    )?;
    let seg = build_single_stream(
        &tiny_stream(HeadSpec::Segmentation(SegmentationHeadSpec {
            hidden: 3,
            classes: 3,
        })),
        seed.wrapping_add(1),
    )?;
    Ok((det, seg))
}

/// Multi-task graphs checked by the suite. Each instance is a tiny
/// three-unit network evaluated on a detection or segmentation batch.
pub const SUITE_GRAPHS: [&str; 4] = ["cross_connected", "cross_stitch", "share1", "share2"];

fn graph_instance(name: &str, rng: &mut ChaCha8Rng, detection: bool) -> Result<Instance> {
    let (det, seg) = tiny_pair(rng.random())?;
    let net = match name {
        "cross_connected" => compose_cross_connected(&det, &seg, 3, 0.5, rng.random())?,
        "cross_stitch" => {
            let mut net = compose_cross_stitch(&det, &seg, 3)?;
            let ids: Vec<usize> = net
                .params()
                .iter()
                .enumerate()
                .filter(|(_, (n, _))| n.starts_with("stitch"))
                .map(|(i, _)| i)
                .collect();
            for i in ids {
                for v in net.params_mut().tensors_mut()[i].data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            net
        }
        "share1" => compose_shared(&det, &seg, 1)?,
        "share2" => compose_shared(&det, &seg, 2)?,
        other => unreachable!("unknown suite graph {other}"),
    };
    // biases are zero after init; randomize everything for a generic point
    let mut net = net.cast::<f64>();
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (n, h, w) = (1, 4, 4);
    let images = uniform(rng, Shape::new(n, 3, h, w), -0.5, 0.5).cast::<f32>();
    let annotations = if detection {
        Annotations::Boxes(
            (0..n)
                .map(|_| {
                    let (x, y) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
                    vec![ScoredBox::new(x, y, rng.random_range(2.0..4.0), rng.random_range(2.0..4.0), 1.0)]
                })
                .collect(),
        )
    } else {
        Annotations::Labels((0..n * h * w).map(|_| rng.random_range(0..3)).collect())
    };
    let batch = Batch::new(images, annotations)?;
    let lambda = rng.random_range(0.5..2.0);
    let inputs = net.params().tensors().to_vec();
    Ok((
        inputs,
        Box::new(move |t, v| multitask_loss(&net, t, v, &batch, lambda)),
    ))
}

fn run_case<G>(name: &str, seed: u64, mut make: G) -> Result<CaseResult>
where
    G: FnMut(&mut ChaCha8Rng, usize) -> Result<Instance>,
{
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut instances, mut redrawn, mut worst) = (0, 0, 0.0f64);
    let mut attempt = 0;
    while instances < SUITE_INSTANCES && attempt < 20 * SUITE_INSTANCES {
        let (inputs, f) = make(&mut rng, attempt)?;
        attempt += 1;
        let check = grad_check(f, &inputs, SUITE_EPSILON)?;
        if !check.branch_stable {
            redrawn += 1;
            continue;
        }
        worst = worst.max(check.max_rel_error);
        instances += 1;
    }
    Ok(CaseResult {
        name: name.to_string(),
        instances,
        redrawn,
        max_rel_error: worst,
        elapsed: start.elapsed(),
    })
}

/// Runs every operator and multi-task graph case at [`SUITE_EPSILON`] in
/// 64-bit arithmetic. Instances whose perturbations cross a ReLU or
/// max-pool kink are redrawn, since finite differences there measure a
/// one-sided slope.
pub fn run_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut results = Vec::new();
    for (i, op) in SUITE_OPS.iter().enumerate() {
        results.push(run_case(op, seed.wrapping_add(i as u64), |rng, _| {
            Ok(op_instance(op, rng))
        })?);
    }
    for (i, graph) in SUITE_GRAPHS.iter().enumerate() {
        results.push(run_case(graph, seed.wrapping_add(100 + i as u64), |rng, attempt| {
            graph_instance(graph, rng, attempt % 2 == 0)
        })?);
    }
    Ok(results)
}
