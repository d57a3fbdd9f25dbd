//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every operator call evaluates eagerly, appends a node holding its value,
//! and returns a [`Var`] handle. [`Tape::backward`] walks the record in reverse
//! and returns a gradient for every node that the loss depends on.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry, LossValue};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geo: ConvGeometry,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Add(Var, Var),
    ChannelScale {
        input: Var,
        scale: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Reshape(Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
    /// Scalar loss whose gradient with respect to `input` was computed
    /// during the forward pass.
    Loss {
        input: Var,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf input")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geo: ConvGeometry) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), geo)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
            },
            "conv2d",
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input), "relu")
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2x2(self.value(input))?;
        self.push(out, Op::MaxPool { input, argmax }, "maxpool2x2")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let out = ops::channel_scale(self.value(input), self.value(scale))?;
        self.push(out, Op::ChannelScale { input, scale }, "channel_scale")
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            *v = factor * *v;
        }
        self.push(out, Op::Scale { input, factor }, "scale")
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        let out = self.value(input).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(input), "reshape")
    }

    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_bilinear(self.value(input), factor)?;
        self.push(out, Op::Upsample { input, factor }, "upsample_bilinear")
    }

    /// Scalar `sum_i weights[i] * input[i]` for constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.shape() != self.shape(input) {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: self.shape(input),
                right: weights.shape(),
            });
        }
        let total = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::zero(), |acc, (&x, &w)| acc + x * w);
        self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }, "weighted_sum")
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[i32],
        ignore_label: i32,
    ) -> Result<(Var, LossValue<T>)> {
        let (loss, grad) = ops::softmax_cross_entropy(self.value(logits), labels, ignore_label)?;
        let var = self.push(
            Tensor::scalar(loss.value),
            Op::Loss {
                input: logits,
                grad,
            },
            "softmax_cross_entropy",
        )?;
        Ok((var, loss))
    }

    pub fn smooth_l1(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        mask: &Tensor<T>,
    ) -> Result<(Var, LossValue<T>)> {
        let (loss, grad) = ops::smooth_l1(self.value(pred), target, mask)?;
        let var = self.push(
            Tensor::scalar(loss.value),
            Op::Loss { input: pred, grad },
            "smooth_l1",
        )?;
        Ok((var, loss))
    }

    /// Hash of every piecewise-linear branch taken on this tape: ReLU signs
    /// and max-pool winners. Two evaluations with equal signatures lie on the
    /// same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(input) => {
                    for &v in self.nodes[input.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss).len() != 1 {
            return Err(Error::config(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geo,
                } => {
                    let (gi, gw, gb) =
                        ops::conv2d_backward(self.value(*input), self.value(*weight), &g, *geo);
                    let gb = gb.reshaped(self.shape(*bias))?;
                    accumulate(&mut grads[input.0], gi);
                    accumulate(&mut grads[weight.0], gw);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::Relu(input) => {
                    let gi = ops::relu_backward(self.value(*input), &g);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::MaxPool { input, argmax } => {
                    let gi = ops::maxpool2x2_backward(self.shape(*input), argmax, &g);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::ChannelScale { input, scale } => {
                    let (gi, gs) =
                        ops::channel_scale_backward(self.value(*input), self.value(*scale), &g);
                    accumulate(&mut grads[input.0], gi);
                    accumulate(&mut grads[scale.0], gs);
                }
                Op::Scale { input, factor } => {
                    let mut gi = g.clone();
                    for v in gi.data_mut() {
                        *v = *factor * *v;
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Reshape(input) => {
                    let gi = g.clone().reshaped(self.shape(*input))?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Upsample { input, factor } => {
                    let gi = ops::upsample_bilinear_backward(self.shape(*input), *factor, &g);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::WeightedSum { input, weights } => {
                    let up = g.data()[0];
                    let mut gi = weights.clone();
                    for v in gi.data_mut() {
                        *v = up * *v;
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Loss { input, grad } => {
                    let up = g.data()[0];
                    let mut gi = grad.clone();
                    for v in gi.data_mut() {
                        *v = up * *v;
                    }
                    accumulate(&mut grads[input.0], gi);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::NonFinite("backward pass".into()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`]. Only leaves keep their gradient; a leaf the
/// loss does not depend on has none.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
