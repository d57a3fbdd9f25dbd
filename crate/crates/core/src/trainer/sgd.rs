use crate::error::{Error, Result};
use crate::netgraph::ParamStore;
use crate::tensor::Tensor;

/// One momentum SGD update: `v <- momentum * v - lr * g; p <- p + v`.
pub fn sgd_update(
    param: &mut Tensor<f32>,
    velocity: &mut Tensor<f32>,
    grad: &Tensor<f32>,
    learning_rate: f32,
    momentum: f32,
) -> Result<()> {
    for other in [velocity.shape(), grad.shape()] {
        if other != param.shape() {
            return Err(Error::Shape {
                op: "sgd_update",
                left: param.shape(),
                right: other,
            });
        }
    }
    for ((p, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// Momentum SGD state for every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamStore<f32>, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate: learning_rate as f32,
            momentum: momentum as f32,
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<f32>] {
        &self.velocity
    }

    /// Updates every parameter that has a gradient. Parameters outside the
    /// step's graph have none and keep both value and velocity.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>]) -> Result<()> {
        if grads.len() != self.velocity.len() || params.len() != self.velocity.len() {
            return Err(Error::config(format!(
                "optimizer holds {} parameters, got {} values and {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, v), g) in params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(grads)
        {
            if let Some(g) = g {
                sgd_update(p, v, g, self.learning_rate, self.momentum)?;
            }
        }
        Ok(())
    }
}
