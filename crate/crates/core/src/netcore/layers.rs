//! Parameter handles for convolution and linear layers living in a
//! [`ParamStore`]. Gradients go to a store with the same layout.

use rand::Rng;

use super::conv::{conv2d, conv2d_backward, ConvSpec};
use super::ops::{fc, fc_backward};
use super::params::{he_normal, normal, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Weight initialisation for a new layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    He,
    Normal(f64),
    Zero,
}

fn init_tensor<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::He => he_normal(shape, fan_in, rng),
        Init::Normal(std) => normal(shape, std, rng),
        Init::Zero => Tensor::zeros(shape),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_tensor(&[cout, cin, k, k], cin * k * k, init, rng);
        Self {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            spec,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, p.get(self.weight), p.get(self.bias).data(), self.spec)
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when requested.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        upstream: &Tensor<T>,
        grads: &mut ParamStore<T>,
        need_grad_x: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = conv2d_backward(x, p.get(self.weight), self.spec, upstream, need_grad_x)?;
        grads.accumulate(self.weight, g.grad_w.data());
        grads.accumulate(self.bias, &g.grad_b);
        Ok(g.grad_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_tensor(&[dout, din], din, init, rng);
        Self {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        fc(x, p.get(self.weight), p.get(self.bias).data())
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        upstream: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let g = fc_backward(x, p.get(self.weight), upstream)?;
        grads.accumulate(self.weight, g.grad_w.data());
        grads.accumulate(self.bias, &g.grad_b);
        Ok(g.grad_x)
    }
}
