//! Named parameter storage, initialisation and the SGD optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// An ordered set of named tensors. Gradients use the same type with the
/// same layout, so ids are valid across both.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Adds `values` into the tensor `id`.
    pub fn accumulate(&mut self, id: ParamId, values: &[T]) {
        let t = &mut self.tensors[id.0];
        assert_eq!(t.len(), values.len(), "gradient size for {}", self.names[id.0]);
        for (a, &b) in t.data_mut().iter_mut().zip(values) {
            *a += b;
        }
    }

    pub fn add_assign(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return shape_err("parameter stores have different layouts".to_string());
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// L2 norm over every value, accumulated in `f64` in storage order.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let f = v.as_f64();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Value `k` of the flattened parameter vector.
    pub fn flat_get(&self, mut k: usize) -> (ParamId, usize, T) {
        for (i, t) in self.tensors.iter().enumerate() {
            if k < t.len() {
                return (ParamId(i), k, t.data()[k]);
            }
            k -= t.len();
        }
        panic!("flat index out of range");
    }

    /// Replaces the contents of `id` keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: Vec<T>) -> Result<()> {
        let shape = self.tensors[id.0].shape().to_vec();
        self.tensors[id.0] = Tensor::new(&shape, values).map_err(|_| {
            Error::Checkpoint(format!("shape mismatch for {}", self.names[id.0]))
        })?;
        Ok(())
    }
}

/// He-normal initialisation for a layer with `fan_in` inputs.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

pub fn normal<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of_f64(dist.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled when their global norm exceeds this.
    pub max_grad_norm: Option<f64>,
}

/// SGD with momentum and L2 weight decay:
/// `v = mu v + (g + wd p)`, `p -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    pub velocity: ParamStore<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig, params: &ParamStore<T>) -> Self {
        Self {
            config,
            velocity: params.zeros_like(),
        }
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.config.max_grad_norm {
            Some(m) if norm > m => m / (norm + 1e-6),
            _ => 1.0,
        };
        let mu = T::of_f64(self.config.momentum);
        let wd = T::of_f64(self.config.weight_decay);
        let lr = T::of_f64(lr);
        let clip = T::of_f64(clip);
        for ((p, g), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.velocity.tensors)
        {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gv * clip + wd * *pv;
                *vv = mu * *vv + d;
                *pv = *pv - lr * *vv;
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_matches_hand_update() {
        let mut p = ParamStore::<f64>::new();
        let id = p.add("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let mut g = p.zeros_like();
        g.accumulate(id, &[0.5, 0.5]);
        let mut opt = Sgd::new(
            SgdConfig {
                momentum: 0.9,
                weight_decay: 0.1,
                max_grad_norm: None,
            },
            &p,
        );
        opt.step(&mut p, &g, 0.01);
        // d = 0.5 + 0.1 * 1 = 0.6 ; v = 0.6 ; p = 1 - 0.006
        assert!((p.get(id).data()[0] - 0.994).abs() < 1e-12);
        opt.step(&mut p, &g, 0.01);
        let d = 0.5 + 0.1 * 0.994;
        let v = 0.9 * 0.6 + d;
        assert!((p.get(id).data()[0] - (0.994 - 0.01 * v)).abs() < 1e-12);
    }

    #[test]
    fn flat_indexing() {
        let mut p = ParamStore::<f32>::new();
        p.add("a", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        p.add("b", Tensor::new(&[1], vec![3.0]).unwrap());
        assert_eq!(p.flat_get(2), (ParamId(1), 0, 3.0));
        assert_eq!(p.num_values(), 3);
    }
}
