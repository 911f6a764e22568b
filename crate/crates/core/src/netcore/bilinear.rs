//! Bilinear interpolation on a `(C, H, W)` grid with zero padding.
//!
//! Coordinates are in cells: `(x, y) = (col, row)`, so integer points hit
//! grid values exactly.

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// The four neighbours of a sample point and their weights. Neighbours
/// outside the grid carry index `None` and read as zero.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap<T> {
    pub idx: [Option<usize>; 4],
    pub weight: [T; 4],
    /// Fractional parts, kept for coordinate gradients.
    pub fx: T,
    pub fy: T,
}

impl<T: Scalar> BilinearTap<T> {
    pub fn new(x: T, y: T, height: usize, width: usize) -> Self {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let one = T::one();
        let xi = x0.as_f64();
        let yi = y0.as_f64();
        let at = |dy: f64, dx: f64| -> Option<usize> {
            let r = yi + dy;
            let c = xi + dx;
            (r >= 0.0 && c >= 0.0 && r < height as f64 && c < width as f64)
                .then(|| r as usize * width + c as usize)
        };
        Self {
            idx: [at(0.0, 0.0), at(0.0, 1.0), at(1.0, 0.0), at(1.0, 1.0)],
            weight: [
                (one - fx) * (one - fy),
                fx * (one - fy),
                (one - fx) * fy,
                fx * fy,
            ],
            fx,
            fy,
        }
    }

    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        let mut acc = T::zero();
        for q in 0..4 {
            if let Some(i) = self.idx[q] {
                acc += self.weight[q] * plane[i];
            }
        }
        acc
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [T], g: T) {
        for q in 0..4 {
            if let Some(i) = self.idx[q] {
                plane[i] += self.weight[q] * g;
            }
        }
    }

    /// Derivatives of the sampled value with respect to `(x, y)`.
    pub fn coord_grad(&self, plane: &[T]) -> (T, T) {
        let v = |q: usize| self.idx[q].map_or(T::zero(), |i| plane[i]);
        let one = T::one();
        let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
        let dx = (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10);
        let dy = (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01);
        (dx, dy)
    }
}

fn plane_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        _ => shape_err(format!("bilinear sampling needs (C,H,W), got {:?}", x.shape())),
    }
}

/// Samples every channel at every point. Output is `points x C`, row-major.
pub fn bilinear_sample<T: Scalar>(x: &Tensor<T>, points: &[(T, T)]) -> Result<Vec<T>> {
    let (c, h, w) = plane_dims(x)?;
    let mut out = Vec::with_capacity(points.len() * c);
    for &(px, py) in points {
        let tap = BilinearTap::new(px, py, h, w);
        for ch in 0..c {
            out.push(tap.sample(&x.data()[ch * h * w..(ch + 1) * h * w]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BilinearGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_points: Vec<(T, T)>,
}

/// Backward of [`bilinear_sample`]; `upstream` is `points x C`.
pub fn bilinear_sample_backward<T: Scalar>(
    x: &Tensor<T>,
    points: &[(T, T)],
    upstream: &[T],
) -> Result<BilinearGrads<T>> {
    let (c, h, w) = plane_dims(x)?;
    if upstream.len() != points.len() * c {
        return shape_err("upstream size does not match points x channels".to_string());
    }
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_points = Vec::with_capacity(points.len());
    for (p, &(px, py)) in points.iter().enumerate() {
        let tap = BilinearTap::new(px, py, h, w);
        let (mut gx, mut gy) = (T::zero(), T::zero());
        for ch in 0..c {
            let g = upstream[p * c + ch];
            let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
            let (dx, dy) = tap.coord_grad(plane);
            gx += g * dx;
            gy += g * dy;
            tap.scatter(&mut grad_x.data_mut()[ch * h * w..(ch + 1) * h * w], g);
        }
        grad_points.push((gx, gy));
    }
    Ok(BilinearGrads {
        grad_x,
        grad_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_points_are_exact() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i * i) as f64 * 0.1);
        let pts: Vec<(f64, f64)> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (c as f64, r as f64)))
            .collect();
        let v = bilinear_sample(&x, &pts).unwrap();
        for (p, &(cx, ry)) in pts.iter().enumerate() {
            for ch in 0..2 {
                let idx = ch * 12 + ry as usize * 4 + cx as usize;
                assert_eq!(v[p * 2 + ch], x.data()[idx]);
            }
        }
    }

    #[test]
    fn midpoint_and_padding() {
        let x = Tensor::<f64>::new(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        let v = bilinear_sample(&x, &[(0.5, 0.0), (1.5, 0.0), (-5.0, 0.0)]).unwrap();
        assert_eq!(v, vec![0.5, 0.5, 0.0]);
    }
}
