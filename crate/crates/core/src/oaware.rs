//! Orientation-aware convolution.
//!
//! Each output location `p` samples its `k x k` taps at `p + r + o(p, r)`,
//! where the offset `o` stretches the kernel to the anchor's extent and
//! rotates it by an angle:
//!
//! ```text
//! o(p, r) = ((x, y) + (w, h) / k * r * R(theta)^T) / S - c - p - r
//! ```
//!
//! `(x, y, w, h)` is the anchor at `p` in pixels, `S` the level stride, `r`
//! the tap as a row vector, and `c = 0.5` the anchor center offset
//! ([`ANCHOR_CENTER_OFFSET`]), so an anchor sitting on its cell center with
//! `w = h = kS` and `theta = 0` yields a zero field. Sampling is bilinear with
//! zero padding. Offsets are constants for the backward pass.

use crate::anchors::{FeatureLevelSpec, ANCHOR_CENTER_OFFSET};
use crate::error::{shape_err, Result};
use crate::geometry::HorizontalBox;
use crate::netcore::{BilinearTap, ConvGrads, Scalar, Tensor};

/// Per-location, per-tap sampling offsets in cells.
///
/// Layout is `(2 k^2, H, W)`: channel `2t` holds the x offset of tap `t`
/// and `2t + 1` the y offset, with taps numbered row-major over
/// `(ry, rx)` in `-(k-1)/2 ..= (k-1)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl OffsetField {
    pub fn zeros(k: usize, height: usize, width: usize) -> Self {
        Self {
            k,
            height,
            width,
            data: vec![0.0; 2 * k * k * height * width],
        }
    }

    /// Offset `(ox, oy)` of tap `t` at location `(row, col)`.
    pub fn get(&self, t: usize, row: usize, col: usize) -> (f64, f64) {
        let plane = self.height * self.width;
        let i = row * self.width + col;
        (self.data[2 * t * plane + i], self.data[(2 * t + 1) * plane + i])
    }

    fn set(&mut self, t: usize, loc: usize, o: (f64, f64)) {
        let plane = self.height * self.width;
        self.data[2 * t * plane + loc] = o.0;
        self.data[(2 * t + 1) * plane + loc] = o.1;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Tap `t` of a `k x k` kernel as `(rx, ry)`.
pub fn tap_vector(t: usize, k: usize) -> (f64, f64) {
    let half = (k / 2) as f64;
    ((t % k) as f64 - half, (t / k) as f64 - half)
}

/// Builds the offset field for one pyramid level from one anchor and one
/// angle per location (row-major).
pub fn offset_field(
    anchors: &[HorizontalBox],
    thetas: &[f64],
    level: &FeatureLevelSpec,
    k: usize,
) -> Result<OffsetField> {
    let n = level.height * level.width;
    if anchors.len() != n || thetas.len() != n {
        return shape_err(format!(
            "offset field needs {n} anchors and angles, got {} and {}",
            anchors.len(),
            thetas.len()
        ));
    }
    if k.is_multiple_of(2) {
        return shape_err("kernel size must be odd".to_string());
    }
    let mut field = OffsetField::zeros(k, level.height, level.width);
    let s = level.stride;
    let kf = k as f64;
    for (loc, (a, &theta)) in anchors.iter().zip(thetas).enumerate() {
        let px = (loc % level.width) as f64;
        let py = (loc / level.width) as f64;
        let (sin, cos) = theta.sin_cos();
        for t in 0..k * k {
            let (rx, ry) = tap_vector(t, k);
            let vx = a.w / kf * rx;
            let vy = a.h / kf * ry;
            // row vector times R(theta)^T
            let ux = cos * vx - sin * vy;
            let uy = sin * vx + cos * vy;
            let ox = (a.cx + ux) / s - ANCHOR_CENTER_OFFSET - px - rx;
            let oy = (a.cy + uy) / s - ANCHOR_CENTER_OFFSET - py - ry;
            field.set(t, loc, (ox, oy));
        }
    }
    Ok(field)
}

struct Plan<T> {
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    kk: usize,
    taps: Vec<BilinearTap<T>>,
}

fn plan<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, offsets: &OffsetField) -> Result<Plan<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (cout, cin, kh, kw) = weight.dims4()?;
    if n != 1 {
        return shape_err(format!("orientation-aware conv takes one image, got batch {n}"));
    }
    if cin != c || kh != kw || kh != offsets.k {
        return shape_err(format!(
            "weights {:?} incompatible with input {:?} / kernel {}",
            weight.shape(),
            x.shape(),
            offsets.k
        ));
    }
    if offsets.height != h || offsets.width != w {
        return shape_err(format!(
            "offset field {}x{} does not match feature map {h}x{w}",
            offsets.height, offsets.width
        ));
    }
    let kk = kh * kw;
    let mut taps = Vec::with_capacity(kk * h * w);
    for t in 0..kk {
        let (rx, ry) = tap_vector(t, kh);
        for row in 0..h {
            for col in 0..w {
                let (ox, oy) = offsets.get(t, row, col);
                let sx = T::of_f64(col as f64 + rx + ox);
                let sy = T::of_f64(row as f64 + ry + oy);
                taps.push(BilinearTap::new(sx, sy, h, w));
            }
        }
    }
    Ok(Plan {
        c,
        h,
        w,
        cout,
        kk,
        taps,
    })
}

fn columns<T: Scalar>(x: &Tensor<T>, p: &Plan<T>) -> Vec<T> {
    let plane = p.h * p.w;
    let mut cols = vec![T::zero(); p.c * p.kk * plane];
    for ch in 0..p.c {
        let src = &x.data()[ch * plane..(ch + 1) * plane];
        for t in 0..p.kk {
            let dst = &mut cols[(ch * p.kk + t) * plane..(ch * p.kk + t + 1) * plane];
            let taps = &p.taps[t * plane..(t + 1) * plane];
            for (d, tap) in dst.iter_mut().zip(taps) {
                *d = tap.sample(src);
            }
        }
    }
    cols
}

/// `Y(p) = sum_r W(r) X(p + r + o(p, r)) + b`, stride 1, same spatial size.
pub fn oaconv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    offsets: &OffsetField,
) -> Result<Tensor<T>> {
    let p = plan(x, weight, offsets)?;
    if bias.len() != p.cout {
        return shape_err("bias length".to_string());
    }
    let plane = p.h * p.w;
    let cols = columns(x, &p);
    let mut out = Tensor::zeros(&[1, p.cout, p.h, p.w]);
    for (co, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    T::gemm(p.cout, p.c * p.kk, plane, weight.data(), false, &cols, false, out.data_mut(), T::one());
    Ok(out)
}

/// Gradients to input, weights and bias. Offsets receive none.
pub fn oaconv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    offsets: &OffsetField,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let p = plan(x, weight, offsets)?;
    let plane = p.h * p.w;
    if upstream.shape() != [1, p.cout, p.h, p.w] {
        return shape_err(format!("upstream {:?}", upstream.shape()));
    }
    let ckk = p.c * p.kk;
    let cols = columns(x, &p);
    let mut grad_w = Tensor::zeros(weight.shape());
    T::gemm(p.cout, plane, ckk, upstream.data(), false, &cols, true, grad_w.data_mut(), T::zero());
    let grad_b = upstream
        .data()
        .chunks(plane)
        .map(|c| c.iter().fold(T::zero(), |a, &b| a + b))
        .collect();
    let mut gcols = vec![T::zero(); ckk * plane];
    T::gemm(ckk, p.cout, plane, weight.data(), true, upstream.data(), false, &mut gcols, T::zero());
    let mut grad_x = Tensor::zeros(x.shape());
    for ch in 0..p.c {
        let dst = &mut grad_x.data_mut()[ch * plane..(ch + 1) * plane];
        for t in 0..p.kk {
            let g = &gcols[(ch * p.kk + t) * plane..(ch * p.kk + t + 1) * plane];
            let taps = &p.taps[t * plane..(t + 1) * plane];
            for (tap, &gv) in taps.iter().zip(g) {
                tap.scatter(dst, gv);
            }
        }
    }
    Ok(ConvGrads {
        grad_x: Some(grad_x),
        grad_w,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{conv2d, ConvSpec};
    use std::f64::consts::FRAC_PI_2;

    fn level() -> FeatureLevelSpec {
        FeatureLevelSpec::new(8.0, 3, 4)
    }

    fn canonical_anchors(lvl: &FeatureLevelSpec, k: usize, sx: f64, sy: f64) -> Vec<HorizontalBox> {
        let mut v = Vec::new();
        for r in 0..lvl.height {
            for c in 0..lvl.width {
                let (cx, cy) = lvl.cell_center(r, c);
                v.push(HorizontalBox::new(
                    cx,
                    cy,
                    sx * k as f64 * lvl.stride,
                    sy * k as f64 * lvl.stride,
                ));
            }
        }
        v
    }

    #[test]
    fn canonical_anchor_gives_zero_field() {
        let lvl = level();
        let a = canonical_anchors(&lvl, 3, 1.0, 1.0);
        let f = offset_field(&a, &[0.0; 12], &lvl, 3).unwrap();
        assert!(f.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wide_anchor_stretches_taps() {
        let lvl = level();
        let a = canonical_anchors(&lvl, 3, 2.0, 1.0);
        let f = offset_field(&a, &[0.0; 12], &lvl, 3).unwrap();
        for t in 0..9 {
            let (rx, _) = tap_vector(t, 3);
            let (ox, oy) = f.get(t, 1, 2);
            assert!((ox - rx).abs() < 1e-12 && oy.abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_rotates_tap() {
        let lvl = level();
        let a = canonical_anchors(&lvl, 3, 1.0, 1.0);
        let f = offset_field(&a, &[FRAC_PI_2; 12], &lvl, 3).unwrap();
        // tap r = (1, 0) is index 5
        let (ox, oy) = f.get(5, 0, 0);
        assert!((ox + 1.0).abs() < 1e-9 && (oy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_offsets_reduce_to_conv() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 5, 6], |i| ((i * 7919) % 13) as f64 * 0.1 - 0.6);
        let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 31) % 7) as f64 * 0.2 - 0.5);
        let b = [0.1, -0.2, 0.3];
        let y = oaconv_forward(&x, &w, &b, &OffsetField::zeros(3, 5, 6)).unwrap();
        let r = conv2d(&x, &w, &b, ConvSpec::same(3)).unwrap();
        for (a, b) in y.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_field_is_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 6]);
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        assert!(oaconv_forward(&x, &w, &[0.0; 3], &OffsetField::zeros(3, 4, 6)).is_err());
    }
}
