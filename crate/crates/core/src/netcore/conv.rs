//! 2D cross-correlation with zero padding, via im2col + GEMM.

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub const fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn out_size(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.padding - k) / self.stride + 1
    }
}

/// Owned convolution parameters: weights `(C_out, C_in, k, k)` and one bias
/// per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub spec: ConvSpec,
}

impl<T: Scalar> ConvParams<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, self.spec)
    }

    pub fn backward(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv2d_backward(x, &self.weight, self.spec, upstream, true)
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// Absent when the caller did not ask for the input gradient.
    pub grad_x: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Vec<T>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn check(x: &Tensor<impl Scalar>, weight: &Tensor<impl Scalar>, spec: ConvSpec) -> Result<Geometry> {
    let (n, c, h, w) = x.dims4()?;
    let (cout, cin, kh, kw) = weight.dims4()?;
    if cin != c {
        return shape_err(format!("conv input has {c} channels, weights expect {cin}"));
    }
    if kh != kw || kh % 2 == 0 {
        return shape_err(format!("kernel must be square and odd, got {kh}x{kw}"));
    }
    if spec.stride == 0 || h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
        return shape_err("conv input smaller than kernel".to_string());
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        cout,
        k: kh,
        ho: spec.out_size(h, kh),
        wo: spec.out_size(w, kw),
    })
}

/// Unfolds one image `(C, H, W)` into columns `(C*k*k, Ho*Wo)`.
fn im2col<T: Scalar>(img: &[T], g: &Geometry, spec: ConvSpec, cols: &mut [T]) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let pad = spec.padding as isize;
    let s = spec.stride as isize;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let out = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - pad;
                    let dst = &mut out[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - pad;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto an image, summing overlaps.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, spec: ConvSpec, img: &mut [T]) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let pad = spec.padding as isize;
    let s = spec.stride as isize;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = ox as isize * s + kj as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &Geometry, spec: ConvSpec) -> bool {
    g.k == 1 && spec.stride == 1 && spec.padding == 0
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = check(x, weight, spec)?;
    if bias.len() != g.cout {
        return shape_err(format!("bias has {} entries for {} outputs", bias.len(), g.cout));
    }
    let kk = g.c * g.k * g.k;
    let plane = g.ho * g.wo;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
    let mut cols = if is_pointwise(&g, spec) {
        Vec::new()
    } else {
        vec![T::zero(); kk * plane]
    };
    for ni in 0..g.n {
        let img = &x.data()[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let y = &mut out.data_mut()[ni * g.cout * plane..(ni + 1) * g.cout * plane];
        for (co, chunk) in y.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let cols_ref: &[T] = if is_pointwise(&g, spec) {
            img
        } else {
            im2col(img, &g, spec, &mut cols);
            &cols
        };
        T::gemm(g.cout, kk, plane, weight.data(), false, cols_ref, false, y, T::one());
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    upstream: &Tensor<T>,
    need_grad_x: bool,
) -> Result<ConvGrads<T>> {
    let g = check(x, weight, spec)?;
    if upstream.shape() != [g.n, g.cout, g.ho, g.wo] {
        return shape_err(format!(
            "upstream {:?} does not match conv output {:?}",
            upstream.shape(),
            [g.n, g.cout, g.ho, g.wo]
        ));
    }
    let kk = g.c * g.k * g.k;
    let plane = g.ho * g.wo;
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = vec![T::zero(); g.cout];
    let mut grad_x = need_grad_x.then(|| Tensor::zeros(x.shape()));
    let pointwise = is_pointwise(&g, spec);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { kk * plane }];
    let mut gcols = vec![T::zero(); if need_grad_x && !pointwise { kk * plane } else { 0 }];
    for ni in 0..g.n {
        let img = &x.data()[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let up = &upstream.data()[ni * g.cout * plane..(ni + 1) * g.cout * plane];
        for (co, chunk) in up.chunks(plane).enumerate() {
            let mut s = T::zero();
            for &v in chunk {
                s += v;
            }
            grad_b[co] += s;
        }
        let cols_ref: &[T] = if pointwise {
            img
        } else {
            im2col(img, &g, spec, &mut cols);
            &cols
        };
        // grad_w += up (cout x plane) * cols^T (plane x kk)
        T::gemm(g.cout, plane, kk, up, false, cols_ref, true, grad_w.data_mut(), T::one());
        if let Some(gx) = grad_x.as_mut() {
            let dst = &mut gx.data_mut()[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
            if pointwise {
                T::gemm(kk, g.cout, plane, weight.data(), true, up, false, dst, T::zero());
            } else {
                T::gemm(kk, g.cout, plane, weight.data(), true, up, false, &mut gcols, T::zero());
                col2im(&gcols, &g, spec, dst);
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Nearest-neighbour 2x upsampling of `(N, C, H, W)`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2x_backward<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h2, w2) = upstream.dims4()?;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let src = upstream.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(p * h + y / 2) * w + xx / 2] += src[(p * h2 + y) * w2 + xx];
            }
        }
    }
    Ok(out)
}
