//! Fully connected layer, activations and losses, each with its backward.

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Probability clamp used by [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

fn rows_cols<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape()[..] {
        [n, d] => Ok((n, d)),
        _ => shape_err(format!("expected (N, D), got {:?}", x.shape())),
    }
}

/// `y = x W^T + b` with `x: (N, in)`, `W: (out, in)`.
pub fn fc<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, din) = rows_cols(x)?;
    let (dout, win) = rows_cols(weight)?;
    if din != win || bias.len() != dout {
        return shape_err(format!(
            "fc input {:?}, weight {:?}, bias {}",
            x.shape(),
            weight.shape(),
            bias.len()
        ));
    }
    let mut y = Tensor::zeros(&[n, dout]);
    for row in y.data_mut().chunks_mut(dout.max(1)) {
        row.copy_from_slice(bias);
    }
    T::gemm(n, din, dout, x.data(), false, weight.data(), true, y.data_mut(), T::one());
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Vec<T>,
}

pub fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let (n, din) = rows_cols(x)?;
    let (dout, _) = rows_cols(weight)?;
    if upstream.shape() != [n, dout] {
        return shape_err(format!("fc upstream {:?}", upstream.shape()));
    }
    let mut grad_x = Tensor::zeros(&[n, din]);
    T::gemm(n, dout, din, upstream.data(), false, weight.data(), false, grad_x.data_mut(), T::zero());
    let mut grad_w = Tensor::zeros(&[dout, din]);
    T::gemm(dout, n, din, upstream.data(), true, x.data(), false, grad_w.data_mut(), T::zero());
    let mut grad_b = vec![T::zero(); dout];
    for row in upstream.data().chunks(dout.max(1)) {
        for (g, &v) in grad_b.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(FcGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`] given the forward output (or input; the masks agree).
pub fn relu_backward<T: Scalar>(activated: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if activated.shape() != upstream.shape() {
        return shape_err("relu upstream shape".to_string());
    }
    let data = activated
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(activated.shape(), data)
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_backward<T: Scalar>(out: T, upstream: T) -> T {
    upstream * out * (T::one() - out)
}

/// `-mean(y ln p + (1 - y) ln(1 - p))` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. Returns the loss and its gradient with respect to `p`.
pub fn bce_loss<T: Scalar>(pred: &[T], labels: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != labels.len() {
        return shape_err("bce prediction and label lengths differ".to_string());
    }
    if pred.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let eps = T::of_f64(BCE_CLAMP);
    let n = T::of_f64(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(labels) {
        let lo = eps;
        let hi = T::one() - eps;
        let clamped = p < lo || p > hi;
        let pc = p.max(lo).min(hi);
        loss += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        grad.push(if clamped {
            T::zero()
        } else {
            (-(y / pc) + (T::one() - y) / (T::one() - pc)) / n
        });
    }
    Ok((loss / n, grad))
}

/// Binary cross-entropy on logits: the composition `bce_loss(sigmoid(z))`
/// evaluated stably. Returns the mean loss and the gradient to the logits.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[T]) -> Result<(T, Vec<T>)> {
    if logits.len() != labels.len() {
        return shape_err("bce logit and label lengths differ".to_string());
    }
    if logits.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let n = T::of_f64(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        // max(z, 0) - z y + ln(1 + e^{-|z|})
        loss += z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}

/// Row-wise softmax of `(N, K)` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows_cols(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over rows. Returns the loss and the gradient
/// with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, k) = rows_cols(logits)?;
    if labels.len() != n || labels.iter().any(|&l| l >= k) {
        return shape_err("cross-entropy labels do not match logits".to_string());
    }
    if n == 0 {
        return Ok((T::zero(), Tensor::zeros(&[0, k])));
    }
    let mut grad = softmax(logits)?;
    let nf = T::of_f64(n as f64);
    let mut loss = T::zero();
    for (row, &l) in grad.data_mut().chunks_mut(k).zip(labels) {
        loss += -(row[l].max(T::min_positive_value())).ln();
        row[l] = row[l] - T::one();
        for v in row.iter_mut() {
            *v = *v / nf;
        }
    }
    Ok((loss / nf, grad))
}

/// Smooth-L1 summed over elements; gradient with respect to `pred`.
pub fn smooth_l1<T: Scalar>(pred: &[T], target: &[T], beta: T) -> (T, Vec<T>) {
    let half = T::of_f64(0.5);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            let a = d.abs();
            if a < beta {
                loss += half * d * d / beta;
                d / beta
            } else {
                loss += a - half * beta;
                d.signum()
            }
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64).is_finite());
    }

    #[test]
    fn bce_perfect_prediction() {
        let labels = [1.0f64, 0.0, 1.0, 0.0];
        let pred = [1.0 - 1e-7, 1e-7, 1.0, 0.0];
        let (l, _) = bce_loss(&pred, &labels).unwrap();
        assert!(l <= 1e-6, "{l}");
    }

    #[test]
    fn logits_variant_matches_composition() {
        let z = [-2.0f64, -0.3, 0.0, 0.7, 3.0];
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (a, ga) = bce_loss(&p, &y).unwrap();
        let (b, gb) = bce_with_logits(&z, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
        for i in 0..5 {
            let chained = sigmoid_backward(p[i], ga[i]);
            assert!((chained - gb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_l1_regimes() {
        let (l, g) = smooth_l1(&[0.05f64, 2.0], &[0.0, 0.0], 0.1);
        assert!((l - (0.5 * 0.0025 / 0.1 + 2.0 - 0.05)).abs() < 1e-12);
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn fc_shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 5]);
        assert!(fc(&x, &w, &[0.0; 4]).is_err());
    }
}
