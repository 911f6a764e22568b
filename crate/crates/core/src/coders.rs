//! Box delta coders.
//!
//! * [`encode_h`] / [`decode_h`]: center offsets scaled by the anchor size
//!   and log size ratios between horizontal boxes.
//! * [`encode_o`] / [`decode_o`]: the same four terms plus a raw angle term,
//!   turning a horizontal reference into an oriented box.
//! * [`encode_rotated`] / [`decode_rotated`]: refinement of an oriented
//!   reference, with the center offset expressed in the reference frame.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, HorizontalBox, OrientedBox};

/// Upper bound on `|dw|`, `|dh|` before exponentiation.
pub fn max_log_ratio() -> f64 {
    (1000.0f64 / 16.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta4 {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta5 {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl Delta4 {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

impl Delta5 {
    pub fn to_array(self) -> [f64; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
            dtheta: v[4],
        }
    }
}

pub fn encode_h(anchor: &HorizontalBox, target: &HorizontalBox) -> Delta4 {
    Delta4 {
        dx: (target.cx - anchor.cx) / anchor.w,
        dy: (target.cy - anchor.cy) / anchor.h,
        dw: (target.w / anchor.w).ln(),
        dh: (target.h / anchor.h).ln(),
    }
}

pub fn decode_h(anchor: &HorizontalBox, delta: &Delta4) -> HorizontalBox {
    let clamp = max_log_ratio();
    HorizontalBox {
        cx: delta.dx * anchor.w + anchor.cx,
        cy: delta.dy * anchor.h + anchor.cy,
        w: anchor.w * delta.dw.clamp(-clamp, clamp).exp(),
        h: anchor.h * delta.dh.clamp(-clamp, clamp).exp(),
    }
}

/// Encodes an oriented target against a horizontal reference (angle 0).
///
/// The target is first rewritten in its equivalent form with the angle in
/// `[-pi/4, pi/4)`, so a near-vertical object is encoded with a small angle
/// and swapped extents instead of an angle near the `+-pi/2` seam.
pub fn encode_o(reference: &HorizontalBox, target: &OrientedBox) -> Delta5 {
    let (w, h, theta) = target.near_axis_form();
    Delta5 {
        dx: (target.cx - reference.cx) / reference.w,
        dy: (target.cy - reference.cy) / reference.h,
        dw: (w / reference.w).ln(),
        dh: (h / reference.h).ln(),
        dtheta: theta,
    }
}

/// Inverse of [`encode_o`]; the result is canonical.
pub fn decode_o(reference: &HorizontalBox, delta: &Delta5) -> OrientedBox {
    let clamp = max_log_ratio();
    OrientedBox::new(
        delta.dx * reference.w + reference.cx,
        delta.dy * reference.h + reference.cy,
        reference.w * delta.dw.clamp(-clamp, clamp).exp(),
        reference.h * delta.dh.clamp(-clamp, clamp).exp(),
        delta.dtheta,
    )
}

/// Encodes `target` relative to an oriented `reference`: the center offset
/// is rotated into the reference frame, and among the equivalent
/// parameterizations of `target` the one closest in angle is used, so
/// `|dtheta| <= pi/4`.
pub fn encode_rotated(reference: &OrientedBox, target: &OrientedBox) -> Delta5 {
    let (s, c) = reference.theta.sin_cos();
    let ox = target.cx - reference.cx;
    let oy = target.cy - reference.cy;
    let lx = c * ox + s * oy;
    let ly = -s * ox + c * oy;
    let mut dt = wrap_angle(target.theta - reference.theta);
    let (mut tw, mut th) = (target.w, target.h);
    if dt >= PI / 4.0 {
        dt -= FRAC_PI_2;
        std::mem::swap(&mut tw, &mut th);
    } else if dt < -PI / 4.0 {
        dt += FRAC_PI_2;
        std::mem::swap(&mut tw, &mut th);
    }
    Delta5 {
        dx: lx / reference.w,
        dy: ly / reference.h,
        dw: (tw / reference.w).ln(),
        dh: (th / reference.h).ln(),
        dtheta: dt,
    }
}

/// Inverse of [`encode_rotated`]; the result is canonical.
pub fn decode_rotated(reference: &OrientedBox, delta: &Delta5) -> OrientedBox {
    let clamp = max_log_ratio();
    let (s, c) = reference.theta.sin_cos();
    let lx = delta.dx * reference.w;
    let ly = delta.dy * reference.h;
    OrientedBox::new(
        reference.cx + c * lx - s * ly,
        reference.cy + s * lx + c * ly,
        reference.w * delta.dw.clamp(-clamp, clamp).exp(),
        reference.h * delta.dh.clamp(-clamp, clamp).exp(),
        reference.theta + delta.dtheta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, LN_2};

    #[test]
    fn encode_identity_and_hand_case() {
        let a = HorizontalBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(encode_h(&a, &a), Delta4::default());
        let t = HorizontalBox::new(1.0, 2.0, 20.0, 10.0);
        let d = encode_h(&a, &t);
        assert_abs_diff_eq!(d.dx, 0.1);
        assert_abs_diff_eq!(d.dy, 0.2);
        assert_abs_diff_eq!(d.dw, LN_2);
        assert_abs_diff_eq!(d.dh, 0.0);
    }

    #[test]
    fn decode_hand_cases() {
        let a = HorizontalBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(decode_h(&a, &Delta4::default()), a);
        let b = decode_h(
            &a,
            &Delta4 {
                dx: 0.1,
                dy: 0.2,
                dw: LN_2,
                dh: 0.0,
            },
        );
        assert_abs_diff_eq!(b.cx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.cy, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.h, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn decode_clamps_log_ratio() {
        let a = HorizontalBox::new(0.0, 0.0, 10.0, 10.0);
        let b = decode_h(
            &a,
            &Delta4 {
                dw: 50.0,
                dh: -50.0,
                ..Default::default()
            },
        );
        // direct evaluation with the clamp constant ln(62.5)
        assert_abs_diff_eq!(b.w, 10.0 * 62.5, epsilon = 1e-9);
        assert_abs_diff_eq!(b.h, 10.0 / 62.5, epsilon = 1e-12);
    }

    #[test]
    fn oriented_coder_cases() {
        let r = HorizontalBox::new(3.0, 4.0, 12.0, 6.0);
        let d = encode_o(&r, &OrientedBox::new(3.0, 4.0, 12.0, 6.0, 0.0));
        assert_eq!(d, Delta5::default());
        let sq = HorizontalBox::new(0.0, 0.0, 10.0, 10.0);
        let o = decode_o(
            &sq,
            &Delta5 {
                dtheta: FRAC_PI_4,
                ..Default::default()
            },
        );
        assert_eq!(o, OrientedBox::new(0.0, 0.0, 10.0, 10.0, FRAC_PI_4));
    }

    #[test]
    fn near_vertical_target_gets_small_angle() {
        let r = HorizontalBox::new(0.0, 0.0, 4.0, 20.0);
        let t = OrientedBox::new(0.0, 0.0, 20.0, 4.0, FRAC_PI_2 - 0.05);
        let d = encode_o(&r, &t);
        assert_abs_diff_eq!(d.dtheta, -0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dw, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dh, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_coder_identity() {
        let r = OrientedBox::new(5.0, 5.0, 30.0, 10.0, 0.7);
        let d = encode_rotated(&r, &r);
        for v in d.to_array() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let back = decode_rotated(&r, &d);
        assert_abs_diff_eq!(back.theta, r.theta, epsilon = 1e-12);
    }
}
