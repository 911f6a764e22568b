//! Oracle suites shared by the `selfcheck` command and the test targets.
//!
//! Each suite returns named [`Check`]s with the worst observed error, so a
//! failure says by how much it missed.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anchors::{generate_anchors, FeatureLevelSpec};
use crate::assign::{assign_maxiou, assign_ratio};
use crate::coders::{decode_h, decode_o, decode_rotated, encode_h, encode_o, encode_rotated};
use crate::data::synthetic::{generate_scene, SceneSpec};
use crate::data::{evaluate_map, parse_dota, serialize_dota, ApMetric, Object};
use crate::geometry::{
    min_area_rect, obb_to_polygon, rotated_iou, rotated_nms, wrap_angle, HorizontalBox, OrientedBox, Point,
    Polygon4,
};
use crate::heads::Detection;
use crate::netcore::{conv2d, ConvSpec, Scalar, Tensor};
use crate::oaware::{oaconv_backward, oaconv_forward, offset_field, OffsetField};
use crate::oracle::{brute_force_ap, naive_oaconv, quadratic_nms, raster_iou};
use crate::rpn::iou_loss;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub observed: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl Check {
    fn within(name: &str, observed: f64, tolerance: f64, start: Instant) -> Self {
        Self {
            name: name.to_string(),
            passed: observed.is_finite() && observed <= tolerance,
            observed,
            tolerance,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn flag(name: &str, ok: bool, start: Instant) -> Self {
        Self {
            name: name.to_string(),
            passed: ok,
            observed: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<44} observed {:.3e} tol {:.1e} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.tolerance,
            self.seconds
        )
    }
}

pub fn random_obb(rng: &mut ChaCha8Rng, center: f64, size: (f64, f64)) -> OrientedBox {
    let w = rng.gen_range(size.0..size.1);
    let h = rng.gen_range(size.0..size.1);
    OrientedBox::new(
        rng.gen_range(-center..center),
        rng.gen_range(-center..center),
        w,
        h,
        rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
    )
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn obb_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    [
        (a.cx - b.cx).abs(),
        (a.cy - b.cy).abs(),
        (a.w - b.w).abs(),
        (a.h - b.h).abs(),
        angle_gap(a.theta, b.theta),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Rotated IoU against rasterization, NMS against the rescanning version,
/// and min-area-rect recovery from shuffled, jittered corners.
pub fn geometry_suite(pairs: usize, scenes: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_obb(&mut rng, 10.0, (2.0, 20.0));
        let b = random_obb(&mut rng, 10.0, (2.0, 20.0));
        worst = worst.max((rotated_iou(&a, &b) - raster_iou(&a, &b, 600)).abs());
    }
    out.push(Check::within("rotated IoU vs rasterization", worst, 5e-3, t));

    let t = Instant::now();
    let mut same = true;
    for _ in 0..scenes {
        let n = rng.gen_range(5..40);
        let boxes: Vec<OrientedBox> = (0..n).map(|_| random_obb(&mut rng, 30.0, (4.0, 25.0))).collect();
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
        let thr = rng.gen_range(0.1..0.7);
        let fast = rotated_nms(&boxes, &scores, thr);
        let slow = quadratic_nms(n, &scores, thr, |i, j| rotated_iou(&boxes[i], &boxes[j]));
        same &= fast == slow;
    }
    out.push(Check::flag("rotated NMS vs quadratic rescan", same, t));

    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let w = rng.gen_range(3.0..40.0);
        let h = w / rng.gen_range(1.2..6.0);
        let b = OrientedBox::new(
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..500.0),
            w,
            h,
            rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
        );
        let mut pts = obb_to_polygon(&b).pts;
        for p in pts.iter_mut() {
            *p = Point::new(p.x + rng.gen_range(-1e-6..1e-6), p.y + rng.gen_range(-1e-6..1e-6));
        }
        let shift = rng.gen_range(0..4);
        pts.rotate_left(shift);
        if rng.gen::<bool>() {
            pts.reverse();
        }
        match min_area_rect(&Polygon4::new(pts)) {
            Ok(r) => worst = worst.max(obb_gap(&r, &b)),
            Err(_) => worst = f64::INFINITY,
        }
    }
    out.push(Check::within("min-area rect of perturbed corners", worst, 1e-4, t));
    out
}

/// Encode/decode round trips and equivariance of the box coders.
pub fn coder_suite(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Sizes stay well inside the decoder's log-ratio clamp.
    let hb = |rng: &mut ChaCha8Rng| {
        HorizontalBox::new(
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(4.0..60.0),
            rng.gen_range(4.0..60.0),
        )
    };
    let t = Instant::now();
    let (mut h4, mut o5, mut r5) = (0.0f64, 0.0f64, 0.0f64);
    let (mut shift, mut scale) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let a = hb(&mut rng);
        let b = hb(&mut rng);
        let back = decode_h(&a, &encode_h(&a, &b));
        h4 = h4.max(obb_gap(&back.to_oriented(), &b.to_oriented()));

        let target = {
            let h = rng.gen_range(2.0..30.0);
            let w = h * rng.gen_range(1.05..4.0);
            OrientedBox::new(b.cx, b.cy, w, h, rng.gen_range(-FRAC_PI_2..FRAC_PI_2))
        };
        o5 = o5.max(obb_gap(&decode_o(&a, &encode_o(&a, &target)), &target));
        let reference = OrientedBox::new(a.cx, a.cy, a.w.max(a.h), a.w.min(a.h), rng.gen_range(-FRAC_PI_2..FRAC_PI_2));
        r5 = r5.max(obb_gap(&decode_rotated(&reference, &encode_rotated(&reference, &target)), &target));

        let (dx, dy) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let s = rng.gen_range(0.5..4.0);
        let d0 = encode_h(&a, &b).to_array();
        let moved = |x: &HorizontalBox| HorizontalBox::new(x.cx + dx, x.cy + dy, x.w, x.h);
        let scaled = |x: &HorizontalBox| HorizontalBox::new(x.cx * s, x.cy * s, x.w * s, x.h * s);
        let d1 = encode_h(&moved(&a), &moved(&b)).to_array();
        let d2 = encode_h(&scaled(&a), &scaled(&b)).to_array();
        let e0 = encode_rotated(&reference, &target).to_array();
        let e1 = encode_rotated(&reference.shifted(dx, dy), &target.shifted(dx, dy)).to_array();
        for k in 0..4 {
            shift = shift.max((d0[k] - d1[k]).abs() / d0[k].abs().max(1.0));
            scale = scale.max((d0[k] - d2[k]).abs() / d0[k].abs().max(1.0));
        }
        for k in 0..5 {
            shift = shift.max((e0[k] - e1[k]).abs() / e0[k].abs().max(1.0));
        }
    }
    vec![
        Check::within("4-d encode/decode round trip", h4, 1e-9, t),
        Check::within("5-d horizontal-reference round trip", o5, 1e-9, t),
        Check::within("5-d rotated-reference round trip", r5, 1e-9, t),
        Check::within("translation equivariance", shift, 1e-12, t),
        Check::within("scale equivariance", scale, 1e-12, t),
    ]
}

fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of_f64(rng.gen_range(-1.0..1.0)))
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Rotates a `(Cout, C, k, k)` kernel a quarter turn: tap `(i, j)` moves to
/// `(j, k - 1 - i)`.
fn quarter_turn(w: &Tensor<f64>) -> Tensor<f64> {
    let s = w.shape().to_vec();
    let k = s[2];
    let mut out = Tensor::zeros(&s);
    for o in 0..s[0] * s[1] {
        for i in 0..k {
            for j in 0..k {
                out.data_mut()[o * k * k + j * k + (k - 1 - i)] = w.data()[o * k * k + i * k + j];
            }
        }
    }
    out
}

/// Orientation-aware convolution against plain convolution, the direct-sum
/// oracle and finite differences.
pub fn oaware_suite(draws: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, cout, k) = (3, 4, 3);
    let level = FeatureLevelSpec::new(8.0, 6, 7);
    let n = level.height * level.width;
    let canonical: Vec<HorizontalBox> = (0..n)
        .map(|i| {
            let (x, y) = level.cell_center(i / level.width, i % level.width);
            HorizontalBox::new(x, y, k as f64 * level.stride, k as f64 * level.stride)
        })
        .collect();
    let mut out = Vec::new();

    let t = Instant::now();
    let zero = offset_field(&canonical, &vec![0.0; n], &level, k).expect("valid level");
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let x: Tensor<f64> = random_tensor(&[1, c, level.height, level.width], &mut rng);
        let w: Tensor<f64> = random_tensor(&[cout, c, k, k], &mut rng);
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = oaconv_forward(&x, &w, &b, &zero).expect("shapes agree");
        let r = conv2d(&x, &w, &b, ConvSpec::same(k)).expect("shapes agree");
        worst = worst.max(max_rel(y.data(), r.data()));
    }
    out.push(Check::within("canonical anchors reduce to convolution", worst, 1e-6, t));

    let t = Instant::now();
    let quarter = offset_field(&canonical, &vec![FRAC_PI_2; n], &level, k).expect("valid level");
    let mut worst: f64 = 0.0;
    // tap (rx, ry) = (-1, -1) is carried to (1, -1): offset (2, 0).
    let (ox, oy) = quarter.get(0, 2, 3);
    worst = worst.max((ox - 2.0).abs()).max(oy.abs());
    let (ox, oy) = quarter.get(5, 2, 3);
    worst = worst.max((ox + 1.0).abs()).max((oy - 1.0).abs());
    let x: Tensor<f64> = random_tensor(&[1, c, level.height, level.width], &mut rng);
    let w: Tensor<f64> = random_tensor(&[cout, c, k, k], &mut rng);
    let b = vec![0.25; cout];
    let y = oaconv_forward(&x, &w, &b, &quarter).expect("shapes agree");
    let r = conv2d(&x, &quarter_turn(&w), &b, ConvSpec::same(k)).expect("shapes agree");
    worst = worst.max(max_rel(y.data(), r.data()));
    out.push(Check::within("quarter turn rotates the kernel", worst, 1e-9, t));

    let t = Instant::now();
    let anchors: Vec<HorizontalBox> = canonical
        .iter()
        .map(|a| {
            HorizontalBox::new(
                a.cx + rng.gen_range(-6.0..6.0),
                a.cy + rng.gen_range(-6.0..6.0),
                rng.gen_range(8.0..50.0),
                rng.gen_range(8.0..50.0),
            )
        })
        .collect();
    let thetas: Vec<f64> = (0..n).map(|_| rng.gen_range(-FRAC_PI_2..FRAC_PI_2)).collect();
    let field = offset_field(&anchors, &thetas, &level, k).expect("valid level");
    let x: Tensor<f64> = random_tensor(&[1, c, level.height, level.width], &mut rng);
    let w: Tensor<f64> = random_tensor(&[cout, c, k, k], &mut rng);
    let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = oaconv_forward(&x, &w, &b, &field).expect("shapes agree");
    let naive = naive_oaconv(x.data(), c, w.data(), &b, &anchors, &thetas, &level, k);
    out.push(Check::within("forward vs direct sum", max_rel(y.data(), &naive), 1e-9, t));

    let t = Instant::now();
    let up: Tensor<f64> = random_tensor(y.shape(), &mut rng);
    let g = oaconv_backward(&x, &w, &field, &up).expect("shapes agree");
    let (fx, fw) = fd_oaconv(&x, &w, &b, &field, &up, 1e-5);
    let gx = g.grad_x.as_ref().expect("input gradient");
    let e64 = max_rel(gx.data(), &fx).max(max_rel(g.grad_w.data(), &fw));
    out.push(Check::within("backward vs finite differences (f64)", e64, 1e-5, t));

    let t = Instant::now();
    let (x32, w32, up32) = (x.cast::<f32>(), w.cast::<f32>(), up.cast::<f32>());
    let g32 = oaconv_backward(&x32, &w32, &field, &up32).expect("shapes agree");
    let gx32: Vec<f64> = g32.grad_x.expect("input gradient").data().iter().map(|v| *v as f64).collect();
    let gw32: Vec<f64> = g32.grad_w.data().iter().map(|v| *v as f64).collect();
    let b32: Vec<f32> = b.iter().map(|v| *v as f32).collect();
    let y32 = oaconv_forward(&x32, &w32, &b32, &field).expect("shapes agree");
    let y32: Vec<f64> = y32.data().iter().map(|v| *v as f64).collect();
    let e32 = max_rel(&gx32, &fx).max(max_rel(&gw32, &fw)).max(max_rel(&y32, y.data()));
    out.push(Check::within("single precision vs finite differences", e32, 1e-4, t));
    out
}

/// Central differences of `sum(up * oaconv(x, w))` with respect to every
/// input and weight entry.
fn fd_oaconv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    field: &OffsetField,
    up: &Tensor<f64>,
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let obj = |x: &Tensor<f64>, w: &Tensor<f64>| -> f64 {
        let y = oaconv_forward(x, w, b, field).expect("shapes agree");
        y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    };
    let mut gx = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        gx.push((obj(&p, w) - obj(&m, w)) / (2.0 * h));
    }
    let mut gw = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let (mut p, mut m) = (w.clone(), w.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        gw.push((obj(x, &p) - obj(x, &m)) / (2.0 * h));
    }
    (gx, gw)
}

/// IoU loss closed forms and its behaviour along a center interpolation.
pub fn loss_suite(weight: f64, eps: f64) -> Vec<Check> {
    let t = Instant::now();
    let target = HorizontalBox::new(50.0, 40.0, 20.0, 10.0);
    let mut worst = iou_loss(&target, &target, weight, eps).value.abs();
    // Same center, scaled by e^(-1/2) per side: IoU = e^-1.
    let s = (-0.5f64).exp();
    let inner = HorizontalBox::new(50.0, 40.0, 20.0 * s, 10.0 * s);
    worst = worst.max((iou_loss(&inner, &target, weight, eps).value - weight).abs());
    let far = HorizontalBox::new(500.0, 40.0, 20.0, 10.0);
    worst = worst.max((iou_loss(&far, &target, weight, eps).value + weight * eps.ln()).abs());
    let closed = Check::within("IoU loss closed forms", worst, 1e-12, t);

    let t = Instant::now();
    let start = HorizontalBox::new(64.0, 47.0, 20.0, 10.0);
    let mut prev = f64::INFINITY;
    let mut ok = true;
    let mut worst_fd: f64 = 0.0;
    for i in 0..=100 {
        let a = i as f64 / 100.0;
        let p = HorizontalBox::new(
            start.cx + a * (target.cx - start.cx),
            start.cy + a * (target.cy - start.cy),
            20.0,
            10.0,
        );
        let l = iou_loss(&p, &target, weight, eps);
        let slope = l.grad[0] * (target.cx - start.cx) + l.grad[1] * (target.cy - start.cy);
        ok &= l.value <= prev + 1e-12 && slope <= 1e-12;
        prev = l.value;
        if i > 0 && i < 100 {
            let f = |b: f64| {
                let q = HorizontalBox::new(
                    start.cx + b * (target.cx - start.cx),
                    start.cy + b * (target.cy - start.cy),
                    20.0,
                    10.0,
                );
                iou_loss(&q, &target, weight, eps).value
            };
            let fd = crate::oracle::central_difference(f, a, 1e-7);
            worst_fd = worst_fd.max((fd - slope).abs() / slope.abs().max(1.0));
        }
    }
    vec![
        closed,
        Check::flag("loss falls and slope <= 0 toward the target", ok, t),
        Check::within("loss slope vs finite differences", worst_fd, 1e-5, t),
    ]
}

/// Per-scene positive counts of the two assigners on synthetic scenes:
/// returns `(ratio positives, max-IoU positives)` per scene.
pub fn positive_counts(spec: &SceneSpec, scenes: usize, anchor_scale: f64) -> crate::Result<Vec<(usize, usize)>> {
    let levels: Vec<FeatureLevelSpec> = [8.0, 16.0]
        .iter()
        .map(|&s| FeatureLevelSpec::new(s, (spec.height as f64 / s) as usize, (spec.width as f64 / s) as usize))
        .collect();
    let grid = generate_anchors(&levels, anchor_scale, 1.0);
    let mut out = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let scene = generate_scene(&SceneSpec {
            seed: crate::assign::mix_seed(spec.seed, i as u64),
            ..spec.clone()
        })?;
        let rect: Vec<HorizontalBox> = scene.objects.iter().map(|o| o.obb.rectangularize()).collect();
        let ratio = assign_ratio(grid.boxes(), &rect, 0.3, 0.1).num_positive();
        let maxiou = assign_maxiou(grid.boxes(), &rect, 0.7, 0.3).num_positive();
        out.push((ratio, maxiou));
    }
    Ok(out)
}

/// The evaluator against the brute-force AP on random detection sets.
pub fn evaluator_suite(cases: usize, seed: u64) -> Vec<Check> {
    let t = Instant::now();
    let g1 = OrientedBox::new(20.0, 20.0, 10.0, 5.0, 0.0);
    let g2 = OrientedBox::new(60.0, 60.0, 10.0, 5.0, 0.3);
    let miss = OrientedBox::new(100.0, 20.0, 10.0, 5.0, 0.0);
    let d = |b, s| Detection {
        obb: b,
        score: s,
        class_id: 0,
    };
    let dets = vec![vec![d(g1, 0.9), d(miss, 0.8), d(g2, 0.7)]];
    let gts = vec![vec![Object::new(g1, 0), Object::new(g2, 0)]];
    let v07 = evaluate_map(&dets, &gts, 1, 0.5, ApMetric::Voc07).map(|r| r.map);
    let v12 = evaluate_map(&dets, &gts, 1, 0.5, ApMetric::Voc12).map(|r| r.map);
    let hand = match (v07, v12) {
        (Ok(a), Ok(b)) => (a - 28.0 / 33.0).abs().max((b - 5.0 / 6.0).abs()),
        _ => f64::INFINITY,
    };
    let mut out = vec![Check::within("VOC hand case", hand, 1e-12, t)];

    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let images = rng.gen_range(1..4);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..images {
            let g: Vec<Object> = (0..rng.gen_range(0..5))
                .map(|_| Object {
                    difficult: rng.gen_bool(0.15),
                    ..Object::new(random_obb(&mut rng, 40.0, (5.0, 20.0)), rng.gen_range(0..2))
                })
                .collect();
            let mut ds = Vec::new();
            for o in &g {
                if rng.gen_bool(0.7) {
                    let jitter = o.obb.shifted(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                    ds.push(Detection {
                        obb: jitter,
                        score: (rng.gen_range(0..10) as f64) / 10.0,
                        class_id: o.class_id,
                    });
                }
            }
            for _ in 0..rng.gen_range(0..4) {
                ds.push(Detection {
                    obb: random_obb(&mut rng, 40.0, (5.0, 20.0)),
                    score: (rng.gen_range(0..10) as f64) / 10.0,
                    class_id: rng.gen_range(0..2),
                });
            }
            gts.push(g);
            dets.push(ds);
        }
        for metric in [ApMetric::Voc07, ApMetric::Voc12] {
            let Ok(report) = evaluate_map(&dets, &gts, 2, 0.5, metric) else {
                worst = f64::INFINITY;
                continue;
            };
            for c in 0..2 {
                let mut flat: Vec<(usize, Detection)> = dets
                    .iter()
                    .enumerate()
                    .flat_map(|(i, ds)| ds.iter().filter(|d| d.class_id == c).map(move |d| (i, *d)))
                    .collect();
                flat.sort_by(|a, b| {
                    b.1.score.total_cmp(&a.1.score).then_with(|| {
                        let ka = [a.1.obb.cx, a.1.obb.cy, a.1.obb.w, a.1.obb.h, a.1.obb.theta];
                        let kb = [b.1.obb.cx, b.1.obb.cy, b.1.obb.w, b.1.obb.h, b.1.obb.theta];
                        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
                    })
                });
                let slow = brute_force_ap(&flat, &gts, c, 0.5, metric, |a, b| raster_iou(a, b, 400));
                let gap = match (slow, report.classes[c].ap) {
                    (None, None) => 0.0,
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => f64::INFINITY,
                };
                worst = worst.max(gap);
            }
        }
    }
    out.push(Check::within("evaluator vs brute force", worst, 1e-9, t));
    out
}

/// Text and binary formats survive a write/read cycle.
pub fn round_trip_suite() -> Vec<Check> {
    let t = Instant::now();
    let text = "imagesource:GoogleEarth\ngsd:0.5\n10 10 30 12 29 22 9 20 ship 0\n0 0 8 0 8 4 0 4 plane 1\n";
    let ok = parse_dota(text)
        .and_then(|r| {
            let again = parse_dota(&serialize_dota(&r))?;
            Ok(again == r)
        })
        .unwrap_or(false);
    let mut out = vec![Check::flag("DOTA parse/serialize", ok, t)];

    let t = Instant::now();
    let b = OrientedBox::new(1.25, -3.5, 8.0, 3.0, 0.4);
    let back = wrap_angle(OrientedBox::new(b.cx, b.cy, b.h, b.w, b.theta + FRAC_PI_2).theta);
    out.push(Check::within("canonical form of swapped extents", angle_gap(back, b.theta), 1e-12, t));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IouBench {
    pub pairs: usize,
    pub seconds: f64,
    pub mean_iou: f64,
}

/// Times `n` rotated IoU evaluations over a pool of random pairs.
pub fn bench_rotated_iou(n: usize, seed: u64) -> IouBench {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<(OrientedBox, OrientedBox)> = (0..n.clamp(1, 100_000))
        .map(|_| (random_obb(&mut rng, 10.0, (2.0, 20.0)), random_obb(&mut rng, 10.0, (2.0, 20.0))))
        .collect();
    let t = Instant::now();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = &pool[i % pool.len()];
        acc += rotated_iou(a, b);
    }
    IouBench {
        pairs: n,
        seconds: t.elapsed().as_secs_f64().max(1e-9),
        mean_iou: if n == 0 { 0.0 } else { acc / n as f64 },
    }
}

/// All suites at their full sizes, as run by `selfcheck`.
pub fn run_all(seed: u64) -> Vec<(String, Vec<Check>)> {
    vec![
        ("geometry".into(), geometry_suite(1000, 50, seed)),
        ("coders".into(), coder_suite(10_000, seed)),
        ("orientation-aware conv".into(), oaware_suite(100, seed)),
        ("losses".into(), loss_suite(7.0, 1e-6)),
        ("evaluation".into(), evaluator_suite(200, seed)),
        ("formats".into(), round_trip_suite()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for c in geometry_suite(20, 5, 1)
            .into_iter()
            .chain(coder_suite(200, 1))
            .chain(oaware_suite(3, 1))
            .chain(loss_suite(7.0, 1e-6))
            .chain(evaluator_suite(20, 1))
            .chain(round_trip_suite())
        {
            assert!(c.passed, "{c}");
        }
    }
}
