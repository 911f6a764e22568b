use std::f64::consts::{FRAC_PI_2, PI};

use obbdet::anchors::{generate_anchors, FeatureLevelSpec};
use obbdet::assign::{assign_maxiou, assign_ratio, AssignLabel};
use obbdet::coders::{decode_h, encode_h};
use obbdet::data::{evaluate_map, tile_image, ApMetric, Object};
use obbdet::geometry::{
    horizontal_iou, min_area_rect, obb_to_polygon, rectangularize, rotated_iou, rotated_nms, HorizontalBox,
    OrientedBox,
};
use obbdet::heads::Detection;
use obbdet::netcore::{conv2d, ConvSpec, Tensor};
use obbdet::oaware::{offset_field, tap_vector};
use obbdet::rpn::iou_loss;
use proptest::prelude::*;

fn obb() -> impl Strategy<Value = OrientedBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 1.0..40.0f64, 1.0..40.0f64, -PI..PI)
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t))
}

fn hbb() -> impl Strategy<Value = HorizontalBox> {
    (0.0..120.0f64, 0.0..120.0f64, 4.0..60.0f64, 4.0..60.0f64).prop_map(|(cx, cy, w, h)| HorizontalBox::new(cx, cy, w, h))
}

fn levels() -> Vec<FeatureLevelSpec> {
    vec![FeatureLevelSpec::new(8.0, 16, 16), FeatureLevelSpec::new(16.0, 8, 8)]
}

proptest! {
    #[test]
    fn canonical_form_is_idempotent(b in obb()) {
        prop_assert!(b.is_canonical());
        prop_assert_eq!(b.canonical(), b);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in obb(), b in obb()) {
        let ab = rotated_iou(&a, &b);
        prop_assert_eq!(ab, rotated_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_is_invariant_under_rigid_motion(a in obb(), b in obb(), alpha in -PI..PI, dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let (s, c) = alpha.sin_cos();
        let mv = |o: &OrientedBox| OrientedBox::new(c * o.cx - s * o.cy + dx, s * o.cx + c * o.cy + dy, o.w, o.h, o.theta + alpha);
        prop_assert!((rotated_iou(&a, &b) - rotated_iou(&mv(&a), &mv(&b))).abs() <= 1e-9);
    }

    #[test]
    fn rectangularized_box_contains_corners(b in obb()) {
        let r = rectangularize(&b);
        for p in obb_to_polygon(&b).pts {
            prop_assert!(p.x >= r.x1() - 1e-9 && p.x <= r.x2() + 1e-9);
            prop_assert!(p.y >= r.y1() - 1e-9 && p.y <= r.y2() + 1e-9);
        }
    }

    #[test]
    fn min_area_rect_beats_an_angle_sweep(b in obb()) {
        let poly = obb_to_polygon(&b);
        let best = min_area_rect(&poly).unwrap().area();
        for i in 0..36 {
            let t = i as f64 * PI / 36.0;
            let (s, c) = t.sin_cos();
            let us: Vec<f64> = poly.pts.iter().map(|p| c * p.x + s * p.y).collect();
            let vs: Vec<f64> = poly.pts.iter().map(|p| -s * p.x + c * p.y).collect();
            let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            prop_assert!(best <= span(&us) * span(&vs) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn kept_boxes_do_not_overlap(boxes in prop::collection::vec(obb(), 1..30), thr in 0.05..0.9f64, seed in 0u64..1000) {
        let scores: Vec<f64> = (0..boxes.len()).map(|i| ((i as u64 * 7 + seed) % 11) as f64 / 10.0).collect();
        let keep = rotated_nms(&boxes, &scores, thr);
        for (n, &i) in keep.iter().enumerate() {
            for &j in &keep[n + 1..] {
                prop_assert!(rotated_iou(&boxes[i], &boxes[j]) <= thr);
            }
            if n > 0 {
                prop_assert!(scores[keep[n - 1]] >= scores[i]);
            }
        }
    }

    #[test]
    fn coder_translation_and_scale(a in hbb(), t in hbb(), dx in -200.0..200.0f64, s in 0.1..10.0f64) {
        let d = encode_h(&a, &t).to_array();
        let sh = |b: &HorizontalBox| HorizontalBox::new(b.cx + dx, b.cy - dx, b.w, b.h);
        let sc = |b: &HorizontalBox| HorizontalBox::new(b.cx * s, b.cy * s, b.w * s, b.h * s);
        let d_shift = encode_h(&sh(&a), &sh(&t)).to_array();
        let d_scale = encode_h(&sc(&a), &sc(&t)).to_array();
        for k in 0..4 {
            prop_assert!((d[k] - d_shift[k]).abs() <= 1e-9 * (1.0 + dx.abs()));
            prop_assert!((d[k] - d_scale[k]).abs() <= 1e-12);
        }
        let back = decode_h(&a, &encode_h(&a, &t));
        prop_assert!(horizontal_iou(&back, &t) > 1.0 - 1e-9);
    }

    #[test]
    fn maxiou_positives_clear_the_negative_threshold(gts in prop::collection::vec(hbb(), 1..6)) {
        let grid = generate_anchors(&levels(), 4.0, 1.0);
        let r = assign_maxiou(grid.boxes(), &gts, 0.7, 0.3);
        prop_assert_eq!(r.len(), grid.boxes().len());
        for (i, g) in r.positives() {
            prop_assert!(horizontal_iou(&grid.boxes()[i], &gts[g]) >= 0.3);
        }
    }

    #[test]
    fn ratio_positives_grow_with_the_ratio(gts in prop::collection::vec(hbb(), 1..6)) {
        let grid = generate_anchors(&levels(), 4.0, 1.0);
        let mut last = 0;
        for k in 1..=10 {
            let r = assign_ratio(grid.boxes(), &gts, k as f64 / 10.0, 0.1);
            let pos = r.num_positive();
            let neg = r.negatives().count();
            let ign = r.labels.iter().filter(|l| **l == AssignLabel::Ignore).count();
            prop_assert_eq!(pos + neg + ign, grid.boxes().len());
            prop_assert!(r.positives().all(|(_, g)| g < gts.len()));
            prop_assert!(pos >= last);
            last = pos;
        }
    }

    #[test]
    fn conv_is_linear(alpha in -3.0..3.0f64, beta in -3.0..3.0f64, seed in 0usize..1000) {
        let f = |i: usize, m: usize| (((i + seed) * m) % 23) as f64 / 11.0 - 1.0;
        let x1 = Tensor::from_fn(&[1, 2, 6, 5], |i| f(i, 7));
        let x2 = Tensor::from_fn(&[1, 2, 6, 5], |i| f(i, 13));
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| f(i, 5));
        let zero = [0.0; 3];
        let mix = Tensor::from_fn(&[1, 2, 6, 5], |i| alpha * x1.data()[i] + beta * x2.data()[i]);
        let spec = ConvSpec::new(1, 1);
        let y = conv2d(&mix, &w, &zero, spec).unwrap();
        let (y1, y2) = (conv2d(&x1, &w, &zero, spec).unwrap(), conv2d(&x2, &w, &zero, spec).unwrap());
        for i in 0..y.len() {
            prop_assert!((y.data()[i] - alpha * y1.data()[i] - beta * y2.data()[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn quarter_turn_permutes_taps(side in 8.0..80.0f64, theta in -FRAC_PI_2..FRAC_PI_2, jx in -4.0..4.0f64, jy in -4.0..4.0f64) {
        let level = FeatureLevelSpec::new(8.0, 4, 5);
        let k = 3;
        let anchors: Vec<HorizontalBox> = (0..level.len())
            .map(|i| {
                let (x, y) = level.cell_center(i / level.width, i % level.width);
                HorizontalBox::new(x + jx, y + jy, side, side)
            })
            .collect();
        let n = level.len();
        let a = offset_field(&anchors, &vec![theta; n], &level, k).unwrap();
        let b = offset_field(&anchors, &vec![theta + FRAC_PI_2; n], &level, k).unwrap();
        let half = (k / 2) as f64;
        for t in 0..k * k {
            let (rx, ry) = tap_vector(t, k);
            let (qx, qy) = (-ry, rx);
            let u = ((qy + half) as usize) * k + (qx + half) as usize;
            for row in 0..level.height {
                for col in 0..level.width {
                    let (bx, by) = b.get(t, row, col);
                    let (ax, ay) = a.get(u, row, col);
                    prop_assert!((bx + rx - ax - qx).abs() <= 1e-9);
                    prop_assert!((by + ry - ay - qy).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn tiles_cover_the_image(w in 1usize..3000, h in 1usize..3000, tile in 64usize..1100, frac in 0.3..1.0f64) {
        let stride = ((tile as f64 * frac) as usize).max(1);
        let wins = tile_image(w, h, tile, stride, &[]);
        let covers = |extent: usize, get: &dyn Fn(&obbdet::data::Window) -> (usize, usize)| {
            let mut spans: Vec<(usize, usize)> = wins.iter().map(|(x, _)| get(x)).collect();
            spans.sort_unstable();
            let mut reach = 0;
            for (s, e) in spans {
                if s > reach {
                    return false;
                }
                reach = reach.max(e);
            }
            reach == extent
        };
        prop_assert!(covers(w, &|x| (x.x0, x.x0 + x.width)));
        prop_assert!(covers(h, &|x| (x.y0, x.y0 + x.height)));
        prop_assert!(wins.iter().all(|(x, _)| x.x0 + x.width <= w && x.y0 + x.height <= h));
    }
}

#[test]
fn one_anchor_per_location_on_the_stride_lattice() {
    let lv = levels();
    let grid = generate_anchors(&lv, 4.0, 1.0);
    assert_eq!(grid.boxes().len(), 16 * 16 + 8 * 8);
    let mut start = 0;
    for l in &lv {
        for i in 0..l.height {
            for j in 0..l.width {
                let a = grid.boxes()[start + i * l.width + j];
                assert_eq!((a.cx, a.cy), ((j as f64 + 0.5) * l.stride, (i as f64 + 0.5) * l.stride));
                assert_eq!((a.w, a.h), (4.0 * l.stride, 4.0 * l.stride));
            }
        }
        start += l.len();
    }
}

#[test]
fn zero_angles_give_a_repeatable_field() {
    let level = FeatureLevelSpec::new(16.0, 5, 5);
    let anchors: Vec<HorizontalBox> = (0..25).map(|i| HorizontalBox::new(8.0 + i as f64, 30.0, 40.0 + i as f64, 20.0)).collect();
    let a = offset_field(&anchors, &[0.0; 25], &level, 3).unwrap();
    let b = offset_field(&anchors, &[0.0; 25], &level, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn iou_loss_falls_along_the_approach() {
    let target = HorizontalBox::new(50.0, 40.0, 20.0, 10.0);
    let start = HorizontalBox::new(90.0, 70.0, 20.0, 10.0);
    let at = |t: f64| HorizontalBox::new(start.cx + t * (target.cx - start.cx), start.cy + t * (target.cy - start.cy), 20.0, 10.0);
    let values: Vec<f64> = (0..20).map(|i| iou_loss(&at(i as f64 / 19.0), &target, 7.0, 1e-6).value).collect();
    // The first points are disjoint and sit on the clamp.
    let first_overlap = values.iter().position(|&v| v < -7.0 * 1e-6f64.ln()).unwrap();
    for w in values[first_overlap..].windows(2) {
        assert!(w[1] < w[0], "{values:?}");
    }
    assert!(values[19].abs() < 1e-12);
}

// mAP over random detections on a fixed ground truth.
fn map_case(seed: u64) -> (Vec<Vec<Detection>>, Vec<Vec<Object>>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for _ in 0..4 {
        let objs: Vec<Object> = (0..rng.gen_range(1..5))
            .map(|_| {
                let b = OrientedBox::new(rng.gen_range(20.0..100.0), rng.gen_range(20.0..100.0), rng.gen_range(10.0..30.0), rng.gen_range(4.0..10.0), rng.gen_range(-1.5..1.5));
                Object::new(b, rng.gen_range(0..2))
            })
            .collect();
        let mut ds = Vec::new();
        for o in &objs {
            for _ in 0..rng.gen_range(0..3) {
                let b = OrientedBox::new(o.obb.cx + rng.gen_range(-3.0..3.0), o.obb.cy + rng.gen_range(-3.0..3.0), o.obb.w * rng.gen_range(0.8..1.2), o.obb.h, o.obb.theta + rng.gen_range(-0.2..0.2));
                ds.push(Detection { obb: b, score: (rng.gen_range(0..5) as f64) / 5.0, class_id: o.class_id });
            }
        }
        gts.push(objs);
        dets.push(ds);
    }
    (dets, gts)
}

proptest! {
    #[test]
    fn map_ignores_order_and_falls_with_the_threshold(seed in 0u64..10_000, rot in 0usize..4) {
        let (dets, gts) = map_case(seed);
        for metric in [ApMetric::Voc07, ApMetric::Voc12] {
            let base = evaluate_map(&dets, &gts, 2, 0.5, metric).unwrap();
            let mut d2 = dets.clone();
            let mut g2 = gts.clone();
            d2.rotate_left(rot);
            g2.rotate_left(rot);
            for d in &mut d2 {
                d.reverse();
            }
            let other = evaluate_map(&d2, &g2, 2, 0.5, metric).unwrap();
            prop_assert_eq!(base.map, other.map);
            let m: Vec<f64> = [0.3, 0.5, 0.7].iter().map(|&t| evaluate_map(&dets, &gts, 2, t, metric).unwrap().map).collect();
            prop_assert!(m[0] >= m[1] && m[1] >= m[2], "{m:?}");
        }
    }
}
