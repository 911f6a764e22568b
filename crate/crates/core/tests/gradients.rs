//! Analytic gradients of the whole detector against central differences,
//! in double precision.

use obbdet::geometry::OrientedBox;
use obbdet::model::{image_tensor, Detector, ModelConfig};
use obbdet::netcore::{conv2d, conv2d_backward, ConvSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene() -> (Tensor<f64>, Vec<(OrientedBox, usize)>) {
    let (h, w) = (64usize, 64usize);
    let gts = vec![
        (OrientedBox::new(22.0, 20.0, 30.0, 10.0, 0.4), 0),
        (OrientedBox::new(44.0, 44.0, 18.0, 14.0, -0.9), 2),
    ];
    let mut pixels = vec![60u8; h * w];
    for (i, p) in pixels.iter_mut().enumerate() {
        let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        for (b, c) in &gts {
            let (s, co) = b.theta.sin_cos();
            let (dx, dy) = (x - b.cx, y - b.cy);
            if (co * dx + s * dy).abs() <= b.w / 2.0 && (-s * dx + co * dy).abs() <= b.h / 2.0 {
                *p = 150 + 40 * *c as u8;
            }
        }
        *p = p.wrapping_add((i * 37 % 11) as u8);
    }
    (image_tensor(&pixels, h, w).unwrap(), gts)
}

fn loss(det: &Detector<f64>, img: &Tensor<f64>, gts: &[(OrientedBox, usize)]) -> f64 {
    let mut g = det.params.zeros_like();
    det.train_image(img, gts, 3, &mut g).unwrap().total()
}

#[test]
fn detector_gradient_spot_checks() {
    let mut det = Detector::<f64>::new(ModelConfig::default(), 11);
    let (img, gts) = scene();
    let mut grads = det.params.zeros_like();
    det.train_image(&img, &gts, 3, &mut grads).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let total = det.params.num_values();
    let mut checked = 0;
    let mut tries = 0;
    while checked < 5 {
        tries += 1;
        assert!(tries < 10_000, "no parameters with a usable gradient");
        let k = rng.gen_range(0..total);
        let (id, off, v) = det.params.flat_get(k);
        let g = grads.get(id).data()[off];
        if g.abs() < 1e-4 {
            continue;
        }
        let h = 1e-5;
        det.params.get_mut(id).data_mut()[off] = v + h;
        let up = loss(&det, &img, &gts);
        det.params.get_mut(id).data_mut()[off] = v - h;
        let down = loss(&det, &img, &gts);
        det.params.get_mut(id).data_mut()[off] = v;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - g).abs() / g.abs().max(fd.abs());
        assert!(rel < 1e-3, "{}[{off}]: analytic {g:.6e} numeric {fd:.6e}", det.params.name(id));
        checked += 1;
    }
}

#[test]
fn conv_backward_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(&[2, 3, 7, 6], |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let b = vec![0.1, -0.2, 0.3, 0.0];
    let spec = ConvSpec::new(2, 1);
    let up = Tensor::from_fn(conv2d(&x, &w, &b, spec).unwrap().shape(), |i| ((i % 5) as f64 - 2.0) * 0.3);
    let dot = |y: &Tensor<f64>| y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>();
    let grads = conv2d_backward(&x, &w, spec, &up, true).unwrap();
    let gx = grads.grad_x.as_ref().unwrap();
    let h = 1e-6;
    for k in (0..x.len()).step_by(7) {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        let fd = (dot(&conv2d(&xp, &w, &b, spec).unwrap()) - dot(&conv2d(&xm, &w, &b, spec).unwrap())) / (2.0 * h);
        assert!((fd - gx.data()[k]).abs() < 1e-7, "input {k}");
    }
    for k in 0..w.len() {
        let mut wp = w.clone();
        wp.data_mut()[k] += h;
        let mut wm = w.clone();
        wm.data_mut()[k] -= h;
        let fd = (dot(&conv2d(&x, &wp, &b, spec).unwrap()) - dot(&conv2d(&x, &wm, &b, spec).unwrap())) / (2.0 * h);
        assert!((fd - grads.grad_w.data()[k]).abs() < 1e-7, "weight {k}");
    }
}
