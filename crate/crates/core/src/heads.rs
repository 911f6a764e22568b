//! Second stage: RoI pooling, the horizontal-to-oriented transform and the
//! oriented box head.
//!
//! Training takes horizontal proposals (plus the rectangularized ground
//! truths), samples RoIs by horizontal max-IoU and regresses a [`Delta5`]
//! per RoI with a two-layer network. The decoded oriented RoIs, with the
//! oriented ground truths appended, are sampled again by rotated IoU and fed
//! through rotated RoIAlign into the classification and per-class
//! refinement head.

use serde::{Deserialize, Serialize};

use crate::assign::{assign_maxiou, assign_rotated, mix_seed, sample_fraction, SampleResult};
use crate::coders::{decode_o, decode_rotated, encode_o, encode_rotated, Delta5};
use crate::error::{shape_err, Error, Result};
use crate::geometry::{descending_order, rotated_nms, HorizontalBox, OrientedBox};
use crate::netcore::{
    relu, relu_backward, smooth_l1, softmax, softmax_cross_entropy, BilinearTap, Init, LinearLayer,
    ParamStore, Scalar, Tensor,
};

/// Bin layout of RoI pooling. Boxes are in image pixels; cell `(i, j)` of a
/// map with stride `S` is centered at pixel `((j + 0.5) S, (i + 0.5) S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiAlignSpec {
    pub out: usize,
    /// Samples per bin along each axis.
    pub sampling: usize,
    pub stride: f64,
}

impl RoiAlignSpec {
    pub fn new(out: usize, sampling: usize, stride: f64) -> Self {
        Self { out, sampling, stride }
    }
}

/// Sample points of one RoI in feature cells, bin-major and `s x s` per bin.
pub type RoiPoints = Vec<(f64, f64)>;

fn feature_dims<T: Scalar>(feature: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match feature.shape()[..] {
        [1, c, h, w] | [c, h, w] => Ok((c, h, w)),
        _ => shape_err(format!("RoI pooling needs one (C,H,W) map, got {:?}", feature.shape())),
    }
}

fn box_frame_points(
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
    spec: &RoiAlignSpec,
) -> RoiPoints {
    let (sin, cos) = theta.sin_cos();
    let (n, s) = (spec.out, spec.sampling);
    let bw = w / n as f64;
    let bh = h / n as f64;
    let mut pts = Vec::with_capacity(n * n * s * s);
    for by in 0..n {
        for bx in 0..n {
            for sy in 0..s {
                for sx in 0..s {
                    let lx = -0.5 * w + (bx as f64 + (sx as f64 + 0.5) / s as f64) * bw;
                    let ly = -0.5 * h + (by as f64 + (sy as f64 + 0.5) / s as f64) * bh;
                    let x = cx + cos * lx - sin * ly;
                    let y = cy + sin * lx + cos * ly;
                    pts.push((x / spec.stride - 0.5, y / spec.stride - 0.5));
                }
            }
        }
    }
    pts
}

/// Sample points of a horizontal RoI, clipped to the map's pixel extent.
pub fn roi_points(box_: &HorizontalBox, map_hw: (usize, usize), spec: &RoiAlignSpec) -> Result<RoiPoints> {
    let b = box_.clip(map_hw.1 as f64 * spec.stride, map_hw.0 as f64 * spec.stride);
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::Degenerate(format!("RoI {box_:?} has no area inside the map")));
    }
    Ok(box_frame_points(b.cx, b.cy, b.w, b.h, 0.0, spec))
}

/// Sample points of an oriented RoI: laid out in the box frame, then rotated
/// and translated.
pub fn rotated_roi_points(box_: &OrientedBox, spec: &RoiAlignSpec) -> Result<RoiPoints> {
    let finite = [box_.cx, box_.cy, box_.w, box_.h, box_.theta].iter().all(|v| v.is_finite());
    if !finite || !(box_.w > 0.0 && box_.h > 0.0) {
        return Err(Error::Degenerate(format!("oriented RoI {box_:?} has no area")));
    }
    Ok(box_frame_points(box_.cx, box_.cy, box_.w, box_.h, box_.theta, spec))
}

/// Pools every RoI into one row of a `(N, C * out * out)` matrix, laid out
/// channel-major within the row.
pub fn pool_rois<T: Scalar>(feature: &Tensor<T>, rois: &[RoiPoints], spec: &RoiAlignSpec) -> Result<Tensor<T>> {
    let (c, h, w) = feature_dims(feature)?;
    let bins = spec.out * spec.out;
    let ss = spec.sampling * spec.sampling;
    let inv = T::of_f64(1.0 / ss as f64);
    let plane = h * w;
    let mut out = Tensor::zeros(&[rois.len(), c * bins]);
    let mut taps = Vec::with_capacity(bins * ss);
    for (r, pts) in rois.iter().enumerate() {
        if pts.len() != bins * ss {
            return shape_err("RoI point count does not match the pooling spec".to_string());
        }
        taps.clear();
        taps.extend(pts.iter().map(|&(x, y)| BilinearTap::new(T::of_f64(x), T::of_f64(y), h, w)));
        let row = &mut out.data_mut()[r * c * bins..(r + 1) * c * bins];
        for ch in 0..c {
            let src = &feature.data()[ch * plane..(ch + 1) * plane];
            for b in 0..bins {
                let mut acc = T::zero();
                for t in &taps[b * ss..(b + 1) * ss] {
                    acc += t.sample(src);
                }
                row[ch * bins + b] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Adds the gradient of [`pool_rois`] into `grad_feature`.
pub fn pool_rois_backward<T: Scalar>(
    grad_feature: &mut Tensor<T>,
    rois: &[RoiPoints],
    upstream: &Tensor<T>,
    spec: &RoiAlignSpec,
) -> Result<()> {
    let (c, h, w) = feature_dims(grad_feature)?;
    let bins = spec.out * spec.out;
    let ss = spec.sampling * spec.sampling;
    if upstream.shape() != [rois.len(), c * bins] {
        return shape_err(format!("RoI upstream {:?}", upstream.shape()));
    }
    let inv = T::of_f64(1.0 / ss as f64);
    let plane = h * w;
    for (r, pts) in rois.iter().enumerate() {
        let taps: Vec<BilinearTap<T>> = pts
            .iter()
            .map(|&(x, y)| BilinearTap::new(T::of_f64(x), T::of_f64(y), h, w))
            .collect();
        let row = &upstream.data()[r * c * bins..(r + 1) * c * bins];
        for ch in 0..c {
            let dst = &mut grad_feature.data_mut()[ch * plane..(ch + 1) * plane];
            for b in 0..bins {
                let g = row[ch * bins + b] * inv;
                for t in &taps[b * ss..(b + 1) * ss] {
                    t.scatter(dst, g);
                }
            }
        }
    }
    Ok(())
}

/// RoIAlign of one horizontal box; output `(C, out, out)`.
pub fn roi_align<T: Scalar>(feature: &Tensor<T>, box_: &HorizontalBox, spec: &RoiAlignSpec) -> Result<Tensor<T>> {
    let (c, h, w) = feature_dims(feature)?;
    let pts = roi_points(box_, (h, w), spec)?;
    pool_rois(feature, &[pts], spec)?.reshape(&[c, spec.out, spec.out])
}

/// Rotated RoIAlign of one oriented box; output `(C, out, out)`.
pub fn rotated_roi_align<T: Scalar>(feature: &Tensor<T>, box_: &OrientedBox, spec: &RoiAlignSpec) -> Result<Tensor<T>> {
    let (c, _, _) = feature_dims(feature)?;
    let pts = rotated_roi_points(box_, spec)?;
    pool_rois(feature, &[pts], spec)?.reshape(&[c, spec.out, spec.out])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcnnConfig {
    pub roi_out: usize,
    pub roi_sampling: usize,
    pub hidden: usize,
    pub h2o_iou: f64,
    pub obb_iou: f64,
    pub rois_per_image: usize,
    pub pos_fraction: f64,
    pub h2o_stds: [f64; 5],
    pub obb_stds: [f64; 5],
    pub smooth_l1_beta: f64,
    pub score_thr: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for RcnnConfig {
    fn default() -> Self {
        Self {
            roi_out: 7,
            roi_sampling: 2,
            hidden: 256,
            h2o_iou: 0.5,
            obb_iou: 0.5,
            rois_per_image: 64,
            pos_fraction: 0.25,
            h2o_stds: [0.1, 0.1, 0.2, 0.2, 0.1],
            obb_stds: [0.1, 0.1, 0.2, 0.2, 0.1],
            smooth_l1_beta: 1.0 / 9.0,
            score_thr: 0.05,
            nms_iou: 0.1,
            max_detections: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub obb: OrientedBox,
    pub score: f64,
    pub class_id: usize,
}

/// Horizontal-to-oriented transform: `fc(hidden) -> relu -> fc(5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct H2oHead {
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
}

/// Oriented box head: two hidden layers, `C + 1` class logits and `5 C`
/// class-specific deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct ObbHead {
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
    pub cls: LinearLayer,
    pub reg: LinearLayer,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcnnHeads {
    pub h2o: H2oHead,
    pub obb: ObbHead,
    pub spec: RoiAlignSpec,
}

impl RcnnHeads {
    pub fn new<T: Scalar, R: rand::Rng>(
        params: &mut ParamStore<T>,
        channels: usize,
        stride: f64,
        num_classes: usize,
        cfg: &RcnnConfig,
        rng: &mut R,
    ) -> Self {
        let din = channels * cfg.roi_out * cfg.roi_out;
        let hd = cfg.hidden;
        Self {
            h2o: H2oHead {
                fc1: LinearLayer::new(params, "h2o.fc1", din, hd, Init::He, rng),
                fc2: LinearLayer::new(params, "h2o.fc2", hd, 5, Init::Normal(0.001), rng),
            },
            obb: ObbHead {
                fc1: LinearLayer::new(params, "obb.fc1", din, hd, Init::He, rng),
                fc2: LinearLayer::new(params, "obb.fc2", hd, hd, Init::He, rng),
                cls: LinearLayer::new(params, "obb.cls", hd, num_classes + 1, Init::Normal(0.01), rng),
                reg: LinearLayer::new(params, "obb.reg", hd, 5 * num_classes, Init::Normal(0.001), rng),
                num_classes,
            },
            spec: RoiAlignSpec::new(cfg.roi_out, cfg.roi_sampling, stride),
        }
    }
}

/// Forward values of the transform kept for backward.
pub struct H2oForward<T> {
    pub hidden: Tensor<T>,
    /// `(N, 5)` normalized deltas.
    pub deltas: Tensor<T>,
}

impl H2oHead {
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, feats: &Tensor<T>) -> Result<H2oForward<T>> {
        let hidden = relu(&self.fc1.forward(p, feats)?);
        let deltas = self.fc2.forward(p, &hidden)?;
        Ok(H2oForward { hidden, deltas })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        feats: &Tensor<T>,
        fwd: &H2oForward<T>,
        g_deltas: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let g_hidden = self.fc2.backward(p, &fwd.hidden, g_deltas, grads)?;
        let g_pre = relu_backward(&fwd.hidden, &g_hidden)?;
        self.fc1.backward(p, feats, &g_pre, grads)
    }
}

pub struct ObbForward<T> {
    pub h1: Tensor<T>,
    pub h2: Tensor<T>,
    pub logits: Tensor<T>,
    pub deltas: Tensor<T>,
}

impl ObbHead {
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, feats: &Tensor<T>) -> Result<ObbForward<T>> {
        let h1 = relu(&self.fc1.forward(p, feats)?);
        let h2 = relu(&self.fc2.forward(p, &h1)?);
        let logits = self.cls.forward(p, &h2)?;
        let deltas = self.reg.forward(p, &h2)?;
        Ok(ObbForward { h1, h2, logits, deltas })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        feats: &Tensor<T>,
        fwd: &ObbForward<T>,
        g_logits: &Tensor<T>,
        g_deltas: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let mut g_h2 = self.cls.backward(p, &fwd.h2, g_logits, grads)?;
        g_h2.add_assign(&self.reg.backward(p, &fwd.h2, g_deltas, grads)?)?;
        let g_h2 = relu_backward(&fwd.h2, &g_h2)?;
        let g_h1 = self.fc2.backward(p, &fwd.h1, &g_h2, grads)?;
        let g_h1 = relu_backward(&fwd.h1, &g_h1)?;
        self.fc1.backward(p, feats, &g_h1, grads)
    }
}

fn row5<T: Scalar>(t: &Tensor<T>, r: usize, offset: usize, stds: &[f64; 5]) -> Delta5 {
    let w = t.shape()[1];
    let v: Vec<f64> = (0..5).map(|k| t.data()[r * w + offset + k].as_f64() * stds[k]).collect();
    Delta5::from_slice(&v)
}

#[derive(Debug, Clone, Default)]
pub struct RcnnTrainOutput<T> {
    pub loss_h2o: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
    /// Gradient with respect to the pooled feature map.
    pub feature_grad: Option<Tensor<T>>,
    pub h2o_positives: usize,
    pub obb_positives: usize,
}

fn sampled(sample: &SampleResult) -> Vec<usize> {
    let mut v: Vec<usize> = sample.pos_indices.iter().chain(&sample.neg_indices).copied().collect();
    v.sort_unstable();
    v
}

/// Smooth-L1 over the positives' deltas, normalized by `norm`. Returns the
/// loss and writes the gradient into `grad` (same layout as `pred`).
#[allow(clippy::too_many_arguments)]
fn delta_loss<T: Scalar>(
    pred: &Tensor<T>,
    grad: &mut Tensor<T>,
    row: usize,
    offset: usize,
    target: &Delta5,
    stds: &[f64; 5],
    beta: f64,
    norm: f64,
) -> f64 {
    let width = pred.shape()[1];
    let t: Vec<T> = target
        .to_array()
        .iter()
        .zip(stds)
        .map(|(v, s)| T::of_f64(v / s))
        .collect();
    let p = &pred.data()[row * width + offset..row * width + offset + 5];
    let (l, g) = smooth_l1(p, &t, T::of_f64(beta));
    let inv = T::of_f64(1.0 / norm);
    for (k, gv) in g.into_iter().enumerate() {
        grad.data_mut()[row * width + offset + k] = gv * inv;
    }
    l.as_f64() / norm
}

impl RcnnHeads {
    /// Training forward and backward for one image. `gts` carry 0-based
    /// class ids. Parameter gradients are added into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        grads: &mut ParamStore<T>,
        feature: &Tensor<T>,
        proposals: &[HorizontalBox],
        gts: &[(OrientedBox, usize)],
        cfg: &RcnnConfig,
        seed: u64,
    ) -> Result<RcnnTrainOutput<T>> {
        let (_, fh, fw) = feature_dims(feature)?;
        let spec = &self.spec;
        let gt_boxes: Vec<OrientedBox> = gts.iter().map(|g| g.0).collect();
        let rect_gts: Vec<HorizontalBox> = gt_boxes.iter().map(OrientedBox::rectangularize).collect();
        let mut grad_feature = Tensor::zeros(feature.shape());

        // Horizontal stage.
        let mut cands: Vec<HorizontalBox> = proposals.to_vec();
        cands.extend_from_slice(&rect_gts);
        let assign = assign_maxiou(&cands, &rect_gts, cfg.h2o_iou, cfg.h2o_iou);
        let sample = sample_fraction(&assign, cfg.rois_per_image, cfg.pos_fraction, mix_seed(seed, 11));
        let mut rois = Vec::new();
        let mut roi_boxes = Vec::new();
        let mut roi_gt = Vec::new();
        for i in sampled(&sample) {
            if let Ok(pts) = roi_points(&cands[i], (fh, fw), spec) {
                rois.push(pts);
                roi_boxes.push(cands[i].clip(fw as f64 * spec.stride, fh as f64 * spec.stride));
                roi_gt.push(assign.gt_of(i));
            }
        }
        let mut out = RcnnTrainOutput {
            h2o_positives: roi_gt.iter().flatten().count(),
            ..Default::default()
        };
        if rois.is_empty() {
            out.feature_grad = Some(grad_feature);
            return Ok(out);
        }
        let feats = pool_rois(feature, &rois, spec)?;
        let h2o = self.h2o.forward(p, &feats)?;
        let mut g_d = Tensor::zeros(h2o.deltas.shape());
        let n = rois.len() as f64;
        for (r, g) in roi_gt.iter().enumerate() {
            if let Some(g) = g {
                let target = encode_o(&roi_boxes[r], &gt_boxes[*g]);
                out.loss_h2o += delta_loss(&h2o.deltas, &mut g_d, r, 0, &target, &cfg.h2o_stds, cfg.smooth_l1_beta, n);
            }
        }
        let g_feats = self.h2o.backward(p, &feats, &h2o, &g_d, grads)?;
        pool_rois_backward(&mut grad_feature, &rois, &g_feats, spec)?;

        // Oriented stage on the decoded RoIs plus the ground truths.
        let mut ocands: Vec<OrientedBox> = (0..rois.len())
            .map(|r| decode_o(&roi_boxes[r], &row5(&h2o.deltas, r, 0, &cfg.h2o_stds)))
            .collect();
        ocands.extend_from_slice(&gt_boxes);
        let oassign = assign_rotated(&ocands, &gt_boxes, cfg.obb_iou, cfg.obb_iou);
        let osample = sample_fraction(&oassign, cfg.rois_per_image, cfg.pos_fraction, mix_seed(seed, 12));
        let mut orois = Vec::new();
        let mut obox = Vec::new();
        let mut ogt = Vec::new();
        for i in sampled(&osample) {
            if let Ok(pts) = rotated_roi_points(&ocands[i], spec) {
                orois.push(pts);
                obox.push(ocands[i]);
                ogt.push(oassign.gt_of(i));
            }
        }
        out.obb_positives = ogt.iter().flatten().count();
        if !orois.is_empty() {
            let feats = pool_rois(feature, &orois, spec)?;
            let fwd = self.obb.forward(p, &feats)?;
            let labels: Vec<usize> = ogt.iter().map(|g| g.map_or(0, |g| gts[g].1 + 1)).collect();
            let (lc, g_logits) = softmax_cross_entropy(&fwd.logits, &labels)?;
            out.loss_cls = lc.as_f64();
            let mut g_d = Tensor::zeros(fwd.deltas.shape());
            let n = orois.len() as f64;
            for (r, g) in ogt.iter().enumerate() {
                if let Some(g) = g {
                    let target = encode_rotated(&obox[r], &gt_boxes[*g]);
                    out.loss_reg += delta_loss(
                        &fwd.deltas,
                        &mut g_d,
                        r,
                        5 * gts[*g].1,
                        &target,
                        &cfg.obb_stds,
                        cfg.smooth_l1_beta,
                        n,
                    );
                }
            }
            let g_feats = self.obb.backward(p, &feats, &fwd, &g_logits, &g_d, grads)?;
            pool_rois_backward(&mut grad_feature, &orois, &g_feats, spec)?;
        }
        out.feature_grad = Some(grad_feature);
        Ok(out)
    }

    /// Oriented proposals from horizontal ones through the transform.
    pub fn oriented_proposals<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        feature: &Tensor<T>,
        proposals: &[HorizontalBox],
        cfg: &RcnnConfig,
    ) -> Result<Vec<OrientedBox>> {
        let (_, fh, fw) = feature_dims(feature)?;
        let mut rois = Vec::new();
        let mut boxes = Vec::new();
        for b in proposals {
            if let Ok(pts) = roi_points(b, (fh, fw), &self.spec) {
                rois.push(pts);
                boxes.push(b.clip(fw as f64 * self.spec.stride, fh as f64 * self.spec.stride));
            }
        }
        if rois.is_empty() {
            return Ok(Vec::new());
        }
        let feats = pool_rois(feature, &rois, &self.spec)?;
        let h2o = self.h2o.forward(p, &feats)?;
        Ok((0..rois.len())
            .map(|r| decode_o(&boxes[r], &row5(&h2o.deltas, r, 0, &cfg.h2o_stds)))
            .collect())
    }

    /// Scores, refines and suppresses oriented proposals.
    pub fn detect<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        feature: &Tensor<T>,
        proposals: &[HorizontalBox],
        cfg: &RcnnConfig,
    ) -> Result<Vec<Detection>> {
        let oprops = self.oriented_proposals(p, feature, proposals, cfg)?;
        let mut rois = Vec::new();
        let mut boxes = Vec::new();
        for b in &oprops {
            if let Ok(pts) = rotated_roi_points(b, &self.spec) {
                rois.push(pts);
                boxes.push(*b);
            }
        }
        if rois.is_empty() {
            return Ok(Vec::new());
        }
        let feats = pool_rois(feature, &rois, &self.spec)?;
        let fwd = self.obb.forward(p, &feats)?;
        let probs = softmax(&fwd.logits)?;
        let nc = self.obb.num_classes;
        let mut dets = Vec::new();
        for c in 0..nc {
            let mut cb = Vec::new();
            let mut cs = Vec::new();
            for r in 0..rois.len() {
                let s = probs.data()[r * (nc + 1) + c + 1].as_f64();
                if s > cfg.score_thr {
                    let d = row5(&fwd.deltas, r, 5 * c, &cfg.obb_stds);
                    cb.push(decode_rotated(&boxes[r], &d));
                    cs.push(s);
                }
            }
            for i in rotated_nms(&cb, &cs, cfg.nms_iou) {
                dets.push(Detection {
                    obb: cb[i],
                    score: cs[i],
                    class_id: c,
                });
            }
        }
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        Ok(descending_order(&scores)
            .into_iter()
            .take(cfg.max_detections)
            .map(|i| dets[i])
            .collect())
    }
}
