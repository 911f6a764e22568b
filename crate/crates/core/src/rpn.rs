//! Hybrid-anchor region proposal network.
//!
//! Per image:
//!
//! 1. Anchor-free stage: one preset anchor per location is labelled by the
//!    center-region rule against rectangularized ground truths. A shared 3x3
//!    conv then a 1x1 regression predict a [`Delta4`]; decoding gives the
//!    candidates. Only an IoU loss is applied here.
//! 2. Anchor-based stage: candidates are labelled by max-IoU. An offset field
//!    built from each candidate's extent and, during training, its assigned
//!    ground-truth angle drives an orientation-aware conv over the
//!    anchor-free features, followed by 1x1 regression and objectness.
//! 3. Refinement: score-sorted top-k, clipping, horizontal NMS, top-k.
//!
//! Losses are means over sampled anchors; the regression terms are
//! `w * -ln(IoU)` on decoded boxes.

use serde::{Deserialize, Serialize};

use crate::anchors::{generate_anchors, AnchorGrid, FeatureLevelSpec};
use crate::assign::{assign_maxiou, assign_ratio, mix_seed, sample_balanced, AssignResult, SampleResult};
use crate::coders::{decode_h, max_log_ratio, Delta4};
use crate::error::{shape_err, Result};
use crate::geometry::{descending_order, horizontal_nms, HorizontalBox, OrientedBox};
use crate::netcore::{
    bce_with_logits, conv2d, conv2d_backward, relu, relu_backward, sigmoid, ConvLayer, ConvSpec,
    Init, ParamStore, Scalar, Tensor,
};
use crate::oaware::{oaconv_backward, oaconv_forward, offset_field, OffsetField};

/// Kernel size of the bridge convolution.
pub const BRIDGE_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_af: f64,
    pub w_ab: f64,
    pub iou_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_af: 7.0,
            w_ab: 7.0,
            iou_eps: 1e-6,
        }
    }
}

/// Convolution bridging the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    OrientationAware,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpnConfig {
    pub anchor_scale: f64,
    pub anchor_ratio: f64,
    pub ratio_pos: f64,
    pub ratio_ignore: f64,
    pub iou_pos: f64,
    pub iou_neg: f64,
    pub num_pos: usize,
    pub num_neg: usize,
    pub pre_nms_top_k: usize,
    pub post_nms_top_k: usize,
    pub nms_iou: f64,
    /// Proposals narrower or shorter than this many pixels are dropped.
    pub min_size: f64,
    pub loss: LossConfig,
    pub use_anchor_free: bool,
    pub use_anchor_based: bool,
    pub conv_kind: ConvKind,
}

impl Default for RpnConfig {
    fn default() -> Self {
        Self {
            anchor_scale: 4.0,
            anchor_ratio: 1.0,
            ratio_pos: 0.3,
            ratio_ignore: 0.1,
            iou_pos: 0.7,
            iou_neg: 0.3,
            num_pos: 256,
            num_neg: 256,
            pre_nms_top_k: 1000,
            post_nms_top_k: 500,
            nms_iou: 0.7,
            min_size: 1.0,
            loss: LossConfig::default(),
            use_anchor_free: true,
            use_anchor_based: true,
            conv_kind: ConvKind::OrientationAware,
        }
    }
}

impl RpnConfig {
    /// The orientation-aware bridge needs anchor-free candidates to shape
    /// its kernel; without them the bridge is a standard convolution.
    pub fn uses_oaware(&self) -> bool {
        self.use_anchor_free && self.use_anchor_based && self.conv_kind == ConvKind::OrientationAware
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: HorizontalBox,
    pub objectness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RpnDiagnostics {
    /// Anchors labelled positive by the center-region rule.
    pub af_positives: usize,
    /// Candidates labelled positive by max-IoU.
    pub ab_positives: usize,
}

#[derive(Debug, Clone)]
pub struct RpnTrainOutput<T> {
    pub loss_af: f64,
    /// Regression plus objectness.
    pub loss_ab: f64,
    pub loss_ab_reg: f64,
    pub loss_ab_cls: f64,
    pub proposals: Vec<Proposal>,
    pub diagnostics: RpnDiagnostics,
    /// Gradient of the RPN loss with respect to each input level.
    pub feature_grads: Vec<Tensor<T>>,
}

impl<T> RpnTrainOutput<T> {
    pub fn loss_rpn(&self) -> f64 {
        self.loss_af + self.loss_ab
    }
}

/// Value and gradient of a weighted IoU loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouLoss {
    pub value: f64,
    /// Derivative with respect to the predicted `(cx, cy, w, h)`.
    pub grad: [f64; 4],
}

/// `weight * -ln(max(IoU(pred, target), eps))` with its gradient through the
/// axis-aligned IoU. The gradient is zero where the clamp is active.
pub fn iou_loss(pred: &HorizontalBox, target: &HorizontalBox, weight: f64, eps: f64) -> IouLoss {
    let clamped = IouLoss {
        value: -weight * eps.ln(),
        grad: [0.0; 4],
    };
    let ix1 = pred.x1().max(target.x1());
    let ix2 = pred.x2().min(target.x2());
    let iy1 = pred.y1().max(target.y1());
    let iy2 = pred.y2().min(target.y2());
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    if iw <= 0.0 || ih <= 0.0 {
        return clamped;
    }
    let inter = iw * ih;
    let union = pred.area() + target.area() - inter;
    let iou = inter / union;
    if iou < eps {
        return clamped;
    }
    // ln IoU = ln I - ln(Ap + At - I)
    let dl_di = -weight * (1.0 / inter + 1.0 / union);
    let dl_dap = weight / union;
    let dix1 = if pred.x1() > target.x1() { -ih } else { 0.0 };
    let dix2 = if pred.x2() < target.x2() { ih } else { 0.0 };
    let diy1 = if pred.y1() > target.y1() { -iw } else { 0.0 };
    let diy2 = if pred.y2() < target.y2() { iw } else { 0.0 };
    IouLoss {
        value: -weight * iou.ln(),
        grad: [
            dl_di * (dix1 + dix2),
            dl_di * (diy1 + diy2),
            dl_di * 0.5 * (dix2 - dix1) + dl_dap * pred.h,
            dl_di * 0.5 * (diy2 - diy1) + dl_dap * pred.w,
        ],
    }
}

/// IoU loss of `decode_h(anchor, delta)` against `target`, with the
/// gradient taken to the delta.
pub fn delta_iou_loss(
    anchor: &HorizontalBox,
    delta: &Delta4,
    target: &HorizontalBox,
    weight: f64,
    eps: f64,
) -> IouLoss {
    let pred = decode_h(anchor, delta);
    let l = iou_loss(&pred, target, weight, eps);
    let clamp = max_log_ratio();
    let dw = if delta.dw.abs() < clamp { pred.w } else { 0.0 };
    let dh = if delta.dh.abs() < clamp { pred.h } else { 0.0 };
    IouLoss {
        value: l.value,
        grad: [l.grad[0] * anchor.w, l.grad[1] * anchor.h, l.grad[2] * dw, l.grad[3] * dh],
    }
}

/// Mean IoU loss over the sampled positives. Returns the loss and a gradient
/// per anchor (zero outside the sample).
pub fn box_regression_loss(
    anchors: &[HorizontalBox],
    deltas: &[Delta4],
    rect_gts: &[HorizontalBox],
    assign: &AssignResult,
    sample: &SampleResult,
    weight: f64,
    eps: f64,
) -> (f64, Vec<[f64; 4]>) {
    let mut grads = vec![[0.0; 4]; anchors.len()];
    let n = sample.pos_indices.len();
    if n == 0 {
        return (0.0, grads);
    }
    let mut total = 0.0;
    for &i in &sample.pos_indices {
        let g = assign.gt_of(i).expect("sampled positive has a ground truth");
        let l = delta_iou_loss(&anchors[i], &deltas[i], &rect_gts[g], weight, eps);
        total += l.value;
        grads[i] = l.grad.map(|v| v / n as f64);
    }
    (total / n as f64, grads)
}

/// Parameter handles of the proposal heads. Weights are shared across
/// pyramid levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnHead {
    pub strides: Vec<f64>,
    pub af_conv: ConvLayer,
    pub af_reg: ConvLayer,
    pub ab_conv: ConvLayer,
    pub ab_reg: ConvLayer,
    pub ab_cls: ConvLayer,
}

impl RpnHead {
    pub fn new<T: Scalar, R: rand::Rng>(
        params: &mut ParamStore<T>,
        channels: usize,
        strides: &[f64],
        rng: &mut R,
    ) -> Self {
        let k = BRIDGE_KERNEL;
        let same = ConvSpec::same(k);
        let one = ConvSpec::same(1);
        Self {
            strides: strides.to_vec(),
            af_conv: ConvLayer::new(params, "rpn.af_conv", channels, channels, k, same, Init::Normal(0.01), rng),
            af_reg: ConvLayer::new(params, "rpn.af_reg", channels, 4, 1, one, Init::Normal(0.01), rng),
            ab_conv: ConvLayer::new(params, "rpn.ab_conv", channels, channels, k, same, Init::Normal(0.01), rng),
            ab_reg: ConvLayer::new(params, "rpn.ab_reg", channels, 4, 1, one, Init::Normal(0.01), rng),
            ab_cls: ConvLayer::new(params, "rpn.ab_cls", channels, 1, 1, one, Init::Normal(0.01), rng),
        }
    }

    fn levels<T: Scalar>(&self, features: &[Tensor<T>]) -> Result<Vec<FeatureLevelSpec>> {
        if features.len() != self.strides.len() {
            return shape_err(format!(
                "{} feature levels for {} strides",
                features.len(),
                self.strides.len()
            ));
        }
        features
            .iter()
            .zip(&self.strides)
            .map(|(f, &s)| {
                let (_, _, h, w) = f.dims4()?;
                Ok(FeatureLevelSpec::new(s, h, w))
            })
            .collect()
    }
}

fn deltas_of<T: Scalar>(reg: &Tensor<T>) -> Vec<Delta4> {
    let plane = reg.shape()[2] * reg.shape()[3];
    let d = reg.data();
    (0..plane)
        .map(|i| Delta4 {
            dx: d[i].as_f64(),
            dy: d[plane + i].as_f64(),
            dw: d[2 * plane + i].as_f64(),
            dh: d[3 * plane + i].as_f64(),
        })
        .collect()
}

fn delta_grad_map<T: Scalar>(grads: &[[f64; 4]], h: usize, w: usize) -> Tensor<T> {
    let plane = h * w;
    let mut t = Tensor::zeros(&[1, 4, h, w]);
    let d = t.data_mut();
    for (i, g) in grads.iter().enumerate() {
        for c in 0..4 {
            d[c * plane + i] = T::of_f64(g[c]);
        }
    }
    t
}

/// Intermediate values of one level kept for the backward pass.
struct LevelState<T> {
    level: FeatureLevelSpec,
    af_act: Option<Tensor<T>>,
    af_reg: Option<Tensor<T>>,
    offsets: Option<OffsetField>,
    ab_act: Option<Tensor<T>>,
    ab_logits: Vec<f64>,
    ab_deltas: Vec<Delta4>,
}

struct Forward<T> {
    anchors: AnchorGrid,
    /// Anchor-free candidates (the preset anchors when that stage is off).
    candidates: Vec<HorizontalBox>,
    af_deltas: Vec<Delta4>,
    states: Vec<LevelState<T>>,
}

fn anchor_free_stage<T: Scalar>(
    head: &RpnHead,
    params: &ParamStore<T>,
    features: &[Tensor<T>],
    cfg: &RpnConfig,
) -> Result<Forward<T>> {
    let levels = head.levels(features)?;
    let anchors = generate_anchors(&levels, cfg.anchor_scale, cfg.anchor_ratio);
    let mut candidates = Vec::with_capacity(anchors.len());
    let mut af_deltas = Vec::with_capacity(anchors.len());
    let mut states = Vec::with_capacity(levels.len());
    for (l, (x, lvl)) in features.iter().zip(&levels).enumerate() {
        let mut st = LevelState {
            level: *lvl,
            af_act: None,
            af_reg: None,
            offsets: None,
            ab_act: None,
            ab_logits: Vec::new(),
            ab_deltas: Vec::new(),
        };
        if cfg.use_anchor_free {
            let act = relu(&head.af_conv.forward(params, x)?);
            let reg = head.af_reg.forward(params, &act)?;
            let deltas = deltas_of(&reg);
            for (a, d) in anchors.level(l).iter().zip(&deltas) {
                candidates.push(decode_h(a, d));
            }
            af_deltas.extend(deltas);
            st.af_act = Some(act);
            st.af_reg = Some(reg);
        } else {
            candidates.extend_from_slice(anchors.level(l));
        }
        states.push(st);
    }
    Ok(Forward {
        anchors,
        candidates,
        af_deltas,
        states,
    })
}

/// Runs the bridge conv and the anchor-based heads for every level with the
/// given per-candidate angles.
fn anchor_based_stage<T: Scalar>(
    head: &RpnHead,
    params: &ParamStore<T>,
    features: &[Tensor<T>],
    cfg: &RpnConfig,
    fwd: &mut Forward<T>,
    thetas: &[f64],
) -> Result<()> {
    for (l, (x, st)) in features.iter().zip(fwd.states.iter_mut()).enumerate() {
        let range = fwd.anchors.level_range(l);
        let input = st.af_act.as_ref().unwrap_or(x);
        let w = params.get(head.ab_conv.weight);
        let b = params.get(head.ab_conv.bias).data();
        let pre = if cfg.uses_oaware() {
            let field = offset_field(
                &fwd.candidates[range.clone()],
                &thetas[range.clone()],
                &st.level,
                BRIDGE_KERNEL,
            )?;
            let y = oaconv_forward(input, w, b, &field)?;
            st.offsets = Some(field);
            y
        } else {
            conv2d(input, w, b, head.ab_conv.spec)?
        };
        let act = relu(&pre);
        let reg = head.ab_reg.forward(params, &act)?;
        let cls = head.ab_cls.forward(params, &act)?;
        st.ab_deltas = deltas_of(&reg);
        st.ab_logits = cls.data().iter().map(|v| v.as_f64()).collect();
        st.ab_act = Some(act);
    }
    Ok(())
}

/// Score-sorted top-k, clipping, small-box removal, NMS, top-k.
pub fn refine_proposals(
    boxes: &[HorizontalBox],
    scores: &[f64],
    image_size: (f64, f64),
    cfg: &RpnConfig,
) -> Vec<Proposal> {
    let order = descending_order(scores);
    let mut kept_boxes = Vec::new();
    let mut kept_scores = Vec::new();
    for &i in order.iter() {
        if kept_boxes.len() >= cfg.pre_nms_top_k {
            break;
        }
        let b = boxes[i].clip(image_size.0, image_size.1);
        if b.w >= cfg.min_size && b.h >= cfg.min_size && b.cx.is_finite() && b.cy.is_finite() {
            kept_boxes.push(b);
            kept_scores.push(scores[i]);
        }
    }
    horizontal_nms(&kept_boxes, &kept_scores, cfg.nms_iou)
        .into_iter()
        .take(cfg.post_nms_top_k)
        .map(|i| Proposal {
            bbox: kept_boxes[i],
            objectness: kept_scores[i],
        })
        .collect()
}

fn final_boxes<T>(fwd: &Forward<T>, cfg: &RpnConfig) -> (Vec<HorizontalBox>, Vec<f64>) {
    if !cfg.use_anchor_based {
        // Without the anchor-based head there is no objectness; every
        // candidate gets the same score and order falls back to index.
        return (fwd.candidates.clone(), vec![1.0; fwd.candidates.len()]);
    }
    let mut boxes = Vec::with_capacity(fwd.candidates.len());
    let mut scores = Vec::with_capacity(fwd.candidates.len());
    let mut k = 0;
    for st in &fwd.states {
        for (d, &z) in st.ab_deltas.iter().zip(&st.ab_logits) {
            boxes.push(decode_h(&fwd.candidates[k], d));
            scores.push(sigmoid(z));
            k += 1;
        }
    }
    (boxes, scores)
}

/// Inference: angles are zero in the offset field; no losses.
pub fn rpn_forward_infer<T: Scalar>(
    head: &RpnHead,
    params: &ParamStore<T>,
    features: &[Tensor<T>],
    image_size: (f64, f64),
    cfg: &RpnConfig,
) -> Result<Vec<Proposal>> {
    let mut fwd = anchor_free_stage(head, params, features, cfg)?;
    if cfg.use_anchor_based {
        let thetas = vec![0.0; fwd.candidates.len()];
        anchor_based_stage(head, params, features, cfg, &mut fwd, &thetas)?;
    }
    let (boxes, scores) = final_boxes(&fwd, cfg);
    Ok(refine_proposals(&boxes, &scores, image_size, cfg))
}

/// Training forward and backward for one image. Parameter gradients are
/// added into `grads`; feature gradients are returned.
#[allow(clippy::too_many_arguments)]
pub fn rpn_forward_train<T: Scalar>(
    head: &RpnHead,
    params: &ParamStore<T>,
    grads: &mut ParamStore<T>,
    features: &[Tensor<T>],
    gts: &[OrientedBox],
    image_size: (f64, f64),
    cfg: &RpnConfig,
    seed: u64,
) -> Result<RpnTrainOutput<T>> {
    let rect_gts: Vec<HorizontalBox> = gts.iter().map(OrientedBox::rectangularize).collect();
    let mut fwd = anchor_free_stage(head, params, features, cfg)?;
    let mut diagnostics = RpnDiagnostics::default();

    let mut loss_af = 0.0;
    let mut af_grads = Vec::new();
    if cfg.use_anchor_free {
        let assign = assign_ratio(fwd.anchors.boxes(), &rect_gts, cfg.ratio_pos, cfg.ratio_ignore);
        diagnostics.af_positives = assign.num_positive();
        let sample = sample_balanced(&assign, cfg.num_pos, cfg.num_neg, mix_seed(seed, 1));
        let (l, g) = box_regression_loss(
            fwd.anchors.boxes(),
            &fwd.af_deltas,
            &rect_gts,
            &assign,
            &sample,
            cfg.loss.w_af,
            cfg.loss.iou_eps,
        );
        loss_af = l;
        af_grads = g;
    }

    let (mut loss_ab_reg, mut loss_ab_cls) = (0.0, 0.0);
    let mut ab_reg_grads = Vec::new();
    let mut ab_cls_grads = Vec::new();
    if cfg.use_anchor_based {
        let assign = assign_maxiou(&fwd.candidates, &rect_gts, cfg.iou_pos, cfg.iou_neg);
        diagnostics.ab_positives = assign.num_positive();
        let thetas: Vec<f64> = (0..fwd.candidates.len())
            .map(|i| assign.gt_of(i).map_or(0.0, |g| gts[g].theta))
            .collect();
        anchor_based_stage(head, params, features, cfg, &mut fwd, &thetas)?;
        let sample = sample_balanced(&assign, cfg.num_pos, cfg.num_neg, mix_seed(seed, 2));
        let ab_deltas: Vec<Delta4> = fwd.states.iter().flat_map(|s| s.ab_deltas.iter().copied()).collect();
        let (l, g) = box_regression_loss(
            &fwd.candidates,
            &ab_deltas,
            &rect_gts,
            &assign,
            &sample,
            cfg.loss.w_ab,
            cfg.loss.iou_eps,
        );
        loss_ab_reg = l;
        ab_reg_grads = g;
        let logits: Vec<f64> = fwd.states.iter().flat_map(|s| s.ab_logits.iter().copied()).collect();
        let mut picked: Vec<(usize, f64)> = sample
            .pos_indices
            .iter()
            .map(|&i| (i, 1.0))
            .chain(sample.neg_indices.iter().map(|&i| (i, 0.0)))
            .collect();
        picked.sort_unstable_by_key(|p| p.0);
        let z: Vec<f64> = picked.iter().map(|&(i, _)| logits[i]).collect();
        let y: Vec<f64> = picked.iter().map(|&(_, y)| y).collect();
        let (l, gz) = bce_with_logits(&z, &y)?;
        loss_ab_cls = l;
        ab_cls_grads = vec![0.0; logits.len()];
        for (&(i, _), g) in picked.iter().zip(gz) {
            ab_cls_grads[i] = g;
        }
    }

    let (boxes, scores) = final_boxes(&fwd, cfg);
    let proposals = refine_proposals(&boxes, &scores, image_size, cfg);

    let mut feature_grads = Vec::with_capacity(features.len());
    for (l, (x, st)) in features.iter().zip(&fwd.states).enumerate() {
        let range = fwd.anchors.level_range(l);
        let (h, w) = (st.level.height, st.level.width);
        let mut gx = Tensor::zeros(x.shape());
        let mut g_af_act: Option<Tensor<T>> = None;
        if cfg.use_anchor_based {
            let act = st.ab_act.as_ref().expect("anchor-based forward ran");
            let g_reg = delta_grad_map::<T>(&ab_reg_grads[range.clone()], h, w);
            let mut g_cls = Tensor::zeros(&[1, 1, h, w]);
            for (d, &g) in g_cls.data_mut().iter_mut().zip(&ab_cls_grads[range.clone()]) {
                *d = T::of_f64(g);
            }
            let mut g_act = head
                .ab_reg
                .backward(params, act, &g_reg, grads, true)?
                .expect("input gradient requested");
            g_act.add_assign(
                &head
                    .ab_cls
                    .backward(params, act, &g_cls, grads, true)?
                    .expect("input gradient requested"),
            )?;
            let g_pre = relu_backward(act, &g_act)?;
            let input = st.af_act.as_ref().unwrap_or(x);
            let w_ab = params.get(head.ab_conv.weight);
            let cg = match &st.offsets {
                Some(field) => oaconv_backward(input, w_ab, field, &g_pre)?,
                None => conv2d_backward(input, w_ab, head.ab_conv.spec, &g_pre, true)?,
            };
            grads.accumulate(head.ab_conv.weight, cg.grad_w.data());
            grads.accumulate(head.ab_conv.bias, &cg.grad_b);
            let g_in = cg.grad_x.expect("input gradient requested");
            if st.af_act.is_some() {
                g_af_act = Some(g_in);
            } else {
                gx.add_assign(&g_in)?;
            }
        }
        if cfg.use_anchor_free {
            let act = st.af_act.as_ref().expect("anchor-free forward ran");
            let reg_in = st.af_reg.as_ref().expect("anchor-free forward ran");
            debug_assert_eq!(reg_in.shape(), [1, 4, h, w]);
            let g_reg = delta_grad_map::<T>(&af_grads[range.clone()], h, w);
            let mut g_act = head
                .af_reg
                .backward(params, act, &g_reg, grads, true)?
                .expect("input gradient requested");
            if let Some(extra) = &g_af_act {
                g_act.add_assign(extra)?;
            }
            let g_pre = relu_backward(act, &g_act)?;
            let g_in = head
                .af_conv
                .backward(params, x, &g_pre, grads, true)?
                .expect("input gradient requested");
            gx.add_assign(&g_in)?;
        }
        feature_grads.push(gx);
    }

    Ok(RpnTrainOutput {
        loss_af,
        loss_ab: loss_ab_reg + loss_ab_cls,
        loss_ab_reg,
        loss_ab_cls,
        proposals,
        diagnostics,
        feature_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_closed_forms() {
        let t = HorizontalBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou_loss(&t, &t, 7.0, 1e-6).value, 0.0);
        let far = HorizontalBox::new(100.0, 0.0, 10.0, 10.0);
        let l = iou_loss(&far, &t, 7.0, 1e-6).value;
        assert!((l - 7.0 * 13.815_510_557_964_274).abs() < 1e-9);
        // a box of width w inside t has IoU w / 10
        let w = 10.0 * (-1.0f64).exp();
        let inner = HorizontalBox::new(0.0, 0.0, w, 10.0);
        assert!((iou_loss(&inner, &t, 7.0, 1e-6).value - 7.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences() {
        let t = HorizontalBox::new(1.0, -2.0, 12.0, 7.0);
        let p = [2.3, -1.1, 10.4, 8.9];
        let f = |v: [f64; 4]| iou_loss(&HorizontalBox::new(v[0], v[1], v[2], v[3]), &t, 7.0, 1e-6);
        let g = f(p).grad;
        for k in 0..4 {
            let mut a = p;
            let mut b = p;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let num = (f(a).value - f(b).value) / 2e-6;
            assert!((num - g[k]).abs() <= 1e-6 * num.abs().max(1.0), "{k}: {num} vs {}", g[k]);
        }
    }

    #[test]
    fn infer_runs_and_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::<f64>::new();
        let head = RpnHead::new(&mut params, 4, &[8.0, 16.0], &mut rng);
        let f = vec![
            Tensor::from_fn(&[1, 4, 4, 4], |i| (i as f64 * 0.37).sin()),
            Tensor::from_fn(&[1, 4, 2, 2], |i| (i as f64 * 0.11).cos()),
        ];
        let cfg = RpnConfig::default();
        let a = rpn_forward_infer(&head, &params, &f, (32.0, 32.0), &cfg).unwrap();
        let b = rpn_forward_infer(&head, &params, &f, (32.0, 32.0), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for p in &a {
            assert!(p.bbox.x1() >= 0.0 && p.bbox.x2() <= 32.0 + 1e-9);
        }
        assert!(a.windows(2).all(|w| w[0].objectness >= w[1].objectness));
    }
}
