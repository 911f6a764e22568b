//! The assembled detector: a small strided conv backbone, a two-level
//! feature pyramid, the hybrid-anchor RPN and the oriented heads.
//!
//! ```text
//! image -> conv s2 (16) -> conv s2 (32) -> conv s2 (64) = C3 -> conv s2 (64) = C4
//! P4 = lat4(C4)                 stride 16
//! P3 = lat3(C3) + up2(P4)       stride 8, also the RoI feature map
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::geometry::{HorizontalBox, OrientedBox};
use crate::heads::{Detection, RcnnConfig, RcnnHeads};
use crate::netcore::{
    relu, relu_backward, upsample2x, upsample2x_backward, ConvLayer, ConvSpec, Init, ParamStore, Scalar,
    Tensor,
};
use crate::rpn::{rpn_forward_infer, rpn_forward_train, Proposal, RpnConfig, RpnHead};

/// Pixel normalization applied by [`image_tensor`].
pub const PIXEL_MEAN: f64 = 127.5;
pub const PIXEL_SCALE: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub backbone_channels: [usize; 4],
    pub fpn_channels: usize,
    pub num_classes: usize,
    pub rpn: RpnConfig,
    pub rcnn: RcnnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            backbone_channels: [16, 32, 64, 64],
            fpn_channels: 32,
            num_classes: 3,
            rpn: RpnConfig {
                pre_nms_top_k: 1000,
                post_nms_top_k: 500,
                ..RpnConfig::default()
            },
            rcnn: RcnnConfig::default(),
        }
    }
}

/// Pyramid strides in pixels, finest first.
pub const STRIDES: [f64; 2] = [8.0, 16.0];

/// `(1, 1, H, W)` tensor from 8-bit gray pixels.
pub fn image_tensor<T: Scalar>(pixels: &[u8], height: usize, width: usize) -> Result<Tensor<T>> {
    Tensor::new(
        &[1, 1, height, width],
        pixels.iter().map(|&p| T::of_f64((p as f64 - PIXEL_MEAN) / PIXEL_SCALE)).collect(),
    )
}

/// Losses of one image. `total` is the sum that was differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageLosses {
    pub loss_af: f64,
    pub loss_ab: f64,
    pub loss_ab_reg: f64,
    pub loss_ab_cls: f64,
    pub loss_h2o: f64,
    pub loss_rcnn_cls: f64,
    pub loss_rcnn_obb: f64,
    pub af_positives: usize,
    pub ab_positives: usize,
}

impl ImageLosses {
    pub fn loss_rpn(&self) -> f64 {
        self.loss_af + self.loss_ab
    }

    /// Regression losses of the second stage (transform plus refinement).
    pub fn loss_rcnn_reg(&self) -> f64 {
        self.loss_h2o + self.loss_rcnn_obb
    }

    pub fn total(&self) -> f64 {
        self.loss_rpn() + self.loss_rcnn_cls + self.loss_rcnn_reg()
    }

    /// Adds every field of `other` into `self`.
    pub fn accumulate(&mut self, other: &ImageLosses) {
        self.loss_af += other.loss_af;
        self.loss_ab += other.loss_ab;
        self.loss_ab_reg += other.loss_ab_reg;
        self.loss_ab_cls += other.loss_ab_cls;
        self.loss_h2o += other.loss_h2o;
        self.loss_rcnn_cls += other.loss_rcnn_cls;
        self.loss_rcnn_obb += other.loss_rcnn_obb;
        self.af_positives += other.af_positives;
        self.ab_positives += other.ab_positives;
    }
}

struct Features<T> {
    acts: Vec<Tensor<T>>,
    p3: Tensor<T>,
    p4: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Detector<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    backbone: Vec<ConvLayer>,
    lat3: ConvLayer,
    lat4: ConvLayer,
    pub rpn: RpnHead,
    pub rcnn: RcnnHeads,
}

impl<T: Scalar> Detector<T> {
    /// A freshly initialised detector; identical seeds give identical
    /// parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let s2 = ConvSpec::new(2, 1);
        let mut cin = config.in_channels;
        let mut backbone = Vec::new();
        for (i, &c) in config.backbone_channels.iter().enumerate() {
            backbone.push(ConvLayer::new(&mut params, &format!("backbone.conv{}", i + 1), cin, c, 3, s2, Init::He, &mut rng));
            cin = c;
        }
        let f = config.fpn_channels;
        let one = ConvSpec::same(1);
        let [_, _, c3, c4] = config.backbone_channels;
        let lat3 = ConvLayer::new(&mut params, "fpn.lat3", c3, f, 1, one, Init::He, &mut rng);
        let lat4 = ConvLayer::new(&mut params, "fpn.lat4", c4, f, 1, one, Init::He, &mut rng);
        let rpn = RpnHead::new(&mut params, f, &STRIDES, &mut rng);
        let rcnn = RcnnHeads::new(&mut params, f, STRIDES[0], config.num_classes, &config.rcnn, &mut rng);
        Self {
            config,
            params,
            backbone,
            lat3,
            lat4,
            rpn,
            rcnn,
        }
    }

    fn features(&self, image: &Tensor<T>) -> Result<Features<T>> {
        let (n, c, h, w) = image.dims4()?;
        if n != 1 || c != self.config.in_channels || h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return shape_err(format!(
                "detector takes one {}-channel image with sides divisible by 16, got {:?}",
                self.config.in_channels,
                image.shape()
            ));
        }
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(4);
        for (i, layer) in self.backbone.iter().enumerate() {
            let x = if i == 0 { image } else { &acts[i - 1] };
            let y = relu(&layer.forward(&self.params, x)?);
            acts.push(y);
        }
        let p4 = self.lat4.forward(&self.params, &acts[3])?;
        let mut p3 = self.lat3.forward(&self.params, &acts[2])?;
        p3.add_assign(&upsample2x(&p4)?)?;
        Ok(Features { acts, p3, p4 })
    }

    /// Forward and backward of the full loss on one image. Gradients are
    /// added into `grads`.
    pub fn train_image(
        &self,
        image: &Tensor<T>,
        gts: &[(OrientedBox, usize)],
        seed: u64,
        grads: &mut ParamStore<T>,
    ) -> Result<ImageLosses> {
        let feats = self.features(image)?;
        let size = image_size(image);
        let obbs: Vec<OrientedBox> = gts.iter().map(|g| g.0).collect();
        let levels = [feats.p3.clone(), feats.p4.clone()];
        let rpn = rpn_forward_train(&self.rpn, &self.params, grads, &levels, &obbs, size, &self.config.rpn, seed)?;
        let proposals: Vec<HorizontalBox> = rpn.proposals.iter().map(|p| p.bbox).collect();
        let rcnn = self
            .rcnn
            .forward_train(&self.params, grads, &feats.p3, &proposals, gts, &self.config.rcnn, seed)?;

        let mut g_p3 = rpn.feature_grads[0].clone();
        if let Some(g) = &rcnn.feature_grad {
            g_p3.add_assign(g)?;
        }
        let mut g_p4 = rpn.feature_grads[1].clone();
        g_p4.add_assign(&upsample2x_backward(&g_p3)?)?;
        let mut g_acts: Vec<Option<Tensor<T>>> = vec![None; 4];
        g_acts[3] = self.lat4.backward(&self.params, &feats.acts[3], &g_p4, grads, true)?;
        g_acts[2] = self.lat3.backward(&self.params, &feats.acts[2], &g_p3, grads, true)?;
        for i in (0..4).rev() {
            let g_out = g_acts[i].take().expect("gradient reached this stage");
            let g_pre = relu_backward(&feats.acts[i], &g_out)?;
            let x = if i == 0 { image } else { &feats.acts[i - 1] };
            let g_in = self.backbone[i].backward(&self.params, x, &g_pre, grads, i > 0)?;
            if i > 0 {
                let g_in = g_in.expect("input gradient requested");
                match &mut g_acts[i - 1] {
                    Some(acc) => acc.add_assign(&g_in)?,
                    slot => *slot = Some(g_in),
                }
            }
        }

        Ok(ImageLosses {
            loss_af: rpn.loss_af,
            loss_ab: rpn.loss_ab,
            loss_ab_reg: rpn.loss_ab_reg,
            loss_ab_cls: rpn.loss_ab_cls,
            loss_h2o: rcnn.loss_h2o,
            loss_rcnn_cls: rcnn.loss_cls,
            loss_rcnn_obb: rcnn.loss_reg,
            af_positives: rpn.diagnostics.af_positives,
            ab_positives: rpn.diagnostics.ab_positives,
        })
    }

    /// Horizontal proposals of one image.
    pub fn proposals(&self, image: &Tensor<T>) -> Result<Vec<Proposal>> {
        let feats = self.features(image)?;
        rpn_forward_infer(&self.rpn, &self.params, &[feats.p3, feats.p4], image_size(image), &self.config.rpn)
    }

    /// Proposals and final detections of one image.
    pub fn infer(&self, image: &Tensor<T>) -> Result<(Vec<Proposal>, Vec<Detection>)> {
        let feats = self.features(image)?;
        let props = rpn_forward_infer(
            &self.rpn,
            &self.params,
            &[feats.p3.clone(), feats.p4],
            image_size(image),
            &self.config.rpn,
        )?;
        let boxes: Vec<HorizontalBox> = props.iter().map(|p| p.bbox).collect();
        let dets = self.rcnn.detect(&self.params, &feats.p3, &boxes, &self.config.rcnn)?;
        Ok((props, dets))
    }

    pub fn detect(&self, image: &Tensor<T>) -> Result<Vec<Detection>> {
        Ok(self.infer(image)?.1)
    }

    /// Oriented proposals from the transform stage.
    pub fn oriented_proposals(&self, image: &Tensor<T>) -> Result<Vec<OrientedBox>> {
        let feats = self.features(image)?;
        let props = rpn_forward_infer(
            &self.rpn,
            &self.params,
            &[feats.p3.clone(), feats.p4],
            image_size(image),
            &self.config.rpn,
        )?;
        let boxes: Vec<HorizontalBox> = props.iter().map(|p| p.bbox).collect();
        self.rcnn.oriented_proposals(&self.params, &feats.p3, &boxes, &self.config.rcnn)
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            lat3: self.lat3,
            lat4: self.lat4,
            rpn: self.rpn.clone(),
            rcnn: self.rcnn.clone(),
        }
    }
}

fn image_size<T: Scalar>(image: &Tensor<T>) -> (f64, f64) {
    let s = image.shape();
    (s[3] as f64, s[2] as f64)
}
