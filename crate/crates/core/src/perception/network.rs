//! Shared-backbone detector with an RPN-style objectness head and a
//! norm-aware embedding head.
//!
//! ```text
//! image -> conv(s2) -> conv(s2) -> conv(dilated) = feature map (stride 4)
//! feature map -> 3x3 conv -> per-anchor objectness logit + 4 box deltas
//! feature map -> RoIAlign(box) -> fc -> relu -> fc = r
//!     identity feature = r / |r|,  detection score = sigmoid(g * (|r| - mu) / sigma + b)
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::anchors::AnchorGrid;
use super::layers::{self, ConvGeometry, RoiPlan};
use crate::error::{LpsError, Result};
use crate::geometry::{BoundingBox, MIN_BOX_AREA};
use crate::synthgen::Image;

pub const FEATURE_STRIDE: usize = 4;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    /// Output channels of the three backbone convolutions.
    pub channels: [usize; 3],
    pub conv3_dilation: usize,
    pub anchor_heights: Vec<f64>,
    pub anchor_aspect: f64,
    /// RoIAlign output bins (rows, cols).
    pub roi_grid: (usize, usize),
    pub roi_samples: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub pre_nms_top_k: usize,
    pub train_proposals: usize,
    pub test_proposals: usize,
    pub proposal_nms_iou: f64,
    pub min_proposal_size: f64,
    pub fg_iou_threshold: f64,
    /// Momentum of the running norm statistics.
    pub score_momentum: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            image_channels: 3,
            channels: [8, 16, 24],
            conv3_dilation: 2,
            anchor_heights: vec![16.0, 24.0, 36.0],
            anchor_aspect: 0.45,
            roi_grid: (4, 2),
            roi_samples: 2,
            hidden_dim: 64,
            embed_dim: 32,
            pre_nms_top_k: 150,
            train_proposals: 24,
            test_proposals: 16,
            proposal_nms_iou: 0.7,
            min_proposal_size: 3.0,
            fg_iou_threshold: 0.5,
            score_momentum: 0.1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LpsError::InvalidConfig(m.to_string()));
        if self.image_height < 16 || self.image_width < 16 {
            return bad("network input must be at least 16x16");
        }
        if self.channels.iter().any(|&c| c == 0) || self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.anchor_heights.is_empty() || self.anchor_heights.iter().any(|&h| h <= 0.0) {
            return bad("anchor heights must be positive and non-empty");
        }
        if self.roi_grid.0 == 0 || self.roi_grid.1 == 0 || self.roi_samples == 0 {
            return bad("roi grid must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.fg_iou_threshold) {
            return bad("fg_iou_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn conv1(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.image_channels,
            out_channels: self.channels[0],
            kernel: 3,
            stride: 2,
            pad: 1,
            dilation: 1,
        }
    }

    pub fn conv2(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.channels[0],
            out_channels: self.channels[1],
            kernel: 3,
            stride: 2,
            pad: 1,
            dilation: 1,
        }
    }

    pub fn conv3(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.channels[1],
            out_channels: self.channels[2],
            kernel: 3,
            stride: 1,
            pad: self.conv3_dilation,
            dilation: self.conv3_dilation,
        }
    }

    pub fn rpn(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.channels[2],
            out_channels: 5 * self.anchor_heights.len(),
            kernel: 3,
            stride: 1,
            pad: 1,
            dilation: 1,
        }
    }

    pub fn sizes(&self) -> [(usize, usize); 3] {
        let s1 = self.conv1().output_size(self.image_height, self.image_width);
        let s2 = self.conv2().output_size(s1.0, s1.1);
        let s3 = self.conv3().output_size(s2.0, s2.1);
        [s1, s2, s3]
    }

    pub fn feature_size(&self) -> (usize, usize) {
        self.sizes()[2]
    }

    pub fn pooled_dim(&self) -> usize {
        self.channels[2] * self.roi_grid.0 * self.roi_grid.1
    }

    pub fn anchor_grid(&self) -> AnchorGrid {
        let (fh, fw) = self.feature_size();
        AnchorGrid::new(fh, fw, FEATURE_STRIDE as f64, &self.anchor_heights, self.anchor_aspect)
    }
}

/// Trainable parameters, one flat buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub conv3_w: Vec<f64>,
    pub conv3_b: Vec<f64>,
    pub rpn_w: Vec<f64>,
    pub rpn_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
    pub score_gamma: Vec<f64>,
    pub score_beta: Vec<f64>,
}

impl Params {
    /// Names and shapes, in checkpoint order.
    pub fn shapes(cfg: &NetConfig) -> Vec<(&'static str, Vec<usize>)> {
        let (c1, c2, c3) = (cfg.conv1(), cfg.conv2(), cfg.conv3());
        let rpn = cfg.rpn();
        let conv = |g: ConvGeometry| vec![g.out_channels, g.in_channels, g.kernel, g.kernel];
        vec![
            ("conv1_w", conv(c1)),
            ("conv1_b", vec![c1.out_channels]),
            ("conv2_w", conv(c2)),
            ("conv2_b", vec![c2.out_channels]),
            ("conv3_w", conv(c3)),
            ("conv3_b", vec![c3.out_channels]),
            ("rpn_w", conv(rpn)),
            ("rpn_b", vec![rpn.out_channels]),
            ("fc1_w", vec![cfg.hidden_dim, cfg.pooled_dim()]),
            ("fc1_b", vec![cfg.hidden_dim]),
            ("fc2_w", vec![cfg.embed_dim, cfg.hidden_dim]),
            ("fc2_b", vec![cfg.embed_dim]),
            ("score_gamma", vec![1]),
            ("score_beta", vec![1]),
        ]
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        let mut bufs = Self::shapes(cfg)
            .into_iter()
            .map(|(_, s)| vec![0.0; s.iter().product()]);
        let mut next = || bufs.next().expect("shape list matches fields");
        Self {
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            conv3_w: next(),
            conv3_b: next(),
            rpn_w: next(),
            rpn_b: next(),
            fc1_w: next(),
            fc1_b: next(),
            fc2_w: next(),
            fc2_b: next(),
            score_gamma: next(),
            score_beta: next(),
        }
    }

    /// He-normal convolutions, small RPN weights, unit score scale.
    pub fn init(cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg);
        let mut fill = |buf: &mut Vec<f64>, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in buf.iter_mut() {
                *v = dist.sample(rng);
            }
        };
        let fan = |g: ConvGeometry| (g.in_channels * g.kernel * g.kernel) as f64;
        fill(&mut p.conv1_w, (2.0 / fan(cfg.conv1())).sqrt());
        fill(&mut p.conv2_w, (2.0 / fan(cfg.conv2())).sqrt());
        fill(&mut p.conv3_w, (2.0 / fan(cfg.conv3())).sqrt());
        fill(&mut p.rpn_w, 0.01);
        fill(&mut p.fc1_w, (2.0 / cfg.pooled_dim() as f64).sqrt());
        fill(&mut p.fc2_w, (1.0 / cfg.hidden_dim as f64).sqrt());
        p.score_gamma[0] = 1.0;
        p
    }

    pub fn named(&self) -> [(&'static str, &Vec<f64>); 14] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("conv3_w", &self.conv3_w),
            ("conv3_b", &self.conv3_b),
            ("rpn_w", &self.rpn_w),
            ("rpn_b", &self.rpn_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
            ("score_gamma", &self.score_gamma),
            ("score_beta", &self.score_beta),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 14] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("conv3_w", &mut self.conv3_w),
            ("conv3_b", &mut self.conv3_b),
            ("rpn_w", &mut self.rpn_w),
            ("rpn_b", &mut self.rpn_b),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
            ("score_gamma", &mut self.score_gamma),
            ("score_beta", &mut self.score_beta),
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, v)| v.len()).sum()
    }

    /// FNV-1a over the IEEE bit patterns of every scalar.
    pub fn checksum(&self) -> u64 {
        checksum_f64(self.named().iter().flat_map(|(_, v)| v.iter().copied()))
    }

    pub fn fill(&mut self, value: f64) {
        for (_, v) in self.named_mut() {
            v.fill(value);
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += alpha * y;
            }
        }
    }
}

pub fn checksum_f64(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Running mean/variance of embedding norms used to standardize scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub var: f64,
}

impl Default for ScoreStats {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0 }
    }
}

impl ScoreStats {
    pub const EPS: f64 = 1e-5;

    pub fn from_norms(norms: &[f64]) -> Option<Self> {
        if norms.len() < 2 {
            return None;
        }
        let n = norms.len() as f64;
        let mean = norms.iter().sum::<f64>() / n;
        let var = norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, var })
    }

    pub fn std(&self) -> f64 {
        (self.var + Self::EPS).sqrt()
    }

    /// Norm gradients from score-logit gradients `dlogits` when these
    /// statistics are constants.
    pub fn detached_backward(&self, gamma: f64, dlogits: &[f64]) -> Vec<f64> {
        let sd = self.std();
        dlogits.iter().map(|d| d * gamma / sd).collect()
    }

    /// Norm gradients when these statistics were computed from `norms`
    /// themselves, so every norm also moves the batch mean and variance.
    pub fn batch_backward(&self, norms: &[f64], gamma: f64, dlogits: &[f64]) -> Vec<f64> {
        let n = norms.len() as f64;
        let sd = self.std();
        let zhat: Vec<f64> = norms.iter().map(|x| (x - self.mean) / sd).collect();
        let dz: Vec<f64> = dlogits.iter().map(|d| d * gamma).collect();
        let mean_dz = dz.iter().sum::<f64>() / n;
        let mean_dz_z = dz.iter().zip(&zhat).map(|(a, b)| a * b).sum::<f64>() / n;
        dz.iter().zip(&zhat).map(|(d, z)| (d - mean_dz - z * mean_dz_z) / sd).collect()
    }

    pub fn blend(&mut self, batch: &ScoreStats, momentum: f64) {
        self.mean = (1.0 - momentum) * self.mean + momentum * batch.mean;
        self.var = (1.0 - momentum) * self.var + momentum * batch.var;
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetConfig,
    pub params: Params,
    pub score_stats: ScoreStats,
    anchors: AnchorGrid,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.score_stats == other.score_stats
    }
}

/// Cached activations of one image through backbone and RPN.
#[derive(Debug, Clone)]
pub struct BackbonePass {
    cols1: Vec<f64>,
    act1: Vec<f64>,
    cols2: Vec<f64>,
    act2: Vec<f64>,
    cols3: Vec<f64>,
    /// Post-activation feature map, `C x Hf x Wf`.
    pub fmap: Vec<f64>,
    cols_rpn: Vec<f64>,
    /// Raw RPN output, `5A x Hf x Wf`.
    pub rpn: Vec<f64>,
}

/// Cached activations of the embedding head over a set of boxes.
#[derive(Debug, Clone)]
pub struct RoiPass {
    pub boxes: Vec<BoundingBox>,
    plans: Vec<RoiPlan>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    /// Raw embeddings, `n x D`.
    pub raw: Vec<f64>,
    pub norms: Vec<f64>,
    /// Unit-norm identity features, `n x D`.
    pub features: Vec<f64>,
    /// Standardization used for `score_logits`.
    pub stats: ScoreStats,
    pub score_logits: Vec<f64>,
}

impl RoiPass {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let d = self.features.len() / self.boxes.len().max(1);
        &self.features[i * d..(i + 1) * d]
    }

    pub fn scores(&self) -> Vec<f64> {
        self.score_logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Output-side gradients of one image.
#[derive(Debug, Clone, Default)]
pub struct PassGrads {
    /// `(anchor, dL/dlogit)`.
    pub objectness: Vec<(usize, f64)>,
    /// `(anchor, dL/ddeltas)`.
    pub deltas: Vec<(usize, [f64; 4])>,
    /// Direct gradient on the feature map.
    pub fmap: Option<Vec<f64>>,
    /// Gradient on unit features, `n x D`, aligned with the RoiPass.
    pub features: Option<Vec<f64>>,
    /// Gradient on score logits, aligned with the RoiPass. Reaches only the
    /// score scale and shift; the embedding receives it through `norms`.
    pub score_logits: Option<Vec<f64>>,
    /// Gradient on raw embedding norms, aligned with the RoiPass.
    pub norms: Option<Vec<f64>>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Self::from_parts(config, params, ScoreStats::default()))
    }

    pub fn from_parts(config: NetConfig, params: Params, score_stats: ScoreStats) -> Self {
        let anchors = config.anchor_grid();
        Self {
            config,
            params,
            score_stats,
            anchors,
        }
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let expected = (self.config.image_height, self.config.image_width, self.config.image_channels);
        if image.shape() != expected {
            return Err(LpsError::ImageShape {
                got: image.shape(),
                expected,
            });
        }
        Ok(())
    }

    pub fn forward_image(&self, image: &Image) -> Result<BackbonePass> {
        self.check_image(image)?;
        let cfg = &self.config;
        let (h, w) = (image.height, image.width);
        let c = image.channels;
        let mut input = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    input[ch * h * w + y * w + x] = 2.0 * (image.at(y, x, ch) as f64 - 0.5);
                }
            }
        }
        let p = &self.params;
        let [s1, s2, s3] = cfg.sizes();
        let (mut act1, cols1) = cfg.conv1().forward(&input, h, w, &p.conv1_w, &p.conv1_b);
        layers::relu_inplace(&mut act1);
        let (mut act2, cols2) = cfg.conv2().forward(&act1, s1.0, s1.1, &p.conv2_w, &p.conv2_b);
        layers::relu_inplace(&mut act2);
        let (mut fmap, cols3) = cfg.conv3().forward(&act2, s2.0, s2.1, &p.conv3_w, &p.conv3_b);
        layers::relu_inplace(&mut fmap);
        let (rpn, cols_rpn) = cfg.rpn().forward(&fmap, s3.0, s3.1, &p.rpn_w, &p.rpn_b);
        Ok(BackbonePass {
            cols1,
            act1,
            cols2,
            act2,
            cols3,
            fmap,
            cols_rpn,
            rpn,
        })
    }

    fn plane(&self) -> usize {
        let (fh, fw) = self.config.feature_size();
        fh * fw
    }

    pub fn objectness_logit(&self, pass: &BackbonePass, anchor: usize) -> f64 {
        let (a, pos) = self.anchors.split(anchor);
        pass.rpn[a * self.plane() + pos]
    }

    pub fn anchor_deltas(&self, pass: &BackbonePass, anchor: usize) -> [f64; 4] {
        let (a, pos) = self.anchors.split(anchor);
        let na = self.anchors.per_cell;
        let hw = self.plane();
        std::array::from_fn(|j| pass.rpn[(na + a * 4 + j) * hw + pos])
    }

    /// Embedding head over `boxes` (image coordinates). Scores are
    /// standardized with `stats`.
    pub fn roi_forward(&self, pass: &BackbonePass, boxes: &[BoundingBox], stats: ScoreStats) -> Result<RoiPass> {
        if let Some(b) = boxes.iter().find(|b| !(b.x2 > b.x1 && b.y2 > b.y1 && b.area() >= MIN_BOX_AREA)) {
            return Err(LpsError::DegenerateBox(b.as_array()));
        }
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_size();
        let stride = FEATURE_STRIDE as f64;
        let n = boxes.len();
        let pd = cfg.pooled_dim();
        let c = cfg.channels[2];
        let plans: Vec<RoiPlan> = boxes
            .iter()
            .map(|b| {
                let region = [
                    b.x1 / stride - 0.5,
                    b.y1 / stride - 0.5,
                    b.x2 / stride - 0.5,
                    b.y2 / stride - 0.5,
                ];
                layers::roi_align_plan(region, fh, fw, cfg.roi_grid.0, cfg.roi_grid.1, cfg.roi_samples)
            })
            .collect();
        let mut pooled = vec![0.0; n * pd];
        for (plan, out) in plans.iter().zip(pooled.chunks_exact_mut(pd.max(1))) {
            plan.pool(&pass.fmap, c, fh * fw, out);
        }
        let p = &self.params;
        let mut hidden = layers::linear_forward(&pooled, n, &p.fc1_w, &p.fc1_b, cfg.hidden_dim);
        layers::relu_inplace(&mut hidden);
        let raw = layers::linear_forward(&hidden, n, &p.fc2_w, &p.fc2_b, cfg.embed_dim);
        let d = cfg.embed_dim;
        let norms: Vec<f64> = raw
            .chunks_exact(d)
            .map(|r| (r.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-12))
            .collect();
        let features: Vec<f64> = raw
            .chunks_exact(d)
            .zip(&norms)
            .flat_map(|(r, &nr)| r.iter().map(move |x| x / nr))
            .collect();
        let mut out = RoiPass {
            boxes: boxes.to_vec(),
            plans,
            pooled,
            hidden,
            raw,
            norms,
            features,
            stats,
            score_logits: Vec::new(),
        };
        self.restandardize(&mut out, stats);
        Ok(out)
    }

    /// Recomputes score logits under new norm statistics.
    pub fn restandardize(&self, roi: &mut RoiPass, stats: ScoreStats) {
        let (g, b) = (self.params.score_gamma[0], self.params.score_beta[0]);
        let sd = stats.std();
        roi.stats = stats;
        roi.score_logits = roi.norms.iter().map(|&nr| g * (nr - stats.mean) / sd + b).collect();
    }

    /// Accumulates parameter gradients of one image into `grads`.
    pub fn backward(&self, pass: &BackbonePass, roi: Option<&RoiPass>, out: &PassGrads, grads: &mut Params) {
        let cfg = &self.config;
        let p = &self.params;
        let [s1, s2, s3] = cfg.sizes();
        let hw = s3.0 * s3.1;
        let mut dfmap = out.fmap.clone().unwrap_or_else(|| vec![0.0; pass.fmap.len()]);

        if let Some(roi) = roi.filter(|r| !r.is_empty()) {
            let n = roi.len();
            let d = cfg.embed_dim;
            let mut draw = vec![0.0; n * d];
            if let Some(df) = &out.features {
                for i in 0..n {
                    let x = &roi.features[i * d..(i + 1) * d];
                    let g = &df[i * d..(i + 1) * d];
                    let dot: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        draw[i * d + k] += (g[k] - x[k] * dot) / roi.norms[i];
                    }
                }
            }
            if let Some(ds) = &out.score_logits {
                let sd = roi.stats.std();
                for i in 0..n {
                    grads.score_gamma[0] += ds[i] * (roi.norms[i] - roi.stats.mean) / sd;
                    grads.score_beta[0] += ds[i];
                }
            }
            if let Some(dn) = &out.norms {
                for i in 0..n {
                    for k in 0..d {
                        draw[i * d + k] += dn[i] * roi.features[i * d + k];
                    }
                }
            }
            let mut dhidden = layers::linear_backward(&draw, &roi.hidden, n, &p.fc2_w, &mut grads.fc2_w, &mut grads.fc2_b, d);
            layers::relu_backward(&mut dhidden, &roi.hidden);
            let dpooled = layers::linear_backward(&dhidden, &roi.pooled, n, &p.fc1_w, &mut grads.fc1_w, &mut grads.fc1_b, cfg.hidden_dim);
            let pd = cfg.pooled_dim();
            for (plan, dp) in roi.plans.iter().zip(dpooled.chunks_exact(pd)) {
                plan.pool_backward(dp, cfg.channels[2], hw, &mut dfmap);
            }
        }

        if !out.objectness.is_empty() || !out.deltas.is_empty() {
            let na = self.anchors.per_cell;
            let mut drpn = vec![0.0; pass.rpn.len()];
            for &(anchor, g) in &out.objectness {
                let (a, pos) = self.anchors.split(anchor);
                drpn[a * hw + pos] += g;
            }
            for (anchor, g) in &out.deltas {
                let (a, pos) = self.anchors.split(*anchor);
                for j in 0..4 {
                    drpn[(na + a * 4 + j) * hw + pos] += g[j];
                }
            }
            let dfrom_rpn = cfg
                .rpn()
                .backward(&drpn, &pass.cols_rpn, s3.0, s3.1, &p.rpn_w, &mut grads.rpn_w, &mut grads.rpn_b, true)
                .expect("input gradient requested");
            for (a, b) in dfmap.iter_mut().zip(&dfrom_rpn) {
                *a += b;
            }
        }

        layers::relu_backward(&mut dfmap, &pass.fmap);
        let mut dact2 = cfg
            .conv3()
            .backward(&dfmap, &pass.cols3, s2.0, s2.1, &p.conv3_w, &mut grads.conv3_w, &mut grads.conv3_b, true)
            .expect("input gradient requested");
        layers::relu_backward(&mut dact2, &pass.act2);
        let mut dact1 = cfg
            .conv2()
            .backward(&dact2, &pass.cols2, s1.0, s1.1, &p.conv2_w, &mut grads.conv2_w, &mut grads.conv2_b, true)
            .expect("input gradient requested");
        layers::relu_backward(&mut dact1, &pass.act1);
        cfg.conv1().backward(
            &dact1,
            &pass.cols1,
            cfg.image_height,
            cfg.image_width,
            &p.conv1_w,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
            false,
        );
    }
}
