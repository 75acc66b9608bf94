//! Single-stage anchor-based text detector on the shared feature map.

use docie_tensor::{sigmoid, Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::backbone::SharedFeatureMap;
use crate::config::DetectorConfig;
use crate::geometry::BBox;
use crate::nn::{impl_module, Conv2d, Init};

/// Smooth-L1 transition point for box regression.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
/// Largest log-scale change applied when decoding, as in common practice.
const MAX_LOG_SCALE: f32 = 4.135_166_5; // ln(1000 / 16)
/// Candidates kept by score before suppression.
const PRE_NMS_TOP_N: usize = 2000;

/// Boxes sorted by descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionOutput {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f32>,
}

/// Anchors centred on every feature cell, ordered `(y, x, anchor)` with the
/// anchor index running over scales then ratios.
pub fn anchor_grid(h: usize, w: usize, stride: usize, scales: &[f32], ratios: &[f32]) -> Vec<BBox> {
    let mut shapes = Vec::with_capacity(scales.len() * ratios.len());
    for &s in scales {
        for &r in ratios {
            shapes.push((s * r.sqrt(), s / r.sqrt()));
        }
    }
    let mut out = Vec::with_capacity(h * w * shapes.len());
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = ((x as f32 + 0.5) * stride as f32, (y as f32 + 0.5) * stride as f32);
            for &(aw, ah) in &shapes {
                out.push(BBox::new(cx - 0.5 * aw, cy - 0.5 * ah, cx + 0.5 * aw, cy + 0.5 * ah));
            }
        }
    }
    out
}

/// Regression target of `gt` relative to `anchor`: centre offsets in anchor
/// units and log size ratios.
pub fn encode_box(anchor: &BBox, gt: &BBox) -> [f32; 4] {
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [(gx - ax) / aw, (gy - ay) / ah, (gt.width() / aw).ln(), (gt.height() / ah).ln()]
}

pub fn decode_box(anchor: &BBox, d: [f32; 4]) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let (cx, cy) = (ax + d[0] * aw, ay + d[1] * ah);
    let (w, h) = (aw * d[2].min(MAX_LOG_SCALE).exp(), ah * d[3].min(MAX_LOG_SCALE).exp());
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

/// Anchor labels: `1` positive, `0` negative, `-1` ignored; plus the index
/// of the best-overlapping ground-truth box per anchor.
pub fn assign_anchors(anchors: &[BBox], gt: &[BBox], cfg: &DetectorConfig, width: f32, height: f32) -> (Vec<i8>, Vec<usize>) {
    let mut labels = vec![0i8; anchors.len()];
    let mut matched = vec![0usize; anchors.len()];
    if gt.is_empty() {
        return (labels, matched);
    }
    let clipped: Vec<BBox> = anchors.iter().map(|a| a.clip(width, height)).collect();
    let mut best_per_gt = vec![0f32; gt.len()];
    let mut best_iou = vec![0f32; anchors.len()];
    for (i, a) in clipped.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = a.iou(g);
            if iou > best_iou[i] {
                best_iou[i] = iou;
                matched[i] = j;
            }
            best_per_gt[j] = best_per_gt[j].max(iou);
        }
    }
    for (i, a) in clipped.iter().enumerate() {
        labels[i] = if best_iou[i] >= cfg.positive_iou {
            1
        } else if best_iou[i] < cfg.negative_iou {
            0
        } else {
            -1
        };
        for (j, g) in gt.iter().enumerate() {
            let iou = a.iou(g);
            if best_per_gt[j] > 0.0 && iou == best_per_gt[j] {
                labels[i] = 1;
                matched[i] = j;
            }
        }
    }
    (labels, matched)
}

/// Random subset of at most `samples` anchors, up to `positive_fraction`
/// of them positive. Returns per-anchor inclusion flags.
pub fn sample_anchors(labels: &[i8], cfg: &DetectorConfig, rng: &mut impl Rng) -> Vec<bool> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let max_pos = (cfg.samples as f32 * cfg.positive_fraction) as usize;
    pos.shuffle(rng);
    pos.truncate(max_pos);
    neg.shuffle(rng);
    neg.truncate(cfg.samples - pos.len());
    let mut keep = vec![false; labels.len()];
    for i in pos.into_iter().chain(neg) {
        keep[i] = true;
    }
    keep
}

/// Greedy suppression in descending score order (lower index first on
/// ties). Returns the kept indices in that order.
pub fn nms(boxes: &[BBox], scores: &[f32], iou: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| boxes[k].iou(&boxes[i]) < iou) {
            keep.push(i);
        }
    }
    keep
}

/// One-to-one greedy matching by descending IoU; pairs below `min_iou` are
/// left unmatched. Returns `(pred, gt)` index pairs.
pub fn match_boxes(pred: &[BBox], gt: &[BBox], min_iou: f32) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (p, a) in pred.iter().enumerate() {
        for (g, b) in gt.iter().enumerate() {
            let iou = a.iou(b);
            if iou >= min_iou {
                pairs.push((iou, p, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; pred.len()], vec![false; gt.len()]);
    let mut out = Vec::new();
    for (_, p, g) in pairs {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            out.push((p, g));
        }
    }
    out
}

/// Per-anchor objectness logits `(N, 1)` and box deltas `(N, 4)`.
#[derive(Debug, Clone)]
pub struct RawDetections<T: Real> {
    pub logits: Tensor<T>,
    pub deltas: Tensor<T>,
    pub anchors: Vec<BBox>,
}

#[derive(Debug, Clone)]
pub struct DetectorHead<T: Real> {
    conv: Conv2d<T>,
    cls: Conv2d<T>,
    reg: Conv2d<T>,
    cfg: DetectorConfig,
}
impl_module!(DetectorHead { sub conv, sub cls, sub reg });

impl<T: Real> DetectorHead<T> {
    pub fn new(init: &mut Init, d: usize, cfg: &DetectorConfig) -> Self {
        let a = cfg.scales.len() * cfg.ratios.len();
        let mut cls = Conv2d::square(init, cfg.head_channels, a, 1, 1);
        let mut reg = Conv2d::square(init, cfg.head_channels, 4 * a, 1, 1);
        cls.weight = init.uniform(cls.weight.shape(), 0.01);
        reg.weight = init.uniform(reg.weight.shape(), 0.01);
        // Start from a low objectness prior so early losses are dominated by
        // the (rare) positives rather than the sea of background anchors.
        cls.bias = Some(init.constant(&[a], -(99.0f64).ln()));
        Self { conv: Conv2d::square(init, d, cfg.head_channels, 3, 1), cls, reg, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.cfg.scales.len() * self.cfg.ratios.len()
    }

    pub fn forward(&self, fmap: &SharedFeatureMap<T>) -> RawDetections<T> {
        let (h, w) = (fmap.height(), fmap.width());
        let a = self.anchors_per_cell();
        let hidden = self.conv.forward(&fmap.data).relu();
        let logits = self.cls.forward(&hidden).nchw_to_rows().reshape(&[h * w * a, 1]);
        let deltas = self.reg.forward(&hidden).nchw_to_rows().reshape(&[h * w * a, 4]);
        let anchors = anchor_grid(h, w, fmap.stride, &self.cfg.scales, &self.cfg.ratios);
        RawDetections { logits, deltas, anchors }
    }

    /// Classification and regression losses over sampled anchors, each
    /// normalised by the number of sampled anchors.
    pub fn loss(&self, raw: &RawDetections<T>, gt: &[BBox], width: f32, height: f32, rng: &mut impl Rng) -> (Tensor<T>, Tensor<T>) {
        let n = raw.anchors.len();
        let (labels, matched) = assign_anchors(&raw.anchors, gt, &self.cfg, width, height);
        let keep = sample_anchors(&labels, &self.cfg, rng);
        let count = keep.iter().filter(|&&k| k).count().max(1);
        let norm = T::one() / T::c(count as f64);
        let mut cls_t = vec![T::zero(); n];
        let mut cls_w = vec![T::zero(); n];
        let mut reg_t = vec![T::zero(); 4 * n];
        let mut reg_w = vec![T::zero(); 4 * n];
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            cls_w[i] = norm;
            if labels[i] == 1 {
                cls_t[i] = T::one();
                let d = encode_box(&raw.anchors[i], &gt[matched[i]]);
                for k in 0..4 {
                    reg_t[4 * i + k] = T::c(d[k] as f64);
                    reg_w[4 * i + k] = norm;
                }
            }
        }
        let cls = raw.logits.bce_with_logits(&cls_t, &cls_w);
        let reg = raw.deltas.smooth_l1(&reg_t, &reg_w, SMOOTH_L1_BETA);
        (cls, reg)
    }

    /// Decoded, clipped, thresholded and suppressed boxes.
    pub fn detect(&self, raw: &RawDetections<T>, width: f32, height: f32, score_thresh: f32, nms_iou: f32, max_boxes: usize) -> DetectionOutput {
        let logits = raw.logits.data();
        let deltas = raw.deltas.data();
        let mut cand: Vec<(f32, usize)> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| (sigmoid(l).as_f64() as f32, i))
            .filter(|&(s, _)| s > score_thresh)
            .collect();
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cand.truncate(PRE_NMS_TOP_N);
        let mut boxes = Vec::with_capacity(cand.len());
        let mut scores = Vec::with_capacity(cand.len());
        for (s, i) in cand {
            let d = [0, 1, 2, 3].map(|k| deltas[4 * i + k].as_f64() as f32);
            let b = decode_box(&raw.anchors[i], d).clip(width, height);
            if b.is_valid() {
                boxes.push(b);
                scores.push(s);
            }
        }
        let mut keep = nms(&boxes, &scores, nms_iou);
        keep.truncate(max_boxes);
        DetectionOutput { boxes: keep.iter().map(|&i| boxes[i]).collect(), scores: keep.iter().map(|&i| scores[i]).collect() }
    }
}
