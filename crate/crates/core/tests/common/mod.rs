//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use docie_core::config::{
    BackboneConfig, ContextConfig, DetectorConfig, ExtractorConfig, ModelConfig, ReaderConfig,
};
use docie_core::corpus::synth::{generate_corpus, SynthConfig};
use docie_core::corpus::{DocumentSample, Vocabulary};
use docie_core::geometry::BBox;
use docie_core::model::DocModel;
use docie_tensor::Real;

/// A very small network for wiring and property tests.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig { in_channels: 1, stem: 4, widths: vec![4, 6, 6, 8], lateral: true, d: 8, stride: 4 },
        detector: DetectorConfig {
            head_channels: 6,
            scales: vec![16.0, 32.0],
            ratios: vec![1.0, 4.0],
            positive_iou: 0.7,
            negative_iou: 0.3,
            samples: 64,
            positive_fraction: 0.5,
            score_thresh: 0.5,
            nms_iou: 0.3,
            max_boxes: 32,
        },
        reader: ReaderConfig { roi_h: 2, roi_w: 8, d_r: 8, d_s: 8, embed: 4, attention: 8, t_max: 12 },
        context: ContextConfig { kernels: vec![3, 5], kernel_channels: 4, d_info: 8, heads: 2, layers: 2, position_bins: 16 },
        extractor: ExtractorConfig { d_f: 6, hidden: 5 },
    }
}

pub fn corpus(seed: u64, n: usize) -> (Vec<DocumentSample>, SynthConfig) {
    let cfg = SynthConfig::default();
    (generate_corpus(&cfg, seed, n).unwrap(), cfg)
}

pub fn tiny_model<T: Real>(docs: &[DocumentSample], cfg: &SynthConfig, seed: u64) -> DocModel<T> {
    DocModel::new(tiny_config(), Vocabulary::from_samples(docs), cfg.schema().unwrap(), seed).unwrap()
}

/// Bilinear value at a clamped feature coordinate, computed from the four
/// surrounding cells.
pub fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.max(0.0).min((h - 1) as f64);
    let x = x.max(0.0).min((w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (y1, x1) = ((y0 + 1.0).min((h - 1) as f64), (x0 + 1.0).min((w - 1) as f64));
    let at = |yy: f64, xx: f64| plane[yy as usize * w + xx as usize];
    let (dy, dx) = (y - y0, x - x0);
    at(y0, x0) * (1.0 - dy) * (1.0 - dx) + at(y0, x1) * (1.0 - dy) * dx + at(y1, x0) * dy * (1.0 - dx) + at(y1, x1) * dy * dx
}

/// Region crop by direct sampling: each output cell is the mean of the
/// bilinear values at the four quarter points of its bin.
pub fn roi_align_oracle(fmap: &[f64], c: usize, h: usize, w: usize, stride: f64, b: &BBox, oh: usize, ow: usize) -> Vec<f64> {
    let (x0, y0) = (b.x0 as f64 / stride, b.y0 as f64 / stride);
    let bw = (b.x1 - b.x0) as f64 / stride / ow as f64;
    let bh = (b.y1 - b.y0) as f64 / stride / oh as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &fmap[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for fy in [0.25, 0.75] {
                    for fx in [0.25, 0.75] {
                        acc += bilinear(plane, h, w, y0 + (oy as f64 + fy) * bh, x0 + (ox as f64 + fx) * bw);
                    }
                }
                out.push(acc / 4.0);
            }
        }
    }
    out
}

/// Softmax attention of a single head written out with loops.
pub fn attention_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = q[0].len() as f64;
    let mut weights = Vec::new();
    let mut out = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        let o: Vec<f64> = (0..v[0].len()).map(|c| w.iter().zip(v).map(|(a, vj)| a * vj[c]).sum()).collect();
        weights.push(w);
        out.push(o);
    }
    (weights, out)
}

/// Per-entity (tp, fp, fn) by exhaustive matching: for each entity and each
/// distinct string, the matched count is the smaller multiplicity.
pub fn count_oracle(
    pred: &BTreeMap<String, Vec<String>>,
    gt: &BTreeMap<String, Vec<String>>,
    entities: &[String],
    norm: impl Fn(&str) -> String,
) -> BTreeMap<String, (usize, usize, usize)> {
    let mut out = BTreeMap::new();
    let names: std::collections::BTreeSet<&String> = entities.iter().chain(pred.keys()).collect();
    for name in names {
        let known = entities.contains(name);
        let p: Vec<String> = pred.get(name).map(|v| v.iter().map(|s| norm(s)).collect()).unwrap_or_default();
        let g: Vec<String> = if known { gt.get(name).map(|v| v.iter().map(|s| norm(s)).collect()).unwrap_or_default() } else { vec![] };
        let mut distinct: Vec<&String> = p.iter().chain(&g).collect();
        distinct.sort();
        distinct.dedup();
        let tp: usize = distinct
            .iter()
            .map(|s| p.iter().filter(|x| x == s).count().min(g.iter().filter(|x| x == s).count()))
            .sum();
        if !known && p.is_empty() {
            continue;
        }
        out.insert(name.clone(), (tp, p.len() - tp, g.len() - tp));
    }
    out
}

/// Backpropagates the extraction loss alone and counts backbone tensors that
/// received a nonzero gradient. Returns `(nonzero, total)`.
pub fn extraction_gradient_reach<T: Real>(model: &DocModel<T>, doc: &DocumentSample, end_to_end: bool) -> (usize, usize) {
    use docie_core::model::ForwardMode;
    use docie_core::nn::Module;
    use rand::SeedableRng;
    let mode = ForwardMode { end_to_end, ..ForwardMode::default() };
    let out = model.forward_train(doc, mode, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
    docie_core::training::extraction_loss(&out.tag_logits, &out.tag_targets, out.steps).backward();
    let params = model.backbone.named_params();
    let nonzero = params
        .iter()
        .filter(|(_, p)| p.grad().is_some_and(|g| g.iter().any(|v| v.as_f64() != 0.0)))
        .count();
    (nonzero, params.len())
}
