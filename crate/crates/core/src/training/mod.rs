//! Joint objective and the training loop.

pub mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use docie_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentSample, EntitySchema};
use crate::error::{Error, Result};
use crate::eval::{evaluate, BoxSource, MatchOptions};
use crate::extractor::ContextUse;
use crate::model::{Ablation, DocModel, ForwardMode, TrainForward};
use crate::nn::Module;

pub use optim::{clip_global_norm, Optimizer, OptimizerConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the recognition loss.
    pub lambda_recog: f64,
    /// Weight of the extraction loss.
    pub lambda_info: f64,
    pub optimizer: OptimizerConfig,
    /// Documents per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_visual_ctx: bool,
    pub use_textual_ctx: bool,
    /// When false the extraction loss stops at the reader outputs.
    pub end_to_end: bool,
    /// Evaluate every this many epochs; zero disables evaluation.
    pub eval_every: usize,
    /// Stop once the evaluation mean F1 reaches this value.
    pub stop_at_f1: Option<f64>,
    pub matching: MatchOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_recog: 1.0,
            lambda_info: 1.0,
            optimizer: OptimizerConfig::default(),
            batch_size: 2,
            epochs: 150,
            seed: 0,
            use_visual_ctx: true,
            use_textual_ctx: true,
            end_to_end: true,
            eval_every: 1,
            stop_at_f1: None,
            matching: MatchOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambda_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !lambda_ok(self.lambda_recog) || !lambda_ok(self.lambda_info) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { recog: self.lambda_recog, info: self.lambda_info }
    }

    pub fn forward_mode(&self) -> ForwardMode {
        ForwardMode {
            context: ContextUse { visual: self.use_visual_ctx, textual: self.use_textual_ctx },
            end_to_end: self.end_to_end,
        }
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        let c = ablation.context_use();
        self.use_visual_ctx = c.visual;
        self.use_textual_ctx = c.textual;
    }

    pub fn ablation(&self) -> Ablation {
        match (self.use_visual_ctx, self.use_textual_ctx) {
            (false, false) => Ablation::Text,
            (true, false) => Ablation::TextVisual,
            (false, true) => Ablation::TextContext,
            (true, true) => Ablation::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recog: f64,
    pub info: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recog: 1.0, info: 1.0 }
    }
}

/// Values of every loss term for one document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det_cls: f64,
    pub det_reg: f64,
    pub det: f64,
    pub rcg: f64,
    pub info: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("loss_det_cls", self.det_cls),
            ("loss_det_reg", self.det_reg),
            ("loss_det", self.det),
            ("loss_rcg", self.rcg),
            ("loss_info", self.info),
            ("loss_total", self.total),
        ]
    }

    /// First non-finite term, if any.
    pub fn non_finite(&self) -> Option<(&'static str, f64)> {
        self.terms().into_iter().find(|(_, v)| !v.is_finite())
    }

    fn accumulate(&mut self, o: &LossBreakdown, w: f64) {
        self.det_cls += w * o.det_cls;
        self.det_reg += w * o.det_reg;
        self.det += w * o.det;
        self.rcg += w * o.rcg;
        self.info += w * o.info;
        self.total += w * o.total;
    }
}

/// Recognition loss: mean negative log-likelihood over the characters and
/// end token of each text, averaged over texts.
pub fn recognition_loss<T: Real>(logits: &Tensor<T>, targets: &[Vec<usize>], lens: &[usize], steps: usize) -> Tensor<T> {
    let m = targets.len();
    let mut flat = Vec::with_capacity(m * steps);
    let mut weights = Vec::with_capacity(m * steps);
    for (t, &n) in targets.iter().zip(lens) {
        let counted = (n + 1).min(steps);
        let w = T::c(1.0 / (counted * m) as f64);
        for s in 0..steps {
            flat.push(t[s]);
            weights.push(if s < counted { w } else { T::zero() });
        }
    }
    logits.cross_entropy(&flat, &weights)
}

/// Extraction loss: mean negative log-likelihood over all valid characters.
pub fn extraction_loss<T: Real>(logits: &Tensor<T>, tags: &[Vec<crate::corpus::Tag>], steps: usize) -> Tensor<T> {
    let total: usize = tags.iter().map(Vec::len).sum();
    if total == 0 {
        return Tensor::scalar(T::zero());
    }
    let w = T::c(1.0 / total as f64);
    let mut flat = Vec::with_capacity(tags.len() * steps);
    let mut weights = Vec::with_capacity(tags.len() * steps);
    for t in tags {
        for s in 0..steps {
            flat.push(t.get(s).map_or(0, |g| g.index()));
            weights.push(if s < t.len() { w } else { T::zero() });
        }
    }
    logits.cross_entropy(&flat, &weights)
}

/// Combines detection, recognition and extraction losses for one document.
/// The returned total equals `det + recog * rcg + info * info` evaluated in
/// that order.
pub fn joint_loss<T: Real>(out: &TrainForward<T>, weights: LossWeights) -> Result<(Tensor<T>, LossBreakdown)> {
    if out.rec_targets.is_empty() {
        return Err(Error::Input("a training document needs at least one text".into()));
    }
    let det = out.det_cls.add(&out.det_reg);
    let rcg = recognition_loss(&out.decoder.logits, &out.rec_targets, &out.lens, out.steps);
    let info = extraction_loss(&out.tag_logits, &out.tag_targets, out.steps);
    let total = det.add(&rcg.scale(T::c(weights.recog))).add(&info.scale(T::c(weights.info)));
    let v = |t: &Tensor<T>| t.item().as_f64();
    let b = LossBreakdown {
        det_cls: v(&out.det_cls),
        det_reg: v(&out.det_reg),
        det: v(&det),
        rcg: v(&rcg),
        info: v(&info),
        total: v(&total),
    };
    Ok((total, b))
}

/// Evaluation summary attached to an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub f1_per_entity: BTreeMap<String, f64>,
    pub f1_avg: f64,
    pub f1_micro: f64,
    pub sequence_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's documents.
    pub losses: LossBreakdown,
    pub eval: Option<EpochEval>,
    pub seconds: f64,
}

/// Writes one CSV row per epoch, preceded by `#` comment lines.
pub struct MetricsLog<W: Write> {
    out: W,
    entities: Vec<String>,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W, comments: &[String], schema: &EntitySchema) -> std::io::Result<Self> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let entities = schema.entity_names().to_vec();
        let f1_cols: Vec<String> = entities.iter().map(|e| format!("F1_{e}")).collect();
        writeln!(out, "epoch,lr,loss_det,loss_rcg,loss_info,loss_total,{},F1_avg,F1_micro,seq_acc,seconds", f1_cols.join(","))?;
        out.flush()?;
        Ok(Self { out, entities })
    }

    pub fn record(&mut self, r: &EpochRecord) -> std::io::Result<()> {
        let l = &r.losses;
        let mut row = vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            l.det.to_string(),
            l.rcg.to_string(),
            l.info.to_string(),
            l.total.to_string(),
        ];
        match &r.eval {
            Some(e) => {
                row.extend(self.entities.iter().map(|n| e.f1_per_entity.get(n).map_or(String::new(), |v| v.to_string())));
                row.extend([e.f1_avg.to_string(), e.f1_micro.to_string(), e.sequence_accuracy.to_string()]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), self.entities.len() + 3)),
        }
        row.push(format!("{:.3}", r.seconds));
        writeln!(self.out, "{}", row.join(","))?;
        self.out.flush()
    }
}

/// Comment lines describing a run, for the metrics header.
pub fn describe_run(cfg: &TrainConfig) -> Vec<String> {
    vec![
        cfg.optimizer.describe(),
        format!(
            "ablation={} end_to_end={} batch_size={} epochs={} seed={} lambda_recog={} lambda_info={}",
            cfg.ablation(),
            cfg.end_to_end,
            cfg.batch_size,
            cfg.epochs,
            cfg.seed,
            cfg.lambda_recog,
            cfg.lambda_info
        ),
    ]
}

fn anchor_rng(seed: u64, epoch: usize, doc: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((epoch as u64 + 1) << 32) | doc as u64);
    r
}

/// Document visiting order for a zero-based epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    order
}

/// Runs one epoch and returns the mean losses. `epoch` is zero-based.
pub fn train_epoch(
    model: &mut DocModel<f32>,
    optimizer: &mut Optimizer,
    docs: &[DocumentSample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let mode = cfg.forward_mode();
    let lr = cfg.optimizer.lr_at(epoch);
    let order = epoch_order(cfg.seed, epoch, docs.len());
    let mut mean = LossBreakdown::default();
    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        let share = 1.0 / batch.len() as f32;
        for &i in batch {
            let mut rng = anchor_rng(cfg.seed, epoch, i);
            let out = model.forward_train(&docs[i], mode, &mut rng)?;
            let (total, b) = joint_loss(&out, cfg.weights())?;
            if let Some((term, value)) = b.non_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, step, term, value });
            }
            total.scale(share).backward();
            mean.accumulate(&b, 1.0 / docs.len() as f64);
        }
        let params = model.named_params_mut().into_iter().map(|(_, p)| p).collect();
        let norm = optimizer.step(params, lr);
        if !norm.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, step, term: "gradient_norm", value: norm });
        }
        log::debug!("epoch {} step {step}: grad norm {norm:.4}", epoch + 1);
    }
    Ok(mean)
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each. Evaluation
/// uses annotated boxes with greedy decoding.
pub fn train(
    model: &mut DocModel<f32>,
    train_docs: &[DocumentSample],
    eval_docs: &[DocumentSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&DocModel<f32>, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer.clone());
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let losses = train_epoch(model, &mut optimizer, train_docs, cfg, epoch)?;
        let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let eval = if due && !eval_docs.is_empty() {
            let r = evaluate(model, eval_docs, cfg.forward_mode(), BoxSource::GroundTruth, cfg.matching, "")?;
            Some(EpochEval {
                f1_per_entity: r.report.per_entity.iter().map(|(k, s)| (k.clone(), s.f1)).collect(),
                f1_avg: r.report.mean_f1,
                f1_micro: r.report.micro.f1,
                sequence_accuracy: r.sequence_accuracy.unwrap_or(0.0),
            })
        } else {
            None
        };
        let record = EpochRecord { epoch: epoch + 1, lr: cfg.optimizer.lr_at(epoch), losses, eval, seconds: start.elapsed().as_secs_f64() };
        log::info!(
            "epoch {} loss {:.4} (det {:.4} rcg {:.4} info {:.4}) F1 {}",
            record.epoch,
            losses.total,
            losses.det,
            losses.rcg,
            losses.info,
            record.eval.as_ref().map_or("-".into(), |e| format!("{:.4}", e.f1_avg))
        );
        on_epoch(model, &record)?;
        let stop = matches!((cfg.stop_at_f1, &record.eval), (Some(t), Some(e)) if e.f1_avg >= t);
        records.push(record);
        if stop {
            break;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(3, 0, 10);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, 0, 10));
        assert_ne!(a, epoch_order(3, 1, 10));
    }

    #[test]
    fn ablation_switches_round_trip() {
        let mut c = TrainConfig::default();
        for a in Ablation::ALL {
            c.set_ablation(a);
            assert_eq!(c.ablation(), a);
        }
    }

    #[test]
    fn config_rejects_negative_weights() {
        let c = TrainConfig { lambda_info: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn uniform_logits_cost_log_k() {
        let k = 7;
        let logits = Tensor::<f64>::zeros(&[2 * 4, k]);
        let tags = vec![vec![crate::corpus::Tag::O; 3], vec![crate::corpus::Tag::B(1); 1]];
        let l = extraction_loss(&logits, &tags, 4).item();
        assert!((l - (k as f64).ln()).abs() < 1e-12);
    }
}
