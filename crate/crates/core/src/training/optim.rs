//! Parameter update rules and gradient clipping.

use docie_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adadelta,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// The rate is multiplied by `decay_factor` every `decay_every` epochs;
    /// zero disables decay.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Adadelta averaging constant.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global gradient norm; zero disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adadelta,
            lr: 1.0,
            decay_every: 40,
            decay_factor: 0.1,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adam, lr, eps: 1e-8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.decay_factor > 0.0
            && (0.0..1.0).contains(&self.rho)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Learning rate in effect during a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.lr
        } else {
            self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }

    /// One-line description for log headers.
    pub fn describe(&self) -> String {
        let extra = match self.kind {
            OptimizerKind::Adadelta => format!("rho={} eps={}", self.rho, self.eps),
            OptimizerKind::Adam => format!("beta1={} beta2={} eps={}", self.beta1, self.beta2, self.eps),
        };
        format!(
            "optimizer={} lr={} decay_every={} decay_factor={} {extra} clip_norm={}",
            self.kind.name(),
            self.lr,
            self.decay_every,
            self.decay_factor,
            self.clip_norm
        )
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Per-parameter optimizer state, aligned with the parameter visiting order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self { cfg, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Applies one update. Parameters without a gradient keep their values
    /// and state. Returns the gradient norm before clipping.
    pub fn step<T: Real>(&mut self, params: Vec<&mut Tensor<T>>, lr: f64) -> f64 {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter set changed between steps");
        let mut grads: Vec<Vec<f64>> =
            params.iter().map(|p| p.grad().map(|g| g.iter().map(|v| v.as_f64()).collect()).unwrap_or_default()).collect();
        let norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        self.steps += 1;
        let c = &self.cfg;
        let (bc1, bc2) = (1.0 - c.beta1.powi(self.steps as i32), 1.0 - c.beta2.powi(self.steps as i32));
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if g.is_empty() {
                continue;
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let new: Vec<T> = p
                .data()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let gi = g[i];
                    let delta = match c.kind {
                        OptimizerKind::Adadelta => {
                            // m: running mean of squared gradients, v: of squared updates.
                            m[i] = c.rho * m[i] + (1.0 - c.rho) * gi * gi;
                            let d = ((v[i] + c.eps).sqrt() / (m[i] + c.eps).sqrt()) * gi;
                            v[i] = c.rho * v[i] + (1.0 - c.rho) * d * d;
                            lr * d
                        }
                        OptimizerKind::Adam => {
                            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                            lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps)
                        }
                    };
                    T::c(w.as_f64() - delta)
                })
                .collect();
            let shape = p.shape().to_vec();
            *p = Tensor::param(new, &shape);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![vec![3.0, 0.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn step_schedule() {
        let c = OptimizerConfig::default();
        assert_eq!(c.lr_at(39), 1.0);
        assert!((c.lr_at(40) - 0.1).abs() < 1e-12);
        assert!((c.lr_at(80) - 0.01).abs() < 1e-12);
    }

    fn minimise(cfg: OptimizerConfig, steps: usize) -> f64 {
        let mut w = Tensor::<f64>::param(vec![3.0, -2.0], &[2]);
        let mut opt = Optimizer::new(cfg.clone());
        for _ in 0..steps {
            w.mul(&w).sum_all().backward();
            opt.step(vec![&mut w], cfg.lr);
        }
        w.data().iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn both_rules_descend_a_quadratic() {
        assert!(minimise(OptimizerConfig::adam(0.1), 300) < 0.05);
        assert!(minimise(OptimizerConfig { clip_norm: 0.0, ..OptimizerConfig::default() }, 2000) < 1.0);
    }
}
