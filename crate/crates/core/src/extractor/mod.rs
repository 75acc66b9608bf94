//! Context fusion, character tagging and entity decoding.

pub mod iob;

use docie_tensor::{Real, Tensor};

use crate::config::ExtractorConfig;
use crate::corpus::Tag;
use crate::nn::{impl_module, repeat_rows, BiLstm, Init, Linear};

/// Which context vectors feed the fusion. With neither, the fused context
/// is zero and tagging relies on the character states alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextUse {
    pub visual: bool,
    pub textual: bool,
}

impl ContextUse {
    pub const FULL: ContextUse = ContextUse { visual: true, textual: true };
}

#[derive(Debug, Clone)]
pub struct Extractor<T: Real> {
    visual: Linear<T>,
    textual: Linear<T>,
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    bilstm: BiLstm<T>,
    classifier: Linear<T>,
}
impl_module!(Extractor { sub visual, sub textual, param alpha, param beta, sub bilstm, sub classifier });

impl<T: Real> Extractor<T> {
    pub fn new(init: &mut Init, d: usize, d_s: usize, d_info: usize, num_tags: usize, cfg: &ExtractorConfig) -> Self {
        Self {
            visual: Linear::new(init, d, cfg.d_f, true),
            textual: Linear::new(init, d_info, cfg.d_f, true),
            alpha: init.constant(&[1], 1.0),
            beta: init.constant(&[1], 1.0),
            bilstm: BiLstm::new(init, d_s + cfg.d_f, cfg.hidden),
            classifier: Linear::new(init, 2 * cfg.hidden, num_tags, true),
        }
    }

    pub fn d_f(&self) -> usize {
        self.visual.d_out()
    }

    /// `α·Linear(mean of region cells) + β·Linear(textual context)` per text.
    /// A missing input drops its term; with both missing the result is zero.
    pub fn fuse(&self, regions: Option<&Tensor<T>>, textual: Option<&Tensor<T>>, m: usize) -> Tensor<T> {
        let vis = regions.map(|r| self.visual.forward(&r.spatial_mean()).mul_scalar(&self.alpha));
        let txt = textual.map(|c| self.textual.forward(c).mul_scalar(&self.beta));
        match (vis, txt) {
            (Some(v), Some(t)) => v.add(&t),
            (Some(v), None) => v,
            (None, Some(t)) => t,
            (None, None) => Tensor::zeros(&[m, self.d_f()]),
        }
    }

    /// Tag logits `(m·steps, num_tags)` from character states `(m·steps, d_s)`
    /// and fused context `(m, d_f)` appended to every step.
    pub fn tag(&self, z: &Tensor<T>, fused: &Tensor<T>, steps: usize, lens: &[usize]) -> Tensor<T> {
        let m = lens.len();
        let u = Tensor::concat_cols(&[z.clone(), fused.gather_rows(&repeat_rows(m, steps))]);
        self.classifier.forward(&self.bilstm.run(&u, steps, lens))
    }
}

/// Argmax tag of each valid step, per text.
pub fn decode_tags<T: Real>(logits: &Tensor<T>, steps: usize, lens: &[usize]) -> Vec<Vec<Tag>> {
    let k = logits.dim(1);
    let data = logits.data();
    lens.iter()
        .enumerate()
        .map(|(i, &n)| {
            (0..n.min(steps))
                .map(|t| {
                    let row = &data[(i * steps + t) * k..(i * steps + t + 1) * k];
                    Tag::from_index((0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b }))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor() -> Extractor<f64> {
        let cfg = ExtractorConfig { d_f: 3, hidden: 2 };
        Extractor::new(&mut Init::new(5), 2, 4, 5, 5, &cfg)
    }

    #[test]
    fn visual_only_ignores_textual_input() {
        let ex = extractor();
        let r = Tensor::full(&[2, 2, 3, 3], 0.4);
        let a = ex.fuse(Some(&r), None, 2);
        let mut zeroed = ex.clone();
        zeroed.beta = Tensor::param(vec![0.0], &[1]);
        let b = zeroed.fuse(Some(&r), Some(&Tensor::full(&[2, 5], 0.0)), 2);
        let c = zeroed.fuse(Some(&r), Some(&Tensor::full(&[2, 5], 3.0)), 2);
        assert_eq!(a.data(), b.data());
        assert_eq!(b.data(), c.data());
    }

    #[test]
    fn logits_shape() {
        let ex = extractor();
        let z = Tensor::full(&[6, 4], 0.1);
        let fused = ex.fuse(None, None, 2);
        assert_eq!(ex.tag(&z, &fused, 3, &[3, 1]).shape(), &[6, 5]);
    }

    #[test]
    fn scaling_logits_keeps_argmax() {
        let l = Tensor::new(vec![0.1, 0.7, -0.2, 1.5, 0.2, 0.3], &[2, 3]);
        assert_eq!(decode_tags(&l, 2, &[2]), decode_tags(&l.scale(7.5), 2, &[2]));
    }
}
