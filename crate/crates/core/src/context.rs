//! Per-text embeddings from textual features and positions, and
//! self-attention across all texts of a document.

use docie_tensor::{Real, Tensor};

use crate::config::ContextConfig;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{impl_module, row_mask, Embedding, Init, LayerNorm, Linear};

/// One 1-D convolution per kernel size over the character axis, each
/// followed by max-pooling over the valid characters.
#[derive(Debug, Clone)]
pub struct CharAggregator<T: Real> {
    convs: Vec<Linear<T>>,
    kernels: Vec<usize>,
}
impl_module!(CharAggregator { subs convs });

impl<T: Real> CharAggregator<T> {
    pub fn new(init: &mut Init, d_s: usize, kernels: &[usize], channels: usize) -> Self {
        let convs = kernels.iter().map(|&k| Linear::new(init, k * d_s, channels, true)).collect();
        Self { convs, kernels: kernels.to_vec() }
    }

    pub fn out_dim(&self) -> usize {
        self.convs.iter().map(|c| c.d_out()).sum()
    }

    /// `z (m·steps, d_s)` with per-text character counts gives `(m, out_dim)`.
    /// Steps past a text's length are zeroed before convolving, so their
    /// content never matters. A text with no characters maps to zeros.
    pub fn forward(&self, z: &Tensor<T>, steps: usize, lens: &[usize]) -> Tensor<T> {
        let d = z.dim(1);
        let valid: Vec<bool> = lens.iter().flat_map(|&n| (0..steps).map(move |t| t < n)).collect();
        let zm = z.mask(&row_mask::<T>(&valid, d));
        let pooled: Vec<Tensor<T>> = self
            .convs
            .iter()
            .zip(&self.kernels)
            .map(|(conv, &k)| conv.forward(&zm.unfold_seq(steps, k)).segment_max_rows(steps, lens))
            .collect();
        Tensor::concat_cols(&pooled)
    }
}

/// Quantised bin of a coordinate normalised to `[0, 1]`.
pub fn quantize(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1)
}

/// Learned embedding of a box: one table per coordinate, lookups summed.
#[derive(Debug, Clone)]
pub struct PositionEmbedding<T: Real> {
    tables: Vec<Embedding<T>>,
    bins: usize,
}
impl_module!(PositionEmbedding { subs tables });

impl<T: Real> PositionEmbedding<T> {
    pub fn new(init: &mut Init, bins: usize, d: usize) -> Self {
        Self { tables: (0..4).map(|_| Embedding::new(init, bins, d)).collect(), bins }
    }

    pub fn forward(&self, boxes: &[BBox], width: f32, height: f32) -> Tensor<T> {
        let coords = |b: &BBox| [b.x0 / width, b.y0 / height, b.x1 / width, b.y1 / height];
        let parts: Vec<Tensor<T>> = (0..4)
            .map(|k| {
                let idx: Vec<usize> = boxes.iter().map(|b| quantize(coords(b)[k], self.bins)).collect();
                self.tables[k].forward(&idx)
            })
            .collect();
        Tensor::sum_of(&parts)
    }
}

/// One multi-head self-attention layer with a residual connection and
/// layer normalisation.
#[derive(Debug, Clone)]
pub struct SelfAttention<T: Real> {
    query: Linear<T>,
    key: Linear<T>,
    value: Linear<T>,
    output: Linear<T>,
    norm: LayerNorm<T>,
    heads: usize,
}
impl_module!(SelfAttention { sub query, sub key, sub value, sub output, sub norm });

impl<T: Real> SelfAttention<T> {
    pub fn new(init: &mut Init, d: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(init, d, d, false),
            key: Linear::new(init, d, d, false),
            value: Linear::new(init, d, d, false),
            output: Linear::new(init, d, d, false),
            norm: LayerNorm::new(init, d),
            heads,
        }
    }

    /// Concatenated heads projected back to width `d` (before the residual).
    /// `keep` marks real texts; attention to or from padded texts is zero.
    /// Returns the attended values and one `(m, m)` weight matrix per head.
    pub fn attend(&self, x: &Tensor<T>, keep: Option<&[bool]>) -> (Tensor<T>, Vec<Tensor<T>>) {
        let (m, d) = (x.dim(0), x.dim(1));
        let dn = d / self.heads;
        let scale = T::one() / T::c(dn as f64).sqrt();
        let pair_keep: Option<Vec<bool>> = keep.map(|k| (0..m * m).map(|p| k[p / m] && k[p % m]).collect());
        let (q, kt, v) = (self.query.forward(x), self.key.forward(x), self.value.forward(x));
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dn, (h + 1) * dn);
            let scores = q.slice_cols(a, b).matmul_t(&kt.slice_cols(a, b)).scale(scale);
            let w = scores.softmax_rows(pair_keep.as_deref());
            outs.push(w.matmul(&v.slice_cols(a, b)));
            maps.push(w);
        }
        (self.output.forward(&Tensor::concat_cols(&outs)), maps)
    }

    pub fn forward(&self, x: &Tensor<T>, keep: Option<&[bool]>) -> (Tensor<T>, Vec<Tensor<T>>) {
        let (a, maps) = self.attend(x, keep);
        (self.norm.forward(&x.add(&a)), maps)
    }
}

/// Output of the context block for one document.
#[derive(Debug, Clone)]
pub struct ContextFeatures<T: Real> {
    pub embeddings: Tensor<T>,
    /// Textual context features `(m, d_info)`.
    pub features: Tensor<T>,
    /// Attention weights per layer and head.
    pub attention: Vec<Vec<Tensor<T>>>,
    /// Texts without any valid character.
    pub empty_texts: usize,
}

#[derive(Debug, Clone)]
pub struct ContextBlock<T: Real> {
    pub aggregator: CharAggregator<T>,
    project: Linear<T>,
    position: PositionEmbedding<T>,
    norm: LayerNorm<T>,
    pub layers: Vec<SelfAttention<T>>,
    cfg: ContextConfig,
}
impl_module!(ContextBlock { sub aggregator, sub project, sub position, sub norm, subs layers });

impl<T: Real> ContextBlock<T> {
    pub fn new(init: &mut Init, d_s: usize, cfg: &ContextConfig) -> Self {
        let aggregator = CharAggregator::new(init, d_s, &cfg.kernels, cfg.kernel_channels);
        let project = Linear::new(init, aggregator.out_dim(), cfg.d_info, true);
        Self {
            aggregator,
            project,
            position: PositionEmbedding::new(init, cfg.position_bins, cfg.d_info),
            norm: LayerNorm::new(init, cfg.d_info),
            layers: (0..cfg.layers).map(|_| SelfAttention::new(init, cfg.d_info, cfg.heads)).collect(),
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &ContextConfig {
        &self.cfg
    }

    /// Normalised sum of the projected character summary and the box position.
    pub fn embed(&self, zhat: &Tensor<T>, boxes: &[BBox], width: f32, height: f32) -> Tensor<T> {
        self.norm.forward(&self.project.forward(zhat).add(&self.position.forward(boxes, width, height)))
    }

    /// Stacked self-attention over text embeddings.
    pub fn attend(&self, embeddings: &Tensor<T>, keep: Option<&[bool]>) -> Result<(Tensor<T>, Vec<Vec<Tensor<T>>>)> {
        let m = embeddings.dim(0);
        if m == 0 || keep.is_some_and(|k| !k.iter().any(|&v| v)) {
            return Err(Error::Input("textual context needs at least one real text".into()));
        }
        if keep.is_some_and(|k| k.len() != m) {
            return Err(Error::Input(format!("padding mask length does not match {m} texts")));
        }
        let mut x = embeddings.clone();
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(&x, keep);
            x = y;
            maps.push(w);
        }
        Ok((x, maps))
    }

    pub fn forward(
        &self,
        z: &Tensor<T>,
        steps: usize,
        lens: &[usize],
        boxes: &[BBox],
        width: f32,
        height: f32,
        keep: Option<&[bool]>,
    ) -> Result<ContextFeatures<T>> {
        let zhat = self.aggregator.forward(z, steps, lens);
        let embeddings = self.embed(&zhat, boxes, width, height);
        let (features, attention) = self.attend(&embeddings, keep)?;
        let empty_texts = lens.iter().filter(|&&n| n == 0).count();
        Ok(ContextFeatures { embeddings, features, attention, empty_texts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_covers_the_unit_interval() {
        assert_eq!(quantize(0.0, 64), 0);
        assert_eq!(quantize(1.0, 64), 63);
        assert_eq!(quantize(0.5, 64), 32);
        assert_eq!(quantize(-3.0, 64), 0);
    }

    #[test]
    fn single_text_attends_to_itself() {
        let mut init = Init::new(0);
        let layer: SelfAttention<f64> = SelfAttention::new(&mut init, 4, 2);
        let x = Tensor::new(vec![0.3, -0.1, 0.8, 0.2], &[1, 4]);
        let (_, maps) = layer.forward(&x, None);
        assert!(maps.iter().all(|w| w.data() == [1.0]));
    }

    #[test]
    fn all_padded_is_an_error() {
        let mut init = Init::new(0);
        let cfg = ContextConfig { kernels: vec![3], kernel_channels: 2, d_info: 4, heads: 2, layers: 1, position_bins: 8 };
        let block: ContextBlock<f32> = ContextBlock::new(&mut init, 3, &cfg);
        assert!(block.attend(&Tensor::zeros(&[2, 4]), Some(&[false, false])).is_err());
    }
}
