//! Text recognition: region cropping, column encoder and attention decoder.

use docie_tensor::{Conv2dSpec, Real, Tensor};

use crate::backbone::SharedFeatureMap;
use crate::config::ReaderConfig;
use crate::corpus::vocab::{EOS, PAD, SOS};
use crate::geometry::BBox;
use crate::nn::{impl_module, repeat_rows, Conv2d, Embedding, Init, Linear, LstmCell};

/// Smallest box extent in feature cells; thinner boxes are widened to it.
pub const MIN_ROI_EXTENT: f32 = 1e-6;

/// Bilinear taps `(output offset within a plane, input offset within a
/// plane, weight)` of one box.
fn roi_taps(b: &BBox, stride: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> (Vec<(usize, usize, f64)>, bool) {
    let s = stride as f64;
    let (x0, y0) = (b.x0 as f64 / s, b.y0 as f64 / s);
    let (mut bw, mut bh) = ((b.x1 - b.x0) as f64 / s, (b.y1 - b.y0) as f64 / s);
    let degenerate = !(bw >= MIN_ROI_EXTENT as f64 && bh >= MIN_ROI_EXTENT as f64);
    if degenerate {
        bw = bw.max(MIN_ROI_EXTENT as f64);
        bh = bh.max(MIN_ROI_EXTENT as f64);
    }
    let (cell_w, cell_h) = (bw / out_w as f64, bh / out_h as f64);
    let mut taps = Vec::with_capacity(out_h * out_w * 16);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let o = oy * out_w + ox;
            for iy in 0..2 {
                let y = (y0 + (oy as f64 + (iy as f64 + 0.5) / 2.0) * cell_h).clamp(0.0, (h - 1) as f64);
                let ylo = y.floor() as usize;
                let yhi = (ylo + 1).min(h - 1);
                let ly = y - ylo as f64;
                for ix in 0..2 {
                    let x = (x0 + (ox as f64 + (ix as f64 + 0.5) / 2.0) * cell_w).clamp(0.0, (w - 1) as f64);
                    let xlo = x.floor() as usize;
                    let xhi = (xlo + 1).min(w - 1);
                    let lx = x - xlo as f64;
                    for (yy, wy) in [(ylo, 1.0 - ly), (yhi, ly)] {
                        for (xx, wx) in [(xlo, 1.0 - lx), (xhi, lx)] {
                            let wt = 0.25 * wy * wx;
                            if wt != 0.0 {
                                taps.push((o, yy * w + xx, wt));
                            }
                        }
                    }
                }
            }
        }
    }
    (taps, degenerate)
}

/// Fixed-size crops of `fmap (1, C, h, w)` for pixel-space `boxes`.
///
/// Each output cell averages bilinear samples at the 2x2 regular sub-points
/// of its bin. Feature cell `(i, j)` sits at feature coordinate `(i, j)`;
/// sample coordinates are clamped to the map. Returns `(m, C, out_h, out_w)`
/// and the number of boxes widened to the minimum extent.
pub fn roi_align<T: Real>(fmap: &Tensor<T>, stride: usize, boxes: &[BBox], out_h: usize, out_w: usize) -> (Tensor<T>, usize) {
    assert_eq!(fmap.rank(), 4, "roi_align: expected (1, C, h, w)");
    assert_eq!(fmap.dim(0), 1, "roi_align: batch of one feature map");
    let (c, h, w) = (fmap.dim(1), fmap.dim(2), fmap.dim(3));
    let (plane_in, plane_out) = (h * w, out_h * out_w);
    let mut degenerate = 0;
    let all_taps: Vec<Vec<(usize, usize, T)>> = boxes
        .iter()
        .map(|b| {
            let (taps, d) = roi_taps(b, stride, h, w, out_h, out_w);
            degenerate += d as usize;
            taps.into_iter().map(|(o, i, wt)| (o, i, T::c(wt))).collect()
        })
        .collect();
    let m = boxes.len();
    let src = fmap.data();
    let mut out = vec![T::zero(); m * c * plane_out];
    for (b, taps) in all_taps.iter().enumerate() {
        for ch in 0..c {
            let inp = &src[ch * plane_in..(ch + 1) * plane_in];
            let dst = &mut out[(b * c + ch) * plane_out..(b * c + ch + 1) * plane_out];
            for &(o, i, wt) in taps {
                dst[o] += wt * inp[i];
            }
        }
    }
    let t = Tensor::from_op(out, vec![m, c, out_h, out_w], vec![fmap.clone()], move |ctx| {
        let mut g = vec![T::zero(); c * plane_in];
        for (b, taps) in all_taps.iter().enumerate() {
            for ch in 0..c {
                let go = &ctx.grad[(b * c + ch) * plane_out..(b * c + ch + 1) * plane_out];
                let gi = &mut g[ch * plane_in..(ch + 1) * plane_in];
                for &(o, i, wt) in taps {
                    gi[i] += wt * go[o];
                }
            }
        }
        vec![Some(g)]
    });
    (t, degenerate)
}

/// Output of one decoding pass over `m` texts and `steps` steps. Matrices
/// are text-major: row `i·steps + t` is step `t` of text `i`.
#[derive(Debug, Clone)]
pub struct DecoderOutput<T: Real> {
    pub logits: Tensor<T>,
    /// Decoder states, the textual features of each text.
    pub states: Tensor<T>,
    /// Attention weights `(m, l)` per step.
    pub attention: Vec<Tensor<T>>,
    /// Argmax token per text and step.
    pub tokens: Vec<Vec<usize>>,
    pub steps: usize,
}

impl<T: Real> DecoderOutput<T> {
    /// Number of characters before the first end token of each text.
    pub fn lengths(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.iter().position(|&v| v == EOS).unwrap_or(t.len())).collect()
    }
}

/// Additive-attention LSTM decoder.
#[derive(Debug, Clone)]
pub struct AttentionDecoder<T: Real> {
    state_proj: Linear<T>,
    feature_proj: Linear<T>,
    score: Linear<T>,
    embed: Embedding<T>,
    cell: LstmCell<T>,
    classifier: Linear<T>,
}
impl_module!(AttentionDecoder { sub state_proj, sub feature_proj, sub score, sub embed, sub cell, sub classifier });

impl<T: Real> AttentionDecoder<T> {
    pub fn new(init: &mut Init, d_r: usize, d_s: usize, attention: usize, embed: usize, vocab: usize) -> Self {
        Self {
            state_proj: Linear::new(init, d_s, attention, true),
            feature_proj: Linear::new(init, d_r, attention, false),
            score: Linear::new(init, attention, 1, false),
            embed: Embedding::new(init, vocab, embed),
            cell: LstmCell::new(init, d_r + embed, d_s),
            classifier: Linear::new(init, d_s, vocab, true),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.cell.hidden()
    }

    /// Projection of the encoder features reused at every step.
    pub fn project_features(&self, features: &Tensor<T>) -> Tensor<T> {
        self.feature_proj.forward(features)
    }

    /// Attention of each text's previous state over its `l` feature columns.
    /// Returns the glimpse `(m, d_r)` and the weights `(m, l)`.
    pub fn attend(&self, s_prev: &Tensor<T>, features: &Tensor<T>, projected: &Tensor<T>, l: usize) -> (Tensor<T>, Tensor<T>) {
        let m = s_prev.dim(0);
        let ws = self.state_proj.forward(s_prev).gather_rows(&repeat_rows(m, l));
        let e = self.score.forward(&ws.add(projected).tanh()).reshape(&[m, l]);
        let alpha = e.softmax_rows(None);
        (alpha.segment_weighted_sum(features), alpha)
    }

    /// Runs `steps` decoding steps over `features (m·l, d_r)`. With
    /// `targets` the previous ground-truth token is fed back (teacher
    /// forcing), otherwise the previous argmax. After an end token the
    /// input is `PAD`.
    pub fn decode(&self, features: &Tensor<T>, m: usize, l: usize, steps: usize, targets: Option<&[Vec<usize>]>) -> DecoderOutput<T> {
        let d_s = self.state_dim();
        let projected = self.project_features(features);
        let mut s = Tensor::zeros(&[m, d_s]);
        let mut c = Tensor::zeros(&[m, d_s]);
        let mut prev = vec![SOS; m];
        let mut tokens = vec![Vec::with_capacity(steps); m];
        let (mut logits, mut states, mut attention) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..steps {
            let (g, alpha) = self.attend(&s, features, &projected, l);
            let x = Tensor::concat_cols(&[g, self.embed.forward(&prev)]);
            (s, c) = self.cell.step(&x, &s, &c);
            let z = self.classifier.forward(&s);
            let v = z.dim(1);
            for i in 0..m {
                let row = &z.data()[i * v..(i + 1) * v];
                let best = (0..v).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                tokens[i].push(best);
                let next = match targets {
                    Some(tg) => tg[i][t],
                    None => best,
                };
                prev[i] = if next == EOS || next == PAD || prev[i] == PAD && t > 0 { PAD } else { next };
            }
            logits.push(z);
            states.push(s.clone());
            attention.push(alpha);
        }
        let order: Vec<usize> = (0..m).flat_map(|i| (0..steps).map(move |t| t * m + i)).collect();
        DecoderOutput {
            logits: Tensor::concat_rows(&logits).gather_rows(&order),
            states: Tensor::concat_rows(&states).gather_rows(&order),
            attention,
            tokens,
            steps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reader<T: Real> {
    encoder: Conv2d<T>,
    pub decoder: AttentionDecoder<T>,
    cfg: ReaderConfig,
}
impl_module!(Reader { sub encoder, sub decoder });

impl<T: Real> Reader<T> {
    pub fn new(init: &mut Init, d: usize, vocab: usize, cfg: &ReaderConfig) -> Self {
        let spec = Conv2dSpec { stride: 1, pad_h: 0, pad_w: 1 };
        Self {
            encoder: Conv2d::new(init, d, cfg.d_r, (cfg.roi_h, 3), spec),
            decoder: AttentionDecoder::new(init, cfg.d_r, cfg.d_s, cfg.attention, cfg.embed, vocab),
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &ReaderConfig {
        &self.cfg
    }

    /// Region features `(m, d, roi_h, roi_w)` and the degenerate-box count.
    pub fn regions(&self, fmap: &SharedFeatureMap<T>, boxes: &[BBox]) -> (Tensor<T>, usize) {
        roi_align(&fmap.data, fmap.stride, boxes, self.cfg.roi_h, self.cfg.roi_w)
    }

    /// Collapses region height into a sequence of `roi_w` columns:
    /// `(m, d, roi_h, roi_w)` gives `(m·roi_w, d_r)`.
    pub fn encode(&self, regions: &Tensor<T>) -> Tensor<T> {
        self.encoder.forward(regions).relu().nchw_to_rows()
    }

    pub fn read(&self, regions: &Tensor<T>, targets: Option<&[Vec<usize>]>) -> DecoderOutput<T> {
        let m = regions.dim(0);
        let f = self.encode(regions);
        self.decoder.decode(&f, m, self.cfg.roi_w, self.cfg.t_max, targets)
    }
}
