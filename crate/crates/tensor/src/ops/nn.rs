use super::elementwise::{grad_if, sigmoid};
use crate::{Real, Tensor};

fn matrix_dims<T: Real>(t: &Tensor<T>, op: &str) -> (usize, usize) {
    assert_eq!(t.rank(), 2, "{op}: expected a matrix, got {:?}", t.shape());
    (t.dim(0), t.dim(1))
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

impl<T: Real> Tensor<T> {
    /// Row-wise softmax. Entries whose `keep` flag is false get exactly zero
    /// weight; a row with no kept entry is all zeros.
    pub fn softmax_rows(&self, keep: Option<&[bool]>) -> Tensor<T> {
        let (n, k) = matrix_dims(self, "softmax_rows");
        if let Some(m) = keep {
            assert_eq!(m.len(), n * k, "softmax_rows: mask length");
        }
        let mut out = vec![T::zero(); n * k];
        for r in 0..n {
            let x = &self.data()[r * k..(r + 1) * k];
            let kept = |j: usize| keep.map_or(true, |m| m[r * k + j]);
            let mx = (0..k).filter(|&j| kept(j)).map(|j| x[j]).fold(T::neg_infinity(), T::max);
            if mx == T::neg_infinity() {
                continue;
            }
            let y = &mut out[r * k..(r + 1) * k];
            let mut z = T::zero();
            for j in 0..k {
                if kept(j) {
                    y[j] = (x[j] - mx).exp();
                    z += y[j];
                }
            }
            y.iter_mut().for_each(|v| *v /= z);
        }
        Tensor::from_op(out, vec![n, k], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); n * k];
                for r in 0..n {
                    let y = &ctx.out[r * k..(r + 1) * k];
                    let gy = &ctx.grad[r * k..(r + 1) * k];
                    let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for j in 0..k {
                        g[r * k + j] = y[j] * (gy[j] - dot);
                    }
                }
                g
            })]
        })
    }

    /// Normalizes each row to zero mean and unit (biased) variance, no affine.
    pub fn layer_norm(&self, eps: f64) -> Tensor<T> {
        let k = *self.shape().last().expect("layer_norm on scalar");
        let eps = T::c(eps);
        let kf = T::c(k as f64);
        let mut out = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(self.numel() / k.max(1));
        for row in self.data().chunks(k) {
            let mean = row.iter().copied().sum::<T>() / kf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / kf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|&v| (v - mean) * is));
        }
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for ((gy, y), &is) in ctx.grad.chunks(k).zip(ctx.out.chunks(k)).zip(&inv_std) {
                    let mg = gy.iter().copied().sum::<T>() / kf;
                    let mgy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / kf;
                    g.extend(gy.iter().zip(y).map(|(&gv, &yv)| is * (gv - mg - yv * mgy)));
                }
                g
            })]
        })
    }

    /// Fused LSTM cell update.
    ///
    /// `self` holds pre-activation gates `(m, 4H)` ordered input, forget,
    /// cell, output; `c_prev` is `(m, H)`. Returns `(m, 2H)` = `[h | c]`.
    pub fn lstm_cell(&self, c_prev: &Tensor<T>) -> Tensor<T> {
        let (m, h4) = matrix_dims(self, "lstm_cell");
        assert_eq!(h4 % 4, 0, "lstm_cell: gate width must be 4H");
        let h = h4 / 4;
        assert_eq!(c_prev.shape(), &[m, h], "lstm_cell: c_prev shape");
        let mut out = vec![T::zero(); m * 2 * h];
        for r in 0..m {
            let a = &self.data()[r * h4..(r + 1) * h4];
            let cp = &c_prev.data()[r * h..(r + 1) * h];
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let g = a[2 * h + j].tanh();
                let o = sigmoid(a[3 * h + j]);
                let c = f * cp[j] + i * g;
                out[r * 2 * h + j] = o * c.tanh();
                out[r * 2 * h + h + j] = c;
            }
        }
        Tensor::from_op(out, vec![m, 2 * h], vec![self.clone(), c_prev.clone()], move |ctx| {
            let (gates, cprev) = (&ctx.parents[0], &ctx.parents[1]);
            let mut ga = vec![T::zero(); m * h4];
            let mut gc = vec![T::zero(); m * h];
            for r in 0..m {
                let a = &gates.data()[r * h4..(r + 1) * h4];
                let cp = &cprev.data()[r * h..(r + 1) * h];
                for j in 0..h {
                    let i = sigmoid(a[j]);
                    let f = sigmoid(a[h + j]);
                    let g = a[2 * h + j].tanh();
                    let o = sigmoid(a[3 * h + j]);
                    let c = ctx.out[r * 2 * h + h + j];
                    let tc = c.tanh();
                    let dh = ctx.grad[r * 2 * h + j];
                    let dc = ctx.grad[r * 2 * h + h + j] + dh * o * (T::one() - tc * tc);
                    ga[r * h4 + j] = dc * g * i * (T::one() - i);
                    ga[r * h4 + h + j] = dc * cp[j] * f * (T::one() - f);
                    ga[r * h4 + 2 * h + j] = dc * i * (T::one() - g * g);
                    ga[r * h4 + 3 * h + j] = dh * tc * o * (T::one() - o);
                    gc[r * h + j] = dc * f;
                }
            }
            vec![gates.requires_grad().then_some(ga), cprev.requires_grad().then_some(gc)]
        })
    }

    /// Weighted negative log-likelihood of `targets` under row-wise softmax of
    /// `self (n, K)`: `Σ_i w_i · (−log p_i[t_i])`. Rows with zero weight are skipped.
    pub fn cross_entropy(&self, targets: &[usize], weights: &[T]) -> Tensor<T> {
        let (n, k) = matrix_dims(self, "cross_entropy");
        assert_eq!(targets.len(), n, "cross_entropy: target count");
        assert_eq!(weights.len(), n, "cross_entropy: weight count");
        let mut total = T::zero();
        for r in 0..n {
            if weights[r] == T::zero() {
                continue;
            }
            assert!(targets[r] < k, "cross_entropy: target {} out of {k}", targets[r]);
            let row = &self.data()[r * k..(r + 1) * k];
            total += weights[r] * (log_sum_exp(row) - row[targets[r]]);
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let x = ctx.parents[0].data();
                let mut g = vec![T::zero(); n * k];
                for r in 0..n {
                    let w = weights[r];
                    if w == T::zero() {
                        continue;
                    }
                    let row = &x[r * k..(r + 1) * k];
                    let lse = log_sum_exp(row);
                    let scale = w * ctx.grad[0];
                    for j in 0..k {
                        g[r * k + j] = scale * (row[j] - lse).exp();
                    }
                    g[r * k + targets[r]] -= scale;
                }
                g
            })]
        })
    }

    /// Weighted binary cross-entropy on logits: `Σ_i w_i · BCE(σ(x_i), t_i)`.
    pub fn bce_with_logits(&self, targets: &[T], weights: &[T]) -> Tensor<T> {
        let n = self.numel();
        assert_eq!(targets.len(), n, "bce_with_logits: target count");
        assert_eq!(weights.len(), n, "bce_with_logits: weight count");
        let mut total = T::zero();
        for ((&x, &t), &w) in self.data().iter().zip(targets).zip(weights) {
            if w != T::zero() {
                total += w * (x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln());
            }
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.parents[0]
                    .data()
                    .iter()
                    .zip(&targets)
                    .zip(&weights)
                    .map(|((&x, &t), &w)| w * (sigmoid(x) - t) * ctx.grad[0])
                    .collect()
            })]
        })
    }

    /// Weighted smooth-L1 (Huber with threshold `beta`) against constant targets.
    pub fn smooth_l1(&self, targets: &[T], weights: &[T], beta: f64) -> Tensor<T> {
        let n = self.numel();
        assert_eq!(targets.len(), n, "smooth_l1: target count");
        assert_eq!(weights.len(), n, "smooth_l1: weight count");
        let beta = T::c(beta);
        let half = T::c(0.5);
        let mut total = T::zero();
        for ((&p, &t), &w) in self.data().iter().zip(targets).zip(weights) {
            if w == T::zero() {
                continue;
            }
            let d = (p - t).abs();
            total += w * if d < beta { half * d * d / beta } else { d - half * beta };
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.parents[0]
                    .data()
                    .iter()
                    .zip(&targets)
                    .zip(&weights)
                    .map(|((&p, &t), &w)| {
                        let d = p - t;
                        let slope = if d.abs() < beta { d / beta } else { d.signum() };
                        w * slope * ctx.grad[0]
                    })
                    .collect()
            })]
        })
    }
}
