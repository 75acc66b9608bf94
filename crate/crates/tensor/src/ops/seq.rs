use super::elementwise::grad_if;
use crate::{Real, Tensor};

impl<T: Real> Tensor<T> {
    /// Per-segment column-wise max over the first `lens[i]` rows of each
    /// block of `steps` rows. `self (m·steps, k)` gives `(m, k)`; an empty
    /// segment yields a zero row.
    pub fn segment_max_rows(&self, steps: usize, lens: &[usize]) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "segment_max_rows: expected a matrix");
        let k = self.dim(1);
        let m = lens.len();
        assert_eq!(self.dim(0), m * steps, "segment_max_rows: rows != segments·steps");
        let x = self.data();
        let mut out = vec![T::zero(); m * k];
        let mut arg = vec![usize::MAX; m * k];
        for (i, &len) in lens.iter().enumerate() {
            assert!(len <= steps, "segment_max_rows: length {len} > {steps}");
            for c in 0..k {
                let mut best = T::neg_infinity();
                let mut best_row = usize::MAX;
                for p in 0..len {
                    let row = i * steps + p;
                    let v = x[row * k + c];
                    if v > best || best_row == usize::MAX {
                        best = v;
                        best_row = row;
                    }
                }
                if best_row != usize::MAX {
                    out[i * k + c] = best;
                    arg[i * k + c] = best_row;
                }
            }
        }
        let total = self.numel();
        Tensor::from_op(out, vec![m, k], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); total];
                for (o, &row) in arg.iter().enumerate() {
                    if row != usize::MAX {
                        g[row * k + o % k] += ctx.grad[o];
                    }
                }
                g
            })]
        })
    }

    /// Sliding windows of `width` (odd) consecutive rows within each block of
    /// `steps` rows, zero padded at block edges. `(m·steps, k)` gives
    /// `(m·steps, width·k)`; column `q·k + c` holds row offset `q − width/2`.
    pub fn unfold_seq(&self, steps: usize, width: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "unfold_seq: expected a matrix");
        assert!(width % 2 == 1, "unfold_seq: window width must be odd");
        let (rows, k) = (self.dim(0), self.dim(1));
        assert_eq!(rows % steps, 0, "unfold_seq: rows not a multiple of steps");
        let half = (width / 2) as isize;
        let ow = width * k;
        let mut out = vec![T::zero(); rows * ow];
        let mut taps = Vec::new();
        for r in 0..rows {
            let block = r / steps;
            let p = (r % steps) as isize;
            for q in 0..width {
                let sp = p + q as isize - half;
                if sp < 0 || sp >= steps as isize {
                    continue;
                }
                taps.push((r * ow + q * k, (block * steps + sp as usize) * k));
            }
        }
        for &(dst, src) in &taps {
            out[dst..dst + k].copy_from_slice(&self.data()[src..src + k]);
        }
        let total = self.numel();
        Tensor::from_op(out, vec![rows, ow], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); total];
                for &(dst, src) in &taps {
                    g[src..src + k].iter_mut().zip(&ctx.grad[dst..dst + k]).for_each(|(a, &b)| *a += b);
                }
                g
            })]
        })
    }

    /// Per-segment weighted row sum: `self (m, l)` weights over `values (m·l, d)`
    /// gives `(m, d)` with row `i = Σ_j self[i,j] · values[i·l + j]`.
    pub fn segment_weighted_sum(&self, values: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "segment_weighted_sum: weights must be a matrix");
        assert_eq!(values.rank(), 2, "segment_weighted_sum: values must be a matrix");
        let (m, l) = (self.dim(0), self.dim(1));
        let d = values.dim(1);
        assert_eq!(values.dim(0), m * l, "segment_weighted_sum: values rows != m·l");
        let (a, v) = (self.data(), values.data());
        let mut out = vec![T::zero(); m * d];
        for i in 0..m {
            let dst = &mut out[i * d..(i + 1) * d];
            for j in 0..l {
                let w = a[i * l + j];
                let src = &v[(i * l + j) * d..(i * l + j + 1) * d];
                dst.iter_mut().zip(src).for_each(|(o, &x)| *o += w * x);
            }
        }
        Tensor::from_op(out, vec![m, d], vec![self.clone(), values.clone()], move |ctx| {
            let (wt, vals) = (&ctx.parents[0], &ctx.parents[1]);
            vec![
                grad_if(wt, || {
                    let mut g = vec![T::zero(); m * l];
                    for i in 0..m {
                        let gi = &ctx.grad[i * d..(i + 1) * d];
                        for j in 0..l {
                            let src = &vals.data()[(i * l + j) * d..(i * l + j + 1) * d];
                            g[i * l + j] = gi.iter().zip(src).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    g
                }),
                grad_if(vals, || {
                    let mut g = vec![T::zero(); m * l * d];
                    for i in 0..m {
                        let gi = &ctx.grad[i * d..(i + 1) * d];
                        for j in 0..l {
                            let w = wt.data()[i * l + j];
                            let dst = &mut g[(i * l + j) * d..(i * l + j + 1) * d];
                            dst.iter_mut().zip(gi).for_each(|(o, &x)| *o = w * x);
                        }
                    }
                    g
                }),
            ]
        })
    }
}
