use super::elementwise::grad_if;
use crate::{Real, Tensor};

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape {:?} -> {shape:?}",
            self.shape()
        );
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |ctx| {
            vec![grad_if(&ctx.parents[0], || ctx.grad.to_vec())]
        })
    }

    /// Number of rows when the tensor is viewed as `(dim0, rest)`.
    pub fn rows(&self) -> usize {
        self.shape().first().copied().unwrap_or(1)
    }

    /// Row length when the tensor is viewed as `(dim0, rest)`.
    pub fn row_len(&self) -> usize {
        self.shape().iter().skip(1).product()
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(items: &[Tensor<T>]) -> Tensor<T> {
        assert!(!items.is_empty(), "concat_cols: empty input");
        let n = items[0].dim(0);
        let widths: Vec<usize> = items
            .iter()
            .map(|t| {
                assert_eq!(t.rank(), 2, "concat_cols: expected matrices");
                assert_eq!(t.dim(0), n, "concat_cols: row count mismatch");
                t.dim(1)
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (t, &w) in items.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        Tensor::from_op(out, vec![n, total], items.to_vec(), move |ctx| {
            let mut offset = 0;
            widths
                .iter()
                .zip(ctx.parents)
                .map(|(&w, p)| {
                    let start = offset;
                    offset += w;
                    grad_if(p, || {
                        let mut g = Vec::with_capacity(n * w);
                        for r in 0..n {
                            g.extend_from_slice(&ctx.grad[r * total + start..r * total + start + w]);
                        }
                        g
                    })
                })
                .collect()
        })
    }

    /// Stacks tensors along the first axis; trailing dims must agree.
    pub fn concat_rows(items: &[Tensor<T>]) -> Tensor<T> {
        assert!(!items.is_empty(), "concat_rows: empty input");
        let tail: Vec<usize> = items[0].shape()[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        let mut lens = Vec::with_capacity(items.len());
        for t in items {
            assert_eq!(&t.shape()[1..], &tail[..], "concat_rows: trailing dims mismatch");
            rows += t.dim(0);
            lens.push(t.numel());
            out.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        Tensor::from_op(out, shape, items.to_vec(), move |ctx| {
            let mut offset = 0;
            lens.iter()
                .zip(ctx.parents)
                .map(|(&len, p)| {
                    let start = offset;
                    offset += len;
                    grad_if(p, || ctx.grad[start..start + len].to_vec())
                })
                .collect()
        })
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "slice_cols: expected a matrix");
        let (n, k) = (self.dim(0), self.dim(1));
        assert!(start < end && end <= k, "slice_cols: [{start},{end}) out of {k}");
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&self.data()[r * k + start..r * k + end]);
        }
        Tensor::from_op(out, vec![n, w], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); n * k];
                for r in 0..n {
                    g[r * k + start..r * k + end].copy_from_slice(&ctx.grad[r * w..(r + 1) * w]);
                }
                g
            })]
        })
    }

    /// Rows `[start, end)` along the first axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<T> {
        let rows = self.rows();
        assert!(start < end && end <= rows, "slice_rows: [{start},{end}) out of {rows}");
        let rl = self.row_len();
        let out = self.data()[start * rl..end * rl].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        let total = self.numel();
        Tensor::from_op(out, shape, vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); total];
                g[start * rl..end * rl].copy_from_slice(ctx.grad);
                g
            })]
        })
    }

    /// Selects rows (first axis) by index; repeated indices accumulate gradient.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<T> {
        let rows = self.rows();
        let rl = self.row_len();
        let mut out = Vec::with_capacity(idx.len() * rl);
        for &i in idx {
            assert!(i < rows, "gather_rows: index {i} out of {rows}");
            out.extend_from_slice(&self.data()[i * rl..(i + 1) * rl]);
        }
        let mut shape = self.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = idx.len();
        let idx = idx.to_vec();
        let total = self.numel();
        Tensor::from_op(out, shape, vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); total];
                for (o, &i) in idx.iter().enumerate() {
                    let dst = &mut g[i * rl..(i + 1) * rl];
                    dst.iter_mut().zip(&ctx.grad[o * rl..(o + 1) * rl]).for_each(|(a, &b)| *a += b);
                }
                g
            })]
        })
    }
}
