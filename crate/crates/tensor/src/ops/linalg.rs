use super::elementwise::grad_if;
use crate::real::gemm;
use crate::{Real, Tensor};

fn dims2<T: Real>(t: &Tensor<T>, op: &str) -> (usize, usize) {
    assert_eq!(t.rank(), 2, "{op}: expected a matrix, got {:?}", t.shape());
    (t.dim(0), t.dim(1))
}

impl<T: Real> Tensor<T> {
    /// `(m,k) · (k,n) -> (m,n)`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let (m, k) = dims2(self, "matmul");
        let (k2, n) = dims2(rhs, "matmul");
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(), false, rhs.data(), false, &mut out, false);
        Tensor::from_op(out, vec![m, n], vec![self.clone(), rhs.clone()], move |ctx| {
            let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
            vec![
                grad_if(a, || {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, ctx.grad, false, b.data(), true, &mut ga, false);
                    ga
                }),
                grad_if(b, || {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, a.data(), true, ctx.grad, false, &mut gb, false);
                    gb
                }),
            ]
        })
    }

    /// `(m,k) · (n,k)ᵀ -> (m,n)`.
    pub fn matmul_t(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let (m, k) = dims2(self, "matmul_t");
        let (n, k2) = dims2(rhs, "matmul_t");
        assert_eq!(k, k2, "matmul_t: inner dims {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(), false, rhs.data(), true, &mut out, false);
        Tensor::from_op(out, vec![m, n], vec![self.clone(), rhs.clone()], move |ctx| {
            let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
            vec![
                grad_if(a, || {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, ctx.grad, false, b.data(), false, &mut ga, false);
                    ga
                }),
                grad_if(b, || {
                    let mut gb = vec![T::zero(); n * k];
                    gemm(n, m, k, ctx.grad, true, a.data(), false, &mut gb, false);
                    gb
                }),
            ]
        })
    }

    /// `x · w + b` with `x (m,in)`, `w (in,out)`, `b (out)`.
    pub fn linear(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
        let y = self.matmul(w);
        match b {
            Some(b) => y.add_row(b),
            None => y,
        }
    }

    pub fn transpose(&self) -> Tensor<T> {
        let (m, n) = dims2(self, "transpose");
        let src = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Tensor::from_op(out, vec![n, m], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        g[i * n + j] = ctx.grad[j * m + i];
                    }
                }
                g
            })]
        })
    }
}
