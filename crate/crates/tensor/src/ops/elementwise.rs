use crate::{Real, Tensor};

pub(crate) fn grad_if<T: Real>(p: &Tensor<T>, f: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    if p.requires_grad() {
        Some(f())
    } else {
        None
    }
}

fn assert_same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "add");
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            vec![
                grad_if(&ctx.parents[0], || ctx.grad.to_vec()),
                grad_if(&ctx.parents[1], || ctx.grad.to_vec()),
            ]
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "sub");
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            vec![
                grad_if(&ctx.parents[0], || ctx.grad.to_vec()),
                grad_if(&ctx.parents[1], || ctx.grad.iter().map(|&g| -g).collect()),
            ]
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "mul");
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
            vec![
                grad_if(a, || ctx.grad.iter().zip(b.data()).map(|(&g, &y)| g * y).collect()),
                grad_if(b, || ctx.grad.iter().zip(a.data()).map(|(&g, &x)| g * x).collect()),
            ]
        })
    }

    /// Sum of several same-shaped tensors.
    pub fn sum_of(items: &[Tensor<T>]) -> Tensor<T> {
        assert!(!items.is_empty(), "sum_of: empty input");
        let shape = items[0].shape().to_vec();
        let mut data = items[0].to_vec();
        for t in &items[1..] {
            assert_eq!(t.shape(), &shape[..], "sum_of: shape mismatch");
            data.iter_mut().zip(t.data()).for_each(|(a, &b)| *a += b);
        }
        Tensor::from_op(data, shape, items.to_vec(), |ctx| {
            ctx.parents.iter().map(|p| grad_if(p, || ctx.grad.to_vec())).collect()
        })
    }

    /// Multiplication by a constant.
    pub fn scale(&self, factor: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || ctx.grad.iter().map(|&g| g * factor).collect())]
        })
    }

    /// Multiplication by a one-element tensor (e.g. a learned scalar weight).
    pub fn mul_scalar(&self, s: &Tensor<T>) -> Tensor<T> {
        assert_eq!(s.numel(), 1, "mul_scalar: expected one-element factor");
        let k = s.item();
        let data = self.data().iter().map(|&a| a * k).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), s.clone()], |ctx| {
            let (x, s) = (&ctx.parents[0], &ctx.parents[1]);
            let k = s.item();
            vec![
                grad_if(x, || ctx.grad.iter().map(|&g| g * k).collect()),
                grad_if(s, || vec![ctx.grad.iter().zip(x.data()).map(|(&g, &v)| g * v).sum()]),
            ]
        })
    }

    /// Adds `row` (length = last dim) to every row.
    pub fn add_row(&self, row: &Tensor<T>) -> Tensor<T> {
        let k = *self.shape().last().expect("add_row on scalar");
        assert_eq!(row.numel(), k, "add_row: width mismatch");
        let r = row.data();
        let data = self.data().chunks(k).flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a + b)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), row.clone()], move |ctx| {
            vec![
                grad_if(&ctx.parents[0], || ctx.grad.to_vec()),
                grad_if(&ctx.parents[1], || {
                    let mut acc = vec![T::zero(); k];
                    for c in ctx.grad.chunks(k) {
                        acc.iter_mut().zip(c).for_each(|(a, &g)| *a += g);
                    }
                    acc
                }),
            ]
        })
    }

    /// Multiplies every row elementwise by `row` (length = last dim).
    pub fn mul_row(&self, row: &Tensor<T>) -> Tensor<T> {
        let k = *self.shape().last().expect("mul_row on scalar");
        assert_eq!(row.numel(), k, "mul_row: width mismatch");
        let r = row.data();
        let data = self.data().chunks(k).flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a * b)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), row.clone()], move |ctx| {
            let (x, r) = (&ctx.parents[0], &ctx.parents[1]);
            vec![
                grad_if(x, || {
                    ctx.grad
                        .chunks(k)
                        .flat_map(|g| g.iter().zip(r.data()).map(|(&g, &w)| g * w))
                        .collect()
                }),
                grad_if(r, || {
                    let mut acc = vec![T::zero(); k];
                    for (g, xv) in ctx.grad.chunks(k).zip(x.data().chunks(k)) {
                        for j in 0..k {
                            acc[j] += g[j] * xv[j];
                        }
                    }
                    acc
                }),
            ]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.max(T::zero())).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.grad
                    .iter()
                    .zip(ctx.out)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect()
            })]
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.grad.iter().zip(ctx.out).map(|(&g, &y)| g * (T::one() - y * y)).collect()
            })]
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| sigmoid(a)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.grad.iter().zip(ctx.out).map(|(&g, &y)| g * y * (T::one() - y)).collect()
            })]
        })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], |ctx| {
            let n = ctx.parents[0].numel();
            vec![grad_if(&ctx.parents[0], || vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().scale(T::one() / T::c(n as f64))
    }

    /// Multiplies by a constant mask of the same shape (no gradient to the mask).
    pub fn mask(&self, mask: &[T]) -> Tensor<T> {
        assert_eq!(mask.len(), self.numel(), "mask: length mismatch");
        let m = mask.to_vec();
        let data = self.data().iter().zip(&m).map(|(&a, &b)| a * b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || ctx.grad.iter().zip(&m).map(|(&g, &b)| g * b).collect())]
        })
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
