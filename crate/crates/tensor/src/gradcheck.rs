//! Central finite-difference gradient checking.

use crate::{Real, Tensor};

/// Deterministic pseudo-random values in `[-1, 1)` for probing outputs.
pub fn probe_values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Contracts a tensor with fixed probe weights, giving a scalar whose gradient
/// exercises every output element.
pub fn probe_sum<T: Real>(t: &Tensor<T>, seed: u64) -> Tensor<T> {
    let w = Tensor::from_f64(&probe_values(t.numel(), seed), t.shape());
    t.mul(&w).sum_all()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `∂f/∂inputs` where `f` maps trainable leaves to a scalar.
///
/// Each input is given as `(values, shape)`; the closure is re-run for every
/// perturbed coordinate, so keep the inputs small.
pub fn check<T: Real, F>(inputs: &[(Vec<f64>, Vec<usize>)], eps: f64, f: F) -> GradCheck
where
    F: Fn(&[Tensor<T>]) -> Tensor<T>,
{
    let build = |vals: &[Vec<f64>]| -> Vec<Tensor<T>> {
        vals.iter()
            .zip(inputs)
            .map(|(v, (_, shape))| Tensor::param(v.iter().map(|&x| T::c(x)).collect(), shape))
            .collect()
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let leaves = build(&base);
    let out = f(&leaves);
    assert_eq!(out.numel(), 1, "gradcheck closure must return a scalar");
    out.backward();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| match l.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; l.numel()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for (i, (vals, _)) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(vals.len());
        for j in 0..vals.len() {
            let mut plus = base.clone();
            plus[i][j] += eps;
            let mut minus = base.clone();
            minus[i][j] -= eps;
            let fp = f(&build(&plus)).item().as_f64();
            let fm = f(&build(&minus)).item().as_f64();
            g.push((fp - fm) / (2.0 * eps));
        }
        numeric.push(g);
    }
    let rel_errors = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).collect();
    GradCheck { analytic, numeric, rel_errors }
}
