//! Parameterised layers and the parameter visitor shared by all modules.

use docie_tensor::{Conv2dSpec, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named access to the trainable tensors of a module tree.
pub trait Module<T: Real> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Module`] from a field list. Field kinds: `param` (a
/// tensor), `opt` (an optional tensor), `sub` (a module), `subs` (a vector
/// of modules, named by index).
macro_rules! impl_module {
    ($ty:ident { $($kind:ident $field:ident),* $(,)? }) => {
        impl<T: docie_tensor::Real> $crate::nn::Module<T> for $ty<T> {
            fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a docie_tensor::Tensor<T>)>) {
                $( $crate::nn::impl_module!(@visit params, $kind, &self.$field, prefix, stringify!($field), out); )*
            }
            fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut docie_tensor::Tensor<T>)>) {
                $( $crate::nn::impl_module!(@visit params_mut, $kind, &mut self.$field, prefix, stringify!($field), out); )*
            }
        }
    };
    (@visit $m:ident, param, $f:expr, $p:ident, $n:expr, $out:ident) => {
        $out.push(($crate::nn::join($p, $n), $f));
    };
    (@visit $m:ident, opt, $f:expr, $p:ident, $n:expr, $out:ident) => {
        if let Some(t) = $f {
            $out.push(($crate::nn::join($p, $n), t));
        }
    };
    (@visit $m:ident, sub, $f:expr, $p:ident, $n:expr, $out:ident) => {
        $crate::nn::Module::$m($f, &$crate::nn::join($p, $n), $out);
    };
    (@visit $m:ident, subs, $f:expr, $p:ident, $n:expr, $out:ident) => {
        for (i, s) in $f.into_iter().enumerate() {
            $crate::nn::Module::$m(s, &$crate::nn::join($p, &format!("{}.{}", $n, i)), $out);
        }
    };
}
pub(crate) use impl_module;

/// Seeded parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform<T: Real>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(self.rng.gen_range(-bound..=bound))).collect();
        Tensor::param(data, shape)
    }

    pub fn constant<T: Real>(&mut self, shape: &[usize], value: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        Tensor::param(vec![T::c(value); n], shape)
    }

    /// Glorot uniform.
    pub fn xavier<T: Real>(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
        self.uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// He uniform, for layers followed by a ReLU.
    pub fn kaiming<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.uniform(shape, (6.0 / fan_in as f64).sqrt())
    }
}

/// Affine map `x · w + b`.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}
impl_module!(Linear { param weight, opt bias });

impl<T: Real> Linear<T> {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: init.xavier(&[d_in, d_out], d_in, d_out),
            bias: bias.then(|| init.constant(&[d_out], 0.0)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.linear(&self.weight, self.bias.as_ref())
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(1)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub spec: Conv2dSpec,
}
impl_module!(Conv2d { param weight, opt bias });

impl<T: Real> Conv2d<T> {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, kernel: (usize, usize), spec: Conv2dSpec) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        Self {
            weight: init.kaiming(&[c_out, c_in, kernel.0, kernel.1], fan_in),
            bias: Some(init.constant(&[c_out], 0.0)),
            spec,
        }
    }

    /// Square kernel with "same" padding for odd sizes.
    pub fn square(init: &mut Init, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self::new(init, c_in, c_out, (k, k), Conv2dSpec::new(stride, k / 2))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding<T: Real> {
    pub table: Tensor<T>,
}
impl_module!(Embedding { param table });

impl<T: Real> Embedding<T> {
    pub fn new(init: &mut Init, n: usize, d: usize) -> Self {
        Self { table: init.uniform(&[n, d], (3.0 / d as f64).sqrt()) }
    }

    pub fn forward(&self, idx: &[usize]) -> Tensor<T> {
        self.table.gather_rows(idx)
    }
}

/// Row-wise normalisation followed by a learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}
impl_module!(LayerNorm { param gamma, param beta });

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm<T> {
    pub fn new(init: &mut Init, d: usize) -> Self {
        Self { gamma: init.constant(&[d], 1.0), beta: init.constant(&[d], 0.0) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.layer_norm(LAYER_NORM_EPS).mul_row(&self.gamma).add_row(&self.beta)
    }
}

/// LSTM cell with separate input and recurrent weights.
#[derive(Debug, Clone)]
pub struct LstmCell<T: Real> {
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}
impl_module!(LstmCell { param w_input, param w_hidden, param bias });

impl<T: Real> LstmCell<T> {
    pub fn new(init: &mut Init, d_in: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = vec![T::zero(); 4 * hidden];
        // Forget gate starts open.
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = T::one());
        Self {
            w_input: init.uniform(&[d_in, 4 * hidden], bound),
            w_hidden: init.uniform(&[hidden, 4 * hidden], bound),
            bias: Tensor::param(bias, &[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.dim(0)
    }

    /// Input contribution to the gates, computable for all steps at once.
    pub fn project_input(&self, x: &Tensor<T>) -> Tensor<T> {
        x.linear(&self.w_input, Some(&self.bias))
    }

    /// One step from projected input gates. Returns `(h, c)`.
    pub fn step_projected(&self, gates_x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let hd = self.hidden();
        let out = gates_x.add(&h.matmul(&self.w_hidden)).lstm_cell(c);
        (out.slice_cols(0, hd), out.slice_cols(hd, 2 * hd))
    }

    pub fn step(&self, x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        self.step_projected(&self.project_input(x), h, c)
    }
}

/// Bidirectional LSTM over a batch of padded sequences stored text-major:
/// row `i·steps + t` is step `t` of sequence `i`.
#[derive(Debug, Clone)]
pub struct BiLstm<T: Real> {
    pub forward: LstmCell<T>,
    pub backward: LstmCell<T>,
}
impl_module!(BiLstm { sub forward, sub backward });

impl<T: Real> BiLstm<T> {
    pub fn new(init: &mut Init, d_in: usize, hidden: usize) -> Self {
        Self { forward: LstmCell::new(init, d_in, hidden), backward: LstmCell::new(init, d_in, hidden) }
    }

    /// `x (m·steps, d_in)` with per-sequence lengths gives `(m·steps, 2H)`.
    /// Rows past a sequence's length are computed but never influence rows
    /// within it.
    pub fn run(&self, x: &Tensor<T>, steps: usize, lens: &[usize]) -> Tensor<T> {
        let m = lens.len();
        assert_eq!(x.dim(0), m * steps, "BiLstm: rows != sequences·steps");
        // Reversal within each valid prefix; an involution, so it also undoes itself.
        let reverse: Vec<usize> = (0..m)
            .flat_map(|i| (0..steps).map(move |t| if t < lens[i] { i * steps + lens[i] - 1 - t } else { i * steps + t }))
            .collect();
        let fwd = run_direction(&self.forward, x, m, steps);
        let bwd = run_direction(&self.backward, &x.gather_rows(&reverse), m, steps).gather_rows(&reverse);
        Tensor::concat_cols(&[fwd, bwd])
    }
}

fn run_direction<T: Real>(cell: &LstmCell<T>, x: &Tensor<T>, m: usize, steps: usize) -> Tensor<T> {
    let hd = cell.hidden();
    let gates = cell.project_input(x);
    let mut h = Tensor::zeros(&[m, hd]);
    let mut c = Tensor::zeros(&[m, hd]);
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let rows: Vec<usize> = (0..m).map(|i| i * steps + t).collect();
        (h, c) = cell.step_projected(&gates.gather_rows(&rows), &h, &c);
        outs.push(h.clone());
    }
    // Time-major (t·m + i) back to text-major (i·steps + t).
    let order: Vec<usize> = (0..m).flat_map(|i| (0..steps).map(move |t| t * m + i)).collect();
    Tensor::concat_rows(&outs).gather_rows(&order)
}

/// Row `i` repeated `k` times for each of `m` rows.
pub fn repeat_rows(m: usize, k: usize) -> Vec<usize> {
    (0..m).flat_map(|i| std::iter::repeat(i).take(k)).collect()
}

/// Per-row 0/1 mask expanded to every element of a `(rows, width)` matrix.
pub fn row_mask<T: Real>(keep: &[bool], width: usize) -> Vec<T> {
    keep.iter().flat_map(|&k| std::iter::repeat(if k { T::one() } else { T::zero() }).take(width)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visitor_names_nested_params() {
        let mut init = Init::new(0);
        let lstm: BiLstm<f32> = BiLstm::new(&mut init, 3, 2);
        let names: Vec<String> = lstm.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "forward.w_input");
        assert_eq!(names[5], "backward.bias");
        assert_eq!(lstm.num_params(), 2 * (3 * 8 + 2 * 8 + 8));
    }

    #[test]
    fn bilstm_ignores_padding_rows() {
        let mut init = Init::new(1);
        let lstm: BiLstm<f64> = BiLstm::new(&mut init, 2, 3);
        let mut a: Vec<f64> = (0..8).map(|v| v as f64 * 0.1).collect();
        let x1 = Tensor::new(a.clone(), &[4, 2]);
        a[6] = 9.0;
        a[7] = -9.0;
        let x2 = Tensor::new(a, &[4, 2]);
        let y1 = lstm.run(&x1, 4, &[3]);
        let y2 = lstm.run(&x2, 4, &[3]);
        assert_eq!(y1.data()[..18], y2.data()[..18]);
    }
}
