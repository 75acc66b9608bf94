use docie_tensor::gradcheck::probe_values;
use docie_tensor::{sigmoid, Conv2dSpec, Tensor};
use proptest::prelude::*;

fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[f64],
    spec: Conv2dSpec,
) -> Vec<f64> {
    let ho = (h + 2 * spec.pad_h - kh) / spec.stride + 1;
    let wo = (w + 2 * spec.pad_w - kw) / spec.stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * spec.stride + i) as isize - spec.pad_h as isize;
                                let xx = (ox * spec.stride + j) as isize - spec.pad_w as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + y as usize) * w + xx as usize]
                                    * wt[((oc * c + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_summation() {
    let x = probe_values(2 * 3 * 7 * 6, 1);
    let w = probe_values(4 * 3 * 3 * 2, 2);
    let b = probe_values(4, 3);
    for spec in [Conv2dSpec::new(1, 0), Conv2dSpec::new(2, 1), Conv2dSpec { stride: 1, pad_h: 2, pad_w: 0 }] {
        let xt = Tensor::<f64>::new(x.clone(), &[2, 3, 7, 6]);
        let wt = Tensor::<f64>::new(w.clone(), &[4, 3, 3, 2]);
        let bt = Tensor::<f64>::new(b.clone(), &[4]);
        let got = xt.conv2d(&wt, Some(&bt), spec);
        let want = naive_conv(&x, (2, 3, 7, 6), &w, (4, 3, 2), &b, spec);
        assert_eq!(got.numel(), want.len());
        for (g, e) in got.data().iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5], &[2, 3]);
    let y = x.softmax_rows(Some(&[true, false, true, false, false, false]));
    let d = y.data();
    assert_eq!(d[1], 0.0);
    assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
    assert!((d[2] / d[0] - 2f64.exp()).abs() < 1e-9);
    assert_eq!(&d[3..], &[0.0, 0.0, 0.0]);
}

#[test]
fn lstm_cell_matches_gate_equations() {
    let gates = probe_values(8, 4);
    let c_prev = probe_values(2, 5);
    let out = Tensor::<f64>::new(gates.clone(), &[1, 8]).lstm_cell(&Tensor::new(c_prev.clone(), &[1, 2]));
    for j in 0..2 {
        let (i, f, g, o) = (sigmoid(gates[j]), sigmoid(gates[2 + j]), gates[4 + j].tanh(), sigmoid(gates[6 + j]));
        let c = f * c_prev[j] + i * g;
        assert!((out.data()[2 + j] - c).abs() < 1e-14);
        assert!((out.data()[j] - o * c.tanh()).abs() < 1e-14);
    }
}

#[test]
fn gradients_accumulate_on_leaves_and_stop_at_detach() {
    let w = Tensor::<f64>::param(vec![2.0, -1.0], &[2]);
    w.mul(&w).sum_all().backward();
    w.sum_all().backward();
    assert_eq!(w.grad().unwrap(), vec![5.0, -1.0]);

    let v = Tensor::<f64>::param(vec![3.0], &[1]);
    let y = v.detach().mul(&v);
    y.backward();
    assert_eq!(v.grad().unwrap(), vec![3.0]);
    w.zero_grad();
    assert!(w.grad().is_none());
}

#[test]
fn uniform_logits_give_log_k() {
    let k = 7;
    let x = Tensor::<f64>::zeros(&[1, k]);
    let loss = x.cross_entropy(&[3], &[1.0]).item();
    assert!((loss - (k as f64).ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn matmul_agrees_with_triple_loop(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let a = probe_values(m * k, seed);
        let b = probe_values(k * n, seed + 1);
        let c = Tensor::<f64>::new(a.clone(), &[m, k]).matmul(&Tensor::new(b.clone(), &[k, n]));
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                prop_assert!((c.data()[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(vals in proptest::collection::vec(-50.0f64..50.0, 8)) {
        prop_assume!(vals.iter().any(|v| (v - vals[0]).abs() > 1e-3));
        let y = Tensor::<f64>::new(vals, &[1, 8]).layer_norm(1e-12);
        let mean: f64 = y.data().iter().sum::<f64>() / 8.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}
