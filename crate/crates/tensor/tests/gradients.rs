use docie_tensor::gradcheck::{check, probe_sum, probe_values};
use docie_tensor::{Conv2dSpec, Tensor};

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn input(n: usize, shape: &[usize], seed: u64) -> (Vec<f64>, Vec<usize>) {
    (probe_values(n, seed), shape.to_vec())
}

fn assert_ok(name: &str, report: docie_tensor::gradcheck::GradCheck) {
    let err = report.max_rel_error();
    assert!(err < TOL, "{name}: relative error {err:e} (per input {:?})", report.rel_errors);
}

#[test]
fn elementwise_ops() {
    let ins = [input(6, &[2, 3], 1), input(6, &[2, 3], 2), input(3, &[3], 3), input(1, &[1], 4)];
    assert_ok(
        "add/sub/mul",
        check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].add(&x[1]).mul(&x[0]).sub(&x[1].scale(0.3)), 9)),
    );
    assert_ok(
        "rows",
        check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].add_row(&x[2]).mul_row(&x[2]).mul_scalar(&x[3]), 9)),
    );
    assert_ok(
        "activations",
        check::<f64, _>(&ins, EPS, |x| {
            probe_sum(&Tensor::sum_of(&[x[0].tanh(), x[1].sigmoid(), x[0].add(&x[1]).relu()]), 5)
        }),
    );
    assert_ok("mean", check::<f64, _>(&ins, EPS, |x| x[0].mask(&[1.0, 0.0, 2.0, 1.0, 1.0, 0.5]).mean_all()));
}

#[test]
fn matrix_ops() {
    let ins = [input(6, &[2, 3], 11), input(12, &[3, 4], 12), input(12, &[4, 3], 13), input(4, &[4], 14)];
    assert_ok("matmul", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].matmul(&x[1]), 3)));
    assert_ok("matmul_t", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].matmul_t(&x[2]), 3)));
    assert_ok("linear", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].linear(&x[1], Some(&x[3])), 3)));
    assert_ok("transpose", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[1].transpose().matmul(&x[0].transpose()), 3)));
}

#[test]
fn shape_ops() {
    let ins = [input(6, &[2, 3], 21), input(4, &[2, 2], 22), input(9, &[3, 3], 23)];
    assert_ok(
        "concat_cols/slice",
        check::<f64, _>(&ins, EPS, |x| {
            let c = Tensor::concat_cols(&[x[0].clone(), x[1].clone()]);
            probe_sum(&c.slice_cols(1, 4).mul(&c.slice_cols(0, 3)), 4)
        }),
    );
    assert_ok(
        "concat_rows/slice_rows/gather",
        check::<f64, _>(&ins, EPS, |x| {
            let c = Tensor::concat_rows(&[x[0].clone(), x[2].clone()]);
            let g = c.gather_rows(&[4, 0, 0, 2]).add(&c.slice_rows(1, 5));
            probe_sum(&g.reshape(&[12]), 4)
        }),
    );
}

#[test]
fn conv_and_spatial_ops() {
    let ins = [input(2 * 2 * 5 * 6, &[2, 2, 5, 6], 31), input(3 * 2 * 3 * 3, &[3, 2, 3, 3], 32), input(3, &[3], 33)];
    for spec in [Conv2dSpec::new(1, 1), Conv2dSpec::new(2, 1), Conv2dSpec { stride: 1, pad_h: 0, pad_w: 1 }] {
        assert_ok(
            "conv2d",
            check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].conv2d(&x[1], Some(&x[2]), spec), 7)),
        );
    }
    assert_ok(
        "upsample/spatial_mean/rows",
        check::<f64, _>(&ins[..1], EPS, |x| {
            let up = x[0].upsample_nearest(9, 11);
            probe_sum(&up.spatial_mean(), 2).add(&probe_sum(&x[0].nchw_to_rows(), 3))
        }),
    );
    assert_ok(
        "resize_hw",
        check::<f64, _>(&ins[..1], EPS, |x| probe_sum(&x[0].resize_hw(7, 4), 2).add(&probe_sum(&x[0].resize_hw(3, 8), 6))),
    );
}

#[test]
fn normalization_and_softmax() {
    let ins = [input(12, &[3, 4], 41)];
    let keep = [true, true, false, true, false, true, true, true, true, false, false, false];
    assert_ok("softmax", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].softmax_rows(None), 5)));
    assert_ok("masked softmax", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].softmax_rows(Some(&keep)), 5)));
    assert_ok("layer_norm", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].layer_norm(1e-5), 6)));
}

#[test]
fn recurrent_and_sequence_ops() {
    let ins = [input(2 * 12, &[2, 12], 51), input(2 * 3, &[2, 3], 52)];
    assert_ok("lstm_cell", check::<f64, _>(&ins, EPS, |x| probe_sum(&x[0].lstm_cell(&x[1]), 8)));

    let seq = [input(8 * 3, &[8, 3], 53), input(2 * 4, &[2, 4], 54)];
    assert_ok(
        "segment_max",
        check::<f64, _>(&seq, EPS, |x| probe_sum(&x[0].segment_max_rows(4, &[3, 4]), 1)),
    );
    assert_ok("unfold_seq", check::<f64, _>(&seq, EPS, |x| probe_sum(&x[0].unfold_seq(4, 3), 1)));
    assert_ok(
        "segment_weighted_sum",
        check::<f64, _>(&seq, EPS, |x| probe_sum(&x[1].segment_weighted_sum(&x[0]), 1)),
    );
}

#[test]
fn losses() {
    let ins = [input(12, &[3, 4], 61)];
    assert_ok(
        "cross_entropy",
        check::<f64, _>(&ins, EPS, |x| x[0].cross_entropy(&[1, 3, 0], &[0.5, 0.0, 2.0])),
    );
    assert_ok(
        "bce",
        check::<f64, _>(&ins, EPS, |x| x[0].bce_with_logits(&[1.0; 12], &[0.7; 12]).add(&x[0].bce_with_logits(&[0.0; 12], &[0.2; 12]))),
    );
    let targets: Vec<f64> = probe_values(12, 62).iter().map(|v| v * 0.5).collect();
    assert_ok("smooth_l1", check::<f64, _>(&ins, EPS, |x| x[0].smooth_l1(&targets, &[1.0; 12], 1.0 / 9.0)));
}
