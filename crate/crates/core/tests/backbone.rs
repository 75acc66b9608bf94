use docie_core::backbone::Backbone;
use docie_core::config::BackboneConfig;
use docie_core::nn::Init;
use docie_tensor::gradcheck::{check, probe_sum, probe_values};
use docie_tensor::{Real, Tensor};

fn config(widths: Vec<usize>, lateral: bool) -> BackboneConfig {
    BackboneConfig { in_channels: 1, stem: 3, widths, lateral, d: 4, stride: 4 }
}

fn image(seed: u64) -> Vec<f64> {
    probe_values(16 * 16, seed).into_iter().map(|v| 0.5 + 0.5 * v).collect()
}

fn input_gradient_error<T: Real>(eps: f64) -> f64 {
    let net: Backbone<T> = Backbone::new(&mut Init::new(4), &config(vec![3, 4], true));
    check::<T, _>(&[(image(1), vec![1, 1, 16, 16])], eps, |x| probe_sum(&net.forward(&x[0]).unwrap().data, 9)).max_rel_error()
}

#[test]
fn input_gradient_matches_finite_differences_in_float64() {
    let err = input_gradient_error::<f64>(1e-6);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn input_gradient_matches_finite_differences_in_float32() {
    let err = input_gradient_error::<f32>(3e-3);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn shifting_by_the_stride_shifts_interior_cells() {
    let net: Backbone<f32> = Backbone::new(&mut Init::new(6), &config(vec![4], false));
    let (h, w, s) = (32, 48, 4);
    let mut base = vec![0.0f32; h * w];
    let mut shifted = vec![0.0f32; h * w];
    let ink = probe_values(h * w, 3);
    for y in 8..24 {
        for x in 8..36 {
            let v = ink[y * w + x].abs() as f32;
            base[y * w + x] = v;
            shifted[y * w + x + s] = v;
        }
    }
    let a = net.forward(&Tensor::new(base, &[1, 1, h, w])).unwrap().data;
    let b = net.forward(&Tensor::new(shifted, &[1, 1, h, w])).unwrap().data;
    let (c, fh, fw) = (a.dim(1), a.dim(2), a.dim(3));
    let mut worst = 0.0f32;
    for ch in 0..c {
        for y in 1..fh - 1 {
            for x in 2..fw - 2 {
                let p = a.data()[(ch * fh + y) * fw + x];
                let q = b.data()[(ch * fh + y) * fw + x + 1];
                worst = worst.max((p - q).abs());
            }
        }
    }
    assert!(worst < 1e-4, "deviation {worst}");
}
