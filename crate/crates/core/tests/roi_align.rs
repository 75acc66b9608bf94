mod common;

use common::roi_align_oracle;
use docie_core::geometry::BBox;
use docie_core::reader::roi_align;
use docie_tensor::gradcheck::{check, probe_sum};
use docie_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    fmap: Vec<f64>,
    boxes: Vec<BBox>,
    oh: usize,
    ow: usize,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..9), rng.gen_range(2..11));
    let stride = [1, 2, 4, 8][rng.gen_range(0..4)];
    let fmap = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (pw, ph) = ((w * stride) as f32, (h * stride) as f32);
    let boxes = (0..rng.gen_range(1..4))
        .map(|_| {
            // Some boxes extend past the map to exercise clamping.
            let x0 = rng.gen_range(-0.1 * pw..0.9 * pw);
            let y0 = rng.gen_range(-0.1 * ph..0.9 * ph);
            BBox::new(x0, y0, x0 + rng.gen_range(0.5..pw), y0 + rng.gen_range(0.5..ph))
        })
        .collect();
    Case { c, h, w, stride, fmap, boxes, oh: rng.gen_range(1..5), ow: rng.gen_range(1..7) }
}

#[test]
fn matches_direct_bilinear_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let k = random_case(&mut rng);
        let fmap = Tensor::<f64>::new(k.fmap.clone(), &[1, k.c, k.h, k.w]);
        let (out, _) = roi_align(&fmap, k.stride, &k.boxes, k.oh, k.ow);
        let expected: Vec<f64> = k
            .boxes
            .iter()
            .flat_map(|b| roi_align_oracle(&k.fmap, k.c, k.h, k.w, k.stride as f64, b, k.oh, k.ow))
            .collect();
        let worst = out.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "deviation {worst}");
    }
}

#[test]
fn float32_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let k = random_case(&mut rng);
        let fmap = Tensor::<f32>::new(k.fmap.iter().map(|&v| v as f32).collect(), &[1, k.c, k.h, k.w]);
        let (out, _) = roi_align(&fmap, k.stride, &k.boxes, k.oh, k.ow);
        let expected: Vec<f64> = k
            .boxes
            .iter()
            .flat_map(|b| roi_align_oracle(&k.fmap, k.c, k.h, k.w, k.stride as f64, b, k.oh, k.ow))
            .collect();
        let worst = out.data().iter().zip(&expected).map(|(&a, b)| (a as f64 - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "deviation {worst}");
    }
}

#[test]
fn gradient_matches_finite_differences_in_float32() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..20 {
        let k = random_case(&mut rng);
        let shape = vec![1, k.c, k.h, k.w];
        let r = check::<f32, _>(&[(k.fmap.clone(), shape)], 1e-2, |x| {
            probe_sum(&roi_align(&x[0], k.stride, &k.boxes, k.oh, k.ow).0, i)
        });
        assert!(r.max_rel_error() < 1e-3, "relative error {}", r.max_rel_error());
    }
}

#[test]
fn box_inside_a_constant_region_reads_that_constant() {
    let mut plane = vec![0.0; 8 * 8];
    for y in 2..6 {
        for x in 2..6 {
            plane[y * 8 + x] = 3.0;
        }
    }
    let fmap = Tensor::<f64>::new(plane, &[1, 1, 8, 8]);
    let (out, _) = roi_align(&fmap, 2, &[BBox::new(4.0, 4.0, 10.0, 10.0)], 3, 3);
    assert!(out.data().iter().all(|v| (v - 3.0).abs() < 1e-12));
}
