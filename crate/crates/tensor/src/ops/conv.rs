use super::elementwise::grad_if;
use crate::real::gemm;
use crate::{Real, Tensor};

/// Geometry of a 2-D convolution over an NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad_h: pad, pad_w: pad }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        assert!(h + 2 * self.pad_h >= kh && w + 2 * self.pad_w >= kw, "conv kernel larger than padded input");
        (
            (h + 2 * self.pad_h - kh) / self.stride + 1,
            (w + 2 * self.pad_w - kw) / self.stride + 1,
        )
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every (column-matrix index, input index) pair that lies inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (s, ph, pw) = (self.spec.stride as isize, self.spec.pad_h as isize, self.spec.pad_w as isize);
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for oy in 0..self.ho {
                        let y = oy as isize * s - ph + i as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let base_in = (c * self.h + y as usize) * self.w;
                        let base_col = row * self.plane() + oy * self.wo;
                        for ox in 0..self.wo {
                            let x = ox as isize * s - pw + j as isize;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            f(base_col + ox, base_in + x as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|ci, ii| cols[ci] = image[ii]);
    }

    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        self.for_each_tap(|ci, ii| image[ii] += cols[ci]);
    }
}

impl<T: Real> Tensor<T> {
    /// 2-D convolution. `self (N,C,H,W)`, `weight (O,C,kh,kw)`, `bias (O)`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "conv2d: input must be NCHW, got {:?}", self.shape());
        assert_eq!(weight.rank(), 4, "conv2d: weight must be OCHW");
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (o, wc, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        assert_eq!(c, wc, "conv2d: channel mismatch {c} vs {wc}");
        let (ho, wo) = spec.output_size(h, w, kh, kw);
        let g = Geometry { c, h, w, kh, kw, ho, wo, spec };
        let (patch, plane) = (g.patch(), g.plane());

        let mut out = vec![T::zero(); n * o * plane];
        let mut cols = vec![T::zero(); patch * plane];
        for b in 0..n {
            g.im2col(&self.data()[b * c * h * w..(b + 1) * c * h * w], &mut cols);
            let dst = &mut out[b * o * plane..(b + 1) * o * plane];
            gemm(o, patch, plane, weight.data(), false, &cols, false, dst, false);
            if let Some(bias) = bias {
                for (oc, &bv) in bias.data().iter().enumerate() {
                    dst[oc * plane..(oc + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            assert_eq!(b.numel(), o, "conv2d: bias length");
            parents.push(b.clone());
        }
        Tensor::from_op(out, vec![n, o, ho, wo], parents, move |ctx| {
            let (x, wt) = (&ctx.parents[0], &ctx.parents[1]);
            let need_x = x.requires_grad();
            let need_w = wt.requires_grad();
            let mut gx = need_x.then(|| vec![T::zero(); x.numel()]);
            let mut gw = need_w.then(|| vec![T::zero(); wt.numel()]);
            let mut cols = vec![T::zero(); patch * plane];
            let mut dcols = vec![T::zero(); patch * plane];
            for b in 0..n {
                let gout = &ctx.grad[b * o * plane..(b + 1) * o * plane];
                if let Some(gw) = gw.as_mut() {
                    g.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], &mut cols);
                    gemm(o, plane, patch, gout, false, &cols, true, gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(patch, o, plane, wt.data(), true, gout, false, &mut dcols, false);
                    g.col2im(&dcols, &mut gx[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
            let mut grads = vec![gx, gw];
            if let Some(bp) = ctx.parents.get(2) {
                grads.push(grad_if(bp, || {
                    let mut gb = vec![T::zero(); o];
                    for b in 0..n {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            let start = (b * o + oc) * plane;
                            *acc += ctx.grad[start..start + plane].iter().copied().sum();
                        }
                    }
                    gb
                }));
            }
            grads
        })
    }

    /// Nearest-neighbour resize of an NCHW tensor to `(out_h, out_w)`.
    pub fn upsample_nearest(&self, out_h: usize, out_w: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "upsample_nearest: expected NCHW");
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let src_index: Vec<usize> = (0..out_h)
            .flat_map(|y| {
                let sy = (y * h / out_h).min(h - 1);
                (0..out_w).map(move |x| sy * w + (x * w / out_w).min(w - 1))
            })
            .collect();
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let src = &self.data()[p * h * w..(p + 1) * h * w];
            out.extend(src_index.iter().map(|&i| src[i]));
        }
        Tensor::from_op(out, vec![n, c, out_h, out_w], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); planes * h * w];
                let op = out_h * out_w;
                for p in 0..planes {
                    for (k, &i) in src_index.iter().enumerate() {
                        g[p * h * w + i] += ctx.grad[p * op + k];
                    }
                }
                g
            })]
        })
    }

    /// Copies the top-left `(out_h, out_w)` window of an NCHW tensor, zero
    /// filling where the window extends past the input (pads bottom/right or crops).
    pub fn resize_hw(&self, out_h: usize, out_w: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "resize_hw: expected NCHW");
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (ch, cw) = (h.min(out_h), w.min(out_w));
        let planes = n * c;
        let mut out = vec![T::zero(); planes * out_h * out_w];
        for p in 0..planes {
            for y in 0..ch {
                let src = (p * h + y) * w;
                let dst = (p * out_h + y) * out_w;
                out[dst..dst + cw].copy_from_slice(&self.data()[src..src + cw]);
            }
        }
        Tensor::from_op(out, vec![n, c, out_h, out_w], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for y in 0..ch {
                        let src = (p * h + y) * w;
                        let dst = (p * out_h + y) * out_w;
                        g[src..src + cw].copy_from_slice(&ctx.grad[dst..dst + cw]);
                    }
                }
                g
            })]
        })
    }

    /// Mean over the spatial axes of an NCHW tensor, giving `(N, C)`.
    pub fn spatial_mean(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "spatial_mean: expected NCHW");
        let (n, c) = (self.dim(0), self.dim(1));
        let plane = self.dim(2) * self.dim(3);
        let inv = T::one() / T::c(plane as f64);
        let out = self.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Tensor::from_op(out, vec![n, c], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                ctx.grad.iter().flat_map(|&g| std::iter::repeat(g * inv).take(plane)).collect()
            })]
        })
    }

    /// Reorders `(N,C,H,W)` into a matrix of `(N·H·W, C)` feature rows.
    pub fn nchw_to_rows(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "nchw_to_rows: expected NCHW");
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let plane = h * w;
        let src = self.data();
        let mut out = vec![T::zero(); n * plane * c];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..plane {
                    out[(b * plane + p) * c + ch] = src[(b * c + ch) * plane + p];
                }
            }
        }
        Tensor::from_op(out, vec![n * plane, c], vec![self.clone()], move |ctx| {
            vec![grad_if(&ctx.parents[0], || {
                let mut g = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..plane {
                            g[(b * c + ch) * plane + p] = ctx.grad[(b * plane + p) * c + ch];
                        }
                    }
                }
                g
            })]
        })
    }
}
