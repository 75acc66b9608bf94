//! Residual CNN with top-down fusion producing one shared feature map.

use docie_tensor::{Real, Tensor};

use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::nn::{impl_module, Conv2d, Init};

/// Backbone output: an `(1, d, h, w)` tensor and its stride in pixels.
#[derive(Debug, Clone)]
pub struct SharedFeatureMap<T: Real> {
    pub data: Tensor<T>,
    pub stride: usize,
}

impl<T: Real> SharedFeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.data.dim(1)
    }

    pub fn height(&self) -> usize {
        self.data.dim(2)
    }

    pub fn width(&self) -> usize {
        self.data.dim(3)
    }
}

/// Two 3x3 convolutions with an identity or 1x1 projection shortcut.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Real> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    shortcut: Conv2d<T>,
}
impl_module!(ResidualBlock { sub conv1, sub conv2, sub shortcut });

impl<T: Real> ResidualBlock<T> {
    fn new(init: &mut Init, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            conv1: Conv2d::square(init, c_in, c_out, 3, stride),
            conv2: Conv2d::square(init, c_out, c_out, 3, 1),
            shortcut: Conv2d::square(init, c_in, c_out, 1, stride),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv2.forward(&self.conv1.forward(x).relu());
        y.add(&self.shortcut.forward(x)).relu()
    }
}

#[derive(Debug, Clone)]
pub struct Backbone<T: Real> {
    stem: Conv2d<T>,
    stages: Vec<ResidualBlock<T>>,
    laterals: Vec<Conv2d<T>>,
    smooth: Conv2d<T>,
    cfg: BackboneConfig,
}
impl_module!(Backbone { sub stem, subs stages, subs laterals, sub smooth });

impl<T: Real> Backbone<T> {
    pub fn new(init: &mut Init, cfg: &BackboneConfig) -> Self {
        let stem = Conv2d::square(init, cfg.in_channels, cfg.stem, 3, 2);
        let mut stages = Vec::new();
        let mut c_in = cfg.stem;
        for &w in &cfg.widths {
            stages.push(ResidualBlock::new(init, c_in, w, 2));
            c_in = w;
        }
        let out = cfg.stride.trailing_zeros() as usize - 2;
        let fused = if cfg.lateral { out..cfg.widths.len() } else { out..out + 1 };
        let laterals = fused.map(|k| Conv2d::square(init, cfg.widths[k], cfg.d, 1, 1)).collect();
        let smooth = Conv2d::square(init, cfg.d, cfg.d, 3, 1);
        Self { stem, stages, laterals, smooth, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Stride of the deepest stage; inputs are zero-padded to a multiple of it.
    pub fn granularity(&self) -> usize {
        2 << self.cfg.widths.len()
    }

    /// Features of an `(1, C, H, W)` image tensor. The result has
    /// `ceil(H/s) x ceil(W/s)` cells.
    pub fn forward(&self, image: &Tensor<T>) -> Result<SharedFeatureMap<T>> {
        if image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != self.cfg.in_channels {
            return Err(Error::Input(format!(
                "backbone expects a (1, {}, H, W) image, got {:?}",
                self.cfg.in_channels,
                image.shape()
            )));
        }
        if !image.all_finite() {
            return Err(Error::Input("image contains non-finite pixels".into()));
        }
        let (h, w) = (image.dim(2), image.dim(3));
        let g = self.granularity();
        let x = image.resize_hw(h.div_ceil(g) * g, w.div_ceil(g) * g);
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut cur = self.stem.forward(&x).relu();
        for stage in &self.stages {
            cur = stage.forward(&cur);
            feats.push(cur.clone());
        }
        let out = self.cfg.stride.trailing_zeros() as usize - 2;
        let mut top: Option<Tensor<T>> = None;
        for (k, lat) in self.laterals.iter().enumerate().rev() {
            let f = &feats[out + k];
            let l = lat.forward(f);
            top = Some(match top {
                Some(t) => l.add(&t.upsample_nearest(f.dim(2), f.dim(3))),
                None => l,
            });
        }
        let s = self.cfg.stride;
        let fused = self.smooth.forward(&top.expect("at least one lateral"));
        Ok(SharedFeatureMap { data: fused.resize_hw(h.div_ceil(s), w.div_ceil(s)), stride: s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Module;

    fn cfg() -> BackboneConfig {
        BackboneConfig { in_channels: 1, stem: 4, widths: vec![4, 6, 6, 8], lateral: true, d: 5, stride: 4 }
    }

    #[test]
    fn shape_follows_stride() {
        let b: Backbone<f32> = Backbone::new(&mut Init::new(0), &cfg());
        let f = b.forward(&Tensor::zeros(&[1, 1, 30, 45])).unwrap();
        assert_eq!(f.data.shape(), &[1, 5, 8, 12]);
        assert!(f.data.all_finite());
    }

    #[test]
    fn rejects_non_finite_pixels() {
        let b: Backbone<f32> = Backbone::new(&mut Init::new(0), &cfg());
        let mut px = vec![0.0f32; 64];
        px[3] = f32::NAN;
        assert!(matches!(b.forward(&Tensor::new(px, &[1, 1, 8, 8])), Err(Error::Input(_))));
    }

    #[test]
    fn every_stage_contributes_parameters() {
        let b: Backbone<f32> = Backbone::new(&mut Init::new(0), &cfg());
        let names: Vec<String> = b.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"stages.3.conv2.weight".to_string()));
        assert!(names.contains(&"laterals.3.bias".to_string()));
    }
}
