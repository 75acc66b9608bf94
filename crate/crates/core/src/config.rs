//! Model hyperparameters. `Default` gives the full-size network; `desk()`
//! a reduced one that trains on a single CPU core.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem: usize,
    /// Channel width of each residual stage; every stage halves resolution.
    pub widths: Vec<usize>,
    /// Top-down fusion of deeper stages into the output level.
    pub lateral: bool,
    /// Output channels.
    pub d: usize,
    /// Output stride in input pixels.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub head_channels: usize,
    /// Anchor side lengths in pixels (square-root of the area).
    pub scales: Vec<f32>,
    /// Anchor width-to-height ratios.
    pub ratios: Vec<f32>,
    pub positive_iou: f32,
    pub negative_iou: f32,
    pub samples: usize,
    pub positive_fraction: f32,
    pub score_thresh: f32,
    pub nms_iou: f32,
    pub max_boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderConfig {
    pub roi_h: usize,
    pub roi_w: usize,
    /// Encoder feature width.
    pub d_r: usize,
    /// Decoder state width.
    pub d_s: usize,
    pub embed: usize,
    pub attention: usize,
    /// Decoding steps including the end token.
    pub t_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub kernels: Vec<usize>,
    /// Output channels of each character convolution.
    pub kernel_channels: usize,
    pub d_info: usize,
    pub heads: usize,
    pub layers: usize,
    /// Quantisation bins per box coordinate.
    pub position_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Width of the fused context vector.
    pub d_f: usize,
    /// BiLSTM hidden units per direction.
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub detector: DetectorConfig,
    pub reader: ReaderConfig,
    pub context: ContextConfig,
    pub extractor: ExtractorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig { in_channels: 3, stem: 32, widths: vec![32, 64, 128, 256], lateral: true, d: 64, stride: 4 },
            detector: DetectorConfig {
                head_channels: 64,
                scales: vec![16.0, 32.0, 64.0],
                ratios: vec![1.0, 3.0, 6.0],
                positive_iou: 0.7,
                negative_iou: 0.3,
                samples: 256,
                positive_fraction: 0.5,
                score_thresh: 0.5,
                nms_iou: 0.5,
                max_boxes: 300,
            },
            reader: ReaderConfig { roi_h: 32, roi_w: 256, d_r: 256, d_s: 256, embed: 64, attention: 256, t_max: 32 },
            context: ContextConfig { kernels: vec![3, 5, 7], kernel_channels: 128, d_info: 256, heads: 8, layers: 2, position_bins: 64 },
            extractor: ExtractorConfig { d_f: 256, hidden: 128 },
        }
    }
}

impl ModelConfig {
    /// Reduced widths for single-core CPU training on small grayscale pages.
    pub fn desk() -> Self {
        let full = Self::default();
        Self {
            backbone: BackboneConfig { in_channels: 1, stem: 16, widths: vec![16, 32, 48, 64], lateral: true, d: 32, stride: 4 },
            detector: DetectorConfig {
                head_channels: 32,
                // No ignored band: shifted anchors on thin text lines would
                // otherwise stay unsupervised and score as high as positives.
                negative_iou: 0.7,
                nms_iou: 0.3,
                max_boxes: 64,
                ..full.detector
            },
            reader: ReaderConfig { roi_h: 4, roi_w: 32, d_r: 64, d_s: 128, embed: 32, attention: 64, t_max: 16 },
            context: ContextConfig { kernels: vec![3, 5, 7], kernel_channels: 32, d_info: 64, heads: 4, layers: 2, position_bins: 64 },
            extractor: ExtractorConfig { d_f: 64, hidden: 64 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let b = &self.backbone;
        if b.in_channels != 1 && b.in_channels != 3 {
            return bad(format!("backbone.in_channels must be 1 or 3, got {}", b.in_channels));
        }
        if b.widths.is_empty() || b.widths.contains(&0) || b.d == 0 || b.stem == 0 {
            return bad("backbone widths and d must be positive".into());
        }
        let deepest = 2usize << b.widths.len();
        if !b.stride.is_power_of_two() || b.stride < 4 || b.stride > deepest {
            return bad(format!("backbone.stride must be a power of two in [4, {deepest}], got {}", b.stride));
        }
        let d = &self.detector;
        if d.scales.is_empty() || d.ratios.is_empty() || d.scales.iter().chain(&d.ratios).any(|v| *v <= 0.0) {
            return bad("detector scales and ratios must be non-empty and positive".into());
        }
        if !(d.negative_iou <= d.positive_iou) || d.samples == 0 || !(0.0..=1.0).contains(&d.positive_fraction) {
            return bad("detector sampling parameters are inconsistent".into());
        }
        let r = &self.reader;
        if r.roi_h == 0 || r.roi_w == 0 || r.d_r == 0 || r.d_s == 0 || r.embed == 0 || r.attention == 0 {
            return bad("reader sizes must be positive".into());
        }
        if r.t_max < 2 {
            return bad(format!("reader.t_max must be at least 2, got {}", r.t_max));
        }
        let c = &self.context;
        if c.kernels.is_empty() || c.kernels.iter().any(|k| k % 2 == 0) {
            return bad("context kernels must be non-empty and odd".into());
        }
        if c.heads == 0 || c.d_info % c.heads != 0 {
            return bad(format!("context.d_info {} is not divisible by {} heads", c.d_info, c.heads));
        }
        if c.position_bins == 0 || c.kernel_channels == 0 {
            return bad("context sizes must be positive".into());
        }
        if self.extractor.d_f == 0 || self.extractor.hidden == 0 {
            return bad("extractor sizes must be positive".into());
        }
        Ok(())
    }
}

/// Everything a command reads from a configuration file. Missing
/// sections take their defaults; the model defaults to [`ModelConfig::desk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::desk(), train: TrainConfig::default(), synth: SynthConfig::default() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
