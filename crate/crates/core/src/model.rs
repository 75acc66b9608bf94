//! The complete network: backbone, detector, reader, context block and
//! extractor, with training and inference forward passes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use docie_tensor::{Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, SharedFeatureMap};
use crate::config::ModelConfig;
use crate::context::{ContextBlock, ContextFeatures};
use crate::corpus::{DocumentSample, EntitySchema, Tag, Vocabulary};
use crate::detector::DetectorHead;
use crate::error::{Error, Result};
use crate::extractor::iob::{entity_spans, EntityMap};
use crate::extractor::{decode_tags, ContextUse, Extractor};
use crate::geometry::BBox;
use crate::nn::{impl_module, Init};
use crate::raster::Raster;
use crate::reader::{DecoderOutput, Reader};

/// Context configuration of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Character states only.
    #[serde(rename = "text")]
    Text,
    /// Adds the visual context of each text.
    #[serde(rename = "text+vis")]
    TextVisual,
    /// Adds the textual context across texts.
    #[serde(rename = "text+ctx")]
    TextContext,
    /// Both context vectors, adaptively fused.
    #[serde(rename = "full")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Text, Ablation::TextVisual, Ablation::TextContext, Ablation::Full];

    pub fn context_use(self) -> ContextUse {
        match self {
            Ablation::Text => ContextUse { visual: false, textual: false },
            Ablation::TextVisual => ContextUse { visual: true, textual: false },
            Ablation::TextContext => ContextUse { visual: false, textual: true },
            Ablation::Full => ContextUse::FULL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Text => "text",
            Ablation::TextVisual => "text+vis",
            Ablation::TextContext => "text+ctx",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected text, text+vis, text+ctx or full")))
    }
}

/// Switches applied during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardMode {
    pub context: ContextUse,
    /// When false, extraction sees detached reader outputs, so its loss
    /// does not reach the reader or the backbone.
    pub end_to_end: bool,
}

impl Default for ForwardMode {
    fn default() -> Self {
        Self { context: ContextUse::FULL, end_to_end: true }
    }
}

/// Everything a training step needs from one document, plus intermediate
/// tensors for inspection.
pub struct TrainForward<T: Real> {
    pub det_cls: Tensor<T>,
    pub det_reg: Tensor<T>,
    pub fmap: SharedFeatureMap<T>,
    pub regions: Tensor<T>,
    pub decoder: DecoderOutput<T>,
    pub rec_targets: Vec<Vec<usize>>,
    pub context: Option<ContextFeatures<T>>,
    pub fused: Tensor<T>,
    pub tag_logits: Tensor<T>,
    pub tag_targets: Vec<Vec<Tag>>,
    /// Characters per text after truncation to the decoder length.
    pub lens: Vec<usize>,
    pub steps: usize,
}

/// An extracted entity value and the text it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInstance {
    pub text: String,
    #[serde(rename = "box")]
    pub box_index: usize,
}

/// Inference result for one document, texts in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentPrediction {
    pub boxes: Vec<BBox>,
    /// Detector confidences; absent when boxes were supplied.
    pub scores: Option<Vec<f32>>,
    pub transcripts: Vec<String>,
    pub tags: Vec<Vec<Tag>>,
    pub entities: BTreeMap<String, Vec<EntityInstance>>,
}

impl DocumentPrediction {
    pub fn entity_map(&self) -> EntityMap {
        self.entities.iter().map(|(k, v)| (k.clone(), v.iter().map(|e| e.text.clone()).collect())).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DocModel<T: Real> {
    pub backbone: Backbone<T>,
    pub detector: DetectorHead<T>,
    pub reader: Reader<T>,
    pub context: ContextBlock<T>,
    pub extractor: Extractor<T>,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub schema: EntitySchema,
}
impl_module!(DocModel { sub backbone, sub detector, sub reader, sub context, sub extractor });

/// Reading order: top to bottom, then left to right.
pub fn reading_order(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].y0.total_cmp(&boxes[b].y0).then(boxes[a].x0.total_cmp(&boxes[b].x0)).then(a.cmp(&b)));
    order
}

impl<T: Real> DocModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, schema: EntitySchema, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let b = &config.backbone;
        let backbone = Backbone::new(&mut init, b);
        let detector = DetectorHead::new(&mut init, b.d, &config.detector);
        let reader = Reader::new(&mut init, b.d, vocab.len(), &config.reader);
        let context = ContextBlock::new(&mut init, config.reader.d_s, &config.context);
        let extractor = Extractor::new(
            &mut init,
            b.d,
            config.reader.d_s,
            config.context.d_info,
            schema.num_tags(),
            &config.extractor,
        );
        Ok(Self { backbone, detector, reader, context, extractor, config, vocab, schema })
    }

    /// Image as an `(1, C, H, W)` tensor with ink mapped to high values.
    pub fn image_tensor(&self, image: &Raster) -> Tensor<T> {
        let converted = if self.config.backbone.in_channels == 1 { image.to_gray() } else { image.to_rgb() };
        let data = converted.data().iter().map(|&v| T::c(1.0 - v as f64)).collect();
        Tensor::new(data, &[1, converted.channels(), converted.height(), converted.width()])
    }

    pub fn features(&self, image: &Raster) -> Result<SharedFeatureMap<T>> {
        self.backbone.forward(&self.image_tensor(image))
    }

    fn context_and_tags(
        &self,
        regions: &Tensor<T>,
        states: &Tensor<T>,
        lens: &[usize],
        boxes: &[BBox],
        image: &Raster,
        mode: ForwardMode,
    ) -> Result<(Option<ContextFeatures<T>>, Tensor<T>, Tensor<T>)> {
        let steps = self.config.reader.t_max;
        let (regions, states) = if mode.end_to_end { (regions.clone(), states.clone()) } else { (regions.detach(), states.detach()) };
        let (w, h) = (image.width() as f32, image.height() as f32);
        let context = if mode.context.textual {
            Some(self.context.forward(&states, steps, lens, boxes, w, h, None)?)
        } else {
            None
        };
        let fused = self.extractor.fuse(
            mode.context.visual.then_some(&regions),
            context.as_ref().map(|c| &c.features),
            boxes.len(),
        );
        let tag_logits = self.extractor.tag(&states, &fused, steps, lens);
        Ok((context, fused, tag_logits))
    }

    /// Teacher-forced pass over ground-truth boxes and transcripts.
    pub fn forward_train(&self, sample: &DocumentSample, mode: ForwardMode, rng: &mut impl Rng) -> Result<TrainForward<T>> {
        let t_max = self.config.reader.t_max;
        let fmap = self.features(&sample.image)?;
        let raw = self.detector.forward(&fmap);
        let (w, h) = (sample.image.width() as f32, sample.image.height() as f32);
        let (det_cls, det_reg) = self.detector.loss(&raw, &sample.boxes, w, h, rng);
        let (regions, _) = self.reader.regions(&fmap, &sample.boxes);
        let rec_targets: Vec<Vec<usize>> = sample.transcripts.iter().map(|t| self.vocab.encode(t, t_max)).collect();
        let lens: Vec<usize> = sample.transcripts.iter().map(|t| t.chars().count().min(t_max - 1)).collect();
        let decoder = self.reader.read(&regions, Some(&rec_targets));
        let (context, fused, tag_logits) = self.context_and_tags(&regions, &decoder.states, &lens, &sample.boxes, &sample.image, mode)?;
        let tag_targets = sample.char_tags.iter().zip(&lens).map(|(t, &n)| t[..n].to_vec()).collect();
        Ok(TrainForward {
            det_cls,
            det_reg,
            fmap,
            regions,
            decoder,
            rec_targets,
            context,
            fused,
            tag_logits,
            tag_targets,
            lens,
            steps: t_max,
        })
    }

    /// Full inference. Boxes come from the detector unless supplied; no
    /// other ground truth is used.
    pub fn predict(&self, image: &Raster, boxes: Option<&[BBox]>, mode: ForwardMode) -> Result<DocumentPrediction> {
        let fmap = self.features(image)?;
        let (boxes, scores) = match boxes {
            Some(b) => (b.to_vec(), None),
            None => {
                let d = &self.config.detector;
                let raw = self.detector.forward(&fmap);
                let det = self.detector.detect(&raw, image.width() as f32, image.height() as f32, d.score_thresh, d.nms_iou, d.max_boxes);
                let order = reading_order(&det.boxes);
                (order.iter().map(|&i| det.boxes[i]).collect(), Some(order.iter().map(|&i| det.scores[i]).collect()))
            }
        };
        if boxes.is_empty() {
            return Ok(DocumentPrediction { boxes, scores, transcripts: vec![], tags: vec![], entities: BTreeMap::new() });
        }
        let (regions, _) = self.reader.regions(&fmap, &boxes);
        let decoder = self.reader.read(&regions, None);
        let lens = decoder.lengths();
        let transcripts: Vec<String> = decoder.tokens.iter().map(|t| self.vocab.decode(t)).collect();
        let (_, _, tag_logits) = self.context_and_tags(&regions, &decoder.states, &lens, &boxes, image, mode)?;
        let tags = decode_tags(&tag_logits, decoder.steps, &lens);
        let mut entities: BTreeMap<String, Vec<EntityInstance>> = BTreeMap::new();
        for (i, (t, tg)) in transcripts.iter().zip(&tags).enumerate() {
            // Unknown characters decode to a single placeholder, keeping
            // characters and tags aligned.
            let chars: Vec<char> = t.chars().collect();
            for s in entity_spans(tg) {
                if s.end > chars.len() {
                    continue;
                }
                let name = self.schema.entity_names()[s.entity].clone();
                entities.entry(name).or_default().push(EntityInstance { text: chars[s.start..s.end].iter().collect(), box_index: i });
            }
        }
        Ok(DocumentPrediction { boxes, scores, transcripts, tags, entities })
    }
}
