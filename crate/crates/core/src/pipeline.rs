//! Image-in, entities-out inference and its JSON record.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BBox;
use crate::model::{DocModel, DocumentPrediction, EntityInstance, ForwardMode};
use crate::raster::Raster;

pub const EXTRACTION_VERSION: u32 = 1;

/// Extraction result for one image. Boxes are in the pixel coordinates of
/// the original image, in reading order; `entities` refer to them by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub version: u32,
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BBox>,
    pub scores: Option<Vec<f32>>,
    pub transcripts: Vec<String>,
    pub tags: Vec<Vec<String>>,
    pub entities: BTreeMap<String, Vec<EntityInstance>>,
}

impl ExtractionRecord {
    pub fn new(source: &str, width: usize, height: usize, pred: &DocumentPrediction, schema: &crate::corpus::EntitySchema) -> Self {
        Self {
            version: EXTRACTION_VERSION,
            source: source.to_string(),
            width,
            height,
            boxes: pred.boxes.clone(),
            scores: pred.scores.clone(),
            transcripts: pred.transcripts.clone(),
            tags: pred.tags.iter().map(|t| t.iter().map(|&g| schema.tag_name(g)).collect()).collect(),
            entities: pred.entities.clone(),
        }
    }
}

/// Runs detection, reading and extraction on an image. With `max_side`, the
/// image is downscaled to fit before inference and boxes are mapped back.
pub fn extract_image(model: &DocModel<f32>, image: &Raster, max_side: Option<usize>, mode: ForwardMode) -> Result<DocumentPrediction> {
    let (input, scale) = match max_side {
        Some(s) => image.fit_within(s),
        None => (image.clone(), 1.0),
    };
    let mut pred = model.predict(&input, None, mode)?;
    if scale != 1.0 {
        let (w, h) = (image.width() as f32, image.height() as f32);
        pred.boxes = pred.boxes.iter().map(|b| b.scale(1.0 / scale).clip(w, h)).collect();
    }
    Ok(pred)
}

/// Loads one image file and extracts from it. Only the image is read.
pub fn extract_file(model: &DocModel<f32>, path: &Path, max_side: Option<usize>, mode: ForwardMode) -> Result<ExtractionRecord> {
    let image = Raster::load(path, model.config.backbone.in_channels == 1)?;
    let pred = extract_image(model, &image, max_side, mode)?;
    Ok(ExtractionRecord::new(&path.display().to_string(), image.width(), image.height(), &pred, &model.schema))
}

pub const ENTITY_COLOR: [f32; 3] = [0.85, 0.1, 0.1];
pub const TEXT_COLOR: [f32; 3] = [0.1, 0.3, 0.9];

/// The image in colour with every box outlined; boxes holding an entity
/// are drawn in red, the rest in blue.
pub fn render_overlay(image: &Raster, record: &ExtractionRecord) -> Raster {
    let mut out = image.to_rgb();
    let with_entity: Vec<usize> = record.entities.values().flatten().map(|e| e.box_index).collect();
    for (i, b) in record.boxes.iter().enumerate() {
        out.draw_box(b, if with_entity.contains(&i) { ENTITY_COLOR } else { TEXT_COLOR });
    }
    out
}
