//! Document samples, their on-disk format and the two data sources:
//! a synthetic generator and a SROIE reader.

mod font;
pub mod io;
pub mod schema;
pub mod sroie;
pub mod synth;
pub mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::iob::{decode_entities, EntityMap};
use crate::geometry::BBox;
use crate::raster::Raster;

pub use schema::{is_well_formed, EntitySchema, Tag};
pub use vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    Structured,
    SemiStructured,
}

/// One document image with its text boxes, transcripts and per-character tags.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSample {
    pub id: String,
    pub image: Raster,
    pub boxes: Vec<BBox>,
    pub transcripts: Vec<String>,
    pub char_tags: Vec<Vec<Tag>>,
    pub layout_kind: LayoutKind,
    pub text_kind: TextKind,
    /// Reference entity values when they are known independently of the
    /// tags (SROIE key files). `None` means the tags are authoritative.
    pub key_values: Option<EntityMap>,
}

impl DocumentSample {
    pub fn num_texts(&self) -> usize {
        self.boxes.len()
    }

    /// Checks box bounds, list lengths, tag alignment and tag well-formedness.
    pub fn validate(&self, schema: &EntitySchema) -> Result<()> {
        let err = |m: String| Err(Error::Input(format!("sample {}: {m}", self.id)));
        let m = self.boxes.len();
        if m == 0 {
            return err("no text boxes".into());
        }
        if self.transcripts.len() != m || self.char_tags.len() != m {
            return err(format!(
                "{} boxes, {} transcripts, {} tag sequences",
                m,
                self.transcripts.len(),
                self.char_tags.len()
            ));
        }
        if !self.image.all_finite() {
            return err("non-finite pixels".into());
        }
        let (w, h) = (self.image.width() as f32, self.image.height() as f32);
        for (i, b) in self.boxes.iter().enumerate() {
            if !(b.is_valid() && b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= w && b.y1 <= h) {
                return err(format!("box {i} {b:?} outside {w}x{h} image or empty"));
            }
        }
        for (i, (t, tags)) in self.transcripts.iter().zip(&self.char_tags).enumerate() {
            if t.chars().count() != tags.len() {
                return err(format!("text {i} has {} chars but {} tags", t.chars().count(), tags.len()));
            }
            if let Some(bad) = tags.iter().find(|t| !schema.contains(**t)) {
                return err(format!("text {i} has tag {bad:?} outside the schema"));
            }
            if !is_well_formed(tags) {
                return err(format!("text {i} has an I- tag without a matching B-"));
            }
        }
        Ok(())
    }

    /// Reference entities: the key values when present, otherwise the
    /// entities decoded from the tags in reading (box) order.
    pub fn ground_truth(&self, schema: &EntitySchema) -> EntityMap {
        if let Some(kv) = &self.key_values {
            return kv.clone();
        }
        let mut out: EntityMap = BTreeMap::new();
        for (t, tags) in self.transcripts.iter().zip(&self.char_tags) {
            for (name, values) in decode_entities(tags, t, schema) {
                out.entry(name).or_default().extend(values);
            }
        }
        out
    }
}
