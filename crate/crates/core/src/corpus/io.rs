//! On-disk corpus split: `schema.json`, `labels.jsonl` and one PNG per sample.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DocumentSample, EntitySchema, LayoutKind, TextKind};
use crate::error::{Error, Result};
use crate::extractor::iob::EntityMap;
use crate::geometry::BBox;
use crate::raster::Raster;

pub const SCHEMA_FILE: &str = "schema.json";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const LABELS_VERSION: u32 = 1;

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub version: u32,
    pub id: String,
    pub image: String,
    pub boxes: Vec<BBox>,
    pub transcripts: Vec<String>,
    pub char_tags: Vec<Vec<String>>,
    pub layout_kind: LayoutKind,
    pub text_kind: TextKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_values: Option<EntityMap>,
}

pub fn write_schema(dir: &Path, schema: &EntitySchema) -> Result<()> {
    let path = dir.join(SCHEMA_FILE);
    fs::write(&path, serde_json::to_string_pretty(schema)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_schema(path: &Path) -> Result<EntitySchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes samples as a split directory, creating it if needed.
pub fn save_split(dir: &Path, samples: &[DocumentSample], schema: &EntitySchema) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_schema(dir, schema)?;
    let path = dir.join(LABELS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        s.validate(schema)?;
        let image = format!("{}.png", s.id);
        s.image.save_png(&dir.join(&image))?;
        let record = LabelRecord {
            version: LABELS_VERSION,
            id: s.id.clone(),
            image,
            boxes: s.boxes.clone(),
            transcripts: s.transcripts.clone(),
            char_tags: s.char_tags.iter().map(|t| t.iter().map(|&t| schema.tag_name(t)).collect()).collect(),
            layout_kind: s.layout_kind,
            text_kind: s.text_kind,
            key_values: s.key_values.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a split directory written by [`save_split`].
pub fn load_split(dir: &Path, grayscale: bool) -> Result<(Vec<DocumentSample>, EntitySchema)> {
    let schema = read_schema(&dir.join(SCHEMA_FILE))?;
    let path = dir.join(LABELS_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.clone(), line: n + 1, message };
        let r: LabelRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if r.version != LABELS_VERSION {
            return Err(parse_err(format!("unsupported record version {}", r.version)));
        }
        let char_tags = r
            .char_tags
            .iter()
            .map(|tags| tags.iter().map(|t| schema.parse_tag(t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(e.to_string()))?;
        let image = Raster::load(&dir.join(&r.image), grayscale)?;
        let sample = DocumentSample {
            id: r.id,
            image,
            boxes: r.boxes,
            transcripts: r.transcripts,
            char_tags,
            layout_kind: r.layout_kind,
            text_kind: r.text_kind,
            key_values: r.key_values,
        };
        sample.validate(&schema).map_err(|e| parse_err(e.to_string()))?;
        samples.push(sample);
    }
    Ok((samples, schema))
}

/// Image files (`png`, `jpg`, `jpeg`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_corpus, SynthConfig};

    #[test]
    fn split_round_trip() {
        let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
        let schema = cfg.schema().unwrap();
        let docs = generate_corpus(&cfg, 11, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &docs, &schema).unwrap();
        let (back, s2) = load_split(dir.path(), true).unwrap();
        assert_eq!(s2, schema);
        assert_eq!(back.len(), 3);
        for (a, b) in docs.iter().zip(&back) {
            assert_eq!(a.boxes, b.boxes);
            assert_eq!(a.transcripts, b.transcripts);
            assert_eq!(a.char_tags, b.char_tags);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        assert_eq!(list_images(dir.path()).unwrap().len(), 3);
    }
}
