//! Reader for the SROIE receipt dataset layout.
//!
//! Accepted layouts below a split root, looked up per image id:
//! * images: `root/img/<id>.{jpg,png}` or `root/<id>.{jpg,png}`
//! * boxes: `root/box/<id>.txt` or `root/<id>.txt`
//! * entities: `root/entities/<id>.{txt,json}`, `root/key/<id>.{txt,json}`,
//!   `root/<id>.json`, or `root/<id>.txt` when that file holds a JSON object.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::{io::list_images, DocumentSample, EntitySchema, LayoutKind, Tag, TextKind};
use crate::error::{Error, Result};
use crate::extractor::iob::EntityMap;
use crate::geometry::BBox;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SroieOptions {
    pub grayscale: bool,
    /// Downscale so the longer image side is at most this many pixels.
    pub max_side: Option<usize>,
}

impl Default for SroieOptions {
    fn default() -> Self {
        Self { grayscale: true, max_side: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub samples: usize,
    /// Sample ids loaded without an entity file (all tags `O`).
    pub missing_entities: Vec<String>,
    /// `(sample id, entity)` pairs whose value matched no single transcript.
    pub unmatched: Vec<(String, String)>,
    /// Boxes that had to be clamped to the image bounds.
    pub clamped_boxes: usize,
}

/// Parses `x1,y1,x2,y2,x3,y3,x4,y4,transcript` into the enclosing rectangle
/// and the transcript. The transcript may itself contain commas.
pub fn parse_box_line(line: &str) -> std::result::Result<(BBox, String), String> {
    let mut parts = line.splitn(9, ',');
    let mut pts = [0f32; 8];
    for (k, p) in pts.iter_mut().enumerate() {
        let field = parts.next().ok_or_else(|| format!("expected 8 coordinates, found {k}"))?;
        *p = field.trim().parse::<f32>().map_err(|_| format!("coordinate {} is not a number: {field:?}", k + 1))?;
    }
    let text = parts.next().ok_or("missing transcript field")?;
    let corners: Vec<(f32, f32)> = pts.chunks(2).map(|c| (c[0], c[1])).collect();
    let b = BBox::enclosing(&corners).expect("four corners");
    Ok((b, text.trim_end_matches(['\r', '\n']).to_string()))
}

fn parse_box_file(path: &Path) -> Result<Vec<(BBox, String)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_box_line(line).map_err(|message| Error::Parse { path: path.to_path_buf(), line: n + 1, message })?;
        out.push(parsed);
    }
    Ok(out)
}

fn parse_entity_file(path: &Path, schema: &EntitySchema) -> Result<BTreeMap<usize, String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let obj: BTreeMap<String, serde_json::Value> = serde_json::from_str(text.trim_start_matches('\u{feff}'))
        .map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })?;
    let mut out = BTreeMap::new();
    for (key, value) in obj {
        let Some(e) = schema.entity_names().iter().position(|n| n.eq_ignore_ascii_case(&key)) else {
            warn!("{}: ignoring unknown key {key:?}", path.display());
            continue;
        };
        let value = match value {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        if !value.is_empty() {
            out.insert(e, value);
        }
    }
    Ok(out)
}

fn looks_like_json(path: &Path) -> bool {
    fs::read(path)
        .map(|b| String::from_utf8_lossy(&b).trim_start_matches('\u{feff}').trim_start().starts_with('{'))
        .unwrap_or(false)
}

fn find_box_file(root: &Path, id: &str) -> Option<PathBuf> {
    let sub = root.join("box").join(format!("{id}.txt"));
    if sub.is_file() {
        return Some(sub);
    }
    let flat = root.join(format!("{id}.txt"));
    (flat.is_file() && !looks_like_json(&flat)).then_some(flat)
}

fn find_entity_file(root: &Path, id: &str) -> Option<PathBuf> {
    for dir in ["entities", "key"] {
        for ext in ["txt", "json"] {
            let p = root.join(dir).join(format!("{id}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    let json = root.join(format!("{id}.json"));
    if json.is_file() {
        return Some(json);
    }
    let flat = root.join(format!("{id}.txt"));
    (flat.is_file() && looks_like_json(&flat)).then_some(flat)
}

/// Tags each entity value on one transcript: longer values are placed
/// first, a match may not overlap characters already tagged, and among
/// candidates the topmost-then-leftmost box and the first occurrence win.
/// Returns the entity indices that found no match.
pub fn derive_tags(
    boxes: &[BBox],
    transcripts: &[String],
    values: &BTreeMap<usize, String>,
) -> (Vec<Vec<Tag>>, Vec<usize>) {
    let chars: Vec<Vec<char>> = transcripts.iter().map(|t| t.chars().collect()).collect();
    let mut tags: Vec<Vec<Tag>> = chars.iter().map(|c| vec![Tag::O; c.len()]).collect();
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[a].y0.total_cmp(&boxes[b].y0).then(boxes[a].x0.total_cmp(&boxes[b].x0)).then(a.cmp(&b))
    });
    let mut entities: Vec<(usize, Vec<char>)> = values.iter().map(|(&e, v)| (e, v.chars().collect())).collect();
    entities.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let mut unmatched = Vec::new();
    'entity: for (e, value) in entities {
        let n = value.len();
        for &i in &order {
            let text = &chars[i];
            if n == 0 || n > text.len() {
                continue;
            }
            for start in 0..=text.len() - n {
                if text[start..start + n] == value[..] && tags[i][start..start + n].iter().all(|t| *t == Tag::O) {
                    for (k, t) in tags[i][start..start + n].iter_mut().enumerate() {
                        *t = if k == 0 { Tag::B(e as u16) } else { Tag::I(e as u16) };
                    }
                    continue 'entity;
                }
            }
        }
        unmatched.push(e);
    }
    unmatched.sort_unstable();
    (tags, unmatched)
}

/// Loads every image under a SROIE split root with its boxes and entity tags.
pub fn load_sroie(root: &Path, schema: &EntitySchema, opts: &SroieOptions) -> Result<(Vec<DocumentSample>, LoadReport)> {
    let img_dir = if root.join("img").is_dir() { root.join("img") } else { root.to_path_buf() };
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for path in list_images(&img_dir)? {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let box_path = find_box_file(root, &id)
            .ok_or_else(|| Error::Input(format!("no box file for image {}", path.display())))?;
        let lines = parse_box_file(&box_path)?;
        if lines.is_empty() {
            return Err(Error::Parse { path: box_path, line: 0, message: "no text lines".into() });
        }
        let full = Raster::load(&path, opts.grayscale)?;
        let (image, scale) = match opts.max_side {
            Some(m) => full.fit_within(m),
            None => (full, 1.0),
        };
        let (w, h) = (image.width() as f32, image.height() as f32);
        let mut boxes = Vec::with_capacity(lines.len());
        let mut transcripts = Vec::with_capacity(lines.len());
        for (b, t) in lines {
            let s = b.scale(scale);
            let mut c = s.clip(w, h);
            if c.x1 - c.x0 < 1.0 {
                c.x1 = (c.x0 + 1.0).min(w);
                c.x0 = c.x1 - 1.0;
            }
            if c.y1 - c.y0 < 1.0 {
                c.y1 = (c.y0 + 1.0).min(h);
                c.y0 = c.y1 - 1.0;
            }
            if c != s {
                report.clamped_boxes += 1;
            }
            boxes.push(c);
            transcripts.push(t);
        }
        let (char_tags, key_values) = match find_entity_file(root, &id) {
            Some(p) => {
                let values = parse_entity_file(&p, schema)?;
                let (tags, unmatched) = derive_tags(&boxes, &transcripts, &values);
                for e in unmatched {
                    report.unmatched.push((id.clone(), schema.entity_names()[e].clone()));
                }
                let kv: EntityMap = values.iter().map(|(&e, v)| (schema.entity_names()[e].clone(), vec![v.clone()])).collect();
                (tags, Some(kv))
            }
            None => {
                warn!("no entity file for {id}; all characters tagged O");
                report.missing_entities.push(id.clone());
                (transcripts.iter().map(|t| vec![Tag::O; t.chars().count()]).collect(), None)
            }
        };
        let sample = DocumentSample {
            id,
            image,
            boxes,
            transcripts,
            char_tags,
            layout_kind: LayoutKind::Variable,
            text_kind: TextKind::Structured,
            key_values,
        };
        sample.validate(schema)?;
        samples.push(sample);
    }
    report.samples = samples.len();
    Ok((samples, report))
}
