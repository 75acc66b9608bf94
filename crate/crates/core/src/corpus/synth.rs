//! Deterministic synthetic documents rendered with the built-in bitmap font.
//!
//! Each document carries a set of labelled fields. Two cue mechanisms make
//! some entities depend on more than their own text:
//! * header fields share one slot and are told apart only by a title line
//!   at the top of the page;
//! * weighted fields share a value format and are told apart only by
//!   their font weight, with the slot assignment shuffled per document.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::font::{self, Weight, ADVANCE};
use super::{DocumentSample, EntitySchema, LayoutKind, Tag, TextKind};
use crate::error::{Error, Result};
use crate::extractor::iob::{encode_tags, Span};
use crate::raster::Raster;

const MARGIN: usize = 4;
const TOP: usize = 6;
const ROW_PITCH: usize = 14;
const JITTER: i64 = 2;

const DISTRACTORS: [&str; 6] = ["TEL 5551234", "THANK YOU", "SEAT 12", "VAT INCL.", "REF A-17", "CASH"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Code,
    Date,
    Time,
    Money,
}

impl ValueKind {
    fn default_label(self) -> &'static str {
        match self {
            ValueKind::Code => "NO.",
            ValueKind::Date => "DATE",
            ValueKind::Time => "TIME",
            ValueKind::Money => "SUM",
        }
    }

    fn max_len(self) -> usize {
        match self {
            ValueKind::Code => 7,
            ValueKind::Date => 10,
            ValueKind::Time => 5,
            ValueKind::Money => 6,
        }
    }

    fn sample(self, rng: &mut impl Rng) -> String {
        match self {
            ValueKind::Code => {
                let a = rng.gen_range(b'A'..=b'Z') as char;
                let b = rng.gen_range(b'A'..=b'Z') as char;
                format!("{a}{b}{:05}", rng.gen_range(0..100_000))
            }
            ValueKind::Date => format!(
                "{}-{:02}-{:02}",
                rng.gen_range(2010..2025),
                rng.gen_range(1..=12),
                rng.gen_range(1..=28)
            ),
            ValueKind::Time => format!("{:02}:{:02}", rng.gen_range(0..24), rng.gen_range(0..60)),
            ValueKind::Money => format!("{}.{:02}", rng.gen_range(1..1000), rng.gen_range(0..100)),
        }
    }
}

/// One entity type produced by the generator.
///
/// `header`: the field belongs to the header group; exactly one header
/// field appears per document and the page title names which one.
/// `bold`: the field belongs to the weighted group, rendered in the given
/// weight, with group members randomly permuted over the group's slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub entity: String,
    pub kind: ValueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bold: Option<bool>,
}

impl FieldSpec {
    pub fn plain(entity: &str, kind: ValueKind) -> Self {
        Self { entity: entity.into(), kind, label: None, header: None, bold: None }
    }

    fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.default_label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Number of fixed layouts; ignored for variable layout.
    pub templates: usize,
    pub template_seed: u64,
    pub layout: LayoutKind,
    pub text: TextKind,
    /// Amplitude of uniform pixel noise.
    pub noise: f32,
    /// Upper bound on distractor lines per layout.
    pub max_distractors: usize,
    /// Lowest row a header-group field may occupy (row 0 holds the title).
    pub header_gap: usize,
    pub fields: Vec<FieldSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let header = |entity: &str, title: &str| FieldSpec {
            header: Some(title.into()),
            ..FieldSpec::plain(entity, ValueKind::Time)
        };
        let weighted = |entity: &str, bold: bool| FieldSpec { bold: Some(bold), ..FieldSpec::plain(entity, ValueKind::Money) };
        Self {
            width: 192,
            height: 160,
            channels: 1,
            templates: 13,
            template_seed: 0,
            layout: LayoutKind::Fixed,
            text: TextKind::Structured,
            noise: 0.05,
            max_distractors: 2,
            header_gap: 6,
            fields: vec![
                FieldSpec::plain("Code", ValueKind::Code),
                FieldSpec::plain("Date", ValueKind::Date),
                header("Pickup", "TAXI"),
                header("Depart", "TRAIN"),
                weighted("Price", false),
                weighted("Amount", true),
            ],
        }
    }
}

impl SynthConfig {
    /// A minimal corpus with a single money entity.
    pub fn single(entity: &str) -> Self {
        Self { templates: 1, fields: vec![FieldSpec::plain(entity, ValueKind::Money)], ..Self::default() }
    }

    pub fn schema(&self) -> Result<EntitySchema> {
        EntitySchema::new(self.fields.iter().map(|f| f.entity.clone()))
    }

    fn rows(&self) -> usize {
        (self.height.saturating_sub(TOP + 12 + JITTER as usize)) / ROW_PITCH + 1
    }

    fn header_fields(&self) -> Vec<usize> {
        (0..self.fields.len()).filter(|&i| self.fields[i].header.is_some()).collect()
    }

    fn weighted_fields(&self) -> Vec<usize> {
        (0..self.fields.len())
            .filter(|&i| self.fields[i].header.is_none() && self.fields[i].bold.is_some())
            .collect()
    }

    fn plain_fields(&self) -> Vec<usize> {
        (0..self.fields.len())
            .filter(|&i| self.fields[i].header.is_none() && self.fields[i].bold.is_none())
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("synthetic config needs at least one field".into()));
        }
        self.schema()?;
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise must be in [0, 1], got {}", self.noise)));
        }
        if self.layout == LayoutKind::Fixed && self.templates == 0 {
            return Err(Error::Config("fixed layout needs at least one template".into()));
        }
        for f in &self.fields {
            let l = f.label();
            if l.is_empty() || l.chars().count() > 8 || f.header.as_deref().is_some_and(str::is_empty) {
                return Err(Error::Config(format!("field {}: labels and titles must be 1-8 characters", f.entity)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Title,
    Plain(usize),
    Header,
    Weighted(usize),
    Distractor,
}

#[derive(Debug, Clone)]
struct Slot {
    role: Role,
    row: usize,
    x: usize,
    /// Character cells between label and value in structured text.
    gap: usize,
}

/// Placement of every text line on the page.
#[derive(Debug, Clone)]
struct Layout {
    slots: Vec<Slot>,
}

fn slot_width(cfg: &SynthConfig, role: Role, gap: usize) -> usize {
    let field_width = |f: &FieldSpec| f.label().chars().count() + gap + f.kind.max_len();
    let chars = match role {
        Role::Title => cfg.fields.iter().filter_map(|f| f.header.as_ref()).map(|h| h.chars().count()).max().unwrap_or(0),
        Role::Plain(i) => field_width(&cfg.fields[i]),
        Role::Header => cfg.header_fields().iter().map(|&i| field_width(&cfg.fields[i])).max().unwrap_or(0),
        Role::Weighted(_) => cfg.weighted_fields().iter().map(|&i| field_width(&cfg.fields[i])).max().unwrap_or(0),
        Role::Distractor => DISTRACTORS.iter().map(|d| d.len()).max().unwrap_or(0),
    };
    chars * ADVANCE
}

fn build_layout(cfg: &SynthConfig, template: usize, rng: &mut impl Rng) -> Result<Layout> {
    let fail = |message: String| Error::Generation { template, message };
    let rows = cfg.rows();
    let mut free: Vec<usize> = (0..rows).collect();
    let mut roles: Vec<(Role, usize)> = Vec::new();
    let headers = cfg.header_fields();
    if !headers.is_empty() {
        free.retain(|&r| r != 0);
        roles.push((Role::Title, 0));
        let low: Vec<usize> = free.iter().copied().filter(|&r| r >= cfg.header_gap).collect();
        let &row = low
            .choose(rng)
            .ok_or_else(|| fail(format!("no row at or below {} on a {}-row page", cfg.header_gap, rows)))?;
        free.retain(|&r| r != row);
        roles.push((Role::Header, row));
    }
    let mut wanted: Vec<Role> = cfg.plain_fields().into_iter().map(Role::Plain).collect();
    wanted.extend((0..cfg.weighted_fields().len()).map(Role::Weighted));
    if wanted.len() > free.len() {
        return Err(fail(format!("{} text lines requested but only {} rows fit", wanted.len() + roles.len(), rows)));
    }
    let spare = free.len() - wanted.len();
    let distractors = rng.gen_range(0..=spare.min(cfg.max_distractors));
    wanted.extend(std::iter::repeat(Role::Distractor).take(distractors));
    free.shuffle(rng);
    roles.extend(wanted.into_iter().zip(free));

    let mut slots = Vec::with_capacity(roles.len());
    for (role, row) in roles {
        let gap = match cfg.text {
            TextKind::Structured => rng.gen_range(1..=3),
            TextKind::SemiStructured => 1,
        };
        let width = slot_width(cfg, role, gap);
        let room = cfg.width.checked_sub(2 * MARGIN + width).ok_or_else(|| {
            fail(format!("a line {width} px wide does not fit a {} px page", cfg.width))
        })?;
        let x = MARGIN + rng.gen_range(0..=room);
        slots.push(Slot { role, row, x, gap });
    }
    Ok(Layout { slots })
}

struct Line {
    x: usize,
    y: usize,
    text: String,
    tags: Vec<Tag>,
    weight: Weight,
}

/// Renders synthetic documents for one configuration.
pub struct Generator {
    cfg: SynthConfig,
    schema: EntitySchema,
    templates: Vec<Layout>,
}

impl Generator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.check()?;
        let schema = cfg.schema()?;
        let mut templates = Vec::new();
        if cfg.layout == LayoutKind::Fixed {
            for t in 0..cfg.templates {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.template_seed);
                rng.set_stream(t as u64);
                templates.push(build_layout(&cfg, t, &mut rng)?);
            }
        } else {
            // Surface impossible configurations before any document is drawn.
            build_layout(&cfg, 0, &mut ChaCha8Rng::seed_from_u64(cfg.template_seed))?;
        }
        Ok(Self { cfg, schema, templates })
    }

    pub fn schema(&self) -> &EntitySchema {
        &self.schema
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Document `index` of the corpus drawn with `seed`, together with the
    /// fixed template it uses (if any).
    pub fn document(&self, seed: u64, index: usize) -> Result<(DocumentSample, Option<usize>)> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let (layout, template, (dx, dy)) = match cfg.layout {
            LayoutKind::Fixed => {
                let t = rng.gen_range(0..self.templates.len());
                let jitter = (rng.gen_range(-JITTER..=JITTER), rng.gen_range(-JITTER..=JITTER));
                (self.templates[t].clone(), Some(t), jitter)
            }
            LayoutKind::Variable => (build_layout(cfg, index, &mut rng)?, None, (0, 0)),
        };

        let headers = cfg.header_fields();
        let header_choice = (!headers.is_empty()).then(|| headers[rng.gen_range(0..headers.len())]);
        let mut weighted = cfg.weighted_fields();
        weighted.shuffle(&mut rng);

        let mut lines = Vec::new();
        for slot in &layout.slots {
            let x = (slot.x as i64 + dx) as usize;
            let y = (TOP as i64 + (slot.row * ROW_PITCH) as i64 + dy) as usize;
            let field = match slot.role {
                Role::Title => {
                    let title = cfg.fields[header_choice.expect("title implies header fields")].header.clone().unwrap();
                    lines.push(plain_line(x, y, title));
                    continue;
                }
                Role::Distractor => {
                    let d = DISTRACTORS[rng.gen_range(0..DISTRACTORS.len())];
                    lines.push(plain_line(x, y, d.to_string()));
                    continue;
                }
                Role::Plain(i) => i,
                Role::Header => header_choice.expect("header slot implies header fields"),
                Role::Weighted(k) => weighted[k],
            };
            let spec = &cfg.fields[field];
            let entity = self.schema.entity_index(&spec.entity).expect("schema built from fields");
            let value = spec.kind.sample(&mut rng);
            let weight = if spec.bold == Some(true) { Weight::Bold } else { Weight::Regular };
            let label = spec.label().to_string();
            match cfg.text {
                TextKind::Structured => {
                    lines.push(plain_line(x, y, label.clone()));
                    let vx = x + (label.chars().count() + slot.gap) * ADVANCE;
                    let n = value.chars().count();
                    let tags = encode_tags(n, &[Span { entity, start: 0, end: n }]);
                    lines.push(Line { x: vx, y, text: value, tags, weight });
                }
                TextKind::SemiStructured => {
                    // Merged "LABEL value" text; only the value characters are tagged.
                    let start = label.chars().count() + 1;
                    let text = format!("{label} {value}");
                    let n = text.chars().count();
                    let tags = encode_tags(n, &[Span { entity, start, end: n }]);
                    lines.push(Line { x, y, text, tags, weight });
                }
            }
        }
        lines.sort_by_key(|l| (l.y, l.x));

        let mut image = Raster::filled(cfg.width, cfg.height, cfg.channels, 1.0);
        let ink = rng.gen_range(0.0..0.25f32);
        let mut sample = DocumentSample {
            id: format!("synth-{seed}-{index:05}"),
            image: Raster::filled(1, 1, 1, 0.0),
            boxes: Vec::with_capacity(lines.len()),
            transcripts: Vec::with_capacity(lines.len()),
            char_tags: Vec::with_capacity(lines.len()),
            layout_kind: cfg.layout,
            text_kind: cfg.text,
            key_values: None,
        };
        for line in lines {
            font::draw_text(&mut image, line.x, line.y, &line.text, line.weight, ink);
            sample.boxes.push(font::text_box(line.x, line.y, line.text.chars().count()));
            sample.transcripts.push(line.text);
            sample.char_tags.push(line.tags);
        }
        if cfg.noise > 0.0 {
            let data: Vec<f32> = image
                .data()
                .iter()
                .map(|&v| (v + rng.gen_range(-cfg.noise..=cfg.noise)).clamp(0.0, 1.0))
                .collect();
            image = Raster::from_data(cfg.width, cfg.height, cfg.channels, data)?;
        }
        sample.image = image;
        Ok((sample, template))
    }
}

fn plain_line(x: usize, y: usize, text: String) -> Line {
    let n = text.chars().count();
    Line { x, y, text, tags: vec![Tag::O; n], weight: Weight::Regular }
}

/// `n` documents drawn deterministically from `(cfg, seed)`.
pub fn generate_corpus(cfg: &SynthConfig, seed: u64, n: usize) -> Result<Vec<DocumentSample>> {
    let generator = Generator::new(cfg.clone())?;
    (0..n).map(|i| generator.document(seed, i).map(|(d, _)| d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_document_has_an_entity_and_fits() {
        let cfg = SynthConfig::default();
        let schema = cfg.schema().unwrap();
        for doc in generate_corpus(&cfg, 3, 20).unwrap() {
            doc.validate(&schema).unwrap();
            assert!(!doc.ground_truth(&schema).is_empty());
        }
    }

    #[test]
    fn header_field_matches_title() {
        let cfg = SynthConfig::default();
        let schema = cfg.schema().unwrap();
        for doc in generate_corpus(&cfg, 5, 30).unwrap() {
            let gt = doc.ground_truth(&schema);
            let title = &doc.transcripts[0];
            match title.as_str() {
                "TAXI" => assert!(gt.contains_key("Pickup") && !gt.contains_key("Depart")),
                "TRAIN" => assert!(gt.contains_key("Depart") && !gt.contains_key("Pickup")),
                other => panic!("unexpected first line {other}"),
            }
        }
    }

    #[test]
    fn overfull_page_names_the_template() {
        let mut cfg = SynthConfig::default();
        cfg.height = 40;
        match Generator::new(cfg) {
            Err(Error::Generation { template, .. }) => assert_eq!(template, 0),
            other => panic!("expected a generation error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn semi_structured_tags_only_the_value() {
        let cfg = SynthConfig { text: TextKind::SemiStructured, ..SynthConfig::single("Total") };
        let doc = generate_corpus(&cfg, 0, 1).unwrap().remove(0);
        let (i, t) = doc.transcripts.iter().enumerate().find(|(_, t)| t.starts_with("SUM ")).unwrap();
        assert_eq!(doc.char_tags[i][..4], [Tag::O; 4]);
        assert_eq!(doc.char_tags[i][4], Tag::B(0));
        assert_eq!(doc.ground_truth(&cfg.schema().unwrap())["Total"], vec![t[4..].to_string()]);
    }
}
