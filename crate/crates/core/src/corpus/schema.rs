use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-character IOB label. Entity indices refer to an [`EntitySchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(u16),
    I(u16),
}

impl Tag {
    /// Dense index: `O` is 0, entity `e` has `B` at `1 + 2e` and `I` at `2 + 2e`.
    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(e) => 1 + 2 * e as usize,
            Tag::I(e) => 2 + 2 * e as usize,
        }
    }

    pub fn from_index(i: usize) -> Tag {
        match i {
            0 => Tag::O,
            i if i % 2 == 1 => Tag::B(((i - 1) / 2) as u16),
            i => Tag::I(((i - 2) / 2) as u16),
        }
    }

    pub fn entity(self) -> Option<usize> {
        match self {
            Tag::O => None,
            Tag::B(e) | Tag::I(e) => Some(e as usize),
        }
    }
}

/// True when no `I-E` directly follows `O` or a tag of another entity.
pub fn is_well_formed(tags: &[Tag]) -> bool {
    let mut prev = Tag::O;
    for &t in tags {
        if let Tag::I(e) = t {
            match prev {
                Tag::B(p) | Tag::I(p) if p == e => {}
                _ => return false,
            }
        }
        prev = t;
    }
    true
}

/// Ordered entity types and the IOB tag set derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct EntitySchema {
    entity_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    entities: Vec<String>,
}

impl TryFrom<SchemaRepr> for EntitySchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        EntitySchema::new(r.entities)
    }
}

impl From<EntitySchema> for SchemaRepr {
    fn from(s: EntitySchema) -> Self {
        SchemaRepr { entities: s.entity_names }
    }
}

impl EntitySchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let entity_names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for n in &entity_names {
            if n.trim().is_empty() {
                return Err(Error::Schema("entity names must be non-empty".into()));
            }
            if n.contains(char::is_whitespace) {
                return Err(Error::Schema(format!("entity name {n:?} contains whitespace")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate entity name {n:?}")));
            }
        }
        if entity_names.len() > u16::MAX as usize / 2 {
            return Err(Error::Schema("too many entity types".into()));
        }
        Ok(Self { entity_names })
    }

    /// The four SROIE entity types.
    pub fn sroie() -> Self {
        Self::new(["Company", "Date", "Address", "Total"]).expect("static schema")
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_tags(&self) -> usize {
        2 * self.entity_names.len() + 1
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_names.iter().position(|n| n == name)
    }

    pub fn tag_name(&self, tag: Tag) -> String {
        match tag {
            Tag::O => "O".to_string(),
            Tag::B(e) => format!("B-{}", self.entity_names[e as usize]),
            Tag::I(e) => format!("I-{}", self.entity_names[e as usize]),
        }
    }

    /// `O`, then `B-E`, `I-E` for every entity in order.
    pub fn tag_set(&self) -> Vec<String> {
        (0..self.num_tags()).map(|i| self.tag_name(Tag::from_index(i))).collect()
    }

    pub fn parse_tag(&self, s: &str) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, name) = s
            .split_once('-')
            .ok_or_else(|| Error::Schema(format!("malformed tag {s:?}")))?;
        let e = self
            .entity_index(name)
            .ok_or_else(|| Error::Schema(format!("tag {s:?} names an unknown entity")))? as u16;
        match prefix {
            "B" => Ok(Tag::B(e)),
            "I" => Ok(Tag::I(e)),
            _ => Err(Error::Schema(format!("malformed tag {s:?}"))),
        }
    }

    pub fn contains(&self, tag: Tag) -> bool {
        tag.entity().map_or(true, |e| e < self.num_entities())
    }
}
