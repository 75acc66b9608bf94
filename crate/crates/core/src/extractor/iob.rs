//! Conversion between entity spans and per-character IOB tags.

use std::collections::BTreeMap;

use crate::corpus::{EntitySchema, Tag};

/// Entity name to extracted values, values in reading order.
pub type EntityMap = BTreeMap<String, Vec<String>>;

/// Half-open character range `[start, end)` labelled with an entity index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub entity: usize,
    pub start: usize,
    pub end: usize,
}

/// Tags of length `len` with `B-E` on each span's first character and `I-E`
/// on the rest. Spans must be non-empty, in range and non-overlapping.
pub fn encode_tags(len: usize, spans: &[Span]) -> Vec<Tag> {
    let mut tags = vec![Tag::O; len];
    for s in spans {
        assert!(s.start < s.end && s.end <= len, "span {s:?} out of range for length {len}");
        for (k, t) in tags[s.start..s.end].iter_mut().enumerate() {
            assert_eq!(*t, Tag::O, "overlapping spans");
            *t = if k == 0 { Tag::B(s.entity as u16) } else { Tag::I(s.entity as u16) };
        }
    }
    tags
}

/// Maximal `B-E (I-E)*` runs. An `I-E` that does not continue a run of the
/// same entity opens a new one, as if it were `B-E`.
pub fn entity_spans(tags: &[Tag]) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Tag::O => open = None,
            Tag::I(e) if open == Some(e as usize) => {
                spans.last_mut().expect("open span").end = i + 1;
            }
            Tag::B(e) | Tag::I(e) => {
                spans.push(Span { entity: e as usize, start: i, end: i + 1 });
                open = Some(e as usize);
            }
        }
    }
    spans
}

/// Entity strings of `transcript` selected by `tags` (aligned per character).
pub fn decode_entities(tags: &[Tag], transcript: &str, schema: &EntitySchema) -> EntityMap {
    let chars: Vec<char> = transcript.chars().collect();
    assert_eq!(chars.len(), tags.len(), "tags and transcript differ in length");
    let mut out = EntityMap::new();
    for s in entity_spans(tags) {
        let Some(name) = schema.entity_names().get(s.entity) else { continue };
        out.entry(name.clone()).or_default().push(chars[s.start..s.end].iter().collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_well_formed;
    use proptest::prelude::*;

    fn schema() -> EntitySchema {
        EntitySchema::new(["Total", "Date"]).unwrap()
    }

    #[test]
    fn single_run() {
        let s = schema();
        let tags = [Tag::B(0), Tag::I(0), Tag::I(0), Tag::O, Tag::O];
        let m = decode_entities(&tags, "9.0 x", &s);
        assert_eq!(m, EntityMap::from([("Total".into(), vec!["9.0".into()])]));
        assert!(decode_entities(&[Tag::O; 3], "abc", &s).is_empty());
    }

    #[test]
    fn runs_split_on_b_and_orphans_repair() {
        let s = schema();
        let tags = [Tag::O, Tag::B(1), Tag::I(1), Tag::O, Tag::B(1)];
        let m = decode_entities(&tags, "a12b3", &s);
        assert_eq!(m["Date"], vec!["12", "3"]);
        let orphan = [Tag::O, Tag::I(0), Tag::I(0), Tag::I(1)];
        let m = decode_entities(&orphan, "x12y", &s);
        assert_eq!(m["Total"], vec!["12"]);
        assert_eq!(m["Date"], vec!["y"]);
    }

    fn spans_strategy() -> impl Strategy<Value = (usize, Vec<Span>)> {
        proptest::collection::vec((0usize..3, 0usize..3, 1usize..4), 0..6).prop_map(|parts| {
            let mut pos = 0;
            let mut spans = Vec::new();
            for (entity, gap, len) in parts {
                pos += gap;
                spans.push(Span { entity, start: pos, end: pos + len });
                pos += len;
            }
            (pos + 1, spans)
        })
    }

    proptest! {
        #[test]
        fn spans_round_trip((len, spans) in spans_strategy()) {
            let tags = encode_tags(len, &spans);
            prop_assert!(is_well_formed(&tags));
            prop_assert_eq!(entity_spans(&tags), spans);
        }

        #[test]
        fn well_formed_tags_round_trip(raw in proptest::collection::vec(0usize..7, 0..20)) {
            let mut tags: Vec<Tag> = raw.into_iter().map(Tag::from_index).collect();
            for i in 0..tags.len() {
                if let Tag::I(e) = tags[i] {
                    let ok = i > 0 && tags[i - 1].entity() == Some(e as usize);
                    if !ok {
                        tags[i] = Tag::B(e);
                    }
                }
            }
            prop_assert_eq!(encode_tags(tags.len(), &entity_spans(&tags)), tags);
        }
    }
}
