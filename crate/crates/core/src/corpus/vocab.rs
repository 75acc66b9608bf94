use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::DocumentSample;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: usize = 4;

/// Character vocabulary with fixed special-token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    chars: String,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::new(r.chars.chars())
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { chars: v.chars.iter().collect() }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from characters in order of first appearance,
    /// skipping duplicates.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for c in chars {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(c) {
                e.insert(SPECIALS + out.len());
                out.push(c);
            }
        }
        Self { chars: out, index }
    }

    /// All characters seen in the samples' transcripts, sorted.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a DocumentSample>) -> Self {
        let set: BTreeSet<char> = samples.into_iter().flat_map(|s| s.transcripts.iter().flat_map(|t| t.chars())).collect();
        Self::new(set)
    }

    /// Size including the four special tokens.
    pub fn len(&self) -> usize {
        SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_of(&self, idx: usize) -> Option<char> {
        idx.checked_sub(SPECIALS).and_then(|i| self.chars.get(i).copied())
    }

    pub fn contains_all(&self, s: &str) -> bool {
        s.chars().all(|c| self.index.contains_key(&c))
    }

    /// Character indices truncated to `t_max - 1`, then `EOS`, then `PAD` up to `t_max`.
    pub fn encode(&self, s: &str, t_max: usize) -> Vec<usize> {
        assert!(t_max >= 2, "t_max must be at least 2");
        let mut out: Vec<usize> = s.chars().take(t_max - 1).map(|c| self.index_of(c)).collect();
        out.push(EOS);
        out.resize(t_max, PAD);
        out
    }

    /// Characters up to the first `EOS`. `PAD`/`SOS` are dropped, `UNK` decodes to `?`.
    pub fn decode(&self, indices: &[usize]) -> String {
        let mut s = String::new();
        for &i in indices {
            match i {
                EOS => break,
                PAD | SOS => {}
                UNK => s.push('?'),
                _ => s.extend(self.char_of(i)),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> Vocabulary {
        Vocabulary::new("abcdef".chars())
    }

    #[test]
    fn encode_pads_after_eos() {
        let v = ab();
        let (a, b) = (v.index_of('a'), v.index_of('b'));
        assert_eq!(v.encode("ab", 5), vec![a, b, EOS, PAD, PAD]);
        assert_eq!(v.encode("", 3), vec![EOS, PAD, PAD]);
    }

    #[test]
    fn encode_truncates_to_leave_room_for_eos() {
        let v = ab();
        let want: Vec<usize> = "abc".chars().map(|c| v.index_of(c)).chain([EOS]).collect();
        assert_eq!(v.encode("abcdef", 4), want);
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        assert_eq!(ab().encode("z", 3), vec![UNK, EOS, PAD]);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "[a-f]{0,9}") {
            let v = ab();
            prop_assert_eq!(v.decode(&v.encode(&s, 10)), s);
        }
    }
}
