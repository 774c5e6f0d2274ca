//! Word-level vocabulary with reserved prompt words and marker ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::layout::MarkerVocab;

pub type TokenId = u32;

pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const ENTITY_WORD: &str = "entity";

const MARKER_NAMES: [&str; 6] = ["[M]", "[/M]", "[S]", "[/S]", "[O]", "[/O]"];

/// Text words come first (ids `0..num_text`), followed by the six marker
/// tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved words, then corpus tokens in order of first appearance.
    pub fn build(corpus: &Corpus) -> Self {
        Self::from_words(corpus.documents.iter().flat_map(|d| d.tokens.iter().cloned()))
    }

    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary { words: Vec::new(), index: HashMap::new() };
        for w in [UNK, MASK, ENTITY_WORD].into_iter().map(String::from).chain(words) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len() as TokenId);
                v.words.push(w);
            }
        }
        v
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
    }

    pub fn num_text(&self) -> usize {
        self.words.len()
    }

    /// Text words plus markers.
    pub fn size(&self) -> usize {
        self.words.len() + MARKER_NAMES.len()
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn markers(&self) -> MarkerVocab {
        let base = self.words.len() as TokenId;
        MarkerVocab {
            span_start_id: base,
            span_end_id: base + 1,
            subj_start_id: base + 2,
            subj_end_id: base + 3,
            obj_start_id: base + 4,
            obj_end_id: base + 5,
        }
    }

    pub fn word(&self, id: TokenId) -> &str {
        let id = id as usize;
        if id < self.words.len() {
            &self.words[id]
        } else {
            MARKER_NAMES.get(id - self.words.len()).copied().unwrap_or("?")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_words_first_and_markers_after_text() {
        let v = Vocabulary::from_words(["a", "b", "a", "entity"].map(String::from));
        assert_eq!(v.id(UNK), 0);
        assert_eq!(v.id(MASK), 1);
        assert_eq!(v.id(ENTITY_WORD), 2);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("zzz"), 0);
        let m = v.markers();
        assert!(m.span_start_id as usize >= v.num_text());
        assert!(m.validate(v.num_text()).is_ok());
        assert_eq!(v.word(m.subj_start_id), "[S]");
        assert_eq!(v.size(), 11);
    }
}
