//! Deterministic synthetic corpora whose labels are fixed functions of the
//! tokens, used for learnability checks, benchmarks and demos.
//!
//! Entities are runs of type-specific words (`per*`, `org*` + `corp`,
//! `loc*`), separated by filler words. Relations follow the types and text
//! order of each same-sentence entity pair:
//!
//! | first | second | relation                    |
//! |-------|--------|-----------------------------|
//! | PER   | ORG    | WORKS_FOR(first → second)   |
//! | PER   | LOC    | LIVES_IN(first → second)    |
//! | LOC   | PER    | LIVES_IN(second → first)    |
//! | ORG   | LOC    | BASED_IN(first → second)    |
//! | PER   | PER    | KNOWS (symmetric)           |
//! | other | other  | none                        |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, EntityMention, LabelSchema, RelationMention};
use crate::spanspace::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub documents: usize,
    pub sentences_per_doc: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    pub max_entities: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { documents: 40, sentences_per_doc: 3, min_fillers: 7, max_fillers: 14, max_entities: 3, seed: 1 }
    }
}

const TYPES: [&str; 3] = ["PER", "ORG", "LOC"];

pub fn schema() -> LabelSchema {
    LabelSchema::new(
        TYPES.iter().map(|s| s.to_string()).collect(),
        ["WORKS_FOR", "LIVES_IN", "BASED_IN", "KNOWS"].iter().map(|s| s.to_string()).collect(),
        vec!["KNOWS".to_string()],
        false,
    )
    .expect("static schema")
}

fn entity_tokens(rng: &mut ChaCha8Rng, ty: &str) -> Vec<String> {
    match ty {
        "PER" => {
            let mut v = vec![format!("per{}", rng.gen_range(0..12))];
            if rng.gen_bool(0.5) {
                v.push(format!("sur{}", rng.gen_range(0..12)));
            }
            v
        }
        "ORG" => {
            let n = rng.gen_range(1..=2);
            let mut v: Vec<String> = (0..n).map(|_| format!("org{}", rng.gen_range(0..10))).collect();
            v.push("corp".into());
            v
        }
        _ => {
            let mut v = vec![format!("loc{}", rng.gen_range(0..12))];
            if rng.gen_bool(0.3) {
                v.push("city".into());
            }
            v
        }
    }
}

fn relation_for(first: &str, second: &str) -> Option<(&'static str, bool)> {
    // (label, subject is the first entity)
    match (first, second) {
        ("PER", "ORG") => Some(("WORKS_FOR", true)),
        ("PER", "LOC") => Some(("LIVES_IN", true)),
        ("LOC", "PER") => Some(("LIVES_IN", false)),
        ("ORG", "LOC") => Some(("BASED_IN", true)),
        ("PER", "PER") => Some(("KNOWS", true)),
        _ => None,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut documents = Vec::with_capacity(cfg.documents);
    for d in 0..cfg.documents {
        let mut doc = Document {
            doc_id: format!("syn-{}-{d}", cfg.seed),
            tokens: vec![],
            sentence_bounds: vec![],
            entities: vec![],
            relations: vec![],
        };
        for _ in 0..cfg.sentences_per_doc {
            let start = doc.tokens.len() + 1;
            let k = rng.gen_range(1..=cfg.max_entities.max(1));
            let types: Vec<&str> = (0..k).map(|_| *TYPES.choose(&mut rng).expect("non-empty")).collect();
            let fillers = rng.gen_range(cfg.min_fillers.max(k + 1)..=cfg.max_fillers.max(k + 1));
            // Slots between entities each get at least one filler, except the edges.
            let mut gaps = vec![0usize; k + 1];
            for g in gaps.iter_mut().take(k).skip(1) {
                *g = 1;
            }
            for _ in 0..fillers.saturating_sub(k - 1) {
                let i = rng.gen_range(0..=k);
                gaps[i] += 1;
            }
            let mut spans = Vec::new();
            for (i, gap) in gaps.iter().enumerate() {
                for _ in 0..*gap {
                    doc.tokens.push(format!("w{}", rng.gen_range(0..30)));
                }
                if i < k {
                    let toks = entity_tokens(&mut rng, types[i]);
                    let a = doc.tokens.len() + 1;
                    doc.tokens.extend(toks);
                    let span = Span::new(a, doc.tokens.len());
                    doc.entities.push(EntityMention { span, label: types[i].to_string() });
                    spans.push(span);
                }
            }
            for i in 0..k {
                for j in i + 1..k {
                    if let Some((label, forward)) = relation_for(types[i], types[j]) {
                        let (subject, object) = if forward { (spans[i], spans[j]) } else { (spans[j], spans[i]) };
                        doc.relations.push(RelationMention { subject, object, label: label.to_string() });
                    }
                }
            }
            doc.sentence_bounds.push((start, doc.tokens.len()));
        }
        documents.push(doc);
    }
    Corpus { documents }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_corpus_is_valid_and_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        a.validate_against(&schema()).unwrap();
        assert!(a.documents.iter().all(|d| d.cross_sentence_relations().is_empty()));
        let rels: usize = a.documents.iter().map(|d| d.relations.len()).sum();
        assert!(rels > 20);
        let max_ent = a.documents.iter().flat_map(|d| d.entities.iter()).map(|e| e.span.len()).max().unwrap();
        assert!(max_ent <= 3);
    }
}
