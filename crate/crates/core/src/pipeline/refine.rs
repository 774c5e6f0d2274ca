use std::collections::BTreeMap;

use super::re::participants;
use super::{PipelineError, RePrediction};
use crate::corpus::Corpus;

/// Refinement is enabled when the dominance ratio reaches this value.
pub const DEFAULT_REFINE_THRESHOLD: f64 = 0.4;

/// Share of relation instances whose `(subject type, object type)` is the
/// most frequent type pair for their label.
pub fn relation_type_statistic(corpus: &Corpus) -> Result<f64, PipelineError> {
    let mut counts: BTreeMap<&str, BTreeMap<(&str, &str), usize>> = BTreeMap::new();
    let mut total = 0usize;
    for doc in &corpus.documents {
        let types: BTreeMap<_, &str> = doc.entities.iter().map(|e| (e.span, e.label.as_str())).collect();
        for r in &doc.relations {
            let (Some(s), Some(o)) = (types.get(&r.subject), types.get(&r.object)) else {
                return Err(PipelineError::Data(format!(
                    "relation {} -> {} in `{}` has an untyped endpoint",
                    r.subject, r.object, doc.doc_id
                )));
            };
            *counts.entry(&r.label).or_default().entry((s, o)).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(PipelineError::Data("dominance ratio is undefined for a corpus without relations".into()));
    }
    let dominant: usize = counts.values().map(|pairs| pairs.values().copied().max().unwrap_or(0)).sum();
    Ok(dominant as f64 / total as f64)
}

/// Replace the type of every entity that takes part in a predicted relation
/// with the majority of the auxiliary head's votes for it, when `ratio`
/// reaches `threshold`. A tie keeps the NER type. Returns the refined copy.
///
/// Each predicted relation contributes one vote per endpoint: the type
/// predicted for that endpoint when it was the object and the other endpoint
/// the subject.
pub fn refine_entity_types(ner: &Corpus, re: &RePrediction, ratio: f64, threshold: f64) -> Corpus {
    let mut out = ner.clone();
    if ratio < threshold {
        return out;
    }
    let involved = participants(re);
    for (di, doc) in out.documents.iter_mut().enumerate() {
        let (Some(rels), Some(types)) = (re.documents.get(di), re.object_types.get(di)) else {
            continue;
        };
        for e in &mut doc.entities {
            if !involved[di].contains(&e.span) {
                continue;
            }
            let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
            for r in rels {
                let partner = if r.object == e.span {
                    r.subject
                } else if r.subject == e.span {
                    r.object
                } else {
                    continue;
                };
                if let Some(t) = types.get(&(partner, e.span)) {
                    *votes.entry(t).or_default() += 1;
                }
            }
            let Some(&top) = votes.values().max() else { continue };
            let winners: Vec<&str> = votes.iter().filter(|(_, &c)| c == top).map(|(t, _)| *t).collect();
            if let [only] = winners.as_slice() {
                e.label = only.to_string();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EntityMention, RelationMention};
    use crate::pipeline::{InferenceStats, ScoredRelation};
    use crate::spanspace::Span;

    fn sp(a: usize) -> Span {
        Span::new(a, a)
    }

    fn doc(entities: &[(usize, &str)], relations: &[(usize, usize, &str)]) -> Document {
        Document {
            doc_id: "d".into(),
            tokens: (0..10).map(|i| format!("t{i}")).collect(),
            sentence_bounds: vec![(1, 10)],
            entities: entities.iter().map(|&(a, l)| EntityMention { span: sp(a), label: l.into() }).collect(),
            relations: relations
                .iter()
                .map(|&(s, o, l)| RelationMention { subject: sp(s), object: sp(o), label: l.into() })
                .collect(),
        }
    }

    #[test]
    fn dominance_ratio_hand_counts() {
        let all_same = Corpus { documents: vec![doc(&[(1, "PER"), (2, "GPE"), (3, "PER"), (4, "GPE")], &[(1, 2, "PHYS"), (3, 4, "PHYS")])] };
        assert_eq!(relation_type_statistic(&all_same).unwrap(), 1.0);
        let split = Corpus {
            documents: vec![doc(
                &[(1, "PER"), (2, "GPE"), (3, "ORG"), (4, "LOC")],
                &[(1, 2, "A"), (3, 4, "A"), (1, 3, "B"), (2, 4, "B")],
            )],
        };
        assert_eq!(relation_type_statistic(&split).unwrap(), 0.5);
        let empty = Corpus { documents: vec![doc(&[(1, "PER")], &[])] };
        assert!(relation_type_statistic(&empty).is_err());
    }

    fn prediction(rels: &[(usize, usize)], types: &[((usize, usize), &str)]) -> RePrediction {
        RePrediction {
            documents: vec![rels
                .iter()
                .map(|&(s, o)| ScoredRelation { subject: sp(s), object: sp(o), label: "R".into(), score: 1.0 })
                .collect()],
            object_types: vec![types.iter().map(|&((s, o), t)| ((sp(s), sp(o)), t.to_string())).collect()],
            stats: InferenceStats::default(),
        }
    }

    #[test]
    fn majority_vote_overrides_ner_type() {
        let ner = Corpus { documents: vec![doc(&[(1, "ORG"), (2, "LOC"), (3, "LOC"), (4, "LOC")], &[])] };
        let re = prediction(&[(1, 2), (3, 1)], &[((2, 1), "PER"), ((3, 1), "PER"), ((1, 2), "LOC"), ((1, 3), "LOC")]);
        let out = refine_entity_types(&ner, &re, 0.5, DEFAULT_REFINE_THRESHOLD);
        let labels: Vec<&str> = out.documents[0].entities.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["PER", "LOC", "LOC", "LOC"]);
    }

    #[test]
    fn ties_uninvolved_and_disabled_keep_types() {
        let ner = Corpus { documents: vec![doc(&[(1, "ORG"), (2, "LOC"), (3, "LOC")], &[])] };
        let re = prediction(&[(1, 2), (1, 3)], &[((2, 1), "PER"), ((3, 1), "LOC"), ((1, 2), "PER"), ((1, 3), "PER")]);
        let out = refine_entity_types(&ner, &re, 0.5, 0.4);
        let labels: Vec<&str> = out.documents[0].entities.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["ORG", "PER", "PER"]);
        assert_eq!(refine_entity_types(&ner, &re, 0.19, 0.4), ner);
        let lonely = Corpus { documents: vec![doc(&[(5, "ORG")], &[])] };
        assert_eq!(refine_entity_types(&lonely, &re, 1.0, 0.4), lonely);
    }
}
