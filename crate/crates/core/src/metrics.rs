//! Micro-averaged span-level NER F1 and relation F1 (boundaries / strict).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, RelationMention};
use crate::spanspace::Span;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("strict relation scoring needs gold and predicted entity types")]
    MissingTypes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EvalReport {
    pub fn from_counts(true_positive: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positive, predicted);
        let recall = ratio(true_positive, gold);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        EvalReport { precision, recall, f1, true_positive, predicted, gold }
    }

    /// `key=value` lines prefixed with `name.`.
    pub fn kv_lines(&self, name: &str) -> String {
        format!(
            "{name}.precision={:.6}\n{name}.recall={:.6}\n{name}.f1={:.6}\n{name}.tp={}\n{name}.pred={}\n{name}.gold={}\n",
            self.precision, self.recall, self.f1, self.true_positive, self.predicted, self.gold
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {:6.2}  R {:6.2}  F1 {:6.2}  (tp {}, pred {}, gold {})",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            self.true_positive,
            self.predicted,
            self.gold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityKey {
    pub doc: String,
    pub span: Span,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationKey {
    pub doc: String,
    pub subject: Span,
    pub object: Span,
    pub label: String,
}

/// `(doc, span) -> entity type`.
pub type TypeMap = BTreeMap<(String, Span), String>;

/// Exact match on (document, span, type); duplicates count once.
pub fn ner_f1(gold: &[EntityKey], pred: &[EntityKey]) -> EvalReport {
    let g: BTreeSet<&EntityKey> = gold.iter().collect();
    let p: BTreeSet<&EntityKey> = pred.iter().collect();
    EvalReport::from_counts(g.intersection(&p).count(), p.len(), g.len())
}

/// Each symmetric-label instance becomes both directions.
pub fn expand_symmetric(relations: &[RelationKey], symmetric: &[String]) -> Vec<RelationKey> {
    let mut out = Vec::with_capacity(relations.len());
    for r in relations {
        out.push(r.clone());
        if symmetric.contains(&r.label) {
            out.push(RelationKey { doc: r.doc.clone(), subject: r.object, object: r.subject, label: r.label.clone() });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelMode {
    /// Subject span, object span and label.
    Boundaries,
    /// Additionally both endpoint entity types.
    Strict,
}

/// Relation F1 over already symmetric-expanded directed sets.
pub fn rel_f1(
    gold: &[RelationKey],
    pred: &[RelationKey],
    gold_types: Option<&TypeMap>,
    pred_types: Option<&TypeMap>,
    mode: RelMode,
) -> Result<EvalReport, MetricsError> {
    let g: BTreeSet<&RelationKey> = gold.iter().collect();
    let p: BTreeSet<&RelationKey> = pred.iter().collect();
    let tp = match mode {
        RelMode::Boundaries => g.intersection(&p).count(),
        RelMode::Strict => {
            let (gt, pt) = gold_types.zip(pred_types).ok_or(MetricsError::MissingTypes)?;
            let same = |span: Span, doc: &str| {
                let key = (doc.to_string(), span);
                matches!((gt.get(&key), pt.get(&key)), (Some(a), Some(b)) if a == b)
            };
            g.intersection(&p).filter(|r| same(r.subject, &r.doc) && same(r.object, &r.doc)).count()
        }
    };
    Ok(EvalReport::from_counts(tp, p.len(), g.len()))
}

pub fn entity_keys(corpus: &Corpus) -> Vec<EntityKey> {
    corpus
        .documents
        .iter()
        .flat_map(|d| {
            d.entities.iter().map(|e| EntityKey { doc: d.doc_id.clone(), span: e.span, label: e.label.clone() })
        })
        .collect()
}

pub fn relation_keys(corpus: &Corpus) -> Vec<RelationKey> {
    corpus
        .documents
        .iter()
        .flat_map(|d| d.relations.iter().map(|r| relation_key(&d.doc_id, r)))
        .collect()
}

pub fn relation_key(doc: &str, r: &RelationMention) -> RelationKey {
    RelationKey { doc: doc.to_string(), subject: r.subject, object: r.object, label: r.label.clone() }
}

pub fn type_map(corpus: &Corpus) -> TypeMap {
    corpus
        .documents
        .iter()
        .flat_map(|d| d.entities.iter().map(|e| ((d.doc_id.clone(), e.span), e.label.clone())))
        .collect()
}

/// Entity, boundary-relation and strict-relation scores of `pred` against `gold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullReport {
    pub ent: EvalReport,
    pub rel: EvalReport,
    pub rel_strict: EvalReport,
}

pub fn evaluate(gold: &Corpus, pred: &Corpus, symmetric: &[String]) -> FullReport {
    let ent = ner_f1(&entity_keys(gold), &entity_keys(pred));
    let g = expand_symmetric(&relation_keys(gold), symmetric);
    let p = expand_symmetric(&relation_keys(pred), symmetric);
    let (gt, pt) = (type_map(gold), type_map(pred));
    let rel = rel_f1(&g, &p, None, None, RelMode::Boundaries).expect("boundaries mode");
    let rel_strict = rel_f1(&g, &p, Some(&gt), Some(&pt), RelMode::Strict).expect("types supplied");
    FullReport { ent, rel, rel_strict }
}
