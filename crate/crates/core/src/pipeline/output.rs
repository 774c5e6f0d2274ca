use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    predict_ner, predict_re, refine_entity_types, NerModel, NerPrediction, PipelineError, PredictOptions,
    RePrediction, ReModel, ScoredEntity, ScoredRelation, TrainConfig,
};
use crate::corpus::{Corpus, Document, EntityMention, JsonDocument, LabelSchema, RelationMention};
use crate::encoder::checkpoint::{read_checkpoint, write_checkpoint};
use crate::spanspace::build_directed_label_space;
use crate::vocab::Vocabulary;

/// Final predictions for one document. Spans are document-level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocPrediction {
    pub doc_id: String,
    pub entities: Vec<ScoredEntity>,
    pub relations: Vec<ScoredRelation>,
}

/// Zip NER and (optional) RE predictions with their source documents.
pub fn assemble(source: &Corpus, ner: &NerPrediction, re: Option<&RePrediction>) -> Vec<DocPrediction> {
    source
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| DocPrediction {
            doc_id: d.doc_id.clone(),
            entities: ner.documents.get(i).cloned().unwrap_or_default(),
            relations: re.and_then(|r| r.documents.get(i).cloned()).unwrap_or_default(),
        })
        .collect()
}

/// Source text with predicted annotations in place of the gold ones.
pub fn predictions_to_corpus(source: &Corpus, preds: &[DocPrediction]) -> Corpus {
    let documents = source
        .documents
        .iter()
        .zip(preds)
        .map(|(d, p)| Document {
            entities: p.entities.iter().map(|e| EntityMention { span: e.span, label: e.label.clone() }).collect(),
            relations: p
                .relations
                .iter()
                .map(|r| RelationMention { subject: r.subject, object: r.object, label: r.label.clone() })
                .collect(),
            ..d.clone()
        })
        .collect();
    Corpus { documents }
}

/// NER, then RE over the predicted entities, then optional type refinement
/// gated by the RE model's training dominance ratio.
pub fn run_end_to_end(
    ner_model: &NerModel,
    re_model: Option<&ReModel>,
    corpus: &Corpus,
    opts: &PredictOptions,
    refine_threshold: Option<f64>,
) -> Result<Vec<DocPrediction>, PipelineError> {
    let ner = predict_ner(ner_model, corpus, opts)?;
    let Some(re_model) = re_model else {
        return Ok(assemble(corpus, &ner, None));
    };
    let mut preds = assemble(corpus, &ner, None);
    let with_entities = predictions_to_corpus(corpus, &preds);
    let re = predict_re(re_model, &with_entities, opts)?;
    if let Some(threshold) = refine_threshold {
        let refined = refine_entity_types(&with_entities, &re, re_model.type_dominance, threshold);
        for (p, d) in preds.iter_mut().zip(&refined.documents) {
            let labels: BTreeMap<_, _> = d.entities.iter().map(|e| (e.span, e.label.clone())).collect();
            for e in &mut p.entities {
                e.label = labels[&e.span].clone();
            }
        }
    }
    for (p, rels) in preds.iter_mut().zip(re.documents) {
        p.relations = rels;
    }
    Ok(preds)
}

/// JSONL in the input schema with `ner_scores` / `relation_scores` aligned
/// to the per-sentence annotation lists. Scores are written with full
/// precision, so identical predictions give identical bytes.
pub fn write_predictions(source: &Corpus, preds: &[DocPrediction]) -> String {
    let mut out = String::new();
    for (doc, p) in source.documents.iter().zip(preds) {
        let mut jd = JsonDocument::from_document(&Document { entities: vec![], relations: vec![], ..doc.clone() });
        let n = doc.num_sentences();
        let mut ner_scores = vec![Vec::new(); n];
        let mut rel_scores = vec![Vec::new(); n];
        for e in &p.entities {
            if let Some(si) = doc.sentence_of(e.span) {
                jd.ner[si - 1].push((e.span.start, e.span.end, e.label.clone()));
                ner_scores[si - 1].push(e.score);
            }
        }
        for r in &p.relations {
            if let Some(si) = doc.sentence_of(r.subject) {
                jd.relations[si - 1].push((r.subject.start, r.subject.end, r.object.start, r.object.end, r.label.clone()));
                rel_scores[si - 1].push(r.score);
            }
        }
        jd.ner_scores = Some(ner_scores);
        jd.relation_scores = Some(rel_scores);
        out.push_str(&serde_json::to_string(&jd).expect("serializable"));
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelMeta {
    Ner { vocab: Vocabulary, schema: LabelSchema, config: TrainConfig },
    Re { vocab: Vocabulary, schema: LabelSchema, config: TrainConfig, type_dominance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Ner(NerModel),
    Re(ReModel),
}

pub fn save_model(w: impl Write, model: &SavedModel) -> Result<(), PipelineError> {
    let (meta, encoder, heads) = match model {
        SavedModel::Ner(m) => (
            ModelMeta::Ner { vocab: m.vocab.clone(), schema: m.schema.clone(), config: m.config.clone() },
            &m.encoder,
            &m.heads,
        ),
        SavedModel::Re(m) => (
            ModelMeta::Re {
                vocab: m.vocab.clone(),
                schema: m.schema.clone(),
                config: m.config.clone(),
                type_dominance: m.type_dominance,
            },
            &m.encoder,
            &m.heads,
        ),
    };
    let extra = serde_json::to_value(&meta).map_err(|e| PipelineError::Data(e.to_string()))?;
    write_checkpoint(w, encoder, heads, &extra)?;
    Ok(())
}

pub fn load_model(r: impl Read) -> Result<SavedModel, PipelineError> {
    let ck = read_checkpoint(r)?;
    let meta: ModelMeta =
        serde_json::from_value(ck.extra).map_err(|e| PipelineError::Data(format!("model metadata: {e}")))?;
    Ok(match meta {
        ModelMeta::Ner { mut vocab, schema, config } => {
            vocab.reindex();
            SavedModel::Ner(NerModel { vocab, schema, config, encoder: ck.encoder, heads: ck.heads })
        }
        ModelMeta::Re { mut vocab, schema, config, type_dominance } => {
            vocab.reindex();
            let labels = build_directed_label_space(&schema.relation_types, &schema.symmetric_relations)?;
            SavedModel::Re(ReModel { vocab, schema, labels, type_dominance, config, encoder: ck.encoder, heads: ck.heads })
        }
    })
}
