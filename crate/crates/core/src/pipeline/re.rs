use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::refine::relation_type_statistic;
use super::{fit, sentence_seed, windows, InferenceStats, PipelineError, PredictOptions, TrainConfig, TrainReport};
use crate::corpus::{ContextWindow, Corpus, Document, LabelSchema, RelationMention};
use crate::encoder::{encode, init_params, EncoderParams, Example, PairTarget, Targets};
use crate::heads::{combine_bidirectional, pair_repr, re_logits, HeadParams};
use crate::layout::build_pair_layout;
use crate::parallel;
use crate::spanspace::{build_directed_label_space, candidate_pairs, DirectedLabelSpace, Span};
use crate::tensor::argmax;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct ReModel {
    pub vocab: Vocabulary,
    pub schema: LabelSchema,
    pub labels: DirectedLabelSpace,
    /// Dominance ratio of the training relations, used to gate type refinement.
    pub type_dominance: f64,
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRelation {
    pub subject: Span,
    pub object: Span,
    pub label: String,
    pub score: f64,
}

/// Relations per document plus, for every directed candidate pair
/// `(subject, object)`, the object type predicted by the auxiliary head.
/// All spans are document-level.
#[derive(Debug, Clone, PartialEq)]
pub struct RePrediction {
    pub documents: Vec<Vec<ScoredRelation>>,
    pub object_types: Vec<BTreeMap<(Span, Span), String>>,
    pub stats: InferenceStats,
}

/// Directed label id for every ordered pair of distinct `entities`.
///
/// A gold `r(i -> j)` supervises `r` at `(i, j)`; the reverse pair gets the
/// inverse label, or `r` itself when `r` is symmetric. Pairs with no gold
/// relation in either direction get `NO_RELATION`.
pub fn directed_supervision(
    relations: &[RelationMention],
    entities: &[Span],
    space: &DirectedLabelSpace,
) -> Result<BTreeMap<(Span, Span), usize>, PipelineError> {
    let mut gold: BTreeMap<(Span, Span), &str> = BTreeMap::new();
    for r in relations {
        gold.entry((r.subject, r.object)).or_insert(&r.label);
    }
    let id = |label: &str| {
        space.id(label).ok_or_else(|| PipelineError::Data(format!("relation label `{label}` not in label space")))
    };
    let mut out = BTreeMap::new();
    for &s in entities {
        for &o in entities {
            if s == o {
                continue;
            }
            let label = if let Some(l) = gold.get(&(s, o)) {
                id(l)?
            } else if let Some(l) = gold.get(&(o, s)) {
                space.inverse_of(id(l)?)
            } else {
                space.no_relation()
            };
            out.insert((s, o), label);
        }
    }
    Ok(out)
}

/// Entity spans of sentence `si` in window coordinates, with the type of the
/// first mention on each span.
fn window_entities(doc: &Document, si: usize, window: &ContextWindow) -> BTreeMap<Span, String> {
    let mut out = BTreeMap::new();
    for e in doc.entities_in_sentence(si) {
        let span = window.span_to_window(e.span).expect("sentence lies inside its window");
        out.entry(span).or_insert_with(|| e.label.clone());
    }
    out
}

struct ReSentence {
    doc: usize,
    sent: usize,
    ids: Vec<u32>,
    /// `(subject, [object targets])`.
    instances: Vec<(Span, Vec<PairTarget>)>,
}

pub fn train_re(
    corpus: &Corpus,
    schema: &LabelSchema,
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(ReModel, TrainReport), PipelineError> {
    config.validate()?;
    if corpus.documents.iter().all(|d| d.relations.is_empty()) {
        return Err(PipelineError::Data("corpus has no gold relations".into()));
    }
    corpus.validate_against(schema)?;
    let labels = build_directed_label_space(&schema.relation_types, &schema.symmetric_relations)?;
    let type_dominance = relation_type_statistic(corpus)?;
    let vocab = Vocabulary::build(corpus);
    let markers = vocab.markers();
    let mut encoder = init_params(&config.encoder_config(vocab.size()))?;
    let mut heads = HeadParams::for_re(config.hidden_dim, schema.entity_types.len(), labels.len(), config.seed.wrapping_add(2));

    let mut sentences = Vec::new();
    for (di, si, window) in windows(&corpus.documents, config.context_window)? {
        let doc = &corpus.documents[di];
        let ents = window_entities(doc, si, &window);
        if ents.len() < 2 {
            continue;
        }
        let spans: Vec<Span> = ents.keys().copied().collect();
        let rels: Vec<RelationMention> = doc
            .relations
            .iter()
            .filter_map(|r| {
                Some(RelationMention {
                    subject: window.span_to_window(r.subject)?,
                    object: window.span_to_window(r.object)?,
                    label: r.label.clone(),
                })
            })
            .collect();
        let targets = directed_supervision(&rels, &spans, &labels)?;
        let instances = candidate_pairs(&spans)
            .into_iter()
            .map(|(subject, objects)| {
                let t = objects
                    .into_iter()
                    .map(|object| PairTarget {
                        object,
                        relation: targets[&(subject, object)],
                        object_type: schema.entity_id(&ents[&object]).expect("validated against schema"),
                    })
                    .collect();
                (subject, t)
            })
            .collect();
        sentences.push(ReSentence { doc: di, sent: si, ids: vocab.encode(&window.tokens), instances });
    }
    if sentences.is_empty() {
        return Err(PipelineError::Data("no sentence has two or more entities".into()));
    }

    let examples_for = |epoch: usize| -> Result<Vec<Example>, PipelineError> {
        let mut out = Vec::new();
        for s in &sentences {
            let seed = sentence_seed(config.seed.wrapping_add(epoch as u64), s.doc, s.sent);
            for (subject, targets) in &s.instances {
                let objects: Vec<Span> = targets.iter().map(|t| t.object).collect();
                for group in config.packing.pack(&objects, config.group_size, seed) {
                    let layout = build_pair_layout(&s.ids, *subject, &group.spans, &markers, config.max_slots)?;
                    let chosen = targets.iter().filter(|t| group.spans.contains(&t.object)).copied().collect();
                    out.push(Example { layout, targets: Targets::Pairs(chosen) });
                }
            }
        }
        Ok(out)
    };
    let report = fit(&mut encoder, &mut heads, config, examples_for, on_epoch)?;
    Ok((ReModel { vocab, schema: schema.clone(), labels, type_dominance, config: config.clone(), encoder, heads }, report))
}

struct SentenceRelations {
    relations: Vec<(Span, Span, usize, f64)>,
    object_types: BTreeMap<(Span, Span), usize>,
    stats: InferenceStats,
}

fn predict_sentence(
    model: &ReModel,
    doc: &Document,
    si: usize,
    window: &ContextWindow,
    opts: &PredictOptions,
    seed: u64,
) -> Result<SentenceRelations, PipelineError> {
    let mut stats = InferenceStats { sentences: 1, ..Default::default() };
    let spans: Vec<Span> = window_entities(doc, si, window).into_keys().collect();
    let mut logits: BTreeMap<(Span, Span), Vec<f64>> = BTreeMap::new();
    let mut object_types = BTreeMap::new();
    if spans.len() >= 2 {
        let ids = model.vocab.encode(&window.tokens);
        let markers = model.vocab.markers();
        for (subject, objects) in candidate_pairs(&spans) {
            for group in opts.packing.pack(&objects, opts.group_size, seed) {
                let layout = build_pair_layout(&ids, subject, &group.spans, &markers, opts.max_slots)?;
                let out = encode(&model.encoder, &layout)?;
                stats.layouts += 1;
                stats.slots += layout.len();
                for &object in &group.spans {
                    let (rel, ty) = re_logits(&pair_repr(&out, &layout, object)?, &model.heads)?;
                    logits.insert((subject, object), rel);
                    object_types.insert((subject, object), argmax(&ty));
                }
            }
        }
    }
    let space = &model.labels;
    let mut best: BTreeMap<(Span, Span, usize), f64> = BTreeMap::new();
    for (&(i, j), fwd) in &logits {
        let combined = combine_bidirectional(fwd, &logits[&(j, i)], space)?;
        let label = combined.label;
        if label == space.no_relation() {
            continue;
        }
        let score = combined.scores[label];
        let (s, o, l) = if space.is_inverse(label) {
            (j, i, space.inverse_of(label))
        } else if space.is_symmetric(label) && j < i {
            (j, i, label)
        } else {
            (i, j, label)
        };
        let slot = best.entry((s, o, l)).or_insert(score);
        *slot = slot.max(score);
    }
    let relations = best.into_iter().map(|((s, o, l), score)| (s, o, l, score)).collect();
    Ok(SentenceRelations { relations, object_types, stats })
}

/// Relations among the entities already attached to `corpus` (gold or
/// predicted). Symmetric relations are emitted once, subject first in text
/// order; inverse labels are emitted as their forward label with the
/// endpoints swapped.
pub fn predict_re(model: &ReModel, corpus: &Corpus, opts: &PredictOptions) -> Result<RePrediction, PipelineError> {
    opts.validate()?;
    let jobs = windows(&corpus.documents, model.config.context_window)?;
    let results = parallel::map(&jobs, opts.parallel, |(di, si, w)| {
        predict_sentence(model, &corpus.documents[*di], *si, w, opts, sentence_seed(opts.seed, *di, *si))
    });
    let n = corpus.documents.len();
    let mut documents: Vec<Vec<ScoredRelation>> = vec![Vec::new(); n];
    let mut object_types: Vec<BTreeMap<(Span, Span), String>> = vec![BTreeMap::new(); n];
    let mut stats = InferenceStats::default();
    for ((di, _, window), res) in jobs.iter().zip(results) {
        let r = res?;
        stats.merge(&r.stats);
        documents[*di].extend(r.relations.into_iter().map(|(s, o, l, score)| ScoredRelation {
            subject: window.span_to_doc(s),
            object: window.span_to_doc(o),
            label: model.labels.name(l).to_string(),
            score,
        }));
        for ((s, o), t) in r.object_types {
            object_types[*di].insert((window.span_to_doc(s), window.span_to_doc(o)), model.schema.entity_types[t].clone());
        }
    }
    for doc in &mut documents {
        doc.sort_by(|a, b| (a.subject, a.object, &a.label).cmp(&(b.subject, b.object, &b.label)));
    }
    Ok(RePrediction { documents, object_types, stats })
}

/// Distinct spans with at least one predicted relation, per document.
pub(crate) fn participants(pred: &RePrediction) -> Vec<BTreeSet<Span>> {
    pred.documents
        .iter()
        .map(|rels| rels.iter().flat_map(|r| [r.subject, r.object]).collect())
        .collect()
}
