use std::collections::BTreeMap;

use serde::Serialize;

use super::{fit, sentence_seed, windows, InferenceStats, PipelineError, PredictOptions, TrainConfig, TrainReport};
use crate::corpus::{ContextWindow, Corpus, LabelSchema};
use crate::encoder::{encode, init_params, prompt_init_markers, EncoderParams, Example, Targets};
use crate::heads::{ner_logits, span_repr, tconcat_repr, HeadParams};
use crate::layout::{build_span_layout, text_layout};
use crate::parallel;
use crate::spanspace::{enumerate_spans, Span};
use crate::tensor::{argmax, softmax};
use crate::vocab::{TokenId, Vocabulary, ENTITY_WORD, MASK};

/// A trained span classifier with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct NerModel {
    pub vocab: Vocabulary,
    pub schema: LabelSchema,
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEntity {
    pub span: Span,
    pub label: String,
    pub score: f64,
}

/// Entities per document (document-level spans, sorted), plus counters.
#[derive(Debug, Clone, PartialEq)]
pub struct NerPrediction {
    pub documents: Vec<Vec<ScoredEntity>>,
    pub stats: InferenceStats,
}

/// Candidate spans of the window's focus sentence, in window coordinates.
pub(crate) fn focus_spans(window: &ContextWindow, max_len: usize) -> Vec<Span> {
    let focus = window.focus();
    enumerate_spans(focus.len(), max_len)
        .into_iter()
        .map(|s| s.shifted(focus.start as isize - 1))
        .collect()
}

struct NerSentence {
    doc: usize,
    sent: usize,
    ids: Vec<TokenId>,
    spans: Vec<Span>,
    gold: BTreeMap<Span, usize>,
}

pub fn train_ner(
    corpus: &Corpus,
    schema: &LabelSchema,
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(NerModel, TrainReport), PipelineError> {
    config.validate()?;
    if corpus.documents.iter().all(|d| d.entities.is_empty()) {
        return Err(PipelineError::Data("corpus has no gold entities".into()));
    }
    corpus.validate_against(schema)?;
    let vocab = Vocabulary::build(corpus);
    let markers = vocab.markers();
    let mut encoder = init_params(&config.encoder_config(vocab.size()))?;
    if config.prompt_init {
        let map = BTreeMap::from([(markers.span_start_id, vocab.id(MASK)), (markers.span_end_id, vocab.id(ENTITY_WORD))]);
        encoder = prompt_init_markers(&encoder, &map)?;
    }
    let mut heads = HeadParams::for_ner(
        config.hidden_dim,
        schema.entity_types.len(),
        config.ner_mode,
        config.stage1_head,
        config.seed.wrapping_add(1),
    );

    let mut sentences = Vec::new();
    for (di, si, window) in windows(&corpus.documents, config.context_window)? {
        let doc = &corpus.documents[di];
        let mut gold = BTreeMap::new();
        for e in doc.entities_in_sentence(si) {
            let span = window.span_to_window(e.span).expect("sentence lies inside its window");
            let label = schema.entity_id(&e.label).expect("validated against schema") + 1;
            gold.entry(span).or_insert(label);
        }
        sentences.push(NerSentence {
            doc: di,
            sent: si,
            ids: vocab.encode(&window.tokens),
            spans: focus_spans(&window, config.max_span_len),
            gold,
        });
    }

    let examples_for = |epoch: usize| -> Result<Vec<Example>, PipelineError> {
        let mut out = Vec::new();
        for s in &sentences {
            let seed = sentence_seed(config.seed.wrapping_add(epoch as u64), s.doc, s.sent);
            for group in config.packing.pack(&s.spans, config.group_size, seed) {
                let layout = build_span_layout(&s.ids, &group.spans, group.group_index, &markers, config.max_slots)?;
                let targets = group.spans.iter().map(|sp| (*sp, s.gold.get(sp).copied().unwrap_or(0))).collect();
                out.push(Example { layout, targets: Targets::Spans(targets) });
            }
        }
        Ok(out)
    };
    let report = fit(&mut encoder, &mut heads, config, examples_for, on_epoch)?;
    let model = NerModel { vocab, schema: schema.clone(), config: config.clone(), encoder, heads };
    Ok((model, report))
}

/// Keep the highest-scoring spans that do not overlap anything kept before.
fn resolve_overlaps(mut found: Vec<(Span, usize, f64)>) -> Vec<(Span, usize, f64)> {
    found.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(Span, usize, f64)> = Vec::new();
    for cand in found {
        if kept.iter().all(|k| !k.0.overlaps(&cand.0)) {
            kept.push(cand);
        }
    }
    kept
}

/// `(span, type id, score)` for each kept span of one sentence.
type SentenceEntities = Vec<(Span, usize, f64)>;

fn predict_sentence(
    model: &NerModel,
    window: &ContextWindow,
    opts: &PredictOptions,
    seed: u64,
) -> Result<(SentenceEntities, InferenceStats), PipelineError> {
    let ids = model.vocab.encode(&window.tokens);
    let mut spans = focus_spans(window, model.config.max_span_len);
    let mut stats = InferenceStats { sentences: 1, ..Default::default() };

    if let Some(m) = opts.two_stage {
        let stage1 = model.heads.stage1.as_ref().ok_or_else(|| {
            PipelineError::Config("two-stage prediction needs a model trained with a stage-1 head".into())
        })?;
        let layout = text_layout(&ids);
        let out = encode(&model.encoder, &layout)?;
        stats.layouts += 1;
        stats.slots += layout.len();
        if spans.len() > m {
            let mut scored = Vec::with_capacity(spans.len());
            for &s in &spans {
                let feats = tconcat_repr(&out, &layout, s)?.tconcat.expect("tconcat feature");
                let p = softmax(&stage1.logits(&feats)?);
                scored.push((1.0 - p[0], s));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            spans = scored.into_iter().take(m).map(|(_, s)| s).collect();
            spans.sort();
        }
    }

    let ner = model.heads.ner_head()?;
    let mode = model.heads.ner_mode;
    let markers = model.vocab.markers();
    let mut found = Vec::new();
    for group in opts.packing.pack(&spans, opts.group_size, seed) {
        let layout = build_span_layout(&ids, &group.spans, group.group_index, &markers, opts.max_slots)?;
        let out = encode(&model.encoder, &layout)?;
        stats.layouts += 1;
        stats.slots += layout.len();
        for &span in &group.spans {
            let repr = span_repr(&out, &layout, span, mode.needs_tconcat())?;
            let p = softmax(&ner_logits(&repr, ner, mode)?);
            let label = argmax(&p);
            if label != 0 {
                found.push((span, label, p[label]));
            }
        }
    }
    if !model.schema.nested {
        found = resolve_overlaps(found);
    }
    Ok((found, stats))
}

/// Label every candidate span of every sentence. Results do not depend on
/// the group size, the packing strategy or parallelism.
pub fn predict_ner(model: &NerModel, corpus: &Corpus, opts: &PredictOptions) -> Result<NerPrediction, PipelineError> {
    opts.validate()?;
    if opts.two_stage.is_some() && model.heads.stage1.is_none() {
        return Err(PipelineError::Config("two-stage prediction needs a model trained with a stage-1 head".into()));
    }
    let jobs = windows(&corpus.documents, model.config.context_window)?;
    let results = parallel::map(&jobs, opts.parallel, |(di, si, w)| {
        predict_sentence(model, w, opts, sentence_seed(opts.seed, *di, *si))
    });
    let mut documents: Vec<Vec<ScoredEntity>> = vec![Vec::new(); corpus.documents.len()];
    let mut stats = InferenceStats::default();
    for ((di, _, window), res) in jobs.iter().zip(results) {
        let (found, s) = res?;
        stats.merge(&s);
        documents[*di].extend(found.into_iter().map(|(span, label, score)| ScoredEntity {
            span: window.span_to_doc(span),
            label: model.schema.entity_types[label - 1].clone(),
            score,
        }));
    }
    for doc in &mut documents {
        doc.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.label.cmp(&b.label)));
    }
    Ok(NerPrediction { documents, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_resolution_prefers_score_then_position() {
        let kept = resolve_overlaps(vec![
            (Span::new(1, 2), 1, 0.6),
            (Span::new(2, 3), 1, 0.9),
            (Span::new(4, 4), 2, 0.6),
            (Span::new(4, 5), 2, 0.6),
        ]);
        let spans: Vec<Span> = kept.iter().map(|k| k.0).collect();
        assert_eq!(spans, vec![Span::new(2, 3), Span::new(4, 4)]);
    }

    #[test]
    fn focus_spans_stay_inside_the_sentence() {
        let w = ContextWindow {
            doc_id: "d".into(),
            tokens: (0..10).map(|i| i.to_string()).collect(),
            focus_range: (4, 6),
            origin_offset: 0,
        };
        let spans = focus_spans(&w, 2);
        assert_eq!(spans.len(), 5);
        assert!(spans.iter().all(|s| s.start >= 4 && s.end <= 6 && s.len() <= 2));
    }
}
