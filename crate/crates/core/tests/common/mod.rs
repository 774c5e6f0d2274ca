#![allow(dead_code)]

use plmarker::encoder::{init_params, EncoderConfig, EncoderParams, Example, PairTarget, Targets};
use plmarker::heads::{HeadParams, NerMode};
use plmarker::layout::{build_pair_layout, build_span_layout, MarkerVocab};
use plmarker::spanspace::{enumerate_spans, Span};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: u32 = 50;

pub fn markers() -> MarkerVocab {
    MarkerVocab {
        span_start_id: VOCAB,
        span_end_id: VOCAB + 1,
        subj_start_id: VOCAB + 2,
        subj_end_id: VOCAB + 3,
        obj_start_id: VOCAB + 4,
        obj_end_id: VOCAB + 5,
    }
}

pub fn toy_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_size: VOCAB as usize + 6,
        hidden_dim: 32,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 64,
        max_position: 40,
        seed,
    }
}

pub fn toy_encoder(seed: u64) -> EncoderParams {
    init_params(&toy_config(seed)).unwrap()
}

pub fn random_sentence(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u32> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| rng.gen_range(0..VOCAB)).collect()
}

pub fn random_span(rng: &mut ChaCha8Rng, n: usize) -> Span {
    let a = rng.gen_range(1..=n);
    let b = rng.gen_range(a..=n);
    Span::new(a, b)
}

/// A small mixed batch of span and pair examples with random labels.
pub fn random_batch(rng: &mut ChaCha8Rng, ner_classes: usize, rel_classes: usize, types: usize) -> (Vec<Example>, Vec<Example>) {
    let mut ner = Vec::new();
    for _ in 0..2 {
        let text = random_sentence(rng, 7);
        let spans = enumerate_spans(text.len(), 3);
        let take: Vec<Span> = spans.iter().copied().filter(|_| rng.gen_bool(0.6)).take(5).collect();
        let take = if take.is_empty() { vec![spans[0]] } else { take };
        let layout = build_span_layout(&text, &take, 0, &markers(), 256).unwrap();
        let targets = take.iter().map(|&s| (s, rng.gen_range(0..ner_classes))).collect();
        ner.push(Example { layout, targets: Targets::Spans(targets) });
    }
    let mut re = Vec::new();
    for _ in 0..2 {
        let text = loop {
            let t = random_sentence(rng, 7);
            if t.len() >= 3 {
                break t;
            }
        };
        let subject = random_span(rng, text.len());
        let objects: Vec<Span> = (0..3).map(|_| random_span(rng, text.len())).filter(|o| *o != subject).collect();
        let mut objects = objects;
        objects.sort();
        objects.dedup();
        if objects.is_empty() {
            continue;
        }
        let layout = build_pair_layout(&text, subject, &objects, &markers(), 256).unwrap();
        let targets = objects
            .iter()
            .map(|&o| PairTarget { object: o, relation: rng.gen_range(0..rel_classes), object_type: rng.gen_range(0..types) })
            .collect();
        re.push(Example { layout, targets: Targets::Pairs(targets) });
    }
    (ner, re)
}

pub fn ner_heads(seed: u64, stage1: bool) -> HeadParams {
    HeadParams::for_ner(32, 3, NerMode::MarkerPlusTconcat, stage1, seed)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
