mod common;

use std::collections::BTreeSet;

use plmarker::corpus::{expand_context, Document};
use plmarker::layout::{build_pair_layout, build_span_layout, validate_layout, SlotRole};
use plmarker::metrics::{expand_symmetric, ner_f1, EntityKey, RelationKey};
use plmarker::spanspace::{
    build_directed_label_space, candidate_pairs, enumerate_spans, neighborhood_pack, random_pack, Span,
};
use proptest::prelude::*;

fn brute_spans(n: usize, l: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for a in 1..=n {
        for b in a..=n {
            if b - a < l {
                out.push(Span::new(a, b));
            }
        }
    }
    out
}

fn spans_strategy() -> impl Strategy<Value = (usize, Vec<Span>)> {
    (1usize..30).prop_flat_map(|n| {
        let span = (1..=n).prop_flat_map(move |a| (Just(a), a..=n)).prop_map(|(a, b)| Span::new(a, b));
        (Just(n), prop::collection::vec(span, 0..20))
    })
}

proptest! {
    #[test]
    fn enumeration_matches_brute_force(n in 0usize..60, l in 1usize..12) {
        let spans = enumerate_spans(n, l);
        prop_assert_eq!(&spans, &brute_spans(n, l));
        let expected: usize = (1..=n).map(|a| l.min(n - a + 1)).sum();
        prop_assert_eq!(spans.len(), expected);
    }

    #[test]
    fn packing_partitions_spans(n in 1usize..40, l in 1usize..9, k in 1usize..50, seed: u64) {
        let spans = enumerate_spans(n, l);
        for groups in [neighborhood_pack(&spans, k), random_pack(&spans, k, seed)] {
            prop_assert_eq!(groups.len(), spans.len().div_ceil(k));
            let mut all: Vec<Span> = Vec::new();
            for (i, g) in groups.iter().enumerate() {
                prop_assert_eq!(g.group_index, i);
                prop_assert!(!g.spans.is_empty() && g.spans.len() <= k);
                prop_assert!(g.spans.windows(2).all(|w| w[0] < w[1]));
                all.extend(&g.spans);
            }
            all.sort();
            prop_assert_eq!(&all, &spans);
        }
        let neighborhood: Vec<Span> = neighborhood_pack(&spans, k).into_iter().flat_map(|g| g.spans).collect();
        prop_assert_eq!(neighborhood, spans.clone());
        prop_assert_eq!(random_pack(&spans, k, seed), random_pack(&spans, k, seed));
    }

    #[test]
    fn context_window_is_most_centred(sent_lens in prop::collection::vec(1usize..8, 1..6), pick: prop::sample::Index, extra in 0usize..20) {
        let mut bounds = Vec::new();
        let mut pos = 1;
        for len in &sent_lens {
            bounds.push((pos, pos + len - 1));
            pos += len;
        }
        let n = pos - 1;
        let doc = Document {
            doc_id: "d".into(),
            tokens: (1..=n).map(|i| format!("t{i}")).collect(),
            sentence_bounds: bounds.clone(),
            entities: vec![],
            relations: vec![],
        };
        let si = pick.index(bounds.len()) + 1;
        let (s, e) = bounds[si - 1];
        let c = e - s + 1 + extra;
        let w = expand_context(&doc, si, c).unwrap();
        // Brute force over every admissible window start.
        let len = c.min(n);
        let best = (1..=n + 1 - len)
            .filter(|&ws| ws <= s && ws + len > e)
            .min_by_key(|&ws| {
                let left = s - ws;
                let right = ws + len - 1 - e;
                (left.abs_diff(right), std::cmp::Reverse(left))
            })
            .unwrap();
        prop_assert_eq!(w.origin_offset, best - 1);
        prop_assert_eq!(w.tokens.len(), len);
        prop_assert_eq!(w.focus(), Span::new(s - best + 1, e - best + 1));
        prop_assert_eq!(&w.tokens[w.focus_range.0 - 1..w.focus_range.1], &doc.tokens[s - 1..e]);
        prop_assert!(expand_context(&doc, si, e - s).is_err());
    }

    #[test]
    fn span_layouts_are_valid((n, spans) in spans_strategy()) {
        let mut spans = spans;
        spans.sort();
        spans.dedup();
        let text: Vec<u32> = (0..n as u32).map(|i| i % common::VOCAB).collect();
        let layout = build_span_layout(&text, &spans, 0, &common::markers(), usize::MAX).unwrap();
        prop_assert!(validate_layout(&layout).is_empty());
        prop_assert_eq!(layout.len(), n + 2 * spans.len());
        for (i, role) in layout.roles.iter().enumerate() {
            if *role == SlotRole::Text {
                prop_assert!(layout.visible_from(i).iter().all(|&j| layout.roles[j] == SlotRole::Text));
            }
        }
    }

    #[test]
    fn pair_layouts_are_valid((n, spans) in spans_strategy(), pick: prop::sample::Index) {
        prop_assume!(!spans.is_empty());
        let subject = spans[pick.index(spans.len())];
        let mut objects: Vec<Span> = spans.iter().copied().filter(|s| *s != subject).collect();
        objects.sort();
        objects.dedup();
        let text: Vec<u32> = (0..n as u32).map(|i| i % common::VOCAB).collect();
        let layout = build_pair_layout(&text, subject, &objects, &common::markers(), usize::MAX).unwrap();
        prop_assert!(validate_layout(&layout).is_empty());
        prop_assert_eq!(layout.max_position(), n + 2);
    }

    #[test]
    fn inverse_is_an_involution(n in 1usize..8, sym_mask in prop::collection::vec(any::<bool>(), 8)) {
        let labels: Vec<String> = (0..n).map(|i| format!("R{i}")).collect();
        let sym: Vec<String> = labels.iter().zip(&sym_mask).filter(|(_, s)| **s).map(|(l, _)| l.clone()).collect();
        let space = build_directed_label_space(&labels, &sym).unwrap();
        prop_assert_eq!(space.len(), 1 + 2 * n - sym.len());
        for id in 0..space.len() {
            prop_assert_eq!(space.inverse_of(space.inverse_of(id)), id);
            prop_assert_eq!(space.is_inverse(id), space.name(id).ends_with("_INV"));
            if space.is_inverse(id) {
                prop_assert!(!space.is_inverse(space.inverse_of(id)));
            }
        }
    }

    #[test]
    fn candidate_pairs_cover_directed_pairs((_n, spans) in spans_strategy()) {
        let distinct: BTreeSet<Span> = spans.iter().copied().collect();
        let pairs = candidate_pairs(&spans);
        prop_assert_eq!(pairs.len(), distinct.len());
        let directed: usize = pairs.iter().map(|(_, o)| o.len()).sum();
        prop_assert_eq!(directed, distinct.len() * distinct.len().saturating_sub(1));
    }

    #[test]
    fn ner_f1_counts_against_sets(gold in prop::collection::vec((1usize..6, 0u8..2), 0..8), pred in prop::collection::vec((1usize..6, 0u8..2), 0..8)) {
        let key = |(a, l): (usize, u8)| EntityKey { doc: "d".into(), span: Span::new(a, a), label: l.to_string() };
        let g: Vec<EntityKey> = gold.into_iter().map(key).collect();
        let p: Vec<EntityKey> = pred.into_iter().map(key).collect();
        let r = ner_f1(&g, &p);
        let gs: BTreeSet<_> = g.iter().collect();
        let ps: BTreeSet<_> = p.iter().collect();
        prop_assert_eq!(r.true_positive, gs.intersection(&ps).count());
        prop_assert_eq!((r.predicted, r.gold), (ps.len(), gs.len()));
        prop_assert!((0.0..=1.0).contains(&r.f1));
        if r.precision + r.recall > 0.0 {
            prop_assert!((r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_expansion_doubles_only_symmetric(n_sym in 0usize..5, n_asym in 0usize..5) {
        let mk = |i: usize, l: &str| RelationKey { doc: "d".into(), subject: Span::new(i + 1, i + 1), object: Span::new(i + 10, i + 10), label: l.into() };
        let rels: Vec<RelationKey> = (0..n_sym).map(|i| mk(i, "S")).chain((0..n_asym).map(|i| mk(i, "A"))).collect();
        prop_assert_eq!(expand_symmetric(&rels, &["S".to_string()]).len(), 2 * n_sym + n_asym);
    }
}
