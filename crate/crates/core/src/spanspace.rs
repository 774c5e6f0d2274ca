//! Candidate spans, packing strategies and the directed relation label space.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive 1-based token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    /// Panics if `start > end` or `start == 0`.
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start >= 1 && start <= end, "invalid span ({start},{end})");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Shift both endpoints by `delta` (may be negative).
    pub fn shifted(&self, delta: isize) -> Span {
        let s = self.start as isize + delta;
        let e = self.end as isize + delta;
        assert!(s >= 1, "span shifted below 1");
        Span { start: s as usize, end: e as usize }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanGroup {
    pub group_index: usize,
    pub spans: Vec<Span>,
}

/// Every span of length at most `max_len` in a sentence of `n` tokens,
/// ordered by start then end.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for a in 1..=n {
        let last = (a + max_len - 1).min(n);
        for b in a..=last {
            out.push(Span { start: a, end: b });
        }
    }
    out
}

fn chunk(spans: Vec<Span>, k: usize, sort_within: bool) -> Vec<SpanGroup> {
    assert!(k >= 1, "group size must be positive");
    spans
        .chunks(k)
        .enumerate()
        .map(|(group_index, c)| {
            let mut spans = c.to_vec();
            if sort_within {
                spans.sort();
            }
            SpanGroup { group_index, spans }
        })
        .collect()
}

/// Sort spans by (start, end) and cut the sequence greedily into groups of at
/// most `k`, so neighbouring spans share a group.
pub fn neighborhood_pack(spans: &[Span], k: usize) -> Vec<SpanGroup> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    chunk(sorted, k, false)
}

/// Seeded uniform permutation of the spans cut into groups of at most `k`.
/// Spans inside a group are re-sorted so layouts are order-canonical.
pub fn random_pack(spans: &[Span], k: usize, seed: u64) -> Vec<SpanGroup> {
    let mut shuffled = spans.to_vec();
    shuffled.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    chunk(shuffled, k, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PackingStrategy {
    #[default]
    Neighborhood,
    Random,
}

impl PackingStrategy {
    pub fn pack(self, spans: &[Span], k: usize, seed: u64) -> Vec<SpanGroup> {
        match self {
            PackingStrategy::Neighborhood => neighborhood_pack(spans, k),
            PackingStrategy::Random => random_pack(spans, k, seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PackingStrategy::Neighborhood => "neighborhood",
            PackingStrategy::Random => "random",
        }
    }
}

impl std::str::FromStr for PackingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neighborhood" => Ok(PackingStrategy::Neighborhood),
            "random" => Ok(PackingStrategy::Random),
            other => Err(format!("unknown packing strategy `{other}`")),
        }
    }
}

pub const NO_RELATION: &str = "NO_RELATION";
pub const INVERSE_SUFFIX: &str = "_INV";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelSpaceError {
    #[error("symmetric label `{0}` is not a relation type")]
    UnknownSymmetric(String),
    #[error("duplicate relation type `{0}`")]
    Duplicate(String),
    #[error("relation type `{0}` collides with a reserved label")]
    Reserved(String),
}

/// Relation labels closed under inversion. Id 0 is always `NO_RELATION`;
/// every forward label is followed by its inverse when it is asymmetric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedLabelSpace {
    labels: Vec<String>,
    inverse: Vec<usize>,
    /// Forward label id for each id; inverse ids map to the label they invert.
    is_inverse: Vec<bool>,
}

impl DirectedLabelSpace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn inverse_of(&self, id: usize) -> usize {
        self.inverse[id]
    }

    pub fn is_inverse(&self, id: usize) -> bool {
        self.is_inverse[id]
    }

    pub fn is_symmetric(&self, id: usize) -> bool {
        id != 0 && self.inverse[id] == id
    }

    pub fn no_relation(&self) -> usize {
        0
    }
}

pub fn build_directed_label_space(
    relation_types: &[String],
    symmetric: &[String],
) -> Result<DirectedLabelSpace, LabelSpaceError> {
    let known: BTreeSet<&str> = relation_types.iter().map(String::as_str).collect();
    if known.len() != relation_types.len() {
        let mut seen = BTreeSet::new();
        for r in relation_types {
            if !seen.insert(r) {
                return Err(LabelSpaceError::Duplicate(r.clone()));
            }
        }
    }
    for s in symmetric {
        if !known.contains(s.as_str()) {
            return Err(LabelSpaceError::UnknownSymmetric(s.clone()));
        }
    }
    let sym: BTreeSet<&str> = symmetric.iter().map(String::as_str).collect();

    let mut labels = vec![NO_RELATION.to_string()];
    let mut inverse = vec![0];
    let mut is_inverse = vec![false];
    for r in relation_types {
        if r == NO_RELATION || r.ends_with(INVERSE_SUFFIX) && known.contains(&r[..r.len() - INVERSE_SUFFIX.len()]) {
            return Err(LabelSpaceError::Reserved(r.clone()));
        }
        let id = labels.len();
        labels.push(r.clone());
        is_inverse.push(false);
        if sym.contains(r.as_str()) {
            inverse.push(id);
        } else {
            inverse.push(id + 1);
            labels.push(format!("{r}{INVERSE_SUFFIX}"));
            inverse.push(id);
            is_inverse.push(true);
        }
    }
    Ok(DirectedLabelSpace { labels, inverse, is_inverse })
}

/// For each span as subject, all other spans as objects. Input is de-duplicated
/// and sorted first.
pub fn candidate_pairs(entities: &[Span]) -> Vec<(Span, Vec<Span>)> {
    let mut spans = entities.to_vec();
    spans.sort();
    spans.dedup();
    spans
        .iter()
        .map(|&subject| {
            let objects = spans.iter().copied().filter(|&o| o != subject).collect();
            (subject, objects)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    #[test]
    fn enumerate_small() {
        assert_eq!(enumerate_spans(3, 2), vec![s(1, 1), s(1, 2), s(2, 2), s(2, 3), s(3, 3)]);
        assert!(enumerate_spans(0, 8).is_empty());
    }

    #[test]
    fn enumerate_count_matches_brute_force() {
        let brute = (1..=100usize)
            .flat_map(|a| (a..=100).map(move |b| (a, b)))
            .filter(|(a, b)| b - a < 8)
            .count();
        assert_eq!(brute, 772);
        assert_eq!(enumerate_spans(100, 8).len(), brute);
    }

    #[test]
    fn neighborhood_first_group_is_sentence_prefix() {
        let groups = neighborhood_pack(&enumerate_spans(5, 5), 5);
        assert_eq!(groups[0].spans, vec![s(1, 1), s(1, 2), s(1, 3), s(1, 4), s(1, 5)]);
    }

    #[test]
    fn neighborhood_sizes() {
        let sizes: Vec<_> =
            neighborhood_pack(&enumerate_spans(100, 8), 256).iter().map(|g| g.spans.len()).collect();
        assert_eq!(sizes, vec![256, 256, 256, 4]);
        assert_eq!(neighborhood_pack(&enumerate_spans(4, 4), 100).len(), 1);
    }

    #[test]
    fn random_pack_contract() {
        let spans = enumerate_spans(2, 2);
        assert_eq!(spans.len(), 3);
        let five: Vec<_> = enumerate_spans(5, 1);
        let a = random_pack(&five, 2, 7);
        assert_eq!(a, random_pack(&five, 2, 7));
        assert_eq!(a.iter().map(|g| g.spans.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<_> = a.iter().flat_map(|g| g.spans.clone()).collect();
        all.sort();
        assert_eq!(all, five);
        for g in &a {
            assert!(g.spans.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn label_space_with_symmetric() {
        let rel = vec!["PHYS".to_string(), "PER-SOC".to_string()];
        let space = build_directed_label_space(&rel, &["PER-SOC".to_string()]).unwrap();
        assert_eq!(space.labels(), &["NO_RELATION", "PHYS", "PHYS_INV", "PER-SOC"]);
        let phys = space.id("PHYS").unwrap();
        assert_eq!(space.name(space.inverse_of(phys)), "PHYS_INV");
        let soc = space.id("PER-SOC").unwrap();
        assert_eq!(space.inverse_of(soc), soc);
        assert!(space.is_symmetric(soc));
        assert_eq!(space.inverse_of(0), 0);
        for id in 0..space.len() {
            assert_eq!(space.inverse_of(space.inverse_of(id)), id);
        }
    }

    #[test]
    fn label_space_edge_cases() {
        let space = build_directed_label_space(&[], &[]).unwrap();
        assert_eq!(space.labels(), &["NO_RELATION"]);
        let rel = vec!["A".to_string(), "B".to_string()];
        let all_sym = build_directed_label_space(&rel, &rel).unwrap();
        assert_eq!(all_sym.len(), 3);
        assert_eq!(
            build_directed_label_space(&rel, &["C".to_string()]),
            Err(LabelSpaceError::UnknownSymmetric("C".into()))
        );
    }

    #[test]
    fn candidate_pairs_grouped_by_subject() {
        let (a, b, c) = (s(1, 1), s(3, 4), s(6, 6));
        let pairs = candidate_pairs(&[c, a, b]);
        assert_eq!(pairs, vec![(a, vec![b, c]), (b, vec![a, c]), (c, vec![a, b])]);
        let directed: usize = pairs.iter().map(|(_, o)| o.len()).sum();
        let brute = [a, b, c].iter().flat_map(|x| [a, b, c].map(|y| (*x, y))).filter(|(x, y)| x != y).count();
        assert_eq!(directed, brute);
        assert_eq!(directed, 6);
        assert_eq!(candidate_pairs(&[a]), vec![(a, vec![])]);
    }
}
