//! Slot sequences for the encoder: text tokens, solid markers and levitated
//! marker pairs, with position ids, the directional visibility matrix and the
//! map from marker slots back to spans.
//!
//! Levitated pairs are appended after the text block in group order. A
//! levitated marker shares the position id of its span boundary token, sees
//! every text (and solid) slot, itself and its partner, and nothing else.
//! Text and solid slots never see levitated markers.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spanspace::Span;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerVocab {
    pub span_start_id: TokenId,
    pub span_end_id: TokenId,
    pub subj_start_id: TokenId,
    pub subj_end_id: TokenId,
    pub obj_start_id: TokenId,
    pub obj_end_id: TokenId,
}

impl MarkerVocab {
    pub fn ids(&self) -> [TokenId; 6] {
        [
            self.span_start_id,
            self.span_end_id,
            self.subj_start_id,
            self.subj_end_id,
            self.obj_start_id,
            self.obj_end_id,
        ]
    }

    /// Marker ids must be pairwise distinct and outside `0..num_text`.
    pub fn validate(&self, num_text: usize) -> Result<(), LayoutError> {
        let ids = self.ids();
        for (i, a) in ids.iter().enumerate() {
            if (*a as usize) < num_text {
                return Err(LayoutError::Vocab(format!("marker id {a} collides with text ids")));
            }
            if ids[i + 1..].contains(a) {
                return Err(LayoutError::Vocab(format!("marker id {a} used twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("span {span} lies outside the {len}-token window")]
    OutOfWindow { span: Span, len: usize },
    #[error("group {group}: {slots} slots exceed the limit of {max}")]
    Overflow { group: usize, slots: usize, max: usize },
    #[error("marker vocabulary: {0}")]
    Vocab(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotRole {
    Text,
    Solid,
    LevStart,
    LevEnd,
}

impl SlotRole {
    /// Text and solid markers form the in-stream block.
    pub fn is_stream(self) -> bool {
        matches!(self, SlotRole::Text | SlotRole::Solid)
    }

    fn tag(self) -> &'static str {
        match self {
            SlotRole::Text => "TEXT",
            SlotRole::Solid => "SOLID",
            SlotRole::LevStart => "LEV_START",
            SlotRole::LevEnd => "LEV_END",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerPair {
    pub span: Span,
    pub start_slot: usize,
    pub end_slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerOrigin {
    pub span: Span,
    pub pair: usize,
    pub role: SlotRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Span,
    Pair { subject: Span, solid_start: usize, solid_end: usize },
}

/// Dense boolean matrix; `get(i, j)` is whether slot `i` attends to slot `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    n: usize,
    cells: Vec<bool>,
}

impl Visibility {
    pub fn new(n: usize) -> Self {
        Visibility { n, cells: vec![false; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.cells[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingLayout {
    pub token_ids: Vec<TokenId>,
    pub position_ids: Vec<usize>,
    pub visibility: Visibility,
    pub roles: Vec<SlotRole>,
    pub pairs: Vec<MarkerPair>,
    /// Slot holding each original window token; `text_slots[t - 1]` for token t.
    pub text_slots: Vec<usize>,
    pub kind: LayoutKind,
}

impl EncodingLayout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_text(&self) -> usize {
        self.text_slots.len()
    }

    pub fn origin(&self) -> BTreeMap<usize, MarkerOrigin> {
        let mut map = BTreeMap::new();
        for (pair, p) in self.pairs.iter().enumerate() {
            map.insert(p.start_slot, MarkerOrigin { span: p.span, pair, role: SlotRole::LevStart });
            map.insert(p.end_slot, MarkerOrigin { span: p.span, pair, role: SlotRole::LevEnd });
        }
        map
    }

    pub fn pair_of(&self, span: Span) -> Option<&MarkerPair> {
        self.pairs.iter().find(|p| p.span == span)
    }

    /// Partner slot for each levitated marker slot.
    pub fn partners(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.len()];
        for p in &self.pairs {
            if p.start_slot < out.len() && p.end_slot < out.len() {
                out[p.start_slot] = Some(p.end_slot);
                out[p.end_slot] = Some(p.start_slot);
            }
        }
        out
    }

    /// Indices `j` with `visibility(i, j)`, ascending.
    pub fn visible_from(&self, i: usize) -> Vec<usize> {
        self.visibility.row(i).iter().enumerate().filter(|(_, v)| **v).map(|(j, _)| j).collect()
    }

    pub fn max_position(&self) -> usize {
        self.position_ids.iter().copied().max().unwrap_or(0)
    }

    /// Plain-text table of slots followed by the visibility grid.
    pub fn dump(&self, vocab: Option<&Vocabulary>) -> String {
        let origin = self.origin();
        let mut out = String::new();
        let _ = writeln!(out, "slots {}", self.len());
        let _ = writeln!(out, "slot\ttoken\tpos\trole\torigin");
        for i in 0..self.len() {
            let token = match vocab {
                Some(v) => v.word(self.token_ids[i]).to_string(),
                None => self.token_ids[i].to_string(),
            };
            let o = origin.get(&i).map(|o| format!("{}#{}", o.span, o.pair)).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{i}\t{token}\t{}\t{}\t{o}", self.position_ids[i], self.roles[i].tag());
        }
        let _ = writeln!(out, "visibility");
        for i in 0..self.len() {
            let row: String = self.visibility.row(i).iter().map(|v| if *v { '1' } else { '0' }).collect();
            let _ = writeln!(out, "{row}");
        }
        out
    }
}

fn fill_visibility(roles: &[SlotRole], pairs: &[MarkerPair]) -> Visibility {
    let n = roles.len();
    let mut vis = Visibility::new(n);
    let stream: Vec<usize> = (0..n).filter(|&i| roles[i].is_stream()).collect();
    for &i in &stream {
        for &j in &stream {
            vis.set(i, j, true);
        }
    }
    for p in pairs {
        for m in [p.start_slot, p.end_slot] {
            for &j in &stream {
                vis.set(m, j, true);
            }
            vis.set(m, p.start_slot, true);
            vis.set(m, p.end_slot, true);
        }
    }
    vis
}

fn check_in_window(span: Span, len: usize) -> Result<(), LayoutError> {
    if span.start == 0 || span.start > span.end || span.end > len {
        return Err(LayoutError::OutOfWindow { span, len });
    }
    Ok(())
}

/// Text tokens followed by one levitated `[M] [/M]` pair per span.
///
/// `text` holds the window's token ids; spans are window-relative.
pub fn build_span_layout(
    text: &[TokenId],
    spans: &[Span],
    group_index: usize,
    markers: &MarkerVocab,
    max_slots: usize,
) -> Result<EncodingLayout, LayoutError> {
    let n = text.len();
    let total = n + 2 * spans.len();
    if total > max_slots {
        return Err(LayoutError::Overflow { group: group_index, slots: total, max: max_slots });
    }
    for &s in spans {
        check_in_window(s, n)?;
    }
    let mut token_ids = text.to_vec();
    let mut position_ids: Vec<usize> = (1..=n).collect();
    let mut roles = vec![SlotRole::Text; n];
    let mut pairs = Vec::with_capacity(spans.len());
    for &span in spans {
        let start_slot = token_ids.len();
        token_ids.extend([markers.span_start_id, markers.span_end_id]);
        position_ids.extend([span.start, span.end]);
        roles.extend([SlotRole::LevStart, SlotRole::LevEnd]);
        pairs.push(MarkerPair { span, start_slot, end_slot: start_slot + 1 });
    }
    let visibility = fill_visibility(&roles, &pairs);
    Ok(EncodingLayout {
        token_ids,
        position_ids,
        visibility,
        roles,
        pairs,
        text_slots: (0..n).collect(),
        kind: LayoutKind::Span,
    })
}

/// Plain text with no markers.
pub fn text_layout(text: &[TokenId]) -> EncodingLayout {
    build_span_layout(text, &[], 0, &MarkerVocab::dummy(), usize::MAX).expect("text-only layout")
}

impl MarkerVocab {
    fn dummy() -> Self {
        MarkerVocab {
            span_start_id: 0,
            span_end_id: 0,
            subj_start_id: 0,
            subj_end_id: 0,
            obj_start_id: 0,
            obj_end_id: 0,
        }
    }
}

/// Solid `[S]`/`[/S]` around the subject inside the text stream, then one
/// levitated `[O] [/O]` pair per object positioned on the shifted stream.
pub fn build_pair_layout(
    text: &[TokenId],
    subject: Span,
    objects: &[Span],
    markers: &MarkerVocab,
    max_slots: usize,
) -> Result<EncodingLayout, LayoutError> {
    let n = text.len();
    let total = n + 2 + 2 * objects.len();
    if total > max_slots {
        return Err(LayoutError::Overflow { group: 0, slots: total, max: max_slots });
    }
    check_in_window(subject, n)?;
    for &o in objects {
        check_in_window(o, n)?;
    }
    let mut token_ids = Vec::with_capacity(total);
    let mut roles = Vec::with_capacity(total);
    let mut text_slots = Vec::with_capacity(n);
    let (mut solid_start, mut solid_end) = (0, 0);
    for (i, &tok) in text.iter().enumerate() {
        let t = i + 1;
        if t == subject.start {
            solid_start = token_ids.len();
            token_ids.push(markers.subj_start_id);
            roles.push(SlotRole::Solid);
        }
        text_slots.push(token_ids.len());
        token_ids.push(tok);
        roles.push(SlotRole::Text);
        if t == subject.end {
            solid_end = token_ids.len();
            token_ids.push(markers.subj_end_id);
            roles.push(SlotRole::Solid);
        }
    }
    let mut position_ids: Vec<usize> = (1..=token_ids.len()).collect();
    let mut pairs = Vec::with_capacity(objects.len());
    for &span in objects {
        let start_slot = token_ids.len();
        token_ids.extend([markers.obj_start_id, markers.obj_end_id]);
        position_ids.extend([text_slots[span.start - 1] + 1, text_slots[span.end - 1] + 1]);
        roles.extend([SlotRole::LevStart, SlotRole::LevEnd]);
        pairs.push(MarkerPair { span, start_slot, end_slot: start_slot + 1 });
    }
    let visibility = fill_visibility(&roles, &pairs);
    Ok(EncodingLayout {
        token_ids,
        position_ids,
        visibility,
        roles,
        pairs,
        text_slots,
        kind: LayoutKind::Pair { subject, solid_start, solid_end },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Shape,
    TextSlots,
    StreamPositions,
    Pairing,
    MarkerPosition,
    Visibility,
    SolidMarkers,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub slots: Option<(usize, usize)>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slots {
            Some((i, j)) => write!(f, "{:?} at slots ({i},{j}): {}", self.rule, self.detail),
            None => write!(f, "{:?}: {}", self.rule, self.detail),
        }
    }
}

/// Every broken invariant of `layout`; empty when the layout is well formed.
pub fn validate_layout(layout: &EncodingLayout) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, slots, detail: String| out.push(Violation { rule, slots, detail });
    let n = layout.token_ids.len();
    if layout.position_ids.len() != n || layout.roles.len() != n || layout.visibility.dim() != n {
        push(
            Rule::Shape,
            None,
            format!(
                "tokens {n}, positions {}, roles {}, matrix {}",
                layout.position_ids.len(),
                layout.roles.len(),
                layout.visibility.dim()
            ),
        );
        return out;
    }
    let roles = &layout.roles;

    let text_count = roles.iter().filter(|r| **r == SlotRole::Text).count();
    let slots_ok = layout.text_slots.len() == text_count
        && layout.text_slots.iter().all(|&s| s < n && roles[s] == SlotRole::Text)
        && layout.text_slots.windows(2).all(|w| w[0] < w[1]);
    if !slots_ok {
        push(Rule::TextSlots, None, "text slot map does not list the TEXT slots in order".into());
    }

    let mut expected = 1;
    for i in 0..n {
        if roles[i].is_stream() {
            if layout.position_ids[i] != expected {
                push(
                    Rule::StreamPositions,
                    Some((i, i)),
                    format!("position {} where {expected} expected", layout.position_ids[i]),
                );
            }
            expected += 1;
        }
    }

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (pi, p) in layout.pairs.iter().enumerate() {
        let mut bad = false;
        for (slot, role) in [(p.start_slot, SlotRole::LevStart), (p.end_slot, SlotRole::LevEnd)] {
            if slot >= n || roles[slot] != role {
                push(Rule::Pairing, Some((p.start_slot, p.end_slot)), format!("pair {pi}: slot {slot} is not {role:?}"));
                bad = true;
            } else if let Some(other) = owner[slot] {
                push(Rule::Pairing, Some((p.start_slot, p.end_slot)), format!("slot {slot} shared by pairs {other} and {pi}"));
                bad = true;
            } else {
                owner[slot] = Some(pi);
            }
        }
        if bad || !slots_ok {
            continue;
        }
        if p.span.start == 0 || p.span.start > p.span.end || p.span.end > layout.text_slots.len() {
            push(Rule::MarkerPosition, Some((p.start_slot, p.end_slot)), format!("span {} outside text", p.span));
            continue;
        }
        for (slot, tok) in [(p.start_slot, p.span.start), (p.end_slot, p.span.end)] {
            let want = layout.position_ids[layout.text_slots[tok - 1]];
            if layout.position_ids[slot] != want {
                push(
                    Rule::MarkerPosition,
                    Some((slot, layout.text_slots[tok - 1])),
                    format!("marker of {} has position {}, boundary token has {want}", p.span, layout.position_ids[slot]),
                );
            }
        }
    }
    for i in 0..n {
        if !roles[i].is_stream() && owner[i].is_none() {
            push(Rule::Pairing, Some((i, i)), "levitated marker without a partner".into());
        }
    }

    let partners = layout.partners();
    for i in 0..n {
        for j in 0..n {
            let want = if roles[i].is_stream() {
                roles[j].is_stream()
            } else {
                roles[j].is_stream() || i == j || partners[i] == Some(j)
            };
            let got = layout.visibility.get(i, j);
            if got != want {
                let what = if got { "visible but must be hidden" } else { "hidden but must be visible" };
                push(Rule::Visibility, Some((i, j)), format!("{:?} -> {:?} {what}", roles[i], roles[j]));
            }
        }
    }

    if let LayoutKind::Pair { solid_start, solid_end, .. } = layout.kind {
        for s in [solid_start, solid_end] {
            if s >= n || roles[s] != SlotRole::Solid {
                push(Rule::SolidMarkers, Some((s, s)), "declared solid marker slot is not SOLID".into());
            }
        }
    }
    out
}
