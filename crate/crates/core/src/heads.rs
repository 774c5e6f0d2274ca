//! Span and span-pair features drawn from slot outputs, the classifier heads,
//! bidirectional relation scoring and the training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{ParamTensors, SlotOutputs};
use crate::layout::{EncodingLayout, LayoutKind};
use crate::spanspace::{DirectedLabelSpace, Span};
use crate::tensor::{accumulate_affine_grad_vec, affine_vec, argmax, gelu, gelu_grad, matvec_transposed, softmax, Matrix};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeadError {
    #[error("span {0} has no marker pair in this layout")]
    MissingSpan(Span),
    #[error("layout has no solid subject markers")]
    NotPairLayout,
    #[error("configuration: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
}

/// Marker feature `[h_start; h_end]` of a levitated pair, plus optionally the
/// T-Concat feature from the span's boundary text tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepr {
    pub marker: Option<Vec<f64>>,
    pub tconcat: Option<Vec<f64>>,
}

/// `[h_[S]; h_[/S]; h_[O]; h_[/O]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRepr(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NerMode {
    MarkerOnly,
    #[default]
    MarkerPlusTconcat,
    TconcatOnly,
}

impl NerMode {
    pub fn input_width(self, hidden: usize) -> usize {
        match self {
            NerMode::MarkerPlusTconcat => 4 * hidden,
            NerMode::MarkerOnly | NerMode::TconcatOnly => 2 * hidden,
        }
    }

    pub fn needs_markers(self) -> bool {
        self != NerMode::TconcatOnly
    }

    pub fn needs_tconcat(self) -> bool {
        self != NerMode::MarkerOnly
    }
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn span_repr(
    outputs: &SlotOutputs,
    layout: &EncodingLayout,
    span: Span,
    with_tconcat: bool,
) -> Result<SpanRepr, HeadError> {
    let pair = layout.pair_of(span).ok_or(HeadError::MissingSpan(span))?;
    let marker = concat(&[outputs.row(pair.start_slot), outputs.row(pair.end_slot)]);
    let tconcat = if with_tconcat { Some(tconcat_feature(outputs, layout, span)?) } else { None };
    Ok(SpanRepr { marker: Some(marker), tconcat })
}

/// T-Concat only; works on layouts without markers.
pub fn tconcat_repr(outputs: &SlotOutputs, layout: &EncodingLayout, span: Span) -> Result<SpanRepr, HeadError> {
    Ok(SpanRepr { marker: None, tconcat: Some(tconcat_feature(outputs, layout, span)?) })
}

fn tconcat_feature(outputs: &SlotOutputs, layout: &EncodingLayout, span: Span) -> Result<Vec<f64>, HeadError> {
    if span.start == 0 || span.end > layout.text_slots.len() || span.start > span.end {
        return Err(HeadError::MissingSpan(span));
    }
    Ok(concat(&[outputs.row(layout.text_slots[span.start - 1]), outputs.row(layout.text_slots[span.end - 1])]))
}

pub fn pair_repr(outputs: &SlotOutputs, layout: &EncodingLayout, object: Span) -> Result<PairRepr, HeadError> {
    let LayoutKind::Pair { solid_start, solid_end, .. } = layout.kind else {
        return Err(HeadError::NotPairLayout);
    };
    let pair = layout.pair_of(object).ok_or(HeadError::MissingSpan(object))?;
    Ok(PairRepr(concat(&[
        outputs.row(solid_start),
        outputs.row(solid_end),
        outputs.row(pair.start_slot),
        outputs.row(pair.end_slot),
    ])))
}

/// Two-layer classifier `W2 · gelu(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ffn {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub struct FfnCache {
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Ffn {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + output) as f64).sqrt();
        Ffn {
            w1: Matrix::from_fn(input, hidden, |_, _| rng.gen_range(-b1..b1)),
            b1: vec![0.0; hidden],
            w2: Matrix::from_fn(hidden, output, |_, _| rng.gen_range(-b2..b2)),
            b2: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Ffn {
            w1: Matrix::zeros(input, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, output),
            b2: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols
    }

    fn check_input(&self, x: &[f64]) -> Result<(), HeadError> {
        if x.len() != self.input_dim() {
            return Err(HeadError::Config(format!(
                "classifier expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, HeadError> {
        self.forward(x).map(|(l, _)| l)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, FfnCache), HeadError> {
        self.check_input(x)?;
        let pre = affine_vec(x, &self.w1, &self.b1);
        let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let logits = affine_vec(&act, &self.w2, &self.b2);
        Ok((logits, FfnCache { pre, act }))
    }

    /// Accumulates parameter gradients into `grad`; returns `d loss / d x`.
    pub fn backward(&self, x: &[f64], cache: &FfnCache, dlogits: &[f64], grad: &mut Ffn) -> Vec<f64> {
        accumulate_affine_grad_vec(&mut grad.w2, &mut grad.b2, &cache.act, dlogits);
        let mut dpre = matvec_transposed(dlogits, &self.w2);
        for (d, &z) in dpre.iter_mut().zip(&cache.pre) {
            *d *= gelu_grad(z);
        }
        accumulate_affine_grad_vec(&mut grad.w1, &mut grad.b1, x, &dpre);
        matvec_transposed(&dpre, &self.w1)
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1.data, &self.b1, &self.w2.data, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1.data, &mut self.b1, &mut self.w2.data, &mut self.b2]
    }
}

/// Classifier heads. Absent heads are simply not trained or used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub hidden_dim: usize,
    pub ner_mode: NerMode,
    /// Entity types + NONE at index 0.
    pub ner: Option<Ffn>,
    /// T-Concat-only span scorer used as the first stage of two-stage decoding.
    pub stage1: Option<Ffn>,
    /// Over the directed relation label space.
    pub re: Option<Ffn>,
    /// Object entity type (no NONE class).
    pub aux: Option<Ffn>,
}

impl HeadParams {
    pub fn for_ner(hidden_dim: usize, num_entity_types: usize, mode: NerMode, with_stage1: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = num_entity_types + 1;
        let ner = Ffn::new(mode.input_width(hidden_dim), hidden_dim, classes, &mut rng);
        let stage1 = with_stage1.then(|| Ffn::new(2 * hidden_dim, hidden_dim, classes, &mut rng));
        HeadParams { hidden_dim, ner_mode: mode, ner: Some(ner), stage1, re: None, aux: None }
    }

    pub fn for_re(hidden_dim: usize, num_entity_types: usize, num_relation_labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let re = Ffn::new(4 * hidden_dim, hidden_dim, num_relation_labels, &mut rng);
        let aux = Ffn::new(4 * hidden_dim, hidden_dim, num_entity_types, &mut rng);
        HeadParams { hidden_dim, ner_mode: NerMode::default(), ner: None, stage1: None, re: Some(re), aux: Some(aux) }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn ner_head(&self) -> Result<&Ffn, HeadError> {
        self.ner.as_ref().ok_or_else(|| HeadError::Config("no NER head".into()))
    }
}

impl ParamTensors for HeadParams {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.ner, &self.stage1, &self.re, &self.aux]
            .into_iter()
            .flatten()
            .flat_map(|f| f.tensors())
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.ner, &mut self.stage1, &mut self.re, &mut self.aux]
            .into_iter()
            .flatten()
            .flat_map(|f| f.tensors_mut())
            .collect()
    }
}

/// Classifier input for the chosen feature mode.
pub fn ner_features(repr: &SpanRepr, mode: NerMode) -> Result<Vec<f64>, HeadError> {
    let missing = |what: &str| HeadError::Config(format!("{mode:?} needs the {what} feature"));
    match mode {
        NerMode::MarkerOnly => repr.marker.clone().ok_or_else(|| missing("marker")),
        NerMode::TconcatOnly => repr.tconcat.clone().ok_or_else(|| missing("T-Concat")),
        NerMode::MarkerPlusTconcat => {
            let m = repr.marker.as_ref().ok_or_else(|| missing("marker"))?;
            let t = repr.tconcat.as_ref().ok_or_else(|| missing("T-Concat"))?;
            Ok(concat(&[m, t]))
        }
    }
}

/// Logits over `[NONE, entity types...]`.
pub fn ner_logits(repr: &SpanRepr, head: &Ffn, mode: NerMode) -> Result<Vec<f64>, HeadError> {
    head.logits(&ner_features(repr, mode)?)
}

/// Relation logits over the directed label space and object-type logits.
pub fn re_logits(repr: &PairRepr, heads: &HeadParams) -> Result<(Vec<f64>, Vec<f64>), HeadError> {
    let re = heads.re.as_ref().ok_or_else(|| HeadError::Config("no relation head".into()))?;
    let aux = heads.aux.as_ref().ok_or_else(|| HeadError::Config("no object-type head".into()))?;
    Ok((re.logits(&repr.0)?, aux.logits(&repr.0)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    /// `score[l] = P_fwd(l) + P_inv(inverse(l))`, in `[0, 2]`.
    pub scores: Vec<f64>,
    pub label: usize,
}

/// Merge the forward prediction for `i -> j` with the prediction made from
/// the opposite direction. Ties go to `NO_RELATION`, then the lowest id.
pub fn combine_bidirectional(
    forward: &[f64],
    inverse: &[f64],
    space: &DirectedLabelSpace,
) -> Result<Combined, HeadError> {
    if forward.len() != space.len() || inverse.len() != space.len() {
        return Err(HeadError::Config(format!(
            "logit widths {} and {} do not match a {}-label space",
            forward.len(),
            inverse.len(),
            space.len()
        )));
    }
    let pf = softmax(forward);
    let pi = softmax(inverse);
    let scores: Vec<f64> = (0..space.len()).map(|l| pf[l] + pi[space.inverse_of(l)]).collect();
    let label = argmax(&scores);
    Ok(Combined { scores, label })
}

/// `(loss, d loss / d logits)` for softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], gold: usize) -> Result<(f64, Vec<f64>), HeadError> {
    if gold >= logits.len() {
        return Err(HeadError::Label { label: gold, classes: logits.len() });
    }
    let mut p = softmax(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[gold];
    p[gold] -= 1.0;
    Ok((loss, p))
}

#[derive(Debug, Clone, Copy)]
pub enum InstanceLogits<'a> {
    Span { logits: &'a [f64], gold: usize },
    Pair { relation: &'a [f64], relation_gold: usize, object_type: &'a [f64], type_gold: usize },
}

/// Mean per-instance loss. Pair instances add `aux_weight` times the
/// object-type cross-entropy.
pub fn training_loss(instances: &[InstanceLogits<'_>], aux_weight: f64) -> Result<f64, HeadError> {
    if aux_weight < 0.0 {
        return Err(HeadError::Config("aux_weight must be non-negative".into()));
    }
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for inst in instances {
        total += match *inst {
            InstanceLogits::Span { logits, gold } => cross_entropy(logits, gold)?.0,
            InstanceLogits::Pair { relation, relation_gold, object_type, type_gold } => {
                let r = cross_entropy(relation, relation_gold)?.0;
                let t = cross_entropy(object_type, type_gold)?.0;
                r + aux_weight * t
            }
        };
    }
    Ok(total / instances.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{build_pair_layout, build_span_layout, MarkerVocab};
    use crate::spanspace::build_directed_label_space;

    fn markers() -> MarkerVocab {
        MarkerVocab { span_start_id: 10, span_end_id: 11, subj_start_id: 12, subj_end_id: 13, obj_start_id: 14, obj_end_id: 15 }
    }

    fn outputs_from(rows: usize, dim: usize) -> SlotOutputs {
        SlotOutputs { hidden: Matrix::from_fn(rows, dim, |i, j| (i * dim + j + 1) as f64) }
    }

    #[test]
    fn span_repr_concatenates_marker_rows() {
        let l = build_span_layout(&[1, 2, 3], &[Span::new(2, 3)], 0, &markers(), 32).unwrap();
        let mut out = outputs_from(l.len(), 4);
        out.hidden.row_mut(3).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        out.hidden.row_mut(4).copy_from_slice(&[5.0, 6.0, 7.0, 8.0]);
        let r = span_repr(&out, &l, Span::new(2, 3), true).unwrap();
        assert_eq!(r.marker.unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(r.tconcat.unwrap(), concat(&[out.row(1), out.row(2)]));
        assert_eq!(span_repr(&out, &l, Span::new(1, 1), false), Err(HeadError::MissingSpan(Span::new(1, 1))));
    }

    #[test]
    fn single_token_span_has_full_width() {
        let l = build_span_layout(&[1, 2], &[Span::new(2, 2)], 0, &markers(), 32).unwrap();
        let r = span_repr(&outputs_from(l.len(), 3), &l, Span::new(2, 2), false).unwrap();
        assert_eq!(r.marker.unwrap().len(), 6);
    }

    #[test]
    fn zero_heads_give_zero_logits() {
        let head = Ffn::zeros(8, 4, 5);
        let repr = SpanRepr { marker: Some(vec![1.0; 4]), tconcat: Some(vec![2.0; 4]) };
        let l = ner_logits(&repr, &head, NerMode::MarkerPlusTconcat).unwrap();
        assert_eq!(l, vec![0.0; 5]);
        assert_eq!(argmax(&l), 0);
        assert!(ner_logits(&SpanRepr { marker: None, tconcat: None }, &head, NerMode::MarkerOnly).is_err());
    }

    #[test]
    fn tconcat_only_ignores_markers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = Ffn::new(4, 3, 3, &mut rng);
        let a = SpanRepr { marker: Some(vec![0.1; 4]), tconcat: Some(vec![0.3, -0.2, 0.5, 1.0]) };
        let mut b = a.clone();
        b.marker = Some(vec![9.0; 4]);
        assert_eq!(
            ner_logits(&a, &head, NerMode::TconcatOnly).unwrap(),
            ner_logits(&b, &head, NerMode::TconcatOnly).unwrap()
        );
    }

    #[test]
    fn pair_repr_order_and_shared_subject() {
        let l = build_pair_layout(&[1, 2, 3, 4], Span::new(2, 2), &[Span::new(1, 1), Span::new(4, 4)], &markers(), 32)
            .unwrap();
        let out = outputs_from(l.len(), 2);
        let a = pair_repr(&out, &l, Span::new(1, 1)).unwrap();
        assert_eq!(a.0.len(), 8);
        let want = concat(&[out.row(1), out.row(3), out.row(6), out.row(7)]);
        assert_eq!(a.0, want);
        let b = pair_repr(&out, &l, Span::new(4, 4)).unwrap();
        assert_eq!(a.0[..4], b.0[..4]);
        let span_layout = build_span_layout(&[1, 2], &[Span::new(1, 1)], 0, &markers(), 32).unwrap();
        assert_eq!(pair_repr(&out, &span_layout, Span::new(1, 1)), Err(HeadError::NotPairLayout));
    }

    #[test]
    fn re_shapes_and_uniform_zero() {
        let space =
            build_directed_label_space(&["PHYS".into(), "PER-SOC".into()], &["PER-SOC".into()]).unwrap();
        let heads = HeadParams::for_re(2, 3, space.len(), 0).zeros_like();
        let (rel, ty) = re_logits(&PairRepr(vec![0.5; 8]), &heads).unwrap();
        assert_eq!(rel.len(), 4);
        assert_eq!(ty.len(), 3);
        let p = softmax(&rel);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn combine_uniform_and_symmetric() {
        let space =
            build_directed_label_space(&["PHYS".into(), "PER-SOC".into()], &["PER-SOC".into()]).unwrap();
        let c = combine_bidirectional(&[0.0; 4], &[0.0; 4], &space).unwrap();
        assert!(c.scores.iter().all(|s| (s - 0.5).abs() < 1e-15));
        assert_eq!(c.label, 0);
        let f = [0.3, -1.0, 0.7, 2.0];
        let i = [1.1, 0.2, -0.4, 0.9];
        let soc = space.id("PER-SOC").unwrap();
        let a = combine_bidirectional(&f, &i, &space).unwrap();
        let b = combine_bidirectional(&i, &f, &space).unwrap();
        assert_eq!(a.scores[soc], b.scores[soc]);
        assert!(combine_bidirectional(&f, &i[..3], &space).is_err());
    }

    #[test]
    fn combine_forward_and_inverse_agree() {
        // Three labels: NO_RELATION, PHYS, PHYS_INV.
        let space = build_directed_label_space(&["PHYS".into()], &[]).unwrap();
        let fwd = [0.0, 3.0, 0.0];
        let inv = [0.0, 0.0, 3.0];
        // softmax([0,3,0]) = [1, e^3, 1] / (2 + e^3)
        let z = 2.0 + 3f64.exp();
        let hi = 3f64.exp() / z;
        let lo = 1.0 / z;
        let c = combine_bidirectional(&fwd, &inv, &space).unwrap();
        assert!((c.scores[0] - 2.0 * lo).abs() < 1e-15);
        assert!((c.scores[1] - 2.0 * hi).abs() < 1e-15);
        assert!((c.scores[2] - 2.0 * lo).abs() < 1e-15);
        assert_eq!(space.name(c.label), "PHYS");
    }

    #[test]
    fn loss_cases() {
        let uniform = [0.0; 4];
        let l = training_loss(
            &[InstanceLogits::Pair { relation: &uniform, relation_gold: 2, object_type: &[5.0, 0.0], type_gold: 1 }],
            0.0,
        )
        .unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let perfect = [60.0, 0.0, 0.0];
        let l = training_loss(&[InstanceLogits::Span { logits: &perfect, gold: 0 }], 1.0).unwrap();
        assert!((0.0..1e-20).contains(&l));
        assert!(matches!(
            training_loss(&[InstanceLogits::Span { logits: &perfect, gold: 3 }], 1.0),
            Err(HeadError::Label { label: 3, classes: 3 })
        ));
        let with_aux = training_loss(
            &[InstanceLogits::Pair { relation: &uniform, relation_gold: 0, object_type: &[0.0, 0.0], type_gold: 1 }],
            1.0,
        )
        .unwrap();
        assert!((with_aux - 4f64.ln() - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ffn_backward_matches_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Ffn::new(3, 4, 2, &mut rng);
        let x = [0.3, -0.7, 1.2];
        let (_, cache) = f.forward(&x).unwrap();
        let mut g = Ffn::zeros(3, 4, 2);
        let dx = f.backward(&x, &cache, &[1.0, -0.5], &mut g);
        let obj = |x: &[f64]| {
            let l = f.logits(x).unwrap();
            l[0] - 0.5 * l[1]
        };
        for k in 0..3 {
            let mut a = x;
            let mut b = x;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            assert!(((obj(&a) - obj(&b)) / 2e-6 - dx[k]).abs() < 1e-8);
        }
    }
}
