//! Batch loss with analytic gradients, and a central-difference checker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::backward;
use super::{forward, EncoderError, EncoderParams, ParamTensors};
use crate::heads::{cross_entropy, ner_features, pair_repr, span_repr, tconcat_repr, Ffn, HeadError, HeadParams};
use crate::layout::EncodingLayout;
use crate::parallel;
use crate::spanspace::Span;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTarget {
    pub object: Span,
    /// Id in the directed relation label space.
    pub relation: usize,
    /// Entity type index of the object.
    pub object_type: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    /// `(span, label)` with label 0 = NONE.
    Spans(Vec<(Span, usize)>),
    Pairs(Vec<PairTarget>),
}

#[derive(Debug, Clone)]
pub struct Example {
    pub layout: EncodingLayout,
    pub targets: Targets,
}

impl Example {
    pub fn num_instances(&self) -> usize {
        match &self.targets {
            Targets::Spans(t) => t.len(),
            Targets::Pairs(t) => t.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

impl Gradients {
    fn zeros(params: &EncoderParams, heads: &HeadParams) -> Self {
        Gradients { encoder: params.zeros_like(), heads: heads.zeros_like() }
    }

    fn add(&mut self, other: &Gradients) {
        self.encoder.add_scaled(&other.encoder, 1.0);
        self.heads.add_scaled(&other.heads, 1.0);
    }

    fn scale(&mut self, s: f64) {
        for t in self.encoder.tensors_mut().into_iter().chain(self.heads.tensors_mut()) {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn scatter(d_out: &mut Matrix, slots: &[usize], grad: &[f64]) {
    let d = d_out.cols;
    for (k, &slot) in slots.iter().enumerate() {
        for (o, g) in d_out.row_mut(slot).iter_mut().zip(&grad[k * d..(k + 1) * d]) {
            *o += g;
        }
    }
}

/// One classifier step: returns the loss and pushes the feature gradient
/// back onto the slot rows it came from.
fn classify(
    head: &Ffn,
    grad_head: Option<&mut Ffn>,
    features: &[f64],
    gold: usize,
    slots: &[usize],
    weight: f64,
    d_out: Option<&mut Matrix>,
) -> Result<f64, EncoderError> {
    let (logits, cache) = head.forward(features)?;
    let (loss, mut dl) = cross_entropy(&logits, gold)?;
    if let (Some(gh), Some(d_out)) = (grad_head, d_out) {
        dl.iter_mut().for_each(|v| *v *= weight);
        let dx = head.backward(features, &cache, &dl, gh);
        scatter(d_out, slots, &dx);
    }
    Ok(weight * loss)
}

/// Summed loss over an example's instances; accumulates gradients when
/// `grads` is given.
fn example_loss(
    params: &EncoderParams,
    heads: &HeadParams,
    ex: &Example,
    aux_weight: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64, EncoderError> {
    let trace = forward(params, &ex.layout)?;
    let out = &trace.outputs;
    let layout = &ex.layout;
    let mut d_out = grads.as_ref().map(|_| Matrix::zeros(layout.len(), params.config.hidden_dim));
    let mut total = 0.0;
    match &ex.targets {
        Targets::Spans(targets) => {
            let mode = heads.ner_mode;
            let ner = heads.ner_head()?;
            for &(span, gold) in targets {
                let text = [layout.text_slots[span.start - 1], layout.text_slots[span.end - 1]];
                let (feats, slots) = if mode.needs_markers() {
                    let repr = span_repr(out, layout, span, mode.needs_tconcat())?;
                    let pair = layout.pair_of(span).ok_or(HeadError::MissingSpan(span))?;
                    let markers = [pair.start_slot, pair.end_slot];
                    let slots = if mode.needs_tconcat() { [markers, text].concat() } else { markers.to_vec() };
                    (ner_features(&repr, mode)?, slots)
                } else {
                    (ner_features(&tconcat_repr(out, layout, span)?, mode)?, text.to_vec())
                };
                total += classify(
                    ner,
                    grads.as_deref_mut().map(|g| g.heads.ner.as_mut().expect("grad shape")),
                    &feats,
                    gold,
                    &slots,
                    1.0,
                    d_out.as_mut(),
                )?;
                if let Some(stage1) = &heads.stage1 {
                    let feats = tconcat_repr(out, layout, span)?.tconcat.expect("tconcat");
                    total += classify(
                        stage1,
                        grads.as_deref_mut().map(|g| g.heads.stage1.as_mut().expect("grad shape")),
                        &feats,
                        gold,
                        &text,
                        1.0,
                        d_out.as_mut(),
                    )?;
                }
            }
        }
        Targets::Pairs(targets) => {
            let re = heads.re.as_ref().ok_or_else(|| HeadError::Config("no relation head".into()))?;
            let aux = heads.aux.as_ref().ok_or_else(|| HeadError::Config("no object-type head".into()))?;
            let crate::layout::LayoutKind::Pair { solid_start, solid_end, .. } = layout.kind else {
                return Err(HeadError::NotPairLayout.into());
            };
            for t in targets {
                let repr = pair_repr(out, layout, t.object)?;
                let pair = layout.pair_of(t.object).ok_or(HeadError::MissingSpan(t.object))?;
                let slots = [solid_start, solid_end, pair.start_slot, pair.end_slot];
                total += classify(
                    re,
                    grads.as_deref_mut().map(|g| g.heads.re.as_mut().expect("grad shape")),
                    &repr.0,
                    t.relation,
                    &slots,
                    1.0,
                    d_out.as_mut(),
                )?;
                if aux_weight > 0.0 {
                    total += classify(
                        aux,
                        grads.as_deref_mut().map(|g| g.heads.aux.as_mut().expect("grad shape")),
                        &repr.0,
                        t.object_type,
                        &slots,
                        aux_weight,
                        d_out.as_mut(),
                    )?;
                }
            }
        }
    }
    if let (Some(g), Some(d_out)) = (grads, d_out) {
        backward(params, layout, &trace, &d_out, &mut g.encoder);
    }
    Ok(total)
}

fn instance_count(batch: &[Example]) -> usize {
    batch.iter().map(Example::num_instances).sum::<usize>().max(1)
}

/// Mean loss over all instances in the batch, without gradients.
pub fn batch_loss(params: &EncoderParams, heads: &HeadParams, batch: &[Example], aux_weight: f64) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(params, heads, ex, aux_weight, None)?;
    }
    Ok(total / instance_count(batch) as f64)
}

/// Mean loss over all instances and its gradient with respect to every
/// encoder and head parameter. Examples may be processed in parallel; the
/// reduction order is fixed.
pub fn loss_and_grad(
    params: &EncoderParams,
    heads: &HeadParams,
    batch: &[Example],
    aux_weight: f64,
) -> Result<(f64, Gradients), EncoderError> {
    loss_and_grad_with(params, heads, batch, aux_weight, true)
}

pub fn loss_and_grad_with(
    params: &EncoderParams,
    heads: &HeadParams,
    batch: &[Example],
    aux_weight: f64,
    parallel: bool,
) -> Result<(f64, Gradients), EncoderError> {
    let parts = parallel::map(batch, parallel, |ex| {
        let mut g = Gradients::zeros(params, heads);
        example_loss(params, heads, ex, aux_weight, Some(&mut g)).map(|l| (l, g))
    });
    let mut total = 0.0;
    let mut grads = Gradients::zeros(params, heads);
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.add(&g);
    }
    let n = instance_count(batch) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

const GRADIENT_FLOOR: f64 = 1e-5;

/// Maximum relative error between analytic and central-difference gradients
/// over `sample` randomly chosen coordinates of the encoder and head
/// parameters. The denominator is `max(|analytic|, |numeric|, 1e-5)`: central
/// differences of an f64 loss carry up to ~1e-10 of rounding noise, so
/// near-zero gradients (the attention key bias has an exactly zero one) are
/// judged on absolute error instead.
pub fn finite_diff_check(
    params: &EncoderParams,
    heads: &HeadParams,
    batch: &[Example],
    aux_weight: f64,
    epsilon: f64,
    sample: usize,
    seed: u64,
) -> Result<f64, EncoderError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, grads) = loss_and_grad(params, heads, batch, aux_weight)?;
    let n_enc = params.num_params();
    let total = n_enc + heads.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = rand::seq::index::sample(&mut rng, total, sample.min(total)).into_vec();
    let mut worst: f64 = 0.0;
    for c in coords {
        let (mut p_plus, mut h_plus) = (params.clone(), heads.clone());
        let (mut p_minus, mut h_minus) = (params.clone(), heads.clone());
        let analytic = if c < n_enc {
            *p_plus.coordinate_mut(c) += epsilon;
            *p_minus.coordinate_mut(c) -= epsilon;
            grads.encoder.coordinate(c)
        } else {
            *h_plus.coordinate_mut(c - n_enc) += epsilon;
            *h_minus.coordinate_mut(c - n_enc) -= epsilon;
            grads.heads.coordinate(c - n_enc)
        };
        let f_plus = batch_loss(&p_plus, &h_plus, batch, aux_weight)?;
        let f_minus = batch_loss(&p_minus, &h_minus, batch, aux_weight)?;
        let numeric = (f_plus - f_minus) / (2.0 * epsilon);
        let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    Ok(worst)
}
