//! Small pre-LN transformer encoder over [`EncodingLayout`]s.
//!
//! Slot `i` enters as `token_embedding[token_ids[i]] + position_embedding[position_ids[i]]`.
//! Attention for slot `i` runs over exactly the slots visible from `i`;
//! hidden slots are left out of the softmax entirely.

mod backward;
pub mod checkpoint;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{validate_layout, EncodingLayout, Violation};
use crate::tensor::{affine, dot, gelu, Matrix};
use crate::vocab::TokenId;

pub use train::{finite_diff_check, loss_and_grad, loss_and_grad_with, Example, Gradients, PairTarget, Targets};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid layout: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidLayout(Vec<Violation>),
    #[error("non-finite activations after layer {layer}")]
    NonFinite { layer: usize },
    #[error(transparent)]
    Head(#[from] crate::heads::HeadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_position: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_position", self.max_position),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EncoderError::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(EncoderError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl LayerParams {
    fn tensors(&self) -> [&[f64]; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq.data,
            &self.bq,
            &self.wk.data,
            &self.bk,
            &self.wv.data,
            &self.bv,
            &self.wo.data,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq.data,
            &mut self.bq,
            &mut self.wk.data,
            &mut self.bk,
            &mut self.wv.data,
            &mut self.bv,
            &mut self.wo.data,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }
}

/// Flat view over a parameter set, in a fixed declared order.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn coordinate(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("coordinate out of range")
    }

    fn coordinate_mut(&mut self, mut idx: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if idx < t.len() {
                return &mut t[idx];
            }
            idx -= t.len();
        }
        panic!("coordinate out of range")
    }

    /// `self += scale * other`; shapes must match.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Order-sensitive FNV-1a over the raw bit patterns.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Matrix,
    /// Row `p` embeds position id `p`; row 0 is unused by layouts.
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
}

impl ParamTensors for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embedding.data, &self.position_embedding.data];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.token_embedding.data, &mut self.position_embedding.data];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Fixed-frequency sine/cosine table scaled by `amplitude`; only the
/// starting point, the rows are trained like any other parameter.
fn sinusoidal(rows: usize, cols: usize, amplitude: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |p, c| {
        let freq = 1.0 / 10_000f64.powf((c / 2 * 2) as f64 / cols as f64);
        let angle = p as f64 * freq;
        amplitude * if c % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

pub fn init_params(config: &EncoderConfig) -> Result<EncoderParams, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.hidden_dim;
    let f = config.ffn_dim;
    let xavier = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
    let token_embedding = uniform(&mut rng, config.vocab_size, d, 0.5);
    let position_embedding = sinusoidal(config.max_position + 1, d, 0.5);
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            wq: uniform(&mut rng, d, d, xavier(d, d)),
            bq: vec![0.0; d],
            wk: uniform(&mut rng, d, d, xavier(d, d)),
            bk: vec![0.0; d],
            wv: uniform(&mut rng, d, d, xavier(d, d)),
            bv: vec![0.0; d],
            wo: uniform(&mut rng, d, d, xavier(d, d)),
            bo: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w1: uniform(&mut rng, d, f, xavier(d, f)),
            b1: vec![0.0; f],
            w2: uniform(&mut rng, f, d, xavier(f, d)),
            b2: vec![0.0; d],
        })
        .collect();
    Ok(EncoderParams { config: *config, token_embedding, position_embedding, layers })
}

impl EncoderParams {
    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

/// Copy the embedding row of a meaningful word into each marker row.
pub fn prompt_init_markers(
    params: &EncoderParams,
    marker_to_word: &BTreeMap<TokenId, TokenId>,
) -> Result<EncoderParams, EncoderError> {
    let v = params.config.vocab_size;
    let mut out = params.clone();
    for (&marker, &word) in marker_to_word {
        if marker as usize >= v || word as usize >= v {
            return Err(EncoderError::Config(format!("token id out of range: {marker} -> {word} (vocab {v})")));
        }
        let row = params.token_embedding.row(word as usize).to_vec();
        out.token_embedding.row_mut(marker as usize).copy_from_slice(&row);
    }
    Ok(out)
}

/// Final-layer hidden vector for every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutputs {
    pub hidden: Matrix,
}

impl SlotOutputs {
    pub fn row(&self, slot: usize) -> &[f64] {
        self.hidden.row(slot)
    }
}

pub(crate) struct LnCache {
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LnCache) {
    let d = x.cols;
    let mut out = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(i);
        for k in 0..d {
            xh[k] = (r[k] - mean) * rs;
        }
        let o = out.row_mut(i);
        for k in 0..d {
            o[k] = xhat.data[i * d + k] * gain[k] + bias[k];
        }
    }
    (out, LnCache { xhat, rstd })
}

pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub h1: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// `probs[head][row][n]` is the weight on `visible[row][n]`.
    pub probs: Vec<Vec<Vec<f64>>>,
    pub attn: Matrix,
    pub ln2: LnCache,
    pub h2: Matrix,
    pub f1: Matrix,
    pub g: Matrix,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace {
    pub(crate) visible: Vec<Vec<usize>>,
    pub(crate) layers: Vec<LayerCache>,
    pub outputs: SlotOutputs,
}

impl ForwardTrace {
    /// Attention weights of `row` in `layer`/`head` as `(slot, weight)` pairs.
    pub fn attention(&self, layer: usize, head: usize, row: usize) -> Vec<(usize, f64)> {
        self.visible[row].iter().copied().zip(self.layers[layer].probs[head][row].iter().copied()).collect()
    }
}

fn embed(params: &EncoderParams, layout: &EncodingLayout) -> Matrix {
    let d = params.config.hidden_dim;
    let mut x = Matrix::zeros(layout.len(), d);
    for i in 0..layout.len() {
        let t = params.token_embedding.row(layout.token_ids[i] as usize);
        let p = params.position_embedding.row(layout.position_ids[i]);
        for (k, o) in x.row_mut(i).iter_mut().enumerate() {
            *o = t[k] + p[k];
        }
    }
    x
}

fn check_inputs(params: &EncoderParams, layout: &EncodingLayout) -> Result<(), EncoderError> {
    let violations = validate_layout(layout);
    if !violations.is_empty() {
        return Err(EncoderError::InvalidLayout(violations));
    }
    if layout.max_position() > params.config.max_position {
        return Err(EncoderError::Config(format!(
            "position id {} exceeds max_position {}",
            layout.max_position(),
            params.config.max_position
        )));
    }
    if let Some(t) = layout.token_ids.iter().find(|&&t| t as usize >= params.config.vocab_size) {
        return Err(EncoderError::Config(format!("token id {t} outside vocabulary")));
    }
    Ok(())
}

/// Masked multi-head attention; returns concatenated head outputs and the
/// per-head softmax weights over each row's visible set.
fn attend(q: &Matrix, k: &Matrix, v: &Matrix, visible: &[Vec<usize>], heads: usize) -> (Matrix, Vec<Vec<Vec<f64>>>) {
    let n = q.rows;
    let d = q.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(n, d);
    let mut probs = vec![Vec::with_capacity(n); heads];
    for (h, head_probs) in probs.iter_mut().enumerate() {
        let lo = h * dh;
        let hi = lo + dh;
        for i in 0..n {
            let qi = &q.row(i)[lo..hi];
            let scores: Vec<f64> = visible[i].iter().map(|&j| dot(qi, &k.row(j)[lo..hi]) * scale).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let p: Vec<f64> = exps.iter().map(|e| e / z).collect();
            let orow = &mut out.row_mut(i)[lo..hi];
            for (&j, &pj) in visible[i].iter().zip(&p) {
                for (o, &vv) in orow.iter_mut().zip(&v.row(j)[lo..hi]) {
                    *o += pj * vv;
                }
            }
            head_probs.push(p);
        }
    }
    (out, probs)
}

pub(crate) fn forward_unchecked(params: &EncoderParams, layout: &EncodingLayout) -> Result<ForwardTrace, EncoderError> {
    let visible: Vec<Vec<usize>> = (0..layout.len()).map(|i| layout.visible_from(i)).collect();
    let mut x = embed(params, layout);
    let mut caches = Vec::with_capacity(params.layers.len());
    for (li, lp) in params.layers.iter().enumerate() {
        let (h1, ln1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let q = affine(&h1, &lp.wq, &lp.bq);
        let k = affine(&h1, &lp.wk, &lp.bk);
        let v = affine(&h1, &lp.wv, &lp.bv);
        let (attn, probs) = attend(&q, &k, &v, &visible, params.config.num_heads);
        let o = affine(&attn, &lp.wo, &lp.bo);
        for (a, b) in x.data.iter_mut().zip(&o.data) {
            *a += b;
        }
        let (h2, ln2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let f1 = affine(&h2, &lp.w1, &lp.b1);
        let g = Matrix { rows: f1.rows, cols: f1.cols, data: f1.data.iter().map(|&z| gelu(z)).collect() };
        let f2 = affine(&g, &lp.w2, &lp.b2);
        for (a, b) in x.data.iter_mut().zip(&f2.data) {
            *a += b;
        }
        if !x.is_finite() {
            return Err(EncoderError::NonFinite { layer: li });
        }
        caches.push(LayerCache { ln1, h1, q, k, v, probs, attn, ln2, h2, f1, g });
    }
    Ok(ForwardTrace { visible, layers: caches, outputs: SlotOutputs { hidden: x } })
}

/// Validated forward pass keeping intermediate activations.
pub fn forward(params: &EncoderParams, layout: &EncodingLayout) -> Result<ForwardTrace, EncoderError> {
    check_inputs(params, layout)?;
    forward_unchecked(params, layout)
}

pub fn encode(params: &EncoderParams, layout: &EncodingLayout) -> Result<SlotOutputs, EncoderError> {
    forward(params, layout).map(|t| t.outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{build_span_layout, text_layout, MarkerVocab};
    use crate::spanspace::Span;

    fn config(layers: usize) -> EncoderConfig {
        EncoderConfig { vocab_size: 20, hidden_dim: 8, num_layers: layers, num_heads: 2, ffn_dim: 16, max_position: 16, seed: 3 }
    }

    fn markers() -> MarkerVocab {
        MarkerVocab { span_start_id: 14, span_end_id: 15, subj_start_id: 16, subj_end_id: 17, obj_start_id: 18, obj_end_id: 19 }
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let a = init_params(&config(2)).unwrap();
        let b = init_params(&config(2)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert!(a.is_finite());
        let mut c = config(2);
        c.seed = 4;
        assert_ne!(init_params(&c).unwrap().checksum(), a.checksum());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut c = config(1);
        c.hidden_dim = 33;
        assert!(matches!(init_params(&c), Err(EncoderError::Config(_))));
    }

    #[test]
    fn prompt_init_copies_rows() {
        let p = init_params(&config(1)).unwrap();
        let map = BTreeMap::from([(14, 1), (15, 2)]);
        let q = prompt_init_markers(&p, &map).unwrap();
        assert_eq!(q.token_embedding.row(14), p.token_embedding.row(1));
        assert_eq!(q.token_embedding.row(15), p.token_embedding.row(2));
        assert_eq!(q.layers, p.layers);
        assert_eq!(prompt_init_markers(&p, &BTreeMap::new()).unwrap(), p);
        assert_eq!(prompt_init_markers(&p, &BTreeMap::from([(14, 14)])).unwrap(), p);
        assert!(prompt_init_markers(&p, &BTreeMap::from([(14, 99)])).is_err());
    }

    #[test]
    fn zero_layers_is_embedding() {
        let p = init_params(&config(0)).unwrap();
        let l = build_span_layout(&[3, 4, 5], &[Span::new(1, 2)], 0, &markers(), 64).unwrap();
        let out = encode(&p, &l).unwrap();
        for i in 0..l.len() {
            let t = p.token_embedding.row(l.token_ids[i] as usize);
            let q = p.position_embedding.row(l.position_ids[i]);
            let want: Vec<f64> = t.iter().zip(q).map(|(a, b)| a + b).collect();
            assert_eq!(out.row(i), want.as_slice());
        }
    }

    #[test]
    fn text_rows_ignore_markers() {
        let p = init_params(&config(2)).unwrap();
        let text = [3, 4, 5, 6];
        let plain = encode(&p, &text_layout(&text)).unwrap();
        let spans = [Span::new(1, 2), Span::new(2, 4), Span::new(3, 3)];
        let packed = encode(&p, &build_span_layout(&text, &spans, 0, &markers(), 64).unwrap()).unwrap();
        for i in 0..text.len() {
            assert_eq!(plain.row(i), packed.row(i));
        }
    }

    #[test]
    fn attention_rows_sum_to_one_over_visible() {
        let p = init_params(&config(2)).unwrap();
        let l = build_span_layout(&[3, 4, 5], &[Span::new(1, 2), Span::new(3, 3)], 0, &markers(), 64).unwrap();
        let trace = forward(&p, &l).unwrap();
        for layer in 0..2 {
            for head in 0..2 {
                for row in 0..l.len() {
                    let w = trace.attention(layer, head, row);
                    let s: f64 = w.iter().map(|(_, p)| p).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    assert!(w.iter().all(|(j, _)| l.visibility.get(row, *j)));
                    assert_eq!(w.len(), l.visible_from(row).len());
                }
            }
        }
    }

    #[test]
    fn invalid_layout_rejected() {
        let p = init_params(&config(1)).unwrap();
        let mut l = build_span_layout(&[3, 4], &[Span::new(1, 1), Span::new(2, 2)], 0, &markers(), 64).unwrap();
        l.visibility.set(2, 4, true);
        assert!(matches!(encode(&p, &l), Err(EncoderError::InvalidLayout(v)) if v.len() == 1));
    }
}
