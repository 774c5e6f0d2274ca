//! Reverse-mode gradients for the encoder stack.

use super::{EncoderParams, ForwardTrace, LnCache};
use crate::layout::EncodingLayout;
use crate::tensor::{accumulate_affine_grad, gelu_grad, matmul_transposed, Matrix};

fn layer_norm_backward(dy: &Matrix, cache: &LnCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Matrix {
    let d = dy.cols;
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for k in 0..d {
            dgain[k] += dyr[k] * xh[k];
            dbias[k] += dyr[k];
            dxhat[k] = dyr[k] * gain[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let rs = cache.rstd[i];
        for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = rs * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    da: &Matrix,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    probs: &[Vec<Vec<f64>>],
    visible: &[Vec<usize>],
    heads: usize,
) -> (Matrix, Matrix, Matrix) {
    let n = q.rows;
    let d = q.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    for (h, head_probs) in probs.iter().enumerate().take(heads) {
        let lo = h * dh;
        let hi = lo + dh;
        for i in 0..n {
            let dai = &da.row(i)[lo..hi];
            let p = &head_probs[i];
            let dp: Vec<f64> = visible[i].iter().map(|&j| crate::tensor::dot(dai, &v.row(j)[lo..hi])).collect();
            let weighted: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            let qi: Vec<f64> = q.row(i)[lo..hi].to_vec();
            for (nidx, &j) in visible[i].iter().enumerate() {
                let pj = p[nidx];
                for (o, &g) in dv.row_mut(j)[lo..hi].iter_mut().zip(dai) {
                    *o += pj * g;
                }
                let ds = pj * (dp[nidx] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for (o, &kv) in dq.row_mut(i)[lo..hi].iter_mut().zip(&k.row(j)[lo..hi]) {
                    *o += ds * kv;
                }
                for (o, &qv) in dk.row_mut(j)[lo..hi].iter_mut().zip(&qi) {
                    *o += ds * qv;
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Accumulate into `grads` the gradient of a scalar whose derivative with
/// respect to the final slot outputs is `d_out`.
pub(crate) fn backward(
    params: &EncoderParams,
    layout: &EncodingLayout,
    trace: &ForwardTrace,
    d_out: &Matrix,
    grads: &mut EncoderParams,
) {
    let mut dx = d_out.clone();
    let heads = params.config.num_heads;
    for li in (0..params.layers.len()).rev() {
        let c = &trace.layers[li];
        let lp = &params.layers[li];
        let gl = &mut grads.layers[li];

        accumulate_affine_grad(&mut gl.w2, &mut gl.b2, &c.g, &dx);
        let mut df1 = matmul_transposed(&dx, &lp.w2);
        for (g, &z) in df1.data.iter_mut().zip(&c.f1.data) {
            *g *= gelu_grad(z);
        }
        accumulate_affine_grad(&mut gl.w1, &mut gl.b1, &c.h2, &df1);
        let dh2 = matmul_transposed(&df1, &lp.w1);
        let dres = layer_norm_backward(&dh2, &c.ln2, &lp.ln2_gain, &mut gl.ln2_gain, &mut gl.ln2_bias);
        for (a, b) in dx.data.iter_mut().zip(&dres.data) {
            *a += b;
        }

        accumulate_affine_grad(&mut gl.wo, &mut gl.bo, &c.attn, &dx);
        let da = matmul_transposed(&dx, &lp.wo);
        let (dq, dk, dv) = attend_backward(&da, &c.q, &c.k, &c.v, &c.probs, &trace.visible, heads);
        accumulate_affine_grad(&mut gl.wq, &mut gl.bq, &c.h1, &dq);
        accumulate_affine_grad(&mut gl.wk, &mut gl.bk, &c.h1, &dk);
        accumulate_affine_grad(&mut gl.wv, &mut gl.bv, &c.h1, &dv);
        let mut dh1 = matmul_transposed(&dq, &lp.wq);
        for (a, b) in dh1.data.iter_mut().zip(&matmul_transposed(&dk, &lp.wk).data) {
            *a += b;
        }
        for (a, b) in dh1.data.iter_mut().zip(&matmul_transposed(&dv, &lp.wv).data) {
            *a += b;
        }
        let dres = layer_norm_backward(&dh1, &c.ln1, &lp.ln1_gain, &mut gl.ln1_gain, &mut gl.ln1_bias);
        for (a, b) in dx.data.iter_mut().zip(&dres.data) {
            *a += b;
        }
    }
    for i in 0..layout.len() {
        let g = dx.row(i);
        for (o, v) in grads.token_embedding.row_mut(layout.token_ids[i] as usize).iter_mut().zip(g) {
            *o += v;
        }
        for (o, v) in grads.position_embedding.row_mut(layout.position_ids[i]).iter_mut().zip(g) {
            *o += v;
        }
    }
}
