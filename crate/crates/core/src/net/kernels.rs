//! Single-precision building blocks: dot products, affine maps, the LSTM
//! cell, layer normalization and one masked encoder layer.
//!
//! Every reduction runs in a fixed order so results are reproducible bit for
//! bit across runs and across stepwise/clip processing.

use super::weights::{EncoderLayer, LayerNorm, Linear, LstmParams};

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out[r] = bias[r] + W[r,:]·x` for a row-major `W`.
#[inline]
pub fn matvec_add(w: &[f32], in_dim: usize, x: &[f32], out: &mut [f32]) {
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(w.len(), in_dim * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(in_dim)) {
        *o += dot(row, x);
    }
}

#[inline]
pub fn leaky_relu(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Linear {
    pub fn forward(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.out_dim);
        out.copy_from_slice(&self.bias);
        matvec_add(&self.weight, self.in_dim, x, out);
    }

    pub fn forward_vec(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.out_dim];
        self.forward(x, &mut out);
        out
    }
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

impl LayerNorm {
    pub fn apply(&self, x: &mut [f32]) {
        let n = x.len() as f32;
        let mean = x.iter().sum::<f32>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for ((v, g), b) in x.iter_mut().zip(&self.weight).zip(&self.bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

/// One LSTM update in place. Gate rows are stacked input, forget, cell, output.
pub fn lstm_step(p: &LstmParams, x: &[f32], h: &mut [f32], c: &mut [f32], gates: &mut [f32]) {
    let hd = p.hidden;
    debug_assert_eq!(gates.len(), 4 * hd);
    for (g, (a, b)) in gates.iter_mut().zip(p.bias_ih.iter().zip(&p.bias_hh)) {
        *g = a + b;
    }
    matvec_add(&p.weight_ih, p.input, x, gates);
    matvec_add(&p.weight_hh, hd, h, gates);
    for k in 0..hd {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hd + k]);
        let g = gates[2 * hd + k].tanh();
        let o = sigmoid(gates[3 * hd + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
}

/// One post-norm encoder layer over the tokens listed in `present`.
/// Keys and queries of other tokens are never touched.
pub fn encoder_layer(layer: &EncoderLayer, heads: usize, slope: f32, tokens: &mut [Vec<f32>], present: &[usize]) {
    let d = layer.out_proj.out_dim;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let qkv: Vec<Vec<f32>> = present.iter().map(|&i| layer.in_proj.forward_vec(&tokens[i])).collect();

    let mut scores = vec![0f32; present.len()];
    let mut ctx = vec![0f32; d];
    let mut updated = Vec::with_capacity(present.len());
    for qi in 0..present.len() {
        for h in 0..heads {
            let q = &qkv[qi][h * dh..(h + 1) * dh];
            let mut max = f32::NEG_INFINITY;
            for (s, kv) in scores.iter_mut().zip(&qkv) {
                *s = dot(q, &kv[d + h * dh..d + (h + 1) * dh]) * scale;
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let out = &mut ctx[h * dh..(h + 1) * dh];
            out.fill(0.0);
            for (s, kv) in scores.iter().zip(&qkv) {
                let p = s / sum;
                for (o, v) in out.iter_mut().zip(&kv[2 * d + h * dh..2 * d + (h + 1) * dh]) {
                    *o += p * v;
                }
            }
        }
        let mut x = layer.out_proj.forward_vec(&ctx);
        for (a, t) in x.iter_mut().zip(&tokens[present[qi]]) {
            *a += t;
        }
        layer.norm1.apply(&mut x);
        let mut hidden = layer.ff1.forward_vec(&x);
        for v in hidden.iter_mut() {
            *v = leaky_relu(*v, slope);
        }
        let f = layer.ff2.forward_vec(&hidden);
        for (a, b) in x.iter_mut().zip(&f) {
            *a += b;
        }
        layer.norm2.apply(&mut x);
        updated.push(x);
    }
    for (&i, x) in present.iter().zip(updated) {
        tokens[i] = x;
    }
}
