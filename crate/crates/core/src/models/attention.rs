//! Attention building blocks for the transformer encoder.

use super::Bound;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Layer-norm variance floor. Small enough that normalized rows of
/// O(1)-variance inputs have unit variance to within 1e-9.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Sinusoidal position table `[len×d_model]`: even columns hold
/// `sin(pos / 10000^(2i/d_model))`, odd columns the matching cosine.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding needs even positive d_model and len, got d_model={d_model} len={len}"
        )));
    }
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, d_model], data)
}

/// Look-ahead mask `[len×len]`: row `t` blocks every column `> t`.
pub fn causal_mask(len: usize) -> Tensor {
    let mut data = vec![0.0; len * len];
    for t in 0..len {
        for j in t + 1..len {
            data[t * len + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::mask(vec![len, len], data).expect("well-formed mask")
}

/// Attention output together with the probability rows that produced it.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

/// `softmax(Q·Kᵀ/√d_k + mask)·V`.
///
/// Inputs are `[seq×d]` or batched `[batch×seq×d]`; `mask` is `[q_len×k_len]`
/// with entries 0 or `-inf` and is shared across the batch.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor>,
) -> Result<Attention> {
    let unbatched = tape.shape(q).len() == 2;
    let lift = |tape: &mut Tape, x: Var| -> Result<Var> {
        let s = tape.shape(x).to_vec();
        match s.len() {
            2 => tape.reshape(x, &[1, s[0], s[1]]),
            3 => Ok(x),
            _ => Err(Error::ShapeMismatch {
                op: "attention",
                left: s,
                right: vec![],
            }),
        }
    };
    let (q3, k3, v3) = (lift(tape, q)?, lift(tape, k)?, lift(tape, v)?);
    let (qs, ks, vs) = (
        tape.shape(q3).to_vec(),
        tape.shape(k3).to_vec(),
        tape.shape(v3).to_vec(),
    );
    if qs[2] != ks[2] || ks[1] != vs[1] || qs[0] != ks[0] || ks[0] != vs[0] {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: qs,
            right: ks,
        });
    }
    let scores = tape.bmm(q3, k3, true)?;
    let scaled = tape.scale(scores, 1.0 / (qs[2] as f64).sqrt())?;
    let masked = match mask {
        Some(m) => tape.add_mask(scaled, m)?,
        None => scaled,
    };
    let weights = tape.softmax(masked)?;
    let out = tape.bmm(weights, v3, false)?;
    let output = if unbatched {
        let s = tape.shape(out).to_vec();
        tape.reshape(out, &[s[1], s[2]])?
    } else {
        out
    };
    Ok(Attention { output, weights })
}

pub struct MultiHeadOutput {
    pub output: Var,
    pub head_weights: Vec<Var>,
}

/// Multi-head self-attention sublayer of encoder block `block`, including
/// the residual connection and layer normalization.
pub fn multi_head_attention(
    tape: &mut Tape,
    bound: &Bound<'_>,
    block: usize,
    num_heads: usize,
    x: Var,
    mask: Option<&Tensor>,
) -> Result<MultiHeadOutput> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || num_heads == 0 || !s[2].is_multiple_of(num_heads) {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            left: s,
            right: vec![num_heads],
        });
    }
    let (batch, seq, d) = (s[0], s[1], s[2]);
    let dk = d / num_heads;
    let rows = tape.reshape(x, &[batch * seq, d])?;

    let mut heads = Vec::with_capacity(num_heads);
    let mut head_weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let mut project = |name: &str| -> Result<Var> {
            let w = bound.var(&format!("block{block}.head{h}.w_{name}"))?;
            let p = tape.matmul(rows, w)?;
            tape.reshape(p, &[batch, seq, dk])
        };
        let (q, k, v) = (project("q")?, project("k")?, project("v")?);
        let att = scaled_dot_attention(tape, q, k, v, mask)?;
        head_weights.push(att.weights);
        heads.push(tape.reshape(att.output, &[batch * seq, dk])?);
    }
    let concat = tape.concat_cols(&heads)?;
    let mixed = bound.dense(tape, &format!("block{block}.attn_out"), concat)?;
    let residual = tape.add(mixed, rows)?;
    let normed = norm_affine(tape, bound, &format!("block{block}.ln1"), residual)?;
    let output = tape.reshape(normed, &[batch, seq, d])?;
    Ok(MultiHeadOutput {
        output,
        head_weights,
    })
}

/// Layer normalization followed by the learned per-feature gain and bias.
pub(crate) fn norm_affine(tape: &mut Tape, bound: &Bound<'_>, prefix: &str, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let gain = bound.var(&format!("{prefix}.gain"))?;
    let bias = bound.var(&format!("{prefix}.bias"))?;
    let g = tape.mul_row(n, gain)?;
    tape.add_row(g, bias)
}
