//! Encoder-only transformer forecaster.
//!
//! Input rows are embedded to `d_model`, summed with the sinusoidal position
//! table, and passed through `num_layers` encoder blocks. Each block applies
//! causally masked multi-head self-attention and a pointwise feed-forward
//! network (linear → ReLU → linear), both wrapped in residual connections and
//! layer normalization. A linear head reads the final position.

use super::attention::{causal_mask, multi_head_attention, norm_affine, positional_encoding};
use super::{Bound, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Encoder output `[batch×seq×d_model]` before the regression head.
pub fn transformer_encode(
    spec: &ModelSpec,
    tape: &mut Tape,
    bound: &Bound<'_>,
    x_seq: Var,
) -> Result<Var> {
    let s = tape.shape(x_seq).to_vec();
    if s.len() != 3 || s[2] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "transformer_forward",
            left: s,
            right: vec![spec.window_len, spec.input_dim],
        });
    }
    let (batch, seq, d) = (s[0], s[1], spec.d_model);
    let flat = tape.reshape(x_seq, &[batch * seq, spec.input_dim])?;
    let embedded = bound.dense(tape, "embed", flat)?;
    let embedded = tape.reshape(embedded, &[batch, seq, d])?;
    let mut h = tape.add_const(embedded, &positional_encoding(seq, d)?)?;
    let mask = causal_mask(seq);
    for l in 0..spec.num_layers {
        let att = multi_head_attention(tape, bound, l, spec.num_heads, h, Some(&mask))?;
        let rows = tape.reshape(att.output, &[batch * seq, d])?;
        let inner = bound.dense(tape, &format!("block{l}.ffn1"), rows)?;
        let inner = tape.relu(inner)?;
        let ffn = bound.dense(tape, &format!("block{l}.ffn2"), inner)?;
        let residual = tape.add(ffn, rows)?;
        let normed = norm_affine(tape, bound, &format!("block{l}.ln2"), residual)?;
        h = tape.reshape(normed, &[batch, seq, d])?;
    }
    Ok(h)
}

pub fn transformer_forward(
    spec: &ModelSpec,
    tape: &mut Tape,
    bound: &Bound<'_>,
    x_seq: Var,
) -> Result<Var> {
    let h = transformer_encode(spec, tape, bound, x_seq)?;
    let seq = tape.shape(h)[1];
    let last = tape.select_step(h, seq - 1)?;
    bound.dense(tape, "head", last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::tensor::Tensor;

    fn input(batch: usize, seq: usize, dim: usize, salt: f64) -> Tensor {
        let n = batch * seq * dim;
        Tensor::new(
            vec![batch, seq, dim],
            (0..n).map(|i| ((i as f64 + salt) * 0.61).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn first_position_ignores_later_steps() {
        let spec = ModelSpec::transformer(3, 4, 8, 2, 2, 1);
        let p = init_params(&spec, 21).unwrap();
        let a = input(1, 4, 3, 0.0);
        let mut b = a.clone();
        for v in &mut b.data_mut()[9..12] {
            *v += 5.0;
        }
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let xa = tape.constant(a);
        let xb = tape.constant(b);
        let ha = transformer_encode(&spec, &mut tape, &bound, xa).unwrap();
        let hb = transformer_encode(&spec, &mut tape, &bound, xb).unwrap();
        let (da, db) = (tape.value(ha).data(), tape.value(hb).data());
        assert_eq!(&da[..8], &db[..8]);
        assert_ne!(&da[24..], &db[24..]);
    }

    #[test]
    fn identical_batch_rows_identical_outputs() {
        let spec = ModelSpec::transformer(2, 3, 4, 2, 1, 2);
        let p = init_params(&spec, 4).unwrap();
        let one = input(1, 3, 2, 1.5);
        let mut twice = one.data().to_vec();
        twice.extend_from_slice(one.data());
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::new(vec![2, 3, 2], twice).unwrap());
        let y = transformer_forward(&spec, &mut tape, &bound, x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(tape.shape(y), &[2, 2]);
        assert_eq!(d[..2], d[2..]);
    }

    #[test]
    fn wrong_input_dim_rejected() {
        let spec = ModelSpec::transformer(2, 3, 4, 2, 1, 1);
        let p = init_params(&spec, 4).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(input(1, 3, 3, 0.0));
        assert!(transformer_forward(&spec, &mut tape, &bound, x).is_err());
    }
}
