//! LSTM forecaster.
//!
//! Each layer keeps a cell state `C` and hidden state `h`. With `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! f_t  = σ(z·W_f + b_f)          forget gate
//! g_t  = σ(z·W_g + b_g)          input gate
//! C̃_t  = tanh(z·W_s + b_s)       candidate values
//! C_t  = f_t ⊙ C_{t-1} + g_t ⊙ C̃_t
//! o_t  = σ(z·W_o + b_o)          output gate
//! h_t  = tanh(C_t) ⊙ o_t
//! ```
//!
//! The forecast is a linear head on the last layer's final `h_t`.

use super::{Bound, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Gate suffixes in parameter names: forget, input, candidate, output.
pub const GATES: [&str; 4] = ["f", "g", "s", "o"];

/// Recurrent state of one layer, `[batch×hidden]` each.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub cell: Var,
    pub hidden: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        Self {
            cell: tape.constant(Tensor::zeros(&[batch, hidden])),
            hidden: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

struct GateParams {
    w: [Var; 4],
    b: [Var; 4],
}

impl GateParams {
    fn load(bound: &Bound<'_>, layer: usize) -> Result<Self> {
        let fetch = |kind: &str| -> Result<[Var; 4]> {
            let [f, g, s, o] = GATES.map(|gate| bound.var(&format!("lstm{layer}.{kind}_{gate}")));
            Ok([f?, g?, s?, o?])
        };
        Ok(Self {
            w: fetch("w")?,
            b: fetch("b")?,
        })
    }
}

fn step_with(
    tape: &mut Tape,
    gates: &GateParams,
    x_t: Var,
    state: &LstmState,
) -> Result<LstmState> {
    let hs = tape.shape(state.hidden).to_vec();
    let cs = tape.shape(state.cell).to_vec();
    let xs = tape.shape(x_t).to_vec();
    let hidden = tape.shape(gates.b[0])[0];
    if hs != cs || hs.len() != 2 || hs[1] != hidden || xs.len() != 2 || xs[0] != hs[0] {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_step",
            left: hs,
            right: xs,
        });
    }
    let z = tape.concat_cols(&[state.hidden, x_t])?;
    let mut pre = [z; 4];
    for (slot, (w, b)) in pre.iter_mut().zip(gates.w.iter().zip(&gates.b)) {
        let m = tape.matmul(z, *w)?;
        *slot = tape.add_row(m, *b)?;
    }
    let f = tape.sigmoid(pre[0])?;
    let g = tape.sigmoid(pre[1])?;
    let candidate = tape.tanh(pre[2])?;
    let o = tape.sigmoid(pre[3])?;
    let kept = tape.mul(f, state.cell)?;
    let added = tape.mul(g, candidate)?;
    let cell = tape.add(kept, added)?;
    let squashed = tape.tanh(cell)?;
    let hidden = tape.mul(squashed, o)?;
    Ok(LstmState { cell, hidden })
}

/// One recurrent step of layer `layer` on input `x_t` `[batch×input]`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    bound: &Bound<'_>,
    layer: usize,
    x_t: Var,
    state: &LstmState,
) -> Result<LstmState> {
    let gates = GateParams::load(bound, layer)?;
    step_with(tape, &gates, x_t, state)
}

/// Runs the stack over `x_seq` `[batch×steps×input_dim]` from a zero state
/// and applies the head to the final hidden state.
pub fn lstm_forward(
    spec: &ModelSpec,
    tape: &mut Tape,
    bound: &Bound<'_>,
    x_seq: Var,
) -> Result<Var> {
    let h = lstm_final_hidden(spec, tape, bound, x_seq)?;
    bound.dense(tape, "head", h)
}

pub(crate) fn lstm_final_hidden(
    spec: &ModelSpec,
    tape: &mut Tape,
    bound: &Bound<'_>,
    x_seq: Var,
) -> Result<Var> {
    let s = tape.shape(x_seq).to_vec();
    if s.len() != 3 || s[2] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "lstm_forward",
            left: s,
            right: vec![spec.window_len, spec.input_dim],
        });
    }
    let (batch, steps) = (s[0], s[1]);
    let layers: Vec<GateParams> = (0..spec.hidden_dims.len())
        .map(|l| GateParams::load(bound, l))
        .collect::<Result<_>>()?;
    let mut states: Vec<LstmState> = spec
        .hidden_dims
        .iter()
        .map(|&h| LstmState::zeros(tape, batch, h))
        .collect();
    for t in 0..steps {
        let mut input = tape.select_step(x_seq, t)?;
        for (gates, state) in layers.iter().zip(states.iter_mut()) {
            *state = step_with(tape, gates, input, state)?;
            input = state.hidden;
        }
    }
    Ok(states.last().expect("validated non-empty").hidden)
}
