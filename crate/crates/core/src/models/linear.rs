//! Linear regressor: a single affine map from the flattened window to the
//! forecast, with identity activation.

use super::Bound;
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// `y = x·W + b`. Accepts a `[batch×window_len×input_dim]` window or an
/// already flattened `[batch×(window_len·input_dim)]` matrix.
pub fn linear_forward(tape: &mut Tape, bound: &Bound<'_>, x: Var) -> Result<Var> {
    let x = flatten_window(tape, x)?;
    bound.dense(tape, "out", x)
}

pub(crate) fn flatten_window(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() == 3 {
        tape.reshape(x, &[s[0], s[1] * s[2]])
    } else {
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelParams, ModelSpec};
    use crate::tensor::{NamedTensor, Tensor};

    fn params(w: Tensor, b: Tensor) -> ModelParams {
        ModelParams::new(
            crate::models::Family::Linear,
            vec![NamedTensor::new("out.w", w), NamedTensor::new("out.b", b)],
        )
    }

    #[test]
    fn identity_weights_pass_through() {
        let p = params(Tensor::eye(2), Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[vec![0.25, -4.0], vec![7.0, 1.5]]).unwrap());
        let y = linear_forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn hand_value() {
        let p = params(
            Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            Tensor::scalar(0.5),
        );
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let y = linear_forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);
    }

    #[test]
    fn window_input_is_flattened() {
        let spec = ModelSpec::linear(2, 3, 1);
        let p = init_params(&spec, 4).unwrap();
        let data: Vec<f64> = (0..12).map(|v| v as f64 / 7.0).collect();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x3 = tape.constant(Tensor::new(vec![2, 3, 2], data.clone()).unwrap());
        let x2 = tape.constant(Tensor::new(vec![2, 6], data).unwrap());
        let a = linear_forward(&mut tape, &bound, x3).unwrap();
        let b = linear_forward(&mut tape, &bound, x2).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }
}
