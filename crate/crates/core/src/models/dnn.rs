//! Fully connected network: ReLU hidden layers and a linear output head.

use super::linear::flatten_window;
use super::{Bound, ModelSpec};
use crate::error::Result;
use crate::tensor::{Tape, Var};

pub fn dnn_forward(spec: &ModelSpec, tape: &mut Tape, bound: &Bound<'_>, x: Var) -> Result<Var> {
    let mut h = flatten_window(tape, x)?;
    for l in 0..spec.hidden_dims.len() {
        let z = bound.dense(tape, &format!("hidden{l}"), h)?;
        h = tape.relu(z)?;
    }
    bound.dense(tape, "out", h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelParams};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn run(spec: &ModelSpec, p: &ModelParams, x: Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(x);
        let y = dnn_forward(spec, &mut tape, &bound, x).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_network_outputs_bias() {
        let spec = ModelSpec::dnn(2, 2, vec![3, 3], 1);
        let mut p = init_params(&spec, 0).unwrap();
        for t in p.tensors_mut() {
            t.tensor.data_mut().fill(0.0);
        }
        p.get_mut("out.b").unwrap().data_mut()[0] = 0.7;
        let y = run(
            &spec,
            &p,
            Tensor::new(
                vec![2, 2, 2],
                vec![3.0, -1.0, 2.0, 9.0, 0.0, 1.0, -5.0, 4.0],
            )
            .unwrap(),
        );
        assert_eq!(y, vec![0.7, 0.7]);
    }

    #[test]
    fn negative_input_is_clipped_by_relu() {
        let spec = ModelSpec::dnn(1, 1, vec![1], 1);
        let mut p = init_params(&spec, 0).unwrap();
        p.get_mut("hidden0.w").unwrap().data_mut()[0] = 1.0;
        p.get_mut("out.w").unwrap().data_mut()[0] = 1.0;
        let y = run(&spec, &p, Tensor::new(vec![1, 1, 1], vec![-2.0]).unwrap());
        assert_eq!(y, vec![0.0]);
    }

    proptest! {
        #[test]
        fn monotone_with_nonnegative_weights(seed in 0u64..1000, coord in 0usize..6, bump in 0.0f64..3.0,
                                             base in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let spec = ModelSpec::dnn(2, 3, vec![4, 3], 1);
            let mut p = init_params(&spec, seed).unwrap();
            for t in p.tensors_mut() {
                for v in t.tensor.data_mut() {
                    *v = v.abs();
                }
            }
            let lo = run(&spec, &p, Tensor::new(vec![1, 3, 2], base.clone()).unwrap())[0];
            let mut up = base;
            up[coord] += bump;
            let hi = run(&spec, &p, Tensor::new(vec![1, 3, 2], up).unwrap())[0];
            prop_assert!(hi >= lo);
        }
    }
}
