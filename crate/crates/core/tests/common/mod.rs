#![allow(dead_code)]

use fedpers::data::{
    generate_synthetic, prepare_node, DatasetSchema, NodeDataset, PipelineConfig, SyntheticConfig,
};
use fedpers::models::{forward, init_params, ModelParams, ModelSpec};
use fedpers::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn mse_loss(spec: &ModelSpec, params: &ModelParams, x: &Tensor, y: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = forward(spec, &mut tape, &bound, xv).unwrap();
    let l = tape.mse(pred, yv).unwrap();
    tape.value(l).data()[0]
}

/// Largest relative error between autodiff and central differences over
/// every parameter element: `|a − n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(spec: &ModelSpec, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(spec, seed).unwrap();
    for t in params.tensors_mut() {
        for v in t.tensor.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch = 3;
    let x = random_tensor(&[batch, spec.window_len, spec.input_dim], &mut rng, 1.0);
    let y = random_tensor(&[batch, spec.output_dim], &mut rng, 1.0);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = forward(spec, &mut tape, &bound, xv).unwrap();
    let l = tape.mse(pred, yv).unwrap();
    tape.backward(l).unwrap();
    let vars = bound.into_vars();
    let mut with_grads = params.clone();
    with_grads.absorb_grads(&mut tape, &vars).unwrap();

    let mut worst: f64 = 0.0;
    for (k, nt) in with_grads.tensors().iter().enumerate() {
        let analytic = nt.tensor.grad().unwrap().to_vec();
        for (e, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[k].tensor.data_mut()[e] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[k].tensor.data_mut()[e] -= h;
            let n = (mse_loss(spec, &plus, &x, &y) - mse_loss(spec, &minus, &x, &y)) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Synthetic nodes for `schema` with a short window.
pub fn synthetic_nodes(
    schema: &str,
    records: usize,
    shift: f64,
    window_len: usize,
    seed: u64,
) -> Vec<NodeDataset> {
    let schema = DatasetSchema::builtin(schema).unwrap();
    let cfg = SyntheticConfig {
        seed,
        records_per_node: records,
        periods: vec![24.0, 168.0],
        noise_std: 0.1,
        node_shift_scale: shift,
    };
    let pipeline = PipelineConfig {
        window_len,
        ..PipelineConfig::default()
    };
    generate_synthetic(&schema, &cfg)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, t)| prepare_node(i, t, &schema.target_name, &pipeline, seed + i as u64).unwrap())
        .collect()
}

pub fn toy_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::linear(3, 4, 1),
        ModelSpec::dnn(3, 4, vec![4, 3], 1),
        ModelSpec::lstm(3, 4, vec![4, 3], 1),
        ModelSpec::transformer(3, 4, 4, 2, 2, 1),
    ]
}
