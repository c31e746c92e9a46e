use serde::{Deserialize, Serialize};

use super::FineTune;
use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::models::{
    gather_rows, init_params, predict, train_with_loss, Model, ModelParams, ModelSpec, TrainStats,
};
use crate::seed::derive_seed;
use crate::tensor::{softmax_rows, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdConfig {
    /// Weight of the teacher term.
    pub a: f64,
    /// Defaults to the teacher's architecture.
    pub student_spec: Option<ModelSpec>,
    pub distill_epochs: usize,
    /// Start from the teacher's weights when the architectures match.
    pub warm_start: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            student_spec: None,
            distill_epochs: 4,
            warm_start: true,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        check_mixture(self.a)?;
        if self.distill_epochs == 0 {
            return Err(Error::Config("distill_epochs must be positive".into()));
        }
        if let Some(s) = &self.student_spec {
            s.validate()?;
        }
        self.fine_tune().validate()
    }

    fn fine_tune(&self) -> FineTune {
        FineTune {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }
}

fn check_mixture(a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "mixture coefficient {a} outside [0,1]"
        )))
    }
}

/// Classification loss `(1−a)·CE(labels) + a·CE(q)`, averaged over the batch,
/// where `q = softmax(teacher_logits)` is held constant.
pub fn kd_losses(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: &Tensor,
    labels: &[usize],
    a: f64,
) -> Result<Var> {
    check_mixture(a)?;
    let s = tape.shape(student_logits).to_vec();
    if s.len() != 2 || teacher_logits.shape() != s.as_slice() || labels.len() != s[0] {
        return Err(Error::ShapeMismatch {
            op: "kd_losses",
            left: s,
            right: teacher_logits.shape().to_vec(),
        });
    }
    let (batch, classes) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside {classes} classes"
        )));
    }
    let log_p = tape.log_softmax(student_logits)?;
    let cross = |tape: &mut Tape, dist: Tensor| -> Result<Var> {
        let d = tape.constant(dist);
        let prod = tape.mul(d, log_p)?;
        let total = tape.sum(prod)?;
        tape.scale(total, -1.0 / batch as f64)
    };
    let mut onehot = vec![0.0; batch * classes];
    for (b, &y) in labels.iter().enumerate() {
        onehot[b * classes + y] = 1.0;
    }
    let hard = cross(tape, Tensor::new(vec![batch, classes], onehot)?)?;
    let soft = cross(tape, softmax_rows(teacher_logits)?)?;
    let hard = tape.scale(hard, 1.0 - a)?;
    let soft = tape.scale(soft, a)?;
    tape.add(hard, soft)
}

/// Regression analogue: `(1−a)·MSE(pred, labels) + a·MSE(pred, teacher)`.
/// A zero-weight term is left out of the graph.
pub fn kd_regression_loss(
    tape: &mut Tape,
    pred: Var,
    labels: Var,
    teacher: Var,
    a: f64,
) -> Result<Var> {
    check_mixture(a)?;
    if a == 0.0 {
        return tape.mse(pred, labels);
    }
    if a == 1.0 {
        return tape.mse(pred, teacher);
    }
    let hard = tape.mse(pred, labels)?;
    let soft = tape.mse(pred, teacher)?;
    let hard = tape.scale(hard, 1.0 - a)?;
    let soft = tape.scale(soft, a)?;
    tape.add(hard, soft)
}

/// Trains a student on the node's train split against labels and the
/// frozen teacher's forecasts. Returns the student spec and parameters.
pub fn kd_personalize(
    teacher_spec: &ModelSpec,
    teacher: &ModelParams,
    node: &NodeDataset,
    cfg: &KdConfig,
) -> Result<(ModelSpec, ModelParams, TrainStats)> {
    cfg.validate()?;
    let student_spec = cfg
        .student_spec
        .clone()
        .unwrap_or_else(|| teacher_spec.clone());
    if student_spec.input_dim != teacher_spec.input_dim
        || student_spec.window_len != teacher_spec.window_len
        || student_spec.output_dim != teacher_spec.output_dim
    {
        return Err(Error::InvalidSpec(
            "student and teacher must share input and output shapes".into(),
        ));
    }
    if student_spec.param_count() > teacher_spec.param_count() {
        return Err(Error::InvalidSpec(format!(
            "student has {} parameters, more than the teacher's {}",
            student_spec.param_count(),
            teacher_spec.param_count()
        )));
    }
    if node.train.is_empty() {
        return Err(Error::EmptySubset(format!(
            "node {} train split",
            node.node_id
        )));
    }
    let seed = derive_seed(cfg.seed, &[node.node_id as u64]);
    let start = if cfg.warm_start && student_spec == *teacher_spec {
        teacher.clone()
    } else {
        init_params(&student_spec, seed)?
    };
    let teacher_out = predict(teacher_spec, teacher, &node.windows)?;
    let samples = node.samples();
    let mut student = Model::new(student_spec, start)?;
    let train_cfg = cfg.fine_tune().train_config(cfg.distill_epochs, seed);
    let stats = train_with_loss(
        &mut student,
        &samples,
        &node.train,
        &train_cfg,
        |tape, pred, batch| {
            let y = tape.constant(samples.targets_at(batch));
            let t = tape.constant(gather_rows(&teacher_out, batch));
            kd_regression_loss(tape, pred, y, t, cfg.a)
        },
    )?;
    Ok((student.spec, student.params, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn value(student: &Tensor, teacher: &Tensor, labels: &[usize], a: f64) -> f64 {
        let mut tape = Tape::new();
        let s = tape.constant(student.clone());
        let l = kd_losses(&mut tape, s, teacher, labels, a).unwrap();
        tape.value(l).data()[0]
    }

    fn scalar_reference(
        student: &[Vec<f64>],
        teacher: &[Vec<f64>],
        labels: &[usize],
        a: f64,
    ) -> f64 {
        let softmax = |r: &Vec<f64>| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect::<Vec<_>>()
        };
        let mut total = 0.0;
        for ((s, t), &y) in student.iter().zip(teacher).zip(labels) {
            let p = softmax(s);
            let q = softmax(t);
            let ce = -p[y].ln();
            let kd: f64 = -q.iter().zip(&p).map(|(qk, pk)| qk * pk.ln()).sum::<f64>();
            total += (1.0 - a) * ce + a * kd;
        }
        total / student.len() as f64
    }

    #[test]
    fn matches_scalar_reference() {
        let s = vec![vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, -0.1]];
        let t = vec![vec![1.0, 0.0], vec![-0.4, 0.9], vec![0.2, 0.2]];
        let got = value(&logits(&s), &logits(&t), &[0, 1, 1], 0.5);
        assert!((got - scalar_reference(&s, &t, &[0, 1, 1], 0.5)).abs() < 1e-12);
    }

    #[test]
    fn endpoints() {
        let s = logits(&[vec![0.1, 0.4, -0.3], vec![1.5, -1.0, 0.0]]);
        let t = logits(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.3, 0.1]]);
        let ce = value(
            &s,
            &logits(&[vec![9.0, 0.0, 0.0], vec![0.0, 0.0, 9.0]]),
            &[2, 0],
            0.0,
        );
        assert_eq!(value(&s, &t, &[2, 0], 0.0), ce);
        assert_eq!(value(&s, &t, &[2, 0], 1.0), value(&s, &t, &[0, 1], 1.0));
        let mut tape = Tape::new();
        let x = tape.constant(s.clone());
        assert!(kd_losses(&mut tape, x, &t, &[0, 0], 1.5).is_err());
        assert!(kd_losses(&mut tape, x, &t, &[0, 3], 0.5).is_err());
        assert!(kd_losses(&mut tape, x, &logits(&[vec![0.0, 0.0]]), &[0], 0.5).is_err());
    }

    #[test]
    fn matching_student_gives_teacher_entropy() {
        let t = logits(&[vec![0.2, 1.1, -0.4, 0.0]]);
        let q = softmax_rows(&t).unwrap();
        let entropy: f64 = -q.data().iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((value(&t, &t, &[0], 1.0) - entropy).abs() < 1e-12);
    }

    #[test]
    fn uniform_teacher_minimized_by_uniform_student() {
        let q = logits(&[vec![0.0; 4]]);
        let uniform = value(&logits(&[vec![0.7; 4]]), &q, &[0], 1.0);
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        let skewed = value(&logits(&[vec![1.0, 0.0, 0.0, 0.0]]), &q, &[0], 1.0);
        let p = softmax_rows(&logits(&[vec![1.0, 0.0, 0.0, 0.0]])).unwrap();
        let mean_neg_log: f64 = p.data().iter().map(|v| -v.ln()).sum::<f64>() / 4.0;
        assert!((skewed - mean_neg_log).abs() < 1e-12);
        assert!(skewed > uniform);
    }
}
