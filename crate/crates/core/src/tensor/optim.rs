use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `p ← p − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update and clears every gradient. Fails before touching
    /// any parameter if one lacks a gradient.
    pub fn step(&mut self, params: &mut [NamedTensor]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::OptimizerMismatch(format!(
                "{} velocity slots for {} parameters",
                self.velocity.len(),
                params.len()
            )));
        }
        if let Some((p, _)) = params
            .iter()
            .zip(&self.velocity)
            .find(|(p, v)| p.tensor.len() != v.len())
        {
            return Err(Error::OptimizerMismatch(p.name.clone()));
        }

        let mut updated = Vec::with_capacity(params.len());
        for (p, v) in params.iter().zip(self.velocity.iter_mut()) {
            let g = p.tensor.grad().expect("checked above");
            let data: Vec<f64> = p
                .tensor
                .data()
                .iter()
                .zip(g)
                .zip(v.iter_mut())
                .map(|((&w, &gr), vel)| {
                    *vel = self.momentum * *vel + gr;
                    w - self.learning_rate * *vel
                })
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericInstability { op: "sgd_step" });
            }
            updated.push(data);
        }
        for (p, data) in params.iter_mut().zip(updated) {
            p.tensor.data_mut().copy_from_slice(&data);
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> NamedTensor {
        let mut t = Tensor::scalar(v);
        t.set_grad(vec![g]).unwrap();
        NamedTensor::new("p", t)
    }

    #[test]
    fn plain_step() {
        let mut ps = vec![param(1.0, 2.0)];
        Sgd::new(0.1, 0.0).unwrap().step(&mut ps).unwrap();
        assert!((ps[0].tensor.data()[0] - 0.8).abs() < 1e-15);
        assert!(ps[0].tensor.grad().is_none());
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut ps = vec![param(0.75, 0.0), param(-3.0, 0.0)];
        Sgd::new(0.5, 0.9).unwrap().step(&mut ps).unwrap();
        assert_eq!(ps[0].tensor.data()[0], 0.75);
        assert_eq!(ps[1].tensor.data()[0], -3.0);
    }

    #[test]
    fn momentum_two_steps() {
        let mut opt = Sgd::new(1.0, 0.9).unwrap();
        let mut ps = vec![param(0.0, 1.0)];
        opt.step(&mut ps).unwrap();
        ps[0].tensor.set_grad(vec![1.0]).unwrap();
        opt.step(&mut ps).unwrap();
        assert!((ps[0].tensor.data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_names_param() {
        let mut ps = vec![
            param(0.0, 1.0),
            NamedTensor::new("w_f", Tensor::scalar(1.0)),
        ];
        let err = Sgd::new(0.1, 0.0).unwrap().step(&mut ps).unwrap_err();
        assert!(err.to_string().contains("w_f"));
        assert_eq!(ps[0].tensor.data()[0], 0.0);
    }

    #[test]
    fn velocity_mismatch_rejected() {
        let mut opt = Sgd::new(0.1, 0.5).unwrap();
        opt.step(&mut [param(0.0, 1.0)]).unwrap();
        let mut two = vec![param(0.0, 1.0), param(0.0, 1.0)];
        assert!(opt.step(&mut two).is_err());
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(Sgd::new(0.0, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
