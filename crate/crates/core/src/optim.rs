//! First-order optimisers over flat parameter vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// `gamma_0 / (1 + i / decay)`; the sum over `i` diverges.
    InverseDecay { initial: f64, decay: f64 },
    /// `gamma_0 * factor^(i / every)`.
    Step { initial: f64, factor: f64, every: usize },
}

impl LearningRate {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LearningRate::Constant(g) => g,
            LearningRate::InverseDecay { initial, decay } => initial / (1.0 + step as f64 / decay),
            LearningRate::Step { initial, factor, every } => initial * factor.powi((step / every) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRate::Constant(g) => g > 0.0,
            LearningRate::InverseDecay { initial, decay } => initial > 0.0 && decay > 0.0,
            LearningRate::Step { initial, factor, every } => initial > 0.0 && factor > 0.0 && factor <= 1.0 && every > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    /// Whether the rates sum to infinity, as plain SGD requires.
    pub fn sums_to_infinity(&self) -> bool {
        !matches!(self, LearningRate::Step { factor, .. } if *factor < 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    schedule: LearningRate,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: LearningRate, n_params: usize) -> Result<Self> {
        schedule.validate()?;
        if kind == OptimizerKind::Sgd && !schedule.sums_to_infinity() {
            return Err(Error::invalid("plain SGD needs a learning-rate schedule whose sum diverges"));
        }
        let moments = if matches!(kind, OptimizerKind::Adam { .. }) { n_params } else { 0 };
        Ok(Self {
            kind,
            schedule,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "gradient length differs from parameters");
        let lr = self.schedule.at(self.t);
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}
