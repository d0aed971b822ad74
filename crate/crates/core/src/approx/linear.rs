use super::basis::BasisSet;
use crate::error::{Error, Result};
use crate::sde::{Policy, SdeModel};

/// Basis and coefficients of `V_n(x) = sum_k alpha_{k,n} phi_{k,n}(x)`.
#[derive(Debug, Clone)]
pub struct StepFit {
    pub basis: BasisSet,
    pub coeffs: Vec<f64>,
}

impl StepFit {
    pub fn new(basis: BasisSet, coeffs: Vec<f64>) -> Result<Self> {
        Error::check_len("step coefficients", basis.len(), coeffs.len())?;
        Ok(Self { basis, coeffs })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.eval(x, &mut phi);
        dot(&phi, &self.coeffs)
    }

    /// Value and state gradient.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (k, d) = (self.basis.len(), self.basis.state_dim());
        let mut phi = vec![0.0; k];
        let mut g = vec![0.0; k * d];
        self.basis.eval_with_gradient(x, &mut phi, &mut g);
        grad.fill(0.0);
        for (kk, a) in self.coeffs.iter().enumerate() {
            for j in 0..d {
                grad[j] += a * g[kk * d + j];
            }
        }
        dot(&phi, &self.coeffs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Z = sigma^T grad` with `sigma` row-major `d x m`.
pub fn sigma_transpose_times(sigma: &[f64], grad: &[f64], out: &mut [f64]) {
    let (d, m) = (grad.len(), out.len());
    out.fill(0.0);
    for i in 0..d {
        for j in 0..m {
            out[j] += sigma[i * m + j] * grad[i];
        }
    }
}

/// Per-step linear value approximation for steps `0..=n_max`.
#[derive(Debug, Clone)]
pub struct LinearValueApprox {
    steps: Vec<StepFit>,
}

impl LinearValueApprox {
    pub fn new(steps: Vec<StepFit>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("value approximation needs at least one step"));
        }
        Ok(Self { steps })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, n: usize) -> &StepFit {
        &self.steps[n]
    }

    pub fn steps(&self) -> &[StepFit] {
        &self.steps
    }

    pub fn state_dim(&self) -> usize {
        self.steps[0].basis.state_dim()
    }

    pub fn eval_value(&self, n: usize, x: &[f64]) -> f64 {
        self.steps[n].value(x)
    }

    pub fn eval_gradient(&self, n: usize, x: &[f64], out: &mut [f64]) {
        self.steps[n].value_and_gradient(x, out);
    }

    /// `sigma(x)^T grad V_n(x)`.
    pub fn eval_control(&self, n: usize, x: &[f64], sigma: &[f64], out: &mut [f64]) {
        let mut grad = vec![0.0; x.len()];
        self.eval_gradient(n, x, &mut grad);
        sigma_transpose_times(sigma, &grad, out);
    }

    /// `(step, index, coefficient)` rows.
    pub fn coefficient_rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(n, s)| s.coeffs.iter().enumerate().map(move |(k, &a)| (n, k, a)))
    }
}

/// Feedback control `u(n, x) = -sigma(x)^T grad V_n(x)` with an optional
/// component-wise clamp.
pub struct GradientPolicy<'a> {
    approx: &'a LinearValueApprox,
    model: &'a SdeModel,
    clamp: Option<f64>,
}

impl<'a> GradientPolicy<'a> {
    pub fn new(approx: &'a LinearValueApprox, model: &'a SdeModel) -> Self {
        Self {
            approx,
            model,
            clamp: None,
        }
    }

    pub fn with_clamp(mut self, bound: f64) -> Self {
        self.clamp = Some(bound);
        self
    }
}

impl Policy for GradientPolicy<'_> {
    fn control(&self, step: usize, x: &[f64], out: &mut [f64]) {
        let n = step.min(self.approx.n_steps() - 1);
        let mut sigma = vec![0.0; self.model.dim() * self.model.noise_dim()];
        self.model.diffusion_at(x, &mut sigma);
        self.approx.eval_control(n, x, &sigma, out);
        for u in out.iter_mut() {
            *u = -*u;
            if let Some(c) = self.clamp {
                *u = u.clamp(-c, c);
            }
        }
    }
}
