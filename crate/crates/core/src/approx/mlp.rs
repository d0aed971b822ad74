use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::trajectory_stream;

/// One-hidden-layer tanh network `x -> W2 tanh(W1 x + b1) + b2`.
///
/// Parameters live in caller-owned flat slices laid out as `W1` (row-major
/// `hidden x input`), `b1`, `W2` (row-major `output x hidden`), `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        assert!(input > 0 && hidden > 0 && output > 0, "layer widths must be positive");
        Self { input, hidden, output }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    fn hidden_activations(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|i| {
                let row = &params[i * self.input..(i + 1) * self.input];
                let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[b1 + i];
                a.tanh()
            })
            .collect()
    }

    pub fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(params.len(), self.n_params());
        let h = self.hidden_activations(params, x);
        let (_, w2, b2) = self.offsets();
        for j in 0..self.output {
            let row = &params[w2 + j * self.hidden..w2 + (j + 1) * self.hidden];
            out[j] = row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + params[b2 + j];
        }
    }

    /// Accumulate `(d out / d params)^T dout` into `grad`.
    pub fn backward(&self, params: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64]) {
        let h = self.hidden_activations(params, x);
        let (b1, w2, b2) = self.offsets();
        for j in 0..self.output {
            grad[b2 + j] += dout[j];
            for i in 0..self.hidden {
                grad[w2 + j * self.hidden + i] += dout[j] * h[i];
            }
        }
        for i in 0..self.hidden {
            let dh: f64 = (0..self.output).map(|j| params[w2 + j * self.hidden + i] * dout[j]).sum();
            let da = dh * (1.0 - h[i] * h[i]);
            grad[b1 + i] += da;
            for k in 0..self.input {
                grad[i * self.input + k] += da * x[k];
            }
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero. With
    /// `zero_output`, the output layer starts at zero so the network is
    /// initially the zero function.
    pub fn init<R: Rng>(&self, rng: &mut R, zero_output: bool, out: &mut [f64]) {
        out.fill(0.0);
        let (b1, w2, b2) = self.offsets();
        let s1 = 1.0 / (self.input as f64).sqrt();
        for w in &mut out[..b1] {
            *w = rng.random_range(-s1..s1);
        }
        if !zero_output {
            let s2 = 1.0 / (self.hidden as f64).sqrt();
            for w in &mut out[w2..b2] {
                *w = rng.random_range(-s2..s2);
            }
        }
    }
}

/// Per-step networks `Z_n` plus the scalar initial value `theta_y`, stored as
/// one flat parameter vector `[theta_y, block_0, block_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpApprox {
    arch: Mlp,
    steps: usize,
    params: Vec<f64>,
}

impl MlpApprox {
    pub fn new(arch: Mlp, steps: usize, seed: u64, zero_output: bool) -> Self {
        let p = arch.n_params();
        let mut params = vec![0.0; 1 + steps * p];
        for n in 0..steps {
            let mut rng = trajectory_stream(seed, n as u64);
            arch.init(&mut rng, zero_output, &mut params[1 + n * p..1 + (n + 1) * p]);
        }
        Self { arch, steps, params }
    }

    pub fn from_params(arch: Mlp, steps: usize, params: Vec<f64>) -> Result<Self> {
        Error::check_len("network parameters", 1 + steps * arch.n_params(), params.len())?;
        Ok(Self { arch, steps, params })
    }

    pub fn arch(&self) -> Mlp {
        self.arch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn theta_y(&self) -> f64 {
        self.params[0]
    }

    pub fn set_theta_y(&mut self, v: f64) {
        self.params[0] = v;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block_range(&self, n: usize) -> std::ops::Range<usize> {
        let p = self.arch.n_params();
        1 + n * p..1 + (n + 1) * p
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.params[self.block_range(n)]
    }

    pub fn eval(&self, n: usize, x: &[f64], out: &mut [f64]) {
        self.arch.forward(self.block(n), x, out);
    }

    /// `(step, index, value)` rows; `theta_y` carries no step.
    pub fn param_rows(&self) -> impl Iterator<Item = (Option<usize>, usize, f64)> + '_ {
        let p = self.arch.n_params();
        std::iter::once((None, 0, self.params[0]))
            .chain(self.params[1..].iter().enumerate().map(move |(i, &v)| (Some(i / p), i % p, v)))
    }
}
