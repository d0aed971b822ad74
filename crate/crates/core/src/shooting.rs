//! Shooting method for the FBSDE on a fixed horizon.
//!
//! `Y_0 = theta_y` and per-step maps `Z_n(x)` are propagated forward along
//! simulated paths,
//!
//! ```text
//! Y_{n+1} = Y_n - dt h(X_n, Z_n, v_n) + sqrt(dt) Z_n . xi_n,
//! ```
//!
//! and the parameters minimise `mean |Y_N - g(X_N)|^2`. `Y_N` is affine in
//! `theta_y` and depends on `Z_n` only through step `n`, so the exact gradient
//! is `dY_N/dZ_n = dt (Z_n + v_n) + sqrt(dt) xi_n` pushed through the
//! parametrisation of `Z_n`.

use rayon::prelude::*;

use crate::approx::{BasisSet, Mlp};
use crate::error::{Error, Result};
use crate::functionals::CostSpec;
use crate::lsmc::driver;
use crate::optim::{LearningRate, Optimizer, OptimizerKind};
use crate::rng::{derive_seed, trajectory_stream};
use crate::sde::{simulate_batch, InitialCondition, PathStatus, Policy, SdeModel, SimulationSpec, StopRule, TrajectoryBatch, ZeroPolicy};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone)]
pub enum ZParametrisation {
    /// One tanh network per step.
    Mlp { hidden: usize },
    /// `Z_n(x)_j = sum_k beta_{n,k,j} phi_k(x)` over a fixed basis.
    Basis(BasisSet),
}

#[derive(Debug, Clone)]
pub struct ShootingConfig {
    pub batch_size: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: LearningRate,
    pub max_gradient_steps: usize,
    /// Simulate each minibatch under `u = -Z` of the current iterate.
    pub controlled_forward: bool,
    pub z_parametrisation: ZParametrisation,
    pub initial: InitialCondition,
    pub theta_y_init: f64,
}

impl ShootingConfig {
    pub fn new(initial: InitialCondition, dt: f64, n_steps: usize) -> Self {
        Self {
            batch_size: 50,
            n_steps,
            dt,
            optimizer: OptimizerKind::adam(),
            learning_rate: LearningRate::Constant(1e-2),
            max_gradient_steps: 5000,
            controlled_forward: false,
            z_parametrisation: ZParametrisation::Mlp { hidden: 32 },
            initial,
            theta_y_init: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_steps == 0 || !(self.dt > 0.0) {
            return Err(Error::invalid("batch size, step count and time step must be positive"));
        }
        self.learning_rate.validate()?;
        if let ZParametrisation::Mlp { hidden: 0 } = self.z_parametrisation {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }
}

/// Architecture of the per-step `Z` maps.
#[derive(Debug, Clone)]
pub enum ZModel {
    Mlp(Mlp),
    Basis { basis: BasisSet, output: usize },
}

impl ZModel {
    pub fn block_len(&self) -> usize {
        match self {
            ZModel::Mlp(net) => net.n_params(),
            ZModel::Basis { basis, output } => basis.len() * output,
        }
    }

    pub fn output(&self) -> usize {
        match self {
            ZModel::Mlp(net) => net.output,
            ZModel::Basis { output, .. } => *output,
        }
    }

    pub fn eval(&self, block: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            ZModel::Mlp(net) => net.forward(block, x, out),
            ZModel::Basis { basis, output } => {
                let mut phi = vec![0.0; basis.len()];
                basis.eval(x, &mut phi);
                out.fill(0.0);
                for (k, p) in phi.iter().enumerate() {
                    for j in 0..*output {
                        out[j] += p * block[k * output + j];
                    }
                }
            }
        }
    }

    /// Accumulate `(dZ/dblock)^T dz` into `grad`.
    pub fn backward(&self, block: &[f64], x: &[f64], dz: &[f64], grad: &mut [f64]) {
        match self {
            ZModel::Mlp(net) => net.backward(block, x, dz, grad),
            ZModel::Basis { basis, output } => {
                let mut phi = vec![0.0; basis.len()];
                basis.eval(x, &mut phi);
                for (k, p) in phi.iter().enumerate() {
                    for j in 0..*output {
                        grad[k * output + j] += p * dz[j];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingState {
    pub z_model: ZModel,
    pub n_steps: usize,
    pub dt: f64,
    /// `[theta_y, block_0, ..., block_{N-1}]`.
    pub params: Vec<f64>,
    pub optimizer: Optimizer,
    pub loss_history: Vec<f64>,
    pub diverged: bool,
}

impl ShootingState {
    pub fn new(model: &SdeModel, config: &ShootingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let z_model = match &config.z_parametrisation {
            ZParametrisation::Mlp { hidden } => ZModel::Mlp(Mlp::new(model.dim(), *hidden, model.noise_dim())),
            ZParametrisation::Basis(basis) => {
                Error::check_len("shooting basis state", model.dim(), basis.state_dim())?;
                ZModel::Basis { basis: basis.clone(), output: model.noise_dim() }
            }
        };
        let p = z_model.block_len();
        let mut params = vec![0.0; 1 + config.n_steps * p];
        params[0] = config.theta_y_init;
        if let ZModel::Mlp(net) = &z_model {
            for n in 0..config.n_steps {
                let mut rng = trajectory_stream(derive_seed(seed, 0x2a), n as u64);
                net.init(&mut rng, true, &mut params[1 + n * p..1 + (n + 1) * p]);
            }
        }
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.len())?;
        Ok(Self {
            z_model,
            n_steps: config.n_steps,
            dt: config.dt,
            params,
            optimizer,
            loss_history: Vec::new(),
            diverged: false,
        })
    }

    pub fn theta_y(&self) -> f64 {
        self.params[0]
    }

    pub fn block(&self, n: usize) -> &[f64] {
        let p = self.z_model.block_len();
        &self.params[1 + n * p..1 + (n + 1) * p]
    }

    pub fn z(&self, n: usize, x: &[f64], out: &mut [f64]) {
        self.z_model.eval(self.block(n.min(self.n_steps - 1)), x, out);
    }

    /// Step whose network approximates `Z` at time `t`.
    pub fn step_for_time(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps - 1)
    }

    /// Learned control `-Z(x)` at time `t`.
    pub fn control_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.z(self.step_for_time(t), x, out);
        out.iter_mut().for_each(|u| *u = -*u);
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// `u_n(x) = -Z_n(x)` under the current parameters.
pub struct ShootingPolicy<'a>(pub &'a ShootingState);

impl Policy for ShootingPolicy<'_> {
    fn control(&self, step: usize, x: &[f64], out: &mut [f64]) {
        self.0.z(step, x, out);
        out.iter_mut().for_each(|u| *u = -*u);
    }
}

fn check_batch(state: &ShootingState, batch: &TrajectoryBatch) -> Result<()> {
    if batch.n_max() != state.n_steps {
        return Err(Error::invalid(format!(
            "batch has {} steps but the networks cover {}",
            batch.n_max(),
            state.n_steps
        )));
    }
    Error::check_len("batch noise", state.z_model.output(), batch.noise_dim())
}

fn forward_one(state: &ShootingState, batch: &TrajectoryBatch, cost: &CostSpec, m: usize) -> f64 {
    let (dt, w) = (batch.dt(), batch.noise_dim());
    let sq = dt.sqrt();
    let mut y = state.theta_y();
    let mut z = vec![0.0; w];
    for n in 0..batch.exit_index(m) {
        let x = batch.state(m, n);
        state.z(n, x, &mut z);
        let v = batch.is_controlled().then(|| batch.control(m, n));
        let xi = batch.noise(m, n);
        y += -dt * driver(&z, v, cost.running(x)) + sq * z.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
    }
    y
}

fn usable(batch: &TrajectoryBatch) -> Vec<usize> {
    (0..batch.len()).filter(|&m| batch.status(m) != PathStatus::Faulted).collect()
}

/// `Y` at each trajectory's final step.
pub fn forward_y(state: &ShootingState, batch: &TrajectoryBatch, cost: &CostSpec) -> Result<Vec<f64>> {
    check_batch(state, batch)?;
    let y: Vec<f64> = (0..batch.len()).into_par_iter().map(|m| forward_one(state, batch, cost, m)).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Y in the forward recursion".into()));
    }
    Ok(y)
}

/// `mean |Y_eta - g(X_eta)|^2` over non-faulted trajectories.
pub fn loss(state: &ShootingState, batch: &TrajectoryBatch, cost: &CostSpec) -> Result<f64> {
    let y = forward_y(state, batch, cost)?;
    let idx = usable(batch);
    if idx.is_empty() {
        return Err(Error::Numerical("every trajectory in the minibatch faulted".into()));
    }
    let sum: f64 = idx.iter().map(|&m| (y[m] - cost.terminal_value(batch.path(m).final_state())).powi(2)).sum();
    Ok(sum / idx.len() as f64)
}

const CHUNK: usize = 8;

/// Loss and its exact gradient with respect to all parameters.
pub fn gradient(state: &ShootingState, batch: &TrajectoryBatch, cost: &CostSpec) -> Result<(f64, Vec<f64>)> {
    let y = forward_y(state, batch, cost)?;
    let idx = usable(batch);
    if idx.is_empty() {
        return Err(Error::Numerical("every trajectory in the minibatch faulted".into()));
    }
    let inv = 1.0 / idx.len() as f64;
    let (dt, w) = (batch.dt(), batch.noise_dim());
    let sq = dt.sqrt();
    let p = state.z_model.block_len();
    let total = state.params.len();
    // fixed chunking keeps the reduction order independent of the thread count
    let partial: Vec<(f64, Vec<f64>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; total];
            let mut l = 0.0;
            let mut z = vec![0.0; w];
            let mut dz = vec![0.0; w];
            for &m in chunk {
                let r = y[m] - cost.terminal_value(batch.path(m).final_state());
                l += r * r;
                let scale = 2.0 * r * inv;
                g[0] += scale;
                for n in 0..batch.exit_index(m) {
                    let x = batch.state(m, n);
                    state.z(n, x, &mut z);
                    let xi = batch.noise(m, n);
                    for j in 0..w {
                        let v = if batch.is_controlled() { batch.control(m, n)[j] } else { 0.0 };
                        dz[j] = scale * (dt * (z[j] + v) + sq * xi[j]);
                    }
                    let block = 1 + n * p..1 + (n + 1) * p;
                    state.z_model.backward(&state.params[block.clone()], x, &dz, &mut g[block]);
                }
            }
            (l, g)
        })
        .collect();
    let mut grad = vec![0.0; total];
    let mut l = 0.0;
    for (pl, pg) in partial {
        l += pl;
        for (a, b) in grad.iter_mut().zip(pg) {
            *a += b;
        }
    }
    Ok((l * inv, grad))
}

/// Minibatch for gradient step `i`.
pub fn minibatch(state: &ShootingState, model: &SdeModel, config: &ShootingConfig, seed: u64, i: usize) -> Result<TrajectoryBatch> {
    let spec = SimulationSpec::new(config.dt, config.batch_size, derive_seed(seed, i as u64), config.initial.clone());
    let stop = StopRule::horizon(config.n_steps);
    if config.controlled_forward {
        simulate_batch(model, &ShootingPolicy(state), &stop, &spec)
    } else {
        simulate_batch(model, &ZeroPolicy, &stop, &spec)
    }
}

/// Stochastic-gradient training with a fresh minibatch per step. Divergence
/// stops training and sets `diverged`; the partial history is kept.
pub fn train(model: &SdeModel, cost: &CostSpec, config: &ShootingConfig, seed: u64) -> Result<ShootingState> {
    let mut state = ShootingState::new(model, config, seed)?;
    train_from(&mut state, model, cost, config, seed, config.max_gradient_steps)?;
    Ok(state)
}

/// Continue training `state` for `steps` gradient steps.
pub fn train_from(state: &mut ShootingState, model: &SdeModel, cost: &CostSpec, config: &ShootingConfig, seed: u64, steps: usize) -> Result<()> {
    for _ in 0..steps {
        let i = state.loss_history.len();
        let batch = minibatch(state, model, config, seed, i)?;
        let (l, grad) = match gradient(state, &batch, cost) {
            Ok(r) => r,
            Err(Error::Numerical(msg)) => {
                log::warn!("gradient step {i}: {msg}; stopping");
                state.diverged = true;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        state.loss_history.push(l);
        if !l.is_finite() || l > DIVERGENCE_LOSS {
            log::warn!("loss {l:e} at gradient step {i}; stopping");
            state.diverged = true;
            return Ok(());
        }
        let mut params = std::mem::take(&mut state.params);
        state.optimizer.step(&mut params, &grad);
        state.params = params;
        if i % 500 == 0 {
            log::debug!("gradient step {i}: loss {l:.4e}, theta_y {:.6}", state.theta_y());
        }
    }
    Ok(())
}
