//! Euler-Maruyama simulation of (controlled) diffusions with stopping.
//!
//! A [`TrajectoryBatch`] stores every state, noise draw and applied control of
//! `M` independent paths of
//!
//! ```text
//! X_{n+1} = X_n + dt (b(X_n) + sigma(X_n) u_n) + sqrt(dt) sigma(X_n) xi_n
//! ```
//!
//! stopped at the first grid index where the state leaves the domain, or at
//! `n_max`. Paths are frozen after they stop.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, trajectory_stream};

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Drift and diffusion of `dX = b(X) dt + sigma(X) dB`.
///
/// `diffusion` writes `sigma(x)` row-major as a `dim x noise_dim` matrix.
/// With `time_augmented`, the last state coordinate is the clock: it is
/// advanced by exactly `dt` per step and receives no noise, whatever the user
/// closures write into that row.
#[derive(Clone)]
pub struct SdeModel {
    dim: usize,
    noise_dim: usize,
    drift: VectorField,
    diffusion: VectorField,
    time_augmented: bool,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("time_augmented", &self.time_augmented)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new<B, S>(dim: usize, noise_dim: usize, drift: B, diffusion: S) -> Self
    where
        B: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0 && noise_dim > 0, "dimensions must be positive");
        Self {
            dim,
            noise_dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            time_augmented: false,
        }
    }

    /// Standard Brownian motion in `dim` dimensions (`b = 0`, `sigma = I`).
    pub fn brownian(dim: usize) -> Self {
        Self::new(
            dim,
            dim,
            |_, b| b.fill(0.0),
            move |_, s| {
                s.fill(0.0);
                for i in 0..dim {
                    s[i * dim + i] = 1.0;
                }
            },
        )
    }

    /// Mark the last coordinate as clock time.
    pub fn with_time_augmentation(mut self) -> Self {
        assert!(self.dim >= 2, "time augmentation needs a spatial coordinate");
        self.time_augmented = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn is_time_augmented(&self) -> bool {
        self.time_augmented
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out);
        if self.time_augmented {
            out[self.dim - 1] = 1.0;
        }
    }

    pub fn diffusion_at(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out);
        if self.time_augmented {
            let row = (self.dim - 1) * self.noise_dim;
            out[row..row + self.noise_dim].fill(0.0);
        }
    }

    /// Fresh scratch buffers for [`SdeModel::step_into`].
    pub fn workspace(&self) -> StepWorkspace {
        StepWorkspace {
            drift: vec![0.0; self.dim],
            sigma: vec![0.0; self.dim * self.noise_dim],
        }
    }

    /// In-place Euler-Maruyama step. Returns `false` if the new state is not finite.
    pub fn step_into(
        &self,
        x: &[f64],
        u: &[f64],
        dt: f64,
        xi: &[f64],
        ws: &mut StepWorkspace,
        out: &mut [f64],
    ) -> bool {
        let (d, m) = (self.dim, self.noise_dim);
        self.drift_at(x, &mut ws.drift);
        self.diffusion_at(x, &mut ws.sigma);
        let sqdt = dt.sqrt();
        let mut finite = true;
        for i in 0..d {
            let row = &ws.sigma[i * m..(i + 1) * m];
            let mut incr = ws.drift[i] * dt;
            for j in 0..m {
                incr += row[j] * (dt * u[j] + sqdt * xi[j]);
            }
            out[i] = x[i] + incr;
            finite &= out[i].is_finite();
        }
        if self.time_augmented {
            out[d - 1] = x[d - 1] + dt;
        }
        finite
    }
}

#[derive(Debug, Clone)]
pub struct StepWorkspace {
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

/// One Euler-Maruyama step `x + dt (b(x) + sigma(x) u) + sqrt(dt) sigma(x) xi`.
pub fn euler_step(x: &[f64], model: &SdeModel, u: &[f64], dt: f64, xi: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("euler_step state", model.dim(), x.len())?;
    Error::check_len("euler_step control", model.noise_dim(), u.len())?;
    Error::check_len("euler_step noise", model.noise_dim(), xi.len())?;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let mut out = vec![0.0; model.dim()];
    let mut ws = model.workspace();
    if model.step_into(x, u, dt, xi, &mut ws, &mut out) {
        Ok(out)
    } else {
        Err(Error::Numerical(format!("Euler step produced a non-finite state from {x:?}")))
    }
}

/// Domain membership plus maximum step count; the exit index of a path is the
/// first `n` with `X_n` outside the domain, or `n_max`.
#[derive(Clone)]
pub struct StopRule {
    in_domain: Predicate,
    n_max: usize,
}

impl std::fmt::Debug for StopRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StopRule").field("n_max", &self.n_max).finish_non_exhaustive()
    }
}

impl StopRule {
    pub fn new<P>(in_domain: P, n_max: usize) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        Self {
            in_domain: Arc::new(in_domain),
            n_max,
        }
    }

    /// Pure time horizon: never exits early.
    pub fn horizon(n_max: usize) -> Self {
        Self::new(|_| true, n_max)
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        (self.in_domain)(x)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }
}

/// Feedback control `u = policy(n, x)` added to the drift as `sigma(x) u`.
pub trait Policy: Sync {
    fn control(&self, step: usize, x: &[f64], out: &mut [f64]);

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn control(&self, _: usize, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Wraps a closure as a policy.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    fn control(&self, step: usize, x: &[f64], out: &mut [f64]) {
        (self.0)(step, x, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    /// Independent uniform draws per component, taken from the head of each
    /// trajectory's stream.
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitialCondition {
    pub fn dim(&self) -> usize {
        match self {
            InitialCondition::Fixed(x) => x.len(),
            InitialCondition::Uniform { low, .. } => low.len(),
        }
    }

    /// Fixed point, or the centre of the sampling box.
    pub fn representative(&self) -> Vec<f64> {
        match self {
            InitialCondition::Fixed(x) => x.clone(),
            InitialCondition::Uniform { low, high } => {
                low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub dt: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Global index of the first trajectory; chunked runs stay on the same streams.
    pub first_trajectory: u64,
    pub initial: InitialCondition,
}

impl SimulationSpec {
    pub fn new(dt: f64, trajectories: usize, seed: u64, initial: InitialCondition) -> Self {
        Self {
            dt,
            trajectories,
            seed,
            first_trajectory: 0,
            initial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    /// Left the domain at the recorded exit index.
    Exited,
    /// Still inside the domain at `n_max`.
    TimedOut,
    /// State became non-finite; the path is frozen at its last finite state.
    Faulted,
}

#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    m: usize,
    n_max: usize,
    dt: f64,
    dim: usize,
    noise_dim: usize,
    states: Vec<f64>,
    noises: Vec<f64>,
    controls: Vec<f64>,
    exit_index: Vec<usize>,
    status: Vec<PathStatus>,
    controlled: bool,
}

/// Borrowed view of a single trajectory.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub states: &'a [f64],
    pub noises: &'a [f64],
    pub controls: &'a [f64],
    pub exit_index: usize,
    pub status: PathStatus,
    pub dim: usize,
    pub noise_dim: usize,
}

impl<'a> PathView<'a> {
    pub fn state(&self, n: usize) -> &'a [f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn final_state(&self) -> &'a [f64] {
        self.state(self.exit_index)
    }

    /// Controls for steps `0..exit_index`.
    pub fn active_controls(&self) -> &'a [f64] {
        &self.controls[..self.exit_index * self.noise_dim]
    }

    /// Noises for steps `0..exit_index`.
    pub fn active_noises(&self) -> &'a [f64] {
        &self.noises[..self.exit_index * self.noise_dim]
    }
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Whether a non-zero policy drove the batch.
    pub fn is_controlled(&self) -> bool {
        self.controlled
    }

    pub fn state(&self, m: usize, n: usize) -> &[f64] {
        let off = (m * (self.n_max + 1) + n) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// Noise `xi` used in the step from `n` to `n + 1`.
    pub fn noise(&self, m: usize, n: usize) -> &[f64] {
        let off = (m * self.n_max + n) * self.noise_dim;
        &self.noises[off..off + self.noise_dim]
    }

    /// Control applied in the step from `n` to `n + 1`.
    pub fn control(&self, m: usize, n: usize) -> &[f64] {
        let off = (m * self.n_max + n) * self.noise_dim;
        &self.controls[off..off + self.noise_dim]
    }

    pub fn exit_index(&self, m: usize) -> usize {
        self.exit_index[m]
    }

    pub fn status(&self, m: usize) -> PathStatus {
        self.status[m]
    }

    /// True iff `n < exit_index` or the path exited (not timed out) exactly at `n`.
    pub fn alive(&self, m: usize, n: usize) -> bool {
        let eta = self.exit_index[m];
        n < eta || (n == eta && self.status[m] == PathStatus::Exited)
    }

    pub fn path(&self, m: usize) -> PathView<'_> {
        let s = m * (self.n_max + 1) * self.dim;
        let w = m * self.n_max * self.noise_dim;
        PathView {
            states: &self.states[s..s + (self.n_max + 1) * self.dim],
            noises: &self.noises[w..w + self.n_max * self.noise_dim],
            controls: &self.controls[w..w + self.n_max * self.noise_dim],
            exit_index: self.exit_index[m],
            status: self.status[m],
            dim: self.dim,
            noise_dim: self.noise_dim,
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = PathView<'_>> + '_ {
        (0..self.m).map(move |m| self.path(m))
    }

    pub fn count(&self, status: PathStatus) -> usize {
        self.status.iter().filter(|&&s| s == status).count()
    }

    pub fn timeout_fraction(&self) -> f64 {
        self.count(PathStatus::TimedOut) as f64 / self.m as f64
    }

    pub fn fault_fraction(&self) -> f64 {
        self.count(PathStatus::Faulted) as f64 / self.m as f64
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn noises(&self) -> &[f64] {
        &self.noises
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }
}

fn validate_spec(model: &SdeModel, spec: &SimulationSpec) -> Result<()> {
    if spec.trajectories == 0 {
        return Err(Error::invalid("batch needs at least one trajectory"));
    }
    if !(spec.dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {}", spec.dt)));
    }
    Error::check_len("initial condition", model.dim(), spec.initial.dim())?;
    if let InitialCondition::Uniform { low, high } = &spec.initial {
        Error::check_len("uniform initial bounds", low.len(), high.len())?;
        if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
            return Err(Error::invalid("uniform initial bounds must satisfy low <= high"));
        }
    }
    Ok(())
}

/// Run trajectory `i` of `spec`, calling `visit(n, x_n, u_n, xi_n)` for every
/// step taken. Returns the final state, exit index and status.
fn run_path<V>(model: &SdeModel, policy: &dyn Policy, stop: &StopRule, spec: &SimulationSpec, i: usize, mut visit: V) -> (Vec<f64>, usize, PathStatus)
where
    V: FnMut(usize, &[f64], &[f64], &[f64]),
{
    let (d, k, n_max) = (model.dim(), model.noise_dim(), stop.n_max());
    let mut rng = trajectory_stream(spec.seed, spec.first_trajectory + i as u64);
    let mut x = match &spec.initial {
        InitialCondition::Fixed(x0) => x0.clone(),
        InitialCondition::Uniform { low, high } => low
            .iter()
            .zip(high)
            .map(|(l, h)| {
                let r: f64 = rng.random();
                l + (h - l) * r
            })
            .collect(),
    };
    let mut next = vec![0.0; d];
    let mut xi = vec![0.0; k];
    let mut u = vec![0.0; k];
    let mut work = model.workspace();
    let zero_policy = policy.is_zero();
    for n in 0..n_max {
        if !stop.in_domain(&x) {
            return (x, n, PathStatus::Exited);
        }
        fill_standard_normal(&mut rng, &mut xi);
        if !zero_policy {
            policy.control(n, &x, &mut u);
        }
        visit(n, &x, &u, &xi);
        if !model.step_into(&x, &u, spec.dt, &xi, &mut work, &mut next) {
            return (x, n, PathStatus::Faulted);
        }
        std::mem::swap(&mut x, &mut next);
    }
    let status = if stop.in_domain(&x) { PathStatus::TimedOut } else { PathStatus::Exited };
    (x, n_max, status)
}

fn report_outcomes(status: &[PathStatus]) {
    let m = status.len();
    let count = |s: PathStatus| status.iter().filter(|&&v| v == s).count();
    let faults = count(PathStatus::Faulted);
    if faults > 0 {
        log::warn!("{faults} of {m} trajectories produced non-finite states and were frozen");
    }
    let timed_out = count(PathStatus::TimedOut) as f64 / m as f64;
    if count(PathStatus::Exited) > 0 && timed_out > 0.1 {
        log::warn!(
            "{:.1}% of trajectories survived to the horizon; consider a longer horizon",
            100.0 * timed_out
        );
    }
}

/// Simulate `spec.trajectories` paths under `policy`, stopped by `stop`.
///
/// Deterministic in `(model, policy, stop, spec)`: each path draws from its own
/// counter-based stream, so the thread count never changes the result.
pub fn simulate_batch(
    model: &SdeModel,
    policy: &dyn Policy,
    stop: &StopRule,
    spec: &SimulationSpec,
) -> Result<TrajectoryBatch> {
    validate_spec(model, spec)?;
    let (d, k) = (model.dim(), model.noise_dim());
    let (m, n_max) = (spec.trajectories, stop.n_max());
    let stride_x = (n_max + 1) * d;
    let stride_w = n_max * k;
    let mut states = vec![0.0; m * stride_x];
    let mut noises = vec![0.0; m * stride_w];
    let mut controls = vec![0.0; m * stride_w];
    let mut exit_index = vec![0usize; m];
    let mut status = vec![PathStatus::TimedOut; m];

    states
        .par_chunks_mut(stride_x)
        .zip(noises.par_chunks_mut(stride_w.max(1)))
        .zip(controls.par_chunks_mut(stride_w.max(1)))
        .zip(exit_index.par_iter_mut())
        .zip(status.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((((xs, ws), us), eta), st))| {
            let (last, exit, state) = run_path(model, policy, stop, spec, i, |n, x, u, xi| {
                xs[n * d..(n + 1) * d].copy_from_slice(x);
                us[n * k..(n + 1) * k].copy_from_slice(u);
                ws[n * k..(n + 1) * k].copy_from_slice(xi);
            });
            for n in exit..=n_max {
                xs[n * d..(n + 1) * d].copy_from_slice(&last);
            }
            *eta = exit;
            *st = state;
        });
    report_outcomes(&status);
    Ok(TrajectoryBatch {
        m,
        n_max,
        dt: spec.dt,
        dim: d,
        noise_dim: k,
        states,
        noises,
        controls,
        exit_index,
        status,
        controlled: !policy.is_zero(),
    })
}

/// End-of-path data accumulated without storing the path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub final_state: Vec<f64>,
    pub exit_index: usize,
    pub status: PathStatus,
    /// Girsanov log-likelihood of the applied controls.
    pub log_likelihood: f64,
    /// `dt * sum_{n<eta} f(X_n)` for the supplied running cost.
    pub running_cost: f64,
}

/// Same trajectories as [`simulate_batch`] for the same arguments, reduced
/// to per-path summaries; memory is independent of the step count.
pub fn simulate_summaries(
    model: &SdeModel,
    policy: &dyn Policy,
    stop: &StopRule,
    spec: &SimulationSpec,
    running: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<Vec<PathSummary>> {
    validate_spec(model, spec)?;
    let dt = spec.dt;
    let sqdt = dt.sqrt();
    let out: Vec<PathSummary> = (0..spec.trajectories)
        .into_par_iter()
        .map(|i| {
            let (mut stoch, mut quad, mut run) = (0.0, 0.0, 0.0);
            let (final_state, exit_index, status) = run_path(model, policy, stop, spec, i, |_, x, u, xi| {
                for (a, b) in u.iter().zip(xi) {
                    stoch += a * b;
                    quad += a * a;
                }
                if let Some(f) = running {
                    run += f(x);
                }
            });
            PathSummary {
                final_state,
                exit_index,
                status,
                log_likelihood: -sqdt * stoch - 0.5 * dt * quad,
                running_cost: dt * run,
            }
        })
        .collect();
    let status: Vec<PathStatus> = out.iter().map(|s| s.status).collect();
    report_outcomes(&status);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitStatistics {
    pub hit_fraction: f64,
    /// Mean of `exit_index * dt` over exited paths; `None` if none exited.
    pub mean_exit_time: Option<f64>,
}

pub fn exit_statistics(batch: &TrajectoryBatch) -> ExitStatistics {
    let mut hits = 0usize;
    let mut total = 0.0;
    for m in 0..batch.len() {
        if batch.status(m) == PathStatus::Exited {
            hits += 1;
            total += batch.exit_index(m) as f64 * batch.dt();
        }
    }
    ExitStatistics {
        hit_fraction: hits as f64 / batch.len() as f64,
        mean_exit_time: (hits > 0).then(|| total / hits as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ou(mu: f64, sigma: f64) -> SdeModel {
        SdeModel::new(1, 1, move |x, b| b[0] = mu - x[0], move |_, s| s[0] = sigma)
    }

    fn double_well() -> SdeModel {
        SdeModel::new(1, 1, |x, b| b[0] = -4.0 * x[0] * (x[0] * x[0] - 1.0), |_, s| s[0] = 0.5)
    }

    #[test]
    fn brownian_step() {
        let x = euler_step(&[0.0; 3], &SdeModel::brownian(3), &[0.0; 3], 0.01, &[1.0; 3]).unwrap();
        for v in x {
            assert_relative_eq!(v, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn ou_step_without_noise() {
        let x = euler_step(&[1.0], &ou(0.0, 2f64.sqrt()), &[0.0], 0.05, &[0.0]).unwrap();
        assert_relative_eq!(x[0], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn double_well_minimum_is_fixed_point() {
        for dt in [1e-3, 0.1, 1.0] {
            let x = euler_step(&[-1.0], &double_well(), &[0.0], dt, &[0.0]).unwrap();
            assert_eq!(x[0], -1.0);
        }
    }

    #[test]
    fn control_enters_through_sigma() {
        let x = euler_step(&[0.0], &ou(0.0, 2.0), &[1.5], 0.1, &[0.0]).unwrap();
        assert_relative_eq!(x[0], 0.1 * 2.0 * 1.5, epsilon = 1e-15);
    }

    #[test]
    fn step_rejects_bad_input() {
        let bm = SdeModel::brownian(2);
        assert!(euler_step(&[0.0; 2], &bm, &[0.0; 2], 0.0, &[0.0; 2]).is_err());
        assert!(euler_step(&[0.0; 2], &bm, &[0.0; 1], 0.1, &[0.0; 2]).is_err());
        let blow = SdeModel::new(1, 1, |_, b| b[0] = f64::INFINITY, |_, s| s[0] = 1.0);
        assert!(matches!(
            euler_step(&[0.0], &blow, &[0.0], 0.1, &[0.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn clock_coordinate_advances_exactly() {
        let model = SdeModel::new(2, 1, |_, b| b.fill(3.0), |_, s| s.fill(1.0)).with_time_augmentation();
        let stop = StopRule::horizon(20);
        let spec = SimulationSpec::new(0.05, 4, 1, InitialCondition::Fixed(vec![0.0, 0.0]));
        let batch = simulate_batch(&model, &ZeroPolicy, &stop, &spec).unwrap();
        for m in 0..4 {
            for n in 0..=20 {
                assert_relative_eq!(batch.state(m, n)[1], n as f64 * 0.05, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let stop = StopRule::new(|x| x[0] < 0.5, 50);
        let spec = SimulationSpec::new(0.01, 3, 42, InitialCondition::Fixed(vec![0.0]));
        let a = simulate_batch(&double_well(), &ZeroPolicy, &stop, &spec).unwrap();
        let b = simulate_batch(&double_well(), &ZeroPolicy, &stop, &spec).unwrap();
        assert_eq!(a.states(), b.states());
        assert_eq!(a.noises(), b.noises());
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let stop = StopRule::new(|x| x[0] < 0.0, 200);
        let spec = SimulationSpec::new(0.01, 64, 9, InitialCondition::Fixed(vec![-1.0]));
        let par = simulate_batch(&double_well(), &ZeroPolicy, &stop, &spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ser = pool.install(|| simulate_batch(&double_well(), &ZeroPolicy, &stop, &spec).unwrap());
        assert_eq!(par.states(), ser.states());
    }

    #[test]
    fn chunked_runs_reuse_streams() {
        let stop = StopRule::horizon(10);
        let mut spec = SimulationSpec::new(0.1, 6, 5, InitialCondition::Fixed(vec![0.0]));
        let whole = simulate_batch(&ou(0.0, 1.0), &ZeroPolicy, &stop, &spec).unwrap();
        spec.trajectories = 2;
        spec.first_trajectory = 4;
        let tail = simulate_batch(&ou(0.0, 1.0), &ZeroPolicy, &stop, &spec).unwrap();
        assert_eq!(whole.path(4).states, tail.path(0).states);
        assert_eq!(whole.path(5).noises, tail.path(1).noises);
    }

    #[test]
    fn immediate_exit() {
        let stop = StopRule::new(|_| false, 30);
        let spec = SimulationSpec::new(0.1, 5, 1, InitialCondition::Fixed(vec![0.3, -0.2]));
        let batch = simulate_batch(&SdeModel::brownian(2), &ZeroPolicy, &stop, &spec).unwrap();
        for m in 0..5 {
            assert_eq!(batch.exit_index(m), 0);
            assert_eq!(batch.status(m), PathStatus::Exited);
            for n in 0..=30 {
                assert_eq!(batch.state(m, n), &[0.3, -0.2]);
            }
        }
        let stats = exit_statistics(&batch);
        assert_eq!(stats.hit_fraction, 1.0);
        assert_eq!(stats.mean_exit_time, Some(0.0));
    }

    #[test]
    fn frozen_after_exit_and_euler_consistent() {
        let model = double_well();
        let stop = StopRule::new(|x| x[0] < -0.8, 400);
        let spec = SimulationSpec::new(0.01, 50, 3, InitialCondition::Fixed(vec![-1.0]));
        let batch = simulate_batch(&model, &ZeroPolicy, &stop, &spec).unwrap();
        for m in 0..batch.len() {
            let eta = batch.exit_index(m);
            for n in 0..eta {
                let next = euler_step(batch.state(m, n), &model, &[0.0], 0.01, batch.noise(m, n)).unwrap();
                assert_eq!(next.as_slice(), batch.state(m, n + 1));
            }
            for n in eta..=400 {
                assert_eq!(batch.state(m, n), batch.state(m, eta));
            }
            assert!(batch.control(m, 0).iter().all(|&u| u == 0.0));
            assert!(!batch.alive(m, eta + 1));
            assert_eq!(batch.alive(m, eta), batch.status(m) == PathStatus::Exited);
        }
    }

    #[test]
    fn brownian_exit_from_ball_mostly_but_not_all() {
        // d = 10, |x| = 1.5, a = 1, c = 2, horizon 0.5 (c^2 - |x|^2)/d
        let (a, c) = (1.0, 2.0);
        let stop = StopRule::new(
            move |x: &[f64]| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                r > a && r < c
            },
            17,
        );
        let mut x0 = vec![0.0; 10];
        x0[0] = 1.5;
        let spec = SimulationSpec::new(0.005, 2000, 11, InitialCondition::Fixed(x0));
        let batch = simulate_batch(&SdeModel::brownian(10), &ZeroPolicy, &stop, &spec).unwrap();
        let stats = exit_statistics(&batch);
        assert!(stats.hit_fraction > 0.05 && stats.hit_fraction < 1.0);
    }

    #[test]
    fn exit_statistics_without_exits() {
        let spec = SimulationSpec::new(0.1, 4, 1, InitialCondition::Fixed(vec![0.0]));
        let batch = simulate_batch(&ou(0.0, 1.0), &ZeroPolicy, &StopRule::horizon(10), &spec).unwrap();
        let stats = exit_statistics(&batch);
        assert_eq!(stats.hit_fraction, 0.0);
        assert_eq!(stats.mean_exit_time, None);
    }

    #[test]
    fn faulted_paths_are_frozen_and_flagged() {
        let model = SdeModel::new(1, 1, |x, b| b[0] = x[0] * x[0] * 1e10, |_, s| s[0] = 1.0);
        let spec = SimulationSpec::new(0.1, 4, 1, InitialCondition::Fixed(vec![1.0]));
        let batch = simulate_batch(&model, &ZeroPolicy, &StopRule::horizon(50), &spec).unwrap();
        for m in 0..4 {
            assert_eq!(batch.status(m), PathStatus::Faulted);
            let eta = batch.exit_index(m);
            assert!(batch.state(m, eta)[0].is_finite());
            assert_eq!(batch.state(m, 50), batch.state(m, eta));
        }
    }

    #[test]
    fn summaries_match_full_batch() {
        let model = double_well();
        let stop = StopRule::new(|x| x[0] < 0.0, 300);
        let pol = FnPolicy(|_: usize, x: &[f64], u: &mut [f64]| u[0] = 2.0 - x[0]);
        let spec = SimulationSpec::new(0.01, 40, 8, InitialCondition::Uniform { low: vec![-1.5], high: vec![0.0] });
        let batch = simulate_batch(&model, &pol, &stop, &spec).unwrap();
        let f = |x: &[f64]| x[0] * x[0];
        let sums = simulate_summaries(&model, &pol, &stop, &spec, Some(&f)).unwrap();
        let cost = crate::functionals::CostSpec::terminal(|_| 0.0).with_running(f);
        let w = crate::functionals::batch_work(&batch, &cost);
        let l = crate::functionals::batch_log_likelihood(&batch);
        for (m, s) in sums.iter().enumerate() {
            assert_eq!(s.exit_index, batch.exit_index(m));
            assert_eq!(s.status, batch.status(m));
            assert_eq!(s.final_state.as_slice(), batch.path(m).final_state());
            assert_eq!(s.log_likelihood, l[m]);
            assert_eq!(s.running_cost, w[m]);
        }
    }

    #[test]
    fn noise_moments() {
        let spec = SimulationSpec::new(0.01, 2000, 77, InitialCondition::Fixed(vec![0.0, 0.0]));
        let batch = simulate_batch(&SdeModel::brownian(2), &ZeroPolicy, &StopRule::horizon(50), &spec).unwrap();
        let xi = batch.noises();
        let n = xi.len() as f64;
        let mean = xi.iter().sum::<f64>() / n;
        let var = xi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 5.0 / n.sqrt());
        // standard error of the sample variance of N(0,1) is sqrt(2/n)
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt());
    }
}
