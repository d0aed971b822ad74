//! Least-squares Monte Carlo for the backward SDE
//!
//! ```text
//! Y_n = E[Y_{n+1} + dt h(X_n, Z_{n+1}, v_n) | X_n],
//! h(x, z, v) = -|z|^2 / 2 - z . v + f(x),
//! ```
//!
//! sweeping from the horizon to step 0 and projecting onto per-step Gaussian
//! bases placed on the trajectory cloud. `v_n` is the control that drove the
//! forward batch (zero for the uncontrolled process). `Z` is either the
//! gradient `sigma^T grad V_{n+1}` of the previous fit or, in implicit mode, a
//! regression of `xi_n Y_{n+1} / sqrt(dt)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::approx::{
    gaussian_centers, sigma_transpose_times, BasisSet, FeatureMap, LinearValueApprox, Placement, StepFit,
};
use crate::error::{Error, Result};
use crate::functionals::CostSpec;
use crate::linalg::LeastSquares;
use crate::rng::derive_seed;
use crate::sde::{simulate_batch, InitialCondition, PathStatus, Policy, SdeModel, SimulationSpec, StopRule, TrajectoryBatch, ZeroPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZMode {
    /// `Z_{n+1} = sigma^T grad V_{n+1}(X_{n+1})`.
    Gradient,
    /// `Z_n = E[xi_n Y_{n+1} | X_n] / sqrt(dt)` by regression.
    Implicit,
}

/// Treatment of trajectories still inside the domain at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutPolicy {
    /// Apply the terminal cost at the horizon.
    TerminalCost,
    /// Drop them from the regression, conditioning on exit before the horizon.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverMode {
    Plain,
    Drifted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmcConfig {
    pub basis_count: usize,
    pub trajectories: usize,
    pub dt: f64,
    pub n_max: usize,
    pub ridge: f64,
    pub z_mode: ZMode,
    pub iterations: usize,
    pub variance: f64,
    pub placement: Placement,
    pub feature: FeatureMap,
    pub timeout: TimeoutPolicy,
    /// Below this many active trajectories the previous fit is carried over.
    pub min_active: usize,
    pub initial: InitialCondition,
    /// Where `Y_0` is reported; defaults to the representative initial point.
    pub evaluation_point: Option<Vec<f64>>,
    /// Component-wise bound on the feedback control of iterated runs.
    pub control_clamp: Option<f64>,
}

impl LsmcConfig {
    pub fn new(initial: InitialCondition, dt: f64, n_max: usize) -> Self {
        Self {
            basis_count: 5,
            trajectories: 1000,
            dt,
            n_max,
            ridge: 1e-8,
            z_mode: ZMode::Gradient,
            iterations: 1,
            variance: 1.0,
            placement: Placement::Mean { delta: 1.0 },
            feature: FeatureMap::Identity,
            timeout: TimeoutPolicy::TerminalCost,
            min_active: 10,
            initial,
            evaluation_point: None,
            control_clamp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_count == 0 || self.basis_count > self.trajectories {
            return Err(Error::invalid(format!(
                "basis count K = {} must satisfy 1 <= K <= M = {}",
                self.basis_count, self.trajectories
            )));
        }
        if !(self.dt > 0.0) || self.n_max == 0 {
            return Err(Error::invalid("time step and step count must be positive"));
        }
        if !(self.ridge >= 0.0) || !(self.variance > 0.0) {
            return Err(Error::invalid("ridge must be non-negative and basis variance positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if let Placement::Mean { delta } = self.placement {
            if !(delta >= 0.0) {
                return Err(Error::invalid("placement spread must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn evaluation_point(&self) -> Vec<f64> {
        self.evaluation_point.clone().unwrap_or_else(|| self.initial.representative())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub active: usize,
    /// Condition number of the regression; NaN when no regression was solved.
    pub condition: f64,
    pub rank_deficient: bool,
    /// The fit was taken over from a neighbouring step.
    pub carried: bool,
}

#[derive(Debug, Clone)]
pub struct LsmcSolution {
    pub approx: LinearValueApprox,
    /// Implicit-mode coefficients of `Z_n`, `K x m` row-major per step.
    pub z_coeffs: Option<Vec<Vec<f64>>>,
    pub y0: f64,
    pub evaluation_point: Vec<f64>,
    pub driver_mode: DriverMode,
    pub diagnostics: Vec<StepDiagnostics>,
    pub timeout_fraction: f64,
    pub trajectories_used: usize,
}

impl LsmcSolution {
    pub fn n_steps(&self) -> usize {
        self.approx.n_steps()
    }

    pub fn value(&self, n: usize, x: &[f64]) -> f64 {
        self.approx.eval_value(n.min(self.n_steps() - 1), x)
    }

    /// `Z_n(x)`; the importance-sampling control is `-Z_n(x)`.
    pub fn z(&self, model: &SdeModel, n: usize, x: &[f64], out: &mut [f64]) {
        let n = n.min(self.n_steps() - 1);
        match &self.z_coeffs {
            Some(zc) => {
                let fit = self.approx.step(n);
                let mut phi = vec![0.0; fit.basis.len()];
                fit.basis.eval(x, &mut phi);
                let m = out.len();
                out.fill(0.0);
                for (k, p) in phi.iter().enumerate() {
                    for j in 0..m {
                        out[j] += p * zc[n][k * m + j];
                    }
                }
            }
            None => {
                let mut sigma = vec![0.0; model.dim() * model.noise_dim()];
                model.diffusion_at(x, &mut sigma);
                self.approx.eval_control(n, x, &sigma, out);
            }
        }
    }

    pub fn policy<'a>(&'a self, model: &'a SdeModel, clamp: Option<f64>) -> SolutionPolicy<'a> {
        SolutionPolicy {
            solution: self,
            model,
            clamp,
        }
    }

    pub fn rank_deficient_steps(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.rank_deficient).count()
    }
}

/// `u_n(x) = -Z_n(x)` from a solved sweep.
pub struct SolutionPolicy<'a> {
    solution: &'a LsmcSolution,
    model: &'a SdeModel,
    clamp: Option<f64>,
}

impl Policy for SolutionPolicy<'_> {
    fn control(&self, step: usize, x: &[f64], out: &mut [f64]) {
        self.solution.z(self.model, step, x, out);
        for u in out.iter_mut() {
            *u = -*u;
            if let Some(c) = self.clamp {
                *u = u.clamp(-c, c);
            }
        }
    }
}

/// `h(x, z, v) = -|z|^2 / 2 - z . v + f(x)`; `v = None` is the plain driver.
pub fn driver(z: &[f64], v: Option<&[f64]>, f: f64) -> f64 {
    let quad: f64 = z.iter().map(|a| a * a).sum();
    let cross: f64 = v.map_or(0.0, |v| z.iter().zip(v).map(|(a, b)| a * b).sum());
    -0.5 * quad - cross + f
}

/// `b = Y_{n+1} + dt h(X_n, Z, v)` row by row. `z` and `v` are row-major with
/// `width` entries per row.
pub fn regression_targets(y_next: &[f64], z: &[f64], v: Option<&[f64]>, f: &[f64], width: usize, dt: f64) -> Vec<f64> {
    (0..y_next.len())
        .map(|r| {
            let zr = &z[r * width..(r + 1) * width];
            let vr = v.map(|v| &v[r * width..(r + 1) * width]);
            y_next[r] + dt * driver(zr, vr, f[r])
        })
        .collect()
}

/// Regress `xi Y_{n+1} / sqrt(dt)` component-wise on the design matrix `a`.
/// Returns the `K x width` coefficients and the fitted rows.
///
/// `Y_{n+1}` is first centred by its own projection onto `a`: since
/// `E[xi c(X_n)] = 0`, this leaves the regression target's conditional mean
/// unchanged and removes most of its variance.
pub fn implicit_z(a: &DMatrix<f64>, xi: &[f64], y_next: &[f64], width: usize, dt: f64, ridge: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = a.nrows();
    Error::check_len("implicit Z values", rows, y_next.len())?;
    Error::check_len("implicit Z noises", rows * width, xi.len())?;
    let ls = LeastSquares::new(a, ridge)?;
    let k = a.ncols();
    let gamma = ls.solve(y_next)?;
    let centred: Vec<f64> = (0..rows).map(|r| y_next[r] - (0..k).map(|kk| a[(r, kk)] * gamma[kk]).sum::<f64>()).collect();
    let mut coeffs = vec![0.0; k * width];
    let mut fitted = vec![0.0; rows * width];
    let sq = dt.sqrt();
    for j in 0..width {
        let target: Vec<f64> = (0..rows).map(|r| xi[r * width + j] * centred[r] / sq).collect();
        let beta = ls.solve(&target)?;
        for kk in 0..k {
            coeffs[kk * width + j] = beta[kk];
        }
        for r in 0..rows {
            fitted[r * width + j] = (0..k).map(|kk| a[(r, kk)] * beta[kk]).sum();
        }
    }
    Ok((coeffs, fitted))
}

#[derive(Debug, Clone)]
struct Fit {
    value: StepFit,
    z: Option<Vec<f64>>,
}

fn design_matrix(basis: &BasisSet, rows: &[&[f64]]) -> DMatrix<f64> {
    let k = basis.len();
    let mut a = DMatrix::zeros(rows.len(), k);
    let mut phi = vec![0.0; k];
    for (r, x) in rows.iter().enumerate() {
        basis.eval(x, &mut phi);
        for kk in 0..k {
            a[(r, kk)] = phi[kk];
        }
    }
    a
}

fn included(batch: &TrajectoryBatch, m: usize, timeout: TimeoutPolicy) -> bool {
    match batch.status(m) {
        PathStatus::Exited => true,
        PathStatus::TimedOut => timeout == TimeoutPolicy::TerminalCost,
        PathStatus::Faulted => false,
    }
}

/// One backward regression sweep over a simulated batch.
pub fn backward_sweep(batch: &TrajectoryBatch, model: &SdeModel, cost: &CostSpec, config: &LsmcConfig) -> Result<LsmcSolution> {
    config.validate()?;
    Error::check_len("batch state", model.dim(), batch.dim())?;
    let (n_max, dt, d, w) = (batch.n_max(), batch.dt(), batch.dim(), batch.noise_dim());
    let k = config.basis_count;
    let keep: Vec<usize> = (0..batch.len()).filter(|&m| included(batch, m, config.timeout)).collect();
    if keep.is_empty() {
        return Err(Error::Numerical("no usable trajectories (all faulted or discarded)".into()));
    }
    let min_active = config.min_active.max(1);
    let driver_mode = if batch.is_controlled() { DriverMode::Drifted } else { DriverMode::Plain };

    let sigma_t_grad = |x: &[f64], grad: &[f64], out: &mut [f64]| {
        let mut sigma = vec![0.0; d * w];
        model.diffusion_at(x, &mut sigma);
        sigma_transpose_times(&sigma, grad, out);
    };
    let terminal = |x: &[f64], z: &mut [f64]| {
        let mut grad = vec![0.0; d];
        cost.terminal_gradient(x, &mut grad);
        sigma_t_grad(x, &grad, z);
        cost.terminal_value(x)
    };

    // y[m], z[m] hold (Y, Z) at step n + 1 for trajectories active at n
    let mut y = vec![0.0; batch.len()];
    let mut z = vec![0.0; batch.len() * w];
    let mut fits: Vec<Option<Fit>> = vec![None; n_max + 1];
    let mut diagnostics = Vec::with_capacity(n_max + 1);

    let solve_step = |basis: BasisSet, rows: &[&[f64]], b: &[f64]| -> Result<(StepFit, f64, bool, DMatrix<f64>)> {
        let a = design_matrix(&basis, rows);
        let ls = LeastSquares::new(&a, config.ridge)?;
        let alpha = ls.solve(b)?;
        Ok((StepFit::new(basis, alpha)?, ls.condition_number(), ls.is_rank_deficient(), a))
    };

    // projection of g at the horizon
    {
        let at_horizon: Vec<usize> = keep.iter().copied().filter(|&m| batch.exit_index(m) == n_max).collect();
        let mut diag = StepDiagnostics {
            step: n_max,
            active: at_horizon.len(),
            condition: f64::NAN,
            rank_deficient: false,
            carried: true,
        };
        if at_horizon.len() >= min_active {
            let rows: Vec<&[f64]> = at_horizon.iter().map(|&m| batch.state(m, n_max)).collect();
            let basis = place_basis(&rows, d, config)?;
            let g: Vec<f64> = rows.iter().map(|x| cost.terminal_value(x)).collect();
            let (fit, cond, rd, _) = solve_step(basis, &rows, &g)?;
            diag = StepDiagnostics { condition: cond, rank_deficient: rd, carried: false, ..diag };
            fits[n_max] = Some(Fit { value: fit, z: None });
        }
        diagnostics.push(diag);
    }

    let mut previous: Option<Fit> = None;
    for n in (0..n_max).rev() {
        let act: Vec<usize> = keep.iter().copied().filter(|&m| n < batch.exit_index(m)).collect();
        if act.is_empty() {
            diagnostics.push(StepDiagnostics { step: n, active: 0, condition: f64::NAN, rank_deficient: false, carried: true });
            fits[n] = previous.clone();
            continue;
        }
        for &m in &act {
            if batch.exit_index(m) == n + 1 {
                y[m] = terminal(batch.state(m, n + 1), &mut z[m * w..(m + 1) * w]);
            }
        }
        let rows: Vec<&[f64]> = act.iter().map(|&m| batch.state(m, n)).collect();
        let y_next: Vec<f64> = act.iter().map(|&m| y[m]).collect();
        let f: Vec<f64> = rows.iter().map(|x| cost.running(x)).collect();
        let v: Vec<f64> = act.iter().flat_map(|&m| batch.control(m, n).iter().copied()).collect();
        let v = (driver_mode == DriverMode::Drifted).then_some(v.as_slice());

        let enough = act.len() >= min_active.max(if config.z_mode == ZMode::Implicit { k } else { 1 });
        let mut diag = StepDiagnostics { step: n, active: act.len(), condition: f64::NAN, rank_deficient: false, carried: !enough };

        let fit = if enough {
            let basis = place_basis(&rows, d, config)?;
            let a = design_matrix(&basis, &rows);
            let z_rows = match config.z_mode {
                ZMode::Gradient => {
                    let z_rows: Vec<f64> = act.iter().flat_map(|&m| z[m * w..(m + 1) * w].iter().copied()).collect();
                    (z_rows, None)
                }
                ZMode::Implicit => {
                    let xi: Vec<f64> = act.iter().flat_map(|&m| batch.noise(m, n).iter().copied()).collect();
                    let (coeffs, fitted) = implicit_z(&a, &xi, &y_next, w, dt, config.ridge)?;
                    (fitted, Some(coeffs))
                }
            };
            let b = regression_targets(&y_next, &z_rows.0, v, &f, w, dt);
            let ls = LeastSquares::new(&a, config.ridge)?;
            let alpha = ls.solve(&b)?;
            diag.condition = ls.condition_number();
            diag.rank_deficient = ls.is_rank_deficient();
            Fit { value: StepFit::new(basis, alpha)?, z: z_rows.1 }
        } else if let Some(prev) = &previous {
            prev.clone()
        } else {
            // nothing to regress on and nothing later to fall back to
            let z_rows: Vec<f64> = act.iter().flat_map(|&m| z[m * w..(m + 1) * w].iter().copied()).collect();
            let b = regression_targets(&y_next, &z_rows, v, &f, w, dt);
            let mean = b.iter().sum::<f64>() / b.len() as f64;
            let zc = (config.z_mode == ZMode::Implicit).then(|| vec![0.0; w]);
            Fit { value: StepFit::new(BasisSet::constant(d), vec![mean])?, z: zc }
        };

        let updates: Vec<(f64, Vec<f64>)> = act
            .par_iter()
            .map(|&m| {
                let x = batch.state(m, n);
                let mut grad = vec![0.0; d];
                let val = fit.value.value_and_gradient(x, &mut grad);
                let mut zz = vec![0.0; w];
                sigma_t_grad(x, &grad, &mut zz);
                (val, zz)
            })
            .collect();
        for (&m, (val, zz)) in act.iter().zip(updates) {
            y[m] = val;
            z[m * w..(m + 1) * w].copy_from_slice(&zz);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value estimate at step {n}")));
        }
        diagnostics.push(diag);
        fits[n] = Some(fit.clone());
        previous = Some(fit);
    }
    diagnostics.reverse();

    // steps without data borrow the nearest earlier fit, else the nearest later one
    let mut last: Option<Fit> = None;
    for slot in fits.iter_mut() {
        match slot {
            Some(f) => last = Some(f.clone()),
            None => *slot = last.clone(),
        }
    }
    let mut next: Option<Fit> = None;
    for slot in fits.iter_mut().rev() {
        match slot {
            Some(f) => next = Some(f.clone()),
            None => *slot = next.clone(),
        }
    }
    let fits: Vec<Fit> = match fits.into_iter().collect::<Option<Vec<_>>>() {
        Some(f) => f,
        None => {
            // every kept trajectory stopped at step 0
            let mean = keep.iter().map(|&m| cost.terminal_value(batch.state(m, 0))).sum::<f64>() / keep.len() as f64;
            let fit = Fit { value: StepFit::new(BasisSet::constant(d), vec![mean])?, z: None };
            vec![fit; n_max + 1]
        }
    };
    let z_coeffs = if config.z_mode == ZMode::Implicit {
        Some(fits.iter().map(|f| f.z.clone().unwrap_or_else(|| vec![0.0; f.value.basis.len() * w])).collect())
    } else {
        None
    };
    let approx = LinearValueApprox::new(fits.into_iter().map(|f| f.value).collect())?;
    let evaluation_point = config.evaluation_point();
    Error::check_len("evaluation point", d, evaluation_point.len())?;
    let y0 = approx.eval_value(0, &evaluation_point);
    let rd = diagnostics.iter().filter(|d| d.rank_deficient).count();
    if rd > 0 {
        log::debug!("{rd} of {} regressions were rank deficient", n_max + 1);
    }
    Ok(LsmcSolution {
        approx,
        z_coeffs,
        y0,
        evaluation_point,
        driver_mode,
        diagnostics,
        timeout_fraction: batch.timeout_fraction(),
        trajectories_used: keep.len(),
    })
}

fn features(x: &[f64], feature: FeatureMap) -> Vec<f64> {
    let mut y = vec![0.0; feature.feature_dim(x.len())];
    feature.apply(x, &mut y);
    y
}

/// Gaussian basis placed on the states of the trajectories entering the regression.
fn place_basis(rows: &[&[f64]], dim: usize, config: &LsmcConfig) -> Result<BasisSet> {
    let points: Vec<Vec<f64>> = rows.iter().map(|x| features(x, config.feature)).collect();
    let centers = gaussian_centers(&points, config.basis_count, config.placement)?;
    BasisSet::gaussian(centers, config.variance, config.feature, dim)
}

#[derive(Debug, Clone)]
pub struct LsmcRun {
    pub solutions: Vec<LsmcSolution>,
    /// Set when the run stopped early because `Y_0` blew up.
    pub diverged: bool,
}

impl LsmcRun {
    pub fn last(&self) -> &LsmcSolution {
        self.solutions.last().expect("a run holds at least one solution")
    }

    pub fn y0_history(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.y0).collect()
    }
}

/// Iterated LSMC: iteration `i + 1` simulates under `u = -Z` from iteration
/// `i` and regresses with the drifted driver.
pub fn iterate_lsmc(model: &SdeModel, stop: &StopRule, cost: &CostSpec, config: &LsmcConfig, seed: u64) -> Result<LsmcRun> {
    config.validate()?;
    if stop.n_max() != config.n_max {
        return Err(Error::invalid("stop rule and configuration disagree on the step count"));
    }
    let mut solutions: Vec<LsmcSolution> = Vec::with_capacity(config.iterations);
    let mut diverged = false;
    for it in 0..config.iterations {
        let spec = SimulationSpec::new(config.dt, config.trajectories, derive_seed(seed, it as u64), config.initial.clone());
        let batch = match solutions.last() {
            None => simulate_batch(model, &ZeroPolicy, stop, &spec)?,
            Some(prev) => simulate_batch(model, &prev.policy(model, config.control_clamp), stop, &spec)?,
        };
        let sol = match backward_sweep(&batch, model, cost, config) {
            Ok(s) => s,
            Err(e @ Error::Numerical(_)) if !solutions.is_empty() => {
                log::warn!("iteration {} failed ({e}); keeping earlier iterations", it + 1);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        log::info!("LSMC iteration {}: Y_0 = {:.6e}", it + 1, sol.y0);
        if let Some(prev) = solutions.last() {
            if !sol.y0.is_finite() || sol.y0.abs() > 10.0 * prev.y0.abs().max(1.0) {
                log::warn!("Y_0 diverged at iteration {} ({} -> {})", it + 1, prev.y0, sol.y0);
                diverged = true;
                break;
            }
        } else if !sol.y0.is_finite() {
            return Err(Error::Numerical("non-finite Y_0 in the first iteration".into()));
        }
        solutions.push(sol);
    }
    Ok(LsmcRun { solutions, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn driver_examples() {
        assert_eq!(driver(&[0.0], None, 0.0), 0.0);
        let b = regression_targets(&[2.0], &[1.0], None, &[0.0], 1, 0.01);
        assert_relative_eq!(b[0], 1.995, epsilon = 1e-15);
        let b = regression_targets(&[3.0], &[0.0], None, &[0.0], 1, 0.1);
        assert_eq!(b[0], 3.0);
        // v = -z turns the quadratic term positive
        let z = [0.7, -0.2];
        let v = [-0.7, 0.2];
        let b = regression_targets(&[1.0], &z, Some(&v), &[0.3], 2, 0.1);
        assert_relative_eq!(b[0], 1.0 + 0.1 * (0.5 * 0.53 + 0.3), epsilon = 1e-15);
    }

    #[test]
    fn plain_driver_is_drifted_driver_at_zero_bitwise() {
        for z in [[0.3, -1.7], [1e-3, 4.0], [-2.5, 0.0]] {
            for f in [0.0, 1.25, -0.1] {
                assert_eq!(driver(&z, None, f).to_bits(), driver(&z, Some(&[0.0, 0.0]), f).to_bits());
            }
        }
    }

    #[test]
    fn implicit_z_examples() {
        let rows = 4000;
        let a = DMatrix::from_element(rows, 1, 1.0);
        let mut rng = crate::rng::trajectory_stream(1, 0);
        let mut xi = vec![0.0; rows];
        crate::rng::fill_standard_normal(&mut rng, &mut xi);
        let dt: f64 = 0.01;
        let (c, _) = implicit_z(&a, &xi, &vec![3.0; rows], 1, dt, 0.0).unwrap();
        // a constant is its own projection, so nothing is left to correlate with xi
        assert!(c[0].abs() < 1e-10);
        let y: Vec<f64> = xi.iter().map(|x| dt.sqrt() * x).collect();
        let (c, _) = implicit_z(&a, &xi, &y, 1, dt, 0.0).unwrap();
        assert!((c[0] - 1.0).abs() < 4.0 * (2.0 / rows as f64).sqrt());
    }

    #[test]
    fn config_validation() {
        let mut c = LsmcConfig::new(InitialCondition::Fixed(vec![0.0]), 0.01, 10);
        assert!(c.validate().is_ok());
        c.basis_count = 10;
        c.trajectories = 5;
        assert!(c.validate().is_err());
    }
}
