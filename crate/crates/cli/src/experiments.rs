//! One function per experiment. Each writes its artifacts into the output
//! directory and returns the estimate table and the self-checks.

use std::fs::File;
use std::path::Path;

use fbis_core::approx::write_param_csv;
use fbis_core::estimators::{direct_free_energy, is_mgf_estimate, naive_mc};
use fbis_core::lsmc::{iterate_lsmc, LsmcRun};
use fbis_core::problems::{self, Problem, PolynomialLangevin};
use fbis_core::reference::committor::committor_value;
use fbis_core::reference::double_well::{self, pde_reference, DoubleWellSpec, PdeGrid};
use fbis_core::reference::ou::{ou_optimal_control, ou_value};
use fbis_core::reference::{finite_dim_girsanov_check, CommittorSpec, OuSpec};
use fbis_core::rng::derive_seed;
use fbis_core::sde::{simulate_summaries, PathSummary, Policy};
use fbis_core::shooting::{self, ShootingPolicy, ShootingState};
use fbis_core::{FeatureMap, InitialCondition, LsmcConfig, PathStatus, Placement, ShootingConfig, SimulationSpec, TimeoutPolicy, ZMode, ZParametrisation, ZeroPolicy};
use fbis_core::optim::LearningRate;

use crate::config::{ExperimentConfig, LsmcSettings};
use crate::error::RunError;
use crate::output::{self, Check, Row, CONTROL_HEADER, COMMITTOR_HEADER, ITERATIONS_HEADER, LOSS_HEADER, TILTED_HEADER};

pub struct Outcome {
    pub title: String,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Artifact files written, relative to the output directory.
    pub files: Vec<String>,
}

impl Outcome {
    fn new(title: impl Into<String>) -> Self {
        Outcome { title: title.into(), rows: Vec::new(), checks: Vec::new(), files: Vec::new() }
    }

    fn table(&mut self, dir: &Path, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), RunError> {
        output::write_table(&dir.join(name), header, rows)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Sample count of the importance-sampling evaluation on the OU examples.
const OU_EVALUATION_PATHS: usize = 2000;

fn lsmc_config(s: &LsmcSettings, initial: InitialCondition, n_max: usize) -> LsmcConfig {
    let mut c = LsmcConfig::new(initial, s.dt, n_max);
    c.basis_count = s.basis_count;
    c.trajectories = s.trajectories;
    c.variance = s.basis_width * s.basis_width;
    c.placement = Placement::Mean { delta: s.delta };
    c.ridge = s.ridge;
    c.z_mode = if s.z_mode == "implicit" { ZMode::Implicit } else { ZMode::Gradient };
    c.iterations = s.iterations;
    c.feature = if s.feature == "radius" { FeatureMap::Radius } else { FeatureMap::Identity };
    c.timeout = if s.timeout == "discard" { TimeoutPolicy::Discard } else { TimeoutPolicy::TerminalCost };
    c.min_active = s.min_active;
    c.control_clamp = (s.control_clamp > 0.0).then_some(s.control_clamp);
    c
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
}

fn write_lsmc_run(out: &mut Outcome, dir: &Path, run: &LsmcRun) -> Result<(), RunError> {
    run.last().approx.write_csv(File::create(dir.join("solution.csv"))?)?;
    out.files.push("solution.csv".into());
    let rows: Vec<Vec<f64>> = run.solutions.iter().enumerate().map(|(i, s)| vec![(i + 1) as f64, s.y0, s.timeout_fraction]).collect();
    out.table(dir, "lsmc_iterations.csv", &ITERATIONS_HEADER, &rows)?;
    out.checks.push(Check::new("lsmc_stable", !run.diverged, format!("{} iteration(s) kept, diverged={}", run.solutions.len(), run.diverged)));
    Ok(())
}

/// `F_hat` and `F_tilde` from paths simulated under `policy`.
fn free_energy_rows(p: &Problem, policy: &dyn Policy, x0: f64, n: usize, seed: u64) -> Result<Vec<Row>, RunError> {
    let spec = SimulationSpec::new(p.dt, n, seed, InitialCondition::Fixed(vec![x0]));
    let paths = simulate_summaries(&p.model, policy, &p.stop, &spec, None)?;
    let w: Vec<f64> = paths.iter().map(|s| p.cost.terminal_value(&s.final_state)).collect();
    let l: Vec<f64> = paths.iter().map(|s| s.log_likelihood).collect();
    let (_, f_hat) = is_mgf_estimate(&w, &l)?;
    let f_tilde = direct_free_energy(&w, &l)?;
    Ok(vec![Row::from_report("F_hat (IS)", &f_hat), Row::from_report("F_tilde (IS)", &f_tilde)])
}

pub fn committor(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let s = cfg.committor.as_ref().expect("validated");
    let l = cfg.lsmc();
    let spec = CommittorSpec::new(s.d, s.a, s.c, s.eps)?;
    let horizon = if s.horizon > 0.0 { s.horizon } else { spec.horizon_rule(s.r) };
    let p = problems::committor(&spec, horizon, l.dt)?;
    let config = lsmc_config(l, problems::committor_start(&spec, s.r), p.stop.n_max());
    let run = iterate_lsmc(&p.model, &p.stop, &p.cost, &config, cfg.seed)?;
    let mut out = Outcome::new(format!("committor, d = {}, a = {}, c = {}, r = {}, eps = {:e}", s.d, s.a, s.c, s.r, s.eps));
    write_lsmc_run(&mut out, dir, &run)?;

    let sol = run.last();
    let estimate = (-sol.y0).exp() - s.eps;
    let analytic = committor_value(s.r, &spec)?;
    out.rows.push(Row::value("LSMC value", sol.y0));
    out.rows.push(Row::value("analytic value", -(analytic + s.eps).ln()));
    out.rows.push(Row::value("LSMC committor", estimate));
    out.rows.push(Row::value("analytic committor", analytic));
    let err = relative(estimate, analytic);
    out.checks.push(Check::new("committor", err < s.tolerance, format!("relative error {err:.3e} (tolerance {:e})", s.tolerance)));
    out.checks.push(Check::new("timeouts", true, format!("timed-out fraction {:.3} at horizon {horizon:e}", sol.timeout_fraction)));

    let rows: Vec<Vec<f64>> = grid(s.a, s.c, s.plot_points)
        .map(|r| {
            let mut x = vec![0.0; s.d];
            x[0] = r;
            let v = sol.value(0, &x);
            let h = committor_value(r, &spec).unwrap_or(f64::NAN);
            vec![r, v, -(h + s.eps).ln(), (-v).exp() - s.eps, h]
        })
        .collect();
    out.table(dir, "committor.csv", &COMMITTOR_HEADER, &rows)?;
    Ok(out)
}

fn ou_spec(cfg: &ExperimentConfig) -> OuSpec {
    let o = cfg.ou.as_ref().expect("validated");
    OuSpec::new(o.alpha, o.mu, o.sigma, o.t_end)
}

/// Learned `Z` against `u*` on a grid of times and states.
fn control_rows(ou: &OuSpec, points: usize, z: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for t in grid(0.0, ou.t_end, 5) {
        for x in grid(-2.0, 2.0, points) {
            rows.push(vec![t, x, z(t, x), ou_optimal_control(x, t, ou)]);
        }
    }
    rows
}

pub fn ou_shooting(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let o = cfg.ou.as_ref().expect("validated");
    let s = cfg.shooting.as_ref().expect("validated");
    let ou = ou_spec(cfg);
    let p = problems::ou(&ou, s.dt)?;
    let mut config = ShootingConfig::new(InitialCondition::Fixed(vec![o.x0]), s.dt, p.stop.n_max());
    config.batch_size = s.batch_size;
    config.learning_rate = LearningRate::Constant(s.learning_rate);
    config.max_gradient_steps = s.max_gradient_steps;
    config.controlled_forward = s.controlled_forward;
    config.z_parametrisation = ZParametrisation::Mlp { hidden: s.hidden };
    config.theta_y_init = s.theta_y_init;
    let state = shooting::train(&p.model, &p.cost, &config, cfg.seed)?;

    let mut out = Outcome::new(format!("OU shooting, alpha = {}, mu = {}, sigma = {:.6}, T = {}", ou.alpha, ou.mu, ou.sigma, ou.t_end));
    let losses: Vec<Vec<f64>> = state.loss_history.iter().enumerate().map(|(i, &l)| vec![i as f64, l]).collect();
    out.table(dir, "loss_history.csv", &LOSS_HEADER, &losses)?;
    write_shooting_params(&state, &dir.join("shooting_params.csv"))?;
    out.files.push("shooting_params.csv".into());
    out.table(dir, "control.csv", &CONTROL_HEADER, &control_rows(&ou, o.plot_points, |t, x| {
        let mut z = [0.0];
        state.z(state.step_for_time(t), &[x], &mut z);
        z[0]
    }))?;

    let exact = ou_value(o.x0, 0.0, &ou);
    out.rows.push(Row::value("theta_Y", state.theta_y()));
    out.rows.push(Row::value("analytic value", exact));
    out.rows.extend(free_energy_rows(&p, &ShootingPolicy(&state), o.x0, OU_EVALUATION_PATHS, derive_seed(cfg.seed, 1))?);

    let last = state.final_loss().unwrap_or(f64::INFINITY);
    out.checks.push(Check::new("training_stable", !state.diverged, format!("{} gradient steps", state.loss_history.len())));
    out.checks.push(Check::new("final_loss", last < s.loss_tolerance, format!("last minibatch loss {last:.3e} (tolerance {:e})", s.loss_tolerance)));
    let err = relative(state.theta_y(), exact);
    out.checks.push(Check::new(
        "initial_value",
        err < o.tolerance,
        format!("theta_Y {:.6} vs V(x0, 0) {exact:.6}, relative error {err:.3e} (tolerance {:e})", state.theta_y(), o.tolerance),
    ));
    Ok(out)
}

fn write_shooting_params(state: &ShootingState, path: &Path) -> Result<(), RunError> {
    let rows = std::iter::once((None, 0, state.theta_y())).chain((0..state.n_steps).flat_map(|n| state.block(n).iter().enumerate().map(move |(i, &v)| (Some(n), i, v))));
    write_param_csv(File::create(path)?, rows)?;
    Ok(())
}

pub fn ou_lsmc(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let o = cfg.ou.as_ref().expect("validated");
    let l = cfg.lsmc();
    let ou = ou_spec(cfg);
    let p = problems::ou(&ou, l.dt)?;
    let mut config = lsmc_config(l, InitialCondition::Uniform { low: vec![o.low], high: vec![o.high] }, p.stop.n_max());
    config.evaluation_point = Some(vec![o.x0]);
    let run = iterate_lsmc(&p.model, &p.stop, &p.cost, &config, cfg.seed)?;
    let mut out = Outcome::new(format!("OU by LSMC, alpha = {}, mu = {}, sigma = {:.6}, T = {}", ou.alpha, ou.mu, ou.sigma, ou.t_end));
    write_lsmc_run(&mut out, dir, &run)?;
    let sol = run.last();
    out.table(dir, "control.csv", &CONTROL_HEADER, &control_rows(&ou, o.plot_points, |t, x| {
        let mut z = [0.0];
        sol.z(&p.model, ((t / l.dt).round() as usize).min(sol.n_steps() - 1), &[x], &mut z);
        z[0]
    }))?;
    let exact = ou_value(o.x0, 0.0, &ou);
    out.rows.push(Row::value("LSMC value", sol.y0));
    out.rows.push(Row::value("analytic value", exact));
    out.rows.extend(free_energy_rows(&p, &sol.policy(&p.model, config.control_clamp), o.x0, OU_EVALUATION_PATHS, derive_seed(cfg.seed, 1000))?);
    let err = relative(sol.y0, exact);
    out.checks.push(Check::new("initial_value", err < o.tolerance, format!("relative error {err:.3e} (tolerance {:e})", o.tolerance)));
    Ok(out)
}

struct RareEventRows {
    mc: Row,
    is: Row,
}

/// Naive Monte Carlo and importance sampling of the hitting probability from `x0`.
fn rare_event_estimates(p: &Problem, policy: &dyn Policy, x0: f64, mc_n: usize, is_n: usize, seed: u64) -> Result<RareEventRows, RunError> {
    let start = InitialCondition::Fixed(vec![x0]);
    let hit = |s: &PathSummary| s.status == PathStatus::Exited;
    let mc = simulate_summaries(&p.model, &ZeroPolicy, &p.stop, &SimulationSpec::new(p.dt, mc_n, derive_seed(seed, 2000), start.clone()), None)?;
    let mc_report = naive_mc(&mc.iter().map(hit).collect::<Vec<_>>())?;
    let is = simulate_summaries(&p.model, policy, &p.stop, &SimulationSpec::new(p.dt, is_n, derive_seed(seed, 2001), start), None)?;
    // exact indicator: paths that miss the target carry zero weight
    let w: Vec<f64> = is.iter().map(|s| if hit(s) { 0.0 } else { f64::INFINITY }).collect();
    let l: Vec<f64> = is.iter().map(|s| s.log_likelihood).collect();
    let (is_report, _) = is_mgf_estimate(&w, &l)?;
    let is_hits = is.iter().filter(|s| hit(s)).count() as f64 / is_n as f64;
    Ok(RareEventRows { mc: Row::from_report("MC", &mc_report), is: Row::from_report("IS", &is_report.with_hit_fraction(is_hits)) })
}

pub fn doublewell(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let w = cfg.doublewell.as_ref().expect("validated");
    let l = cfg.lsmc();
    let spec = DoubleWellSpec::new(w.sigma, w.t_end, w.eps);
    let p = problems::double_well(&spec, l.dt)?;
    let mut config = lsmc_config(l, InitialCondition::Uniform { low: vec![w.low], high: vec![w.high] }, p.stop.n_max());
    config.evaluation_point = Some(vec![w.x0]);
    let run = iterate_lsmc(&p.model, &p.stop, &p.cost, &config, cfg.seed)?;
    let mut out = Outcome::new(format!("double well, sigma = {}, T = {}, eps = {:e}, x0 = {}", w.sigma, w.t_end, w.eps, w.x0));
    write_lsmc_run(&mut out, dir, &run)?;
    let sol = run.last();

    let est = rare_event_estimates(&p, &sol.policy(&p.model, config.control_clamp), w.x0, w.mc_trajectories, w.is_trajectories, cfg.seed)?;
    let pde = pde_reference(&spec, PdeGrid::new(w.pde_nx, w.pde_nt))?;
    let reference = pde.psi_at(w.x0, 0.0);
    let ratio = est.is.estimate / reference;
    let is_hits = est.is.hit_fraction.unwrap_or(0.0);
    out.checks.push(Check::new("is_vs_reference", (0.5..=2.0).contains(&ratio), format!("IS {:.4e} / reference {reference:.4e} = {ratio:.3} (within [0.5, 2])", est.is.estimate)));
    out.checks.push(Check::new("is_hit_fraction", is_hits > 0.5, format!("{:.2} % of controlled paths hit (> 50 %)", 100.0 * is_hits)));
    out.rows.push(est.mc);
    out.rows.push(est.is);

    let rows: Vec<Vec<f64>> = grid(w.low, w.high, w.plot_points)
        .map(|x| vec![x, double_well::potential(x), pde.tilted_potential_at(x, 0.0), double_well::potential(x) + w.sigma * w.sigma * sol.value(0, &[x])])
        .collect();
    out.table(dir, "tilted_potential.csv", &TILTED_HEADER, &rows)?;
    out.title.push_str(&format!("\nPDE reference psi(x0, 0) = {reference:.4e}"));
    Ok(out)
}

pub fn girsanov_check(cfg: &ExperimentConfig, _dir: &Path) -> Result<Outcome, RunError> {
    let g = cfg.girsanov.as_ref().expect("validated");
    let f: fn(f64) -> f64 = match g.function.as_str() {
        "exp" => f64::exp,
        "cos" => f64::cos,
        "square" => |s| s * s,
        _ => |s| s,
    };
    let c = finite_dim_girsanov_check(&g.b, &g.sigma, &g.u, |x| f(x.iter().sum()), g.samples, cfg.seed)?;
    let mut out = Outcome::new(format!("finite-dimensional Girsanov identity, f = {} of the component sum", g.function));
    out.rows.push(Row { standard_error: Some(c.standard_error), n: Some(g.samples), ..Row::value("E[f(b + sigma B)]", c.lhs) });
    out.rows.push(Row { n: Some(g.samples), ..Row::value("reweighted", c.rhs) });
    out.rows.push(Row { standard_error: Some(c.standard_error), n: Some(g.samples), ..Row::value("difference", c.lhs - c.rhs) });
    let zero_shift = g.u.iter().all(|&u| u == 0.0);
    if zero_shift {
        let exact = c.lhs == c.rhs;
        out.checks.push(Check::new("zero_shift_exact", exact, format!("difference {:e} (must be exactly 0)", c.lhs - c.rhs)));
    } else {
        out.checks.push(Check::new("paired_difference", c.z_score.abs() < g.z_limit, format!("z = {:.3} (|z| < {})", c.z_score, g.z_limit)));
    }
    Ok(out)
}

pub fn custom(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let c = cfg.custom.as_ref().expect("validated");
    let l = cfg.lsmc();
    let model = PolynomialLangevin { coeffs: c.coeffs.clone(), sigma: c.sigma, threshold: c.threshold, t_end: c.t_end, eps: c.eps };
    let p = model.problem(l.dt)?;
    let mut config = lsmc_config(l, InitialCondition::Uniform { low: vec![c.low], high: vec![c.high] }, p.stop.n_max());
    config.evaluation_point = Some(vec![c.x0]);
    let run = iterate_lsmc(&p.model, &p.stop, &p.cost, &config, cfg.seed)?;
    let mut out = Outcome::new(format!("polynomial potential {:?}, sigma = {}, threshold = {}, T = {}", c.coeffs, c.sigma, c.threshold, c.t_end));
    write_lsmc_run(&mut out, dir, &run)?;
    let sol = run.last();
    let est = rare_event_estimates(&p, &sol.policy(&p.model, config.control_clamp), c.x0, c.mc_trajectories, c.is_trajectories, cfg.seed)?;
    let ok = est.is.estimate.is_finite() && est.is.estimate > 0.0;
    out.checks.push(Check::new("is_estimate", ok, format!("IS estimate {:.4e}", est.is.estimate)));
    out.rows.push(est.mc);
    out.rows.push(est.is);
    let rows: Vec<Vec<f64>> = grid(c.low, c.high, 61)
        .map(|x| vec![x, model.potential(x), f64::NAN, model.potential(x) + c.sigma * c.sigma * sol.value(0, &[x])])
        .collect();
    out.table(dir, "tilted_potential.csv", &TILTED_HEADER, &rows)?;
    Ok(out)
}
