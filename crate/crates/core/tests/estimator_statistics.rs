//! Statistical behaviour of the estimators on problems with known answers.

use fbis_core::estimators::{control_variate_identity, direct_free_energy, general_estimators, is_mgf_estimate, naive_mc, sample_std};
use fbis_core::functionals::{batch_log_likelihood, batch_work, control_inner_product, girsanov_log_likelihood};
use fbis_core::problems;
use fbis_core::reference::committor::{annulus_stop, committor_derivative, committor_free_energy, committor_value};
use fbis_core::reference::double_well::{pde_reference, DoubleWellSpec, PdeGrid};
use fbis_core::reference::ou::{ou_value, ou_z};
use fbis_core::reference::{CommittorSpec, OuSpec};
use fbis_core::sde::{simulate_batch, simulate_summaries, FnPolicy};
use fbis_core::{InitialCondition, PathStatus, SdeModel, SimulationSpec, ZeroPolicy};

fn ou_spec() -> OuSpec {
    OuSpec::new(1.0, 0.0, 1.0, 1.0)
}

/// `-log E[exp(-alpha X_N)]` for the Euler chain from 0 with zero control.
fn euler_ou_free_energy(ou: &OuSpec, dt: f64, n: usize) -> f64 {
    let var: f64 = ou.sigma * ou.sigma * dt * (0..n).map(|k| (1.0 - dt).powi(2 * k as i32)).sum::<f64>();
    -0.5 * ou.alpha * ou.alpha * var
}

#[test]
fn plain_monte_carlo_matches_the_closed_form() {
    let ou = ou_spec();
    let dt = 1e-3;
    let p = problems::ou(&ou, dt).unwrap();
    let spec = SimulationSpec::new(dt, 20_000, 1, InitialCondition::Fixed(vec![0.0]));
    let s = simulate_summaries(&p.model, &ZeroPolicy, &p.stop, &spec, None).unwrap();
    let w: Vec<f64> = s.iter().map(|s| p.cost.terminal_value(&s.final_state)).collect();
    let (psi, f) = is_mgf_estimate(&w, &vec![0.0; w.len()]).unwrap();
    let exact = ou_value(0.0, 0.0, &ou);
    let euler = euler_ou_free_energy(&ou, dt, p.stop.n_max());
    assert!((euler - exact).abs() < 1e-3);
    assert!((psi.estimate - (-exact).exp()).abs() < 3.0 * psi.standard_error(), "{psi:?} vs {}", (-exact).exp());
    assert!((f.estimate - euler).abs() < 3.0 * f.standard_error());
}

/// `W^v`, `L^H` with `H = Z*` and `<v, Z*>` under the constant control `v`.
fn ou_general_samples(ou: &OuSpec, dt: f64, v: f64, paths: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = problems::ou(ou, dt).unwrap();
    let n = p.stop.n_max();
    let spec = SimulationSpec::new(dt, paths, seed, InitialCondition::Fixed(vec![0.0]));
    let batch = simulate_batch(&p.model, &FnPolicy(move |_, _: &[f64], u: &mut [f64]| u[0] = v), &p.stop, &spec).unwrap();
    let z: Vec<f64> = (0..n).map(|k| ou_z(0.0, k as f64 * dt, ou)).collect();
    let vs = vec![v; n];
    let w = batch_work(&batch, &p.cost);
    let lh = batch.paths().map(|path| girsanov_log_likelihood(&z, path.noises, 1, n, dt)).collect();
    let inner = (0..batch.len()).map(|_| control_inner_product(&vs, &z, 1, n, dt)).collect();
    (w, lh, inner)
}

#[test]
fn general_estimators_recover_the_free_energy_for_any_drift() {
    let ou = ou_spec();
    let exact = ou_value(0.0, 0.0, &ou);
    for v in [-1.0, 0.0, 1.0] {
        let (w, lh, inner) = ou_general_samples(&ou, 0.01, v, 2000, 40);
        let (g_hat, g_tilde) = general_estimators(&w, &lh, &inner).unwrap();
        assert!((g_hat.estimate - exact).abs() < 0.01, "v={v}: {g_hat:?}");
        assert!((g_tilde.estimate - exact).abs() < 0.01, "v={v}: {g_tilde:?}");
        // the exponent only carries discretisation error
        assert!(g_tilde.sample_variance.sqrt() < 0.05);
    }
}

#[test]
fn all_four_free_energy_estimators_agree_under_the_optimal_control() {
    let ou = ou_spec();
    let dt = 0.01;
    let p = problems::ou(&ou, dt).unwrap();
    let exact = ou_value(0.0, 0.0, &ou);
    let optimal = FnPolicy(move |n: usize, _: &[f64], u: &mut [f64]| u[0] = -ou_z(0.0, n as f64 * dt, &ou));
    let batch = simulate_batch(&p.model, &optimal, &p.stop, &SimulationSpec::new(dt, 2000, 41, InitialCondition::Fixed(vec![0.0]))).unwrap();
    let w = batch_work(&batch, &p.cost);
    let l = batch_log_likelihood(&batch);
    let (_, f_hat) = is_mgf_estimate(&w, &l).unwrap();
    let f_tilde = direct_free_energy(&w, &l).unwrap();
    let (gw, glh, ginner) = ou_general_samples(&ou, dt, 0.5, 2000, 42);
    let (g_hat, g_tilde) = general_estimators(&gw, &glh, &ginner).unwrap();
    let all = [f_hat.estimate, f_tilde.estimate, g_hat.estimate, g_tilde.estimate];
    for e in all {
        assert!((e - exact).abs() < 0.01, "{all:?} vs {exact}");
    }
    // near zero variance: the log and direct forms coincide to second order
    assert!((f_hat.estimate - f_tilde.estimate).abs() < 1e-3);
    assert!((g_hat.estimate - g_tilde.estimate).abs() < 1e-3);
}

#[test]
fn naive_monte_carlo_follows_the_binomial_variance() {
    let spec = CommittorSpec::new(2, 1.0, 3.0, 0.1).unwrap();
    let dt = 0.005;
    let p = problems::committor(&spec, 20.0, dt).unwrap();
    let n = 500;
    let reps: Vec<f64> = (0..20)
        .map(|s| {
            let run = simulate_summaries(&p.model, &ZeroPolicy, &p.stop, &SimulationSpec::new(dt, n, 500 + s, problems::committor_start(&spec, 2.0)), None).unwrap();
            naive_mc(&run.iter().map(|s| s.status == PathStatus::Exited && s.final_state.iter().map(|v| v * v).sum::<f64>() >= 9.0).collect::<Vec<_>>())
                .unwrap()
                .estimate
        })
        .collect();
    let pooled = reps.iter().sum::<f64>() / reps.len() as f64;
    let predicted = (pooled * (1.0 - pooled) / n as f64).sqrt();
    let observed = sample_std(&reps);
    let ratio = observed / predicted;
    assert!((1.0 / 1.5..1.5).contains(&ratio), "observed {observed:.4e} predicted {predicted:.4e}");
    assert!((pooled - committor_value(2.0, &spec).unwrap()).abs() < 0.05);
}

#[test]
fn control_variate_with_the_exact_gradient() {
    // a large regularisation keeps the gradient moderate at the inner sphere;
    // for small eps the overshoot of discretely monitored exits there biases
    // the estimate by O(sqrt(dt) |grad V|)
    let spec = CommittorSpec::new(2, 1.0, 3.0, 1.0).unwrap();
    let dt = 1e-3;
    let model = SdeModel::brownian(2);
    let stop = annulus_stop(spec.a, spec.c, 20_000);
    let p = problems::committor(&spec, 20.0, dt).unwrap();
    let batch = simulate_batch(&model, &ZeroPolicy, &stop, &SimulationSpec::new(dt, 2000, 43, problems::committor_start(&spec, 2.0))).unwrap();
    // Z = grad V with V = -log(h + eps), evaluated along the uncontrolled path
    let z_at = |x: &[f64]| -> [f64; 2] {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let s = -committor_derivative(r, &spec).unwrap() / (committor_value(r, &spec).unwrap() + spec.eps) / r;
        [s * x[0], s * x[1]]
    };
    let w = batch_work(&batch, &p.cost);
    let lz: Vec<f64> = batch
        .paths()
        .map(|path| {
            let z: Vec<f64> = (0..path.exit_index).flat_map(|n| z_at(path.state(n))).collect();
            girsanov_log_likelihood(&z, path.noises, 2, path.exit_index, dt)
        })
        .collect();
    let cv = control_variate_identity(&w, &lz).unwrap();
    let naive = direct_free_energy(&w, &vec![0.0; w.len()]).unwrap();
    let exact = committor_free_energy(2.0, &spec).unwrap();
    assert!((cv.estimate - exact).abs() / exact.abs() < 0.02, "{cv:?} vs {exact}");
    assert!(cv.sample_variance < 0.1 * naive.sample_variance, "{} vs {}", cv.sample_variance, naive.sample_variance);
}

#[test]
fn double_well_hits_are_rare_without_control() {
    let spec = DoubleWellSpec::new(0.5, 1.0, 0.01);
    let dt = 1e-3;
    let p = problems::double_well(&spec, dt).unwrap();
    let n = 400_000;
    let run = simulate_summaries(&p.model, &ZeroPolicy, &p.stop, &SimulationSpec::new(dt, n, 44, InitialCondition::Fixed(vec![-1.0])), None).unwrap();
    let report = naive_mc(&run.iter().map(|s| s.status == PathStatus::Exited).collect::<Vec<_>>()).unwrap();
    let psi = pde_reference(&spec, PdeGrid::new(600, 1000)).unwrap().psi_at(-1.0, 0.0);
    // discrete monitoring misses some crossings, so allow a little on top
    assert!((report.estimate - psi).abs() < 3.0 * report.standard_error() + 0.1 * psi, "{:.3e} vs {psi:.3e}", report.estimate);
    assert!(report.relative_error_per_sample().unwrap() > 50.0);
}
