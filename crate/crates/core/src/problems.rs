//! The worked examples as ready-made models, stopping rules and costs.

use crate::error::{Error, Result};
use crate::functionals::CostSpec;
use crate::reference::committor::{annulus_stop, CommittorSpec};
use crate::reference::double_well;
use crate::reference::ou::OuSpec;
use crate::sde::{InitialCondition, SdeModel, StopRule};

/// Everything needed to simulate and score one example.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SdeModel,
    pub stop: StopRule,
    pub cost: CostSpec,
    pub dt: f64,
}

/// Brownian motion in the annulus `a < |x| < c`, stopped on either sphere or
/// after `horizon / dt` steps, with cost `-log(1_{|x| >= c} + eps)`.
pub fn committor(spec: &CommittorSpec, horizon: f64, dt: f64) -> Result<Problem> {
    check_step(dt, horizon)?;
    let c2 = spec.c * spec.c;
    Ok(Problem {
        model: SdeModel::brownian(spec.d),
        stop: annulus_stop(spec.a, spec.c, steps(horizon, dt)),
        cost: CostSpec::neg_log_indicator(move |x| x.iter().map(|v| v * v).sum::<f64>() >= c2, spec.eps),
        dt,
    })
}

/// Start at radius `r` on the first axis.
pub fn committor_start(spec: &CommittorSpec, r: f64) -> InitialCondition {
    let mut x = vec![0.0; spec.d];
    x[0] = r;
    InitialCondition::Fixed(x)
}

pub fn ou_model(spec: &OuSpec) -> SdeModel {
    let (mu, sigma) = (spec.mu, spec.sigma);
    SdeModel::new(1, 1, move |x, b| b[0] = mu - x[0], move |_, s| s[0] = sigma)
}

/// OU on `[0, T]` with terminal cost `alpha x`.
pub fn ou(spec: &OuSpec, dt: f64) -> Result<Problem> {
    check_step(dt, spec.t_end)?;
    let alpha = spec.alpha;
    Ok(Problem {
        model: ou_model(spec),
        stop: StopRule::horizon(steps(spec.t_end, dt)),
        cost: CostSpec::terminal_with_gradient(move |x| alpha * x[0], move |_, g| g[0] = alpha),
        dt,
    })
}

pub fn double_well_model(sigma: f64) -> SdeModel {
    SdeModel::new(1, 1, |x, b| b[0] = double_well::drift(x[0]), move |_, s| s[0] = sigma)
}

/// Double well stopped on reaching `x >= 0` or at `T`, with cost
/// `-log(1_{x >= 0} + eps)`.
pub fn double_well(spec: &double_well::DoubleWellSpec, dt: f64) -> Result<Problem> {
    check_step(dt, spec.t_end)?;
    Ok(Problem {
        model: double_well_model(spec.sigma),
        stop: StopRule::new(|x: &[f64]| x[0] < 0.0, steps(spec.t_end, dt)),
        cost: CostSpec::neg_log_indicator(|x| x[0] >= 0.0, spec.eps),
        dt,
    })
}

/// One-dimensional overdamped Langevin dynamics in the polynomial potential
/// `sum_k coeffs[k] x^k`, with target set `x >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialLangevin {
    pub coeffs: Vec<f64>,
    pub sigma: f64,
    pub threshold: f64,
    pub t_end: f64,
    pub eps: f64,
}

impl PolynomialLangevin {
    pub fn potential(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }

    pub fn problem(&self, dt: f64) -> Result<Problem> {
        check_step(dt, self.t_end)?;
        if self.coeffs.is_empty() || !(self.sigma > 0.0) {
            return Err(Error::invalid("polynomial potential needs coefficients and sigma > 0"));
        }
        let this = self.clone();
        let sigma = self.sigma;
        let threshold = self.threshold;
        Ok(Problem {
            model: SdeModel::new(1, 1, move |x, b| b[0] = -this.slope(x[0]), move |_, s| s[0] = sigma),
            stop: StopRule::new(move |x: &[f64]| x[0] < threshold, steps(self.t_end, dt)),
            cost: CostSpec::neg_log_indicator(move |x| x[0] >= threshold, self.eps),
            dt,
        })
    }
}

fn check_step(dt: f64, horizon: f64) -> Result<()> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid(format!("need dt > 0 and a positive horizon (got dt={dt}, horizon={horizon})")));
    }
    Ok(())
}

fn steps(horizon: f64, dt: f64) -> usize {
    // tolerate T/dt landing just above an integer
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::euler_step;

    #[test]
    fn step_counts() {
        assert_eq!(steps(5.0, 0.05), 100);
        assert_eq!(steps(1.0, 0.001), 1000);
        assert_eq!(steps(0.0875, 0.005), 18);
    }

    #[test]
    fn ou_drift_step() {
        let p = ou(&OuSpec::new(1.0, 0.0, 2f64.sqrt(), 5.0), 0.05).unwrap();
        let x = euler_step(&[1.0], &p.model, &[0.0], 0.05, &[0.0]).unwrap();
        assert!((x[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn double_well_minimum_is_fixed() {
        let p = double_well(&double_well::DoubleWellSpec::new(0.5, 1.0, 0.01), 0.01).unwrap();
        let x = euler_step(&[-1.0], &p.model, &[0.0], 0.3, &[0.0]).unwrap();
        assert_eq!(x[0], -1.0);
        assert!(p.stop.in_domain(&[-0.1]));
        assert!(!p.stop.in_domain(&[0.0]));
    }

    #[test]
    fn polynomial_matches_double_well() {
        let poly = PolynomialLangevin { coeffs: vec![1.0, 0.0, -2.0, 0.0, 1.0], sigma: 0.5, threshold: 0.0, t_end: 1.0, eps: 0.01 };
        for x in [-1.7, -1.0, -0.3, 0.4] {
            assert!((poly.potential(x) - double_well::potential(x)).abs() < 1e-12);
            assert!((-poly.slope(x) - double_well::drift(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn committor_cost_values() {
        let spec = CommittorSpec::new(2, 1.0, 3.0, 0.1).unwrap();
        let p = committor(&spec, 1.25, 0.005).unwrap();
        assert_eq!(p.stop.n_max(), 250);
        assert!((p.cost.terminal_value(&[3.1, 0.0]) + 1.1f64.ln()).abs() < 1e-15);
        assert!((p.cost.terminal_value(&[0.9, 0.0]) + 0.1f64.ln()).abs() < 1e-15);
    }
}
