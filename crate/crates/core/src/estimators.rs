//! Monte Carlo estimators of `Psi = E[exp(-W)]` and `F = -log Psi`.
//!
//! Exponential averages are accumulated relative to the largest exponent, so
//! weights spanning hundreds of orders of magnitude stay representable.
//! Reductions run sequentially in trajectory order and are reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Plain hit-frequency estimate of a probability.
    NaiveMc,
    /// `mean exp(L - W)` on a controlled batch.
    ImportanceSampling,
    /// `-log` of the importance-sampling estimate.
    FreeEnergyLog,
    /// `mean (W - L)`.
    FreeEnergyDirect,
    /// `mean (L^Z + W)` on the uncontrolled batch.
    ControlVariate,
    /// `-log mean exp(<v, Z> - L^H - W^v)`.
    GeneralLog,
    /// `mean (W^v + L^H - <v, Z>)`.
    GeneralDirect,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::NaiveMc => "naive_mc",
            EstimatorKind::ImportanceSampling => "importance_sampling",
            EstimatorKind::FreeEnergyLog => "free_energy_log",
            EstimatorKind::FreeEnergyDirect => "free_energy_direct",
            EstimatorKind::ControlVariate => "control_variate",
            EstimatorKind::GeneralLog => "general_log",
            EstimatorKind::GeneralDirect => "general_direct",
        }
    }

    /// Known bias direction for fixed `N`, if any.
    pub fn bias_note(&self) -> &'static str {
        match self {
            EstimatorKind::NaiveMc | EstimatorKind::ImportanceSampling => "unbiased",
            EstimatorKind::FreeEnergyLog => "biased upwards for finite N (Jensen): E[F_hat] >= F",
            EstimatorKind::FreeEnergyDirect => "biased unless the control is optimal",
            EstimatorKind::ControlVariate => "unbiased for the discretised identity only with exact Z",
            EstimatorKind::GeneralLog | EstimatorKind::GeneralDirect => "not unbiased for fixed N in general",
        }
    }
}

/// Point estimate with its spread.
///
/// `sample_variance` is the variance of a single summand (for the log-type
/// estimators, its delta-method equivalent), so the estimator's standard error
/// is `sqrt(sample_variance / n)`. Two relative errors are derived from it:
/// per sample `std / |estimate|` and per estimator `std / |estimate| / sqrt(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub estimate: f64,
    /// `ln` of the estimate for the exponential-average estimators.
    pub log_estimate: Option<f64>,
    pub sample_variance: f64,
    pub n: usize,
    pub hit_fraction: Option<f64>,
}

impl EstimateReport {
    pub fn standard_error(&self) -> f64 {
        (self.sample_variance / self.n as f64).sqrt()
    }

    /// `None` when the estimate is zero or not finite.
    pub fn relative_error_per_sample(&self) -> Option<f64> {
        (self.estimate != 0.0 && self.estimate.is_finite()).then(|| self.sample_variance.sqrt() / self.estimate.abs())
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.relative_error_per_sample().map(|r| r / (self.n as f64).sqrt())
    }

    pub fn with_hit_fraction(mut self, h: f64) -> Self {
        self.hit_fraction = Some(h);
        self
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn non_empty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        Err(Error::invalid(format!("{what} needs at least one sample")))
    } else {
        Ok(())
    }
}

/// Mean of `exp(a_i)` as `(ln mean, per-sample variance / mean^2)`.
/// `-inf` exponents contribute zero weight; NaN is rejected.
fn log_mean_exp(a: &[f64]) -> Result<(f64, f64)> {
    if a.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN exponent in exponential average".into()));
    }
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if amax == f64::INFINITY {
        return Err(Error::Numerical("infinite exponent in exponential average".into()));
    }
    if amax == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, f64::NAN));
    }
    let scaled: Vec<f64> = a.iter().map(|v| (v - amax).exp()).collect();
    let (m, var) = mean_var(&scaled);
    Ok((amax + m.ln(), var / (m * m)))
}

/// Hit frequency of an event on an uncontrolled batch; variance `p (1 - p)`.
pub fn naive_mc(hits: &[bool]) -> Result<EstimateReport> {
    if hits.is_empty() {
        return Err(Error::invalid("naive Monte Carlo needs at least one sample"));
    }
    let p = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    Ok(EstimateReport {
        kind: EstimatorKind::NaiveMc,
        estimate: p,
        log_estimate: None,
        sample_variance: p * (1.0 - p),
        n: hits.len(),
        hit_fraction: Some(p),
    })
}

/// `Psi_hat = mean exp(L - W)` and `F_hat = -log Psi_hat`.
pub fn is_mgf_estimate(w: &[f64], l: &[f64]) -> Result<(EstimateReport, EstimateReport)> {
    Error::check_len("likelihood samples", w.len(), l.len())?;
    non_empty(w, "importance sampling")?;
    let a: Vec<f64> = w.iter().zip(l).map(|(w, l)| l - w).collect();
    let (log_psi, rel_var) = log_mean_exp(&a)?;
    let psi = log_psi.exp();
    let n = w.len();
    let psi_report = EstimateReport {
        kind: EstimatorKind::ImportanceSampling,
        estimate: psi,
        log_estimate: Some(log_psi),
        sample_variance: rel_var * psi * psi,
        n,
        hit_fraction: None,
    };
    let f_report = EstimateReport {
        kind: EstimatorKind::FreeEnergyLog,
        estimate: -log_psi,
        log_estimate: None,
        sample_variance: rel_var,
        n,
        hit_fraction: None,
    };
    Ok((psi_report, f_report))
}

/// `F_tilde = mean (W - L)`.
pub fn direct_free_energy(w: &[f64], l: &[f64]) -> Result<EstimateReport> {
    Error::check_len("likelihood samples", w.len(), l.len())?;
    non_empty(w, "direct free energy")?;
    let d: Vec<f64> = w.iter().zip(l).map(|(w, l)| w - l).collect();
    let (mean, var) = mean_var(&d);
    Ok(EstimateReport {
        kind: EstimatorKind::FreeEnergyDirect,
        estimate: mean,
        log_estimate: None,
        sample_variance: var,
        n: w.len(),
        hit_fraction: None,
    })
}

/// `mean (L^Z + W)` where `L^Z` uses `Z` along the uncontrolled path.
pub fn control_variate_identity(w: &[f64], lz: &[f64]) -> Result<EstimateReport> {
    Error::check_len("control variate samples", w.len(), lz.len())?;
    non_empty(w, "control variate")?;
    let s: Vec<f64> = w.iter().zip(lz).map(|(w, l)| l + w).collect();
    let (mean, var) = mean_var(&s);
    Ok(EstimateReport {
        kind: EstimatorKind::ControlVariate,
        estimate: mean,
        log_estimate: None,
        sample_variance: var,
        n: w.len(),
        hit_fraction: None,
    })
}

/// Per-trajectory exponent `<v, Z> - L^H - W^v`.
pub fn general_exponent(w_v: &[f64], l_h: &[f64], inner_vz: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("likelihood samples", w_v.len(), l_h.len())?;
    Error::check_len("inner product samples", w_v.len(), inner_vz.len())?;
    Ok(w_v.iter().zip(l_h).zip(inner_vz).map(|((w, l), i)| i - l - w).collect())
}

/// `G_hat = -log mean exp(<v,Z> - L^H - W^v)` and `G_tilde = mean (W^v + L^H - <v,Z>)`.
pub fn general_estimators(w_v: &[f64], l_h: &[f64], inner_vz: &[f64]) -> Result<(EstimateReport, EstimateReport)> {
    let e = general_exponent(w_v, l_h, inner_vz)?;
    non_empty(&e, "general estimators")?;
    let (log_mean, rel_var) = log_mean_exp(&e)?;
    let neg: Vec<f64> = e.iter().map(|v| -v).collect();
    let (mean, var) = mean_var(&neg);
    let n = e.len();
    Ok((
        EstimateReport {
            kind: EstimatorKind::GeneralLog,
            estimate: -log_mean,
            log_estimate: None,
            sample_variance: rel_var,
            n,
            hit_fraction: None,
        },
        EstimateReport {
            kind: EstimatorKind::GeneralDirect,
            estimate: mean,
            log_estimate: None,
            sample_variance: var,
            n,
            hit_fraction: None,
        },
    ))
}

/// Sample standard deviation.
pub fn sample_std(values: &[f64]) -> f64 {
    mean_var(values).1.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn naive_examples() {
        let r = naive_mc(&[true; 10]).unwrap();
        assert_eq!((r.estimate, r.sample_variance), (1.0, 0.0));
        let r = naive_mc(&[false; 10]).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.relative_error(), None);
        let r = naive_mc(&[true, false, false, false]).unwrap();
        assert_relative_eq!(r.standard_error().powi(2), 0.25 * 0.75 / 4.0, epsilon = 1e-15);
        assert!(naive_mc(&[]).is_err());
    }

    #[test]
    fn deterministic_work_without_control() {
        let w = vec![2.0; 7];
        let l = vec![0.0; 7];
        let (psi, f) = is_mgf_estimate(&w, &l).unwrap();
        assert_relative_eq!(psi.estimate, (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(f.estimate, 2.0, epsilon = 1e-15);
        assert_eq!(f.sample_variance, 0.0);
        let d = direct_free_energy(&w, &l).unwrap();
        assert_eq!((d.estimate, d.sample_variance), (2.0, 0.0));
    }

    #[test]
    fn extreme_exponents_do_not_overflow() {
        let w = vec![900.0, 901.0];
        let l = vec![0.0, 0.0];
        let (psi, f) = is_mgf_estimate(&w, &l).unwrap();
        assert_eq!(psi.estimate, 0.0);
        let expected = 900.0 - ((1.0 + (-1.0f64).exp()) / 2.0).ln();
        assert_relative_eq!(f.estimate, expected, max_relative = 1e-14);
        assert_relative_eq!(psi.log_estimate.unwrap(), -expected, max_relative = 1e-14);
        let (psi, f) = is_mgf_estimate(&[-800.0], &[0.0]).unwrap();
        assert!(psi.estimate.is_infinite() && f.estimate == -800.0);
    }

    #[test]
    fn infinite_work_means_zero_weight() {
        let (psi, f) = is_mgf_estimate(&[f64::INFINITY, 0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(psi.estimate, 0.5);
        assert_relative_eq!(f.estimate, 2f64.ln());
        let (psi, f) = is_mgf_estimate(&[f64::INFINITY], &[0.0]).unwrap();
        assert_eq!(psi.estimate, 0.0);
        assert_eq!(f.estimate, f64::INFINITY);
        assert!(is_mgf_estimate(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn zero_control_direct_is_mean_terminal() {
        let g = [0.5, 1.5, 4.0];
        let d = direct_free_energy(&g, &[0.0; 3]).unwrap();
        assert_relative_eq!(d.estimate, 2.0);
    }

    #[test]
    fn control_variate_without_z_is_mean_work() {
        let r = control_variate_identity(&[1.0, 2.0, 6.0], &[0.0; 3]).unwrap();
        assert_relative_eq!(r.estimate, 3.0);
    }

    #[test]
    fn general_at_zero_drift_is_control_variate() {
        let w = [0.3, 1.1, -0.4];
        let lz = [0.2, -0.5, 0.9];
        let (g_hat, g_tilde) = general_estimators(&w, &lz, &[0.0; 3]).unwrap();
        let cv = control_variate_identity(&w, &lz).unwrap();
        assert_relative_eq!(g_tilde.estimate, cv.estimate, epsilon = 1e-15);
        let direct: f64 = -(w.iter().zip(&lz).map(|(a, b)| (-(a + b)).exp()).sum::<f64>() / 3.0).ln();
        assert_relative_eq!(g_hat.estimate, direct, epsilon = 1e-14);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(is_mgf_estimate(&[1.0], &[1.0, 2.0]).is_err());
        assert!(general_estimators(&[1.0], &[1.0], &[]).is_err());
        assert!(direct_free_energy(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn reports_are_consistent(a in prop::collection::vec(-20.0f64..20.0, 2..60)) {
            let l = vec![0.0; a.len()];
            let (psi, f) = is_mgf_estimate(&a, &l).unwrap();
            prop_assert!(psi.sample_variance >= 0.0 && f.sample_variance >= 0.0);
            prop_assert!((psi.log_estimate.unwrap() + f.estimate).abs() < 1e-12);
            let direct: f64 = a.iter().map(|w| (-w).exp()).sum::<f64>() / a.len() as f64;
            prop_assert!((psi.estimate - direct).abs() <= 1e-12 * direct);
            // Jensen on the sample itself: -log mean exp(-W) <= mean W
            let d = direct_free_energy(&a, &l).unwrap();
            prop_assert!(f.estimate <= d.estimate + 1e-12);
            let rel = psi.relative_error_per_sample().unwrap();
            prop_assert!((psi.relative_error().unwrap() - rel / (a.len() as f64).sqrt()).abs() < 1e-12 * (1.0 + rel));
        }
    }
}
