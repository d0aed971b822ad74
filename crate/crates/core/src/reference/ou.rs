//! Ornstein-Uhlenbeck process `dX = (mu - X) dt + sigma dB` with terminal
//! cost `g(x) = alpha x` at time `T`: value, optimal control and transition law.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuSpec {
    pub alpha: f64,
    pub mu: f64,
    pub sigma: f64,
    pub t_end: f64,
}

impl OuSpec {
    pub fn new(alpha: f64, mu: f64, sigma: f64, t_end: f64) -> Self {
        Self { alpha, mu, sigma, t_end }
    }
}

/// `V(x, t) = alpha ((x - mu) e^{t-T} + mu) - alpha^2 sigma^2 / 4 (1 - e^{2(t-T)})`.
pub fn ou_value(x: f64, t: f64, s: &OuSpec) -> f64 {
    let e = (t - s.t_end).exp();
    s.alpha * ((x - s.mu) * e + s.mu) - s.alpha * s.alpha * s.sigma * s.sigma / 4.0 * (1.0 - e * e)
}

/// `u*(x, t) = -sigma alpha e^{t-T}`, independent of `x`.
pub fn ou_optimal_control(_x: f64, t: f64, s: &OuSpec) -> f64 {
    -s.sigma * s.alpha * (t - s.t_end).exp()
}

/// `Z(x, t) = sigma dV/dx = -u*(x, t)`.
pub fn ou_z(x: f64, t: f64, s: &OuSpec) -> f64 {
    -ou_optimal_control(x, t, s)
}

/// Mean and variance of `X_T` given `X_t = x`.
pub fn ou_transition(x: f64, t: f64, s: &OuSpec) -> (f64, f64) {
    let e = (t - s.t_end).exp();
    ((x - s.mu) * e + s.mu, s.sigma * s.sigma / 2.0 * (1.0 - e * e))
}

/// `-log E[exp(-alpha X_T) | X_t = x]` from the Gaussian moment generating
/// function of the transition law.
pub fn ou_free_energy_from_law(x: f64, t: f64, s: &OuSpec) -> f64 {
    let (m, v) = ou_transition(x, t, s);
    s.alpha * m - 0.5 * s.alpha * s.alpha * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn standard() -> OuSpec {
        OuSpec::new(1.0, 0.0, 2f64.sqrt(), 5.0)
    }

    #[test]
    fn terminal_limit() {
        let s = OuSpec::new(1.7, 0.3, 0.8, 2.0);
        assert_relative_eq!(ou_value(1.25, 2.0, &s), 1.7 * 1.25, epsilon = 1e-15);
        assert_relative_eq!(ou_optimal_control(1.25, 2.0, &s), -0.8 * 1.7, epsilon = 1e-15);
    }

    #[test]
    fn reference_parameters() {
        let s = standard();
        assert_relative_eq!(ou_value(0.0, 0.0, &s), -0.5 * (1.0 - (-10f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(ou_value(0.0, 0.0, &s), -0.499977, epsilon = 1e-6);
        assert_relative_eq!(ou_optimal_control(0.0, 0.0, &s), -2f64.sqrt() * (-5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(ou_optimal_control(0.0, 0.0, &s), -0.009530, epsilon = 2e-6);
    }

    proptest! {
        #[test]
        fn law_and_closed_form_agree(x in -3.0f64..3.0, t in 0.0f64..5.0, alpha in -2.0f64..2.0, mu in -1.0f64..1.0, sigma in 0.1f64..2.0) {
            let s = OuSpec::new(alpha, mu, sigma, 5.0);
            prop_assert!((ou_value(x, t, &s) - ou_free_energy_from_law(x, t, &s)).abs() < 1e-12);
        }

        #[test]
        fn z_is_sigma_times_slope(x in -3.0f64..3.0, t in 0.0f64..5.0) {
            let s = OuSpec::new(0.7, 0.2, 1.3, 5.0);
            let h = 1e-5;
            let slope = (ou_value(x + h, t, &s) - ou_value(x - h, t, &s)) / (2.0 * h);
            prop_assert!((ou_z(x, t, &s) - s.sigma * slope).abs() < 1e-8);
        }
    }

    #[test]
    fn hjb_residual_vanishes() {
        // V_t + (mu - x) V_x + sigma^2/2 V_xx - sigma^2/2 V_x^2 = 0
        let s = OuSpec::new(0.9, 0.4, 1.1, 3.0);
        let h = 1e-4;
        for &(x, t) in &[(0.0, 0.5), (1.3, 2.0), (-2.0, 1.0)] {
            let vt = (ou_value(x, t + h, &s) - ou_value(x, t - h, &s)) / (2.0 * h);
            let vx = (ou_value(x + h, t, &s) - ou_value(x - h, t, &s)) / (2.0 * h);
            let vxx = (ou_value(x + h, t, &s) - 2.0 * ou_value(x, t, &s) + ou_value(x - h, t, &s)) / (h * h);
            let res = vt + (s.mu - x) * vx + 0.5 * s.sigma * s.sigma * (vxx - vx * vx);
            assert!(res.abs() < 1e-6, "{res}");
        }
    }
}
