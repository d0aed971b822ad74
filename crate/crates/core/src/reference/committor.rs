//! Committor of Brownian motion between two spheres `|x| = a` and `|x| = c`.
//!
//! `h` is radial and harmonic, `h'' + (d - 1)/r h' = 0`, with `h(a) = 0` and
//! `h(c) = 1`.

use crate::error::{Error, Result};
use crate::sde::{simulate_summaries, InitialCondition, PathStatus, SdeModel, SimulationSpec, StopRule, ZeroPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommittorSpec {
    pub d: usize,
    pub a: f64,
    pub c: f64,
    pub eps: f64,
}

impl CommittorSpec {
    pub fn new(d: usize, a: f64, c: f64, eps: f64) -> Result<Self> {
        if d == 0 || !(0.0 < a && a < c) || !(eps >= 0.0) {
            return Err(Error::invalid(format!("committor needs d >= 1, 0 < a < c and eps >= 0 (got d={d}, a={a}, c={c}, eps={eps})")));
        }
        Ok(Self { d, a, c, eps })
    }

    fn check(&self, r: f64) -> Result<()> {
        if !(self.a <= r && r <= self.c) {
            return Err(Error::invalid(format!("radius {r} outside [{}, {}]", self.a, self.c)));
        }
        Ok(())
    }

    /// Half the mean exit time `(c^2 - r^2) / d` of the outer ball from radius `r`.
    pub fn horizon_rule(&self, r: f64) -> f64 {
        0.5 * (self.c * self.c - r * r) / self.d as f64
    }
}

/// Closed-form committor for real dimension `d` (the `d = 2` case is the
/// logarithmic limit). Used by the integer API and by the continuity check.
pub fn committor_closed_form(r: f64, d: f64, a: f64, c: f64) -> f64 {
    if d == 1.0 {
        (r - a) / (c - a)
    } else if d == 2.0 {
        (r / a).ln() / (c / a).ln()
    } else {
        let p = 2.0 - d;
        (a.powf(p) - r.powf(p)) / (a.powf(p) - c.powf(p))
    }
}

fn committor_slope(r: f64, d: f64, a: f64, c: f64) -> f64 {
    if d == 1.0 {
        1.0 / (c - a)
    } else if d == 2.0 {
        1.0 / (r * (c / a).ln())
    } else {
        let p = 2.0 - d;
        -p * r.powf(p - 1.0) / (a.powf(p) - c.powf(p))
    }
}

/// `h(r)`; radii outside `[a, c]` are rejected.
pub fn committor_value(r: f64, spec: &CommittorSpec) -> Result<f64> {
    spec.check(r)?;
    Ok(committor_closed_form(r, spec.d as f64, spec.a, spec.c))
}

/// `h'(r)`.
pub fn committor_derivative(r: f64, spec: &CommittorSpec) -> Result<f64> {
    spec.check(r)?;
    Ok(committor_slope(r, spec.d as f64, spec.a, spec.c))
}

/// `V^eps(r) = -log(h(r) + eps)`.
pub fn committor_free_energy(r: f64, spec: &CommittorSpec) -> Result<f64> {
    Ok(-(committor_value(r, spec)? + spec.eps).ln())
}

/// Independent solve of the radial equation by classical RK4 on `[a, c]`:
/// integrate `(h, h')` from `(0, 1)` and rescale so that `h(c) = 1`.
pub fn radial_ode_committor(r: f64, spec: &CommittorSpec, steps: usize) -> Result<f64> {
    spec.check(r)?;
    let d = spec.d as f64;
    let rhs = |s: f64, y: [f64; 2]| [y[1], -(d - 1.0) / s * y[1]];
    let integrate = |to: f64| {
        let n = ((to - spec.a) / (spec.c - spec.a) * steps as f64).ceil().max(1.0) as usize;
        let h = (to - spec.a) / n as f64;
        let mut y = [0.0, 1.0];
        let mut s = spec.a;
        for _ in 0..n {
            let k1 = rhs(s, y);
            let k2 = rhs(s + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = rhs(s + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = rhs(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            s += h;
        }
        y[0]
    };
    Ok(integrate(r) / integrate(spec.c))
}

/// `grad log(h + eps)` at `x`, the extra drift realising the conditioned
/// (h-transformed) Brownian motion.
pub fn committor_drift(x: &[f64], spec: &CommittorSpec, out: &mut [f64]) -> Result<()> {
    Error::check_len("committor drift", spec.d, x.len())?;
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = committor_value(r, spec)?;
    let radial = committor_derivative(r, spec)? / (h + spec.eps);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = radial * xi / r;
    }
    Ok(())
}

/// Brownian motion with the drift `grad log(h + eps)`. Outside the annulus
/// the drift is zero; such states are never stepped from.
pub fn h_transform_model(spec: &CommittorSpec) -> SdeModel {
    let spec = *spec;
    let d = spec.d;
    SdeModel::new(
        d,
        d,
        move |x, b| {
            if committor_drift(x, &spec, b).is_err() {
                b.fill(0.0);
            }
        },
        move |_, s| {
            s.fill(0.0);
            for i in 0..d {
                s[i * d + i] = 1.0;
            }
        },
    )
}

pub fn annulus_stop(a: f64, c: f64, n_max: usize) -> StopRule {
    StopRule::new(
        move |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2 > a * a && r2 < c * c
        },
        n_max,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingResult {
    /// Fraction of all trajectories leaving through the outer sphere.
    pub hit_fraction: f64,
    pub timeout_fraction: f64,
}

/// Simulate the h-transformed process from radius `r0` (along the first axis)
/// and count exits through the outer sphere.
pub fn h_transform_hitting_test(spec: &CommittorSpec, r0: f64, m: usize, dt: f64, t_max: f64, seed: u64) -> Result<HittingResult> {
    spec.check(r0)?;
    let mut x0 = vec![0.0; spec.d];
    x0[0] = r0;
    let n_max = (t_max / dt).ceil() as usize;
    let spec_sim = SimulationSpec::new(dt, m, seed, InitialCondition::Fixed(x0));
    let out = simulate_summaries(&h_transform_model(spec), &ZeroPolicy, &annulus_stop(spec.a, spec.c, n_max), &spec_sim, None)?;
    let c2 = spec.c * spec.c;
    let hits = out
        .iter()
        .filter(|s| s.status == PathStatus::Exited && s.final_state.iter().map(|v| v * v).sum::<f64>() >= c2)
        .count();
    let timeouts = out.iter().filter(|s| s.status == PathStatus::TimedOut).count();
    Ok(HittingResult {
        hit_fraction: hits as f64 / m as f64,
        timeout_fraction: timeouts as f64 / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(d: usize, a: f64, c: f64) -> CommittorSpec {
        CommittorSpec::new(d, a, c, 0.0).unwrap()
    }

    #[test]
    fn examples() {
        assert_relative_eq!(committor_value(2.0, &spec(1, 1.0, 3.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(committor_value(2.0, &spec(2, 1.0, 3.0)).unwrap(), 2f64.ln() / 3f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(committor_value(2.0, &spec(2, 1.0, 3.0)).unwrap(), 0.63093, epsilon = 1e-5);
        assert!(committor_value(0.5, &spec(2, 1.0, 3.0)).is_err());
        assert!(CommittorSpec::new(2, 3.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn boundary_values() {
        for d in [1, 2, 3, 5, 10, 40] {
            let s = spec(d, 1.0, 2.0);
            assert_relative_eq!(committor_value(1.0, &s).unwrap(), 0.0, epsilon = 1e-14);
            assert_relative_eq!(committor_value(2.0, &s).unwrap(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn approaches_one_with_dimension() {
        for r in [1.1, 1.5, 1.9] {
            let mut last = 0.0;
            for d in [2, 3, 5, 10, 20, 50, 100] {
                let h = committor_value(r, &spec(d, 1.0, 2.0)).unwrap();
                assert!(h > last);
                last = h;
            }
            assert!(last > 0.99);
        }
    }

    #[test]
    fn matches_radial_ode() {
        for d in [1, 2, 3, 10] {
            let s = spec(d, 1.0, 2.0);
            for r in [1.0, 1.2, 1.5, 1.77, 2.0] {
                let ode = radial_ode_committor(r, &s, 2000).unwrap();
                assert_relative_eq!(committor_value(r, &s).unwrap(), ode, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn radial_residual_vanishes() {
        let h = 1e-3;
        for d in [1usize, 2, 3, 10] {
            let (a, c) = (1.0, 2.0);
            for i in 1..20 {
                let r = a + (c - a) * i as f64 / 20.0;
                let f = |s: f64| committor_closed_form(s, d as f64, a, c);
                // fourth-order stencils; the d = 10 profile is steep near r = a
                let d2 = (-f(r + 2.0 * h) + 16.0 * f(r + h) - 30.0 * f(r) + 16.0 * f(r - h) - f(r - 2.0 * h)) / (12.0 * h * h);
                let d1 = (-f(r + 2.0 * h) + 8.0 * f(r + h) - 8.0 * f(r - h) + f(r - 2.0 * h)) / (12.0 * h);
                assert!((d2 + (d as f64 - 1.0) / r * d1).abs() < 1e-6, "d={d}, r={r}");
            }
        }
    }

    #[test]
    fn dimension_two_is_the_limit() {
        for r in [1.3, 2.0, 2.7] {
            let log_form = committor_closed_form(r, 2.0, 1.0, 3.0);
            for d in [2.0 - 1e-6, 2.0 + 1e-6] {
                assert!((committor_closed_form(r, d, 1.0, 3.0) - log_form).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn drift_points_outward_and_matches_finite_differences() {
        let s = CommittorSpec::new(2, 1.0, 3.0, 0.01).unwrap();
        let x = [1.2, 1.1];
        let mut b = [0.0; 2];
        committor_drift(&x, &s, &mut b).unwrap();
        assert!(b[0] * x[0] + b[1] * x[1] > 0.0);
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let hh = 1e-5;
        let lg = |r: f64| (committor_value(r, &s).unwrap() + s.eps).ln();
        let fd = (lg(r + hh) - lg(r - hh)) / (2.0 * hh);
        let mag = (b[0] * b[0] + b[1] * b[1]).sqrt();
        assert!((mag - fd).abs() < 1e-6);
        let exact = 1.0 / (r * (3f64).ln()) / (committor_value(r, &s).unwrap() + s.eps);
        assert_relative_eq!(mag, exact, max_relative = 1e-12);
    }

    #[test]
    fn drift_vanishes_for_large_eps() {
        let s = CommittorSpec::new(3, 1.0, 2.0, 1e9).unwrap();
        let mut b = [0.0; 3];
        committor_drift(&[1.4, 0.0, 0.3], &s, &mut b).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn hitting_with_huge_eps_is_unconditioned() {
        let s = CommittorSpec::new(2, 1.0, 3.0, 1e9).unwrap();
        let res = h_transform_hitting_test(&s, 2.0, 4000, 2e-3, 30.0, 5).unwrap();
        let h = committor_value(2.0, &s).unwrap();
        let se = (h * (1.0 - h) / 4000.0).sqrt();
        // grid-time exit detection overshoots slightly; allow a small bias on top of 4 se
        assert!((res.hit_fraction - h).abs() < 4.0 * se + 0.02, "{} vs {h}", res.hit_fraction);
    }

    #[test]
    fn hitting_near_outer_sphere() {
        let s = CommittorSpec::new(2, 1.0, 3.0, 1e9).unwrap();
        let res = h_transform_hitting_test(&s, 2.99, 500, 1e-3, 20.0, 6).unwrap();
        assert!(res.hit_fraction > 0.95);
    }
}
