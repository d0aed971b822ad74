//! Finite-dimensional change of measure: for `B ~ N(0, I_m)`,
//! `E[f(b + sigma B)] = E[f(b + sigma u + sigma B) exp(-u.B - |u|^2/2)]`.
//! Both sides are estimated from the same Gaussian draws.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, trajectory_stream};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the paired difference.
    pub standard_error: f64,
    /// `(lhs - rhs) / standard_error`, zero when the samples coincide.
    pub z_score: f64,
}

/// `sigma` is `d x m`, row-major.
pub fn finite_dim_girsanov_check<F>(b: &[f64], sigma: &[f64], u: &[f64], f: F, n: usize, seed: u64) -> Result<GirsanovCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = b.len();
    let m = u.len();
    Error::check_len("diffusion matrix", d * m, sigma.len())?;
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let half_sq: f64 = 0.5 * u.iter().map(|v| v * v).sum::<f64>();
    let shift: Vec<f64> = (0..d).map(|i| (0..m).map(|j| sigma[i * m + j] * u[j]).sum()).collect();

    // per chunk: (sum lhs, sum rhs, sum diff, sum diff^2)
    let chunks = n.div_ceil(CHUNK);
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trajectory_stream(seed, c as u64);
            let mut noise = vec![0.0; m];
            let mut x = vec![0.0; d];
            let mut xu = vec![0.0; d];
            let mut acc = [0.0; 4];
            for _ in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                fill_standard_normal(&mut rng, &mut noise);
                for i in 0..d {
                    let s: f64 = (0..m).map(|j| sigma[i * m + j] * noise[j]).sum();
                    x[i] = b[i] + s;
                    xu[i] = x[i] + shift[i];
                }
                let dot: f64 = u.iter().zip(&noise).map(|(a, z)| a * z).sum();
                let lhs = f(&x);
                let rhs = f(&xu) * (-dot - half_sq).exp();
                let diff = lhs - rhs;
                acc[0] += lhs;
                acc[1] += rhs;
                acc[2] += diff;
                acc[3] += diff * diff;
            }
            acc
        })
        .collect();
    let mut total = [0.0; 4];
    for s in &sums {
        for k in 0..4 {
            total[k] += s[k];
        }
    }
    let nf = n as f64;
    let mean_diff = total[2] / nf;
    let var = ((total[3] - nf * mean_diff * mean_diff) / (nf - 1.0)).max(0.0);
    let standard_error = (var / nf).sqrt();
    let z_score = if standard_error > 0.0 { mean_diff / standard_error } else { 0.0 };
    Ok(GirsanovCheck { lhs: total[0] / nf, rhs: total[1] / nf, standard_error, z_score })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_gives_identical_sides() {
        let c = finite_dim_girsanov_check(&[0.3], &[1.2], &[0.0], |x| x[0].sin(), 10_000, 1).unwrap();
        assert_eq!(c.lhs, c.rhs);
        assert_eq!(c.z_score, 0.0);
    }

    #[test]
    fn linear_test_function() {
        let c = finite_dim_girsanov_check(&[0.7], &[1.5], &[0.8], |x| x[0], 200_000, 2).unwrap();
        assert!(c.z_score.abs() < 3.0, "{c:?}");
        assert!((c.rhs - 0.7).abs() < 5.0 * c.standard_error.max(0.01));
    }

    #[test]
    fn exponential_moment() {
        let c = finite_dim_girsanov_check(&[0.0], &[1.0], &[1.0], |x| x[0].exp(), 400_000, 3).unwrap();
        assert!(c.z_score.abs() < 3.0, "{c:?}");
        assert!((c.lhs - 0.5f64.exp()).abs() < 0.02);
    }

    #[test]
    fn rectangular_diffusion() {
        let sigma = [1.0, 0.5, -0.3, 0.2, 0.8, 0.4];
        let c = finite_dim_girsanov_check(&[0.1, -0.2], &sigma, &[0.5, -0.4, 0.3], |x| (x[0] + 2.0 * x[1]).cos(), 200_000, 4).unwrap();
        assert!(c.z_score.abs() < 3.0, "{c:?}");
    }

    #[test]
    fn reproducible() {
        let a = finite_dim_girsanov_check(&[0.0], &[1.0], &[0.5], |x| x[0] * x[0], 10_000, 9).unwrap();
        let b = finite_dim_girsanov_check(&[0.0], &[1.0], &[0.5], |x| x[0] * x[0], 10_000, 9).unwrap();
        assert_eq!(a, b);
    }
}
