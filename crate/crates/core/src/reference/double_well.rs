//! Double-well diffusion `dX = -U'(X) dt + sigma dB`, `U(x) = (x^2 - 1)^2`,
//! and the probability `psi(x, t)` of leaving `(-inf, 0)` before `T`.
//!
//! `psi` solves `psi_t + L psi = 0` on `[x_left, 0]` with `psi(0, t) = 1`,
//! `psi(x, T) = 0` and zero flux at `x_left`. The solver marches in
//! time-to-go with Crank-Nicolson after a few implicit Euler start-up steps,
//! which damp the corner discontinuity at `(0, T)`.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellSpec {
    pub sigma: f64,
    pub t_end: f64,
    pub eps: f64,
    pub x_left: f64,
}

impl DoubleWellSpec {
    pub fn new(sigma: f64, t_end: f64, eps: f64) -> Self {
        Self { sigma, t_end, eps, x_left: -3.0 }
    }
}

pub fn potential(x: f64) -> f64 {
    (x * x - 1.0).powi(2)
}

/// `-U'(x)`.
pub fn drift(x: f64) -> f64 {
    -4.0 * x * (x * x - 1.0)
}

/// `psi = psi^eps - eps`.
pub fn psi_from_regularised(psi_eps: f64, eps: f64) -> f64 {
    psi_eps - eps
}

/// `V^eps = -log(psi + eps)`.
pub fn regularised_value(psi: f64, eps: f64) -> f64 {
    -(psi + eps).ln()
}

/// `V = -log(exp(-V^eps) - eps)`.
pub fn value_from_regularised(v_eps: f64, eps: f64) -> f64 {
    -((-v_eps).exp() - eps).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    /// Space intervals on `[x_left, 0]`.
    pub nx: usize,
    /// Time steps on `[0, T]`.
    pub nt: usize,
    /// Implicit Euler steps before switching to Crank-Nicolson.
    pub startup_steps: usize,
    /// Number of stored time levels (at least 2).
    pub snapshots: usize,
}

impl PdeGrid {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self { nx, nt, startup_steps: 4, snapshots: 101 }
    }
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub spec: DoubleWellSpec,
    pub grid: PdeGrid,
    /// Space nodes `x_left = x_0 < ... < x_nx = 0`.
    pub x: Vec<f64>,
    /// Stored times, increasing from 0 to `T`.
    pub t: Vec<f64>,
    /// `psi[j][i]` at `(x[i], t[j])`.
    pub psi: Vec<Vec<f64>>,
}

/// Solve the backward equation for `psi`.
pub fn pde_reference(spec: &DoubleWellSpec, grid: PdeGrid) -> Result<PdeSolution> {
    if grid.nx < 4 || grid.nt == 0 || grid.snapshots < 2 {
        return Err(Error::invalid("PDE grid needs nx >= 4, nt >= 1 and at least two snapshots"));
    }
    if !(spec.x_left < -1.0) || !(spec.sigma > 0.0) || !(spec.t_end > 0.0) {
        return Err(Error::invalid("PDE needs x_left < -1, sigma > 0 and T > 0"));
    }
    let nx = grid.nx;
    let h = -spec.x_left / nx as f64;
    let dtau = spec.t_end / grid.nt as f64;
    let x: Vec<f64> = (0..=nx).map(|i| spec.x_left + h * i as f64).collect();
    let diff = 0.5 * spec.sigma * spec.sigma;
    let peclet = cell_peclet(spec, h);
    if peclet > 1.0 {
        log::warn!("cell Peclet number {peclet:.2} > 1: central differences may oscillate near x_left");
    }

    // L restricted to unknown nodes 0..nx-1; node nx carries psi = 1
    let n = nx;
    let mut lo = vec![0.0; n];
    let mut di = vec![0.0; n];
    let mut up = vec![0.0; n];
    for i in 0..n {
        let b = drift(x[i]);
        let mut l = diff / (h * h) - b / (2.0 * h);
        let mut u = diff / (h * h) + b / (2.0 * h);
        if i == 0 {
            // ghost node mirrors node 1
            u += l;
            l = 0.0;
        }
        lo[i] = l;
        di[i] = -2.0 * diff / (h * h);
        up[i] = u;
    }
    let apply_l = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let left = if i > 0 { lo[i] * p[i - 1] } else { 0.0 };
            let right = if i + 1 < n { up[i] * p[i + 1] } else { up[i] };
            out[i] = left + di[i] * p[i] + right;
        }
    };

    let stride = (grid.nt as f64 / (grid.snapshots - 1) as f64).ceil().max(1.0) as usize;
    let mut psi = vec![0.0; n];
    let mut lp = vec![0.0; n];
    let full = |p: &[f64]| {
        let mut v = p.to_vec();
        v.push(1.0);
        v
    };
    // snapshots in time-to-go; reversed at the end
    let mut snaps = vec![(0.0, full(&psi))];
    let mut a = vec![0.0; n];
    let mut bdiag = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..grid.nt {
        let theta = if k < grid.startup_steps { 1.0 } else { 0.5 };
        apply_l(&psi, &mut lp);
        for i in 0..n {
            rhs[i] = psi[i] + (1.0 - theta) * dtau * lp[i];
            a[i] = -theta * dtau * lo[i];
            bdiag[i] = 1.0 - theta * dtau * di[i];
            c[i] = -theta * dtau * up[i];
        }
        // boundary value psi(0) = 1 moves to the right-hand side
        rhs[n - 1] += theta * dtau * up[n - 1];
        c[n - 1] = 0.0;
        psi = thomas(&a, &bdiag, &c, &rhs)?;
        if (k + 1) % stride == 0 || k + 1 == grid.nt {
            snaps.push(((k + 1) as f64 * dtau, full(&psi)));
        }
    }
    if let Some(last) = snaps.last_mut() {
        last.0 = spec.t_end;
    }
    snaps.reverse();
    let t = snaps.iter().map(|(tau, _)| spec.t_end - tau).collect();
    let psi = snaps.into_iter().map(|(_, p)| p).collect();
    Ok(PdeSolution { spec: *spec, grid, x, t, psi })
}

/// `max |b| h / sigma^2` over the grid; above 1 the central scheme can lose
/// monotonicity where the drift is strong.
fn cell_peclet(spec: &DoubleWellSpec, h: f64) -> f64 {
    let steepest = drift(spec.x_left).abs().max(drift(-1.0 / 3f64.sqrt()).abs());
    steepest * h / (spec.sigma * spec.sigma)
}

/// Tridiagonal solve; `a[0]` and `c[n-1]` are ignored.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = b[0];
    if denom == 0.0 {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    cp[0] = c[0] / denom;
    dp[0] = d[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        cp[i] = c[i] / denom;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
    Ok(out)
}

impl PdeSolution {
    pub fn max_cell_peclet(&self) -> f64 {
        cell_peclet(&self.spec, self.x[1] - self.x[0])
    }

    fn interp_x(&self, row: &[f64], x: f64) -> f64 {
        let x = x.clamp(self.x[0], 0.0);
        let h = self.x[1] - self.x[0];
        let i = (((x - self.x[0]) / h).floor() as usize).min(self.grid.nx - 1);
        let s = (x - self.x[i]) / h;
        row[i] * (1.0 - s) + row[i + 1] * s
    }

    /// `psi(x, t)` by linear interpolation; `x` is clamped to the grid.
    pub fn psi_at(&self, x: f64, t: f64) -> f64 {
        let t = t.clamp(0.0, self.spec.t_end);
        let j = self.t.partition_point(|&tj| tj <= t).clamp(1, self.t.len() - 1);
        let (t0, t1) = (self.t[j - 1], self.t[j]);
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        self.interp_x(&self.psi[j - 1], x) * (1.0 - s) + self.interp_x(&self.psi[j], x) * s
    }

    /// `V^eps(x, t) = -log(psi + eps)`.
    pub fn value_at(&self, x: f64, t: f64) -> f64 {
        regularised_value(self.psi_at(x, t), self.spec.eps)
    }

    /// `U(x) + sigma^2 V^eps(x, t)`, the potential of the optimally tilted drift.
    pub fn tilted_potential_at(&self, x: f64, t: f64) -> f64 {
        potential(x) + self.spec.sigma * self.spec.sigma * self.value_at(x, t)
    }

    /// CSV with columns `x,t,psi,V,tilted_potential` over every stored level.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "t", "psi", "V", "tilted_potential"])?;
        let s2 = self.spec.sigma * self.spec.sigma;
        for (tj, row) in self.t.iter().zip(&self.psi) {
            for (xi, p) in self.x.iter().zip(row) {
                let v = regularised_value(*p, self.spec.eps);
                w.write_record([xi, tj, p, &v, &(potential(*xi) + s2 * v)].map(|f| format!("{f:e}")))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStudy {
    /// `psi(x, 0)` on successively doubled grids.
    pub values: Vec<f64>,
    /// `(v_k - v_{k+1}) / (v_{k+1} - v_{k+2})`; 4 for second-order convergence.
    pub ratios: Vec<f64>,
    /// Relative change between the two finest grids.
    pub last_change: f64,
}

impl RefinementStudy {
    /// Refinement changed the value by less than 1%.
    pub fn converged(&self) -> bool {
        self.last_change < 0.01
    }
}

/// Evaluate `psi(x, 0)` on `levels` grids, doubling `nx` and `nt` each time.
pub fn refinement_study(spec: &DoubleWellSpec, coarse: PdeGrid, levels: usize, x: f64) -> Result<RefinementStudy> {
    if levels < 2 {
        return Err(Error::invalid("refinement needs at least two grids"));
    }
    let mut values = Vec::with_capacity(levels);
    for l in 0..levels {
        let grid = PdeGrid { nx: coarse.nx << l, nt: coarse.nt << l, snapshots: 2, ..coarse };
        values.push(pde_reference(spec, grid)?.psi_at(x, 0.0));
    }
    let ratios = values.windows(3).map(|w| (w[0] - w[1]) / (w[1] - w[2])).collect();
    let k = values.len();
    let last_change = ((values[k - 1] - values[k - 2]) / values[k - 1]).abs();
    Ok(RefinementStudy { values, ratios, last_change })
}
