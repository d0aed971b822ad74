use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sde::TrajectoryBatch;

/// Map from the state to the coordinates the basis functions live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// All state coordinates.
    Identity,
    /// The first `k` coordinates (drops a trailing clock, for instance).
    Leading(usize),
    /// The Euclidean norm `|x|`, for radially symmetric problems.
    Radius,
}

impl FeatureMap {
    pub fn feature_dim(&self, state_dim: usize) -> usize {
        match *self {
            FeatureMap::Identity => state_dim,
            FeatureMap::Leading(k) => k,
            FeatureMap::Radius => 1,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            FeatureMap::Identity => out.copy_from_slice(x),
            FeatureMap::Leading(k) => out.copy_from_slice(&x[..k]),
            FeatureMap::Radius => out[0] = norm(x),
        }
    }

    /// Chain rule: `grad_x = J^T grad_y` for a scalar function of the features.
    fn pull_back(&self, x: &[f64], grad_y: &[f64], grad_x: &mut [f64]) {
        match *self {
            FeatureMap::Identity => grad_x.copy_from_slice(grad_y),
            FeatureMap::Leading(k) => {
                grad_x.fill(0.0);
                grad_x[..k].copy_from_slice(grad_y);
            }
            FeatureMap::Radius => {
                let r = norm(x);
                if r > 0.0 {
                    for (g, xi) in grad_x.iter_mut().zip(x) {
                        *g = grad_y[0] * xi / r;
                    }
                } else {
                    grad_x.fill(0.0);
                }
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// User-supplied basis on the state space.
pub trait CustomBasis: Send + Sync + std::fmt::Debug {
    fn len(&self) -> usize;

    fn eval(&self, x: &[f64], phi: &mut [f64]);

    /// Row-major `K x d` gradient matrix.
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone)]
pub enum BasisKind {
    /// Normalised isotropic Gaussian densities `N(m_k, v^2 I)` on the features.
    GaussianRbf { centers: Vec<Vec<f64>>, variance: f64 },
    /// The single function `1`.
    Constant,
    Custom(Arc<dyn CustomBasis>),
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    kind: BasisKind,
    feature: FeatureMap,
    state_dim: usize,
}

impl BasisSet {
    pub fn gaussian(centers: Vec<Vec<f64>>, variance: f64, feature: FeatureMap, state_dim: usize) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("gaussian basis needs at least one centre"));
        }
        if !(variance > 0.0) {
            return Err(Error::invalid(format!("basis variance must be positive, got {variance}")));
        }
        let p = feature.feature_dim(state_dim);
        for c in &centers {
            Error::check_len("basis centre", p, c.len())?;
        }
        Ok(Self {
            kind: BasisKind::GaussianRbf { centers, variance },
            feature,
            state_dim,
        })
    }

    pub fn constant(state_dim: usize) -> Self {
        Self {
            kind: BasisKind::Constant,
            feature: FeatureMap::Identity,
            state_dim,
        }
    }

    pub fn custom(basis: Arc<dyn CustomBasis>, state_dim: usize) -> Self {
        Self {
            kind: BasisKind::Custom(basis),
            feature: FeatureMap::Identity,
            state_dim,
        }
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn feature(&self) -> FeatureMap {
        self.feature
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            BasisKind::GaussianRbf { centers, .. } => centers.len(),
            BasisKind::Constant => 1,
            BasisKind::Custom(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            BasisKind::GaussianRbf { centers, .. } => Some(centers),
            _ => None,
        }
    }

    /// `phi_k(x)` for all `k`.
    pub fn eval(&self, x: &[f64], phi: &mut [f64]) {
        match &self.kind {
            BasisKind::GaussianRbf { centers, variance } => {
                let y = self.features(x);
                let norm = (2.0 * PI * variance).powf(-0.5 * y.len() as f64);
                for (p, c) in phi.iter_mut().zip(centers) {
                    *p = norm * (-sq_dist(&y, c) / (2.0 * variance)).exp();
                }
            }
            BasisKind::Constant => phi[0] = 1.0,
            BasisKind::Custom(b) => b.eval(x, phi),
        }
    }

    /// `phi_k(x)` and the row-major `K x d` matrix of state gradients.
    pub fn eval_with_gradient(&self, x: &[f64], phi: &mut [f64], grad: &mut [f64]) {
        let d = self.state_dim;
        match &self.kind {
            BasisKind::GaussianRbf { centers, variance } => {
                let y = self.features(x);
                let norm = (2.0 * PI * variance).powf(-0.5 * y.len() as f64);
                let mut gy = vec![0.0; y.len()];
                for (k, c) in centers.iter().enumerate() {
                    let value = norm * (-sq_dist(&y, c) / (2.0 * variance)).exp();
                    phi[k] = value;
                    for j in 0..y.len() {
                        gy[j] = -value * (y[j] - c[j]) / variance;
                    }
                    self.feature.pull_back(x, &gy, &mut grad[k * d..(k + 1) * d]);
                }
            }
            BasisKind::Constant => {
                phi[0] = 1.0;
                grad[..d].fill(0.0);
            }
            BasisKind::Custom(b) => {
                b.eval(x, phi);
                b.gradient(x, grad);
            }
        }
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.feature.feature_dim(x.len())];
        self.feature.apply(x, &mut y);
        y
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// How Gaussian centres follow the cloud of active trajectories at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Equidistant on `[mean - delta, mean + delta]`, component-wise.
    Mean { delta: f64 },
    /// As `Mean`, with `delta` the empirical standard deviation per component.
    EmpiricalStd,
    /// Equidistant between the per-component minimum and maximum.
    MinMax,
}

/// Centres for `k` Gaussians given feature vectors of the active trajectories.
pub fn gaussian_centers(points: &[Vec<f64>], k: usize, placement: Placement) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::invalid("equidistant placement needs at least two basis functions"));
    }
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("no active trajectories to place the basis on"))?;
    let p = first.len();
    let n = points.len() as f64;
    let mut lo = vec![0.0; p];
    let mut hi = vec![0.0; p];
    let mut mean = vec![0.0; p];
    for j in 0..p {
        mean[j] = points.iter().map(|y| y[j]).sum::<f64>() / n;
    }
    match placement {
        Placement::Mean { delta } => {
            for j in 0..p {
                lo[j] = mean[j] - delta;
                hi[j] = mean[j] + delta;
            }
        }
        Placement::EmpiricalStd => {
            for j in 0..p {
                let var = points.iter().map(|y| (y[j] - mean[j]).powi(2)).sum::<f64>() / n;
                lo[j] = mean[j] - var.sqrt();
                hi[j] = mean[j] + var.sqrt();
            }
        }
        Placement::MinMax => {
            for j in 0..p {
                lo[j] = points.iter().map(|y| y[j]).fold(f64::INFINITY, f64::min);
                hi[j] = points.iter().map(|y| y[j]).fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    if lo.iter().zip(&hi).any(|(l, h)| l == h) {
        log::debug!("basis centres collapse to a point; the regression is rank deficient");
    }
    Ok((0..k)
        .map(|i| {
            let s = i as f64 / (k - 1) as f64;
            lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * s).collect()
        })
        .collect())
}

/// Gaussian basis placed on the trajectories still inside the domain at step `n`.
pub fn place_gaussian_basis(
    batch: &TrajectoryBatch,
    n: usize,
    k: usize,
    placement: Placement,
    variance: f64,
    feature: FeatureMap,
) -> Result<BasisSet> {
    let p = feature.feature_dim(batch.dim());
    let points: Vec<Vec<f64>> = (0..batch.len())
        .filter(|&m| n < batch.exit_index(m))
        .map(|m| {
            let mut y = vec![0.0; p];
            feature.apply(batch.state(m, n), &mut y);
            y
        })
        .collect();
    BasisSet::gaussian(gaussian_centers(&points, k, placement)?, variance, feature, batch.dim())
}
