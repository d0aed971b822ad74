//! Path functionals along stopped Euler trajectories: the work `W`, the
//! Girsanov log-likelihood `L` and the control inner product `<v, Z>`.
//!
//! Every time integral uses the left-endpoint rule over steps `0..eta`.

use std::sync::Arc;

use crate::sde::{PathView, Predicate, TrajectoryBatch, VectorField};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum TerminalCost {
    /// Smooth terminal cost with an optional gradient (zero if absent).
    Function {
        value: ScalarField,
        gradient: Option<VectorField>,
    },
    /// `g(x) = -log(1_C(x) + eps)`; gradient zero almost everywhere.
    NegLogIndicator { set: Predicate, eps: f64 },
}

/// Running cost `f` and terminal cost `g` of `W = int_0^tau f(X_s) ds + g(X_tau)`.
#[derive(Clone)]
pub struct CostSpec {
    running: Option<ScalarField>,
    terminal: TerminalCost,
}

impl std::fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let terminal = match &self.terminal {
            TerminalCost::Function { gradient, .. } => {
                format!("Function(gradient: {})", gradient.is_some())
            }
            TerminalCost::NegLogIndicator { eps, .. } => format!("NegLogIndicator(eps: {eps})"),
        };
        f.debug_struct("CostSpec")
            .field("running", &self.running.is_some())
            .field("terminal", &terminal)
            .finish()
    }
}

impl CostSpec {
    pub fn new(terminal: TerminalCost) -> Self {
        Self {
            running: None,
            terminal,
        }
    }

    /// Terminal cost `g` with no running cost and zero gradient.
    pub fn terminal<G>(g: G) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(TerminalCost::Function {
            value: Arc::new(g),
            gradient: None,
        })
    }

    /// Terminal cost `g` with gradient `grad_g`.
    pub fn terminal_with_gradient<G, D>(g: G, grad_g: D) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(TerminalCost::Function {
            value: Arc::new(g),
            gradient: Some(Arc::new(grad_g)),
        })
    }

    /// `g^eps = -log(1_C + eps)` for the target set `C`.
    pub fn neg_log_indicator<P>(set: P, eps: f64) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        assert!(eps >= 0.0, "regularisation must be non-negative");
        Self::new(TerminalCost::NegLogIndicator {
            set: Arc::new(set),
            eps,
        })
    }

    pub fn with_running<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.running = Some(Arc::new(f));
        self
    }

    pub fn running(&self, x: &[f64]) -> f64 {
        self.running.as_ref().map_or(0.0, |f| f(x))
    }

    pub fn has_running(&self) -> bool {
        self.running.is_some()
    }

    pub fn terminal_cost(&self) -> &TerminalCost {
        &self.terminal
    }

    /// Regularisation of an indicator-type terminal cost, if any.
    pub fn regularization_eps(&self) -> Option<f64> {
        match &self.terminal {
            TerminalCost::NegLogIndicator { eps, .. } => Some(*eps),
            TerminalCost::Function { .. } => None,
        }
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        match &self.terminal {
            TerminalCost::Function { value, .. } => value(x),
            TerminalCost::NegLogIndicator { set, eps } => {
                let hit = if set(x) { 1.0 } else { 0.0 };
                -(hit + eps).ln()
            }
        }
    }

    pub fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) {
        match &self.terminal {
            TerminalCost::Function {
                gradient: Some(grad),
                ..
            } => grad(x, out),
            _ => out.fill(0.0),
        }
    }

    /// Whether `x` lies in the target set of an indicator cost.
    pub fn in_target(&self, x: &[f64]) -> Option<bool> {
        match &self.terminal {
            TerminalCost::NegLogIndicator { set, .. } => Some(set(x)),
            TerminalCost::Function { .. } => None,
        }
    }
}

/// `dt * sum_{n<eta} f(X_n) + g(X_eta)`.
///
/// Infinite only for an unregularised indicator cost on a path missing the
/// target; callers see `+inf` and decide.
pub fn work_functional(path: &PathView<'_>, cost: &CostSpec, dt: f64) -> f64 {
    let mut running = 0.0;
    if cost.has_running() {
        for n in 0..path.exit_index {
            running += cost.running(path.state(n));
        }
    }
    dt * running + cost.terminal_value(path.final_state())
}

/// `-sum_{n<eta} u_n . sqrt(dt) xi_n - dt/2 sum_{n<eta} |u_n|^2`.
///
/// `controls` and `noises` are row-major with `width` entries per step.
pub fn girsanov_log_likelihood(controls: &[f64], noises: &[f64], width: usize, eta: usize, dt: f64) -> f64 {
    assert!(controls.len() >= eta * width && noises.len() >= eta * width, "arrays shorter than exit index");
    let sqdt = dt.sqrt();
    let (mut stoch, mut quad) = (0.0, 0.0);
    for (u, xi) in controls[..eta * width].iter().zip(&noises[..eta * width]) {
        stoch += u * xi;
        quad += u * u;
    }
    -sqdt * stoch - 0.5 * dt * quad
}

/// `dt * sum_{n<eta} v_n . z_n`.
pub fn control_inner_product(v: &[f64], z: &[f64], width: usize, eta: usize, dt: f64) -> f64 {
    assert_eq!(v.len(), z.len(), "control arrays differ in length");
    assert!(v.len() >= eta * width, "arrays shorter than exit index");
    dt * v[..eta * width].iter().zip(&z[..eta * width]).map(|(a, b)| a * b).sum::<f64>()
}

/// `W` for every trajectory of a batch.
pub fn batch_work(batch: &TrajectoryBatch, cost: &CostSpec) -> Vec<f64> {
    batch.paths().map(|p| work_functional(&p, cost, batch.dt())).collect()
}

/// `L` for every trajectory, using the controls that drove the batch.
pub fn batch_log_likelihood(batch: &TrajectoryBatch) -> Vec<f64> {
    batch
        .paths()
        .map(|p| girsanov_log_likelihood(p.controls, p.noises, p.noise_dim, p.exit_index, batch.dt()))
        .collect()
}
