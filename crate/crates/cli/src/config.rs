//! Experiment configuration: a TOML document merged over per-experiment
//! defaults. Every key is checked against the defaults, so unknown keys and
//! type mismatches are reported with their full key path.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Committor,
    OuShooting,
    OuLsmc,
    Doublewell,
    GirsanovCheck,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Committor,
        Experiment::OuShooting,
        Experiment::OuLsmc,
        Experiment::Doublewell,
        Experiment::GirsanovCheck,
        Experiment::Custom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Committor => "committor",
            Experiment::OuShooting => "ou_shooting",
            Experiment::OuLsmc => "ou_lsmc",
            Experiment::Doublewell => "doublewell",
            Experiment::GirsanovCheck => "girsanov_check",
            Experiment::Custom => "custom",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsmcSettings {
    pub dt: f64,
    pub basis_count: usize,
    pub trajectories: usize,
    /// Standard deviation of each Gaussian basis function.
    pub basis_width: f64,
    /// Centres are spread over `mean +- delta` of the active trajectories.
    pub delta: f64,
    pub ridge: f64,
    /// `gradient` or `implicit`.
    pub z_mode: String,
    pub iterations: usize,
    /// `identity` or `radius`.
    pub feature: String,
    /// `terminal_cost` or `discard`.
    pub timeout: String,
    pub min_active: usize,
    /// Component-wise bound on iterated controls; 0 disables it.
    pub control_clamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootingSettings {
    pub dt: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_gradient_steps: usize,
    pub controlled_forward: bool,
    pub theta_y_init: f64,
    /// Self-check: the last minibatch loss must fall below this.
    pub loss_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommittorSettings {
    pub d: usize,
    pub a: f64,
    pub c: f64,
    /// Starting radius.
    pub r: f64,
    pub eps: f64,
    /// Simulation horizon; 0 selects half the mean time to leave the outer ball from `r`.
    pub horizon: f64,
    pub plot_points: usize,
    /// Self-check: relative error of the committor at `r`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSettings {
    pub alpha: f64,
    pub mu: f64,
    pub sigma: f64,
    pub t_end: f64,
    pub x0: f64,
    /// Sampling box of the LSMC initial states (unused by the shooting method).
    pub low: f64,
    pub high: f64,
    /// Self-check: relative error of the learned value at `x0`.
    pub tolerance: f64,
    pub plot_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleWellSettings {
    pub sigma: f64,
    pub t_end: f64,
    pub eps: f64,
    pub x0: f64,
    pub low: f64,
    pub high: f64,
    pub mc_trajectories: usize,
    pub is_trajectories: usize,
    pub pde_nx: usize,
    pub pde_nt: usize,
    pub plot_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovSettings {
    pub b: Vec<f64>,
    /// `d x m` diffusion matrix, row-major.
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    /// `identity`, `exp`, `cos` or `square`, applied to the sum of the components.
    pub function: String,
    pub samples: usize,
    /// Self-check: the paired difference must stay within this many standard errors.
    pub z_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSettings {
    /// Potential `sum_k coeffs[k] x^k`.
    pub coeffs: Vec<f64>,
    pub sigma: f64,
    pub threshold: f64,
    pub t_end: f64,
    pub eps: f64,
    pub x0: f64,
    pub low: f64,
    pub high: f64,
    pub mc_trajectories: usize,
    pub is_trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Empty selects `$FBIS_OUTPUT_ROOT/<experiment>`.
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committor: Option<CommittorSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ou: Option<OuSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doublewell: Option<DoubleWellSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub girsanov: Option<GirsanovSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lsmc: Option<LsmcSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shooting: Option<ShootingSettings>,
}

/// Largest seed a configuration file can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn lsmc_base(dt: f64) -> LsmcSettings {
    LsmcSettings {
        dt,
        basis_count: 5,
        trajectories: 1000,
        basis_width: 1.0,
        delta: 1.0,
        ridge: 1e-8,
        z_mode: "gradient".into(),
        iterations: 1,
        feature: "identity".into(),
        timeout: "terminal_cost".into(),
        min_active: 10,
        control_clamp: 0.0,
    }
}

fn ou_base() -> OuSettings {
    OuSettings {
        alpha: 1.0,
        mu: 0.0,
        sigma: 2f64.sqrt(),
        t_end: 5.0,
        x0: 0.0,
        low: -1.0,
        high: 1.0,
        tolerance: 0.05,
        plot_points: 41,
    }
}

impl ExperimentConfig {
    /// The fully populated default configuration of `experiment`.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            seed: 1,
            threads: 0,
            output_dir: String::new(),
            committor: None,
            ou: None,
            doublewell: None,
            girsanov: None,
            custom: None,
            lsmc: None,
            shooting: None,
        };
        match experiment {
            Experiment::Committor => {
                c.committor = Some(CommittorSettings { d: 2, a: 1.0, c: 3.0, r: 2.0, eps: 0.1, horizon: 0.0, plot_points: 51, tolerance: 0.05 });
                c.lsmc = Some(LsmcSettings {
                    basis_width: 2.0,
                    feature: "radius".into(),
                    timeout: "discard".into(),
                    ..lsmc_base(0.005)
                });
            }
            Experiment::OuShooting => {
                c.ou = Some(ou_base());
                c.shooting = Some(ShootingSettings {
                    dt: 0.05,
                    batch_size: 50,
                    hidden: 32,
                    learning_rate: 1e-2,
                    max_gradient_steps: 5000,
                    controlled_forward: false,
                    theta_y_init: 0.0,
                    loss_tolerance: 1e-3,
                });
            }
            Experiment::OuLsmc => {
                c.ou = Some(OuSettings { tolerance: 0.1, ..ou_base() });
                c.lsmc = Some(LsmcSettings { trajectories: 5000, basis_width: 2.0, delta: 2.0, iterations: 2, ..lsmc_base(0.05) });
            }
            Experiment::Doublewell => {
                c.doublewell = Some(DoubleWellSettings {
                    sigma: 0.5,
                    t_end: 1.0,
                    eps: 1e-4,
                    x0: -1.0,
                    low: -1.5,
                    high: 0.0,
                    mc_trajectories: 20_000,
                    is_trajectories: 20_000,
                    pde_nx: 600,
                    pde_nt: 1000,
                    plot_points: 61,
                });
                c.lsmc = Some(LsmcSettings { ridge: 1e-4, basis_width: 0.5, delta: 0.5, iterations: 3, ..lsmc_base(1e-3) });
            }
            Experiment::GirsanovCheck => {
                c.girsanov = Some(GirsanovSettings {
                    b: vec![0.7],
                    sigma: vec![1.5],
                    u: vec![0.8],
                    function: "identity".into(),
                    samples: 1_000_000,
                    z_limit: 3.0,
                });
            }
            Experiment::Custom => {
                c.custom = Some(CustomSettings {
                    coeffs: vec![1.0, 0.0, -2.0, 0.0, 1.0],
                    sigma: 0.5,
                    threshold: 0.0,
                    t_end: 1.0,
                    eps: 1e-4,
                    x0: -1.0,
                    low: -1.5,
                    high: 0.0,
                    mc_trajectories: 20_000,
                    is_trajectories: 20_000,
                });
                c.lsmc = Some(LsmcSettings { ridge: 1e-4, basis_width: 0.5, delta: 0.5, iterations: 3, ..lsmc_base(1e-3) });
            }
        }
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configurations always serialise")
    }

    pub fn lsmc(&self) -> &LsmcSettings {
        self.lsmc.as_ref().expect("validated configuration has an [lsmc] section")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &str, ok: bool, what: &str| if ok { Ok(()) } else { Err(ConfigError::Range { key: key.into(), message: what.into() }) };
        // TOML integers are signed, so larger seeds could not be written back
        range("seed", self.seed <= MAX_SEED, "must not exceed 2^63 - 1")?;
        if let Some(l) = &self.lsmc {
            range("lsmc.dt", l.dt > 0.0, "must be positive")?;
            range("lsmc.basis_count", l.basis_count >= 1, "must be at least 1")?;
            range(
                "lsmc.basis_count",
                l.basis_count <= l.trajectories,
                &format!("K = {} exceeds M = {} (lsmc.trajectories); the regression needs K <= M", l.basis_count, l.trajectories),
            )?;
            range("lsmc.basis_width", l.basis_width > 0.0, "must be positive")?;
            range("lsmc.delta", l.delta >= 0.0, "must be non-negative")?;
            range("lsmc.ridge", l.ridge >= 0.0, "must be non-negative")?;
            range("lsmc.iterations", l.iterations >= 1, "must be at least 1")?;
            range("lsmc.control_clamp", l.control_clamp >= 0.0, "must be non-negative")?;
            one_of("lsmc.z_mode", &l.z_mode, &["gradient", "implicit"])?;
            one_of("lsmc.feature", &l.feature, &["identity", "radius"])?;
            one_of("lsmc.timeout", &l.timeout, &["terminal_cost", "discard"])?;
        }
        if let Some(s) = &self.shooting {
            range("shooting.dt", s.dt > 0.0, "must be positive")?;
            range("shooting.batch_size", s.batch_size >= 1, "must be at least 1")?;
            range("shooting.hidden", s.hidden >= 1, "must be at least 1")?;
            range("shooting.learning_rate", s.learning_rate > 0.0, "must be positive")?;
        }
        if let Some(c) = &self.committor {
            range("committor.d", c.d >= 1, "must be at least 1")?;
            range("committor.a", c.a > 0.0 && c.a < c.c, "need 0 < a < c")?;
            range("committor.r", c.a <= c.r && c.r <= c.c, "must lie in [a, c]")?;
            range("committor.eps", c.eps > 0.0, "must be positive")?;
            range("committor.horizon", c.horizon >= 0.0, "must be non-negative")?;
            range("committor.plot_points", c.plot_points >= 2, "must be at least 2")?;
        }
        if let Some(o) = &self.ou {
            range("ou.sigma", o.sigma > 0.0, "must be positive")?;
            range("ou.t_end", o.t_end > 0.0, "must be positive")?;
            range("ou.low", o.low < o.high, "must be below ou.high")?;
            range("ou.plot_points", o.plot_points >= 2, "must be at least 2")?;
        }
        if let Some(w) = &self.doublewell {
            range("doublewell.sigma", w.sigma > 0.0, "must be positive")?;
            range("doublewell.t_end", w.t_end > 0.0, "must be positive")?;
            range("doublewell.eps", w.eps > 0.0, "must be positive")?;
            range("doublewell.x0", w.x0 < 0.0, "must lie in the domain x < 0")?;
            range("doublewell.low", w.low < w.high && w.high <= 0.0, "need low < high <= 0")?;
            range("doublewell.pde_nx", w.pde_nx >= 10, "must be at least 10")?;
            range("doublewell.pde_nt", w.pde_nt >= 10, "must be at least 10")?;
            range("doublewell.mc_trajectories", w.mc_trajectories >= 2, "must be at least 2")?;
            range("doublewell.is_trajectories", w.is_trajectories >= 2, "must be at least 2")?;
            range("doublewell.plot_points", w.plot_points >= 2, "must be at least 2")?;
        }
        if let Some(g) = &self.girsanov {
            range("girsanov.b", !g.b.is_empty(), "must not be empty")?;
            range("girsanov.u", !g.u.is_empty(), "must not be empty")?;
            range(
                "girsanov.sigma",
                g.sigma.len() == g.b.len() * g.u.len(),
                &format!("needs len(b) * len(u) = {} entries, got {}", g.b.len() * g.u.len(), g.sigma.len()),
            )?;
            range("girsanov.samples", g.samples >= 2, "must be at least 2")?;
            one_of("girsanov.function", &g.function, &["identity", "exp", "cos", "square"])?;
        }
        if let Some(c) = &self.custom {
            range("custom.coeffs", !c.coeffs.is_empty(), "must not be empty")?;
            range("custom.sigma", c.sigma > 0.0, "must be positive")?;
            range("custom.t_end", c.t_end > 0.0, "must be positive")?;
            range("custom.eps", c.eps > 0.0, "must be positive")?;
            range("custom.x0", c.x0 < c.threshold, "must lie below the threshold")?;
            range("custom.low", c.low < c.high && c.high <= c.threshold, "need low < high <= threshold")?;
            range("custom.mc_trajectories", c.mc_trajectories >= 2, "must be at least 2")?;
            range("custom.is_trajectories", c.is_trajectories >= 2, "must be at least 2")?;
        }
        Ok(())
    }
}

fn one_of(key: &str, value: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::Range { key: key.into(), message: format!("`{value}` is not one of {}", allowed.join(", ")) })
    }
}

/// Parse a document, apply `key=value` overrides, merge over the defaults of
/// the selected experiment and validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    let experiment = match user.get("experiment") {
        None => return Err(ConfigError::Missing("experiment".into())),
        Some(Value::String(s)) => Experiment::from_name(s).ok_or_else(|| ConfigError::Range {
            key: "experiment".into(),
            message: format!("`{s}` is not one of {}", Experiment::ALL.map(|e| e.name()).join(", ")),
        })?,
        Some(other) => return Err(ConfigError::Type { key: "experiment".into(), expected: "string".into(), found: other.type_str().into() }),
    };
    let mut merged = Table::try_from(ExperimentConfig::defaults(experiment)).expect("defaults always serialise");
    merge(&mut merged, user, "")?;
    let config: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it does not parse as one.
pub fn apply_override(table: &mut Table, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(format!("`{item}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(format!("bad key in `{item}`")));
    }
    let value = match format!("v = {}", raw.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(ConfigError::Override(format!("`{}` is not a section", parts[..=i].join(".")))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in user {
        let path = join(prefix, &key);
        let Some(slot) = base.get_mut(&key) else {
            return Err(ConfigError::UnknownKey(path));
        };
        let value = coerce(slot, value, &path)?;
        match (slot, value) {
            (Value::Table(b), Value::Table(u)) => merge(b, u, &path)?,
            (slot, v) => *slot = v,
        }
    }
    Ok(())
}

/// Check `value` against the type of the default it replaces; integers are
/// accepted where floats are expected.
fn coerce(default: &Value, value: Value, path: &str) -> Result<Value, ConfigError> {
    let mismatch = |v: &Value| ConfigError::Type { key: path.to_string(), expected: default.type_str().into(), found: v.type_str().into() };
    match (default, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::Integer(i)) if i < 0 => Err(ConfigError::Range { key: path.to_string(), message: "must be non-negative".into() }),
        (Value::Array(d), Value::Array(items)) => {
            let elem = d.first().cloned().unwrap_or(Value::Float(0.0));
            items
                .into_iter()
                .enumerate()
                .map(|(i, v)| coerce(&elem, v, &format!("{path}[{i}]")))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => Ok(v),
        (_, v) => Err(mismatch(&v)),
    }
}
