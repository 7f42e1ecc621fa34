use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::simulate::{Algorithm, NoiseSource};
use crate::theory::{TrackingChange, DEFAULT_DIM_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    /// Constraints on consecutive pairs.
    Line,
    /// Four overlapping constraints: halves and parity classes.
    Dense,
    /// Explicit participant sets.
    Custom,
}

/// One user-specified constraint. Missing coefficients or offset are drawn
/// from the configured ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub participants: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub network: NetworkKind,
    pub agents: usize,
    /// Task dimension `M_k` of every agent.
    pub dim: usize,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    /// Magnitude range of the constraint coefficients (random sign).
    pub coefficient_range: [f64; 2],
    /// Magnitude range of the constraint offsets (random sign).
    pub offset_range: [f64; 2],
    /// Per-agent SNR targets are drawn uniformly from this range unless `snr_db` is set.
    pub snr_db_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    /// Eigenvalue range of the regressor covariances.
    pub regressor_eigen_range: [f64; 2],
    pub step_size: f64,
    pub rho: Vec<f64>,
    pub alpha: f64,
    pub algorithms: Vec<Algorithm>,
    pub noise_sources: Vec<NoiseSource>,
    pub runs: usize,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingChange>,
    /// Latent covariance is `prior_scale · I`; defaults to `M / r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_scale: Option<f64>,
    #[serde(default = "yes")]
    pub theory: bool,
    #[serde(default = "yes")]
    pub simulate: bool,
    #[serde(default = "yes")]
    pub steady_state: bool,
    #[serde(default = "default_cap")]
    pub dim_cap: usize,
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_DIM_CAP
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.agents < 2 {
            return bad("at least two agents are required".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        for (name, r) in [
            ("coefficient_range", self.coefficient_range),
            ("offset_range", self.offset_range),
            ("regressor_eigen_range", self.regressor_eigen_range),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= 0.0) {
                return bad(format!("{name} must satisfy 0 <= lo <= hi"));
            }
        }
        if !(self.coefficient_range[0] > 0.0) {
            return bad("coefficient_range lower bound must be positive".into());
        }
        if !(self.regressor_eigen_range[0] > 0.0) {
            return bad("regressor eigenvalues must be positive".into());
        }
        let s = self.snr_db_range;
        if !(s[0].is_finite() && s[1].is_finite() && s[0] <= s[1]) {
            return bad("snr_db_range must be finite with lo <= hi".into());
        }
        if let Some(v) = &self.snr_db {
            if v.len() != self.agents || v.iter().any(|x| !x.is_finite()) {
                return bad("snr_db needs one finite value per agent".into());
            }
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive".into());
        }
        if self.rho.iter().any(|r| !(0.0..1.0).contains(r)) {
            return bad("every rho must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.algorithms.contains(&Algorithm::AtpDelta) && (self.rho.is_empty() || self.noise_sources.is_empty()) {
            return bad("atp_delta needs at least one rho and one noise source".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.simulate && self.runs == 0 {
            return bad("runs must be at least 1 when simulating".into());
        }
        if let Some(tc) = self.tracking {
            if tc.at >= self.iterations || !(tc.scale > 0.0 && tc.scale.is_finite()) {
                return bad("tracking change index must lie in [0, iterations) with positive scale".into());
            }
        }
        if let Some(p) = self.prior_scale {
            if !(p > 0.0 && p.is_finite()) {
                return bad("prior_scale must be positive".into());
            }
        }
        match self.network {
            NetworkKind::Custom => {
                if self.constraints.is_empty() {
                    return bad("custom network needs constraints".into());
                }
                for (q, c) in self.constraints.iter().enumerate() {
                    if let Some(co) = &c.coefficients {
                        if co.len() != c.participants.len() {
                            return bad(format!("constraint {q}: one coefficient per participant required"));
                        }
                    }
                }
            }
            NetworkKind::Dense if self.agents < 4 => {
                return bad("dense network needs at least four agents".into());
            }
            _ => {
                if !self.constraints.is_empty() {
                    return bad("explicit constraints are only accepted for custom networks".into());
                }
            }
        }
        Ok(())
    }
}

/// Preset names understood by [`preset`].
pub const PRESETS: &[&str] = &["line", "dense", "tracking", "desk"];

fn mesh6() -> Vec<ConstraintConfig> {
    crate::network::mesh6_sets()
        .into_iter()
        .map(|participants| ConstraintConfig {
            participants,
            coefficients: None,
            offset: None,
        })
        .collect()
}

fn base(name: &str, network: NetworkKind, agents: usize, dim: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        network,
        agents,
        dim,
        constraints: Vec::new(),
        coefficient_range: [1.0, 3.0],
        offset_range: [1.0, 3.0],
        snr_db_range: [10.0, 20.0],
        snr_db: None,
        regressor_eigen_range: [1.0, 2.0],
        step_size: 0.02,
        rho: vec![0.1],
        alpha: crate::privacy::DEFAULT_ALPHA,
        algorithms: vec![Algorithm::AtpDelta, Algorithm::Atp0, Algorithm::Nocoop],
        noise_sources: vec![NoiseSource::ClosedForm],
        runs: 1000,
        iterations: 400,
        seed: 1,
        tracking: None,
        prior_scale: None,
        theory: true,
        simulate: true,
        steady_state: true,
        dim_cap: DEFAULT_DIM_CAP,
    }
}

/// Built-in scenario with JSON overrides merged key by key.
pub fn preset(kind: &str, overrides: Option<&Value>) -> Result<ScenarioConfig> {
    let cfg = match kind {
        "line" => {
            let mut c = base("line", NetworkKind::Line, 12, 3);
            c.rho = vec![0.1, 0.6, 0.85];
            c
        }
        "dense" => base("dense", NetworkKind::Dense, 12, 3),
        "tracking" => {
            let mut c = base("tracking", NetworkKind::Custom, 6, 2);
            c.constraints = mesh6();
            c.rho = vec![0.6];
            c.iterations = 150;
            c.noise_sources = vec![NoiseSource::SteadyState, NoiseSource::Adaptive];
            c.algorithms = vec![Algorithm::AtpDelta];
            c.tracking = Some(TrackingChange { at: 75, scale: 2.0 });
            c
        }
        "desk" => {
            let mut c = base("desk", NetworkKind::Custom, 6, 2);
            c.constraints = mesh6();
            c.rho = vec![0.6];
            c.iterations = 300;
            c.runs = 10_000;
            c
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected one of {PRESETS:?})"
            )))
        }
    };
    let cfg = match overrides {
        None => cfg,
        Some(v) => merge(cfg, v)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Overwrite top-level keys of `cfg` with those of `overrides`.
pub fn merge(cfg: ScenarioConfig, overrides: &Value) -> Result<ScenarioConfig> {
    let obj = overrides
        .as_object()
        .ok_or_else(|| Error::Config("overrides must be a JSON object".into()))?;
    let mut base = match serde_json::to_value(&cfg).expect("config serializes") {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    for (k, v) in obj {
        base.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| Error::Config(e.to_string()))
}

/// Keys of a preset whose values are artifact defaults rather than published settings.
pub fn preset_defaults(name: &str) -> Vec<&'static str> {
    let common = [
        "snr_db_range",
        "regressor_eigen_range",
        "prior_scale",
        "alpha",
        "seed",
        "noise_sources",
    ];
    let mut out: Vec<&'static str> = common.to_vec();
    match name {
        "line" | "dense" => out.push("iterations"),
        "tracking" => {
            out.extend(["iterations", "runs", "tracking.scale"]);
        }
        "desk" => {
            out.extend(["iterations", "runs", "rho", "constraints"]);
        }
        _ => return Vec::new(),
    }
    if name == "dense" {
        out.push("runs");
    }
    out
}
