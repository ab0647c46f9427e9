//! JSON scenario files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use metastab::coupling::{FamilyConfig, FamilySpec};
use metastab::potential::{build_validated, PolynomialSpec, PotentialError, PotentialModel};
use metastab::simulate::{CrossingRule, McConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub potential: PotentialSection,
    /// Strictly decreasing, positive, at least three rungs.
    pub eps_ladder: Vec<f64>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub family: Option<FamilyConfig>,
    #[serde(default)]
    pub mc: Option<McSection>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub scan_box: Option<[f64; 2]>,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_scan_points() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_margin_k")]
    pub margin_k: f64,
}

fn default_n() -> usize {
    metastab::measure::DEFAULT_N
}

fn default_margin_k() -> f64 {
    metastab::measure::DEFAULT_MARGIN_K
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: default_n(), margin_k: default_margin_k() }
    }
}

/// Monte Carlo settings. Positions are in normalized coordinates (deep
/// minimum on the left, saddle at 0).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    /// Noise levels for the Monte Carlo runs.
    pub eps: Vec<f64>,
    /// Time step; the largest admissible one when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_thin_margin")]
    pub thin_bound_margin: f64,
    #[serde(default = "default_thin_block")]
    pub thin_block: usize,
    #[serde(default)]
    pub crossing: CrossingRule,
    /// Target radius around the opposite minimum for exit times.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Exit-point interval as offsets from the deep minimum.
    #[serde(default = "default_exit_offsets")]
    pub exit_offsets: [f64; 2],
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Committor probes as fractions of `(x0 + eps, r_eps)`.
    #[serde(default = "default_committor_probes")]
    pub committor_probes: Vec<f64>,
    #[serde(default = "default_probe_times")]
    pub probe_times: Vec<f64>,
    /// Write raw exit-time samples, one number per line.
    #[serde(default)]
    pub raw_samples: bool,
}

fn default_thin_margin() -> f64 {
    1.05
}
fn default_thin_block() -> usize {
    16
}
fn default_rho() -> f64 {
    0.3
}
fn default_exit_offsets() -> [f64; 2] {
    [-0.275, 0.25]
}
fn default_gamma() -> f64 {
    0.05
}
fn default_committor_probes() -> Vec<f64> {
    vec![0.35, 0.45, 0.55, 0.65, 0.8]
}
fn default_probe_times() -> Vec<f64> {
    vec![1.0, 5.0]
}

impl McSection {
    /// Config at one eps; `seed` overrides the scenario seed when given.
    pub fn config(&self, m: &PotentialModel, eps: f64, seed: Option<u64>) -> McConfig {
        let mut cfg = McConfig::auto(m, eps, self.t_max, self.replicas, seed.unwrap_or(self.seed));
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg.thin_bound_margin = self.thin_bound_margin;
        cfg.thin_block = self.thin_block;
        cfg.crossing = self.crossing;
        cfg
    }
}

/// Scenario problems that map to the configuration exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl Scenario {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let sc: Scenario = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let l = &self.eps_ladder;
        if l.len() < 3 {
            return Err(config_err(format!("eps_ladder needs at least 3 rungs, got {}", l.len())));
        }
        if l.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(config_err("eps_ladder entries must be positive"));
        }
        if l.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err("eps_ladder must be strictly decreasing"));
        }
        if self.grid.n < 100 || !(self.grid.margin_k > 0.0) {
            return Err(config_err("grid needs n >= 100 and margin_k > 0"));
        }
        if let Some(mc) = &self.mc {
            if mc.eps.is_empty() || mc.eps.iter().any(|e| !(*e > 0.0)) {
                return Err(config_err("mc.eps must list positive noise levels"));
            }
            if mc.replicas == 0 || !(mc.t_max > 0.0) {
                return Err(config_err("mc needs replicas >= 1 and t_max > 0"));
            }
            if mc.committor_probes.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                return Err(config_err("committor_probes must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Double well when possible; a single-well polynomial is accepted for
    /// sanity runs of the spectral solver.
    pub fn model(&self) -> anyhow::Result<PotentialModel> {
        let p = &self.potential;
        let mut spec = PolynomialSpec::new(p.coeffs.clone());
        spec.scan_points = p.scan_points;
        if let Some(b) = p.scan_box {
            spec = spec.with_scan_box(b[0], b[1]);
        }
        match build_validated(&spec, p.tol) {
            Ok(m) => Ok(m),
            Err(PotentialError::NotDoubleWell { count: 1 }) => {
                PotentialModel::single_well(p.coeffs.clone()).map_err(|e| config_err(e.to_string()))
            }
            Err(e) => Err(config_err(e.to_string())),
        }
    }

    pub fn family_spec(&self) -> anyhow::Result<FamilySpec> {
        match &self.family {
            Some(c) => FamilySpec::from_config(c).map_err(|e| config_err(e.to_string())),
            None => bail!(ConfigError("scenario has no family section".into())),
        }
    }

    pub fn mc_section(&self) -> anyhow::Result<&McSection> {
        self.mc.as_ref().ok_or_else(|| config_err("scenario has no mc section"))
    }
}
