//! Monte Carlo: Euler-Maruyama paths, first-passage problems, and the coupled
//! diffusion/chain process realized by thinning.
//!
//! Every replica owns a ChaCha8 stream selected by `(seed, replica index)`, so
//! results do not depend on thread count or scheduling. Reductions run over
//! the replica-ordered vector with pairwise summation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{CouplingSpec, InitialLaw};
use crate::measure::{pairwise_sum, truncation_box, GridDistribution, GridMeasure};
use crate::potential::PotentialModel;
use crate::spectral::SpectralSolution;
use crate::stats::{ks_critical_1pct, ks_statistic, mean_se};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("time step {dt:e} exceeds the resolution limit {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("jump intensity {rate:e} above thinning bound {bound:e} in state {state} at x={x}")]
    ThinningBoundExceeded { state: usize, x: f64, rate: f64, bound: f64 },
    #[error("{fraction:.4} of paths censored at t_max (limit 0.01)")]
    Censored { fraction: f64 },
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
}

/// How a boundary crossing between two grid times is detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// Sign change of `X - boundary` between consecutive steps.
    #[default]
    SignChange,
    /// Sign change, plus a Brownian-bridge crossing draw when both ends stay inside.
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dt: f64,
    pub t_max: f64,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_margin")]
    pub thin_bound_margin: f64,
    #[serde(default)]
    pub crossing: CrossingRule,
    /// Grid cells per block of the thinning bound table.
    #[serde(default = "default_block")]
    pub thin_block: usize,
}

fn default_margin() -> f64 {
    1.05
}

fn default_block() -> usize {
    16
}

/// Censoring fraction above which a report is flagged.
pub const CENSOR_LIMIT: f64 = 0.01;

/// `0.1 min(1, eps) / max|F''|`, the largest admissible step. The maximum is
/// taken over the truncation box at this eps (and over `extra` points).
pub fn step_limit(m: &PotentialModel, eps: f64, extra: &[f64]) -> f64 {
    let (lo, hi) = truncation_box(m, eps.max(1e-2), crate::measure::DEFAULT_MARGIN_K);
    let mut lf: f64 = (0..=2000)
        .map(|k| m.d2f(lo + (hi - lo) * k as f64 / 2000.0).abs())
        .fold(0.0, f64::max);
    for &x in extra {
        lf = lf.max(m.d2f(x).abs());
    }
    let scale = if eps > 0.0 { eps.min(1.0) } else { 1.0 };
    0.1 * scale / lf
}

impl McConfig {
    /// Config with the largest admissible step.
    pub fn auto(m: &PotentialModel, eps: f64, t_max: f64, replicas: usize, seed: u64) -> Self {
        Self {
            dt: step_limit(m, eps, &[]),
            t_max,
            replicas,
            seed,
            thin_bound_margin: default_margin(),
            crossing: CrossingRule::SignChange,
            thin_block: default_block(),
        }
    }

    pub fn with_crossing(mut self, c: CrossingRule) -> Self {
        self.crossing = c;
        self
    }

    pub fn with_replicas(mut self, n: usize) -> Self {
        self.replicas = n;
        self
    }

    pub fn with_t_max(mut self, t: f64) -> Self {
        self.t_max = t;
        self
    }

    pub fn validate(&self, m: &PotentialModel, eps: f64, extra: &[f64]) -> Result<(), SimulateError> {
        if !(self.dt > 0.0) || !(self.t_max > 0.0) {
            return Err(SimulateError::InvalidConfig("dt and t_max must be positive".into()));
        }
        if self.replicas == 0 {
            return Err(SimulateError::InvalidConfig("replicas must be at least 1".into()));
        }
        if !(self.thin_bound_margin >= 1.0) || self.thin_block == 0 {
            return Err(SimulateError::InvalidConfig("thin_bound_margin >= 1 and thin_block >= 1 required".into()));
        }
        if eps < 0.0 {
            return Err(SimulateError::InvalidConfig("eps must be nonnegative".into()));
        }
        let limit = step_limit(m, eps, extra);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(SimulateError::StepTooLarge { dt: self.dt, limit });
        }
        Ok(())
    }

    fn steps(&self) -> u64 {
        (self.t_max / self.dt).ceil() as u64
    }
}

/// Summary of one Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimate: f64,
    pub std_error: f64,
    pub replicas_used: usize,
    pub test_statistic: Option<f64>,
    pub censored_fraction: f64,
    /// Set when more than 1% of the paths were censored.
    pub flagged: bool,
}

impl McReport {
    fn new(estimate: f64, std_error: f64, replicas_used: usize, censored: usize, total: usize) -> Self {
        let censored_fraction = if total == 0 { 0.0 } else { censored as f64 / total as f64 };
        Self {
            estimate,
            std_error,
            replicas_used,
            test_statistic: None,
            censored_fraction,
            flagged: censored_fraction > CENSOR_LIMIT,
        }
    }

    pub fn exact(v: f64) -> Self {
        Self::new(v, 0.0, 0, 0, 0)
    }

    /// Turn a flagged report into an error.
    pub fn ensure_uncensored(self) -> Result<Self, SimulateError> {
        if self.flagged {
            Err(SimulateError::Censored { fraction: self.censored_fraction })
        } else {
            Ok(self)
        }
    }
}

/// RNG of replica `i`.
pub fn replica_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

/// One Euler-Maruyama step with standard normal `z`.
#[inline]
pub fn em_step(m: &PotentialModel, x: f64, dt: f64, noise: f64, z: f64) -> f64 {
    x - m.df(x) * dt + noise * z
}

/// A single path (replica 0) sampled at every step up to `t_max`.
pub fn sde_path(m: &PotentialModel, eps: f64, x0: f64, cfg: &McConfig) -> Result<Vec<f64>, SimulateError> {
    cfg.validate(m, eps, &[x0])?;
    let mut rng = replica_rng(cfg.seed, 0);
    let noise = (2.0 * eps * cfg.dt).sqrt();
    let mut path = Vec::with_capacity(cfg.steps() as usize + 1);
    let mut x = x0;
    path.push(x);
    for _ in 0..cfg.steps() {
        let z: f64 = if eps > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        x = em_step(m, x, cfg.dt, noise, z);
        path.push(x);
    }
    Ok(path)
}

/// `X(t)` for every replica started at `x0`.
pub fn sde_terminal(m: &PotentialModel, eps: f64, x0: f64, t: f64, cfg: &McConfig) -> Result<Vec<f64>, SimulateError> {
    cfg.validate(m, eps, &[x0])?;
    let steps = (t / cfg.dt).round() as u64;
    let noise = (2.0 * eps * cfg.dt).sqrt();
    Ok((0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(cfg.seed, i);
            let mut x = x0;
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(m, x, cfg.dt, noise, z);
            }
            x
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

/// Outcome of one exit problem: the time and the side, or `None` when censored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exit {
    pub time: f64,
    pub side: Option<Side>,
}

/// Run one path from `x` until it leaves `(lo, hi)`; either end may be infinite.
pub fn exit_interval<R: Rng>(m: &PotentialModel, eps: f64, x: f64, lo: f64, hi: f64, cfg: &McConfig, rng: &mut R) -> Exit {
    if x <= lo {
        return Exit { time: 0.0, side: Some(Side::Low) };
    }
    if x >= hi {
        return Exit { time: 0.0, side: Some(Side::High) };
    }
    let dt = cfg.dt;
    let noise = (2.0 * eps * dt).sqrt();
    let bridge = cfg.crossing == CrossingRule::BrownianBridge;
    let scale = eps * dt;
    let mut x = x;
    for k in 1..=cfg.steps() {
        let z: f64 = rng.sample(StandardNormal);
        let next = em_step(m, x, dt, noise, z);
        let t = k as f64 * dt;
        if next <= lo {
            return Exit { time: t, side: Some(Side::Low) };
        }
        if next >= hi {
            return Exit { time: t, side: Some(Side::High) };
        }
        if bridge {
            // P(bridge crosses c) = exp(-(x - c)(next - c) / (eps dt)) for sigma^2 = 2 eps
            for (c, side) in [(lo, Side::Low), (hi, Side::High)] {
                if c.is_finite() {
                    let q = (x - c) * (next - c) / scale;
                    if q < 40.0 && rng.random::<f64>() < (-q).exp() {
                        return Exit { time: t, side: Some(side) };
                    }
                }
            }
        }
        x = next;
    }
    Exit { time: cfg.t_max, side: None }
}

fn exits<F>(cfg: &McConfig, start: F) -> Vec<Exit>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Exit + Sync,
{
    (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(cfg.seed, i);
            start(i, &mut rng)
        })
        .collect()
}

/// First-passage times with the raw sample.
#[derive(Debug, Clone)]
pub struct FirstPassage {
    /// Mean of the uncensored times.
    pub report: McReport,
    pub times: Vec<f64>,
}

/// Mean first-passage time from `start` into `target = (a, b)`.
pub fn hitting_time(
    m: &PotentialModel,
    eps: f64,
    start: f64,
    target: (f64, f64),
    cfg: &McConfig,
) -> Result<FirstPassage, SimulateError> {
    cfg.validate(m, eps, &[start])?;
    let (a, b) = target;
    if !(a < b) {
        return Err(SimulateError::InvalidConfig("target must satisfy a < b".into()));
    }
    if a < start && start < b {
        return Ok(FirstPassage { report: McReport::exact(0.0), times: vec![0.0; cfg.replicas] });
    }
    let (lo, hi) = if start <= a { (f64::NEG_INFINITY, a) } else { (b, f64::INFINITY) };
    let out = exits(cfg, |_, rng| exit_interval(m, eps, start, lo, hi, cfg, rng));
    let times: Vec<f64> = out.iter().filter(|e| e.side.is_some()).map(|e| e.time).collect();
    let (mean, se) = mean_se(&times);
    let report = McReport::new(mean, se, times.len(), out.len() - times.len(), out.len());
    Ok(FirstPassage { report, times })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitPointReport {
    /// Estimate of the probability of leaving through the higher end.
    pub report: McReport,
    pub higher_end: Side,
    /// `|F(a) - F(b)|`.
    pub delta_f: f64,
    /// `-eps ln p`.
    pub neg_eps_log_p: f64,
    pub gamma: f64,
    /// `[exp(-(dF + gamma)/eps), exp(-(dF - gamma)/eps)]`.
    pub band: (f64, f64),
    pub in_band: bool,
}

/// Probability of leaving `(a, b)` at its higher-potential end.
pub fn exit_point_probability(
    m: &PotentialModel,
    eps: f64,
    interval: (f64, f64),
    start: f64,
    gamma: f64,
    cfg: &McConfig,
) -> Result<ExitPointReport, SimulateError> {
    cfg.validate(m, eps, &[start, interval.0, interval.1])?;
    let (a, b) = interval;
    if !(a < start && start < b) {
        return Err(SimulateError::InvalidConfig("start must lie inside the interval".into()));
    }
    let wells = [m.x0, m.x1].iter().filter(|&&w| a < w && w < b).count();
    if wells != 1 || (a < m.saddle && m.saddle < b) {
        return Err(SimulateError::InvalidConfig("interval must bracket exactly one minimum".into()));
    }
    let (fa, fb) = (m.f(a), m.f(b));
    if fa == fb {
        return Err(SimulateError::InvalidConfig("F(a) = F(b)".into()));
    }
    let higher_end = if fb > fa { Side::High } else { Side::Low };
    let out = exits(cfg, |_, rng| exit_interval(m, eps, start, a, b, cfg, rng));
    let done: Vec<f64> = out
        .iter()
        .filter(|e| e.side.is_some())
        .map(|e| if e.side == Some(higher_end) { 1.0 } else { 0.0 })
        .collect();
    let (p, se) = mean_se(&done);
    let report = McReport::new(p, se, done.len(), out.len() - done.len(), out.len());
    let delta_f = (fa - fb).abs();
    let band = ((-(delta_f + gamma) / eps).exp(), (-(delta_f - gamma) / eps).exp());
    Ok(ExitPointReport {
        report,
        higher_end,
        delta_f,
        neg_eps_log_p: -eps * p.ln(),
        gamma,
        band,
        in_band: band.0 <= p && p <= band.1,
    })
}

#[derive(Debug, Clone)]
pub struct QsdReport {
    pub lambda: f64,
    /// Survival estimates at the probe times.
    pub survival: Vec<(f64, McReport)>,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub exit_times: Vec<f64>,
}

/// Start from the quasi-stationary law (density proportional to `|eta| exp(-F/eps)`
/// left of the nodal point) and record survival until the nodal point is hit.
pub fn quasistationary_survival(
    s: &SpectralSolution,
    gm: &GridMeasure,
    m: &PotentialModel,
    times: &[f64],
    cfg: &McConfig,
) -> Result<QsdReport, SimulateError> {
    let eps = gm.eps;
    cfg.validate(m, eps, &[])?;
    let r = s.nodal_point;
    let dens: Vec<f64> = gm
        .x
        .iter()
        .zip(&s.eta)
        .zip(&gm.log_weights)
        .map(|((&x, e), lw)| if x < r { e.abs() * lw.exp() } else { 0.0 })
        .collect();
    let law = GridDistribution::new(&gm.x, &dens);
    let out = exits(cfg, |_, rng| {
        let x = law.quantile(rng.random::<f64>());
        exit_interval(m, eps, x, f64::NEG_INFINITY, r, cfg, rng)
    });
    let n = out.len();
    let censored = out.iter().filter(|e| e.side.is_none()).count();
    let survival = times
        .iter()
        .map(|&t| {
            let alive: Vec<f64> = out.iter().map(|e| if e.side.is_none() || e.time > t { 1.0 } else { 0.0 }).collect();
            let (p, _) = mean_se(&alive);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            (t, McReport::new(p, se, n, censored, n))
        })
        .collect();
    let mut sample: Vec<f64> = out.iter().map(|e| if e.side.is_some() { e.time } else { f64::INFINITY }).collect();
    let lambda = s.lambda1;
    let ks = ks_statistic(&mut sample, |t| if t.is_finite() { 1.0 - (-lambda * t).exp() } else { 1.0 });
    Ok(QsdReport {
        lambda,
        survival,
        ks_statistic: ks,
        ks_critical: ks_critical_1pct(n),
        exit_times: sample,
    })
}

/// `P^y(reach inner before r)` for `inner = (c - w, c + w)` left of `r`.
pub fn committor(
    m: &PotentialModel,
    eps: f64,
    y: f64,
    inner: (f64, f64),
    r: f64,
    cfg: &McConfig,
) -> Result<McReport, SimulateError> {
    cfg.validate(m, eps, &[y])?;
    if !(inner.1 < r) {
        return Err(SimulateError::InvalidConfig("inner set must lie left of r".into()));
    }
    if y >= r {
        return Ok(McReport::exact(0.0));
    }
    if y <= inner.1 {
        return Ok(McReport::exact(1.0));
    }
    let out = exits(cfg, |_, rng| exit_interval(m, eps, y, inner.1, r, cfg, rng));
    let done: Vec<f64> = out
        .iter()
        .filter(|e| e.side.is_some())
        .map(|e| if e.side == Some(Side::Low) { 1.0 } else { 0.0 })
        .collect();
    let (h, se) = mean_se(&done);
    Ok(McReport::new(h, se, done.len(), out.len() - done.len(), out.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommittorPoint {
    pub y: f64,
    pub h: McReport,
    /// `|eta(y)| / |eta(x0 + eps_tilde)|`.
    pub phi: f64,
    pub ratio: f64,
    /// `h <= phi (1 + tol)`.
    pub bound_holds: bool,
}

/// Committor against the eigenfunction shape at each probe `y`, with
/// `inner = (x0 - eps_tilde, x0 + eps_tilde)` and `r` the nodal point.
pub fn committor_shape(
    s: &SpectralSolution,
    gm: &GridMeasure,
    m: &PotentialModel,
    eps_tilde: f64,
    ys: &[f64],
    tol: f64,
    cfg: &McConfig,
) -> Result<Vec<CommittorPoint>, SimulateError> {
    let inner = (m.x0 - eps_tilde, m.x0 + eps_tilde);
    let anchor = gm.interpolate(&s.eta, inner.1).abs();
    ys.iter()
        .enumerate()
        .map(|(k, &y)| {
            let c = McConfig { seed: cfg.seed.wrapping_add(k as u64), ..*cfg };
            let h = committor(m, gm.eps, y, inner, s.nodal_point, &c)?;
            let phi = gm.interpolate(&s.eta, y).abs() / anchor;
            Ok(CommittorPoint {
                y,
                h,
                phi,
                ratio: h.estimate / phi,
                bound_holds: h.estimate <= phi * (1.0 + tol),
            })
        })
        .collect()
}

/// Jump intensities of the coupled chain and their per-block bounds.
#[derive(Debug, Clone)]
pub struct Thinning<'a> {
    cs: &'a CouplingSpec,
    gm: &'a GridMeasure,
    block: usize,
    /// `bounds[i][b]`: bound for leaving state `i` while X is in block `b`.
    bounds: [Vec<f64>; 2],
}

impl<'a> Thinning<'a> {
    pub fn new(cs: &'a CouplingSpec, gm: &'a GridMeasure, margin: f64, block: usize) -> Self {
        let n = gm.len();
        let cells = n - 1;
        let nblocks = cells.div_ceil(block);
        let table = |i: usize| -> Vec<f64> {
            let (from, to) = (cs.alpha(i), cs.alpha(1 - i));
            let q = cs.q[i][1 - i];
            (0..nblocks)
                .map(|b| {
                    let (s, e) = (b * block, ((b + 1) * block).min(cells));
                    let worst = (s..=e)
                        .map(|k| if from[k] > 0.0 { to[k] / from[k] } else { f64::INFINITY })
                        .fold(0.0, f64::max);
                    margin * q * worst
                })
                .collect()
        };
        Self { cs, gm, block, bounds: [table(0), table(1)] }
    }

    /// `Q_{i,1-i} alpha_{1-i}(x) / alpha_i(x)`, linear interpolation on the grid.
    #[inline]
    pub fn intensity(&self, i: usize, x: f64) -> f64 {
        let from = self.gm.interpolate(self.cs.alpha(i), x);
        let to = self.gm.interpolate(self.cs.alpha(1 - i), x);
        if from > 0.0 {
            self.cs.q[i][1 - i] * to / from
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    pub fn bound(&self, i: usize, x: f64) -> f64 {
        self.bounds[i][self.gm.cell(x) / self.block]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ThinStats {
    candidates: u64,
    accepted: u64,
}

/// Advance the chain over one step with X frozen at `x`. Jump times (relative
/// to the step start) are pushed to `jumps`.
fn chain_step<R: Rng>(
    th: &Thinning<'_>,
    x: f64,
    y: &mut usize,
    dt: f64,
    rng: &mut R,
    stats: &mut ThinStats,
    mut on_jump: impl FnMut(f64),
) -> Result<(), SimulateError> {
    let mut left = dt;
    loop {
        let rate = th.intensity(*y, x);
        let bound = th.bound(*y, x);
        if rate > bound {
            return Err(SimulateError::ThinningBoundExceeded { state: *y, x, rate, bound });
        }
        let lam = if bound.is_finite() { bound } else { rate };
        if lam.is_infinite() {
            *y = 1 - *y;
            stats.candidates += 1;
            stats.accepted += 1;
            on_jump(dt - left);
            continue;
        }
        if lam <= 0.0 {
            return Ok(());
        }
        let e: f64 = rng.sample::<f64, _>(Exp1) / lam;
        if e > left {
            return Ok(());
        }
        left -= e;
        stats.candidates += 1;
        if rng.random::<f64>() * lam < rate {
            stats.accepted += 1;
            *y = 1 - *y;
            on_jump(dt - left);
        }
    }
}

/// One realization of `(X, Y)` from the initial law.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    pub x: Vec<f64>,
    pub y: Vec<u8>,
    pub jump_times: Vec<f64>,
    /// Accepted over proposed thinning candidates.
    pub acceptance: f64,
}

pub fn coupled_path(
    cs: &CouplingSpec,
    law: &InitialLaw,
    gm: &GridMeasure,
    m: &PotentialModel,
    cfg: &McConfig,
) -> Result<CoupledPath, SimulateError> {
    let eps = gm.eps;
    cfg.validate(m, eps, &[])?;
    let th = Thinning::new(cs, gm, cfg.thin_bound_margin, cfg.thin_block);
    let mut rng = replica_rng(cfg.seed, 0);
    let (mut x, mut y) = law.sample(&mut rng);
    let noise = (2.0 * eps * cfg.dt).sqrt();
    let steps = cfg.steps();
    let mut xs = Vec::with_capacity(steps as usize + 1);
    let mut ys = Vec::with_capacity(steps as usize + 1);
    let mut jumps = Vec::new();
    let mut stats = ThinStats::default();
    xs.push(x);
    ys.push(y as u8);
    for k in 0..steps {
        let t0 = k as f64 * cfg.dt;
        chain_step(&th, x, &mut y, cfg.dt, &mut rng, &mut stats, |s| jumps.push(t0 + s))?;
        let z: f64 = rng.sample(StandardNormal);
        x = em_step(m, x, cfg.dt, noise, z);
        xs.push(x);
        ys.push(y as u8);
    }
    Ok(CoupledPath {
        x: xs,
        y: ys,
        jump_times: jumps,
        acceptance: if stats.candidates == 0 { 1.0 } else { stats.accepted as f64 / stats.candidates as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLawReport {
    pub t: f64,
    pub state: usize,
    pub count: usize,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRate {
    pub state: usize,
    pub jumps: u64,
    pub occupation: f64,
    pub rate: f64,
    pub std_error: f64,
    pub expected: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledEnsemble {
    pub laws: Vec<ConditionalLawReport>,
    pub rates: [EmpiricalRate; 2],
    /// Largest accepted/proposed ratio over replicas; never above 1.
    pub max_acceptance: f64,
}

/// Run replicas from the initial law up to the last probe time; at each probe
/// compare the law of `X(t)` given `Y(t) = j` with `alpha_j dpi`, and pool
/// jump counts into empirical chain rates.
pub fn coupled_ensemble(
    cs: &CouplingSpec,
    law: &InitialLaw,
    gm: &GridMeasure,
    m: &PotentialModel,
    probe_times: &[f64],
    cfg: &McConfig,
) -> Result<CoupledEnsemble, SimulateError> {
    let eps = gm.eps;
    cfg.validate(m, eps, &[])?;
    let th = Thinning::new(cs, gm, cfg.thin_bound_margin, cfg.thin_block);
    let noise = (2.0 * eps * cfg.dt).sqrt();
    let t_end = probe_times.iter().copied().fold(0.0, f64::max);
    if !(t_end > 0.0) || probe_times.iter().any(|t| *t < 0.0) {
        return Err(SimulateError::InvalidConfig("probe times must be nonnegative with a positive maximum".into()));
    }
    let probe_steps: Vec<u64> = probe_times.iter().map(|t| (t / cfg.dt).round() as u64).collect();
    let steps = (t_end / cfg.dt).round() as u64;
    struct Rep {
        snaps: Vec<(f64, usize)>,
        jumps: [u64; 2],
        occ: [f64; 2],
        acc: f64,
    }
    let reps: Result<Vec<Rep>, SimulateError> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(cfg.seed, i);
            let (mut x, mut y) = law.sample(&mut rng);
            let mut snaps = vec![(0.0, 0); probe_steps.len()];
            let mut jumps = [0u64; 2];
            let mut occ = [0.0; 2];
            let mut stats = ThinStats::default();
            for (p, &ps) in probe_steps.iter().enumerate() {
                if ps == 0 {
                    snaps[p] = (x, y);
                }
            }
            for k in 1..=steps {
                let mut last = 0.0;
                let mut seg = [0.0; 2];
                let mut cur = y;
                chain_step(&th, x, &mut y, cfg.dt, &mut rng, &mut stats, |s| {
                    seg[cur] += s - last;
                    jumps[cur] += 1;
                    last = s;
                    cur = 1 - cur;
                })?;
                seg[cur] += cfg.dt - last;
                occ[0] += seg[0];
                occ[1] += seg[1];
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(m, x, cfg.dt, noise, z);
                for (p, &ps) in probe_steps.iter().enumerate() {
                    if ps == k {
                        snaps[p] = (x, y);
                    }
                }
            }
            let acc = if stats.candidates == 0 { 0.0 } else { stats.accepted as f64 / stats.candidates as f64 };
            Ok(Rep { snaps, jumps, occ, acc })
        })
        .collect();
    let reps = reps?;
    let mut laws = Vec::new();
    for (p, &t) in probe_times.iter().enumerate() {
        for j in 0..2 {
            let mut sample: Vec<f64> = reps.iter().map(|r| r.snaps[p]).filter(|s| s.1 == j).map(|s| s.0).collect();
            let count = sample.len();
            let ks = if count > 0 { ks_statistic(&mut sample, |x| law.conditional_cdf(j, x)) } else { f64::NAN };
            let crit = ks_critical_1pct(count.max(1));
            laws.push(ConditionalLawReport { t, state: j, count, ks_statistic: ks, ks_critical: crit, pass: ks < crit });
        }
    }
    let rate = |j: usize| {
        let jumps: u64 = reps.iter().map(|r| r.jumps[j]).sum();
        let occ = pairwise_sum(&reps.iter().map(|r| r.occ[j]).collect::<Vec<_>>());
        let rate = jumps as f64 / occ;
        EmpiricalRate {
            state: j,
            jumps,
            occupation: occ,
            rate,
            std_error: rate / (jumps.max(1) as f64).sqrt(),
            expected: cs.q[j][1 - j],
        }
    };
    Ok(CoupledEnsemble {
        laws,
        rates: [rate(0), rate(1)],
        max_acceptance: reps.iter().map(|r| r.acc).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct HoldingReport {
    pub state: usize,
    /// Mean first holding time.
    pub report: McReport,
    pub expected_mean: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub samples: Vec<f64>,
}

/// First holding time in state `j` from `Y(0) = j`, `X(0) ~ alpha_j dpi`.
/// The chain is Markov with generator Q, so this is exponential with rate `a_j`.
pub fn holding_times(
    cs: &CouplingSpec,
    law: &InitialLaw,
    gm: &GridMeasure,
    m: &PotentialModel,
    state: usize,
    cfg: &McConfig,
) -> Result<HoldingReport, SimulateError> {
    let eps = gm.eps;
    cfg.validate(m, eps, &[])?;
    let th = Thinning::new(cs, gm, cfg.thin_bound_margin, cfg.thin_block);
    let noise = (2.0 * eps * cfg.dt).sqrt();
    let steps = cfg.steps();
    let out: Result<Vec<Option<f64>>, SimulateError> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(cfg.seed, i);
            let mut x = law.sample_given(state, &mut rng);
            let mut y = state;
            let mut stats = ThinStats::default();
            for k in 0..steps {
                let mut first = None;
                chain_step(&th, x, &mut y, cfg.dt, &mut rng, &mut stats, |s| {
                    first.get_or_insert(s);
                })?;
                if let Some(s) = first {
                    return Ok(Some(k as f64 * cfg.dt + s));
                }
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(m, x, cfg.dt, noise, z);
            }
            Ok(None)
        })
        .collect();
    let out = out?;
    let mut samples: Vec<f64> = out.iter().flatten().copied().collect();
    let (mean, se) = mean_se(&samples);
    let rate = cs.q[state][1 - state];
    let report = McReport::new(mean, se, samples.len(), out.len() - samples.len(), out.len());
    let ks = ks_statistic(&mut samples, |t| 1.0 - (-rate * t).exp());
    Ok(HoldingReport {
        state,
        report,
        expected_mean: 1.0 / rate,
        ks_statistic: ks,
        ks_critical: ks_critical_1pct(out.len()),
        samples,
    })
}

/// One CSV row of a Monte Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub op: String,
    pub eps: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
    pub statistic: Option<f64>,
    pub flag: String,
}

impl McRow {
    pub fn from_report(op: &str, eps: f64, r: &McReport) -> Self {
        Self {
            op: op.to_string(),
            eps,
            estimate: r.estimate,
            std_error: r.std_error,
            n: r.replicas_used,
            statistic: r.test_statistic,
            flag: if r.flagged { "censored".into() } else { "ok".into() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{build_validated, PolynomialSpec};

    fn quartic() -> PotentialModel {
        build_validated(&PolynomialSpec::new(vec![0.0, 0.2, -0.5, 0.0, 0.25]), 1e-10).unwrap()
    }

    #[test]
    fn step_guard() {
        let m = quartic();
        let cfg = McConfig::auto(&m, 0.25, 1.0, 1, 1);
        assert!(cfg.validate(&m, 0.25, &[]).is_ok());
        let big = McConfig { dt: cfg.dt * 2.0, ..cfg };
        assert!(matches!(big.validate(&m, 0.25, &[]), Err(SimulateError::StepTooLarge { .. })));
    }

    #[test]
    fn gradient_flow_reaches_its_well() {
        let m = quartic();
        let cfg = McConfig::auto(&m, 0.0, 40.0, 1, 0);
        let left = sde_path(&m, 0.0, -0.05, &cfg).unwrap();
        let right = sde_path(&m, 0.0, 0.05, &cfg).unwrap();
        assert!((left.last().unwrap() - m.x0).abs() < 1e-6);
        assert!((right.last().unwrap() - m.x1).abs() < 1e-6);
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let m = quartic();
        let cfg = McConfig::auto(&m, 0.3, 50.0, 64, 7);
        let a = hitting_time(&m, 0.3, m.x1, (m.x0 - 0.2, m.x0 + 0.2), &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| hitting_time(&m, 0.3, m.x1, (m.x0 - 0.2, m.x0 + 0.2), &cfg).unwrap());
        assert_eq!(a.times, b.times);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn immediate_cases() {
        let m = quartic();
        let cfg = McConfig::auto(&m, 0.3, 10.0, 8, 1);
        let r = hitting_time(&m, 0.3, m.x0, (m.x0 - 0.1, m.x0 + 0.1), &cfg).unwrap();
        assert_eq!(r.report.estimate, 0.0);
        let inner = (m.x0 - 0.1, m.x0 + 0.1);
        assert_eq!(committor(&m, 0.3, m.x0, inner, -0.3, &cfg).unwrap().estimate, 1.0);
        assert_eq!(committor(&m, 0.3, -0.3, inner, -0.3, &cfg).unwrap().estimate, 0.0);
    }

    #[test]
    fn censoring_is_flagged() {
        let m = quartic();
        let cfg = McConfig::auto(&m, 0.1, 0.5, 32, 3);
        let r = hitting_time(&m, 0.1, m.x1, (m.x0 - 0.1, m.x0 + 0.1), &cfg).unwrap();
        assert!(r.report.flagged);
        assert!(matches!(r.report.ensure_uncensored(), Err(SimulateError::Censored { .. })));
    }
}
