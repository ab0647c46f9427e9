//! Lowest eigenpairs of the generator `A f = eps f'' - F' f'` on a Gibbs grid.
//!
//! The zero-flux finite-volume operator is self-adjoint with respect to the
//! trapezoid node masses. Its symmetrized form is kept as an `L D L^T`
//! factorization built from local exponent differences only, so Sturm counts
//! resolve eigenvalues like `1e-12` to full relative precision. Eigenvectors
//! come from inverse iteration with the exact discrete Green's function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{eta_pairing, pairwise_sum, trapezoid_factor, GridMeasure};
use crate::potential::{PotentialModel, Well};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigen solver did not converge after {iterations} iterations")]
    ConvergenceFailure { iterations: usize },
    #[error("spectral gap collapsed: lambda2/lambda1 = {ratio:.3}")]
    SpectralGapCollapse { ratio: f64 },
    #[error("eigenfunction changes sign {count} times")]
    MultipleSignChanges { count: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectralWarning {
    /// `lambda2/lambda1` below the configured threshold: not yet in the metastable regime.
    GapCollapse { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Gap ratio below which a warning is raised.
    pub gap_threshold: f64,
    /// Turn the gap warning into an error.
    pub strict_gap: bool,
    pub max_iterations: usize,
    /// Relative sup-norm change that stops inverse iteration.
    pub tolerance: f64,
    /// Number of probe points for the integral identity.
    pub residual_probes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_threshold: 10.0,
            strict_gap: false,
            max_iterations: 500,
            tolerance: 1e-13,
            residual_probes: 64,
        }
    }
}

/// The pair `(0, 1)` and `(lambda1, eta)` with diagnostics.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub eps: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub x: Vec<f64>,
    /// Normalized so that `int eta^2 dpi = 1`, positive on the right.
    pub eta: Vec<f64>,
    /// `eta_i - eta_0`, accumulated from the left without cancellation.
    pub left_increments: Vec<f64>,
    /// `eta_{n-1} - eta_i`, accumulated from the right.
    pub right_increments: Vec<f64>,
    pub nodal_point: f64,
    pub eta_left: f64,
    pub eta_right: f64,
    /// Max deviation in the right-anchored integral identity over the probes.
    pub residual: f64,
    /// Rayleigh quotient of the final iterate.
    pub rayleigh: f64,
    pub iterations: usize,
    pub warnings: Vec<SpectralWarning>,
}

impl SpectralSolution {
    /// True when every grid increment of eta is positive.
    pub fn is_increasing(&self) -> bool {
        self.eta.windows(2).all(|w| w[1] > w[0])
    }

    pub fn sup_norm(&self) -> f64 {
        self.eta.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn gap_ratio(&self) -> f64 {
        self.lambda2 / self.lambda1
    }
}

/// Finite-volume data of the generator on one grid.
#[derive(Debug, Clone)]
pub struct Operator {
    eps: f64,
    h: f64,
    /// F at the nodes and at the cell midpoints.
    f: Vec<f64>,
    fm: Vec<f64>,
    /// `L D L^T` of the symmetrized negative generator.
    d: Vec<f64>,
    l: Vec<f64>,
}

impl Operator {
    pub fn new(gm: &GridMeasure, m: &PotentialModel) -> Self {
        let n = gm.len();
        let (eps, h) = (gm.eps, gm.h);
        let f = gm.f.clone();
        let fm: Vec<f64> = (0..n - 1).map(|i| m.f(gm.x[i] + 0.5 * h)).collect();
        let scale = eps / (h * h);
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n - 1];
        for i in 0..n - 1 {
            d[i] = scale * (-(fm[i] - f[i]) / eps).exp() / trapezoid_factor(i, n);
            l[i] = -(trapezoid_factor(i, n) / trapezoid_factor(i + 1, n)).sqrt()
                * (-(f[i] - f[i + 1]) / (2.0 * eps)).exp();
        }
        Self { eps, h, f, fm, d, l }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Diagonal and off-diagonal of the symmetrized negative generator.
    pub fn symmetric(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let diag: Vec<f64> = (0..n)
            .map(|i| self.d[i] + if i > 0 { self.l[i - 1].powi(2) * self.d[i - 1] } else { 0.0 })
            .collect();
        let off: Vec<f64> = (0..n - 1).map(|i| self.l[i] * self.d[i]).collect();
        (diag, off)
    }

    /// Rows of the generator itself: `(lower, diag, upper)` with
    /// `(A u)_i = lower_i u_{i-1} + diag_i u_i + upper_i u_{i+1}`.
    pub fn generator_rows(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.len();
        let scale = self.eps / (self.h * self.h);
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let t = trapezoid_factor(i, n);
            if i + 1 < n {
                upper[i] = scale * (-(self.fm[i] - self.f[i]) / self.eps).exp() / t;
            }
            if i > 0 {
                lower[i] = scale * (-(self.fm[i - 1] - self.f[i]) / self.eps).exp() / t;
            }
        }
        let diag: Vec<f64> = (0..n).map(|i| -(lower[i] + upper[i])).collect();
        (lower, diag, upper)
    }

    /// Number of eigenvalues strictly below `sigma` (stationary qd transform).
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.len();
        let mut count = 0;
        let mut s = -sigma;
        for i in 0..n - 1 {
            let mut dp = self.d[i] + s;
            if dp == 0.0 {
                dp = -f64::MIN_POSITIVE;
            }
            if dp < 0.0 {
                count += 1;
            }
            let t = self.d[i] * self.l[i] * self.l[i] / dp;
            s = if t.is_finite() { t * s - sigma } else { -sigma };
        }
        if self.d[n - 1] + s < 0.0 {
            count += 1;
        }
        count
    }

    /// Gershgorin upper bound of the spectrum.
    pub fn upper_bound(&self) -> f64 {
        let (diag, off) = self.symmetric();
        let n = diag.len();
        (0..n)
            .map(|i| {
                diag[i]
                    + if i > 0 { off[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { off[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }

    /// The `k`-th eigenvalue (`k = 0` is the zero mode) by geometric bisection.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, SpectralError> {
        if k == 0 {
            // d_{n-1} = 0 in the LDL^T factors: the constants are an exact null vector
            return Ok(0.0);
        }
        let mut hi = self.upper_bound() * (1.0 + 1e-12);
        let mut lo = hi * 1e-250;
        if self.count_below(lo) > k {
            return Err(SpectralError::ConvergenceFailure { iterations: 0 });
        }
        let mut it = 0;
        while hi / lo - 1.0 > 4e-16 {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            it += 1;
            if it > 4000 {
                return Err(SpectralError::ConvergenceFailure { iterations: it });
            }
        }
        Ok((lo * hi).sqrt())
    }

    /// Increments `u_{i+1} - u_i` of the solution of `-A u = g`, where
    /// `sum mu_i g_i = 0`. The flux through each face is the prefix mass sum
    /// up to the sign change of `g` and the negated suffix sum after it.
    fn green_increments(&self, g: &[f64]) -> Vec<f64> {
        let n = self.len();
        let eps = self.eps;
        let (f, fm) = (&self.f, &self.fm);
        let switch = g.iter().position(|&v| v >= 0.0).unwrap_or(n);
        let mut r = vec![0.0; n - 1];
        let mut acc = 0.0;
        for i in 0..switch.min(n - 1) {
            let carry = if i > 0 { acc * ((fm[i] - fm[i - 1]) / eps).exp() } else { 0.0 };
            acc = carry + trapezoid_factor(i, n) * ((fm[i] - f[i]) / eps).exp() * g[i];
            r[i] = acc;
        }
        let mut acc = 0.0;
        for i in (switch.min(n - 1)..n - 1).rev() {
            let carry = if i + 2 < n { acc * ((fm[i] - fm[i + 1]) / eps).exp() } else { 0.0 };
            acc = carry + trapezoid_factor(i + 1, n) * ((fm[i] - f[i + 1]) / eps).exp() * g[i + 1];
            r[i] = -acc;
        }
        let c = self.h * self.h / eps;
        r.iter().map(|v| -c * v).collect()
    }

    /// Rayleigh quotient `<u, -A u> / <u, u>` in the trapezoid inner product,
    /// from increments and node values.
    fn rayleigh(&self, gm: &GridMeasure, incr: &[f64], u: &[f64]) -> f64 {
        let n = self.len();
        let shift = gm.log_shift;
        let num: Vec<f64> = (0..n - 1)
            .map(|i| (-self.fm[i] / self.eps - shift).exp() * incr[i] * incr[i])
            .collect();
        let den: Vec<f64> = (0..n)
            .map(|i| trapezoid_factor(i, n) * gm.log_weights[i].exp() * u[i] * u[i])
            .collect();
        self.eps / (self.h * self.h) * pairwise_sum(&num) / pairwise_sum(&den)
    }
}

struct Iterate {
    u: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    incr: Vec<f64>,
}

/// One Green solve: mean-zero solution, normalized and sign-fixed.
fn green_step(op: &Operator, gm: &GridMeasure, g: &[f64]) -> Iterate {
    let n = op.len();
    let incr = op.green_increments(g);
    let mut left = vec![0.0; n];
    for i in 0..n - 1 {
        left[i + 1] = left[i] + incr[i];
    }
    let mut right = vec![0.0; n];
    for i in (0..n - 1).rev() {
        right[i] = right[i + 1] + incr[i];
    }
    let weighted: Vec<f64> = gm.pi.iter().zip(&left).map(|(p, d)| p * d).collect();
    let u0 = -pairwise_sum(&weighted);
    let mut u: Vec<f64> = left.iter().map(|d| u0 + d).collect();
    let sq: Vec<f64> = gm.pi.iter().zip(&u).map(|(p, v)| p * v * v).collect();
    let mut norm = pairwise_sum(&sq).sqrt();
    if u[n - 1] < 0.0 {
        norm = -norm;
    }
    for v in u.iter_mut() {
        *v /= norm;
    }
    let left = left.iter().map(|v| v / norm).collect();
    let right = right.iter().map(|v| v / norm).collect();
    let incr = incr.iter().map(|v| v / norm).collect();
    Iterate { u, left, right, incr }
}

pub fn solve(gm: &GridMeasure, m: &PotentialModel) -> Result<SpectralSolution, SpectralError> {
    solve_with(gm, m, &SolveOptions::default())
}

pub fn solve_with(gm: &GridMeasure, m: &PotentialModel, opts: &SolveOptions) -> Result<SpectralSolution, SpectralError> {
    let op = Operator::new(gm, m);
    let n = op.len();
    let lambda1 = op.eigenvalue(1)?;
    let lambda2 = op.eigenvalue(2)?;
    let ratio = lambda2 / lambda1;
    let mut warnings = Vec::new();
    if ratio < opts.gap_threshold {
        if opts.strict_gap {
            return Err(SpectralError::SpectralGapCollapse { ratio });
        }
        warnings.push(SpectralWarning::GapCollapse { ratio });
    }

    // start from a mean-zero step across the saddle
    let step: Vec<f64> = gm.x.iter().map(|&x| if x < m.saddle { -1.0 } else { 1.0 }).collect();
    let mean = gm.integrate(&step).unwrap_or(0.0);
    let mut g: Vec<f64> = step.iter().map(|v| v - mean).collect();
    let mut it = green_step(&op, gm, &g);
    let mut iterations = 1;
    loop {
        g.clone_from(&it.u);
        let next = green_step(&op, gm, &g);
        iterations += 1;
        let scale = next.u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let change = next.u.iter().zip(&it.u).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        it = next;
        if change <= opts.tolerance * scale {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(SpectralError::ConvergenceFailure { iterations });
        }
    }
    let rayleigh = op.rayleigh(gm, &it.incr, &it.u);
    let nodal_point = zero_crossing(&gm.x, &it.u)?;
    let mut sol = SpectralSolution {
        eps: gm.eps,
        lambda0: 0.0,
        lambda1,
        lambda2,
        x: gm.x.clone(),
        eta_left: it.u[0],
        eta_right: it.u[n - 1],
        eta: it.u,
        left_increments: it.left,
        right_increments: it.right,
        nodal_point,
        residual: 0.0,
        rayleigh,
        iterations,
        warnings,
    };
    sol.residual = integral_residual_probes(&sol, gm, opts.residual_probes);
    Ok(sol)
}

fn zero_crossing(x: &[f64], u: &[f64]) -> Result<f64, SpectralError> {
    let crossings: Vec<usize> = (0..u.len() - 1).filter(|&i| (u[i] > 0.0) != (u[i + 1] > 0.0)).collect();
    if crossings.len() != 1 {
        return Err(SpectralError::MultipleSignChanges { count: crossings.len() });
    }
    let i = crossings[0];
    Ok(x[i] - u[i] * (x[i + 1] - x[i]) / (u[i + 1] - u[i]))
}

/// Linear-interpolation zero of eta.
pub fn nodal_point(s: &SpectralSolution) -> Result<f64, SpectralError> {
    zero_crossing(&s.x, &s.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodalReport {
    pub r_eps: f64,
    pub xi_star: f64,
    pub delta: f64,
    /// `r_eps` lies in `(xi_star - delta, delta)`.
    pub inside: bool,
}

pub fn nodal_report(s: &SpectralSolution, m: &PotentialModel, delta: f64) -> Result<NodalReport, SpectralError> {
    let r = nodal_point(s)?;
    let xi = m.xi_star();
    Ok(NodalReport {
        r_eps: r,
        xi_star: xi,
        delta,
        inside: xi - delta < r && r < delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRatio {
    pub observed: f64,
    pub predicted: f64,
    pub ratio: f64,
}

/// Observed `eta(inf)/|eta(-inf)|` against `sqrt(F''(x1)/F''(x0)) exp((F(x1)-F(x0))/eps)`.
pub fn tail_ratio(s: &SpectralSolution, m: &PotentialModel) -> TailRatio {
    let observed = s.eta_right / s.eta_left.abs();
    let predicted = (m.d2f(m.x1) / m.d2f(m.x0)).sqrt() * ((m.f(m.x1) - m.f(m.x0)) / s.eps).exp();
    TailRatio {
        observed,
        predicted,
        ratio: observed / predicted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub x_star: f64,
    /// `sup_{x <= x_star} |1 - eta(x)/eta(-inf)|` over grid points.
    pub sup: f64,
    /// `F(0) - F(x1) - F(x_star) + F(x0)`.
    pub exponent: f64,
    /// C with `sup = (C/eps) exp(-exponent/eps)`.
    pub fitted_c: f64,
}

pub fn tail_flatness(s: &SpectralSolution, m: &PotentialModel, x_star: f64) -> Result<FlatnessReport, SpectralError> {
    let exponent = m.barrier(Well::Shallow) - (m.f(x_star) - m.f(m.x0));
    if !(m.x0 < x_star && x_star < m.saddle) || exponent <= 0.0 {
        return Err(SpectralError::PreconditionViolated(format!(
            "x_star={x_star} must lie in (x0, 0) below the shallow barrier level"
        )));
    }
    let k = s.x.partition_point(|&x| x <= x_star);
    if k == 0 {
        return Err(SpectralError::PreconditionViolated("x_star left of the grid".into()));
    }
    let sup = s.left_increments[k - 1] / s.eta_left.abs();
    Ok(FlatnessReport {
        x_star,
        sup,
        exponent,
        fitted_c: sup * s.eps * (exponent / s.eps).exp(),
    })
}

/// Max deviation in the identity
/// `eta(x) = eta(inf) - (lambda/eps) int_x^inf int_x^u exp((F(v)-F(u))/eps) eta(u) dv du`
/// over evenly spaced probe nodes.
pub fn identity_residual(x: &[f64], f: &[f64], eps: f64, lambda: f64, eta: &[f64], probes: usize) -> f64 {
    let n = x.len();
    let h = x[1] - x[0];
    let probes = probes.clamp(1, n);
    let mut worst: f64 = 0.0;
    for q in 0..probes {
        let p = if probes == 1 { 0 } else { q * (n - 1) / (probes - 1) };
        let mut k = 0.0;
        let mut terms = Vec::with_capacity(n - p);
        for j in p..n - 1 {
            let a = (f[j] - f[j + 1]) / eps;
            let cell = if a.abs() < 1e-12 { h } else { h * a.exp_m1() / a };
            let k_next = k * a.exp() + cell;
            terms.push(0.5 * h * (k * eta[j] + k_next * eta[j + 1]));
            k = k_next;
        }
        let integral = pairwise_sum(&terms);
        let rhs = eta[n - 1] - lambda / eps * integral;
        worst = worst.max((eta[p] - rhs).abs());
    }
    worst
}

fn integral_residual_probes(s: &SpectralSolution, gm: &GridMeasure, probes: usize) -> f64 {
    identity_residual(&gm.x, &gm.f, s.eps, s.lambda1, &s.eta, probes)
}

/// Residual of the right-anchored integral identity at 64 probes.
pub fn integral_residual(s: &SpectralSolution, gm: &GridMeasure) -> f64 {
    integral_residual_probes(s, gm, SolveOptions::default().residual_probes)
}

/// Residual of the left-anchored (mirrored) identity.
pub fn integral_residual_mirrored(s: &SpectralSolution, gm: &GridMeasure) -> f64 {
    let x: Vec<f64> = gm.x.iter().rev().map(|v| -v).collect();
    let f: Vec<f64> = gm.f.iter().rev().copied().collect();
    let eta: Vec<f64> = s.eta.iter().rev().copied().collect();
    identity_residual(&x, &f, s.eps, s.lambda1, &eta, SolveOptions::default().residual_probes)
}

/// Pairing `int 1_{(-inf,0)} eta dpi / eta(-inf)`.
pub fn left_pairing_ratio(s: &SpectralSolution, gm: &GridMeasure) -> f64 {
    eta_pairing(gm, &s.eta, crate::measure::indicator_left).unwrap_or(f64::NAN) / s.eta_left
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyringKramers {
    pub lambda_ek: f64,
    /// `lambda1 / lambda_ek`.
    pub ratio: f64,
    /// Predicted mean exit times from the deep and the shallow well.
    pub exit_time_deep: f64,
    pub exit_time_shallow: f64,
}

/// `(|F''(0) F''(x1)|^{1/2} / 2 pi) exp(-(F(0) - F(x1))/eps)`.
pub fn eyring_kramers_rate(m: &PotentialModel, eps: f64) -> f64 {
    (m.d2f(m.saddle) * m.d2f(m.x1)).abs().sqrt() / (2.0 * std::f64::consts::PI)
        * (-m.barrier(Well::Shallow) / eps).exp()
}

/// `2 pi / |F''(0) F''(x_j)|^{1/2} exp((F(0) - F(x_j))/eps)`.
pub fn predicted_exit_time(m: &PotentialModel, eps: f64, from: Well) -> f64 {
    let xj = m.minimum(from);
    2.0 * std::f64::consts::PI / (m.d2f(m.saddle) * m.d2f(xj)).abs().sqrt() * (m.barrier(from) / eps).exp()
}

pub fn eyring_kramers(s: &SpectralSolution, m: &PotentialModel) -> EyringKramers {
    let lambda_ek = eyring_kramers_rate(m, s.eps);
    EyringKramers {
        lambda_ek,
        ratio: s.lambda1 / lambda_ek,
        exit_time_deep: predicted_exit_time(m, s.eps, Well::Deep),
        exit_time_shallow: predicted_exit_time(m, s.eps, Well::Shallow),
    }
}

/// One CSV row of the spectral sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralRow {
    pub eps: f64,
    pub lambda1: f64,
    pub lambda_ek: f64,
    pub ratio: f64,
    pub r_eps: f64,
    pub xi_star: f64,
    pub eta_left: f64,
    pub eta_right: f64,
    pub tail_ratio_obs: f64,
    pub tail_ratio_pred: f64,
    pub residual: f64,
}

pub fn spectral_row(s: &SpectralSolution, m: &PotentialModel) -> SpectralRow {
    let ek = eyring_kramers(s, m);
    let tr = tail_ratio(s, m);
    SpectralRow {
        eps: s.eps,
        lambda1: s.lambda1,
        lambda_ek: ek.lambda_ek,
        ratio: ek.ratio,
        r_eps: s.nodal_point,
        xi_star: if m.is_double_well() { m.xi_star() } else { f64::NAN },
        eta_left: s.eta_left,
        eta_right: s.eta_right,
        tail_ratio_obs: tr.observed,
        tail_ratio_pred: tr.predicted,
        residual: s.residual,
    }
}
