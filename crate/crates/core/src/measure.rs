//! Gibbs measures on a truncated uniform grid, plus Laplace-method asymptotics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::{bisect, Polynomial, PotentialModel, Well};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("eps must be positive, got {0}")]
    EpsilonNonPositive(f64),
    #[error("grid too coarse: n={n}, h^2 max|F''|/eps = {indicator:.3e}")]
    GridTooCoarse { n: usize, indicator: f64 },
    #[error("F' vanishes or points the wrong way at {x} (F'={df:e})")]
    DerivativeVanishes { x: f64, df: f64 },
    #[error("gridded function has {got} values, grid has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Anything with a potential and two derivatives.
pub trait Landscape {
    fn f(&self, x: f64) -> f64;
    fn df(&self, x: f64) -> f64;
    fn d2f(&self, x: f64) -> f64;
}

impl Landscape for PotentialModel {
    fn f(&self, x: f64) -> f64 {
        PotentialModel::f(self, x)
    }
    fn df(&self, x: f64) -> f64 {
        PotentialModel::df(self, x)
    }
    fn d2f(&self, x: f64) -> f64 {
        PotentialModel::d2f(self, x)
    }
}

impl Landscape for Polynomial {
    fn f(&self, x: f64) -> f64 {
        self.eval(x)
    }
    fn df(&self, x: f64) -> f64 {
        self.derivative().eval(x)
    }
    fn d2f(&self, x: f64) -> f64 {
        self.derivative().derivative().eval(x)
    }
}

pub const DEFAULT_MARGIN_K: f64 = 15.0;
pub const DEFAULT_N: usize = 4000;

/// Gibbs weights `exp(-F/eps)` on a uniform grid, stored as shifted logs.
#[derive(Debug, Clone)]
pub struct GridMeasure {
    pub x: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    /// F at the nodes.
    pub f: Vec<f64>,
    /// `-(F - min F)/eps`, so every weight lies in (0, 1].
    pub log_weights: Vec<f64>,
    /// The removed shift, `-min F / eps`.
    pub log_shift: f64,
    /// `ln` of the trapezoid partition function with the shift restored.
    pub log_z: f64,
    /// Normalized trapezoid node masses: the discrete stationary law.
    pub pi: Vec<f64>,
    /// Laplace estimate of the mass cut off beyond both ends, relative to z.
    pub truncated_mass: f64,
}

impl GridMeasure {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    /// `sum pi_i g_i`.
    pub fn integrate(&self, g: &[f64]) -> Result<f64, MeasureError> {
        self.check_shape(g)?;
        Ok(pairwise_sum(&self.pi.iter().zip(g).map(|(p, v)| p * v).collect::<Vec<_>>()))
    }

    pub fn integrate_fn<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let terms: Vec<f64> = self.pi.iter().zip(&self.x).map(|(p, &x)| p * g(x)).collect();
        pairwise_sum(&terms)
    }

    pub fn check_shape(&self, g: &[f64]) -> Result<(), MeasureError> {
        if g.len() != self.x.len() {
            return Err(MeasureError::ShapeMismatch { expected: self.x.len(), got: g.len() });
        }
        Ok(())
    }

    /// Stationary-law mass of the grid after normalization, i.e. one minus the
    /// estimated truncated tail.
    pub fn coverage(&self) -> f64 {
        1.0 - self.truncated_mass
    }

    /// Index of the cell `[x_i, x_{i+1}]` that contains `x`, clamped to the grid.
    #[inline]
    pub fn cell(&self, x: f64) -> usize {
        let n = self.x.len();
        let k = ((x - self.x[0]) / self.h).floor();
        if k <= 0.0 {
            0
        } else if k >= (n - 2) as f64 {
            n - 2
        } else {
            k as usize
        }
    }

    /// Piecewise-linear interpolation of gridded values, constant beyond the ends.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return values[0];
        }
        if x >= self.x[n - 1] {
            return values[n - 1];
        }
        let i = self.cell(x);
        let t = (x - self.x[i]) / self.h;
        values[i] + t * (values[i + 1] - values[i])
    }
}

/// Ends of the truncation box: the points outside both minima where F first
/// reaches `F(0) + k eps`.
pub fn truncation_box(m: &PotentialModel, eps: f64, k: f64) -> (f64, f64) {
    let level = m.top_level() + k * eps;
    let reach = |start: f64, dir: f64| {
        let mut d = 0.125;
        while m.f(start + dir * d) < level {
            d *= 2.0;
        }
        let mut edge = bisect(|x| m.f(x) - level, start + dir * d, start, 200);
        while m.f(edge) < level {
            edge += dir * 1e-12 * (1.0 + edge.abs());
        }
        edge
    };
    (reach(m.x0, -1.0), reach(m.x1, 1.0))
}

/// Uniform grid over the truncation box with Gibbs weights.
pub fn build_grid(m: &PotentialModel, eps: f64, n: usize, margin_k: f64) -> Result<GridMeasure, MeasureError> {
    if !(eps > 0.0) {
        return Err(MeasureError::EpsilonNonPositive(eps));
    }
    let (lo, hi) = truncation_box(m, eps, margin_k);
    let h = (hi - lo) / (n.max(2) - 1) as f64;
    let x: Vec<f64> = (0..n).map(|i| if i + 1 == n { hi } else { lo + h * i as f64 }).collect();
    let max_d2 = x.iter().map(|&v| m.d2f(v).abs()).fold(0.0, f64::max);
    let indicator = h * h * max_d2 / eps;
    if n < 100 || indicator > 1.0 {
        return Err(MeasureError::GridTooCoarse { n, indicator });
    }
    let f: Vec<f64> = x.iter().map(|&v| m.f(v)).collect();
    let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let log_weights: Vec<f64> = f.iter().map(|&v| -(v - f_min) / eps).collect();
    let masses: Vec<f64> = log_weights
        .iter()
        .enumerate()
        .map(|(i, &lw)| trapezoid_factor(i, n) * lw.exp())
        .collect();
    let total = pairwise_sum(&masses);
    let pi: Vec<f64> = masses.iter().map(|v| v / total).collect();
    let log_shift = -f_min / eps;
    let log_z = (total * h).ln() + log_shift;
    // exponential tails beyond each end: integral of exp(-F/eps) ~ eps/|F'| exp(-F/eps)
    let tail = |i: usize, xe: f64| (eps / m.df(xe).abs()) * log_weights[i].exp();
    let truncated_mass = (tail(0, lo) + tail(n - 1, hi)) / (total * h);
    Ok(GridMeasure {
        x,
        h,
        eps,
        f,
        log_weights,
        log_shift,
        log_z,
        pi,
        truncated_mass,
    })
}

#[inline]
pub(crate) fn trapezoid_factor(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Pairwise summation; order-independent of thread scheduling and accurate.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// A positive number `prefactor * exp(exponent)` kept apart to avoid overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub prefactor: f64,
    pub exponent: f64,
}

impl LogValue {
    pub fn value(&self) -> f64 {
        if self.prefactor == 0.0 {
            0.0
        } else {
            self.prefactor * self.exponent.exp()
        }
    }

    /// Natural log; `-inf` for a vanishing prefactor.
    pub fn ln(&self) -> f64 {
        if self.prefactor == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.prefactor.ln() + self.exponent
        }
    }
}

/// Laplace approximation of `int g exp(-F/eps)` around an interior minimum `x_star`.
pub fn laplace_minimum<L: Landscape, G: Fn(f64) -> f64>(l: &L, g: G, x_star: f64, eps: f64) -> LogValue {
    LogValue {
        prefactor: g(x_star) * (2.0 * std::f64::consts::PI * eps / l.d2f(x_star)).sqrt(),
        exponent: -l.f(x_star) / eps,
    }
}

pub fn laplace_at_well<G: Fn(f64) -> f64>(m: &PotentialModel, g: G, which: Well, eps: f64) -> LogValue {
    laplace_minimum(m, g, m.minimum(which), eps)
}

/// Laplace approximation of `int_{x_lo}^. g exp(-F/eps)` when F increases
/// away from the left endpoint `x_lo`.
pub fn laplace_boundary<L: Landscape, G: Fn(f64) -> f64>(
    l: &L,
    g: G,
    x_lo: f64,
    eps: f64,
) -> Result<LogValue, MeasureError> {
    let d = l.df(x_lo);
    if !(d > 1e-12 * (1.0 + l.f(x_lo).abs())) {
        return Err(MeasureError::DerivativeVanishes { x: x_lo, df: d });
    }
    Ok(LogValue {
        prefactor: g(x_lo) * eps / d,
        exponent: -l.f(x_lo) / eps,
    })
}

/// `int g eta dpi` by grid quadrature.
pub fn eta_pairing<G: Fn(f64) -> f64>(gm: &GridMeasure, eta: &[f64], g: G) -> Result<f64, MeasureError> {
    gm.check_shape(eta)?;
    let terms: Vec<f64> = gm
        .x
        .iter()
        .zip(eta)
        .zip(&gm.pi)
        .map(|((&x, &e), &p)| p * g(x) * e)
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `1_{(-inf, 0)}`.
pub fn indicator_left(x: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1_{(0, inf)}`.
pub fn indicator_right(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One CSV row of the quadrature report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRow {
    pub eps: f64,
    pub z: f64,
    pub laplace_z: f64,
    pub ratio: f64,
}

/// Compare the grid partition function with the Laplace value at the deep well.
pub fn quadrature_report(m: &PotentialModel, gm: &GridMeasure) -> QuadratureRow {
    let lap = laplace_at_well(m, |_| 1.0, Well::Deep, gm.eps);
    QuadratureRow {
        eps: gm.eps,
        z: gm.z(),
        laplace_z: lap.value(),
        ratio: (gm.log_z - lap.ln()).exp(),
    }
}

/// Continuous distribution on the grid with density proportional to given
/// nonnegative node values, linear CDF inside each cell.
#[derive(Debug, Clone)]
pub struct GridDistribution {
    x0: f64,
    h: f64,
    /// `cdf[i]` is the mass left of node `i`.
    cdf: Vec<f64>,
}

impl GridDistribution {
    /// Node values are treated as trapezoid densities: cell mass is the mean of its two ends.
    pub fn new(x: &[f64], density: &[f64]) -> Self {
        let n = x.len();
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..n - 1 {
            acc += 0.5 * (density[i].max(0.0) + density[i + 1].max(0.0));
            cdf.push(acc);
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Self { x0: x[0], h: x[1] - x[0], cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.cdf.len();
        let t = (x - self.x0) / self.h;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= (n - 1) as f64 {
            return 1.0;
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF at `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, n - 1) - 1;
        let width = self.cdf[i + 1] - self.cdf[i];
        let frac = if width > 0.0 { ((u - self.cdf[i]) / width).clamp(0.0, 1.0) } else { 0.5 };
        self.x0 + self.h * (i as f64 + frac)
    }
}
