//! One-dimensional double-well potentials.
//!
//! A [`PotentialModel`] is stored in normalized coordinates: the interior
//! maximum sits at the origin and the deeper minimum lies to its left. The map
//! back to user coordinates is `x_user = shift + orientation * x`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("malformed polynomial spec: {0}")]
    MalformedSpec(String),
    #[error("expected 3 interior critical points (min, max, min), found {count}")]
    NotDoubleWell { count: usize },
    #[error("well depths agree to tolerance: |F(x0) - F(x1)| = {diff:e}")]
    EqualDepths { diff: f64 },
    #[error("degenerate Hessian at critical point {x}: F''={d2f:e}")]
    DegenerateHessian { x: f64, d2f: f64 },
    #[error("growth exponents violate a1 > 2 and a2 < 2*a1 - 2 (a1={a1}, a2={a2})")]
    GrowthViolation { a1: f64, a2: f64 },
    #[error("growth bound fails at x={x}: |F'|^2={value:e} outside [{lower:e}, {upper:e}]")]
    GrowthBoundFails { x: f64, value: f64, lower: f64, upper: f64 },
    #[error("minima labels inconsistent with depths: F(x0)={f_x0}, F(x1)={f_x1}")]
    OrderingViolated { f_x0: f64, f_x1: f64 },
}

/// Polynomial in ascending-degree coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial { coeffs: vec![0.0] };
        }
        Polynomial {
            coeffs: self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(k, c)| c * (k + 1) as f64)
                .collect(),
        }
    }

    /// Coefficients of `p(s + x)` (Taylor shift by repeated synthetic division).
    pub fn translated(&self, s: f64) -> Polynomial {
        let mut c = self.coeffs.clone();
        let n = c.len();
        for i in 0..n {
            for j in (i..n - 1).rev() {
                c[j] += s * c[j + 1];
            }
        }
        Polynomial { coeffs: c }
    }

    /// Coefficients of `p(-x)`.
    pub fn reflected(&self) -> Polynomial {
        Polynomial {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| if k % 2 == 1 { -c } else { c })
                .collect(),
        }
    }

    /// Cauchy bound: every real root lies in `[-r, r]`.
    pub fn cauchy_bound(&self) -> f64 {
        let lead = self.leading();
        let n = self.coeffs.len();
        1.0 + self.coeffs[..n - 1]
            .iter()
            .map(|c| (c / lead).abs())
            .fold(0.0, f64::max)
    }
}

/// Input description of a polynomial potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    /// Ascending-degree coefficients.
    pub coeffs: Vec<f64>,
    /// Bounding box for the critical-point scan; defaults to the Cauchy root bound of F'.
    #[serde(default)]
    pub scan_box: Option<[f64; 2]>,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
}

fn default_scan_points() -> usize {
    10_000
}

impl PolynomialSpec {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            scan_box: None,
            scan_points: default_scan_points(),
        }
    }

    pub fn with_scan_box(mut self, lo: f64, hi: f64) -> Self {
        self.scan_box = Some([lo, hi]);
        self
    }

    fn well_formed(&self) -> Result<Polynomial, PotentialError> {
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PotentialError::MalformedSpec("non-finite coefficient".into()));
        }
        let p = Polynomial::new(self.coeffs.clone());
        let d = p.degree();
        if d < 2 || d % 2 == 1 {
            return Err(PotentialError::MalformedSpec(format!(
                "degree must be even and at least 2, got {d}"
            )));
        }
        if p.leading() <= 0.0 {
            return Err(PotentialError::MalformedSpec("leading coefficient must be positive".into()));
        }
        if self.scan_points < 3 {
            return Err(PotentialError::MalformedSpec("scan_points must be at least 3".into()));
        }
        if let Some([lo, hi]) = self.scan_box {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(PotentialError::MalformedSpec("scan_box must satisfy lo < hi".into()));
            }
        }
        Ok(p)
    }
}

/// Witness constants for the growth bounds
/// `c1|x|^a1 - c2 <= |F'(x)|^2 <= c3|x|^a2 + c4` and
/// `c1t|x|^a1t - c2t <= |F(x)| <= c3t|x|^a2t + c4t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub a1: f64,
    pub a2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub a1t: f64,
    pub a2t: f64,
    pub c1t: f64,
    pub c2t: f64,
    pub c3t: f64,
    pub c4t: f64,
    /// Outside `|x| > core_radius` the bounds hold with `c2 = c4 = c2t = c4t = 0`.
    pub core_radius: f64,
}

impl GrowthConstants {
    /// Analytic witnesses for a polynomial of even degree `d >= 4`.
    ///
    /// Outside the core radius every lower-order term is at most 29% of the
    /// leading one, so the squared ratio stays inside `[1/2, 2]`.
    pub fn for_polynomial(p: &Polynomial) -> Self {
        let d = p.degree() as f64;
        let lead = p.leading();
        let dp = p.derivative();
        let dlead = dp.leading();
        let lower_dp: f64 = dp.coeffs[..dp.coeffs.len() - 1].iter().map(|c| c.abs()).sum();
        let lower_p: f64 = p.coeffs[..p.coeffs.len() - 1].iter().map(|c| c.abs()).sum();
        let r1 = (lower_dp / (0.29 * dlead)).max(1.0);
        let r2 = (lower_p / (0.29 * lead)).max(1.0);
        let core_radius = r1.max(r2);
        let a1 = 2.0 * (d - 1.0);
        let c1 = 0.5 * dlead * dlead;
        let c3 = 2.0 * dlead * dlead;
        let abs_dp_sup: f64 = dp
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * core_radius.powi(k as i32))
            .sum();
        let abs_p_sup: f64 = p
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * core_radius.powi(k as i32))
            .sum();
        Self {
            a1,
            a2: a1,
            c1,
            c2: c1 * core_radius.powf(a1),
            c3,
            c4: abs_dp_sup * abs_dp_sup,
            a1t: d,
            a2t: d,
            c1t: 0.5 * lead,
            c2t: 0.5 * lead * core_radius.powf(d),
            c3t: 2.0 * lead,
            c4t: abs_p_sup,
            core_radius,
        }
    }

    pub fn exponents_ok(&self) -> bool {
        self.a1 > 2.0 && self.a2 < 2.0 * self.a1 - 2.0
    }

    /// Lower and upper bound for `|F'(x)|^2`.
    pub fn gradient_bounds(&self, x: f64) -> (f64, f64) {
        let ax = x.abs();
        (
            self.c1 * ax.powf(self.a1) - self.c2,
            self.c3 * ax.powf(self.a2) + self.c4,
        )
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Poly {
        f: Polynomial,
        df: Polynomial,
        d2f: Polynomial,
    },
    Callable {
        f: ScalarFn,
        df: ScalarFn,
        d2f: ScalarFn,
        shift: f64,
        orientation: f64,
    },
}

/// Shape class of a model. Single wells are kept for solver sanity checks only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    DoubleWell,
    SingleWell,
}

/// Which minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Well {
    Deep,
    Shallow,
}

impl Well {
    pub fn index(self) -> usize {
        match self {
            Well::Deep => 0,
            Well::Shallow => 1,
        }
    }

    pub fn other(self) -> Well {
        match self {
            Well::Deep => Well::Shallow,
            Well::Shallow => Well::Deep,
        }
    }
}

/// Validated double-well potential in normalized coordinates.
#[derive(Clone)]
pub struct PotentialModel {
    repr: Repr,
    pub shape: Shape,
    /// Deeper minimum.
    pub x0: f64,
    /// Shallower minimum.
    pub x1: f64,
    /// Interior maximum; 0 by construction.
    pub saddle: f64,
    pub growth: Option<GrowthConstants>,
    /// User coordinate of the normalized origin.
    pub shift: f64,
    /// `+1` or `-1`; `-1` when the user's deeper well was on the right.
    pub orientation: f64,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialModel")
            .field("shape", &self.shape)
            .field("x0", &self.x0)
            .field("x1", &self.x1)
            .field("saddle", &self.saddle)
            .field("shift", &self.shift)
            .field("orientation", &self.orientation)
            .field("polynomial", &self.polynomial().map(|p| p.coeffs.clone()))
            .finish()
    }
}

/// Barrier heights returned by [`check_ordering`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `F(0) - F(x1)`.
    pub shallow_barrier: f64,
    /// `F(0) - F(x0)`.
    pub deep_barrier: f64,
}

impl OrderingReport {
    pub fn depth_gap(&self) -> f64 {
        self.deep_barrier - self.shallow_barrier
    }
}

impl PotentialModel {
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Poly { f, .. } => f.eval(x),
            Repr::Callable { f, shift, orientation, .. } => f(shift + orientation * x),
        }
    }

    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Poly { df, .. } => df.eval(x),
            Repr::Callable { df, shift, orientation, .. } => orientation * df(shift + orientation * x),
        }
    }

    #[inline]
    pub fn d2f(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Poly { d2f, .. } => d2f.eval(x),
            Repr::Callable { d2f, shift, orientation, .. } => d2f(shift + orientation * x),
        }
    }

    /// Normalized-coordinate polynomial, if the model was built from one.
    pub fn polynomial(&self) -> Option<&Polynomial> {
        match &self.repr {
            Repr::Poly { f, .. } => Some(f),
            Repr::Callable { .. } => None,
        }
    }

    pub fn is_double_well(&self) -> bool {
        self.shape == Shape::DoubleWell
    }

    pub fn minimum(&self, w: Well) -> f64 {
        match w {
            Well::Deep => self.x0,
            Well::Shallow => self.x1,
        }
    }

    /// `F(0) - F(x_j)`.
    pub fn barrier(&self, w: Well) -> f64 {
        self.f(self.saddle) - self.f(self.minimum(w))
    }

    pub fn to_user(&self, x: f64) -> f64 {
        self.shift + self.orientation * x
    }

    pub fn from_user(&self, u: f64) -> f64 {
        (u - self.shift) * self.orientation
    }

    /// Level the truncated grid has to reach at both ends.
    pub fn top_level(&self) -> f64 {
        self.f(self.saddle)
    }

    /// Point `xi*` in `(x0, 0)` with `F(xi*) - F(x0) = F(0) - F(x1)`.
    pub fn xi_star(&self) -> f64 {
        let target = self.f(self.x0) + self.barrier(Well::Shallow);
        bisect(|x| self.f(x) - target, self.x0, self.saddle, 200)
    }

    /// `L(eps) = sqrt(F''(x1)/F''(x0)) exp(-(F(x1) - F(x0))/eps)`.
    pub fn tail_scale(&self, eps: f64) -> f64 {
        (self.d2f(self.x1) / self.d2f(self.x0)).sqrt()
            * (-(self.f(self.x1) - self.f(self.x0)) / eps).exp()
    }

    /// Same model with the minima labels exchanged; only useful to exercise
    /// [`check_ordering`].
    pub fn with_swapped_labels(&self) -> PotentialModel {
        let mut m = self.clone();
        std::mem::swap(&mut m.x0, &mut m.x1);
        m
    }

    /// Single-well model with its minimum moved to the origin. Used as a solver
    /// sanity case (for example the Ornstein-Uhlenbeck potential).
    pub fn single_well(coeffs: Vec<f64>) -> Result<PotentialModel, PotentialError> {
        let spec = PolynomialSpec::new(coeffs);
        let p = spec.well_formed()?;
        let dp = p.derivative();
        let r = dp.cauchy_bound();
        let crit = critical_points(|x| dp.eval(x), -r, r, spec.scan_points);
        if crit.len() != 1 {
            return Err(PotentialError::NotDoubleWell { count: crit.len() });
        }
        let s = crit[0];
        let p = p.translated(s);
        let growth = (p.degree() >= 4).then(|| GrowthConstants::for_polynomial(&p));
        Ok(PotentialModel {
            repr: poly_repr(p),
            shape: Shape::SingleWell,
            x0: 0.0,
            x1: 0.0,
            saddle: 0.0,
            growth,
            shift: s,
            orientation: 1.0,
        })
    }

    /// Double well from user-supplied closures. Growth constants cannot be
    /// derived, so the caller's witnesses are spot-checked on `scan_box`.
    pub fn from_callables(
        f: ScalarFn,
        df: ScalarFn,
        d2f: ScalarFn,
        scan_box: [f64; 2],
        scan_points: usize,
        growth: GrowthConstants,
        tol: f64,
    ) -> Result<PotentialModel, PotentialError> {
        if !growth.exponents_ok() {
            return Err(PotentialError::GrowthViolation { a1: growth.a1, a2: growth.a2 });
        }
        let [lo, hi] = scan_box;
        let crit = critical_points(|x| df(x), lo, hi, scan_points.max(3));
        let (xa, s, xb) = classify_critical(&crit, |x| d2f(x), tol)?;
        let (fa, fb) = (f(xa), f(xb));
        if (fa - fb).abs() <= tol {
            return Err(PotentialError::EqualDepths { diff: (fa - fb).abs() });
        }
        let orientation = if fa < fb { 1.0 } else { -1.0 };
        let (x0, x1) = if orientation > 0.0 { (xa - s, xb - s) } else { (s - xb, s - xa) };
        for k in 0..=200 {
            let x = lo + (hi - lo) * k as f64 / 200.0;
            let g2 = df(x).powi(2);
            let (l, u) = growth.gradient_bounds(x);
            let slack = 1e-9 * (1.0 + g2.abs());
            if g2 < l - slack || g2 > u + slack {
                return Err(PotentialError::GrowthBoundFails { x, value: g2, lower: l, upper: u });
            }
        }
        Ok(PotentialModel {
            repr: Repr::Callable { f, df, d2f, shift: s, orientation },
            shape: Shape::DoubleWell,
            x0,
            x1,
            saddle: 0.0,
            growth: Some(growth),
            shift: s,
            orientation,
        })
    }
}

fn poly_repr(p: Polynomial) -> Repr {
    let df = p.derivative();
    let d2f = df.derivative();
    Repr::Poly { f: p, df, d2f }
}

/// Bisection on a sign change; `f(lo)` and `f(hi)` must have opposite signs.
pub(crate) fn bisect<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64, max_iter: usize) -> f64 {
    let mut glo = g(lo);
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sign scan of `dg` on `[lo, hi]` followed by bisection of each bracket.
fn critical_points<G: Fn(f64) -> f64>(dg: G, lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    let mut roots = Vec::new();
    let mut prev_x = lo;
    let mut prev = dg(lo);
    if prev == 0.0 {
        roots.push(lo);
    }
    for k in 1..points {
        let x = if k == points - 1 { hi } else { lo + step * k as f64 };
        let v = dg(x);
        if v == 0.0 {
            roots.push(x);
        } else if prev != 0.0 && (v < 0.0) != (prev < 0.0) {
            roots.push(bisect(&dg, prev_x, x, 200));
        }
        prev_x = x;
        prev = v;
    }
    roots
}

fn classify_critical<H: Fn(f64) -> f64>(
    crit: &[f64],
    d2: H,
    tol: f64,
) -> Result<(f64, f64, f64), PotentialError> {
    if crit.len() != 3 {
        return Err(PotentialError::NotDoubleWell { count: crit.len() });
    }
    for &x in crit {
        let v = d2(x);
        if v.abs() <= tol {
            return Err(PotentialError::DegenerateHessian { x, d2f: v });
        }
    }
    let signs: Vec<bool> = crit.iter().map(|&x| d2(x) > 0.0).collect();
    if signs != [true, false, true] {
        return Err(PotentialError::NotDoubleWell { count: crit.len() });
    }
    Ok((crit[0], crit[1], crit[2]))
}

/// Validate a polynomial double well and normalize it: saddle at 0, deeper
/// minimum on the left.
pub fn build_validated(spec: &PolynomialSpec, tol: f64) -> Result<PotentialModel, PotentialError> {
    if !(tol > 0.0) {
        return Err(PotentialError::MalformedSpec("tol must be positive".into()));
    }
    let p = spec.well_formed()?;
    let dp = p.derivative();
    let d2p = dp.derivative();
    let [lo, hi] = spec.scan_box.unwrap_or_else(|| {
        let r = dp.cauchy_bound();
        [-r, r]
    });
    let crit = critical_points(|x| dp.eval(x), lo, hi, spec.scan_points);
    let (xa, s, xb) = classify_critical(&crit, |x| d2p.eval(x), tol)?;
    let (fa, fb) = (p.eval(xa), p.eval(xb));
    if (fa - fb).abs() <= tol {
        return Err(PotentialError::EqualDepths { diff: (fa - fb).abs() });
    }
    let growth = GrowthConstants::for_polynomial(&p);
    if !growth.exponents_ok() {
        return Err(PotentialError::GrowthViolation { a1: growth.a1, a2: growth.a2 });
    }
    let mut q = p.translated(s);
    let orientation = if fa < fb { 1.0 } else { -1.0 };
    let (x0, x1) = if orientation > 0.0 {
        (xa - s, xb - s)
    } else {
        q = q.reflected();
        (s - xb, s - xa)
    };
    let growth = GrowthConstants::for_polynomial(&q);
    let model = PotentialModel {
        repr: poly_repr(q),
        shape: Shape::DoubleWell,
        x0,
        x1,
        saddle: 0.0,
        growth: Some(growth),
        shift: s,
        orientation,
    };
    check_monotone_pieces(&model, lo, hi, spec.scan_points)?;
    Ok(model)
}

/// Sampled check that F' keeps its sign on each of the four monotone pieces.
fn check_monotone_pieces(m: &PotentialModel, lo: f64, hi: f64, points: usize) -> Result<(), PotentialError> {
    let (a, b) = if m.orientation > 0.0 {
        (m.from_user(lo), m.from_user(hi))
    } else {
        (m.from_user(hi), m.from_user(lo))
    };
    let knots = [m.x0, m.saddle, m.x1];
    for k in 0..points {
        let x = a + (b - a) * k as f64 / (points - 1) as f64;
        if knots.iter().any(|&c| (x - c).abs() < 1e-9) {
            continue;
        }
        let expected = if x < m.x0 || (x > m.saddle && x < m.x1) { -1.0 } else { 1.0 };
        let v = m.df(x);
        if v != 0.0 && v.signum() != expected {
            return Err(PotentialError::NotDoubleWell { count: 5 });
        }
    }
    Ok(())
}

/// Communication height: the maximum of F on the segment between `a` and `b`.
pub fn communication_height(m: &PotentialModel, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut top = m.f(lo).max(m.f(hi));
    if m.is_double_well() && lo < m.saddle && m.saddle < hi {
        top = top.max(m.f(m.saddle));
    }
    top
}

/// Verify that the deeper well carries the label `x0` and report both barriers.
pub fn check_ordering(m: &PotentialModel) -> Result<OrderingReport, PotentialError> {
    let (f0, f1) = (m.f(m.x0), m.f(m.x1));
    if !(f0 < f1) {
        return Err(PotentialError::OrderingViolated { f_x0: f0, f_x1: f1 });
    }
    let top = m.f(m.saddle);
    Ok(OrderingReport {
        shallow_barrier: top - f1,
        deep_barrier: top - f0,
    })
}

/// Quasipotential of the gradient system: twice the total uphill gain met
/// along the segment from `x` to `y`.
pub fn quasipotential(m: &PotentialModel, x: f64, y: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let mut knots: Vec<f64> = if m.is_double_well() {
        vec![m.x0, m.saddle, m.x1]
    } else {
        vec![m.saddle]
    };
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    knots.retain(|&c| lo < c && c < hi);
    if x > y {
        knots.reverse();
    }
    let mut total = 0.0;
    let mut prev = m.f(x);
    for p in knots.into_iter().chain(std::iter::once(y)) {
        let v = m.f(p);
        total += (v - prev).max(0.0);
        prev = v;
    }
    2.0 * total
}
