//! Reference computations that share no code with the library.
#![allow(dead_code)]

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Composite Simpson on `n` (even) panels; used where a fixed cost is wanted.
pub fn simpson_n<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Root of `g` on a sign-changing bracket.
pub fn bisect<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Quartic `a x^4 + b x^2 + c x` as a closure triple.
#[derive(Clone, Copy, Debug)]
pub struct Quartic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quartic {
    pub fn f(&self, x: f64) -> f64 {
        self.a * x.powi(4) + self.b * x * x + self.c * x
    }
    pub fn df(&self, x: f64) -> f64 {
        4.0 * self.a * x.powi(3) + 2.0 * self.b * x + self.c
    }
    pub fn coeffs(&self) -> Vec<f64> {
        vec![0.0, self.c, self.b, 0.0, self.a]
    }
    /// Critical points in increasing order by dense scan plus bisection.
    pub fn critical_points(&self) -> Vec<f64> {
        let r = 10.0;
        let n = 200_000;
        let mut out = Vec::new();
        let mut prev = self.df(-r);
        for k in 1..=n {
            let x = -r + 2.0 * r * k as f64 / n as f64;
            let v = self.df(x);
            if (v > 0.0) != (prev > 0.0) {
                out.push(bisect(|y| self.df(y), x - 2.0 * r / n as f64, x));
            }
            prev = v;
        }
        out
    }
}

/// Max of `f` along `[a, b]` by dense sampling.
pub fn dense_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (0..=20_000).map(|k| f(lo + (hi - lo) * k as f64 / 20_000.0)).fold(f64::NEG_INFINITY, f64::max)
}

/// Sum of the positive increments of `f` walking from `x` to `y`.
pub fn dense_uphill<F: Fn(f64) -> f64>(f: F, x: f64, y: f64) -> f64 {
    let n = 100_000;
    let mut prev = f(x);
    let mut total = 0.0;
    for k in 1..=n {
        let v = f(x + (y - x) * k as f64 / n as f64);
        total += (v - prev).max(0.0);
        prev = v;
    }
    total
}

/// `P^x(exit (a, b) at b)` for `dX = -F' dt + sqrt(2 eps) dW`.
pub fn exit_at_b<F: Fn(f64) -> f64>(f: &F, eps: f64, a: f64, b: f64, x: f64) -> f64 {
    let top = dense_max(f, a, b);
    let w = |y: f64| ((f(y) - top) / eps).exp();
    simpson(&w, a, x, 1e-13) / simpson(&w, a, b, 1e-13)
}

/// Mean time to reach `b > x` from `x`, reflecting far to the left at `lo`.
pub fn mfpt_right<F: Fn(f64) -> f64 + Copy>(f: F, eps: f64, lo: f64, x: f64, b: f64) -> f64 {
    let n = 4000;
    let h = (b - lo) / n as f64;
    // inner integral of exp(-(F(z) - F(y))/eps) accumulated on a grid
    let xs: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
    let fmin = xs.iter().map(|&z| f(z)).fold(f64::INFINITY, f64::min);
    let mut inner = vec![0.0; n + 1];
    for k in 1..=n {
        let (za, zb) = (xs[k - 1], xs[k]);
        let g = |z: f64| (-(f(z) - fmin) / eps).exp();
        inner[k] = inner[k - 1] + simpson_n(&g, za, zb, 8);
    }
    let outer = |k: usize| ((f(xs[k]) - fmin) / eps).exp() * inner[k];
    let k0 = ((x - lo) / h).round() as usize;
    let mut s = 0.0;
    for k in k0..n {
        s += 0.5 * h * (outer(k) + outer(k + 1));
    }
    s / eps
}
