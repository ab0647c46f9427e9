//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Canonical potential `F(x) = x^4 - 2x^2 + 0.4x`. Monte Carlo criteria use
//! the Brownian-bridge crossing rule and fixed seeds.

use std::process::ExitCode;
use std::time::Instant;

use metastab::coupling::{classify, expressible_families, family, initial_law, ConditionSet, FamilyName, FamilySpec};
use metastab::measure::{build_grid, GridMeasure, DEFAULT_N};
use metastab::potential::{build_validated, PolynomialSpec, PotentialModel, Well};
use metastab::simulate::{
    committor_shape, coupled_ensemble, exit_point_probability, hitting_time, holding_times, quasistationary_survival,
    CrossingRule, McConfig,
};
use metastab::spectral::{
    eyring_kramers, identity_residual, integral_residual, left_pairing_ratio, nodal_report, solve, tail_flatness,
    tail_ratio, SpectralSolution,
};
use metastab::stats::{linear_fit, monotone_toward};

const COEFFS: [f64; 5] = [0.0, 0.4, -2.0, 0.0, 1.0];
const LADDER: [f64; 4] = [0.15, 0.10, 0.07, 0.05];
const MARGIN_K: f64 = 15.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Ctx {
    m: PotentialModel,
    ladder: Vec<(GridMeasure, SpectralSolution)>,
}

fn canonical() -> PotentialModel {
    build_validated(&PolynomialSpec::new(COEFFS.to_vec()), 1e-10).expect("canonical potential")
}

fn solved(m: &PotentialModel, eps: f64, n: usize) -> (GridMeasure, SpectralSolution) {
    let gm = build_grid(m, eps, n, MARGIN_K).expect("grid");
    let s = solve(&gm, m).expect("spectral solve");
    (gm, s)
}

fn mc(m: &PotentialModel, eps: f64, t_max: f64, replicas: usize, seed: u64) -> McConfig {
    McConfig::auto(m, eps, t_max, replicas, seed).with_crossing(CrossingRule::BrownianBridge)
}

fn c1_eyring_kramers(c: &Ctx) -> Outcome {
    let ratios: Vec<f64> = c.ladder.iter().map(|(_, s)| eyring_kramers(s, &c.m).ratio).collect();
    let stab: Vec<f64> = LADDER
        .iter()
        .zip(&c.ladder)
        .map(|(&eps, (_, s))| {
            let (_, fine) = solved(&c.m, eps, 2 * DEFAULT_N);
            (s.lambda1 - fine.lambda1).abs() / s.lambda1
        })
        .collect();
    let last = *ratios.last().unwrap();
    let worst = stab.iter().copied().fold(0.0, f64::max);
    let pass = ratios.iter().all(|r| r.is_finite())
        && monotone_toward(&ratios, 1.0)
        && (0.5..=1.5).contains(&last)
        && worst <= 1e-4;
    outcome(pass, format!("ratios {} ; max |l(n)-l(2n)|/l = {worst:.1e}", fmt_list(&ratios)))
}

fn c2_nodal(c: &Ctx) -> Outcome {
    let mut rs = Vec::new();
    let mut pass = true;
    for (eps, (_, s)) in LADDER.iter().zip(&c.ladder) {
        if *eps <= 0.10 + 1e-12 {
            let r = nodal_report(s, &c.m, 0.1).expect("nodal report");
            pass &= r.inside;
            rs.push(r.r_eps);
        }
    }
    let xi = c.m.xi_star();
    outcome(pass, format!("r_eps {} in ({:.4}, 0.1)", fmt_list(&rs), xi - 0.1))
}

fn c3_tail_ratio(c: &Ctx) -> Outcome {
    let ratios: Vec<f64> = c.ladder.iter().map(|(_, s)| tail_ratio(s, &c.m).ratio).collect();
    let last = *ratios.last().unwrap();
    let pass = (0.8..=1.25).contains(&last) && monotone_toward(&ratios, 1.0);
    outcome(pass, format!("observed/predicted {}", fmt_list(&ratios)))
}

/// Point in `(x0, 0)` where `F` sits half a shallow barrier above `F(x0)`.
fn flatness_x_star(m: &PotentialModel) -> f64 {
    let level = m.f(m.x0) + 0.5 * m.barrier(Well::Shallow);
    let (mut a, mut b) = (m.x0, m.saddle);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if m.f(mid) < level {
            a = mid;
        } else {
            b = mid;
        }
    }
    a
}

fn c4_flatness(c: &Ctx) -> Outcome {
    let xs = flatness_x_star(&c.m);
    let rungs = &c.ladder[1..];
    let reports: Vec<_> = rungs.iter().map(|(_, s)| tail_flatness(s, &c.m, xs).expect("flatness")).collect();
    let inv: Vec<f64> = rungs.iter().map(|(_, s)| 1.0 / s.eps).collect();
    let logs: Vec<f64> = reports.iter().map(|r| r.sup.ln()).collect();
    let (slope, _) = linear_fit(&inv, &logs);
    let target = -reports[0].exponent;
    let rel = (slope - target).abs() / target.abs();
    outcome(rel <= 0.2, format!("slope {slope:.4} vs {target:.4} ({:.1}% off, x_star {xs:.4})", 100.0 * rel))
}

fn c5_pairing(c: &Ctx) -> Outcome {
    let (gm, s) = c.ladder.last().unwrap();
    let ratio = left_pairing_ratio(s, gm);
    let mean = gm.integrate(&s.eta).expect("integral") / s.sup_norm();
    let pass = (0.9..=1.1).contains(&ratio) && mean.abs() <= 1e-8;
    outcome(pass, format!("pairing/eta(-inf) {ratio:.5} ; int eta dpi / |eta|_inf {mean:.1e}"))
}

fn c6_residual(c: &Ctx) -> Outcome {
    let rel: Vec<f64> = c.ladder.iter().map(|(gm, s)| integral_residual(s, gm) / s.sup_norm()).collect();
    let (gm, _) = c.ladder.last().unwrap();
    let ones = vec![1.0; gm.len()];
    let zero = identity_residual(&gm.x, &gm.f, gm.eps, 0.0, &ones, 64);
    let pass = rel.iter().all(|r| *r <= 1e-4) && zero == 0.0;
    outcome(pass, format!(
        "residual/|eta|_inf {} ; (lambda0, eta0) residual {zero:e}",
        rel.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")
    ))
}

struct Coupled {
    m: PotentialModel,
    gm: GridMeasure,
    s: SpectralSolution,
}

fn coupled_setup(m: &PotentialModel) -> Coupled {
    let (gm, s) = solved(m, 0.25, DEFAULT_N);
    Coupled { m: m.clone(), gm, s }
}

fn c7_conditional_law(c: &Coupled) -> Outcome {
    let cs = family(&FamilySpec::named(FamilyName::Fulltrack), &c.s, &c.m).expect("fulltrack coupling");
    let law = initial_law(&cs, &c.gm);
    let cfg = mc(&c.m, 0.25, 5.0, 100_000, 7);
    let e = coupled_ensemble(&cs, &law, &c.gm, &c.m, &[1.0, 5.0], &cfg).expect("coupled ensemble");
    let pass = e.laws.iter().all(|l| l.pass) && e.max_acceptance <= 1.0;
    let parts: Vec<String> = e
        .laws
        .iter()
        .map(|l| format!("t={} j={} n={} KS {:.4}/{:.4}", l.t, l.state, l.count, l.ks_statistic, l.ks_critical))
        .collect();
    outcome(pass, parts.join(" ; "))
}

fn c8_chain_marginal(c: &Coupled) -> Outcome {
    let cs = family(&FamilySpec::named(FamilyName::Fulltrack), &c.s, &c.m).expect("fulltrack coupling");
    let law = initial_law(&cs, &c.gm);
    let mut pass = true;
    let mut parts = Vec::new();
    for j in 0..2 {
        let cfg = mc(&c.m, 0.25, 1e5, 1000, 80 + j as u64);
        let h = holding_times(&cs, &law, &c.gm, &c.m, j, &cfg).expect("holding times");
        let z = (h.report.estimate - h.expected_mean).abs() / h.report.std_error;
        pass &= z <= 3.0 && h.ks_statistic < h.ks_critical && !h.report.flagged;
        parts.push(format!(
            "j={j} mean {:.2}+-{:.2} vs {:.2} ({z:.2} se), KS {:.4}/{:.4}",
            h.report.estimate, h.report.std_error, h.expected_mean, h.ks_statistic, h.ks_critical
        ));
    }
    outcome(pass, parts.join(" ; "))
}

fn c9_quasistationary(c: &Coupled) -> Outcome {
    let t1 = 1.0 / c.s.lambda1;
    let cfg = mc(&c.m, 0.25, 20.0 * t1, 10_000, 9);
    let q = quasistationary_survival(&c.s, &c.gm, &c.m, &[0.0, t1], &cfg).expect("qsd survival");
    let (_, s0) = q.survival[0];
    let (_, s1) = q.survival[1];
    let z = (s1.estimate - (-1.0f64).exp()).abs() / s1.std_error;
    let pass = s0.estimate == 1.0 && z <= 3.0 && q.ks_statistic < q.ks_critical && !s1.flagged;
    outcome(
        pass,
        format!(
            "S(1/lambda) {:.4}+-{:.4} vs e^-1 ({z:.2} se), KS {:.4}/{:.4}",
            s1.estimate, s1.std_error, q.ks_statistic, q.ks_critical
        ),
    )
}

fn c10_committor(m: &PotentialModel) -> Outcome {
    let eps = 0.2;
    let (gm, s) = solved(m, eps, DEFAULT_N);
    let eps_tilde = eps;
    let (lo, hi) = (m.x0 + eps_tilde, s.nodal_point);
    let ys: Vec<f64> = [0.35, 0.45, 0.55, 0.65, 0.8].iter().map(|t| lo + t * (hi - lo)).collect();
    let cfg = mc(m, eps, 1e4, 100_000, 10);
    let pts = committor_shape(&s, &gm, m, eps_tilde, &ys, 1e-2, &cfg).expect("committor");
    let pass = pts.iter().all(|p| p.bound_holds && !p.h.flagged);
    let band = pts.iter().map(|p| p.phi / p.h.estimate - 1.0).fold(f64::NEG_INFINITY, f64::max);
    let ratios: Vec<f64> = pts.iter().map(|p| p.ratio).collect();
    outcome(pass, format!("h/phi {} ; fitted band phi/h - 1 <= {band:.4}", fmt_list(&ratios)))
}

fn c11_exit_point(m: &PotentialModel) -> Outcome {
    let interval = (m.x0 - 0.275, m.x0 + 0.25);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, eps) in [0.25, 0.2].into_iter().enumerate() {
        let cfg = mc(m, eps, 1e4, 100_000, 110 + k as u64);
        let r = exit_point_probability(m, eps, interval, m.x0, 0.05, &cfg).expect("exit point");
        let dev = r.neg_eps_log_p - r.delta_f;
        pass &= dev.abs() <= 0.05 && r.in_band && !r.report.flagged;
        parts.push(format!("eps={eps} p {:.4} -eps ln p {:.4} vs {:.4}", r.report.estimate, r.neg_eps_log_p, r.delta_f));
    }
    outcome(pass, parts.join(" ; "))
}

fn c12_exit_slope(m: &PotentialModel) -> Outcome {
    let eps_set = [0.35, 0.3, 0.25];
    let rho = 0.3;
    let mut pass = true;
    let mut parts = Vec::new();
    for (w, replicas) in [(Well::Deep, 2000), (Well::Shallow, 4000)] {
        let (start, goal) = (m.minimum(w), m.minimum(w.other()));
        let mut inv = Vec::new();
        let mut logs = Vec::new();
        for (k, &eps) in eps_set.iter().enumerate() {
            let cfg = mc(m, eps, 1e5, replicas, 120 + k as u64);
            let r = hitting_time(m, eps, start, (goal - rho, goal + rho), &cfg).expect("hitting time");
            pass &= !r.report.flagged;
            inv.push(1.0 / eps);
            logs.push(r.report.estimate.ln());
        }
        let (slope, _) = linear_fit(&inv, &logs);
        let target = m.barrier(w);
        let rel = (slope - target).abs() / target;
        pass &= rel <= 0.1;
        parts.push(format!("{w:?} slope {slope:.4} vs {target:.4} ({:.1}%)", 100.0 * rel));
    }
    outcome(pass, parts.join(" ; "))
}

fn c13_classification() -> Outcome {
    let t = |a, b, c, d| ConditionSet { trackdeep: a, trackshallow: b, time2deep: c, time2shallow: d };
    let expected = [
        (FamilyName::Fulltrack, t(true, true, true, true)),
        (FamilyName::Neither, t(true, false, false, false)),
        (FamilyName::Time2deepOnly, t(true, false, true, false)),
        (FamilyName::ShallowNoTime2shallow, t(true, true, true, false)),
        (FamilyName::TimesNoTrackshallow, t(true, false, true, true)),
    ];
    let matrix_ok = expected
        .iter()
        .all(|(name, want)| classify(&FamilySpec::named(*name)).map(|g| g == *want).unwrap_or(false));
    let fams = expressible_families();
    let lattice_ok = fams.iter().all(|f| classify(f).map(|c| c.respects_lattice()).unwrap_or(false));
    outcome(
        matrix_ok && lattice_ok,
        format!("named families match: {matrix_ok} ; lattice over {} expressible families: {lattice_ok}", fams.len()),
    )
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn main() -> ExitCode {
    let m = canonical();
    let ctx = Ctx {
        ladder: LADDER.iter().map(|&eps| solved(&m, eps, DEFAULT_N)).collect(),
        m: m.clone(),
    };
    let coupled = coupled_setup(&m);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("eyring-kramers eigenvalue", Box::new(|| c1_eyring_kramers(&ctx))),
        ("nodal point containment", Box::new(|| c2_nodal(&ctx))),
        ("tail ratio", Box::new(|| c3_tail_ratio(&ctx))),
        ("flatness decay", Box::new(|| c4_flatness(&ctx))),
        ("pairing identity", Box::new(|| c5_pairing(&ctx))),
        ("integral-equation residual", Box::new(|| c6_residual(&ctx))),
        ("conditional law of the coupling", Box::new(|| c7_conditional_law(&coupled))),
        ("chain marginal", Box::new(|| c8_chain_marginal(&coupled))),
        ("quasi-stationary law", Box::new(|| c9_quasistationary(&coupled))),
        ("committor shape", Box::new(|| c10_committor(&m))),
        ("exit-point probability", Box::new(|| c11_exit_point(&m))),
        ("exit-time log-slope", Box::new(|| c12_exit_slope(&m))),
        ("family classification matrix", Box::new(c13_classification)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
