mod common;

use common::{exit_at_b, mfpt_right};
use metastab::coupling::{family, initial_law, validate_xi, FamilyName, FamilySpec};
use metastab::measure::build_grid;
use metastab::potential::{build_validated, PolynomialSpec, PotentialModel};
use metastab::simulate::{
    coupled_ensemble, coupled_path, exit_point_probability, hitting_time, quasistationary_survival, sde_terminal,
    step_limit, CrossingRule, McConfig, SimulateError, Thinning,
};
use metastab::spectral::solve;
use metastab::stats::mean_se;
use proptest::prelude::*;

fn canonical() -> PotentialModel {
    build_validated(&PolynomialSpec::new(vec![0.0, 0.4, -2.0, 0.0, 1.0]), 1e-10).unwrap()
}

fn bridge(m: &PotentialModel, eps: f64, t_max: f64, replicas: usize, seed: u64) -> McConfig {
    McConfig::auto(m, eps, t_max, replicas, seed).with_crossing(CrossingRule::BrownianBridge)
}

#[test]
fn ou_moments() {
    let m = PotentialModel::single_well(vec![0.0, 0.0, 0.5]).unwrap();
    let eps = 0.3;
    let mut cfg = McConfig::auto(&m, eps, 1.0, 20_000, 11);
    // a tenth of the limit keeps the Euler bias well under one standard error
    cfg.dt = step_limit(&m, eps, &[1.0]) / 10.0;
    let xs = sde_terminal(&m, eps, 1.0, 1.0, &cfg).unwrap();
    let (mean, se) = mean_se(&xs);
    assert!((mean - (-1.0f64).exp()).abs() < 3.0 * se, "mean {mean} +- {se}");
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let (var, _) = mean_se(&dev);
    let exact = eps * (1.0 - (-2.0f64).exp());
    let var_se = exact * (2.0 / xs.len() as f64).sqrt();
    assert!((var - exact).abs() < 3.0 * var_se, "var {var} vs {exact}");
}

#[test]
fn step_guard_is_enforced() {
    let m = canonical();
    let mut cfg = McConfig::auto(&m, 0.25, 1.0, 4, 1);
    cfg.dt *= 1.5;
    assert!(matches!(sde_terminal(&m, 0.25, 0.0, 1.0, &cfg), Err(SimulateError::StepTooLarge { .. })));
}

#[test]
fn exit_point_matches_the_exact_formula() {
    let m = canonical();
    let eps = 0.2;
    let (a, b) = (m.x0 - 0.4, -0.2);
    let cfg = bridge(&m, eps, 1e3, 20_000, 21);
    let r = exit_point_probability(&m, eps, (a, b), m.x0, 0.05, &cfg).unwrap();
    let p_b = exit_at_b(&|x| m.f(x), eps, a, b, m.x0);
    let exact = if m.f(b) > m.f(a) { p_b } else { 1.0 - p_b };
    let z = (r.report.estimate - exact).abs() / r.report.std_error;
    assert!(z < 3.5, "p {} vs {exact} ({z:.2} se)", r.report.estimate);
    assert!((r.neg_eps_log_p + eps * r.report.estimate.ln()).abs() < 1e-12);
}

#[test]
fn exit_point_rejects_bad_intervals() {
    let m = canonical();
    let cfg = bridge(&m, 0.25, 10.0, 4, 1);
    let spans_saddle = exit_point_probability(&m, 0.25, (m.x0 - 0.3, 0.3), m.x0, 0.05, &cfg);
    assert!(matches!(spans_saddle, Err(SimulateError::InvalidConfig(_))));
    let outside = exit_point_probability(&m, 0.25, (m.x0 - 0.3, m.x0 + 0.3), 0.5, 0.05, &cfg);
    assert!(matches!(outside, Err(SimulateError::InvalidConfig(_))));
}

#[test]
fn shallow_exit_time_matches_quadrature() {
    let m = canonical();
    let eps = 0.3;
    let rho = 0.3;
    let cfg = bridge(&m, eps, 1e4, 4000, 31);
    let r = hitting_time(&m, eps, m.x1, (m.x0 - rho, m.x0 + rho), &cfg).unwrap();
    // run the oracle to the right on the mirrored potential
    let exact = mfpt_right(|x| m.f(-x), eps, -m.x1 - 3.0, -m.x1, -(m.x0 + rho));
    let z = (r.report.estimate - exact).abs() / r.report.std_error;
    assert!(z < 3.5, "{} +- {} vs {exact}", r.report.estimate, r.report.std_error);
    let deep = hitting_time(&m, eps, m.x0, (m.x1 - rho, m.x1 + rho), &cfg.with_replicas(400)).unwrap();
    assert!(deep.report.estimate > 3.0 * r.report.estimate);
}

#[test]
fn dt_halving_moves_estimates_within_noise() {
    let m = canonical();
    let eps = 0.25;
    let (a, b) = (m.x0 - 0.275, m.x0 + 0.25);
    let coarse = bridge(&m, eps, 1e3, 20_000, 41);
    let fine = McConfig { dt: coarse.dt / 2.0, seed: 42, ..coarse };
    let p1 = exit_point_probability(&m, eps, (a, b), m.x0, 0.05, &coarse).unwrap().report;
    let p2 = exit_point_probability(&m, eps, (a, b), m.x0, 0.05, &fine).unwrap().report;
    let se = (p1.std_error.powi(2) + p2.std_error.powi(2)).sqrt();
    assert!((p1.estimate - p2.estimate).abs() < 3.0 * se, "{} vs {}", p1.estimate, p2.estimate);
}

#[test]
fn identical_seeds_reproduce_bit_for_bit() {
    let m = canonical();
    let cfg = bridge(&m, 0.3, 1e3, 200, 5);
    let a = hitting_time(&m, 0.3, m.x1, (m.x0 - 0.3, m.x0 + 0.3), &cfg).unwrap();
    let b = hitting_time(&m, 0.3, m.x1, (m.x0 - 0.3, m.x0 + 0.3), &cfg).unwrap();
    assert_eq!(a.times, b.times);
    let c = hitting_time(&m, 0.3, m.x1, (m.x0 - 0.3, m.x0 + 0.3), &McConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.times, c.times);
}

#[test]
fn survival_starts_at_one_and_decays_exponentially() {
    let m = canonical();
    let eps = 0.3;
    let gm = build_grid(&m, eps, 4000, 15.0).unwrap();
    let s = solve(&gm, &m).unwrap();
    let t1 = 1.0 / s.lambda1;
    let cfg = bridge(&m, eps, 20.0 * t1, 4000, 51);
    let q = quasistationary_survival(&s, &gm, &m, &[0.0, t1], &cfg).unwrap();
    assert_eq!(q.survival[0].1.estimate, 1.0);
    let s1 = q.survival[1].1;
    assert!((s1.estimate - (-1.0f64).exp()).abs() < 3.0 * s1.std_error);
    assert!(q.ks_statistic < q.ks_critical);
}

#[test]
fn coupled_process_keeps_the_conditional_law() {
    let m = canonical();
    let eps = 0.3;
    let gm = build_grid(&m, eps, 4000, 15.0).unwrap();
    let s = solve(&gm, &m).unwrap();
    let cs = family(&FamilySpec::named(FamilyName::Fulltrack), &s, &m).unwrap();
    let law = initial_law(&cs, &gm);
    let cfg = bridge(&m, eps, 2.0, 5000, 61);
    let e = coupled_ensemble(&cs, &law, &gm, &m, &[0.5, 2.0], &cfg).unwrap();
    for l in &e.laws {
        assert!(l.ks_statistic < l.ks_critical, "{l:?}");
    }
    assert!(e.max_acceptance <= 1.0);
    let path = coupled_path(&cs, &law, &gm, &m, &bridge(&m, eps, 200.0, 1, 62)).unwrap();
    assert!(path.acceptance <= 1.0);
    assert_eq!(path.x.len(), path.y.len());
    let flips = path.y.windows(2).filter(|w| w[0] != w[1]).count();
    assert!(flips <= path.jump_times.len());
}

#[test]
fn symmetric_spec_has_matching_jump_rates() {
    let m = canonical();
    let eps = 0.3;
    let gm = build_grid(&m, eps, 4000, 15.0).unwrap();
    let s = solve(&gm, &m).unwrap();
    let c = 0.5 * (1.0 / s.eta_right).min(1.0 / s.eta_left.abs());
    let cs = validate_xi(&s, -c, c).unwrap();
    let law = initial_law(&cs, &gm);
    let cfg = bridge(&m, eps, 20.0, 2000, 71);
    let e = coupled_ensemble(&cs, &law, &gm, &m, &[20.0], &cfg).unwrap();
    let [r0, r1] = e.rates;
    let se = (r0.std_error.powi(2) + r1.std_error.powi(2)).sqrt();
    assert!((r0.rate - r1.rate).abs() < 3.0 * se, "{r0:?} {r1:?}");
    for r in [r0, r1] {
        assert!((r.rate - r.expected).abs() < 3.0 * r.std_error, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn thinning_bound_dominates_intensity(x in -2.5f64..2.5, state in 0usize..2, u in 0.05f64..=1.0, v in 0.05f64..=1.0) {
        let m = canonical();
        let gm = build_grid(&m, 0.25, 1000, 15.0).unwrap();
        let s = solve(&gm, &m).unwrap();
        let cs = validate_xi(&s, -u / s.eta_right, v / s.eta_left.abs()).unwrap();
        let th = Thinning::new(&cs, &gm, 1.0, 16);
        let rate = th.intensity(state, x);
        prop_assert!(rate <= th.bound(state, x) * (1.0 + 1e-12));
    }
}
