//! Subcommand implementations. Each returns the list of failed assertions;
//! an empty list means every check passed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use metastab::coupling::{
    classify, condition_deviations, coupling_row, family, initial_law, observed_conditions, ConditionSet, FamilySpec,
};
use metastab::measure::{build_grid, quadrature_report, GridMeasure};
use metastab::potential::{PotentialModel, Well};
use metastab::simulate::{
    committor_shape, coupled_ensemble, exit_point_probability, hitting_time, holding_times, quasistationary_survival,
    McReport, McRow,
};
use metastab::spectral::{solve, spectral_row, SpectralSolution};
use rayon::prelude::*;
use serde::Serialize;

use crate::scenario::{config_err, Scenario};

pub struct Ctx<'a> {
    pub sc: &'a Scenario,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Ctx<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_samples(path: &Path, v: &[f64]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for x in v {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

struct Rung {
    gm: GridMeasure,
    s: SpectralSolution,
}

fn solve_rung(sc: &Scenario, m: &PotentialModel, eps: f64) -> anyhow::Result<Rung> {
    let gm = build_grid(m, eps, sc.grid.n, sc.grid.margin_k).with_context(|| format!("grid at eps={eps}"))?;
    let s = solve(&gm, m).with_context(|| format!("spectral solve at eps={eps}"))?;
    Ok(Rung { gm, s })
}

fn ladder(ctx: &Ctx, m: &PotentialModel) -> anyhow::Result<Vec<Rung>> {
    let rungs: anyhow::Result<Vec<Rung>> = ctx.sc.eps_ladder.par_iter().map(|&e| solve_rung(ctx.sc, m, e)).collect();
    let rungs = rungs?;
    for r in &rungs {
        for w in &r.s.warnings {
            eprintln!("warning at eps={}: {w:?}", r.s.eps);
        }
    }
    Ok(rungs)
}

/// `spectral.csv`: one row per eps.
pub fn spectral(ctx: &Ctx) -> anyhow::Result<Vec<String>> {
    let m = ctx.sc.model()?;
    let rungs = ladder(ctx, &m)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for Rung { gm, s } in &rungs {
        let mut row = spectral_row(s, &m);
        if !m.is_double_well() {
            row.lambda_ek = f64::NAN;
            row.ratio = f64::NAN;
            row.tail_ratio_pred = f64::NAN;
        }
        let sup = s.sup_norm();
        if !s.is_increasing() {
            failures.push(format!("eps={}: eigenfunction not monotone", s.eps));
        }
        if s.residual > 1e-4 * sup {
            failures.push(format!("eps={}: integral residual {:e} above 1e-4 |eta|", s.eps, s.residual));
        }
        let mean = gm.integrate(&s.eta)?;
        if mean.abs() > 1e-8 * sup {
            failures.push(format!("eps={}: int eta dpi = {mean:e}", s.eps));
        }
        ctx.note(format!("eps={} lambda1={:e}", s.eps, s.lambda1));
        rows.push(row);
    }
    write_csv(&ctx.out.join("spectral.csv"), &rows)?;
    Ok(failures)
}

fn double_well(ctx: &Ctx, what: &str) -> anyhow::Result<PotentialModel> {
    let m = ctx.sc.model()?;
    if !m.is_double_well() {
        return Err(config_err(format!("{what} needs a double-well potential")));
    }
    Ok(m)
}

/// `coupling.csv`: the family member at every eps with its predicted conditions.
pub fn couple(ctx: &Ctx) -> anyhow::Result<Vec<String>> {
    let fs = ctx.sc.family_spec()?;
    let predicted = classify(&fs).map_err(|e| config_err(e.to_string()))?;
    let m = double_well(ctx, "couple")?;
    let rungs = ladder(ctx, &m)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for Rung { s, .. } in &rungs {
        match family(&fs, s, &m) {
            Ok(cs) => rows.push(coupling_row(&cs, &predicted)),
            Err(e) => failures.push(format!("eps={}: {e}", s.eps)),
        }
    }
    write_csv(&ctx.out.join("coupling.csv"), &rows)?;
    ctx.note(format!("{}: predicted {predicted}", fs.label()));
    Ok(failures)
}

/// `spectral.csv`, `quadrature.csv`, and `coupling.csv` when a family is set.
pub fn sweep(ctx: &Ctx) -> anyhow::Result<Vec<String>> {
    let mut failures = spectral(ctx)?;
    let m = ctx.sc.model()?;
    let quad: anyhow::Result<Vec<_>> = ctx
        .sc
        .eps_ladder
        .par_iter()
        .map(|&e| {
            let gm = build_grid(&m, e, ctx.sc.grid.n, ctx.sc.grid.margin_k)?;
            Ok(quadrature_report(&m, &gm))
        })
        .collect();
    write_csv(&ctx.out.join("quadrature.csv"), &quad?)?;
    if ctx.sc.family.is_some() {
        failures.extend(couple(ctx)?);
    }
    Ok(failures)
}

fn flagged(r: &McReport, what: &str, eps: f64, failures: &mut Vec<String>) {
    if r.flagged {
        failures.push(format!("eps={eps}: {what} censored ({:.3})", r.censored_fraction));
    }
}

/// `mc.csv`: exit times, exit point, quasi-stationary survival and committor
/// at each Monte Carlo eps.
pub fn simulate(ctx: &Ctx) -> anyhow::Result<Vec<String>> {
    let mc = ctx.sc.mc_section()?;
    let m = double_well(ctx, "simulate")?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &eps in &mc.eps {
        let cfg = mc.config(&m, eps, ctx.seed);
        cfg.validate(&m, eps, &[]).map_err(|e| config_err(e.to_string()))?;
        for (w, name) in [(Well::Deep, "exit_time_deep"), (Well::Shallow, "exit_time_shallow")] {
            let goal = m.minimum(w.other());
            let r = hitting_time(&m, eps, m.minimum(w), (goal - mc.rho, goal + mc.rho), &cfg)?;
            flagged(&r.report, name, eps, &mut failures);
            rows.push(McRow::from_report(name, eps, &r.report));
            if mc.raw_samples {
                write_samples(&ctx.out.join(format!("{name}_eps{eps}.txt")), &r.times)?;
            }
            ctx.note(format!("eps={eps} {name} {:.4} +- {:.4}", r.report.estimate, r.report.std_error));
        }
        let interval = (m.x0 + mc.exit_offsets[0], m.x0 + mc.exit_offsets[1]);
        let ep = exit_point_probability(&m, eps, interval, m.x0, mc.gamma, &cfg)
            .map_err(|e| config_err(e.to_string()))?;
        flagged(&ep.report, "exit_point", eps, &mut failures);
        let mut row = McRow::from_report("exit_point", eps, &ep.report);
        row.statistic = Some(ep.neg_eps_log_p - ep.delta_f);
        if !ep.in_band {
            row.flag = "outside_band".into();
            failures.push(format!("eps={eps}: exit-point probability outside its band"));
        }
        rows.push(row);

        let rung = solve_rung(ctx.sc, &m, eps)?;
        let t1 = 1.0 / rung.s.lambda1;
        let q = quasistationary_survival(&rung.s, &rung.gm, &m, &[t1], &cfg)?;
        let (_, surv) = q.survival[0];
        flagged(&surv, "qsd_survival", eps, &mut failures);
        let mut row = McRow::from_report("qsd_survival", eps, &surv);
        row.statistic = Some(q.ks_statistic);
        if q.ks_statistic >= q.ks_critical {
            row.flag = "ks_reject".into();
            failures.push(format!("eps={eps}: exit times not Exp(lambda) (KS {:.4})", q.ks_statistic));
        }
        rows.push(row);
        if mc.raw_samples {
            let finite: Vec<f64> = q.exit_times.iter().copied().filter(|t| t.is_finite()).collect();
            write_samples(&ctx.out.join(format!("qsd_exit_times_eps{eps}.txt")), &finite)?;
        }

        let (lo, hi) = (m.x0 + eps, rung.s.nodal_point);
        if lo < hi {
            let ys: Vec<f64> = mc.committor_probes.iter().map(|t| lo + t * (hi - lo)).collect();
            for p in committor_shape(&rung.s, &rung.gm, &m, eps, &ys, 1e-2, &cfg)? {
                flagged(&p.h, "committor", eps, &mut failures);
                let mut row = McRow::from_report("committor", eps, &p.h);
                row.statistic = Some(p.ratio);
                if !p.bound_holds {
                    row.flag = "above_bound".into();
                    failures.push(format!("eps={eps}: committor above eigenfunction shape at y={:.4}", p.y));
                }
                rows.push(row);
            }
        }
    }
    write_csv(&ctx.out.join("mc.csv"), &rows)?;
    Ok(failures)
}

#[derive(Debug, Serialize)]
struct VerifyRow {
    family: String,
    eps: f64,
    dev_trackdeep: f64,
    dev_trackshallow: f64,
    dev_time2deep: f64,
    dev_time2shallow: f64,
    predicted: String,
    observed: String,
    matched: bool,
}

#[derive(Debug, Serialize)]
struct VerifyMcRow {
    family: String,
    eps: f64,
    check: String,
    state: usize,
    t: Option<f64>,
    statistic: f64,
    critical: f64,
    pass: bool,
}

/// Predicted conditions against those observed along the eps ladder, plus
/// Monte Carlo checks of the coupling at the `mc.eps` rungs.
pub fn verify(ctx: &Ctx) -> anyhow::Result<Vec<String>> {
    let fs: FamilySpec = ctx.sc.family_spec()?;
    let predicted = classify(&fs).map_err(|e| config_err(e.to_string()))?;
    let m = double_well(ctx, "verify")?;
    let rho = ctx.sc.mc.as_ref().map(|mc| mc.rho).unwrap_or(0.3);
    let rungs = ladder(ctx, &m)?;
    let mut devs = Vec::new();
    for Rung { gm, s } in &rungs {
        let cs = family(&fs, s, &m)?;
        devs.push(condition_deviations(&cs, gm, &m, rho));
    }
    let observed: ConditionSet = observed_conditions(&devs);
    let matched = observed == predicted;
    let mut failures = Vec::new();
    if !matched {
        failures.push(format!("{}: predicted {predicted}, observed {observed}", fs.label()));
    }
    let rows: Vec<VerifyRow> = devs
        .iter()
        .map(|d| VerifyRow {
            family: fs.label(),
            eps: d.eps,
            dev_trackdeep: d.trackdeep,
            dev_trackshallow: d.trackshallow,
            dev_time2deep: d.time2deep,
            dev_time2shallow: d.time2shallow,
            predicted: predicted.to_string(),
            observed: observed.to_string(),
            matched,
        })
        .collect();
    write_csv(&ctx.out.join("verify.csv"), &rows)?;
    println!("{}: predicted {predicted} ; observed {observed}", fs.label());

    if let Some(mc) = &ctx.sc.mc {
        let mut mc_rows = Vec::new();
        for &eps in &mc.eps {
            let cfg = mc.config(&m, eps, ctx.seed);
            cfg.validate(&m, eps, &[]).map_err(|e| config_err(e.to_string()))?;
            let rung = solve_rung(ctx.sc, &m, eps)?;
            let cs = family(&fs, &rung.s, &m)?;
            let law = initial_law(&cs, &rung.gm);
            let ens = coupled_ensemble(&cs, &law, &rung.gm, &m, &mc.probe_times, &cfg)?;
            for l in &ens.laws {
                let pass = l.count == 0 || l.ks_statistic < l.ks_critical;
                mc_rows.push(VerifyMcRow {
                    family: fs.label(),
                    eps,
                    check: "conditional_law_ks".into(),
                    state: l.state,
                    t: Some(l.t),
                    statistic: l.ks_statistic,
                    critical: l.ks_critical,
                    pass,
                });
            }
            for j in 0..2 {
                let h = holding_times(&cs, &law, &rung.gm, &m, j, &cfg)?;
                let z = (h.report.estimate - h.expected_mean).abs() / h.report.std_error;
                mc_rows.push(VerifyMcRow {
                    family: fs.label(),
                    eps,
                    check: "holding_mean_z".into(),
                    state: j,
                    t: None,
                    statistic: z,
                    critical: 3.0,
                    pass: z <= 3.0 && !h.report.flagged,
                });
                mc_rows.push(VerifyMcRow {
                    family: fs.label(),
                    eps,
                    check: "holding_exponential_ks".into(),
                    state: j,
                    t: None,
                    statistic: h.ks_statistic,
                    critical: h.ks_critical,
                    pass: h.ks_statistic < h.ks_critical,
                });
            }
        }
        for r in &mc_rows {
            if !r.pass {
                failures.push(format!("eps={}: {} state {} failed ({:.4} vs {:.4})", r.eps, r.check, r.state, r.statistic, r.critical));
            }
        }
        write_csv(&ctx.out.join("verify_mc.csv"), &mc_rows)?;
    }
    Ok(failures)
}
