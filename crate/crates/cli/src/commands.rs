use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use shrinking_gaps::antiadiabatic::{
    anti_adiabatic_commuting, anti_adiabatic_transform, AntiAdiabaticOptions, AntiAdiabaticResult,
};
use shrinking_gaps::bounds::BoundCheck;
use shrinking_gaps::diagonalization::{progressive_diagonalize, reduce_floquet, DiagonalizationOptions, ReductionOptions};
use shrinking_gaps::evolution::{
    check_offdiag_decay_family, fit_exponent, gauge_energy_shift, linear_slope, propagate, theoretical_sigma,
    trivial_bound, EnergyTrace, ExponentFit, FitMethod, PropagateOptions, TrivialBound,
};
use shrinking_gaps::models::{verify_ck_decay, HowlandModel};
use shrinking_gaps::operator_classes::{check_commutator_bound, check_shur_holmgren_chain, BlockOperator, ClassParams};
use shrinking_gaps::time_periodic::TimePeriodicOperator;
use shrinking_gaps::{CheckStatus, Error as CoreError};

use crate::config::{Format, ModelSection};
use crate::error::{CliError, CliResult, Context};
use crate::setup::{NormValue, Route, Setup};

/// Result of one command: the report printed to stdout, extra files to
/// write next to it, and whether any recorded bound did not pass.
pub struct Outcome {
    pub name: &'static str,
    pub report: Value,
    pub files: Vec<(String, String)>,
    pub violated: bool,
}

fn check_json(c: &BoundCheck) -> Value {
    json!({
        "name": c.name,
        "measured": c.measured,
        "bound": c.bound,
        "status": c.status,
        "pass": c.passed(),
    })
}

fn checks_json<'a>(checks: impl IntoIterator<Item = &'a BoundCheck>) -> Vec<Value> {
    checks.into_iter().map(check_json).collect()
}

fn severity(s: CheckStatus) -> u8 {
    match s {
        CheckStatus::Pass => 0,
        CheckStatus::Warn => 1,
        CheckStatus::Fail => 2,
    }
}

/// Keeps, per check name, the instance closest to (or furthest past) its bound.
fn worst_by_name(checks: impl IntoIterator<Item = BoundCheck>) -> Vec<BoundCheck> {
    let mut out: BTreeMap<String, BoundCheck> = BTreeMap::new();
    let ratio = |c: &BoundCheck| if c.bound > 0.0 { c.measured / c.bound } else { c.measured };
    for c in checks {
        match out.get(&c.name) {
            Some(old) if (severity(old.status), ratio(old)) >= (severity(c.status), ratio(&c)) => {}
            _ => {
                out.insert(c.name.clone(), c);
            }
        }
    }
    out.into_values().collect()
}

fn any_violation<'a>(checks: impl IntoIterator<Item = &'a BoundCheck>) -> bool {
    checks.into_iter().any(|c| !c.passed())
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn norm_json(v: &TimePeriodicOperator, params: ClassParams, grid: usize) -> CliResult<NormValue> {
    let value = v.family_class_norm_on(params, grid).ctx("norms")?;
    Ok(NormValue { p: params.p, delta: params.delta, value })
}

pub fn certify_gaps(s: &Setup) -> CliResult<Outcome> {
    let report = json!({
        "command": "certify-gaps",
        "model": s.meta,
        "certificate": s.certificate_json(),
        "alpha": s.basis.alpha(),
        "n_blocks": s.basis.n_blocks(),
        "multiplicities_max": s.basis.multiplicities().iter().max(),
    });
    Ok(Outcome { name: "certify-gaps", report, files: vec![], violated: false })
}

pub fn threshold(s: &Setup) -> CliResult<Outcome> {
    let sigma = theoretical_sigma(s.basis.alpha(), s.p);
    let report = json!({
        "command": "threshold",
        "model": s.meta,
        "certificate": s.certificate_json(),
        "threshold": s.threshold,
        "sigma_theory": sigma.as_ref().ok(),
        "sigma_note": sigma.as_ref().err().map(|e| e.to_string()),
    });
    Ok(Outcome { name: "threshold", report, files: vec![], violated: false })
}

pub fn norms(s: &Setup) -> CliResult<Outcome> {
    s.require_smallness("norms")?;
    let grid = s.cfg.pipeline.grid;
    let gamma = s.basis.gamma();
    let pg = ClassParams::new(s.p, gamma).ctx("norms")?;
    let p10 = ClassParams::new(s.p + 1.0, 0.0).ctx("norms")?;
    let mut sampled = Vec::new();
    for t in s.v.grid(grid) {
        let vt = s.v.evaluate(t);
        sampled.extend(check_shur_holmgren_chain(&vt, pg).ctx("norms")?);
        sampled.push(check_commutator_bound(&vt, &s.cert, pg).ctx("norms")?);
    }
    let mut checks = worst_by_name(sampled);
    checks.push(s.smallness_check());
    let sh_ok = checks.iter().filter(|c| c.name.contains("shur_holmgren")).all(BoundCheck::passed);
    let mut ck = Value::Null;
    if let ModelSection::Howland { alpha, n_max, potential, k_smooth, shift, period, .. } = &s.cfg.model {
        let model = HowlandModel {
            alpha: *alpha,
            n_max: *n_max,
            epsilon: 1.0,
            potential: potential.clone(),
            k_smooth: *k_smooth,
            shift: *shift,
            period: *period,
        };
        let d = verify_ck_decay(&model).ctx("norms")?;
        checks.push(BoundCheck::le("ck_decay", d.measured, d.bound, s.mode));
        ck = json!({"k": d.k, "measured": d.measured, "bound": d.bound, "pass": d.pass});
    }
    let report = json!({
        "command": "norms",
        "model": s.meta,
        "c_H": s.cert.c_h,
        "C_H": s.cert.cap_c_h,
        "certificate": s.certificate_json(),
        "norm_p_gamma": norm_json(&s.v, pg, grid)?,
        "norm_p1_0": norm_json(&s.v, p10, grid)?,
        "sup_operator_norm": s.v.sup_operator_norm(grid).ctx("norms")?,
        "sh_bound_ok": sh_ok,
        "ck_decay": ck,
        "checks": checks_json(&checks),
        "threshold": s.threshold,
    });
    Ok(Outcome { name: "norms", report, files: vec![], violated: any_violation(&checks) })
}

/// Gauge transform of the full perturbation with `Y = 0` and `r = p + 1`:
/// the commuting variant when the sampled family commutes, the general one
/// otherwise.
fn stage_one(s: &Setup) -> CliResult<(AntiAdiabaticResult, &'static str)> {
    let opts = AntiAdiabaticOptions {
        tol: s.cfg.pipeline.tol,
        grid: s.cfg.pipeline.grid,
        mode: s.mode,
        ..Default::default()
    };
    let y = BlockOperator::zeros(&s.basis);
    let r = s.p + 1.0;
    match anti_adiabatic_commuting(&y, &s.v, &s.cert, r, opts) {
        Ok(res) => Ok((res, "commuting")),
        Err(CoreError::NotCommuting(_)) => {
            let res = anti_adiabatic_transform(&y, &s.v, &s.cert, r, 1, opts).ctx("antiadiabatic")?;
            Ok((res, "general"))
        }
        Err(e) => Err(e).ctx("antiadiabatic"),
    }
}

fn stage_json(res: &AntiAdiabaticResult, variant: &str, s: &Setup) -> CliResult<Value> {
    let gamma = s.basis.gamma();
    let i_out = if variant == "commuting" { 1.0 } else { 2.0 };
    let out = ClassParams::new(s.p, i_out * gamma).ctx("antiadiabatic")?;
    Ok(json!({
        "variant": variant,
        "r": s.p + 1.0,
        "series_terms_used": res.series_terms_used,
        "harmonic_cutoff": res.harmonic_cutoff,
        "discarded_weight": res.discarded_weight,
        "z_diamond_bound": {
            "measured": res.achieved_norm,
            "bound": res.bound_rhs,
            "pass": res.achieved_norm <= res.bound_rhs * (1.0 + 1e-12),
        },
        "norm_z_diamond": norm_json(&res.z_diamond, out, s.cfg.pipeline.grid)?,
        "norm_z_bar": res.z_bar.operator_norm().ctx("antiadiabatic")?,
        "gauge_energy_shift": gauge_energy_shift(&res.f, s.cfg.pipeline.grid).ctx("antiadiabatic")?,
        "checks": checks_json(&res.checks),
    }))
}

pub fn antiadiabatic(s: &Setup) -> CliResult<Outcome> {
    let (res, variant) = stage_one(s)?;
    let report = json!({
        "command": "antiadiabatic",
        "model": s.meta,
        "transform": stage_json(&res, variant, s)?,
    });
    let mut files = vec![];
    if s.cfg.output.wants(Format::Json) {
        files.push(("z_diamond.json".into(), pretty(&res.z_diamond)));
    }
    Ok(Outcome { name: "antiadiabatic", report, files, violated: any_violation(&res.checks) })
}

pub fn diagonalize(s: &Setup) -> CliResult<Outcome> {
    let mean = s.v.time_average();
    let (z_bar, source) = if mean.frobenius() > 0.0 { (mean, "time_average") } else { (s.v.evaluate(0.0), "t=0") };
    let opts = DiagonalizationOptions { tol: s.cfg.pipeline.tol, mode: s.mode, ..Default::default() };
    let y = BlockOperator::zeros(&s.basis);
    let d = progressive_diagonalize(&y, &z_bar, &s.cert, s.p, 1, opts).ctx("diagonalize")?;
    let steps: Vec<Value> = d
        .state
        .steps
        .iter()
        .map(|st| {
            let statuses: BTreeMap<&str, _> = st.bound_checks.iter().map(|c| (c.name.as_str(), c.status)).collect();
            json!({
                "s": st.s,
                "x_s": st.x_s,
                "norm_G": st.norm_g,
                "norm_V": st.norm_v,
                "norm_W": st.norm_w,
                "series_terms": st.series_terms,
                "bound_checks": statuses,
                "checks": checks_json(&st.bound_checks),
            })
        })
        .collect();
    let eigs: Vec<f64> = {
        let e = s.basis.energies_per_component();
        let a = d.a.data();
        (0..e.len()).map(|k| e[k] + a[[k, k]].re).collect()
    };
    let report = json!({
        "command": "diagonalize",
        "model": s.meta,
        "z_bar_source": source,
        "r": s.p,
        "i": 1,
        "m": d.state.m,
        "steps": steps,
        "x_history": d.state.x_history,
        "checks": checks_json(&d.checks),
        "h_plus_a_diagonal": eigs,
    });
    let mut files = vec![];
    if s.cfg.output.wants(Format::Json) {
        files.push(("a.json".into(), pretty(&d.a)));
        files.push(("u.json".into(), pretty(&d.u)));
    }
    let violated = any_violation(d.all_checks());
    Ok(Outcome { name: "diagonalize", report, files, violated })
}

pub fn reduce(s: &Setup) -> CliResult<Outcome> {
    s.require_smallness("reduce")?;
    let mut stage = Value::Null;
    let mut violated = false;
    let v1 = match s.threshold.route {
        Route::Commuting => {
            let (res, variant) = stage_one(s)?;
            stage = stage_json(&res, variant, s)?;
            violated |= any_violation(&res.checks);
            let mean = TimePeriodicOperator::constant(res.z_bar.clone(), s.v.period()).ctx("reduce")?;
            res.z_diamond.add(&mean).ctx("reduce")?
        }
        Route::Direct => s.v.clone(),
    };
    let opts =
        ReductionOptions { tol: s.cfg.pipeline.tol, mode: s.mode, grid: s.cfg.pipeline.grid, dense_cross_check: false };
    let res = reduce_floquet(&v1, &s.cert, s.p, Some(s.q), opts).ctx("reduce")?;
    violated |= any_violation(res.all_checks());
    let smallness = s.smallness_check();
    violated |= !smallness.passed();
    let gamma = s.basis.gamma();
    let (bp, bd) = (s.p - s.q as f64, (s.q as f64 + 1.0) * gamma);
    let decay = check_offdiag_decay_family(&res.b, bp, bd, 16.min(s.cfg.pipeline.grid)).ctx("reduce")?;
    let per_step: Vec<Value> = res
        .per_step
        .iter()
        .map(|st| {
            json!({
                "i": st.i,
                "r": st.r,
                "norm_a_prev": st.norm_a_prev,
                "norm_b_prev": st.norm_b_prev,
                "norm_a": st.norm_a,
                "norm_b": {"measured": st.norm_b, "bound": st.bound_b, "pass": st.norm_b <= st.bound_b * (1.0 + 1e-12)},
                "diagonalization_steps": st.diagonalization_steps,
                "series_terms": st.series_terms,
                "discarded_weight": st.discarded_weight,
                "checks": checks_json(&st.checks),
            })
        })
        .collect();
    let report = json!({
        "command": "reduce",
        "model": s.meta,
        "route": s.threshold.route,
        "pre_transform": stage,
        "p": s.p,
        "q": res.q,
        "smallness": check_json(&smallness),
        "epsilon_used": {"measured": res.epsilon_used, "bound": res.threshold, "pass": res.epsilon_used <= res.threshold},
        "checks": checks_json(&res.checks),
        "per_step": per_step,
        "b_decay": {
            "p": bp,
            "delta": bd,
            "class_norm": decay.class_norm,
            "fitted_exponent": decay.fitted_exponent,
            "predicted_exponent": decay.predicted_exponent,
            "mu": decay.mu,
            "mu_above_half": decay.mu_above_half,
            "nontrivial": decay.nontrivial,
        },
    });
    let mut files = vec![];
    if s.cfg.output.wants(Format::Json) {
        files.push(("a.json".into(), pretty(&res.a)));
        files.push(("b.json".into(), pretty(&res.b)));
    }
    Ok(Outcome { name: "reduce", report, files, violated })
}

fn trace_csv(trace: &EnergyTrace, s: &Setup) -> String {
    let period = s.cfg.model_period();
    let mut out = String::new();
    match &s.reparam {
        None => out.push_str("period,t,energy,norm_drift\n"),
        Some(_) => out.push_str("period,t,s,energy,norm_drift\n"),
    }
    for ((n, e), d) in trace.times.iter().zip(&trace.values).zip(&trace.norm_drift) {
        let t = n * period;
        match &s.reparam {
            None => out.push_str(&format!("{n:.10e},{t:.10e},{e:.16e},{d:.6e}\n")),
            Some(_) => {
                let sv = n * trace.period;
                out.push_str(&format!("{n:.10e},{t:.10e},{sv:.10e},{e:.16e},{d:.6e}\n"))
            }
        }
    }
    out
}

fn gnuplot_script(s: &Setup, bound: &TrivialBound) -> String {
    let period = s.cfg.model_period();
    let col = if s.reparam.is_some() { 4 } else { 3 };
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,600\n\
         set output 'trace.png'\n\
         set logscale xy\n\
         set xlabel 't'\n\
         set ylabel '<H>'\n\
         set key top left\n\
         bound(x) = {init:e} + {slope:e} * x / {period:e} + {supv:e}\n\
         plot 'trace.csv' using 2:{col} with lines title '<H>(t)', \\\n     bound(x) with lines dashtype 2 title 'trivial bound'\n",
        init = bound.initial,
        slope = bound.slope_per_period(),
        supv = bound.sup_v,
    )
}

pub fn evolve(s: &Setup, emit_gnuplot: bool) -> CliResult<Outcome> {
    let ev = &s.cfg.evolution;
    let psi0 = s.cfg.initial_state()?.build(&s.basis).ctx("evolution.psi0")?;
    let opts = PropagateOptions { intra_period: ev.intra_period, ..Default::default() };
    let trace = propagate(&s.basis, &s.v, &psi0, ev.n_periods, ev.steps_per_period, opts).ctx("evolve")?;
    let fit = fit_exponent(&trace, ev.window_fraction, ev.method).ctx("evolve fit")?;
    let bound = trivial_bound(&s.basis, &s.v, &psi0, ev.bound_grid).ctx("evolve")?;
    let slope = linear_slope(&trace, ev.window_fraction);
    let sigma = theoretical_sigma(s.basis.alpha(), s.p);

    let excess = trace.times.iter().zip(&trace.values).map(|(t, v)| v - bound.at(*t)).fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![
        BoundCheck::le("psi_norm_drift", trace.psi_norm_drift, 1e-9, s.mode),
        BoundCheck::le("trivial_bound_excess", excess, bound.sup_v + 1e-12 * bound.initial.abs().max(1.0), s.mode),
        BoundCheck::le("trace_slope_vs_trivial", slope, 0.5 * bound.slope_per_period(), s.mode),
    ];
    if let Ok(sig) = &sigma {
        checks.push(BoundCheck::le("sigma_fit", fit.sigma_fit, sig + 0.10, s.mode));
    }
    let pass = checks.iter().all(BoundCheck::passed);
    let report = json!({
        "command": "evolve",
        "model": s.meta,
        "time_axis": match s.reparam {
            None => "t in driving periods",
            Some(_) => "t in physical periods T; sample j is s = j*lambda*kappa, t = b^-1(s) = j*T",
        },
        "n_periods": ev.n_periods,
        "steps_per_period": ev.steps_per_period,
        "samples": trace.len(),
        "psi_norm_drift": trace.psi_norm_drift,
        "unitarity_drift": trace.unitarity_drift,
        "fit": fit_json(&fit),
        "sigma_fit": fit.sigma_fit,
        "ci": [fit.sigma_fit - fit.ci_halfwidth, fit.sigma_fit + fit.ci_halfwidth],
        "sigma_theory": sigma.as_ref().ok(),
        "sigma_note": sigma.as_ref().err().map(|e| e.to_string()),
        "trace_slope_per_period": slope,
        "trivial_bound": {
            "initial": bound.initial,
            "slope_per_period": bound.slope_per_period(),
            "sup_v": bound.sup_v,
        },
        "trivial_slope": bound.slope_per_period(),
        "energy_initial": trace.values.first(),
        "energy_final": trace.values.last(),
        "checks": checks_json(&checks),
        "pass": pass,
    });
    let mut files = vec![];
    if s.cfg.output.wants(Format::Csv) {
        files.push(("trace.csv".into(), trace_csv(&trace, s)));
        if emit_gnuplot {
            files.push(("trace.gp".into(), gnuplot_script(s, &bound)));
        }
    }
    if s.cfg.output.wants(Format::Json) {
        files.push(("trace.json".into(), pretty(&trace)));
    }
    Ok(Outcome { name: "fit", report, files, violated: !pass })
}

fn fit_json(fit: &ExponentFit) -> Value {
    json!({
        "sigma_fit": fit.sigma_fit,
        "ci_halfwidth": fit.ci_halfwidth,
        "window": [fit.window.0, fit.window.1],
        "method": fit.method,
    })
}

/// Reads the `t` and `energy` columns of a trace CSV.
pub fn read_trace(path: &Path) -> CliResult<EnergyTrace> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Validation(format!("--trace {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Validation(format!("--trace: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ti, ei) = match (col("t"), col("energy")) {
        (Some(t), Some(e)) => (t, e),
        _ => return Err(CliError::Validation("--trace: need columns 't' and 'energy'".into())),
    };
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("--trace: {e}")))?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i).and_then(|x| x.trim().parse().ok()).ok_or_else(|| {
                CliError::Validation(format!("--trace: row {}: column {} is not a number", row + 2, i + 1))
            })
        };
        times.push(num(ti)?);
        values.push(num(ei)?);
    }
    let n = times.len();
    Ok(EnergyTrace {
        times,
        values,
        norm_drift: vec![0.0; n],
        psi_norm_drift: 0.0,
        unitarity_drift: 0.0,
        period: 1.0,
        steps_per_period: 1,
        config_ref: path.display().to_string(),
    })
}

pub fn fit(path: &Path, window: f64, method: FitMethod) -> CliResult<Outcome> {
    let trace = read_trace(path)?;
    let fit = fit_exponent(&trace, window, method).ctx("fit")?;
    let report = json!({
        "command": "fit",
        "trace": path.display().to_string(),
        "samples": trace.len(),
        "fit": fit_json(&fit),
        "sigma_fit": fit.sigma_fit,
        "ci": [fit.sigma_fit - fit.ci_halfwidth, fit.sigma_fit + fit.ci_halfwidth],
    });
    Ok(Outcome { name: "fit", report, files: vec![], violated: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use shrinking_gaps::bounds::Mode;

    #[test]
    fn worst_keeps_failures_and_largest_ratio() {
        let checks = vec![
            BoundCheck::le("a", 1.0, 4.0, Mode::Strict),
            BoundCheck::le("a", 3.0, 4.0, Mode::Strict),
            BoundCheck::le("b", 5.0, 4.0, Mode::Strict),
            BoundCheck::le("b", 1.0, 100.0, Mode::Strict),
        ];
        let w = worst_by_name(checks);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].measured, 3.0);
        assert_eq!(w[1].status, CheckStatus::Fail);
    }
}
