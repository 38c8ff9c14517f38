//! Progressive diagonalization of `H + Y + Z̄` and the composed reduction
//! `H + V(t) ↦ H + A + B(t)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::antiadiabatic::{anti_adiabatic_transform, AntiAdiabaticOptions};
use crate::bounds::{BoundCheck, Mode};
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::operator_classes::{
    class_norm, cp_constant, diag_part, offdiag_part, sylvester_solve, BlockOperator, ClassParams,
    SylvesterOptions,
};
use crate::spectral_basis::GapCertificate;
use crate::time_periodic::{TimePeriodicOperator, DEFAULT_GRID};

/// `Φ(x) = Σ_{k≥1} k x^k/(k+1)! = e^x − (e^x − 1)/x`.
pub fn phi(x: f64) -> f64 {
    if x <= 1e-4 {
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 1.0;
        for k in 1..=20 {
            pow *= x;
            fact *= (k + 1) as f64;
            sum += k as f64 * pow / fact;
        }
        sum
    } else {
        x.exp() - x.exp_m1() / x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiagonalizationOptions {
    /// Stop once `‖V_s‖_{r,iγ}` drops below this value.
    pub tol: f64,
    pub max_steps: usize,
    /// Relative size of the last retained term of `Φ(ad_W)V`.
    pub series_tol: f64,
    pub max_terms: usize,
    pub mode: Mode,
    pub small_divisor_floor: f64,
    /// Compare each series update with the dense conjugation `e^W H_s e^{−W}`.
    pub dense_cross_check: bool,
}

impl Default for DiagonalizationOptions {
    fn default() -> Self {
        DiagonalizationOptions {
            tol: 1e-12,
            max_steps: 60,
            series_tol: 1e-15,
            max_terms: 40,
            mode: Mode::Strict,
            small_divisor_floor: 1e-10,
            dense_cross_check: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub s: usize,
    pub x_s: f64,
    pub norm_g: f64,
    pub norm_v: f64,
    pub norm_w: f64,
    pub series_terms: usize,
    pub bound_checks: Vec<BoundCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagonalizationState {
    pub s: usize,
    pub g: BlockOperator,
    pub v: BlockOperator,
    pub u: BlockOperator,
    pub x_history: Vec<f64>,
    /// `M = c_H/(2π C_{r+1})`.
    pub m: f64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagonalization {
    pub u: BlockOperator,
    pub a: BlockOperator,
    pub state: DiagonalizationState,
    /// Checks on the final result (per-step checks live in `state.steps`).
    pub checks: Vec<BoundCheck>,
}

impl Diagonalization {
    pub fn all_checks(&self) -> impl Iterator<Item = &BoundCheck> {
        self.state.steps.iter().flat_map(|s| s.bound_checks.iter()).chain(self.checks.iter())
    }
}

/// Finds unitary `U` with `U(H+Y+Z̄)U† = H+A`, `A` block diagonal.
pub fn progressive_diagonalize(
    y: &BlockOperator,
    z_bar: &BlockOperator,
    cert: &GapCertificate,
    r: f64,
    i: u32,
    opts: DiagonalizationOptions,
) -> Result<Diagonalization> {
    if !y.is_diagonal() || !y.is_hermitian() {
        return Err(Error::InvalidArgument("Y must be block diagonal and Hermitian".into()));
    }
    if !z_bar.is_hermitian() {
        return Err(Error::InvalidArgument("Z-bar must be Hermitian".into()));
    }
    if i < 1 {
        return Err(Error::InvalidArgument("class index i must be at least 1".into()));
    }
    let basis = y.basis().clone();
    let gamma = basis.gamma();
    let mode = opts.mode;
    let c_r1 = cp_constant(r + 1.0)?;
    let v_class = ClassParams::new(r, i as f64 * gamma)?;
    let w_class = ClassParams::new(r + 1.0, (i as f64 - 1.0) * gamma)?;
    let inf_class = ClassParams::infinite(gamma)?;
    let m = cert.c_h / (2.0 * PI * c_r1);

    let norm_y = class_norm(y, inf_class)?;
    let norm_zbar = class_norm(z_bar, v_class)?;
    let smallness_rhs = cert.c_h / (4.0 * PI * c_r1);
    if norm_y + norm_zbar > smallness_rhs && mode.is_strict() {
        return Err(Error::SmallnessViolated { lhs: norm_y + norm_zbar, rhs: smallness_rhs });
    }
    let mut checks = vec![BoundCheck::le("smallness", norm_y + norm_zbar, smallness_rhs, mode)];

    let mut g = y.add(&diag_part(z_bar))?;
    let mut v = offdiag_part(z_bar);
    let mut u = BlockOperator::identity(&basis);
    let mut x_history = Vec::new();
    let mut steps = Vec::new();
    let sylvester_opts = SylvesterOptions { small_divisor_floor: opts.small_divisor_floor, mode };
    let mut s = 1;
    loop {
        let norm_v = class_norm(&v, v_class)?;
        let x = norm_v / m;
        x_history.push(x);
        if norm_v < opts.tol || x < 1e-14 {
            break;
        }
        if s > opts.max_steps {
            return Err(Error::NoConvergence(opts.max_steps));
        }
        let mut step_checks = Vec::new();
        let sol = sylvester_solve(&g, &v, Some(cert), sylvester_opts)?;
        step_checks.extend(sol.checks);
        let w = sol.w;
        let norm_w = class_norm(&w, w_class)?;
        step_checks.push(BoundCheck::le("w_norm", norm_w, PI / cert.c_h * norm_v, mode));

        let (kick, series_terms, ad_norms) = phi_series(&w, &v, v_class, opts)?;
        for (k, &nk) in ad_norms.iter().enumerate().take(5) {
            step_checks.push(BoundCheck::le(
                format!("kick_term_{}", k + 1),
                nk,
                x.powi(k as i32 + 1) * norm_v,
                mode,
            ));
        }
        let g_next = BlockOperator::from_parts(&basis, g.data() + diag_part(&kick).data(), true, true);
        let v_next = offdiag_part(&kick);
        let v_next = BlockOperator::from_parts(&basis, v_next.into_data(), true, false);

        if opts.dense_cross_check {
            let e = linalg::expm_antihermitian(&w.data().view())?;
            let h_s = basis.h_dense() + g.data() + v.data();
            let dense = e.dot(&h_s).dot(&linalg::dagger(&e.view()));
            let series = basis.h_dense() + g_next.data() + v_next.data();
            let diff = linalg::max_abs(&(dense - series).view());
            let scale = linalg::max_abs(&h_s.view()).max(1.0);
            step_checks.push(BoundCheck::le("dense_cross_check", diff, 1e-10 * scale, mode));
        }

        let e = linalg::expm_antihermitian(&w.data().view())?;
        let mut next_u = e.dot(u.data());
        linalg::polish_unitary(&mut next_u, 1);
        u = BlockOperator::from_parts(&basis, next_u, false, false);

        steps.push(StepRecord {
            s,
            x_s: x,
            norm_g: class_norm(&g, inf_class)?,
            norm_v,
            norm_w,
            series_terms,
            bound_checks: step_checks,
        });
        g = g_next;
        v = v_next;
        s += 1;
    }

    for (k, pair) in x_history.windows(2).enumerate() {
        if pair[0] < 1.0 {
            checks.push(BoundCheck::le(format!("quadratic_convergence_{}", k + 1), pair[1], pair[0] * pair[0], mode));
        }
    }
    let x1 = x_history[0];
    if x1 < 1.0 {
        let total: f64 = x_history.iter().sum();
        checks.push(BoundCheck::le("x_sum", total, x1 / (1.0 - x1), mode));
    }

    let a = g;
    let norm_a = class_norm(&a, inf_class)?;
    checks.push(BoundCheck::le("a_norm", norm_a, 2.0 * (norm_y + norm_zbar), mode));
    checks.push(BoundCheck::le("unitarity", linalg::unitarity_defect(u.data()), 1e-11, mode));

    let original = basis.h_dense() + y.data() + z_bar.data();
    let conjugated = u.data().dot(&original).dot(&linalg::dagger(&u.data().view()));
    let mut conj_op = BlockOperator::from_parts(&basis, conjugated, true, false);
    conj_op = offdiag_part(&conj_op);
    checks.push(BoundCheck::le("offdiagonal_residual", conj_op.frobenius(), 10.0 * opts.tol, mode));

    let mut spec_a = Vec::with_capacity(basis.dim());
    for b in 0..basis.n_blocks() {
        let mut blk = a.block(b, b).to_owned();
        for d in 0..blk.nrows() {
            blk[[d, d]] += C64::new(basis.energy(b), 0.0);
        }
        spec_a.extend(linalg::hermitian_eigenvalues(&blk.view())?.iter().copied());
    }
    spec_a.sort_by(f64::total_cmp);
    let spec_o = linalg::hermitian_eigenvalues(&original.view())?;
    let spread = spec_a.iter().zip(spec_o.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = spec_o.iter().map(|x| x.abs()).fold(1.0, f64::max);
    checks.push(BoundCheck::le("spectrum_preserved", spread, 1e-9 * scale, mode));

    let state = DiagonalizationState { s: steps.len(), g: a.clone(), v, u: u.clone(), x_history, m, steps };
    Ok(Diagonalization { u, a, state, checks })
}

/// `Φ(ad_W)V` plus the class norms of `ad_W^k V`.
fn phi_series(
    w: &BlockOperator,
    v: &BlockOperator,
    class: ClassParams,
    opts: DiagonalizationOptions,
) -> Result<(BlockOperator, usize, Vec<f64>)> {
    let basis = w.basis();
    let norm_of = |m: &ndarray::Array2<C64>| {
        class_norm(&BlockOperator::from_parts(basis, m.clone(), false, false), class)
    };
    let mut ad = v.data().clone();
    let mut acc = ndarray::Array2::<C64>::zeros(ad.dim());
    let mut norms = Vec::new();
    let mut fact = 1.0;
    for k in 1..=opts.max_terms {
        ad = linalg::commutator(w.data(), &ad);
        fact *= (k + 1) as f64;
        let nk = norm_of(&ad)?;
        norms.push(nk);
        let coef = k as f64 / fact;
        acc.scaled_add(C64::new(coef, 0.0), &ad);
        let acc_norm = norm_of(&acc)?;
        if coef * nk <= opts.series_tol * acc_norm || acc_norm == 0.0 {
            let out = BlockOperator::from_parts(basis, acc, true, false);
            return Ok((out, k, norms));
        }
    }
    Err(Error::SeriesNotConverged { terms: opts.max_terms, last: f64::NAN })
}

/// `U X(t) U†` harmonic by harmonic, with the check
/// `‖UXU†‖_{r−1,(i+1)γ} ≤ exp(2C_r/C_{r+1}) ‖X‖_{r−1,(i+1)γ}`.
pub fn conjugate_family(
    u: &BlockOperator,
    x: &TimePeriodicOperator,
    r: f64,
    i: u32,
    mode: Mode,
) -> Result<(TimePeriodicOperator, BoundCheck)> {
    let ud = linalg::dagger(&u.data().view());
    let out = x.map_coefficients(|c| {
        let d = u.data().dot(c.data()).dot(&ud);
        Ok(BlockOperator::from_parts(u.basis(), d, c.is_hermitian(), false))
    })?;
    let class = ClassParams::new(r - 1.0, (i as f64 + 1.0) * u.basis().gamma())?;
    let lhs = out.family_class_norm(class)?;
    let factor = (2.0 * cp_constant(r)? / cp_constant(r + 1.0)?).exp();
    let rhs = factor * x.family_class_norm(class)?;
    Ok((out, BoundCheck::le("conjugation_norm", lhs, rhs, mode)))
}

/// `J(t) = e^{−iF_1(t)} U_1† e^{−iF_2(t)} U_2† ⋯`, stored factor by factor.
#[derive(Debug, Clone, Serialize)]
pub struct GaugeFamily {
    pub factors: Vec<GaugeFactor>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeFactor {
    pub f: TimePeriodicOperator,
    pub u: BlockOperator,
}

impl GaugeFamily {
    pub fn evaluate(&self, t: f64) -> Result<ndarray::Array2<C64>> {
        let mut j: Option<ndarray::Array2<C64>> = None;
        for fac in &self.factors {
            let e = if fac.f.is_zero() {
                linalg::identity(fac.u.dim())
            } else {
                linalg::expm_hermitian(&fac.f.evaluate(t).data().view(), C64::new(0.0, -1.0))?
            };
            let piece = e.dot(&linalg::dagger(&fac.u.data().view()));
            j = Some(match j {
                Some(prev) => prev.dot(&piece),
                None => piece,
            });
        }
        Ok(j.unwrap_or_else(|| linalg::identity(0)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionStep {
    pub i: usize,
    pub r: f64,
    pub norm_a_prev: f64,
    pub norm_b_prev: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    pub bound_b: f64,
    pub diagonalization_steps: usize,
    pub series_terms: usize,
    pub discarded_weight: f64,
    pub checks: Vec<BoundCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineResult {
    pub j: GaugeFamily,
    pub a: BlockOperator,
    pub b: TimePeriodicOperator,
    pub q: usize,
    /// `‖V‖_{p,γ}` of the input.
    pub epsilon_used: f64,
    pub threshold: f64,
    pub per_step: Vec<ReductionStep>,
    pub checks: Vec<BoundCheck>,
}

impl PipelineResult {
    pub fn all_checks(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().chain(self.per_step.iter().flat_map(|s| s.checks.iter()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReductionOptions {
    pub tol: f64,
    pub mode: Mode,
    pub grid: usize,
    pub dense_cross_check: bool,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions { tol: 1e-12, mode: Mode::Strict, grid: DEFAULT_GRID, dense_cross_check: false }
    }
}

/// Default number of reduction steps, `⌈p − 2⌉`.
pub fn default_q(p: f64) -> usize {
    (p - 2.0).ceil().max(1.0) as usize
}

/// Applies `q` rounds of anti-adiabatic transform plus diagonalization to
/// `H + V(t)`, producing `H + V = J(H + A + B)J† + iJ̇J†`.
pub fn reduce_floquet(
    v: &TimePeriodicOperator,
    cert: &GapCertificate,
    p: f64,
    q: Option<usize>,
    opts: ReductionOptions,
) -> Result<PipelineResult> {
    let q = q.unwrap_or_else(|| default_q(p));
    if q < 1 || (q as f64) >= p - 1.0 {
        return Err(Error::InvalidArgument(format!("need 1 <= q < p - 1, got q = {q}, p = {p}")));
    }
    if !v.is_hermitian_family() {
        return Err(Error::InvalidArgument("V must be a Hermitian family".into()));
    }
    let basis = v.basis().clone();
    let gamma = basis.gamma();
    let mode = opts.mode;
    let period = v.period();
    let inf_class = ClassParams::infinite(gamma)?;
    let eps = v.family_class_norm_on(ClassParams::new(p, gamma)?, opts.grid)?;
    let threshold = epsilon_threshold(p, q, period, cert.c_h, cert.cap_c_h)?;
    if eps > threshold && mode.is_strict() {
        return Err(Error::SmallnessViolated { lhs: eps, rhs: threshold });
    }
    let checks = vec![BoundCheck::le("epsilon_threshold", eps, threshold, mode)];

    let mut a = BlockOperator::zeros(&basis);
    let mut b = v.clone();
    let mut factors = Vec::with_capacity(q);
    let mut per_step = Vec::with_capacity(q);
    let aa_opts = AntiAdiabaticOptions { tol: opts.tol, mode, grid: opts.grid, ..Default::default() };
    let pd_opts = DiagonalizationOptions {
        tol: opts.tol,
        mode,
        dense_cross_check: opts.dense_cross_check,
        ..Default::default()
    };
    for i in 1..=q {
        let r = p - i as f64 + 1.0;
        let step = (|| -> Result<_> {
            let in_class = ClassParams::new(r, i as f64 * gamma)?;
            let out_class = ClassParams::new(r - 1.0, (i as f64 + 1.0) * gamma)?;
            let c_r = cp_constant(r)?;
            let c_r1 = cp_constant(r + 1.0)?;
            let norm_a_prev = class_norm(&a, inf_class)?;
            let norm_b_prev = b.family_class_norm_on(in_class, opts.grid)?;
            let mut checks = vec![BoundCheck::le(
                "step_smallness",
                norm_a_prev + norm_b_prev,
                cert.c_h / (4.0 * PI * c_r1),
                mode,
            )];
            let aa = anti_adiabatic_transform(&a, &b, cert, r, i as u32, aa_opts)?;
            checks.extend(aa.checks.iter().cloned());
            let pd = progressive_diagonalize(&a, &aa.z_bar, cert, r, i as u32, pd_opts)?;
            checks.extend(pd.all_checks().cloned());
            let (b_next, conj_check) = conjugate_family(&pd.u, &aa.z_diamond, r, i as u32, mode)?;
            checks.push(conj_check);
            let norm_a = class_norm(&pd.a, inf_class)?;
            let norm_b = b_next.family_class_norm_on(out_class, opts.grid)?;
            checks.push(BoundCheck::le("a_step_growth", norm_a, 2.0 * (norm_a_prev + norm_b_prev), mode));
            let bound_b = (2.0 * c_r / c_r1).exp() / (2.0 * c_r)
                * ((4.0 * c_r * period * norm_b_prev).exp() - 1.0)
                * (cert.cap_c_h + 4.0 * norm_a_prev + 2.0 * c_r * norm_b_prev);
            checks.push(BoundCheck::le_flag_within("b_step_norm", norm_b, bound_b, 0.01, mode));
            let record = ReductionStep {
                i,
                r,
                norm_a_prev,
                norm_b_prev,
                norm_a,
                norm_b,
                bound_b,
                diagonalization_steps: pd.state.s,
                series_terms: aa.series_terms_used,
                discarded_weight: aa.discarded_weight,
                checks,
            };
            Ok((pd.a, b_next, GaugeFactor { f: aa.f, u: pd.u }, record))
        })()
        .map_err(|e| e.at_step(i))?;
        a = step.0;
        b = step.1;
        factors.push(step.2);
        per_step.push(step.3);
    }
    Ok(PipelineResult { j: GaugeFamily { factors }, a, b, q, epsilon_used: eps, threshold, per_step, checks })
}

/// Largest `ε` such that `‖V‖_{p,γ} ≤ ε` keeps every reduction step within
/// its smallness condition: `min_i F_i^{−1}(c_H/(4π C_{p−i+2}))`.
pub fn epsilon_threshold(p: f64, q: usize, period: f64, c_h: f64, cap_c_h: f64) -> Result<f64> {
    if q < 1 || (q as f64) >= p - 1.0 {
        return Err(Error::InvalidArgument(format!("need 1 <= q < p - 1, got q = {q}, p = {p}")));
    }
    if !(period > 0.0) || !(c_h > 0.0) || !(cap_c_h >= c_h) {
        return Err(Error::InvalidArgument("need T > 0 and 0 < c_H <= C_H".into()));
    }
    let mut consts = Vec::with_capacity(q);
    for i in 1..=q {
        let c1 = cp_constant(p - i as f64 + 1.0)?;
        let c2 = cp_constant(p - i as f64 + 2.0)?;
        consts.push((c1, c2));
    }
    let phi_i = |i: usize, y: f64| {
        let (c1, c2) = consts[i - 1];
        (2.0 * c1 / c2).exp() / (2.0 * c1)
            * (4.0 * c1 * period * y).exp_m1()
            * (cap_c_h + c_h / (PI * c2) + (2.0 * c1 - 4.0) * y)
    };
    let big_f = |i: usize, y: f64| {
        let mut total = 2f64.powi(i as i32 - 1) * y;
        let mut composed = y;
        for j in 1..i {
            composed = phi_i(j, composed);
            total += 2f64.powi((i - 1 - j) as i32) * composed;
        }
        total
    };
    let mut best = f64::INFINITY;
    for i in 1..=q {
        let target = c_h / (4.0 * PI * consts[i - 1].1);
        let mut hi = 1.0;
        while big_f(i, hi) <= target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if big_f(i, mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(lo);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_basis::{certify_gaps, MultiplicityRule, SpectralBasis};
    use ndarray::Array2;
    use std::sync::Arc;

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0), 0.0);
        assert!((phi(1.0) - 1.0).abs() < 1e-15);
        let half = 0.5f64.exp() - 2.0 * (0.5f64.exp() - 1.0);
        assert!((phi(0.5) - half).abs() < 1e-15);
        assert!((phi(0.5) - 0.3512787).abs() < 1e-7);
        let small = 1e-5f64;
        let taylor = small / 2.0 + small * small / 3.0 + small.powi(3) / 8.0;
        assert!((phi(small) - taylor).abs() < 1e-15 * small);
        // both branches agree at the switch point
        let x = 1e-4f64;
        assert!((phi(x) - (x.exp() - x.exp_m1() / x)).abs() < 1e-15);
    }

    #[test]
    fn phi_monotone_and_below_identity() {
        let mut prev = 0.0;
        for k in 1..=1000 {
            let x = 10.0 * k as f64 / 1000.0;
            assert!(phi(x) > prev);
            prev = phi(x);
        }
        for k in 1..1000 {
            let x = k as f64 / 1000.0;
            assert!(phi(x) < x);
        }
    }

    #[test]
    fn diagonal_input_needs_no_steps() {
        let b = Arc::new(SpectralBasis::power(0.5, 8, MultiplicityRule::Simple).unwrap());
        let cert = certify_gaps(&b).unwrap();
        let zb = BlockOperator::identity(&b).scale(C64::new(1e-4, 0.0));
        let y = BlockOperator::zeros(&b);
        let res = progressive_diagonalize(&y, &zb, &cert, 3.0, 1, Default::default()).unwrap();
        assert_eq!(res.state.s, 0);
        assert_eq!(res.u.data(), BlockOperator::identity(&b).data());
        assert_eq!(res.a.data(), zb.data());
    }

    #[test]
    fn two_level_example() {
        let b = Arc::new(SpectralBasis::new(vec![1.0, 2.0], vec![1, 1], 0.5).unwrap());
        let cert = certify_gaps(&b).unwrap();
        let mut zd = Array2::zeros((2, 2));
        zd[[0, 1]] = C64::new(0.1, 0.0);
        zd[[1, 0]] = C64::new(0.1, 0.0);
        let zb = BlockOperator::from_dense(&b, zd).unwrap();
        let y = BlockOperator::zeros(&b);
        assert!(matches!(
            progressive_diagonalize(&y, &zb, &cert, 3.0, 1, Default::default()),
            Err(Error::SmallnessViolated { .. })
        ));
        let opts = DiagonalizationOptions { mode: Mode::Permissive, ..Default::default() };
        let res = progressive_diagonalize(&y, &zb, &cert, 3.0, 1, opts).unwrap();
        let lo = 1.0 + res.a.data()[[0, 0]].re;
        let hi = 2.0 + res.a.data()[[1, 1]].re;
        let d = 1.04f64.sqrt();
        assert!((lo - (3.0 - d) / 2.0).abs() < 1e-10);
        assert!((hi - (3.0 + d) / 2.0).abs() < 1e-10);
        assert!((lo - 0.9900980).abs() < 1e-7);
    }

    #[test]
    fn threshold_closed_form_for_one_step() {
        let (c_h, cap) = (0.5, 1.0);
        for p in [3.5, 4.0, 5.2] {
            let eps = epsilon_threshold(p, 1, 2.0 * PI, c_h, cap).unwrap();
            let expect = c_h / (4.0 * PI * cp_constant(p + 1.0).unwrap());
            assert!(((eps - expect) / expect).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_shrinks_with_q() {
        let p = 5.5;
        let mut prev = f64::INFINITY;
        for q in 1..=4 {
            let eps = epsilon_threshold(p, q, 1.0, 0.5, 1.0).unwrap();
            assert!(eps > 0.0 && eps <= prev);
            prev = eps;
        }
        assert!(epsilon_threshold(3.0, 2, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn zero_perturbation_pipeline() {
        let b = Arc::new(SpectralBasis::power(0.5, 8, MultiplicityRule::Simple).unwrap());
        let cert = certify_gaps(&b).unwrap();
        let v = TimePeriodicOperator::zero(&b, 1.0).unwrap();
        let res = reduce_floquet(&v, &cert, 3.5, None, Default::default()).unwrap();
        assert_eq!(res.q, 2);
        assert!(res.b.is_zero());
        assert!(res.a.data().iter().all(|z| z.norm() == 0.0));
        let j = res.j.evaluate(0.3).unwrap();
        assert!(linalg::max_abs(&(j - linalg::identity(8)).view()) == 0.0);
    }
}
