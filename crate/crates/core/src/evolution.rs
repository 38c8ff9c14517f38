//! Long-time propagation under `H + V(t)`, energy traces, the trivial linear
//! bound, exponent fitting and the off-diagonal decay check.

use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};
use crate::operator_classes::{class_norm, BlockOperator, ClassParams};
use crate::spectral_basis::SpectralBasis;
use crate::time_periodic::{TimePeriodicOperator, DEFAULT_GRID};

/// Sampled `⟨H⟩_Ψ(t)`. Times are in units of the driving period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `|‖ψ(t)‖ − 1|` at each sample.
    pub norm_drift: Vec<f64>,
    pub psi_norm_drift: f64,
    /// `‖Φ_T†Φ_T − I‖` of the assembled one-period propagator.
    pub unitarity_drift: f64,
    pub period: f64,
    pub steps_per_period: usize,
    pub config_ref: String,
}

impl EnergyTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(t, energy, norm_drift)` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,energy,norm_drift\n");
        for ((t, e), d) in self.times.iter().zip(&self.values).zip(&self.norm_drift) {
            out.push_str(&format!("{t:.10e},{e:.16e},{d:.6e}\n"));
        }
        out
    }

    /// Mean of the values with `t ≥ (1 − fraction)·t_max`.
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let (_, vals) = self.window(fraction);
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    fn window(&self, fraction: f64) -> (Vec<f64>, Vec<f64>) {
        let t_max = self.times.last().copied().unwrap_or(0.0);
        let lo = (1.0 - fraction) * t_max;
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= lo && **t > 0.0)
            .map(|(t, v)| (*t, *v))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Ground,
    /// Real Gaussian weights `exp(−(n−center)²/(2 width²))` over block indices,
    /// spread evenly inside each block.
    Gaussian { center: f64, width: f64 },
    /// Random complex vector supported on the first `blocks` blocks.
    Random { blocks: usize, seed: u64 },
    Vector { re: Vec<f64>, im: Vec<f64> },
}

impl InitialState {
    pub fn build(&self, basis: &SpectralBasis) -> Result<Array1<C64>> {
        let dim = basis.dim();
        let mut psi = Array1::<C64>::zeros(dim);
        match self {
            InitialState::Ground => psi[0] = C64::new(1.0, 0.0),
            InitialState::Gaussian { center, width } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidArgument("gaussian width must be positive".into()));
                }
                for b in 0..basis.n_blocks() {
                    let x = (b as f64 - center) / width;
                    let w = (-0.5 * x * x).exp();
                    for i in basis.block_range(b) {
                        psi[i] = C64::new(w, 0.0);
                    }
                }
            }
            InitialState::Random { blocks, seed } => {
                let blocks = (*blocks).clamp(1, basis.n_blocks());
                let end = basis.block_range(blocks - 1).end;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for x in psi.slice_mut(s![..end]) {
                    *x = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            InitialState::Vector { re, im } => {
                if re.len() != dim || im.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "initial vector has {} / {} components, basis has {dim}",
                        re.len(),
                        im.len()
                    )));
                }
                for i in 0..dim {
                    psi[i] = C64::new(re[i], im[i]);
                }
            }
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("initial state has zero norm".into()));
        }
        psi.mapv_inplace(|z| z / norm);
        Ok(psi)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropagateOptions {
    /// Record `⟨H⟩` after every substep instead of only at period boundaries.
    pub intra_period: bool,
    /// Newton–Schulz steps applied to the one-period propagator.
    pub polish_steps: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions { intra_period: false, polish_steps: 1 }
    }
}

fn energy(e: &[f64], psi: &Array1<C64>) -> (f64, f64) {
    let mut en = 0.0;
    let mut nrm = 0.0;
    for (x, z) in e.iter().zip(psi.iter()) {
        let w = z.norm_sqr();
        en += x * w;
        nrm += w;
    }
    (en / nrm, nrm.sqrt())
}

/// Substep propagators `exp(−ih(H + V(t_j + h/2)))` for one period.
pub fn substep_propagators(
    basis: &Arc<SpectralBasis>,
    v: &TimePeriodicOperator,
    steps_per_period: usize,
) -> Result<Vec<Array2<C64>>> {
    if steps_per_period == 0 {
        return Err(Error::InvalidArgument("steps_per_period must be positive".into()));
    }
    if v.basis().fingerprint() != basis.fingerprint() {
        return Err(Error::DimensionMismatch("V lives on a different basis".into()));
    }
    let h = v.period() / steps_per_period as f64;
    let e = basis.energies_per_component();
    (0..steps_per_period)
        .map(|j| {
            let mut k = v.evaluate((j as f64 + 0.5) * h).into_data();
            for (i, x) in e.iter().enumerate() {
                k[[i, i]] += C64::new(*x, 0.0);
            }
            linalg::hermitize(&mut k);
            linalg::expm_hermitian(&k.view(), C64::new(0.0, -h))
        })
        .collect()
}

/// One-period propagator `Φ_T` and its unitarity defect before polishing.
pub fn floquet_operator(steps: &[Array2<C64>], polish_steps: usize) -> Result<(Array2<C64>, f64)> {
    let dim = steps.first().map(|m| m.nrows()).unwrap_or(0);
    let mut phi = linalg::identity(dim);
    for u in steps {
        phi = u.dot(&phi);
    }
    let g = linalg::dagger(&phi.view()).dot(&phi) - linalg::identity(dim);
    let mut g = g;
    linalg::hermitize(&mut g);
    let drift = linalg::hermitian_norm(&g.view())?;
    linalg::polish_unitary(&mut phi, polish_steps);
    Ok((phi, drift))
}

/// Midpoint-exponential propagation of `psi0` under `H + V(t)`.
pub fn propagate(
    basis: &Arc<SpectralBasis>,
    v: &TimePeriodicOperator,
    psi0: &Array1<C64>,
    n_periods: usize,
    steps_per_period: usize,
    opts: PropagateOptions,
) -> Result<EnergyTrace> {
    if psi0.len() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} components, basis has {}",
            psi0.len(),
            basis.dim()
        )));
    }
    let norm0 = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm0 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("initial state must be normalized, norm = {norm0}")));
    }
    let e = basis.energies_per_component();
    let steps = substep_propagators(basis, v, steps_per_period)?;
    let (phi, unitarity_drift) = floquet_operator(&steps, opts.polish_steps)?;

    let capacity = if opts.intra_period { n_periods * steps_per_period + 1 } else { n_periods + 1 };
    let mut trace = EnergyTrace {
        times: Vec::with_capacity(capacity),
        values: Vec::with_capacity(capacity),
        norm_drift: Vec::with_capacity(capacity),
        psi_norm_drift: 0.0,
        unitarity_drift,
        period: v.period(),
        steps_per_period,
        config_ref: basis.fingerprint(),
    };
    let record = |trace: &mut EnergyTrace, t: f64, psi: &Array1<C64>, period: usize| -> Result<()> {
        let (en, nrm) = energy(&e, psi);
        let drift = (nrm - 1.0).abs();
        if drift > 1e-6 {
            return Err(Error::StepUnstable { period, drift });
        }
        trace.times.push(t);
        trace.values.push(en);
        trace.norm_drift.push(drift);
        trace.psi_norm_drift = trace.psi_norm_drift.max(drift);
        Ok(())
    };
    let mut psi = psi0.clone();
    record(&mut trace, 0.0, &psi, 0)?;
    for n in 0..n_periods {
        if opts.intra_period {
            for (j, u) in steps.iter().enumerate() {
                psi = linalg::matvec(u, &psi);
                record(&mut trace, n as f64 + (j + 1) as f64 / steps_per_period as f64, &psi, n + 1)?;
            }
        } else {
            psi = linalg::matvec(&phi, &psi);
            record(&mut trace, (n + 1) as f64, &psi, n + 1)?;
        }
    }
    Ok(trace)
}

/// `|⟨Ψ, H(0)Ψ⟩| + t·sup‖V̇‖·‖Ψ‖²` together with the slack `sup‖V‖` used
/// when comparing against `⟨H⟩` instead of `⟨H + V(t)⟩`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrivialBound {
    pub initial: f64,
    /// Growth per unit physical time.
    pub slope: f64,
    pub sup_v: f64,
    pub period: f64,
}

impl TrivialBound {
    /// Bound at `t` given in periods.
    pub fn at(&self, t_periods: f64) -> f64 {
        self.initial + self.slope * self.period * t_periods
    }

    /// Slope per period.
    pub fn slope_per_period(&self) -> f64 {
        self.slope * self.period
    }

    /// Largest `values(t) − bound(t) − sup‖V‖`; non-positive means dominated.
    pub fn worst_excess(&self, trace: &EnergyTrace) -> f64 {
        trace
            .times
            .iter()
            .zip(&trace.values)
            .map(|(t, v)| v - self.at(*t) - self.sup_v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn trivial_bound(
    basis: &Arc<SpectralBasis>,
    v: &TimePeriodicOperator,
    psi0: &Array1<C64>,
    grid: usize,
) -> Result<TrivialBound> {
    let grid = grid.max(DEFAULT_GRID);
    let e = basis.energies_per_component();
    let v0 = v.evaluate(0.0);
    let vpsi = v0.data().dot(psi0);
    let mut expect = ZERO;
    for i in 0..psi0.len() {
        expect += psi0[i].conj() * (vpsi[i] + C64::new(e[i], 0.0) * psi0[i]);
    }
    let norm_sq = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let slope = v.time_derivative().sup_operator_norm(grid)? * norm_sq;
    let sup_v = v.sup_operator_norm(grid)?;
    Ok(TrivialBound { initial: expect.norm(), slope, sup_v, period: v.period() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    TailLsq,
    EnvelopeLsq,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentFit {
    pub sigma_fit: f64,
    /// 1.96 standard errors of the slope.
    pub ci_halfwidth: f64,
    pub window: (f64, f64),
    pub method: FitMethod,
}

/// Least-squares slope and its standard error.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, se)
}

/// Weighted slope, intercept and standard error; weights are normalized to mean one.
pub fn weighted_least_squares(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let ws: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v * n / ws).collect();
    let mx = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() / n;
    let my = y.iter().zip(&w).map(|(b, c)| b * c).sum::<f64>() / n;
    let sxx: f64 = x.iter().zip(&w).map(|(a, c)| c * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, b), c)| c * (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).zip(&w).map(|((a, b), c)| c * (b - intercept - slope * a).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, se)
}

/// Trapezoid weights in `log t`, so every stretch of `log t` counts equally.
fn log_spacing_weights(lx: &[f64]) -> Vec<f64> {
    let n = lx.len();
    (0..n)
        .map(|i| {
            let a = if i == 0 { lx[0] } else { lx[i - 1] };
            let b = if i + 1 == n { lx[n - 1] } else { lx[i + 1] };
            ((b - a) / 2.0).max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Log-log slope of the trace over `t ≥ (1 − window_fraction)·t_max`.
pub fn fit_exponent(trace: &EnergyTrace, window_fraction: f64, method: FitMethod) -> Result<ExponentFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("window fraction must lie in (0, 1], got {window_fraction}")));
    }
    if trace.len() < 100 {
        return Err(Error::DegenerateTrace(format!("need at least 100 samples, got {}", trace.len())));
    }
    let values: Vec<f64> = match method {
        FitMethod::TailLsq => trace.values.clone(),
        FitMethod::EnvelopeLsq => {
            let mut m = f64::NEG_INFINITY;
            trace
                .values
                .iter()
                .map(|v| {
                    m = m.max(*v);
                    m
                })
                .collect()
        }
    };
    let t_max = *trace.times.last().unwrap();
    let lo = (1.0 - window_fraction) * t_max;
    let (ts, vs): (Vec<f64>, Vec<f64>) =
        trace.times.iter().zip(&values).filter(|(t, _)| **t >= lo && **t > 0.0).map(|(t, v)| (*t, *v)).unzip();
    if ts.len() < 3 {
        return Err(Error::DegenerateTrace("fewer than 3 samples in the fit window".into()));
    }
    let window = (ts[0], *ts.last().unwrap());
    if vs.iter().all(|v| *v == vs[0]) {
        return Ok(ExponentFit { sigma_fit: 0.0, ci_halfwidth: 0.0, window, method });
    }
    if vs.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateTrace("non-positive energies in the fit window".into()));
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let (slope, _, se) = weighted_least_squares(&lx, &ly, &log_spacing_weights(&lx));
    if !slope.is_finite() {
        return Err(Error::DegenerateTrace("slope is not finite".into()));
    }
    Ok(ExponentFit { sigma_fit: slope, ci_halfwidth: 1.96 * se, window, method })
}

/// Linear slope of the trace (per period) over the same window.
pub fn linear_slope(trace: &EnergyTrace, window_fraction: f64) -> f64 {
    let (ts, vs) = trace.window(window_fraction);
    if ts.len() < 2 {
        return 0.0;
    }
    least_squares(&ts, &vs).0
}

/// `σ = 2α/(2⌈p−1⌉(1−α) − 1)`.
pub fn theoretical_sigma(alpha: f64, p: f64) -> Result<f64> {
    crate::spectral_basis::check_alpha(alpha)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be at least 1, got {p}")));
    }
    let l = (p - 1.0).ceil();
    let den = 2.0 * l * (1.0 - alpha) - 1.0;
    if den <= 0.0 {
        return Err(Error::BoundVacuous { ceil: l, needed: 1.0 / (2.0 * (1.0 - alpha)) });
    }
    Ok(2.0 * alpha / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct OffdiagDecayReport {
    /// Lattice indices `n` (first block is `n = 1`).
    pub n: Vec<f64>,
    /// `‖P_n B Q_n H^{−1/2}‖`.
    pub norms: Vec<f64>,
    pub class_norm: f64,
    /// Fitted `κ` in `norm ≈ c n^{−κ}`; `None` when fewer than two entries are nonzero.
    pub fitted_exponent: Option<f64>,
    /// Exponent the bound predicts, `2δ + α/2`.
    pub predicted_exponent: f64,
    /// Smallest `c` with `norm_n ≤ c ‖B‖_{p,δ} n^{−(2δ+α/2)}` on the truncation.
    pub empirical_constant: f64,
    pub mu: f64,
    pub mu_above_half: bool,
    pub nontrivial: bool,
}

fn row_norms(b: &BlockOperator) -> Result<Vec<f64>> {
    let basis = b.basis();
    let e = basis.energies_per_component();
    let inv_sqrt: Vec<f64> = e.iter().map(|x| 1.0 / x.sqrt()).collect();
    (0..basis.n_blocks())
        .map(|blk| {
            let r = basis.block_range(blk);
            let mut row = b.data().slice(s![r.clone(), ..]).to_owned();
            for (j, mut col) in row.columns_mut().into_iter().enumerate() {
                if r.contains(&j) {
                    col.fill(ZERO);
                } else {
                    col.mapv_inplace(|z| z * inv_sqrt[j]);
                }
            }
            linalg::spectral_norm(&row.view())
        })
        .collect()
}

fn decay_report(basis: &SpectralBasis, norms: Vec<f64>, class_norm: f64, delta: f64) -> OffdiagDecayReport {
    let alpha = basis.alpha();
    let n: Vec<f64> = (0..norms.len()).map(SpectralBasis::lattice_index).collect();
    let predicted = 2.0 * delta + alpha / 2.0;
    let floor = 1e-300;
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        n.iter().zip(&norms).filter(|(_, v)| **v > floor).map(|(k, v)| (k.ln(), v.ln())).unzip();
    let fitted_exponent = if lx.len() >= 2 { Some(-least_squares(&lx, &ly).0) } else { None };
    let empirical_constant = if class_norm > 0.0 {
        n.iter().zip(&norms).map(|(k, v)| v * k.powf(predicted) / class_norm).fold(0.0, f64::max)
    } else {
        0.0
    };
    let mu = 2.0 * delta;
    OffdiagDecayReport {
        n,
        norms,
        class_norm,
        fitted_exponent,
        predicted_exponent: predicted,
        empirical_constant,
        mu,
        mu_above_half: mu > 0.5,
        nontrivial: mu > 0.5 + alpha,
    }
}

/// Row-block norms `‖P_n B Q_n H^{−1/2}‖` against `n^{−(2δ+α/2)}`.
pub fn check_offdiag_decay(b: &BlockOperator, p: f64, delta: f64) -> Result<OffdiagDecayReport> {
    if b.basis().eigenvalues().iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidBasis("H must be positive".into()));
    }
    let norms = row_norms(b)?;
    let cn = class_norm(b, ClassParams::new(p, delta)?)?;
    Ok(decay_report(b.basis(), norms, cn, delta))
}

/// Family version: norms are maximized over a uniform grid of `grid` times.
pub fn check_offdiag_decay_family(
    b: &TimePeriodicOperator,
    p: f64,
    delta: f64,
    grid: usize,
) -> Result<OffdiagDecayReport> {
    let basis = b.basis().clone();
    if basis.eigenvalues().iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidBasis("H must be positive".into()));
    }
    let mut norms = vec![0.0; basis.n_blocks()];
    for t in b.grid(grid) {
        for (acc, v) in norms.iter_mut().zip(row_norms(&b.evaluate(t))?) {
            *acc = f64::max(*acc, v);
        }
    }
    let cn = b.family_class_norm_on(ClassParams::new(p, delta)?, grid)?;
    Ok(decay_report(&basis, norms, cn, delta))
}

/// `max_t ‖e^{−iX}He^{iX} − H‖` over the sampled `X(t)`: the largest gap between
/// `⟨H⟩` along a trajectory and along its image under `e^{iX(t)}`.
pub fn gauge_energy_shift(x: &TimePeriodicOperator, grid: usize) -> Result<f64> {
    let basis = x.basis();
    let h = basis.h_dense();
    let mut worst = 0.0f64;
    for t in x.grid(grid) {
        let xt = x.evaluate(t);
        let u = linalg::expm_hermitian(&xt.data().view(), C64::new(0.0, 1.0))?;
        let mut d = linalg::dagger(&u.view()).dot(&h).dot(&u) - &h;
        linalg::hermitize(&mut d);
        worst = worst.max(linalg::hermitian_norm(&d.view())?);
    }
    Ok(worst)
}
