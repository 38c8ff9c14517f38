//! Builds the truncated system described by a config and the smallness
//! threshold that applies to it.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use shrinking_gaps::diagonalization::{default_q, epsilon_threshold};
use shrinking_gaps::models::{DiscreteModel, HowlandModel, TimeReparam};
use shrinking_gaps::operator_classes::{cp_constant, ClassParams};
use shrinking_gaps::spectral_basis::certify_gaps;
use shrinking_gaps::time_periodic::TimePeriodicOperator;
use shrinking_gaps::{BoundCheck, GapCertificate, Mode, SpectralBasis};

use crate::config::{ExperimentConfig, ModelSection};
use crate::error::{CliError, CliResult, Context};

/// How the reduction reaches a perturbation in `Y(p, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Zero-mean, time-commuting family in `Y(p+1, 0)`: one gauge transform
    /// first, then the reduction on the transformed family.
    Commuting,
    /// The family itself is measured in `Y(p, γ)`.
    Direct,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormValue {
    pub p: f64,
    pub delta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Threshold {
    pub route: Route,
    pub p: f64,
    pub q: usize,
    pub period: f64,
    /// Admissible `‖V‖_{p,γ}` for the reduction.
    pub reduction_threshold: f64,
    /// `c_H/(4π C_{p+1})`, present when `q = 1`.
    pub closed_form_q1: Option<f64>,
    /// Norm that the route constrains.
    pub norm: NormValue,
    /// Largest admissible value of `norm`.
    pub limit: f64,
    pub coupling: String,
    pub coupling_value: f64,
    /// Largest admissible `ε` (Howland) or smallest admissible `λ` (discrete).
    pub coupling_admissible: f64,
    pub within: bool,
}

pub struct Setup {
    pub cfg: ExperimentConfig,
    pub mode: Mode,
    pub basis: Arc<SpectralBasis>,
    pub cert: GapCertificate,
    pub v: TimePeriodicOperator,
    pub p: f64,
    pub q: usize,
    pub threshold: Threshold,
    pub reparam: Option<TimeReparam>,
    pub meta: Value,
}

/// Bound on `‖V‖_{p+1,0}` for which the commuting transform lands below
/// `thr`: `(C_H/2C_{p+1})(exp(4C_{p+1}T‖V‖) − 1) ≤ thr`.
pub fn commuting_limit(p: f64, thr: f64, period: f64, cert: &GapCertificate) -> CliResult<f64> {
    let c = cp_constant(p + 1.0).ctx("threshold")?;
    Ok((2.0 * c * thr / cert.cap_c_h).ln_1p() / (4.0 * c * period))
}

impl Setup {
    pub fn build(cfg: ExperimentConfig) -> CliResult<Setup> {
        let mode = if cfg.pipeline.strict { Mode::Strict } else { Mode::Permissive };
        let p = cfg.class_p();
        let q = cfg.pipeline.q.unwrap_or_else(|| default_q(p));
        let grid = cfg.pipeline.grid;
        match cfg.model.clone() {
            ModelSection::Howland { alpha, n_max, epsilon, epsilon_fraction, potential, k_smooth, shift, period } => {
                let unit = HowlandModel { alpha, n_max, epsilon: 1.0, potential, k_smooth, shift, period };
                let basis = unit.basis().ctx("model")?;
                let cert = certify_gaps(&basis).ctx("model")?;
                let v_unit = unit.potential_family(&basis).ctx("model.potential")?;
                let thr = epsilon_threshold(p, q, period, cert.c_h, cert.cap_c_h).ctx("threshold")?;
                let gamma = basis.gamma();
                let (route, params, limit) = if unit.has_zero_time_average() {
                    (Route::Commuting, ClassParams::new(p + 1.0, 0.0), commuting_limit(p, thr, period, &cert)?)
                } else {
                    (Route::Direct, ClassParams::new(p, gamma), thr)
                };
                let params = params.ctx("threshold")?;
                let unit_norm = v_unit.family_class_norm_on(params, grid).ctx("threshold")?;
                let eps_max = if unit_norm == 0.0 { f64::INFINITY } else { limit / unit_norm };
                let eps = match (epsilon, epsilon_fraction) {
                    (Some(e), _) => e,
                    (None, Some(f)) if eps_max.is_finite() => f * eps_max,
                    (None, Some(_)) => {
                        return Err(CliError::Validation(
                            "model.epsilon_fraction: the potential is zero, so the admissible epsilon is unbounded"
                                .into(),
                        ))
                    }
                    (None, None) => unreachable!("validated"),
                };
                let v = v_unit.scale(eps);
                let threshold = Threshold {
                    route,
                    p,
                    q,
                    period,
                    reduction_threshold: thr,
                    closed_form_q1: closed_form(q, p, &cert)?,
                    norm: NormValue { p: params.p, delta: params.delta, value: eps.abs() * unit_norm },
                    limit,
                    coupling: "epsilon".into(),
                    coupling_value: eps,
                    coupling_admissible: eps_max,
                    within: eps.abs() <= eps_max,
                };
                let meta = json!({
                    "kind": "howland",
                    "alpha": alpha,
                    "N": n_max,
                    "dim": basis.dim(),
                    "epsilon": eps,
                    "k_smooth": k_smooth,
                    "shift": shift,
                    "period": period,
                    "fingerprint": basis.fingerprint(),
                });
                Ok(Setup { cfg, mode, basis, cert, v, p, q, threshold, reparam: None, meta })
            }
            ModelSection::Discrete { alpha, n_max, lambda, a0, a_cos, a_sin, period, fourier_cap } => {
                let model = DiscreteModel { alpha, n_max, lambda, a0, a_cos, a_sin, period, fourier_cap };
                let sys = model.build().ctx("model")?;
                let basis = sys.basis.clone();
                let cert = certify_gaps(&basis).ctx("model")?;
                let v = sys.perturbation.clone();
                let big_period = v.period();
                let thr = epsilon_threshold(p, q, big_period, cert.c_h, cert.cap_c_h).ctx("threshold")?;
                let params = ClassParams::new(p, basis.gamma()).ctx("threshold")?;
                let norm = v.family_class_norm_on(params, grid).ctx("threshold")?;
                let threshold = Threshold {
                    route: Route::Direct,
                    p,
                    q,
                    period: big_period,
                    reduction_threshold: thr,
                    closed_form_q1: closed_form(q, p, &cert)?,
                    norm: NormValue { p, delta: params.delta, value: norm },
                    limit: thr,
                    coupling: "lambda".into(),
                    coupling_value: lambda,
                    // `φ` scales exactly like `1/λ` at fixed sample fractions.
                    coupling_admissible: lambda * norm / thr,
                    within: norm <= thr,
                };
                let meta = json!({
                    "kind": "discrete",
                    "alpha": alpha,
                    "N": n_max,
                    "dim": basis.dim(),
                    "lambda": lambda,
                    "kappa": sys.reparam.kappa(),
                    "period": period,
                    "reparametrized_period": big_period,
                    "phi_harmonics": sys.phi_harmonics,
                    "phi_residual": sys.phi_residual,
                    "fingerprint": basis.fingerprint(),
                });
                Ok(Setup { cfg, mode, basis, cert, v, p, q, threshold, reparam: Some(sys.reparam), meta })
            }
        }
    }

    /// Refuses in strict mode when the coupling exceeds the threshold.
    pub fn require_smallness(&self, command: &str) -> CliResult<()> {
        let t = &self.threshold;
        if t.within || !self.mode.is_strict() {
            return Ok(());
        }
        let message = match t.coupling.as_str() {
            "epsilon" => format!(
                "{command}: |epsilon| = {:e} exceeds the admissible epsilon_max = {:e} in strict mode \
                 (use --permissive to continue)",
                t.coupling_value.abs(),
                t.coupling_admissible
            ),
            _ => format!(
                "{command}: lambda = {:e} is below the admissible lambda_min = {:e} in strict mode \
                 (use --permissive to continue)",
                t.coupling_value, t.coupling_admissible
            ),
        };
        let report = json!({
            "command": command,
            "refused": true,
            "reason": message,
            "threshold": t,
            "model": self.meta,
        });
        Err(CliError::Refused { message, report })
    }

    /// The smallness condition as a check; a warning in permissive mode.
    pub fn smallness_check(&self) -> BoundCheck {
        BoundCheck::le("smallness", self.threshold.norm.value, self.threshold.limit, self.mode)
    }

    pub fn certificate_json(&self) -> Value {
        json!({
            "c_H": self.cert.c_h,
            "C_H": self.cert.cap_c_h,
            "verified_up_to": self.cert.verified_up_to,
            "gamma": self.basis.gamma(),
        })
    }
}

fn closed_form(q: usize, p: f64, cert: &GapCertificate) -> CliResult<Option<f64>> {
    if q != 1 {
        return Ok(None);
    }
    let c = cp_constant(p + 1.0).ctx("threshold")?;
    Ok(Some(cert.c_h / (4.0 * std::f64::consts::PI * c)))
}
