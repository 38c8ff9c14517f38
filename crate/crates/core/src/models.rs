//! Model factories: the circle model `|p|^α + ε v(θ,t)` and the half-line
//! model `−Δ + λ a(t) n^α` in its reparametrized form `n^α − φ(s)Δ`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diagonalization::{default_q, epsilon_threshold};
use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::operator_classes::{cp_constant, BlockOperator, ClassParams};
use crate::spectral_basis::{certify_gaps, check_alpha, GapCertificate, SpectralBasis};
use crate::time_periodic::TimePeriodicOperator;

/// One real term of `v(θ, t)`; `j` is the spatial and `k` the temporal
/// harmonic. `Fourier` gives a raw coefficient of `e^{ijθ} e^{ikωt}`; its
/// conjugate partner must be listed too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PotentialTerm {
    CosCos { j: i64, k: i64, amplitude: f64 },
    CosSin { j: i64, k: i64, amplitude: f64 },
    SinCos { j: i64, k: i64, amplitude: f64 },
    SinSin { j: i64, k: i64, amplitude: f64 },
    Fourier { j: i64, k: i64, re: f64, im: f64 },
}

impl PotentialTerm {
    /// Exponential coefficients `(j, k, v̂_{j,k})` of this term.
    pub fn coefficients(&self) -> Vec<(i64, i64, C64)> {
        let q = |a: f64| C64::new(a / 4.0, 0.0);
        let qi = |a: f64| C64::new(0.0, a / 4.0);
        match *self {
            PotentialTerm::CosCos { j, k, amplitude: a } => {
                vec![(j, k, q(a)), (-j, k, q(a)), (j, -k, q(a)), (-j, -k, q(a))]
            }
            PotentialTerm::CosSin { j, k, amplitude: a } => {
                vec![(j, k, -qi(a)), (-j, k, -qi(a)), (j, -k, qi(a)), (-j, -k, qi(a))]
            }
            PotentialTerm::SinCos { j, k, amplitude: a } => {
                vec![(j, k, -qi(a)), (j, -k, -qi(a)), (-j, k, qi(a)), (-j, -k, qi(a))]
            }
            PotentialTerm::SinSin { j, k, amplitude: a } => {
                vec![(j, k, -q(a)), (-j, -k, -q(a)), (j, -k, q(a)), (-j, k, q(a))]
            }
            PotentialTerm::Fourier { j, k, re, im } => vec![(j, k, C64::new(re, im))],
        }
    }
}

fn default_shift() -> f64 {
    1.0
}

fn default_period() -> f64 {
    2.0 * PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HowlandModel {
    pub alpha: f64,
    /// Largest mode number `n`; the space is spanned by `e^{inθ}`, `|n| ≤ N`.
    #[serde(rename = "N")]
    pub n_max: usize,
    pub epsilon: f64,
    pub potential: Vec<PotentialTerm>,
    pub k_smooth: u32,
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default = "default_period")]
    pub period: f64,
}

impl HowlandModel {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.n_max < 1 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        if !(self.shift > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shift must be positive so that the lowest eigenvalue is positive, got {}",
                self.shift
            )));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument("epsilon must be finite".into()));
        }
        let coeffs = self.coefficients();
        for (&(j, k), &c) in &coeffs {
            let partner = coeffs.get(&(-j, -k)).copied().unwrap_or(ZERO);
            if (partner - c.conj()).norm() > 1e-14 * c.norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "potential is not real: coefficient ({j},{k}) lacks its conjugate partner"
                )));
            }
        }
        Ok(())
    }

    /// `v̂_{j,k}` with duplicate terms summed.
    pub fn coefficients(&self) -> BTreeMap<(i64, i64), C64> {
        let mut out = BTreeMap::new();
        for term in &self.potential {
            for (j, k, c) in term.coefficients() {
                *out.entry((j, k)).or_insert(ZERO) += c;
            }
        }
        out.retain(|_, c| *c != ZERO);
        out
    }

    /// `∫ v(θ,t) dt = 0` for every `θ`.
    pub fn has_zero_time_average(&self) -> bool {
        self.coefficients().keys().all(|&(_, k)| k != 0)
    }

    /// Concrete index of the mode `e^{inθ}` in the order `0, +1, −1, +2, −2, …`.
    pub fn mode_index(n: i64) -> usize {
        match n.cmp(&0) {
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => (2 * n - 1) as usize,
            std::cmp::Ordering::Less => (-2 * n) as usize,
        }
    }

    pub fn basis(&self) -> Result<Arc<SpectralBasis>> {
        self.validate()?;
        let eigs = (0..=self.n_max).map(|n| (n as f64).powf(self.alpha) + self.shift).collect();
        let mults = (0..=self.n_max).map(|n| if n == 0 { 1 } else { 2 }).collect();
        Ok(Arc::new(SpectralBasis::new(eigs, mults, self.alpha)?))
    }

    /// The potential `v` (without `ε`) as a family on `basis`.
    pub fn potential_family(&self, basis: &Arc<SpectralBasis>) -> Result<TimePeriodicOperator> {
        let n = self.n_max as i64;
        let dim = basis.dim();
        let mut by_k: BTreeMap<i64, Array2<C64>> = BTreeMap::new();
        for (&(j, k), &c) in &self.coefficients() {
            let m = by_k.entry(k).or_insert_with(|| Array2::zeros((dim, dim)));
            for b in -n..=n {
                let a = b + j;
                if a.abs() <= n {
                    m[[Self::mode_index(a), Self::mode_index(b)]] += c;
                }
            }
        }
        let pairs = by_k
            .into_iter()
            .map(|(k, m)| Ok((k, BlockOperator::from_dense(basis, m)?)))
            .collect::<Result<Vec<_>>>()?;
        TimePeriodicOperator::new(basis, self.period, pairs)
    }

    /// `(basis, ε v)`.
    pub fn build(&self) -> Result<(Arc<SpectralBasis>, TimePeriodicOperator)> {
        let basis = self.basis()?;
        let v = self.potential_family(&basis)?.scale(self.epsilon);
        Ok((basis, v))
    }

    /// Class exponent `p = k − 1` matched to the smoothness label.
    pub fn class_p(&self) -> f64 {
        self.k_smooth as f64 - 1.0
    }
}

/// `σ = 2α/(2(k−2)(1−α)−1)`.
pub fn howland_sigma(alpha: f64, k: u32) -> Result<f64> {
    check_alpha(alpha)?;
    let den = 2.0 * (k as f64 - 2.0) * (1.0 - alpha) - 1.0;
    if den <= 0.0 {
        return Err(Error::BoundVacuous { ceil: k as f64 - 2.0, needed: 1.0 / (2.0 * (1.0 - alpha)) });
    }
    Ok(2.0 * alpha / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct HowlandThreshold {
    pub p: f64,
    pub q: usize,
    /// `‖v‖_{p+1,0}` of the unscaled potential.
    pub potential_norm: f64,
    /// Threshold on `‖V_1‖_{p,γ}` for the reduction after the first transform.
    pub reduced_threshold: f64,
    pub epsilon_max: f64,
    pub certificate: GapCertificate,
}

/// Largest `|ε|` for which the commuting-case transform maps `ε v` into a
/// family below the reduction threshold:
/// `(C_H/2C_{p+1})(exp(4C_{p+1}T|ε|‖v‖_{p+1,0}) − 1) ≤ ε_thr(p, q)`.
pub fn howland_threshold(model: &HowlandModel) -> Result<HowlandThreshold> {
    let basis = model.basis()?;
    let cert = certify_gaps(&basis)?;
    let p = model.class_p();
    let q = default_q(p);
    let reduced = epsilon_threshold(p, q, model.period, cert.c_h, cert.cap_c_h)?;
    let v = model.potential_family(&basis)?;
    let potential_norm = v.family_class_norm(ClassParams::new(p + 1.0, 0.0)?)?;
    let c = cp_constant(p + 1.0)?;
    let epsilon_max = if potential_norm == 0.0 {
        f64::INFINITY
    } else {
        (2.0 * c * reduced / cert.cap_c_h).ln_1p() / (4.0 * c * model.period * potential_norm)
    };
    Ok(HowlandThreshold { p, q, potential_norm, reduced_threshold: reduced, epsilon_max, certificate: cert })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub k: u32,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Compares `sup_t ‖v(t)‖_{k,0}` with `2√(2π) sup |∂_θ^k v|`.
pub fn verify_ck_decay(model: &HowlandModel) -> Result<DecayReport> {
    let basis = model.basis()?;
    let v = model.potential_family(&basis)?;
    let k = model.k_smooth;
    let measured = v.family_class_norm(ClassParams::new((k as f64).max(1.0), if k <= 1 { 0.01 } else { 0.0 })?)?;
    let coeffs = model.coefficients();
    let (nt, nth) = (64, 512);
    let mut sup = 0.0f64;
    for it in 0..nt {
        let t = model.period * it as f64 / nt as f64;
        for ith in 0..nth {
            let th = 2.0 * PI * ith as f64 / nth as f64;
            let mut val = ZERO;
            for (&(j, kk), &c) in &coeffs {
                let deriv = C64::new(0.0, j as f64).powu(k);
                val += c * deriv * C64::from_polar(1.0, j as f64 * th + kk as f64 * 2.0 * PI / model.period * t);
            }
            sup = sup.max(val.norm());
        }
    }
    let bound = 2.0 * (2.0 * PI).sqrt() * sup;
    Ok(DecayReport { k, measured, bound, pass: measured <= bound * (1.0 + 1e-12) })
}

fn default_fourier_cap() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n_max: usize,
    pub lambda: f64,
    /// Mean of `a(t)`.
    pub a0: f64,
    /// `a(t) = a0 + Σ_m a_cos[m−1] cos(mωt) + a_sin[m−1] sin(mωt)`.
    #[serde(default)]
    pub a_cos: Vec<f64>,
    #[serde(default)]
    pub a_sin: Vec<f64>,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_fourier_cap")]
    pub fourier_cap: usize,
}

/// The monotone map `b(t) = λ ∫₀ᵗ a` and its inverse.
#[derive(Debug, Clone, Serialize)]
pub struct TimeReparam {
    pub lambda: f64,
    pub a0: f64,
    pub a_cos: Vec<f64>,
    pub a_sin: Vec<f64>,
    pub period: f64,
}

impl TimeReparam {
    fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn a(&self, t: f64) -> f64 {
        let w = self.omega();
        let mut v = self.a0;
        for (m, c) in self.a_cos.iter().enumerate() {
            v += c * ((m + 1) as f64 * w * t).cos();
        }
        for (m, c) in self.a_sin.iter().enumerate() {
            v += c * ((m + 1) as f64 * w * t).sin();
        }
        v
    }

    /// `κ = ∫₀ᵀ a`.
    pub fn kappa(&self) -> f64 {
        self.a0 * self.period
    }

    pub fn b(&self, t: f64) -> f64 {
        let w = self.omega();
        let mut v = self.a0 * t;
        for (m, c) in self.a_cos.iter().enumerate() {
            let mw = (m + 1) as f64 * w;
            v += c * (mw * t).sin() / mw;
        }
        for (m, c) in self.a_sin.iter().enumerate() {
            let mw = (m + 1) as f64 * w;
            v += c * (1.0 - (mw * t).cos()) / mw;
        }
        self.lambda * v
    }

    /// `b^{−1}(s)` by bisection within the period containing `s`.
    pub fn b_inv(&self, s: f64) -> f64 {
        let lk = self.lambda * self.kappa();
        let cycles = (s / lk).floor();
        let rest = s - cycles * lk;
        let (mut lo, mut hi) = (0.0, self.period);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.b(mid) < rest {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        cycles * self.period + 0.5 * (lo + hi)
    }

    /// `φ(s) = 1/(λ a(b^{−1}(s)))`.
    pub fn phi(&self, s: f64) -> f64 {
        1.0 / (self.lambda * self.a(self.b_inv(s)))
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub basis: Arc<SpectralBasis>,
    /// `−φ(s)Δ`, periodic with period `λκ`.
    pub perturbation: TimePeriodicOperator,
    pub reparam: TimeReparam,
    pub phi_harmonics: usize,
    /// Sup-norm error of the truncated series for `φ` on a dense grid.
    pub phi_residual: f64,
}

impl DiscreteModel {
    pub fn validate(&self) -> Result<TimeReparam> {
        check_alpha(self.alpha)?;
        if self.n_max < 2 {
            return Err(Error::InvalidArgument("N must be at least 2".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        let reparam = TimeReparam {
            lambda: self.lambda,
            a0: self.a0,
            a_cos: self.a_cos.clone(),
            a_sin: self.a_sin.clone(),
            period: self.period,
        };
        for j in 0..1024 {
            let t = self.period * j as f64 / 1024.0;
            let v = reparam.a(t);
            if v <= 0.0 {
                return Err(Error::PositivityViolated { t, value: v });
            }
        }
        Ok(reparam)
    }

    pub fn build(&self) -> Result<DiscreteSystem> {
        let reparam = self.validate()?;
        let basis = Arc::new(SpectralBasis::power(self.alpha, self.n_max, crate::MultiplicityRule::Simple)?);
        let n = self.n_max;
        let mut lap = Array2::<C64>::zeros((n, n));
        for i in 0..n - 1 {
            lap[[i, i + 1]] = C64::new(1.0, 0.0);
            lap[[i + 1, i]] = C64::new(1.0, 0.0);
        }
        let lap = BlockOperator::from_dense(&basis, lap)?;
        let big_period = self.lambda * reparam.kappa();

        let samples_n = 4 * self.fourier_cap.max(1) + 4;
        let samples: Vec<f64> =
            (0..samples_n).map(|j| reparam.phi(big_period * j as f64 / samples_n as f64)).collect();
        let check_n = 1024;
        let check: Vec<(f64, f64)> = (0..check_n)
            .map(|j| {
                let s = big_period * (j as f64 + 0.5) / check_n as f64;
                (s, reparam.phi(s))
            })
            .collect();
        let coef = |k: i64| -> C64 {
            let mut acc = ZERO;
            for (j, &v) in samples.iter().enumerate() {
                acc += C64::from_polar(v / samples_n as f64, -2.0 * PI * (k * j as i64) as f64 / samples_n as f64);
            }
            acc
        };
        let mut harmonics = vec![coef(0)];
        let mut residual = f64::INFINITY;
        let mut used = 0;
        for kmax in 0..=self.fourier_cap {
            if kmax > 0 {
                harmonics.push(coef(kmax as i64));
            }
            residual = check
                .iter()
                .map(|&(s, v)| {
                    let w = 2.0 * PI / big_period;
                    let mut approx = harmonics[0].re;
                    for (k, c) in harmonics.iter().enumerate().skip(1) {
                        approx += 2.0 * (c * C64::from_polar(1.0, k as f64 * w * s)).re;
                    }
                    (approx - v).abs()
                })
                .fold(0.0, f64::max);
            used = kmax;
            if residual < 1e-10 {
                break;
            }
        }
        let mut pairs = Vec::new();
        for (k, c) in harmonics.iter().enumerate() {
            let k = k as i64;
            pairs.push((k, lap.scale(-*c)));
            if k > 0 {
                pairs.push((-k, lap.scale(-c.conj())));
            }
        }
        let perturbation = TimePeriodicOperator::new(&basis, big_period, pairs)?;
        Ok(DiscreteSystem { basis, perturbation, reparam, phi_harmonics: used, phi_residual: residual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::operator_classes::block_norm;

    fn cos_model(n: usize) -> HowlandModel {
        HowlandModel {
            alpha: 0.5,
            n_max: n,
            epsilon: 1.0,
            potential: vec![PotentialTerm::CosCos { j: 1, k: 1, amplitude: 1.0 }],
            k_smooth: 6,
            shift: 1.0,
            period: 2.0 * PI,
        }
    }

    #[test]
    fn mode_ordering() {
        let idx: Vec<usize> = [0, 1, -1, 2, -2].iter().map(|&n| HowlandModel::mode_index(n)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn howland_basis_shape() {
        let b = cos_model(4).basis().unwrap();
        assert_eq!(b.dim(), 9);
        assert_eq!(b.multiplicities(), &[1, 2, 2, 2, 2]);
        assert!((b.energy(0) - 1.0).abs() < 1e-15);
        assert!((b.energy(4) - 3.0).abs() < 1e-15);
        assert!(certify_gaps(&b).unwrap().c_h > 0.0);
    }

    #[test]
    fn cosine_potential_block_norms() {
        let m = cos_model(6);
        let (b, v) = m.build().unwrap();
        assert!(v.is_hermitian_family());
        let at0 = v.evaluate(0.0);
        let norms = at0.block_norms();
        for i in 0..b.n_blocks() {
            for j in 0..b.n_blocks() {
                let d = (i as i64 - j as i64).abs();
                let expect = match (d, i.min(j)) {
                    (1, 0) => 0.5f64.sqrt(),
                    (1, _) => 0.5,
                    _ => 0.0,
                };
                assert!((norms[[i, j]] - expect).abs() < 1e-14, "({i},{j})");
            }
        }
        let k1 = ClassParams::new(1.0, 0.01).unwrap();
        let _ = k1;
        let norm = v.family_class_norm(ClassParams::new(2.0, 0.0).unwrap()).unwrap();
        assert!((norm - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn exponential_basis_oracle() {
        // direct quadrature of ⟨e^{iaθ}, v e^{ibθ}⟩ for a mixed potential
        let m = HowlandModel {
            potential: vec![
                PotentialTerm::CosCos { j: 1, k: 1, amplitude: 0.7 },
                PotentialTerm::SinSin { j: 2, k: 1, amplitude: -0.3 },
                PotentialTerm::SinCos { j: 1, k: 2, amplitude: 0.2 },
            ],
            ..cos_model(5)
        };
        let (b, v) = m.build().unwrap();
        let t = 0.83;
        let w = 2.0 * PI / m.period;
        let vfun = |th: f64| {
            0.7 * th.cos() * (w * t).cos() - 0.3 * (2.0 * th).sin() * (w * t).sin()
                + 0.2 * th.sin() * (2.0 * w * t).cos()
        };
        let nq = 256;
        let vt = v.evaluate(t);
        for a in -5i64..=5 {
            for bb in -5i64..=5 {
                let mut acc = ZERO;
                for q in 0..nq {
                    let th = 2.0 * PI * q as f64 / nq as f64;
                    acc += C64::from_polar(vfun(th) / nq as f64, (bb - a) as f64 * th);
                }
                let got = vt.data()[[HowlandModel::mode_index(a), HowlandModel::mode_index(bb)]];
                assert!((got - acc).norm() < 1e-14);
            }
        }
        assert_eq!(b.dim(), 11);
    }

    #[test]
    fn zero_potential() {
        let m = HowlandModel { potential: vec![], ..cos_model(4) };
        let (_, v) = m.build().unwrap();
        assert!(v.is_zero());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(HowlandModel { shift: 0.0, ..cos_model(4) }.build().is_err());
        assert!(HowlandModel { alpha: 1.2, ..cos_model(4) }.build().is_err());
        let complex = HowlandModel {
            potential: vec![PotentialTerm::Fourier { j: 1, k: 0, re: 1.0, im: 0.0 }],
            ..cos_model(4)
        };
        assert!(complex.build().is_err());
    }

    #[test]
    fn decay_bound_holds() {
        let m = HowlandModel {
            potential: vec![
                PotentialTerm::CosCos { j: 1, k: 1, amplitude: 1.0 },
                PotentialTerm::SinCos { j: 3, k: 1, amplitude: 0.5 },
            ],
            k_smooth: 2,
            ..cos_model(8)
        };
        let r = verify_ck_decay(&m).unwrap();
        assert!(r.pass, "{r:?}");
        let v = m.potential_family(&m.basis().unwrap()).unwrap().evaluate(0.0);
        assert!(block_norm(&v.block(0, 5)) == 0.0);
    }

    #[test]
    fn sigma_formula() {
        assert!((howland_sigma(0.5, 6).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(howland_sigma(0.5, 3).is_err());
    }

    #[test]
    fn threshold_is_positive() {
        let th = howland_threshold(&cos_model(16)).unwrap();
        assert_eq!(th.p, 5.0);
        assert_eq!(th.q, 3);
        assert!(th.epsilon_max > 0.0 && th.epsilon_max.is_finite());
    }

    fn discrete(a_cos: Vec<f64>) -> DiscreteModel {
        DiscreteModel {
            alpha: 0.5,
            n_max: 12,
            lambda: 1.0,
            a0: 1.0,
            a_cos,
            a_sin: vec![],
            period: 2.0 * PI,
            fourier_cap: 64,
        }
    }

    #[test]
    fn constant_drive() {
        let sys = discrete(vec![]).build().unwrap();
        assert!((sys.reparam.b(1.3) - 1.3).abs() < 1e-15);
        assert!((sys.reparam.kappa() - 2.0 * PI).abs() < 1e-15);
        assert_eq!(sys.phi_harmonics, 0);
        let v = sys.perturbation.evaluate(0.4);
        assert!((v.data()[[0, 1]].re + 1.0).abs() < 1e-14);
        let norm = sys.perturbation.family_class_norm(ClassParams::new(4.0, 0.0).unwrap()).unwrap();
        assert!((norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cosine_drive_reparametrization() {
        let sys = discrete(vec![0.5]).build().unwrap();
        let t = 2.0 * PI;
        assert!((sys.reparam.b(t) - t).abs() < 1e-14);
        assert!((sys.reparam.b(t / 2.0) - t / 2.0).abs() < 1e-14);
        for j in 0..500 {
            let s = 0.037 * j as f64;
            assert!((sys.reparam.b(sys.reparam.b_inv(s)) - s).abs() < 1e-10);
        }
        assert!(sys.phi_residual < 1e-10);
        for s in [0.1, 2.0, 5.5] {
            let phi = sys.reparam.phi(s);
            let v = sys.perturbation.evaluate(s);
            assert!((v.data()[[2, 3]].re + phi).abs() < 1e-9);
        }
        assert!(linalg::hermiticity_defect(&sys.perturbation.evaluate(1.0).data().view()) < 1e-15);
    }

    #[test]
    fn positivity_enforced() {
        assert!(matches!(discrete(vec![1.5]).build(), Err(Error::PositivityViolated { .. })));
    }
}
