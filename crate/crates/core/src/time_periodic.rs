//! `T`-periodic operator families stored as trigonometric polynomials
//! `Z(t) = Σ_{|k|≤K} Ẑ_k e^{ikωt}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};
use crate::operator_classes::{self, BlockOperator, BlockOperatorRepr, ClassParams};
use crate::spectral_basis::SpectralBasis;

/// Grid used for every sup over one period unless told otherwise.
pub const DEFAULT_GRID: usize = 64;

const HERMITIAN_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct TimePeriodicOperator {
    basis: Arc<SpectralBasis>,
    period: f64,
    coefficients: BTreeMap<i64, BlockOperator>,
    hermitian_family: bool,
}

impl TimePeriodicOperator {
    /// Builds a family from `(k, Ẑ_k)` pairs. Repeated harmonics are summed;
    /// the Hermitian-family flag is detected (and made exact) automatically.
    pub fn new(
        basis: &Arc<SpectralBasis>,
        period: f64,
        harmonics: impl IntoIterator<Item = (i64, BlockOperator)>,
    ) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
        }
        let mut coefficients: BTreeMap<i64, BlockOperator> = BTreeMap::new();
        for (k, op) in harmonics {
            if !op.same_basis(&BlockOperator::zeros(basis)) {
                return Err(Error::DimensionMismatch("harmonic on a different basis".into()));
            }
            let merged = match coefficients.remove(&k) {
                Some(prev) => prev.add(&op)?,
                None => op,
            };
            coefficients.insert(k, merged);
        }
        let mut family = TimePeriodicOperator { basis: basis.clone(), period, coefficients, hermitian_family: false };
        family.prune();
        family.detect_hermitian();
        Ok(family)
    }

    pub fn zero(basis: &Arc<SpectralBasis>, period: f64) -> Result<Self> {
        Self::new(basis, period, std::iter::empty())
    }

    pub fn constant(op: BlockOperator, period: f64) -> Result<Self> {
        let basis = op.basis().clone();
        Self::new(&basis, period, [(0, op)])
    }

    /// `C cos(kωt)`.
    pub fn cosine(c: &BlockOperator, k: i64, period: f64) -> Result<Self> {
        let half = c.scale(C64::new(0.5, 0.0));
        Self::new(c.basis(), period, [(k, half.clone()), (-k, half)])
    }

    /// `C sin(kωt)`.
    pub fn sine(c: &BlockOperator, k: i64, period: f64) -> Result<Self> {
        let a = c.scale(C64::new(0.0, -0.5));
        let b = c.scale(C64::new(0.0, 0.5));
        Self::new(c.basis(), period, [(k, a), (-k, b)])
    }

    fn prune(&mut self) {
        self.coefficients.retain(|_, op| op.data().iter().any(|z| *z != ZERO));
    }

    fn detect_hermitian(&mut self) {
        let mut ok = true;
        for (&k, op) in &self.coefficients {
            if k < 0 {
                continue;
            }
            let scale = linalg::max_abs(&op.data().view()).max(1.0);
            let partner = match self.coefficients.get(&-k) {
                Some(p) => p.data().clone(),
                None => Array2::zeros(op.data().dim()),
            };
            let diff = &linalg::dagger(&op.data().view()) - &partner;
            if linalg::max_abs(&diff.view()) > HERMITIAN_TOL * scale {
                ok = false;
                break;
            }
        }
        if ok {
            for k in self.coefficients.keys().copied().filter(|&k| k < 0).collect::<Vec<_>>() {
                if !self.coefficients.contains_key(&-k) {
                    ok = false;
                    break;
                }
            }
        }
        self.hermitian_family = ok;
        if ok {
            self.symmetrize();
        }
    }

    /// Forces `Ẑ_{−k} = Ẑ_k†` exactly.
    fn symmetrize(&mut self) {
        let keys: Vec<i64> = self.coefficients.keys().copied().filter(|&k| k >= 0).collect();
        for k in keys {
            let op = &self.coefficients[&k];
            if k == 0 {
                let sym = BlockOperator::from_parts(op.basis(), op.data().clone(), true, op.is_diagonal());
                self.coefficients.insert(0, sym);
            } else {
                let neg = &self.coefficients[&-k];
                let avg = (op.data() + &linalg::dagger(&neg.data().view())) * C64::new(0.5, 0.0);
                let diag = op.is_diagonal() && neg.is_diagonal();
                let pos = BlockOperator::from_parts(op.basis(), avg.clone(), false, diag);
                let neg = BlockOperator::from_parts(op.basis(), linalg::dagger(&avg.view()), false, diag);
                self.coefficients.insert(k, pos);
                self.coefficients.insert(-k, neg);
            }
        }
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn is_hermitian_family(&self) -> bool {
        self.hermitian_family
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Largest `|k|` with a nonzero coefficient.
    pub fn max_harmonic(&self) -> i64 {
        self.coefficients.keys().map(|k| k.abs()).max().unwrap_or(0)
    }

    pub fn coefficients(&self) -> &BTreeMap<i64, BlockOperator> {
        &self.coefficients
    }

    pub fn coefficient(&self, k: i64) -> BlockOperator {
        self.coefficients.get(&k).cloned().unwrap_or_else(|| BlockOperator::zeros(&self.basis))
    }

    /// All coefficients block diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.coefficients.values().all(BlockOperator::is_diagonal)
    }

    /// `Z(t)`.
    pub fn evaluate(&self, t: f64) -> BlockOperator {
        let d = self.basis.dim();
        let mut data = Array2::zeros((d, d));
        let w = self.omega();
        for (&k, op) in &self.coefficients {
            let phase = C64::from_polar(1.0, k as f64 * w * t);
            data.scaled_add(phase, op.data());
        }
        BlockOperator::from_parts(&self.basis, data, self.hermitian_family, self.is_diagonal())
    }

    /// `Z̄ = Ẑ_0`.
    pub fn time_average(&self) -> BlockOperator {
        let mut avg = self.coefficient(0);
        if self.hermitian_family {
            avg = BlockOperator::from_parts(&self.basis, avg.data().clone(), true, avg.is_diagonal());
        }
        avg
    }

    /// `Z̃ = Z − Z̄`.
    pub fn fluctuation(&self) -> TimePeriodicOperator {
        let mut out = self.clone();
        out.coefficients.remove(&0);
        out
    }

    /// `F(t) = ∫₀ᵗ Z̃(s) ds`: `F̂_k = Ẑ_k/(ikω)` and `F̂_0` fixed by `F(0) = 0`.
    pub fn primitive_of_fluctuation(&self) -> TimePeriodicOperator {
        let w = self.omega();
        let d = self.basis.dim();
        let mut coefficients = BTreeMap::new();
        let mut f0 = Array2::<C64>::zeros((d, d));
        for (&k, op) in &self.coefficients {
            if k == 0 {
                continue;
            }
            let c = op.scale(C64::new(0.0, -1.0 / (k as f64 * w)));
            f0 -= c.data();
            coefficients.insert(k, c);
        }
        if !coefficients.is_empty() {
            let diag = coefficients.values().all(BlockOperator::is_diagonal);
            coefficients.insert(0, BlockOperator::from_parts(&self.basis, f0, self.hermitian_family, diag));
        }
        let mut out = TimePeriodicOperator {
            basis: self.basis.clone(),
            period: self.period,
            coefficients,
            hermitian_family: self.hermitian_family,
        };
        out.prune();
        out
    }

    /// `Ż`: coefficients `ikω Ẑ_k`.
    pub fn time_derivative(&self) -> TimePeriodicOperator {
        let w = self.omega();
        let coefficients = self
            .coefficients
            .iter()
            .filter(|(&k, _)| k != 0)
            .map(|(&k, op)| (k, op.scale(C64::new(0.0, k as f64 * w))))
            .collect();
        TimePeriodicOperator {
            basis: self.basis.clone(),
            period: self.period,
            coefficients,
            hermitian_family: self.hermitian_family,
        }
    }

    /// Applies `f` to every coefficient, keeping harmonic labels.
    pub fn map_coefficients(
        &self,
        mut f: impl FnMut(&BlockOperator) -> Result<BlockOperator>,
    ) -> Result<TimePeriodicOperator> {
        let pairs = self
            .coefficients
            .iter()
            .map(|(&k, op)| Ok((k, f(op)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&self.basis, self.period, pairs)
    }

    pub fn add(&self, other: &TimePeriodicOperator) -> Result<TimePeriodicOperator> {
        self.check_compatible(other)?;
        let pairs = self.coefficients.iter().chain(other.coefficients.iter()).map(|(&k, op)| (k, op.clone()));
        Self::new(&self.basis, self.period, pairs)
    }

    pub fn scale(&self, c: f64) -> TimePeriodicOperator {
        let mut out = self.clone();
        for op in out.coefficients.values_mut() {
            *op = op.scale(C64::new(c, 0.0));
        }
        out.prune();
        out
    }

    fn check_compatible(&self, other: &TimePeriodicOperator) -> Result<()> {
        if (self.period - other.period).abs() > 1e-14 * self.period {
            return Err(Error::InvalidArgument("families have different periods".into()));
        }
        if *self.basis != *other.basis {
            return Err(Error::DimensionMismatch("families live on different bases".into()));
        }
        Ok(())
    }

    /// Equispaced grid `t_j = jT/n`, `j = 0..n`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        (0..n).map(|j| j as f64 * self.period / n as f64).collect()
    }

    /// `max_t ‖Z(t)‖_{p,δ}` over an `n`-point grid.
    pub fn family_class_norm_on(&self, params: ClassParams, n: usize) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        if self.max_harmonic() == 0 {
            return operator_classes::class_norm(&self.coefficient(0), params);
        }
        let mut best = 0.0f64;
        for t in self.grid(n) {
            best = best.max(operator_classes::class_norm(&self.evaluate(t), params)?);
        }
        Ok(best)
    }

    pub fn family_class_norm(&self, params: ClassParams) -> Result<f64> {
        self.family_class_norm_on(params, DEFAULT_GRID)
    }

    /// `max_t ‖Z(t)‖` (assembled 2-norm) over an `n`-point grid.
    pub fn sup_operator_norm(&self, n: usize) -> Result<f64> {
        if self.max_harmonic() == 0 {
            return self.coefficient(0).operator_norm();
        }
        let mut best = 0.0f64;
        for t in self.grid(n) {
            best = best.max(self.evaluate(t).operator_norm()?);
        }
        Ok(best)
    }

    /// Largest Frobenius norm of `[Ẑ_j, Ẑ_k]` over all harmonic pairs.
    /// Zero exactly when `[Z(t), Z(s)] = 0` for all `t, s`.
    pub fn max_coefficient_commutator(&self) -> f64 {
        let ops: Vec<&BlockOperator> = self.coefficients.values().collect();
        let mut worst = 0.0f64;
        for a in 0..ops.len() {
            for b in (a + 1)..ops.len() {
                let c = linalg::commutator(ops[a].data(), ops[b].data());
                worst = worst.max(linalg::frobenius(&c.view()));
            }
        }
        worst
    }

    /// Re-expands grid samples `Z(jT/M)` as a trigonometric polynomial with
    /// harmonics `|k| ≤ cutoff`. Returns the family and the relative share of
    /// grid energy (Parseval) carried by the discarded harmonics.
    pub fn from_samples(
        basis: &Arc<SpectralBasis>,
        period: f64,
        samples: &[Array2<C64>],
        cutoff: usize,
    ) -> Result<(TimePeriodicOperator, f64)> {
        let m = samples.len();
        if m < 2 * cutoff + 1 {
            return Err(Error::InvalidArgument(format!(
                "{m} samples cannot resolve {cutoff} harmonics"
            )));
        }
        let d = basis.dim();
        let total: f64 = samples.iter().map(|s| s.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>() / m as f64;
        let mut kept = 0.0;
        let mut pairs = Vec::new();
        for k in -(cutoff as i64)..=(cutoff as i64) {
            let mut acc = Array2::<C64>::zeros((d, d));
            for (j, s) in samples.iter().enumerate() {
                let phase = C64::from_polar(1.0 / m as f64, -2.0 * PI * (k * j as i64) as f64 / m as f64);
                acc.scaled_add(phase, s);
            }
            kept += acc.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let diag = is_block_diagonal(basis, &acc);
            pairs.push((k, BlockOperator::from_parts(basis, acc, false, diag)));
        }
        let discarded = if total > 0.0 { ((total - kept) / total).max(0.0) } else { 0.0 };
        Ok((Self::new(basis, period, pairs)?, discarded))
    }

    pub fn to_repr(&self) -> FamilyRepr {
        FamilyRepr {
            period: self.period,
            harmonics: self
                .coefficients
                .iter()
                .map(|(&k, op)| HarmonicRepr { k, operator: op.to_repr() })
                .collect(),
        }
    }

    pub fn from_repr(basis: &Arc<SpectralBasis>, repr: &FamilyRepr) -> Result<Self> {
        let pairs = repr
            .harmonics
            .iter()
            .map(|h| Ok((h.k, BlockOperator::from_repr(basis, &h.operator)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(basis, repr.period, pairs)
    }
}

impl Serialize for TimePeriodicOperator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_repr().serialize(serializer)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicRepr {
    pub k: i64,
    pub operator: BlockOperatorRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyRepr {
    pub period: f64,
    pub harmonics: Vec<HarmonicRepr>,
}

fn is_block_diagonal(basis: &SpectralBasis, a: &Array2<C64>) -> bool {
    a.indexed_iter().all(|((i, j), z)| *z == ZERO || basis.block_of(i) == basis.block_of(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_basis::MultiplicityRule;

    fn setup() -> (Arc<SpectralBasis>, BlockOperator) {
        let b = Arc::new(SpectralBasis::power(0.5, 6, MultiplicityRule::Simple).unwrap());
        let d = Array2::from_shape_fn((6, 6), |(i, j)| {
            C64::new(1.0 / (1.0 + (i as f64 - j as f64).abs()), 0.1 * (i as f64 - j as f64))
        });
        let c = BlockOperator::from_dense(&b, d).unwrap();
        assert!(c.is_hermitian());
        (b, c)
    }

    fn dist(a: &BlockOperator, b: &BlockOperator) -> f64 {
        linalg::max_abs(&(a.data() - b.data()).view())
    }

    #[test]
    fn cosine_evaluation() {
        let (_, c) = setup();
        let t = 2.0 * PI;
        let z = TimePeriodicOperator::cosine(&c, 1, t).unwrap();
        assert!(z.is_hermitian_family());
        assert!(dist(&z.evaluate(0.0), &c) < 1e-15);
        assert!(linalg::max_abs(&z.evaluate(t / 4.0).data().view()) < 1e-15 * 2.0);
        assert!(z.time_average().data().iter().all(|x| *x == ZERO));
    }

    #[test]
    fn constant_family() {
        let (_, c) = setup();
        let z = TimePeriodicOperator::constant(c.clone(), 3.0).unwrap();
        assert!(dist(&z.evaluate(1.234), &c) == 0.0);
        assert!(z.primitive_of_fluctuation().is_zero());
        assert!(z.time_derivative().is_zero());
        let p = ClassParams::new(3.0, 0.25).unwrap();
        assert_eq!(
            z.family_class_norm(p).unwrap(),
            operator_classes::class_norm(&c, p).unwrap()
        );
    }

    #[test]
    fn primitive_of_cosine_is_sine() {
        let (_, c) = setup();
        let t = 1.7;
        let w = 2.0 * PI / t;
        let z = TimePeriodicOperator::cosine(&c, 1, t).unwrap();
        let f = z.primitive_of_fluctuation();
        assert!(f.is_hermitian_family());
        assert!(linalg::max_abs(&f.evaluate(0.0).data().view()) < 1e-15);
        let expect = c.scale(C64::new(1.0 / w, 0.0));
        assert!(dist(&f.evaluate(t / 4.0), &expect) < 1e-15);
    }

    #[test]
    fn derivative_of_sine() {
        let (_, c) = setup();
        let t = 2.0;
        let z = TimePeriodicOperator::sine(&c, 1, t).unwrap();
        assert!(z.is_hermitian_family());
        let expect = c.scale(C64::new(z.omega(), 0.0));
        assert!(dist(&z.time_derivative().evaluate(0.0), &expect) < 1e-14);
    }

    #[test]
    fn derivative_of_primitive_roundtrip() {
        let (_, c) = setup();
        let z = TimePeriodicOperator::cosine(&c, 2, 1.0)
            .unwrap()
            .add(&TimePeriodicOperator::sine(&c, 3, 1.0).unwrap())
            .unwrap()
            .add(&TimePeriodicOperator::constant(c.clone(), 1.0).unwrap())
            .unwrap();
        let back = z.primitive_of_fluctuation().time_derivative();
        let fl = z.fluctuation();
        for t in z.grid(16) {
            assert!(dist(&back.evaluate(t), &fl.evaluate(t)) < 1e-13);
        }
    }

    #[test]
    fn sample_roundtrip() {
        let (b, c) = setup();
        let z = TimePeriodicOperator::cosine(&c, 1, 2.0)
            .unwrap()
            .add(&TimePeriodicOperator::sine(&c, 2, 2.0).unwrap())
            .unwrap();
        let samples: Vec<_> = z.grid(16).iter().map(|&t| z.evaluate(t).into_data()).collect();
        let (back, lost) = TimePeriodicOperator::from_samples(&b, 2.0, &samples, 4).unwrap();
        assert!(lost < 1e-14);
        assert!(back.is_hermitian_family());
        for t in [0.1, 0.77, 1.9] {
            assert!(dist(&back.evaluate(t), &z.evaluate(t)) < 1e-13);
        }
    }

    #[test]
    fn commutator_of_factorized_family_vanishes() {
        let (_, c) = setup();
        let z = TimePeriodicOperator::cosine(&c, 1, 1.0)
            .unwrap()
            .add(&TimePeriodicOperator::sine(&c, 2, 1.0).unwrap())
            .unwrap();
        assert!(z.max_coefficient_commutator() < 1e-14);
    }

    #[test]
    fn json_roundtrip() {
        let (b, c) = setup();
        let z = TimePeriodicOperator::sine(&c, 1, 2.0).unwrap();
        let repr = z.to_repr();
        let back = TimePeriodicOperator::from_repr(&b, &repr).unwrap();
        assert!(dist(&back.evaluate(0.3), &z.evaluate(0.3)) < 1e-15);
    }
}
