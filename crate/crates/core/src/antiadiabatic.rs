//! Gauge transform `e^{iF(t)}(D+H+Y+Z(t))e^{−iF(t)} = D+H+Y+Z̄+Z_◇(t)` with
//! `Ḟ = Z − Z̄`, evaluated through the commutator series
//! `Z_◇ = Σ_{j≥1} (i^j/j!) ad_F^{j−1} X_j`.

use ndarray::Array2;
use serde::Serialize;

use crate::bounds::{BoundCheck, Mode};
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};
use crate::operator_classes::{class_norm, commutator_with_h, cp_constant, BlockOperator, ClassParams};
use crate::spectral_basis::GapCertificate;
use crate::time_periodic::{TimePeriodicOperator, DEFAULT_GRID};

#[derive(Debug, Clone, Copy)]
pub struct AntiAdiabaticOptions {
    /// Relative size of the last retained term.
    pub tol: f64,
    pub max_terms: usize,
    /// Number of sample times per period used for the series.
    pub grid: usize,
    pub mode: Mode,
}

impl Default for AntiAdiabaticOptions {
    fn default() -> Self {
        AntiAdiabaticOptions { tol: 1e-12, max_terms: 40, grid: DEFAULT_GRID, mode: Mode::Strict }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AntiAdiabaticResult {
    pub f: TimePeriodicOperator,
    pub z_bar: BlockOperator,
    pub z_diamond: TimePeriodicOperator,
    /// Largest number of series terms needed at any grid time.
    pub series_terms_used: usize,
    pub bound_rhs: f64,
    pub achieved_norm: f64,
    pub harmonic_cutoff: usize,
    /// Relative grid energy dropped by the harmonic cutoff.
    pub discarded_weight: f64,
    pub checks: Vec<BoundCheck>,
}

/// General transform: `Y ∈ Y(∞,γ)` diagonal Hermitian, `Z ∈ Y(r, iγ)`.
pub fn anti_adiabatic_transform(
    y: &BlockOperator,
    z: &TimePeriodicOperator,
    cert: &GapCertificate,
    r: f64,
    i: u32,
    opts: AntiAdiabaticOptions,
) -> Result<AntiAdiabaticResult> {
    if i < 1 {
        return Err(Error::InvalidArgument("the general transform needs i >= 1".into()));
    }
    run(y, z, cert, r, i, false, opts)
}

/// Variant for `[Z(t), Z(s)] = 0`: `X = ad_F(H+Y)`, `Z ∈ Y(r, 0)`.
pub fn anti_adiabatic_commuting(
    y: &BlockOperator,
    z: &TimePeriodicOperator,
    cert: &GapCertificate,
    r: f64,
    opts: AntiAdiabaticOptions,
) -> Result<AntiAdiabaticResult> {
    let scale = z
        .coefficients()
        .values()
        .map(|c| linalg::frobenius(&c.data().view()))
        .fold(0.0, f64::max);
    let worst = z.max_coefficient_commutator();
    if worst > 1e-12 * scale.powi(2) {
        return Err(Error::NotCommuting(worst));
    }
    run(y, z, cert, r, 0, true, opts)
}

fn run(
    y: &BlockOperator,
    z: &TimePeriodicOperator,
    cert: &GapCertificate,
    r: f64,
    i: u32,
    commuting: bool,
    opts: AntiAdiabaticOptions,
) -> Result<AntiAdiabaticResult> {
    if !y.is_diagonal() || !y.is_hermitian() {
        return Err(Error::InvalidArgument("Y must be block diagonal and Hermitian".into()));
    }
    if !z.is_hermitian_family() {
        return Err(Error::InvalidArgument("Z must be a Hermitian family".into()));
    }
    if !y.same_basis(&BlockOperator::zeros(z.basis())) {
        return Err(Error::DimensionMismatch("Y and Z live on different bases".into()));
    }
    let basis = z.basis().clone();
    let gamma = basis.gamma();
    let c_r = cp_constant(r)?;
    let in_class = ClassParams::new(r, i as f64 * gamma)?;
    let out_class = ClassParams::new(r - 1.0, (i as f64 + 1.0) * gamma)?;
    let norm_z = z.family_class_norm_on(in_class, opts.grid)?;
    let norm_y = class_norm(y, ClassParams::infinite(gamma)?)?;

    let f = z.primitive_of_fluctuation();
    let z_bar = z.time_average();
    let k = z.max_harmonic() as usize;
    let cutoff = 4 * k + 8;
    let grid = opts.grid.max(2 * cutoff + 1);

    let mut samples = Vec::with_capacity(grid);
    let mut terms_used = 0;
    let mut worst_decay = 0.0f64;
    for t in f.grid(grid) {
        let ft = f.evaluate(t);
        if ft.data().iter().all(|x| *x == ZERO) {
            samples.push(Array2::zeros((basis.dim(), basis.dim())));
            continue;
        }
        let series = series_at(&ft, y, &z.evaluate(t), &z_bar, c_r, in_class, out_class, commuting, opts)?;
        terms_used = terms_used.max(series.terms);
        worst_decay = worst_decay.max(series.worst_decay_ratio);
        samples.push(series.value);
    }
    let (z_diamond, discarded_weight) = if f.is_zero() {
        (TimePeriodicOperator::zero(&basis, z.period())?, 0.0)
    } else {
        TimePeriodicOperator::from_samples(&basis, z.period(), &samples, cutoff)?
    };

    let achieved_norm = z_diamond.family_class_norm_on(out_class, opts.grid)?;
    let growth = ((4.0 * c_r * z.period() * norm_z).exp() - 1.0) / (2.0 * c_r);
    let bound_rhs = if commuting {
        growth * (cert.cap_c_h + 2.0 * norm_y)
    } else {
        growth * (cert.cap_c_h + 4.0 * norm_y + 2.0 * c_r * norm_z)
    };
    let mut checks = vec![
        BoundCheck::le_flag_within("z_diamond_norm", achieved_norm, bound_rhs, 0.01, opts.mode),
        BoundCheck::le("series_term_decay", worst_decay, 1.0, opts.mode),
    ];
    let norm_f = f.family_class_norm_on(in_class, opts.grid)?;
    checks.push(BoundCheck::le("primitive_norm", norm_f, 2.0 * z.period() * norm_z, opts.mode));
    if !z_diamond.is_zero() && !z_diamond.is_hermitian_family() {
        return Err(Error::InvalidArgument("transformed family lost Hermiticity".into()));
    }
    Ok(AntiAdiabaticResult {
        f,
        z_bar,
        z_diamond,
        series_terms_used: terms_used,
        bound_rhs,
        achieved_norm,
        harmonic_cutoff: cutoff,
        discarded_weight,
        checks,
    })
}

struct SeriesValue {
    value: Array2<C64>,
    terms: usize,
    worst_decay_ratio: f64,
}

/// `Σ_j (i^j/j!) ad_F^{j−1}(a + (j/(j+1)) b + (1/(j+1)) c)` with
/// `a = ad_F(H+Y)`, `b = ad_F Z(t)`, `c = ad_F Z̄`, regrouped as
/// `ad^{j−1}(a+b) + ad^{j−1}(c−b)/(j+1)`.
#[allow(clippy::too_many_arguments)]
fn series_at(
    ft: &BlockOperator,
    y: &BlockOperator,
    zt: &BlockOperator,
    z_bar: &BlockOperator,
    c_r: f64,
    in_class: ClassParams,
    out_class: ClassParams,
    commuting: bool,
    opts: AntiAdiabaticOptions,
) -> Result<SeriesValue> {
    let fd = ft.data();
    let a = commutator_with_h(ft).data() + &linalg::commutator(fd, y.data());
    let (u0, v0) = if commuting {
        (a, None)
    } else {
        let b = linalg::commutator(fd, zt.data());
        let c = linalg::commutator(fd, z_bar.data());
        (&a + &b, Some(c - b))
    };
    let basis = ft.basis();
    let norm_of = |m: &Array2<C64>| -> Result<f64> {
        class_norm(&BlockOperator::from_parts(basis, m.clone(), false, false), out_class)
    };
    let combine = |u: &Array2<C64>, v: Option<&Array2<C64>>, w: f64| match v {
        Some(v) => u + &(v * C64::new(w, 0.0)),
        None => u.clone(),
    };
    let ratio = 2.0 * c_r * class_norm(ft, in_class)?;

    let (mut u, mut v) = (u0.clone(), v0.clone());
    let mut acc = Array2::<C64>::zeros(fd.dim());
    let mut ipow = C64::new(1.0, 0.0);
    let mut fact = 1.0;
    let mut pow_ratio = 1.0;
    let mut worst = 0.0f64;
    for j in 1..=opts.max_terms {
        ipow *= C64::new(0.0, 1.0);
        fact *= j as f64;
        let w = 1.0 / (j as f64 + 1.0);
        let ad_x = combine(&u, v.as_ref(), w);
        let x_norm = norm_of(&combine(&u0, v0.as_ref(), w))?;
        let term_norm = norm_of(&ad_x)? / fact;
        let bound = pow_ratio * x_norm / fact;
        if bound > 0.0 {
            worst = worst.max(term_norm / bound);
        } else if term_norm > 0.0 {
            worst = f64::INFINITY;
        }
        acc.scaled_add(ipow / fact, &ad_x);
        let acc_norm = norm_of(&acc)?;
        if term_norm <= opts.tol * acc_norm || acc_norm == 0.0 {
            return Ok(SeriesValue { value: acc, terms: j, worst_decay_ratio: worst });
        }
        if j == opts.max_terms {
            return Err(Error::SeriesNotConverged { terms: j, last: term_norm / acc_norm });
        }
        u = linalg::commutator(fd, &u);
        if let Some(vv) = v.as_mut() {
            *vv = linalg::commutator(fd, vv);
        }
        pow_ratio *= ratio;
    }
    Err(Error::SeriesNotConverged { terms: 0, last: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_classes;
    use crate::spectral_basis::{certify_gaps, MultiplicityRule, SpectralBasis};
    use std::sync::Arc;

    fn basis() -> Arc<SpectralBasis> {
        Arc::new(SpectralBasis::power(0.5, 8, MultiplicityRule::Simple).unwrap())
    }

    #[test]
    fn zero_and_constant_families_give_nothing() {
        let b = basis();
        let cert = certify_gaps(&b).unwrap();
        let y = BlockOperator::zeros(&b);
        let zero = TimePeriodicOperator::zero(&b, 1.0).unwrap();
        let res = anti_adiabatic_transform(&y, &zero, &cert, 3.0, 1, Default::default()).unwrap();
        assert!(res.f.is_zero() && res.z_diamond.is_zero());
        let c = operator_classes::offdiag_part(&BlockOperator::from_dense(
            &b,
            ndarray::Array2::from_elem((8, 8), C64::new(0.01, 0.0)),
        ).unwrap());
        let konst = TimePeriodicOperator::constant(c, 1.0).unwrap();
        let res = anti_adiabatic_transform(&y, &konst, &cert, 3.0, 1, Default::default()).unwrap();
        assert!(res.z_diamond.is_zero());
        assert_eq!(res.achieved_norm, 0.0);
    }

    fn gauge_oracle(y: &BlockOperator, z: &TimePeriodicOperator, t: f64) -> Array2<C64> {
        let f = z.primitive_of_fluctuation();
        let i = C64::new(0.0, 1.0);
        let eif = |s: f64| linalg::expm_hermitian(&f.evaluate(s).data().view(), i).unwrap();
        let u = eif(t);
        let ud = linalg::dagger(&u.view());
        let hy = BlockOperator::hamiltonian(z.basis()).add(y).unwrap();
        let h = 1e-3;
        let d = (eif(t - 2.0 * h) - eif(t - h) * C64::new(8.0, 0.0) + eif(t + h) * C64::new(8.0, 0.0)
            - eif(t + 2.0 * h))
            * C64::new(1.0 / (12.0 * h), 0.0);
        u.dot(&(hy.data() + z.evaluate(t).data())).dot(&ud) + d.dot(&ud) * i
            - hy.data()
            - z.time_average().data()
    }

    fn sample_family(b: &Arc<SpectralBasis>, scale: f64) -> TimePeriodicOperator {
        let n = b.dim();
        let c = Array2::from_shape_fn((n, n), |(m, k)| {
            let d = (m as f64 - k as f64).abs().max(1.0);
            C64::new(scale / d.powi(4), scale * 0.3 * (m as f64 - k as f64) / d.powi(5))
        });
        let c = BlockOperator::from_dense(b, c).unwrap();
        TimePeriodicOperator::cosine(&c, 1, 2.0).unwrap()
    }

    #[test]
    fn series_matches_gauge_oracle() {
        let b = basis();
        let cert = certify_gaps(&b).unwrap();
        let y = BlockOperator::from_dense(&b, Array2::from_diag(&ndarray::Array1::from_shape_fn(8, |k| {
            C64::new(0.01 * (k as f64).sin(), 0.0)
        }))).unwrap();
        let z = sample_family(&b, 0.05);
        let res = anti_adiabatic_transform(&y, &z, &cert, 3.0, 1, Default::default()).unwrap();
        assert!(res.checks.iter().all(|c| c.passed()), "{:?}", res.checks);
        assert!(res.discarded_weight < 1e-20);
        for t in [0.0, 0.3, 0.71, 1.55] {
            let diff = res.z_diamond.evaluate(t).data() - &gauge_oracle(&y, &z, t);
            assert!(linalg::max_abs(&diff.view()) < 1e-9, "t={t}");
        }
    }

    #[test]
    fn commuting_variant_rejects_non_commuting_family() {
        let b = basis();
        let cert = certify_gaps(&b).unwrap();
        let y = BlockOperator::zeros(&b);
        let z = sample_family(&b, 0.05);
        let other = operator_classes::diag_part(&BlockOperator::hamiltonian(&b));
        let z2 = z.add(&TimePeriodicOperator::sine(&other, 1, 2.0).unwrap()).unwrap();
        assert!(matches!(
            anti_adiabatic_commuting(&y, &z2, &cert, 3.0, Default::default()),
            Err(Error::NotCommuting(_))
        ));
        // The test is relative, so tiny couplings do not pass as commuting.
        assert!(matches!(
            anti_adiabatic_commuting(&y, &z2.scale(1e-9), &cert, 3.0, Default::default()),
            Err(Error::NotCommuting(_))
        ));
        let res = anti_adiabatic_commuting(&y, &z, &cert, 3.0, Default::default()).unwrap();
        assert!(res.checks.iter().all(|c| c.passed()));
        for t in [0.2, 1.1] {
            let diff = res.z_diamond.evaluate(t).data() - &gauge_oracle(&y, &z, t);
            assert!(linalg::max_abs(&diff.view()) < 1e-9);
        }
    }
}
