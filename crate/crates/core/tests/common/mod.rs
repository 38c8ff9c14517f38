#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, MutexGuard};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shrinking_gaps::linalg::{self, C64};
use shrinking_gaps::operator_classes::{class_norm, BlockOperator, ClassParams};
use shrinking_gaps::spectral_basis::SpectralBasis;
use shrinking_gaps::time_periodic::TimePeriodicOperator;

/// Random operator whose block `(m, n)` has norm up to `⟨m−n⟩^{−p} max(m,n)^{−2δ}`.
/// `shape` picks between a saturated profile, a randomly thinned one and a
/// sparse one so that class norms are attained in different places.
pub fn random_in_class(
    basis: &Arc<SpectralBasis>,
    p: f64,
    delta: f64,
    shape: u8,
    rng: &mut ChaCha8Rng,
) -> BlockOperator {
    let dim = basis.dim();
    let nb = basis.n_blocks();
    let across: Vec<f64> = (0..nb).map(|d| (1.0 + (d * d) as f64).sqrt().powf(-p)).collect();
    let along: Vec<f64> = (0..nb).map(|k| SpectralBasis::lattice_index(k).powf(-2.0 * delta)).collect();
    let block_of: Vec<usize> = (0..dim).map(|i| basis.block_of(i)).collect();
    let mut data = Array2::<C64>::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            let (bi, bj) = (block_of[i], block_of[j]);
            let profile = across[bi.abs_diff(bj)] * along[bi.max(bj)];
            let amp = match shape % 3 {
                0 => 1.0,
                1 => rng.gen::<f64>(),
                _ => {
                    if rng.gen::<f64>() < 0.1 {
                        rng.gen::<f64>() * 3.0
                    } else {
                        0.0
                    }
                }
            };
            data[[i, j]] = C64::from_polar(amp * profile, rng.gen::<f64>() * 2.0 * PI);
        }
    }
    BlockOperator::from_dense(basis, data).unwrap()
}

pub fn random_hermitian_in_class(
    basis: &Arc<SpectralBasis>,
    p: f64,
    delta: f64,
    shape: u8,
    rng: &mut ChaCha8Rng,
) -> BlockOperator {
    let mut d = random_in_class(basis, p, delta, shape, rng).into_data();
    linalg::hermitize(&mut d);
    BlockOperator::from_dense(basis, d).unwrap()
}

/// Block-diagonal Hermitian operator with blocks of size up to `scale`.
pub fn random_diagonal(basis: &Arc<SpectralBasis>, scale: f64, rng: &mut ChaCha8Rng) -> BlockOperator {
    let dim = basis.dim();
    let mut data = Array2::<C64>::zeros((dim, dim));
    for b in 0..basis.n_blocks() {
        let r = basis.block_range(b);
        for i in r.clone() {
            for j in r.clone() {
                data[[i, j]] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
            }
        }
    }
    linalg::hermitize(&mut data);
    BlockOperator::from_dense(basis, data).unwrap()
}

pub fn rescale(op: &BlockOperator, params: ClassParams, target: f64) -> BlockOperator {
    let n = class_norm(op, params).unwrap();
    op.scale(C64::new(target / n, 0.0))
}

/// `C e^{ikωt} + C† e^{−ikωt}` plus an optional constant part.
pub fn one_harmonic(c: &BlockOperator, c0: Option<&BlockOperator>, k: i64, period: f64) -> TimePeriodicOperator {
    let mut pairs = vec![(k, c.clone()), (-k, c.dagger())];
    if let Some(c0) = c0 {
        pairs.push((0, c0.clone()));
    }
    TimePeriodicOperator::new(c.basis(), period, pairs).unwrap()
}

/// Dense gauge oracle: `e^{iF}(H+Y+Z)e^{−iF} + i(∂_t e^{iF})e^{−iF} − H − Y − Z̄`,
/// the time derivative by a five-point difference.
pub fn gauge_oracle(y: &BlockOperator, z: &TimePeriodicOperator, t: f64) -> Array2<C64> {
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
    u.dot(&(hy.data() + z.evaluate(t).data())).dot(&ud) + d.dot(&ud) * i - hy.data() - z.time_average().data()
}

pub fn apply(u: &Array2<C64>, psi: &Array1<C64>) -> Array1<C64> {
    u.dot(psi)
}

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs timed criteria one at a time so each runtime is measured alone.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn line(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    // Written to the raw stderr handle so the line survives output capture.
    let msg = format!("[criterion {id}] {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(msg.as_bytes());
}
