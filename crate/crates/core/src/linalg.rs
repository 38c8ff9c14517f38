//! Dense complex linear algebra used throughout the crate.
//!
//! Hermitian eigendecompositions go through LAPACK `zheevr`; everything else
//! is plain `ndarray` arithmetic (BLAS-backed matrix products).

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Double precision complex scalar.
pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn dagger(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::eye(n)
}

/// `AB - BA`.
pub fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) - b.dot(a)
}

pub fn frobenius(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest deviation of `a` from Hermiticity, entrywise.
pub fn hermiticity_defect(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Replace `a` by its Hermitian part `(a + a†)/2`.
pub fn hermitize(a: &mut Array2<C64>) {
    let n = a.nrows();
    for i in 0..n {
        a[[i, i]] = C64::new(a[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let avg = (a[[i, j]] + a[[j, i]].conj()) * 0.5;
            a[[i, j]] = avg;
            a[[j, i]] = avg.conj();
        }
    }
}

/// `‖U†U − I‖_max`.
pub fn unitarity_defect(u: &Array2<C64>) -> f64 {
    let n = u.nrows();
    let g = dagger(&u.view()).dot(u) - identity(n);
    max_abs(&g.view())
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// unitary whose columns are the eigenvectors.
pub fn hermitian_eigen(a: &ArrayView2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (w, z) = zheevr(a, true)?;
    Ok((w, z.expect("eigenvectors requested")))
}

pub fn hermitian_eigenvalues(a: &ArrayView2<C64>) -> Result<Array1<f64>> {
    Ok(zheevr(a, false)?.0)
}

fn zheevr(a: &ArrayView2<C64>, vectors: bool) -> Result<(Array1<f64>, Option<Array2<C64>>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), vectors.then(|| Array2::zeros((0, 0)))));
    }
    if n == 1 {
        let w = Array1::from(vec![a[[0, 0]].re]);
        return Ok((w, vectors.then(|| identity(1))));
    }
    let mut m = Array2::<C64>::zeros((n, n).f());
    m.assign(a);
    let mut z = Array2::<C64>::zeros((n, n).f());
    let mut w = vec![0.0f64; n];
    let ni = n as i32;
    let jobz = if vectors { b'V' } else { b'N' } as std::os::raw::c_char;
    let range = b'A' as std::os::raw::c_char;
    let uplo = b'L' as std::os::raw::c_char;
    let (vl, vu, il, iu, abstol) = (0.0f64, 0.0f64, 0i32, 0i32, 0.0f64);
    let mut found = 0i32;
    let mut isuppz = vec![0i32; 2 * n];
    let mut info = 0i32;
    let query = -1i32;
    let mut wq = [ZERO];
    let mut rq = [0.0f64];
    let mut iq = [0i32];
    // SAFETY: all buffers are sized per the LAPACK contract; `m` and `z` are
    // column-major n×n; the first call is a workspace query.
    unsafe {
        lapack_sys::zheevr_(
            &jobz, &range, &uplo, &ni, m.as_mut_ptr() as *mut _, &ni, &vl, &vu, &il, &iu,
            &abstol, &mut found, w.as_mut_ptr(), z.as_mut_ptr() as *mut _, &ni,
            isuppz.as_mut_ptr(), wq.as_mut_ptr() as *mut _, &query, rq.as_mut_ptr(), &query,
            iq.as_mut_ptr(), &query, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack(info));
    }
    let lwork = (wq[0].re as i32).max(2 * ni);
    let lrwork = (rq[0] as i32).max(24 * ni);
    let liwork = iq[0].max(10 * ni);
    let mut work = vec![ZERO; lwork as usize];
    let mut rwork = vec![0.0f64; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    // SAFETY: as above, with workspaces of the queried sizes.
    unsafe {
        lapack_sys::zheevr_(
            &jobz, &range, &uplo, &ni, m.as_mut_ptr() as *mut _, &ni, &vl, &vu, &il, &iu,
            &abstol, &mut found, w.as_mut_ptr(), z.as_mut_ptr() as *mut _, &ni,
            isuppz.as_mut_ptr(), work.as_mut_ptr() as *mut _, &lwork, rwork.as_mut_ptr(),
            &lrwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 || found as usize != n {
        return Err(Error::Lapack(info));
    }
    let z = if vectors {
        let mut c = Array2::<C64>::zeros((n, n));
        c.assign(&z);
        Some(c)
    } else {
        None
    };
    Ok((Array1::from(w), z))
}

/// `A x` through the BLAS matrix product (ndarray only dispatches real `gemv`).
pub fn matvec(a: &Array2<C64>, x: &Array1<C64>) -> Array1<C64> {
    let col = x.view().insert_axis(ndarray::Axis(1));
    a.dot(&col).remove_axis(ndarray::Axis(1))
}

/// `exp(c·K)` for Hermitian `K` and a complex scalar `c`.
pub fn expm_hermitian(k: &ArrayView2<C64>, c: C64) -> Result<Array2<C64>> {
    let (w, q) = hermitian_eigen(k)?;
    Ok(apply_spectral(&q, &w, |x| (c * x).exp()))
}

/// `Q diag(f(w)) Q†`.
pub fn apply_spectral(q: &Array2<C64>, w: &Array1<f64>, f: impl Fn(f64) -> C64) -> Array2<C64> {
    let mut scaled = q.clone();
    for (mut col, &x) in scaled.columns_mut().into_iter().zip(w.iter()) {
        let fx = f(x);
        col.mapv_inplace(|z| z * fx);
    }
    scaled.dot(&dagger(&q.view()))
}

/// `exp(W)` for anti-Hermitian `W`, via the Hermitian matrix `-iW`.
pub fn expm_antihermitian(w: &ArrayView2<C64>) -> Result<Array2<C64>> {
    let mut k = w.mapv(|z| z * (-I));
    hermitize(&mut k);
    expm_hermitian(&k.view(), I)
}

/// One Newton–Schulz step towards the unitary polar factor:
/// `X ← X (3I − X†X)/2`. Converges quadratically for nearly unitary input.
pub fn polish_unitary(u: &mut Array2<C64>, steps: usize) {
    let n = u.nrows();
    for _ in 0..steps {
        let g = dagger(&u.view()).dot(&*u);
        let corr = identity(n) * C64::new(1.5, 0.0) - g * C64::new(0.5, 0.0);
        *u = u.dot(&corr);
    }
}

/// Operator 2-norm of an arbitrary (small or large) complex matrix.
pub fn spectral_norm(a: &ArrayView2<C64>) -> Result<f64> {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return Ok(0.0);
    }
    if r == 1 || c == 1 {
        return Ok(frobenius(a));
    }
    if r == 2 && c == 2 {
        return Ok(spectral_norm_2x2(a));
    }
    let gram = if r <= c {
        a.dot(&dagger(a))
    } else {
        dagger(a).dot(a)
    };
    let w = hermitian_eigenvalues(&gram.view())?;
    Ok(w.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt())
}

/// Operator 2-norm of a Hermitian matrix (largest |eigenvalue|).
pub fn hermitian_norm(a: &ArrayView2<C64>) -> Result<f64> {
    let w = hermitian_eigenvalues(a)?;
    Ok(w.iter().map(|x| x.abs()).fold(0.0, f64::max))
}

fn spectral_norm_2x2(a: &ArrayView2<C64>) -> f64 {
    let fro2 = a.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let det = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
    let disc = (fro2 * fro2 - 4.0 * det.norm_sqr()).max(0.0);
    ((fro2 + disc.sqrt()) / 2.0).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_hermitian(n: usize) -> Array2<C64> {
        let mut a = Array2::from_shape_fn((n, n), |(i, j)| {
            C64::new(((3 * i + 5 * j) % 7) as f64 - 3.0, ((i * j) % 5) as f64 - 2.0)
        });
        hermitize(&mut a);
        a
    }

    #[test]
    fn eigen_reconstructs() {
        for n in [1, 2, 3, 17, 40] {
            let a = sample_hermitian(n);
            let (w, q) = hermitian_eigen(&a.view()).unwrap();
            let back = apply_spectral(&q, &w, |x| C64::new(x, 0.0));
            assert!(max_abs(&(back - &a).view()) < 1e-12, "n={n}");
            assert!(unitarity_defect(&q) < 1e-13);
        }
    }

    #[test]
    fn two_by_two_norm_matches_gram() {
        let a = Array2::from_shape_vec(
            (2, 2),
            vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 3.0), C64::new(0.25, -1.0)],
        )
        .unwrap();
        let gram = dagger(&a.view()).dot(&a);
        let w = hermitian_eigenvalues(&gram.view()).unwrap();
        assert!((spectral_norm(&a.view()).unwrap() - w[1].sqrt()).abs() < 1e-13);
    }

    #[test]
    fn exp_of_antihermitian_is_unitary() {
        let h = sample_hermitian(12);
        let w = h.mapv(|z| z * I * 0.3);
        let u = expm_antihermitian(&w.view()).unwrap();
        assert!(unitarity_defect(&u) < 1e-13);
    }

    #[test]
    fn newton_schulz_restores_unitarity() {
        let h = sample_hermitian(8);
        let mut u = expm_hermitian(&h.view(), I).unwrap();
        u[[0, 0]] += C64::new(1e-7, 0.0);
        polish_unitary(&mut u, 2);
        assert!(unitarity_defect(&u) < 1e-14);
    }
}
