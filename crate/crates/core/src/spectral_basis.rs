//! Eigenvalue blocks of the unperturbed Hamiltonian and the shrinking-gap
//! certificate.
//!
//! Blocks are indexed from 0 in code; the lattice index used in every
//! weight `max{m,n}^{2δ}` is `block + 1`.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplicityRule {
    /// Every block one-dimensional.
    Simple,
    /// First block one-dimensional, all others two-dimensional (`e^{±inθ}`).
    Howland,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
    alpha: f64,
    gamma: f64,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    alpha: f64,
    gamma: f64,
    eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
}

impl TryFrom<BasisRepr> for SpectralBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        let basis = SpectralBasis::new(r.eigenvalues, r.multiplicities, r.alpha)?;
        if (basis.gamma - r.gamma).abs() > 1e-15 {
            return Err(Error::InvalidBasis(format!(
                "gamma {} inconsistent with alpha {} (expected {})",
                r.gamma, r.alpha, basis.gamma
            )));
        }
        Ok(basis)
    }
}

impl From<SpectralBasis> for BasisRepr {
    fn from(b: SpectralBasis) -> Self {
        BasisRepr {
            alpha: b.alpha,
            gamma: b.gamma,
            eigenvalues: b.eigenvalues,
            multiplicities: b.multiplicities,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

impl SpectralBasis {
    /// Validates strict monotonicity, positivity and multiplicities.
    pub fn new(eigenvalues: Vec<f64>, multiplicities: Vec<usize>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if eigenvalues.is_empty() {
            return Err(Error::InvalidBasis("no eigenvalues".into()));
        }
        if eigenvalues.len() != multiplicities.len() {
            return Err(Error::InvalidBasis(format!(
                "{} eigenvalues but {} multiplicities",
                eigenvalues.len(),
                multiplicities.len()
            )));
        }
        if let Some(b) = multiplicities.iter().position(|&d| d == 0) {
            return Err(Error::InvalidBasis(format!("block {} has multiplicity 0", b + 1)));
        }
        if !eigenvalues.iter().all(|e| e.is_finite()) {
            return Err(Error::InvalidBasis("non-finite eigenvalue".into()));
        }
        if eigenvalues[0] <= 0.0 {
            return Err(Error::InvalidBasis(format!(
                "lowest eigenvalue must be strictly positive, got {}",
                eigenvalues[0]
            )));
        }
        for (b, w) in eigenvalues.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::InvalidBasis(format!(
                    "eigenvalues not strictly increasing at blocks {} and {}",
                    b + 1,
                    b + 2
                )));
            }
        }
        let mut offsets = Vec::with_capacity(multiplicities.len() + 1);
        offsets.push(0);
        for &d in &multiplicities {
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(SpectralBasis { eigenvalues, multiplicities, alpha, gamma: (1.0 - alpha) / 2.0, offsets })
    }

    /// `E_n = n^α`, `n = 1..=n_blocks`.
    pub fn power(alpha: f64, n_blocks: usize, rule: MultiplicityRule) -> Result<Self> {
        check_alpha(alpha)?;
        if n_blocks < 2 {
            return Err(Error::InvalidBasis(format!("need at least 2 blocks, got {n_blocks}")));
        }
        let eigenvalues = (1..=n_blocks).map(|n| (n as f64).powf(alpha)).collect();
        let multiplicities = (0..n_blocks)
            .map(|b| match rule {
                MultiplicityRule::Simple => 1,
                MultiplicityRule::Howland if b == 0 => 1,
                MultiplicityRule::Howland => 2,
            })
            .collect();
        Self::new(eigenvalues, multiplicities, alpha)
    }

    pub fn n_blocks(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Dimension of the concrete truncated space.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn energy(&self, block: usize) -> f64 {
        self.eigenvalues[block]
    }

    pub fn block_range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    /// Lattice index `n ≥ 1` of a block.
    pub fn lattice_index(block: usize) -> f64 {
        (block + 1) as f64
    }

    /// Block containing the concrete component `i`.
    pub fn block_of(&self, i: usize) -> usize {
        match self.offsets.binary_search(&i) {
            Ok(b) => b,
            Err(b) => b - 1,
        }
    }

    /// Diagonal of `H` in the concrete space.
    pub fn energies_per_component(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (e, &d) in self.eigenvalues.iter().zip(&self.multiplicities) {
            out.extend(std::iter::repeat(*e).take(d));
        }
        out
    }

    pub fn h_dense(&self) -> Array2<C64> {
        let diag: Vec<C64> =
            self.energies_per_component().into_iter().map(|e| C64::new(e, 0.0)).collect();
        Array2::from_diag(&ndarray::Array1::from(diag))
    }

    /// Stable fingerprint used to tie serialized operators to a basis.
    pub fn fingerprint(&self) -> String {
        // FNV-1a over the raw bit patterns.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.alpha.to_bits());
        for e in &self.eigenvalues {
            eat(e.to_bits());
        }
        for &d in &self.multiplicities {
            eat(d as u64);
        }
        format!("N{}-d{}-{:016x}", self.n_blocks(), self.dim(), h)
    }
}

/// Constants of the two-sided shrinking-gap condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    /// Lower constant `c_H`.
    pub c_h: f64,
    /// Upper constant `C_H`.
    pub cap_c_h: f64,
    pub verified_up_to: usize,
}

/// Tightest `c_H`, `C_H` over all pairs `1 ≤ n < m ≤ N`.
pub fn certify_gaps(basis: &SpectralBasis) -> Result<GapCertificate> {
    certify_eigenvalues(basis.eigenvalues(), basis.gamma())
}

/// Same scan for an arbitrary eigenvalue list and exponent `γ`.
pub fn certify_eigenvalues(eigenvalues: &[f64], gamma: f64) -> Result<GapCertificate> {
    if eigenvalues.len() < 2 {
        return Err(Error::InvalidBasis("gap certificate needs at least two blocks".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for m in 1..eigenvalues.len() {
        let wm = SpectralBasis::lattice_index(m).powf(2.0 * gamma);
        for n in 0..m {
            let diff = (eigenvalues[m] - eigenvalues[n]).abs();
            if diff == 0.0 {
                return Err(Error::DegenerateEigenvalues { m: m + 1, n: n + 1 });
            }
            let ratio = diff * wm / (m - n) as f64;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    Ok(GapCertificate { c_h: lo, cap_c_h: hi, verified_up_to: eigenvalues.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_basis_values() {
        let b = SpectralBasis::power(0.5, 4, MultiplicityRule::Simple).unwrap();
        let expected = [1.0, 1.41421356, 1.73205081, 2.0];
        for (e, x) in b.eigenvalues().iter().zip(expected) {
            assert!((e - x).abs() < 1e-8);
        }
        assert_eq!(b.dim(), 4);
        assert_eq!(b.gamma(), 0.25);
    }

    #[test]
    fn two_blocks_are_ordered() {
        for alpha in [0.01, 0.3, 0.99] {
            let b = SpectralBasis::power(alpha, 2, MultiplicityRule::Simple).unwrap();
            assert_eq!(b.energy(0), 1.0);
            assert!(b.energy(1) - b.energy(0) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_alpha_and_degenerate_lists() {
        assert!(matches!(
            SpectralBasis::power(1.2, 4, MultiplicityRule::Simple),
            Err(Error::InvalidAlpha(_))
        ));
        assert!(SpectralBasis::power(0.0, 4, MultiplicityRule::Simple).is_err());
        assert!(SpectralBasis::new(vec![1.0, 1.0], vec![1, 1], 0.5).is_err());
        assert!(SpectralBasis::new(vec![0.0, 1.0], vec![1, 1], 0.5).is_err());
        assert!(matches!(
            certify_eigenvalues(&[1.0, 2.0, 2.0], 0.25),
            Err(Error::DegenerateEigenvalues { m: 3, n: 2 })
        ));
    }

    #[test]
    fn howland_offsets_are_prefix_sums() {
        let b = SpectralBasis::power(0.5, 5, MultiplicityRule::Howland).unwrap();
        assert_eq!(b.offsets(), &[0, 1, 3, 5, 7, 9]);
        assert_eq!(b.block_range(2), 3..5);
        assert_eq!(b.block_of(4), 2);
        assert_eq!(b.block_of(0), 0);
    }

    #[test]
    fn single_pair_certificate() {
        let c = certify_eigenvalues(&[1.0, 2.0], 0.25).unwrap();
        assert!((c.c_h - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.c_h, c.cap_c_h);
    }

    #[test]
    fn equal_spacing_certificate() {
        let e: Vec<f64> = (1..=50).map(|n| n as f64).collect();
        let c = certify_eigenvalues(&e, 0.0).unwrap();
        assert_eq!(c.c_h, 1.0);
        assert_eq!(c.cap_c_h, 1.0);
    }

    #[test]
    fn serde_roundtrip_validates() {
        let b = SpectralBasis::power(0.5, 3, MultiplicityRule::Howland).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"gamma\":0.25"));
        let back: SpectralBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        let bad = r#"{"alpha":0.5,"gamma":0.1,"eigenvalues":[1,2],"multiplicities":[1,1]}"#;
        assert!(serde_json::from_str::<SpectralBasis>(bad).is_err());
    }
}
