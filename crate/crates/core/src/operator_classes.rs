//! Block operators over a [`SpectralBasis`] and the weighted banded classes
//! `Y(p, δ)`.
//!
//! A class norm is
//! `sup_{m,n} ⟨m−n⟩^p · max{m,n}^{2δ} · ‖A_{m,n}‖` with `‖·‖` the operator
//! 2-norm of the block between eigenspaces `m` and `n`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundCheck, Mode};
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};
use crate::spectral_basis::{GapCertificate, SpectralBasis};

/// `⟨d⟩ = max{1, |d|}`.
pub fn bracket(d: i64) -> f64 {
    d.unsigned_abs().max(1) as f64
}

const ZETA_TERMS: u64 = 1_000_000;

/// Riemann zeta for real `s > 1`: direct summation of the first 10⁶ terms
/// plus an Euler–Maclaurin tail. Results are cached per argument.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("zeta needs a finite s > 1, got {s}")));
    }
    static CACHE: OnceLock<Mutex<BTreeMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(&v) = cache.lock().unwrap().get(&s.to_bits()) {
        return Ok(v);
    }
    let n = ZETA_TERMS as f64;
    // smallest terms first
    let mut sum = 0.0f64;
    for k in (1..ZETA_TERMS).rev() {
        sum += (k as f64).powf(-s);
    }
    let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0;
    let value = sum + tail;
    cache.lock().unwrap().insert(s.to_bits(), value);
    Ok(value)
}

/// Admissible parameters of a class `Y(p, δ)`; `p` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub p: f64,
    pub delta: f64,
}

impl ClassParams {
    pub fn new(p: f64, delta: f64) -> Result<Self> {
        let bad = |reason: &str| {
            Err(Error::InadmissibleParams { p, delta, reason: reason.to_string() })
        };
        if p.is_nan() || delta.is_nan() {
            return bad("NaN parameter");
        }
        if p < 1.0 {
            return bad("p must be at least 1");
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return bad("delta must be finite and non-negative");
        }
        if p.is_finite() && p + 2.0 * delta <= 1.0 {
            return bad("p + 2 delta must exceed 1");
        }
        Ok(ClassParams { p, delta })
    }

    pub fn infinite(delta: f64) -> Result<Self> {
        Self::new(f64::INFINITY, delta)
    }

    pub fn is_infinite(&self) -> bool {
        self.p.is_infinite()
    }

    /// Weight `⟨m−n⟩^p max{m,n}^{2δ}` for 0-based blocks.
    pub fn weight(&self, m: usize, n: usize) -> f64 {
        let lm = SpectralBasis::lattice_index(m.max(n));
        let br = bracket(m as i64 - n as i64);
        let along = if self.delta == 0.0 { 1.0 } else { lm.powf(2.0 * self.delta) };
        let across = if br == 1.0 { 1.0 } else { br.powf(self.p) };
        across * along
    }
}

/// `2 + 1/(p+2δ−1) + ζ(p+2δ)`: `‖A‖_SH ≤ sh_constant · ‖A‖_{p,δ}`.
pub fn sh_constant(params: ClassParams) -> Result<f64> {
    if params.is_infinite() {
        return Err(Error::InadmissibleParams {
            p: params.p,
            delta: params.delta,
            reason: "Shur-Holmgren constant needs finite p".into(),
        });
    }
    let s = params.p + 2.0 * params.delta;
    Ok(2.0 + 1.0 / (s - 1.0) + zeta(s)?)
}

/// `C_p = 2^{p+1} (1 + 2 ζ(p−1))`, the product-rule constant.
pub fn cp_constant(p: f64) -> Result<f64> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("C_p needs finite p > 2, got {p}")));
    }
    Ok(2f64.powf(p + 1.0) * (1.0 + 2.0 * zeta(p - 1.0)?))
}

/// A truncated operator stored densely with block structure from its basis.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    basis: Arc<SpectralBasis>,
    data: Array2<C64>,
    hermitian: bool,
    diagonal: bool,
}

const HERMITIAN_TOL: f64 = 1e-13;

impl BlockOperator {
    pub fn zeros(basis: &Arc<SpectralBasis>) -> Self {
        let d = basis.dim();
        BlockOperator { basis: basis.clone(), data: Array2::zeros((d, d)), hermitian: true, diagonal: true }
    }

    pub fn identity(basis: &Arc<SpectralBasis>) -> Self {
        BlockOperator {
            basis: basis.clone(),
            data: linalg::identity(basis.dim()),
            hermitian: true,
            diagonal: true,
        }
    }

    /// The unperturbed Hamiltonian `H = Σ E_n P_n`.
    pub fn hamiltonian(basis: &Arc<SpectralBasis>) -> Self {
        BlockOperator { basis: basis.clone(), data: basis.h_dense(), hermitian: true, diagonal: true }
    }

    /// Wraps a dense matrix, detecting the diagonal and Hermitian flags.
    /// Matrices Hermitian up to rounding are symmetrized so the flag is exact.
    pub fn from_dense(basis: &Arc<SpectralBasis>, data: Array2<C64>) -> Result<Self> {
        let d = basis.dim();
        if data.dim() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "basis dimension {d} but matrix is {:?}",
                data.dim()
            )));
        }
        let mut op = BlockOperator { basis: basis.clone(), data, hermitian: false, diagonal: false };
        op.diagonal = op.detect_diagonal();
        let scale = linalg::max_abs(&op.data.view()).max(1.0);
        if linalg::hermiticity_defect(&op.data.view()) <= HERMITIAN_TOL * scale {
            linalg::hermitize(&mut op.data);
            op.hermitian = true;
        }
        Ok(op)
    }

    /// Flags supplied by a caller that knows the structure.
    pub(crate) fn from_parts(
        basis: &Arc<SpectralBasis>,
        mut data: Array2<C64>,
        hermitian: bool,
        diagonal: bool,
    ) -> Self {
        if hermitian {
            linalg::hermitize(&mut data);
        }
        BlockOperator { basis: basis.clone(), data, hermitian, diagonal }
    }

    /// Builds an operator from `(m, n, block)` triples (0-based blocks).
    pub fn from_blocks(
        basis: &Arc<SpectralBasis>,
        blocks: impl IntoIterator<Item = (usize, usize, Array2<C64>)>,
    ) -> Result<Self> {
        let mut data = Array2::zeros((basis.dim(), basis.dim()));
        for (m, n, blk) in blocks {
            if m >= basis.n_blocks() || n >= basis.n_blocks() {
                return Err(Error::DimensionMismatch(format!("block ({m},{n}) out of range")));
            }
            let (rm, rn) = (basis.block_range(m), basis.block_range(n));
            if blk.dim() != (rm.len(), rn.len()) {
                return Err(Error::DimensionMismatch(format!(
                    "block ({m},{n}) should be {}x{}, got {:?}",
                    rm.len(),
                    rn.len(),
                    blk.dim()
                )));
            }
            data.slice_mut(s![rm, rn]).assign(&blk);
        }
        Self::from_dense(basis, data)
    }

    fn detect_diagonal(&self) -> bool {
        let nb = self.basis.n_blocks();
        for i in 0..self.dim() {
            let bi = self.basis.block_of(i);
            let r = self.basis.block_range(bi);
            for j in 0..self.dim() {
                if !r.contains(&j) && self.data[[i, j]] != ZERO {
                    return false;
                }
            }
        }
        nb > 0
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<C64> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn block(&self, m: usize, n: usize) -> ArrayView2<'_, C64> {
        self.data.slice(s![self.basis.block_range(m), self.basis.block_range(n)])
    }

    pub fn same_basis(&self, other: &BlockOperator) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis
    }

    fn check_basis(&self, other: &BlockOperator) -> Result<()> {
        if self.same_basis(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("operators live on different bases".into()))
        }
    }

    pub fn add(&self, other: &BlockOperator) -> Result<BlockOperator> {
        self.check_basis(other)?;
        Ok(BlockOperator::from_parts(
            &self.basis,
            &self.data + &other.data,
            self.hermitian && other.hermitian,
            self.diagonal && other.diagonal,
        ))
    }

    pub fn sub(&self, other: &BlockOperator) -> Result<BlockOperator> {
        self.check_basis(other)?;
        Ok(BlockOperator::from_parts(
            &self.basis,
            &self.data - &other.data,
            self.hermitian && other.hermitian,
            self.diagonal && other.diagonal,
        ))
    }

    pub fn scale(&self, c: C64) -> BlockOperator {
        BlockOperator::from_parts(
            &self.basis,
            self.data.mapv(|z| z * c),
            self.hermitian && c.im == 0.0,
            self.diagonal,
        )
    }

    pub fn dagger(&self) -> BlockOperator {
        BlockOperator::from_parts(
            &self.basis,
            linalg::dagger(&self.data.view()),
            self.hermitian,
            self.diagonal,
        )
    }

    /// `U X U†`.
    pub fn conjugate_by(&self, u: &BlockOperator) -> Result<BlockOperator> {
        self.check_basis(u)?;
        let data = u.data.dot(&self.data).dot(&linalg::dagger(&u.data.view()));
        Ok(BlockOperator::from_parts(&self.basis, data, self.hermitian, false))
    }

    /// Operator 2-norms of all blocks, indexed `[m, n]`.
    pub fn block_norms(&self) -> Array2<f64> {
        let nb = self.basis.n_blocks();
        let simple = self.basis.multiplicities().iter().all(|&d| d == 1);
        if simple {
            return self.data.mapv(|z| z.norm());
        }
        let mut out = Array2::zeros((nb, nb));
        for m in 0..nb {
            for n in 0..nb {
                if self.diagonal && m != n {
                    continue;
                }
                out[[m, n]] = block_norm(&self.block(m, n));
            }
        }
        out
    }

    /// Frobenius norm of the assembled matrix.
    pub fn frobenius(&self) -> f64 {
        linalg::frobenius(&self.data.view())
    }

    /// Operator 2-norm of the assembled matrix.
    pub fn operator_norm(&self) -> Result<f64> {
        if self.hermitian {
            linalg::hermitian_norm(&self.data.view())
        } else {
            linalg::spectral_norm(&self.data.view())
        }
    }

    pub fn to_repr(&self) -> BlockOperatorRepr {
        let nb = self.basis.n_blocks();
        let mut blocks = Vec::new();
        for m in 0..nb {
            for n in 0..nb {
                let blk = self.block(m, n);
                if blk.iter().all(|z| *z == ZERO) {
                    continue;
                }
                let re = blk.rows().into_iter().map(|r| r.iter().map(|z| z.re).collect()).collect();
                let im = blk.rows().into_iter().map(|r| r.iter().map(|z| z.im).collect()).collect();
                blocks.push(BlockRepr { m: m + 1, n: n + 1, re, im });
            }
        }
        BlockOperatorRepr {
            basis_ref: self.basis.fingerprint(),
            blocks,
            hermitian: self.hermitian,
            diagonal: self.diagonal,
        }
    }

    pub fn from_repr(basis: &Arc<SpectralBasis>, repr: &BlockOperatorRepr) -> Result<Self> {
        if repr.basis_ref != basis.fingerprint() {
            return Err(Error::DimensionMismatch(format!(
                "operator belongs to basis {} but {} was supplied",
                repr.basis_ref,
                basis.fingerprint()
            )));
        }
        let mut blocks = Vec::with_capacity(repr.blocks.len());
        for b in &repr.blocks {
            if b.m == 0 || b.n == 0 {
                return Err(Error::InvalidArgument("block indices start at 1".into()));
            }
            let rows = b.re.len();
            let cols = b.re.first().map_or(0, |r| r.len());
            if b.im.len() != rows {
                return Err(Error::InvalidArgument("re/im shape mismatch".into()));
            }
            let mut blk = Array2::zeros((rows, cols));
            for i in 0..rows {
                if b.re[i].len() != cols || b.im[i].len() != cols {
                    return Err(Error::InvalidArgument("ragged block".into()));
                }
                for j in 0..cols {
                    blk[[i, j]] = C64::new(b.re[i][j], b.im[i][j]);
                }
            }
            blocks.push((b.m - 1, b.n - 1, blk));
        }
        let op = Self::from_blocks(basis, blocks)?;
        if repr.hermitian && !op.hermitian {
            return Err(Error::InvalidArgument("operator flagged Hermitian but is not".into()));
        }
        if repr.diagonal && !op.diagonal {
            return Err(Error::InvalidArgument("operator flagged diagonal but is not".into()));
        }
        Ok(op)
    }
}

impl Serialize for BlockOperator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_repr().serialize(serializer)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRepr {
    pub m: usize,
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockOperatorRepr {
    pub basis_ref: String,
    pub blocks: Vec<BlockRepr>,
    pub hermitian: bool,
    pub diagonal: bool,
}

pub fn block_norm(block: &ArrayView2<C64>) -> f64 {
    match block.dim() {
        (1, 1) => block[[0, 0]].norm(),
        _ => linalg::spectral_norm(block).unwrap_or_else(|_| linalg::frobenius(block)),
    }
}

/// Weighted sup norm over a precomputed block-norm table.
pub fn class_norm_of_table(norms: &Array2<f64>, params: ClassParams, diagonal: bool) -> Result<f64> {
    if params.is_infinite() && !diagonal {
        return Err(Error::InfiniteOnNonDiagonal);
    }
    let nb = norms.nrows();
    let mut best = 0.0f64;
    if params.is_infinite() || diagonal {
        for n in 0..nb {
            best = best.max(params.weight(n, n) * norms[[n, n]]);
        }
        return Ok(best);
    }
    let across: Vec<f64> = (0..nb).map(|d| params.weight(d, 0) / params.weight(d, d)).collect();
    let along: Vec<f64> = (0..nb).map(|k| params.weight(k, k)).collect();
    for m in 0..nb {
        for n in 0..nb {
            let x = norms[[m, n]];
            if x != 0.0 {
                best = best.max(across[m.abs_diff(n)] * along[m.max(n)] * x);
            }
        }
    }
    Ok(best)
}

/// `‖A‖_{p,δ}` on the truncated lattice.
pub fn class_norm(a: &BlockOperator, params: ClassParams) -> Result<f64> {
    class_norm_of_table(&a.block_norms(), params, a.is_diagonal())
}

/// `max(max_m Σ_n ‖A_{m,n}‖, max_n Σ_m ‖A_{m,n}‖)`.
pub fn shur_holmgren_norm(a: &BlockOperator) -> f64 {
    let t = a.block_norms();
    let rows = t.rows().into_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let cols = t.columns().into_iter().map(|c| c.sum()).fold(0.0, f64::max);
    rows.max(cols)
}

pub fn diag_part(a: &BlockOperator) -> BlockOperator {
    let basis = a.basis();
    let mut data = Array2::zeros(a.data.dim());
    for b in 0..basis.n_blocks() {
        let r = basis.block_range(b);
        data.slice_mut(s![r.clone(), r.clone()]).assign(&a.data.slice(s![r.clone(), r]));
    }
    BlockOperator { basis: basis.clone(), data, hermitian: a.hermitian, diagonal: true }
}

pub fn offdiag_part(a: &BlockOperator) -> BlockOperator {
    let basis = a.basis();
    let mut data = a.data.clone();
    for b in 0..basis.n_blocks() {
        let r = basis.block_range(b);
        data.slice_mut(s![r.clone(), r]).fill(ZERO);
    }
    BlockOperator { basis: basis.clone(), data, hermitian: a.hermitian, diagonal: false }
}

/// `[A, H]`: block `(m, n)` is `(E_n − E_m) A_{m,n}`.
pub fn commutator_with_h(a: &BlockOperator) -> BlockOperator {
    let basis = a.basis();
    let e = basis.energies_per_component();
    let mut data = a.data.clone();
    for ((i, j), z) in data.indexed_iter_mut() {
        *z *= e[j] - e[i];
    }
    // [A,H]† = [H,A†] = -[A†,H]: anti-Hermitian when A is Hermitian
    BlockOperator { basis: basis.clone(), data, hermitian: false, diagonal: a.diagonal }
}

/// `ad_A(B) = AB − BA`.
pub fn commutator(a: &BlockOperator, b: &BlockOperator) -> Result<BlockOperator> {
    a.check_basis(b)?;
    let data = linalg::commutator(&a.data, &b.data);
    Ok(BlockOperator { basis: a.basis.clone(), data, hermitian: false, diagonal: a.diagonal && b.diagonal })
}

pub fn op_product(a: &BlockOperator, b: &BlockOperator) -> Result<BlockOperator> {
    a.check_basis(b)?;
    Ok(BlockOperator {
        basis: a.basis.clone(),
        data: a.data.dot(&b.data),
        hermitian: false,
        diagonal: a.diagonal && b.diagonal,
    })
}

/// The three product rules for `Y` classes indexed by `(p, i, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductRule {
    /// `‖AB‖_{p−1,(i+1)γ} ≤ C_p ‖A‖_{p,iγ} ‖B‖_{p,iγ}`
    SameClass,
    /// `‖AB‖_{p−1,iγ} ≤ C_p ‖A‖_{p,(i−1)γ} ‖B‖_{p−1,iγ}`
    Mixed,
    /// `‖AB‖_{p−1,(i+1)γ} ≤ 2 C_p ‖A‖_{p+1,(i−1)γ} ‖B‖_{p−1,(i+1)γ}`
    Raised,
    /// [`ProductRule::Raised`] with `C_p` in place of `2 C_p`.
    RaisedTight,
}

impl ProductRule {
    /// `(class of A, class of B, class of the product, constant factor)`.
    pub fn classes(self, p: f64, i: u32, gamma: f64) -> Result<(ClassParams, ClassParams, ClassParams, f64)> {
        let i = i as f64;
        let cp = cp_constant(p)?;
        Ok(match self {
            ProductRule::SameClass => (
                ClassParams::new(p, i * gamma)?,
                ClassParams::new(p, i * gamma)?,
                ClassParams::new(p - 1.0, (i + 1.0) * gamma)?,
                cp,
            ),
            ProductRule::Mixed => (
                ClassParams::new(p, (i - 1.0) * gamma)?,
                ClassParams::new(p - 1.0, i * gamma)?,
                ClassParams::new(p - 1.0, i * gamma)?,
                cp,
            ),
            ProductRule::Raised | ProductRule::RaisedTight => (
                ClassParams::new(p + 1.0, (i - 1.0) * gamma)?,
                ClassParams::new(p - 1.0, (i + 1.0) * gamma)?,
                ClassParams::new(p - 1.0, (i + 1.0) * gamma)?,
                if self == ProductRule::Raised { 2.0 * cp } else { cp },
            ),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ProductRule::SameClass => "product_same_class",
            ProductRule::Mixed => "product_mixed",
            ProductRule::Raised => "product_raised",
            ProductRule::RaisedTight => "product_raised_tight",
        }
    }
}

/// Evaluates both sides of a product rule for `AB` (and `BA` when
/// `reversed`), with `A` in the first class and `B` in the second.
pub fn check_product_rule(
    rule: ProductRule,
    a: &BlockOperator,
    b: &BlockOperator,
    p: f64,
    i: u32,
    gamma: f64,
    reversed: bool,
) -> Result<BoundCheck> {
    let (ca, cb, cab, k) = rule.classes(p, i, gamma)?;
    let prod = if reversed { op_product(b, a)? } else { op_product(a, b)? };
    let lhs = class_norm(&prod, cab)?;
    let rhs = k * class_norm(a, ca)? * class_norm(b, cb)?;
    let name = if reversed { format!("{}_reversed", rule.name()) } else { rule.name().to_string() };
    Ok(BoundCheck::le(name, lhs, rhs, Mode::Strict))
}

/// `‖[A,H]‖_{p−1,δ+γ} ≤ C_H ‖A‖_{p,δ}`.
pub fn check_commutator_bound(
    a: &BlockOperator,
    cert: &GapCertificate,
    params: ClassParams,
) -> Result<BoundCheck> {
    let gamma = a.basis().gamma();
    let out = ClassParams::new(params.p - 1.0, params.delta + gamma)?;
    let lhs = class_norm(&commutator_with_h(a), out)?;
    let rhs = cert.cap_c_h * class_norm(a, params)?;
    Ok(BoundCheck::le("commutator_with_h", lhs, rhs, Mode::Strict))
}

/// `‖A‖ ≤ ‖A‖_SH ≤ sh_constant · ‖A‖_{p,δ}` as two checks.
pub fn check_shur_holmgren_chain(a: &BlockOperator, params: ClassParams) -> Result<[BoundCheck; 2]> {
    let op = linalg::spectral_norm(&a.data.view())?;
    let sh = shur_holmgren_norm(a);
    let cls = class_norm(a, params)?;
    Ok([
        BoundCheck::le("operator_norm_le_shur_holmgren", op, sh, Mode::Strict),
        BoundCheck::le("shur_holmgren_le_class", sh, sh_constant(params)? * cls, Mode::Strict),
    ])
}

#[derive(Debug, Clone, Copy)]
pub struct SylvesterOptions {
    /// Smallest admissible spectral distance between two diagonal blocks.
    pub small_divisor_floor: f64,
    pub mode: Mode,
}

impl Default for SylvesterOptions {
    fn default() -> Self {
        SylvesterOptions { small_divisor_floor: 1e-10, mode: Mode::Strict }
    }
}

#[derive(Debug, Clone)]
pub struct SylvesterSolution {
    /// Off-diagonal solution of `[H+G, W] = V`.
    pub w: BlockOperator,
    /// Smallest spectral distance over all block pairs.
    pub min_distance: f64,
    pub checks: Vec<BoundCheck>,
}

/// Solves `[H + G, W] = V` with `diag W = 0` block by block:
/// `(E_m + G_{m,m}) W_{m,n} − W_{m,n} (E_n + G_{n,n}) = V_{m,n}`.
///
/// Each shifted diagonal block is diagonalized once; a block pair is then a
/// Hadamard division by eigenvalue differences. With a certificate the gap
/// guard `‖G‖_{∞,γ} ≤ c_H/6` is enforced (or recorded in permissive mode),
/// and the block bound `‖W_{m,n}‖ ≤ (π/2) ‖V_{m,n}‖ / dist` is recorded.
pub fn sylvester_solve(
    g: &BlockOperator,
    v: &BlockOperator,
    cert: Option<&GapCertificate>,
    opts: SylvesterOptions,
) -> Result<SylvesterSolution> {
    g.check_basis(v)?;
    if !g.is_diagonal() {
        return Err(Error::InvalidArgument("G must be block diagonal".into()));
    }
    if !g.is_hermitian() {
        return Err(Error::InvalidArgument("G must be Hermitian".into()));
    }
    let basis = g.basis().clone();
    let nb = basis.n_blocks();
    let gamma = basis.gamma();
    let mut checks = Vec::new();

    let guard = if let Some(c) = cert {
        let norm_g = class_norm(g, ClassParams::infinite(gamma)?)?;
        let limit = c.c_h / 6.0;
        if norm_g > limit && opts.mode.is_strict() {
            return Err(Error::GapConditionViolated { norm: norm_g, limit });
        }
        let check = BoundCheck::le("gap_guard", norm_g, limit, opts.mode);
        let holds = check.passed();
        checks.push(check);
        holds
    } else {
        false
    };

    let mut spectra = Vec::with_capacity(nb);
    for b in 0..nb {
        let mut blk = g.block(b, b).to_owned();
        for d in 0..blk.nrows() {
            blk[[d, d]] += C64::new(basis.energy(b), 0.0);
        }
        spectra.push(linalg::hermitian_eigen(&blk.view())?);
    }

    let mut min_distance = f64::INFINITY;
    let mut worst_solution_ratio = 0.0f64;
    let mut worst_divisor_ratio = f64::INFINITY;
    let mut data = Array2::zeros((basis.dim(), basis.dim()));
    for m in 0..nb {
        let (wm, qm) = &spectra[m];
        for n in 0..nb {
            if m == n {
                continue;
            }
            let (wn, qn) = &spectra[n];
            let mut dist = f64::INFINITY;
            for &a in wm.iter() {
                for &b in wn.iter() {
                    dist = dist.min((a - b).abs());
                }
            }
            min_distance = min_distance.min(dist);
            if dist < opts.small_divisor_floor {
                return Err(Error::SmallDivisor {
                    m: m + 1,
                    n: n + 1,
                    distance: dist,
                    floor: opts.small_divisor_floor,
                });
            }
            if let Some(c) = cert {
                let lm = SpectralBasis::lattice_index(m.max(n));
                let lower = c.c_h * (m as f64 - n as f64).abs() / (2.0 * lm.powf(2.0 * gamma));
                worst_divisor_ratio = worst_divisor_ratio.min(dist / lower);
            }
            let vmn = v.block(m, n);
            if vmn.iter().all(|z| *z == ZERO) {
                continue;
            }
            let mut t = linalg::dagger(&qm.view()).dot(&vmn).dot(qn);
            for ((i, j), z) in t.indexed_iter_mut() {
                *z /= wm[i] - wn[j];
            }
            let wmn = qm.dot(&t).dot(&linalg::dagger(&qn.view()));
            let vn = block_norm(&vmn);
            if vn > 0.0 {
                worst_solution_ratio = worst_solution_ratio.max(block_norm(&wmn.view()) * dist / vn);
            }
            data.slice_mut(s![basis.block_range(m), basis.block_range(n)]).assign(&wmn);
        }
    }
    checks.push(BoundCheck::le(
        "sylvester_block_bound",
        worst_solution_ratio,
        std::f64::consts::FRAC_PI_2,
        opts.mode,
    ));
    if cert.is_some() && guard {
        checks.push(BoundCheck::le("small_divisor_lower_bound", 1.0, worst_divisor_ratio, opts.mode));
    }
    let w = BlockOperator { basis: basis.clone(), data, hermitian: false, diagonal: false };
    Ok(SylvesterSolution { w, min_distance, checks })
}
