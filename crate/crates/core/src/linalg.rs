//! Dense Hermitian linear algebra: spectral decompositions, projectors,
//! partial inverses and the family of norms used by the certifier.

use faer::Side;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
/// A state in the finite-dimensional Hilbert space.
pub type StateVector = CVec;

/// Default gap floor, relative to the operator norm.
pub const GAP_TOL_REL: f64 = 1e-10;
/// Default degeneracy threshold, relative to the operator norm.
pub const DEGENERACY_TOL_REL: f64 = 1e-8;
/// Orthonormality tolerance accepted by [`density_matrix`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Eigenvalues closer than this (relative) are treated as one block when
/// the eigenbasis is canonicalized.
const BLOCK_TOL_REL: f64 = 1e-12;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn basis_vector(n: usize, i: usize) -> CVec {
    let mut v = CVec::zeros(n);
    v[i] = c(1.0);
    v
}

pub fn vec_from_real(x: &[f64]) -> CVec {
    CVec::from_iterator(x.len(), x.iter().map(|&r| c(r)))
}

/// Columns stacked into an `n × k` matrix.
pub fn columns(vectors: &[CVec], n: usize) -> CMat {
    let mut m = CMat::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Rank-one operator `|u⟩⟨v|`.
pub fn outer(u: &CVec, v: &CVec) -> CMat {
    u * v.adjoint()
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

fn to_faer(m: &CMat) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return vec![];
    }
    to_faer(m).singular_values().unwrap_or_else(|_| vec![f64::NAN])
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm(m: &CMat) -> f64 {
    m.norm()
}

fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Self-adjoint square matrix. Construction symmetrizes `(M + M*)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidOperator(format!(
                "expected a nonempty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !is_finite(&m) {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: CMat) -> Self {
        let adj = m.adjoint();
        HermitianMatrix((m + adj) * c(0.5))
    }

    pub fn from_real(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(c))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        HermitianMatrix(CMat::from_diagonal(&vec_from_real(d)))
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix(CMat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(CMat::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_mat(self) -> CMat {
        self.0
    }

    /// Spectral norm `max |λ_i|`.
    pub fn norm(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        to_faer(&self.0)
            .self_adjoint_eigenvalues(Side::Lower)
            .map_or(f64::NAN, |ev| ev.iter().fold(0.0, |a, &x| a.max(x.abs())))
    }
}

/// Orthogonal projector with its rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    matrix: HermitianMatrix,
    rank: usize,
}

impl Projector {
    /// Validates `P² = P` and rounds the trace to the rank.
    pub fn from_matrix(m: CMat) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        let p = h.as_mat();
        let idem = hs_norm(&(p * p - p));
        if idem > 1e-11 * (1.0 + hs_norm(p)) {
            return Err(Error::InvalidOperator(format!(
                "not a projector: |P^2 - P| = {idem:e}"
            )));
        }
        let tr = p.trace().re;
        let rank = tr.round();
        if (tr - rank).abs() > 1e-9 {
            return Err(Error::InvalidOperator(format!("non-integer trace {tr}")));
        }
        Ok(Projector { matrix: h, rank: rank as usize })
    }

    pub fn zero(n: usize) -> Self {
        Projector { matrix: HermitianMatrix::zeros(n), rank: 0 }
    }

    pub fn identity(n: usize) -> Self {
        Projector { matrix: HermitianMatrix::identity(n), rank: n }
    }

    pub fn as_mat(&self) -> &CMat {
        self.matrix.as_mat()
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `1 − P`.
    pub fn complement(&self) -> Projector {
        let n = self.dim();
        Projector {
            matrix: HermitianMatrix(CMat::identity(n, n) - self.as_mat()),
            rank: n - self.rank,
        }
    }

    /// Orthonormal basis of the range, obtained from the eigenvectors of `P`.
    pub fn range_basis(&self) -> CMat {
        let n = self.dim();
        if self.rank == 0 {
            return CMat::zeros(n, 0);
        }
        if self.rank == n {
            return CMat::identity(n, n);
        }
        let dec = spectral_decompose(&self.matrix).expect("projector entries are finite");
        dec.eigenvectors.columns(n - self.rank, self.rank).into_owned()
    }
}

/// Eigenvalues in ascending order with a unitary set of eigenvectors stored
/// as columns.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> CVec {
        self.eigenvectors.column(i).into_owned()
    }

    /// `Σ f(λ_i) |v_i⟩⟨v_i|`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> CMat {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let s = c(f(l));
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= s);
        }
        scaled * v.adjoint()
    }

    pub fn reconstruct(&self) -> CMat {
        self.apply_fn(|l| l)
    }

    /// Spectral norm of the decomposed operator.
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// Projector onto the span of the listed eigenvectors.
    pub fn projector(&self, indices: &[usize]) -> Projector {
        let n = self.dim();
        let vs: Vec<CVec> = indices.iter().map(|&i| self.vector(i)).collect();
        let m = columns(&vs, n);
        Projector {
            matrix: HermitianMatrix::symmetrized(&m * m.adjoint()),
            rank: indices.len(),
        }
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// The basis is made deterministic: inside each block of (numerically) equal
/// eigenvalues, vectors are rebuilt by Gram-Schmidt on the projected
/// coordinate vectors, choosing at each step the coordinate with the largest
/// remaining component (lowest index on ties). For simple eigenvalues this
/// makes the largest component real and positive.
pub fn spectral_decompose(h: &HermitianMatrix) -> Result<SpectralDecomposition> {
    let m = h.as_mat();
    if !is_finite(m) {
        return Err(Error::InvalidOperator("non-finite entry".into()));
    }
    let n = h.dim();
    let eig = to_faer(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::InvalidOperator("eigensolver did not converge".into()))?;
    // Ascending order is guaranteed by the solver.
    let eigenvalues: Vec<f64> = (0..n).map(|i| eig.S()[i].re).collect();
    let mut vectors = from_faer(eig.U());
    let scale = eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eigenvalues[end] - eigenvalues[end - 1] <= BLOCK_TOL_REL * scale {
            end += 1;
        }
        canonicalize_block(&mut vectors, start, end);
        start = end;
    }
    Ok(SpectralDecomposition { eigenvalues, eigenvectors: vectors })
}

fn canonicalize_block(v: &mut CMat, start: usize, end: usize) {
    let k = end - start;
    let n = v.nrows();
    let block = v.columns(start, k).into_owned();
    // Coordinates of P e_j in the block basis are conj(row j).
    let mut coords: Vec<CVec> = (0..n).map(|j| block.row(j).adjoint()).collect();
    let mut chosen: Vec<CVec> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = 0;
        let mut best_norm = -1.0;
        for (j, y) in coords.iter().enumerate() {
            let nr = y.norm();
            if nr > best_norm * (1.0 + 1e-12) {
                best = j;
                best_norm = nr;
            }
        }
        let u = &coords[best] / c(best_norm);
        for y in coords.iter_mut() {
            let proj = u.dotc(y);
            *y -= &u * proj;
        }
        chosen.push(u);
    }
    for (i, u) in chosen.iter().enumerate() {
        let mut col = &block * u;
        // Re-orthogonalize against earlier columns to stay unitary to rounding.
        for j in 0..i {
            let prev = v.column(start + j).into_owned();
            let p = prev.dotc(&col);
            col -= prev * p;
        }
        let nr = col.norm();
        v.set_column(start + i, &(col / c(nr)));
    }
}

/// Inverse of `(z − H)` on the orthogonal complement of `excluded`,
/// extended by zero on the range of `excluded`.
///
/// `excluded` must be an invariant subspace of `H`. `gap_tol` is absolute.
pub fn pseudo_inverse_on(h: &CMat, z: f64, excluded: &CMat, gap_tol: f64) -> Result<CMat> {
    let n = h.nrows();
    let comp = Projector::from_matrix(CMat::identity(n, n) - excluded)?;
    let w = comp.range_basis();
    if w.ncols() == 0 {
        return Ok(CMat::zeros(n, n));
    }
    let compressed = HermitianMatrix::new(w.adjoint() * h * &w)?;
    let dec = spectral_decompose(&compressed)?;
    let dist = dec.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min((z - l).abs()));
    if dist <= gap_tol {
        return Err(Error::DegenerateGap { distance: dist, tol: gap_tol });
    }
    let inner = dec.apply_fn(|l| 1.0 / (z - l));
    Ok(&w * inner * w.adjoint())
}

/// [`pseudo_inverse_on`] driven by an existing decomposition of `H`.
///
/// Eigenvectors lying (numerically) inside or outside `excluded` are used
/// directly; if some eigenvector straddles the boundary the compressed
/// operator is diagonalized instead.
pub fn partial_inverse(
    dec: &SpectralDecomposition,
    z: f64,
    excluded: &Projector,
) -> Result<HermitianMatrix> {
    let n = dec.dim();
    let gap_tol = GAP_TOL_REL * dec.norm().max(f64::MIN_POSITIVE);
    let p = excluded.as_mat();
    let mut kept = Vec::with_capacity(n);
    for i in 0..n {
        let v = dec.eigenvectors.column(i);
        let w = v.dotc(&(p * v)).re;
        if w > 1.0 - 1e-8 {
            continue;
        } else if w < 1e-8 {
            kept.push(i);
        } else {
            let inv = pseudo_inverse_on(&dec.reconstruct(), z, p, gap_tol)?;
            return HermitianMatrix::new(inv);
        }
    }
    let mut out = CMat::zeros(n, n);
    let mut dist = f64::INFINITY;
    for &i in &kept {
        let l = dec.eigenvalues[i];
        dist = dist.min((z - l).abs());
        let v = dec.vector(i);
        out += outer(&v, &v) * c(1.0 / (z - l));
    }
    if !kept.is_empty() && dist <= gap_tol {
        return Err(Error::DegenerateGap { distance: dist, tol: gap_tol });
    }
    HermitianMatrix::new(out)
}

/// Density matrix `Σ_α |φ_α⟩⟨φ_α|` of an orthonormal family in dimension `dim`.
pub fn density_matrix(vectors: &[CVec], dim: usize) -> Result<Projector> {
    if vectors.is_empty() {
        return Ok(Projector::zero(dim));
    }
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch("vector dimension differs from dim".into()));
    }
    let m = columns(vectors, dim);
    let gram = m.adjoint() * &m;
    let dev = (gram - CMat::identity(vectors.len(), vectors.len())).camax();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    Ok(Projector {
        matrix: HermitianMatrix::symmetrized(&m * m.adjoint()),
        rank: vectors.len(),
    })
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
///
/// A vector is dropped when its residual after projection is below
/// `rank_tol` times its original norm.
pub fn orthonormalize(vectors: &[CVec], rank_tol: f64) -> (Vec<CVec>, usize) {
    let mut basis: Vec<CVec> = Vec::new();
    for v in vectors {
        let orig = v.norm();
        if orig == 0.0 || !orig.is_finite() {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let p = b.dotc(&r);
                r -= b * p;
            }
        }
        let nr = r.norm();
        if nr >= rank_tol * orig && nr > 0.0 {
            basis.push(r / c(nr));
        }
    }
    let rank = basis.len();
    (basis, rank)
}

/// Result of aligning one orthonormal frame onto another.
#[derive(Clone, Debug)]
pub struct Procrustes {
    /// `aligned_α = Σ_β U_{αβ} ψ_β`.
    pub u: CMat,
    pub aligned: Vec<CVec>,
    /// `(Σ_μ ‖φ_μ − aligned_μ‖²)^{1/2}`.
    pub distance: f64,
}

/// Unitary `U` minimizing `‖φ − Uψ‖`, from the polar factor of the overlap
/// matrix `⟨ψ_β, φ_μ⟩`.
pub fn procrustes_align(phi: &[CVec], psi: &[CVec]) -> Result<Procrustes> {
    if phi.len() != psi.len() {
        return Err(Error::ShapeMismatch(format!(
            "frames have {} and {} vectors",
            phi.len(),
            psi.len()
        )));
    }
    let nu = phi.len();
    if nu == 0 {
        return Ok(Procrustes { u: CMat::zeros(0, 0), aligned: vec![], distance: 0.0 });
    }
    let n = phi[0].len();
    let fm = columns(phi, n);
    let sm = columns(psi, n);
    let overlap = sm.adjoint() * &fm;
    let svd = to_faer(&overlap).svd().map_err(|_| Error::InvalidOperator("svd did not converge".into()))?;
    let w = from_faer(svd.U()) * from_faer(svd.V()).adjoint();
    let aligned_m = &sm * &w;
    let aligned: Vec<CVec> = (0..nu).map(|j| aligned_m.column(j).into_owned()).collect();
    let distance = (fm - aligned_m).norm();
    Ok(Procrustes { u: w.transpose(), aligned, distance })
}

/// Energy operator `A` together with its inverse.
#[derive(Clone, Debug)]
pub struct EnergyOperator {
    pub a: CMat,
    pub a_inv: CMat,
    /// `‖A⁻¹‖`.
    pub c_a: f64,
}

impl EnergyOperator {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        let dec = spectral_decompose(a)?;
        let min = dec.eigenvalues.iter().fold(f64::INFINITY, |m, &x| m.min(x.abs()));
        if min.is_nan() || min <= 1e-14 * dec.norm() || min == 0.0 {
            return Err(Error::SingularEnergyOperator(min));
        }
        Ok(EnergyOperator {
            a: a.as_mat().clone(),
            a_inv: dec.apply_fn(|l| 1.0 / l),
            c_a: 1.0 / min,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `A^δ` for `δ ∈ {0, 1}`.
    pub fn pow(&self, delta: u8) -> CMat {
        if delta == 0 {
            CMat::identity(self.dim(), self.dim())
        } else {
            self.a.clone()
        }
    }

    /// `A^{−δ}`.
    pub fn inv_pow(&self, delta: u8) -> CMat {
        if delta == 0 {
            CMat::identity(self.dim(), self.dim())
        } else {
            self.a_inv.clone()
        }
    }

    /// `‖A^δ v‖`.
    pub fn vec_norm(&self, v: &CVec, delta: u8) -> f64 {
        if delta == 0 {
            v.norm()
        } else {
            (&self.a * v).norm()
        }
    }

    /// `‖A^δ B‖₂`.
    pub fn hs(&self, b: &CMat, delta: u8) -> f64 {
        if delta == 0 {
            b.norm()
        } else {
            (&self.a * b).norm()
        }
    }

    /// `‖A⁻¹ B A⁻¹‖`.
    pub fn param(&self, b: &CMat) -> f64 {
        op_norm(&(&self.a_inv * b * &self.a_inv))
    }
}

/// Which norm to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Euclidean norm of a vector, Hilbert-Schmidt norm of a matrix.
    Plain,
    /// `‖Aφ‖`.
    EnergyVec,
    /// `‖A^δ B‖₂`, `δ ∈ {0,1}`.
    HsDelta(u8),
    /// Operator norm.
    Op,
    /// `‖A⁻¹ B A⁻¹‖`.
    Param,
    /// `‖A B A‖₂`.
    DoubleEnergy,
}

/// Vector or matrix argument for [`norm`].
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Vector(&'a CVec),
    Matrix(&'a CMat),
}

/// Evaluates `kind` on `operand`. For vectors, `HsDelta(δ)` is `‖A^δ φ‖`
/// and `Op` is the Euclidean norm; `Param` and `DoubleEnergy` require a
/// matrix.
pub fn norm(kind: NormKind, operand: Operand<'_>, a: &EnergyOperator) -> Result<f64> {
    if let NormKind::HsDelta(d) = kind {
        if d > 1 {
            return Err(Error::InvalidInput(format!("delta must be 0 or 1, got {d}")));
        }
    }
    let check = |n: usize| {
        if n != a.dim() {
            Err(Error::ShapeMismatch(format!("operand dim {n} vs A dim {}", a.dim())))
        } else {
            Ok(())
        }
    };
    match operand {
        Operand::Vector(v) => {
            check(v.len())?;
            match kind {
                NormKind::Plain | NormKind::Op => Ok(v.norm()),
                NormKind::EnergyVec => Ok(a.vec_norm(v, 1)),
                NormKind::HsDelta(d) => Ok(a.vec_norm(v, d)),
                NormKind::Param | NormKind::DoubleEnergy => Err(Error::InvalidInput(
                    "param and double-energy norms apply to operators".into(),
                )),
            }
        }
        Operand::Matrix(b) => {
            check(b.nrows())?;
            match kind {
                NormKind::Plain => Ok(hs_norm(b)),
                NormKind::EnergyVec => Ok(op_norm(&(&a.a * b))),
                NormKind::HsDelta(d) => Ok(a.hs(b, d)),
                NormKind::Op => Ok(op_norm(b)),
                NormKind::Param => Ok(a.param(b)),
                NormKind::DoubleEnergy => Ok(hs_norm(&(&a.a * b * &a.a))),
            }
        }
    }
}

/// JSON form `{"dim": n, "re": [[..]], "im": [[..]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

/// JSON form `{"dim": n, "re": [..], "im": [..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorJson {
    pub dim: usize,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_mat(m: &CMat) -> Self {
        let n = m.nrows();
        MatrixJson {
            dim: n,
            re: (0..n).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect()).collect(),
        }
    }

    pub fn to_mat(&self) -> Result<CMat> {
        let n = self.dim;
        let bad = |what: &str| Error::Validation(format!("matrix {what} does not match dim {n}"));
        if self.re.len() != n || self.re.iter().any(|r| r.len() != n) {
            return Err(bad("re"));
        }
        // An omitted imaginary part reads as zero.
        let zero_im = self.im.is_empty();
        if !zero_im && (self.im.len() != n || self.im.iter().any(|r| r.len() != n)) {
            return Err(bad("im"));
        }
        Ok(CMat::from_fn(n, n, |i, j| {
            C64::new(self.re[i][j], if zero_im { 0.0 } else { self.im[i][j] })
        }))
    }

    pub fn to_hermitian(&self) -> Result<HermitianMatrix> {
        HermitianMatrix::new(self.to_mat()?)
    }
}

impl VectorJson {
    pub fn from_vec(v: &CVec) -> Self {
        VectorJson {
            dim: v.len(),
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    pub fn to_vec(&self) -> Result<CVec> {
        if self.re.len() != self.dim || (!self.im.is_empty() && self.im.len() != self.dim) {
            return Err(Error::Validation(format!("vector does not match dim {}", self.dim)));
        }
        Ok(CVec::from_fn(self.dim, |i, _| {
            C64::new(self.re[i], self.im.get(i).copied().unwrap_or(0.0))
        }))
    }
}
