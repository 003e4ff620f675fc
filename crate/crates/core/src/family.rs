//! Polynomial operator families `H(λ) = Σ λⁿ Hⁿ`, their norm constants and
//! eigen-cluster selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c, op_norm, spectral_decompose, CMat, CVec, EnergyOperator, HermitianMatrix, MatrixJson,
    Projector, SpectralDecomposition, DEGENERACY_TOL_REL, GAP_TOL_REL,
};

/// Numerical thresholds shared by the engines. All are relative to the
/// operator norm of the matrix they are applied to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub gap_rel: f64,
    pub degeneracy_rel: f64,
    /// Eigenvalue distance accepted when matching reduced and exact modes at λ = 0.
    pub match_eig_rel: f64,
    /// Minimal overlap `|⟨ψ, φ⟩|` accepted at λ = 0.
    pub match_overlap: f64,
    /// Minimal overlap for branch continuation between grid points.
    pub branch_overlap: f64,
    /// Relative residual below which a spanning vector is dropped.
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gap_rel: GAP_TOL_REL,
            degeneracy_rel: DEGENERACY_TOL_REL,
            match_eig_rel: 1e-8,
            match_overlap: 1.0 - 1e-8,
            branch_overlap: 0.5,
            rank_tol: 1e-10,
        }
    }
}

/// The family `{H⁰, …, H^M}` together with the energy operator `A`.
#[derive(Clone, Debug)]
pub struct OperatorFamily {
    a: HermitianMatrix,
    terms: Vec<HermitianMatrix>,
    energy: EnergyOperator,
}

impl OperatorFamily {
    pub fn new(a: HermitianMatrix, terms: Vec<HermitianMatrix>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidOperator("family needs at least H^0".into()));
        }
        let n = a.dim();
        if let Some((i, t)) = terms.iter().enumerate().find(|(_, t)| t.dim() != n) {
            return Err(Error::ShapeMismatch(format!("H^{i} has dim {} but A has dim {n}", t.dim())));
        }
        let energy = EnergyOperator::new(&a)?;
        Ok(OperatorFamily { a, terms, energy })
    }

    /// Family with `A = 1`.
    pub fn with_identity_energy(terms: Vec<HermitianMatrix>) -> Result<Self> {
        let n = terms.first().map(|t| t.dim()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidOperator("family needs at least H^0".into()));
        }
        Self::new(HermitianMatrix::identity(n), terms)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Highest stored order `M`.
    pub fn max_order(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn a(&self) -> &HermitianMatrix {
        &self.a
    }

    pub fn energy(&self) -> &EnergyOperator {
        &self.energy
    }

    pub fn terms(&self) -> &[HermitianMatrix] {
        &self.terms
    }

    /// `Hⁿ`, zero beyond `M`.
    pub fn term(&self, n: usize) -> CMat {
        match self.terms.get(n) {
            Some(t) => t.as_mat().clone(),
            None => CMat::zeros(self.dim(), self.dim()),
        }
    }

    /// `Hⁿ v`, zero beyond `M`.
    pub fn apply_term(&self, n: usize, v: &CVec) -> CVec {
        match self.terms.get(n) {
            Some(t) => t.as_mat() * v,
            None => CVec::zeros(self.dim()),
        }
    }

    pub fn to_json(&self) -> FamilyJson {
        FamilyJson {
            a: MatrixJson::from_mat(self.a.as_mat()),
            terms: self.terms.iter().map(|t| MatrixJson::from_mat(t.as_mat())).collect(),
        }
    }

    pub fn from_json(j: &FamilyJson) -> Result<Self> {
        let terms = j.terms.iter().map(|t| t.to_hermitian()).collect::<Result<Vec<_>>>()?;
        Self::new(j.a.to_hermitian()?, terms)
    }
}

/// File form `{"A": matrix, "terms": [matrix, ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyJson {
    #[serde(rename = "A")]
    pub a: MatrixJson,
    pub terms: Vec<MatrixJson>,
}

/// `H(λ)` by Horner evaluation.
pub fn assemble(family: &OperatorFamily, lam: f64) -> HermitianMatrix {
    let mut acc = family.terms[family.max_order()].as_mat().clone();
    for t in family.terms.iter().rev().skip(1) {
        acc = acc * c(lam) + t.as_mat();
    }
    HermitianMatrix::new(acc).expect("finite terms give a finite sum")
}

/// Norm constants of a family, optionally tied to a reduced space or cluster.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormContext {
    /// `‖A⁻¹‖`.
    pub c_a: f64,
    /// `‖A⁻¹ H⁰ A⁻¹‖`.
    pub c_h: f64,
    /// `‖A 𝒫 A⁻¹‖`.
    pub c_p: Option<f64>,
    /// `max_n ‖A⁻¹ Hⁿ A⁻¹‖`.
    pub c_h_inf: f64,
    /// `‖A K A‖`.
    pub c_k: Option<f64>,
    /// `max_μ ‖A R_μ A⁻¹‖`, maximized over every λ it was updated with.
    pub c_pr: Option<f64>,
}

impl NormContext {
    pub fn with_k(mut self, family: &OperatorFamily, k: &CMat) -> Self {
        let a = &family.energy().a;
        self.c_k = Some(op_norm(&(a * k * a)));
        self
    }

    /// Folds the partial inverses of one λ sample into `c_pr`.
    pub fn update_pr(&mut self, family: &OperatorFamily, rs: &[CMat]) {
        let e = family.energy();
        let v = rs.iter().map(|r| op_norm(&(&e.a * r * &e.a_inv))).fold(0.0, f64::max);
        self.c_pr = Some(self.c_pr.map_or(v, |old| old.max(v)));
    }
}

/// Computes the norm constants; `c_p` is filled when a reduced-space
/// projector is given.
pub fn validate(family: &OperatorFamily, space: Option<&Projector>) -> Result<NormContext> {
    let e = family.energy();
    let c_h = e.param(family.terms[0].as_mat());
    let c_h_inf = family.terms.iter().map(|t| e.param(t.as_mat())).fold(0.0, f64::max);
    let c_p = match space {
        Some(p) => {
            if p.dim() != family.dim() {
                return Err(Error::ShapeMismatch("projector and family dims differ".into()));
            }
            Some(op_norm(&(&e.a * p.as_mat() * &e.a_inv)))
        }
        None => None,
    };
    Ok(NormContext { c_a: e.c_a, c_h, c_p, c_h_inf, c_k: None, c_pr: None })
}

/// ν eigenpairs of `H(λ)` with their density matrix and isolation gap.
#[derive(Clone, Debug)]
pub struct EigenCluster {
    pub lam: f64,
    pub energies: Vec<f64>,
    pub vectors: Vec<CVec>,
    pub gamma: Projector,
    /// Distance from the cluster eigenvalues to the rest of the spectrum.
    pub gap: f64,
    /// Positions of the modes in the ascending spectrum of `H(λ)`.
    pub indices: Vec<usize>,
    /// Full decomposition of `H(λ)`.
    pub dec: SpectralDecomposition,
}

impl EigenCluster {
    pub fn nu(&self) -> usize {
        self.energies.len()
    }

    pub fn dim(&self) -> usize {
        self.dec.dim()
    }

    /// `K_μ = (E_μ − H)⁻¹` on `Γ^⊥`, zero on `Γ𝓗`.
    pub fn reduced_resolvent(&self, mu: usize) -> Result<CMat> {
        Ok(crate::linalg::partial_inverse(&self.dec, self.energies[mu], &self.gamma)?.into_mat())
    }

    /// Replaces the cluster frame by `vectors` (same span), keeping Γ.
    pub fn with_frame(mut self, energies: Vec<f64>, vectors: Vec<CVec>) -> Self {
        self.energies = energies;
        self.vectors = vectors;
        self
    }
}

/// Selects eigenvalues (by ascending index) of `H(λ)`; rejects selections
/// that split a degenerate group or are not isolated.
pub fn select_cluster(
    family: &OperatorFamily,
    lam: f64,
    targets: &[usize],
    tol: &Tolerances,
) -> Result<EigenCluster> {
    let h = assemble(family, lam);
    let dec = spectral_decompose(&h)?;
    cluster_from_decomposition(dec, lam, targets, tol)
}

pub fn cluster_from_decomposition(
    dec: SpectralDecomposition,
    lam: f64,
    targets: &[usize],
    tol: &Tolerances,
) -> Result<EigenCluster> {
    let n = dec.dim();
    if targets.is_empty() {
        return Err(Error::InvalidInput("empty target list".into()));
    }
    let mut seen = vec![false; n];
    for &t in targets {
        if t >= n || seen[t] {
            return Err(Error::InvalidInput(format!("invalid or repeated target index {t}")));
        }
        seen[t] = true;
    }
    let scale = dec.norm().max(f64::MIN_POSITIVE);
    let deg_tol = tol.degeneracy_rel * scale;
    let mut gap = f64::INFINITY;
    for j in (0..n).filter(|&j| !seen[j]) {
        for &i in targets {
            let d = (dec.eigenvalues[i] - dec.eigenvalues[j]).abs();
            if d <= deg_tol {
                return Err(Error::IncompleteCluster(j));
            }
            gap = gap.min(d);
        }
    }
    let gap_tol = tol.gap_rel * scale;
    if gap <= gap_tol {
        return Err(Error::DegenerateGap { distance: gap, tol: gap_tol });
    }
    let energies = targets.iter().map(|&i| dec.eigenvalues[i]).collect();
    let vectors = targets.iter().map(|&i| dec.vector(i)).collect();
    let gamma = dec.projector(targets);
    Ok(EigenCluster { lam, energies, vectors, gamma, gap, indices: targets.to_vec(), dec })
}
