//! Reduced spaces, Galerkin eigenproblems on them, and branch tracking in λ.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{assemble, cluster_from_decomposition, EigenCluster, OperatorFamily, Tolerances};
use crate::linalg::{
    c, columns, density_matrix, hs_norm, orthonormalize, spectral_decompose, CMat, CVec, HermitianMatrix, Projector,
};
use crate::output::{fmt17, Table};
use crate::perturbation::{DMSeries, RSSeries};

/// Largest λ step taken by overlap continuation; coarser grids are refined
/// internally.
pub const MAX_CONTINUATION_STEP: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    Derivatives { ell: usize, modes: usize },
    GammaImages { ell: usize, nu: usize },
    ExcitedStates { beta: usize },
    Custom,
}

#[derive(Clone, Debug)]
pub struct ReducedSpace {
    pub basis: Vec<CVec>,
    pub p: Projector,
    pub recipe: Recipe,
}

impl ReducedSpace {
    /// Orthonormalizes `spanning` and builds `𝒫`.
    pub fn from_spanning(spanning: &[CVec], recipe: Recipe, rank_tol: f64) -> Result<Self> {
        let dim = spanning.first().map(|v| v.len()).ok_or(Error::EmptySpace)?;
        let (basis, rank) = orthonormalize(spanning, rank_tol);
        if rank == 0 {
            return Err(Error::EmptySpace);
        }
        let p = density_matrix(&basis, dim)?;
        Ok(Self { basis, p, recipe })
    }

    pub fn d(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// `n × d` matrix whose columns are the basis.
    pub fn basis_matrix(&self) -> CMat {
        columns(&self.basis, self.dim())
    }
}

/// RBM+PT space `Span{Φ^k_μ : k ≤ ℓ}` over the given modes.
///
/// The span is built from both `Φ^k` and `φ^k`; the two must agree.
pub fn space_from_derivatives(series: &[&RSSeries], ell: usize, tol: &Tolerances) -> Result<ReducedSpace> {
    if series.is_empty() {
        return Err(Error::EmptySpace);
    }
    for s in series {
        if s.order < ell {
            return Err(Error::InvalidOrder(format!("series order {} below ell = {ell}", s.order)));
        }
    }
    let recipe = Recipe::Derivatives { ell, modes: series.len() };
    let big: Vec<CVec> = series.iter().flat_map(|s| s.big_phi[..=ell].iter().cloned()).collect();
    let small: Vec<CVec> = series.iter().flat_map(|s| s.phi[..=ell].iter().cloned()).collect();
    let space = ReducedSpace::from_spanning(&big, recipe.clone(), tol.rank_tol)?;
    let other = ReducedSpace::from_spanning(&small, recipe, tol.rank_tol)?;
    let diff = hs_norm(&(space.p.as_mat() - other.p.as_mat()));
    if other.d() != space.d() || diff > 1e-8 {
        return Err(Error::Validation(format!(
            "span of intermediate and unit normalized derivatives differ ({diff:e})"
        )));
    }
    Ok(space)
}

/// `Span{Γⁿ v : n ≤ ℓ, v ∈ seed}` with `seed` spanning `Γ⁰𝓗`.
pub fn space_from_gamma_images(dm: &DMSeries, ell: usize, seed: &[CVec], tol: &Tolerances) -> Result<ReducedSpace> {
    if dm.order < ell {
        return Err(Error::InvalidOrder(format!("series order {} below ell = {ell}", dm.order)));
    }
    let g0 = &dm.gamma[0];
    let nu = g0.trace().re.round() as usize;
    for v in seed {
        if (g0 * v - v).norm() > 1e-8 * v.norm() {
            return Err(Error::BadSeed);
        }
    }
    if orthonormalize(seed, tol.rank_tol).1 != nu {
        return Err(Error::BadSeed);
    }
    let spanning: Vec<CVec> = (0..=ell).flat_map(|n| seed.iter().map(move |v| &dm.gamma[n] * v)).collect();
    ReducedSpace::from_spanning(&spanning, Recipe::GammaImages { ell, nu }, tol.rank_tol)
}

/// RBM+ES space spanned by the `β + 1` lowest eigenvectors of `H(0)`.
pub fn space_from_excited_states(family: &OperatorFamily, beta: usize, tol: &Tolerances) -> Result<ReducedSpace> {
    if beta + 1 > family.dim() {
        return Err(Error::InvalidInput(format!("beta + 1 = {} exceeds dimension {}", beta + 1, family.dim())));
    }
    let dec = spectral_decompose(&family.terms()[0])?;
    let vs: Vec<CVec> = (0..=beta).map(|j| dec.vector(j)).collect();
    ReducedSpace::from_spanning(&vs, Recipe::ExcitedStates { beta }, tol.rank_tol)
}

/// `⟨b_i, H(λ) b_j⟩`.
pub fn project(family: &OperatorFamily, space: &ReducedSpace, lam: f64) -> Result<HermitianMatrix> {
    if space.dim() != family.dim() {
        return Err(Error::ShapeMismatch("space and family dims differ".into()));
    }
    let b = space.basis_matrix();
    HermitianMatrix::new(b.adjoint() * assemble(family, lam).as_mat() * &b)
}

/// Reduced eigenpairs matched to an exact cluster.
#[derive(Clone, Debug)]
pub struct ReducedEigenCluster {
    pub lam: f64,
    pub energies: Vec<f64>,
    /// `ψ_μ` in the full space.
    pub vectors: Vec<CVec>,
    pub lambda: Projector,
    /// `R_μ` in the reduced basis; see [`ReducedEigenCluster::r_full`].
    pub r: Vec<CMat>,
    /// Positions of the modes in the ascending reduced spectrum.
    pub matched: Vec<usize>,
    /// Distance from the matched eigenvalues to the rest of `σ(𝒫H𝒫|𝒫𝓗)`.
    pub gap: f64,
    basis: CMat,
}

impl ReducedEigenCluster {
    pub fn nu(&self) -> usize {
        self.energies.len()
    }

    /// `R_μ = (𝓔_μ − 𝒫H𝒫)⁻¹` on `(𝒫 − Λ)𝓗`, zero on `Λ𝓗 ⊕ 𝒫^⊥𝓗`.
    pub fn r_full(&self, mu: usize) -> CMat {
        &self.basis * &self.r[mu] * self.basis.adjoint()
    }

    /// Restriction `B* X B` of a full-space operator to the reduced basis.
    pub fn restrict(&self, x: &CMat) -> CMat {
        self.basis.adjoint() * x * &self.basis
    }
}

fn phase_aligned(v: CVec, reference: &CVec) -> CVec {
    let ov = reference.dotc(&v);
    if ov.norm() == 0.0 {
        v
    } else {
        v * (ov.conj() / ov.norm())
    }
}

/// Greedy assignment of candidates to references by decreasing overlap.
fn assign(candidates: &[CVec], refs: &[CVec], lam: f64, threshold: f64) -> Result<Vec<usize>> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (m, r) in refs.iter().enumerate() {
        for (j, v) in candidates.iter().enumerate() {
            pairs.push((m, j, r.dotc(v).norm()));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut out = vec![usize::MAX; refs.len()];
    let mut used = vec![false; candidates.len()];
    for (m, j, ov) in pairs {
        if out[m] == usize::MAX && !used[j] {
            if ov < threshold {
                return Err(Error::BranchCrossing { lam, overlap: ov });
            }
            out[m] = j;
            used[j] = true;
        }
    }
    Ok(out)
}

/// Exact cluster at `lam` continuing the frame `refs` (one vector per mode).
pub fn track_exact(family: &OperatorFamily, lam: f64, refs: &[CVec], tol: &Tolerances) -> Result<EigenCluster> {
    let dec = spectral_decompose(&assemble(family, lam))?;
    let cands: Vec<CVec> = (0..dec.dim()).map(|j| dec.vector(j)).collect();
    let idx = assign(&cands, refs, lam, tol.branch_overlap)?;
    let cl = cluster_from_decomposition(dec, lam, &idx, tol)?;
    let vectors = cl.vectors.iter().zip(refs).map(|(v, r)| phase_aligned(v.clone(), r)).collect();
    let energies = cl.energies.clone();
    Ok(cl.with_frame(energies, vectors))
}

fn finish_reduced(
    lam: f64,
    space: &ReducedSpace,
    dec: &crate::linalg::SpectralDecomposition,
    matched: Vec<usize>,
    coords: Vec<CVec>,
    tol: &Tolerances,
) -> Result<ReducedEigenCluster> {
    let basis = space.basis_matrix();
    let energies: Vec<f64> = matched.iter().map(|&j| dec.eigenvalues[j]).collect();
    let vectors: Vec<CVec> = coords.iter().map(|x| &basis * x).collect();
    let lambda = density_matrix(&vectors, space.dim())?;
    let scale = dec.norm().max(f64::MIN_POSITIVE);
    let mut gap = f64::INFINITY;
    let mut r = Vec::with_capacity(matched.len());
    for &e in &energies {
        let mut rm = CMat::zeros(space.d(), space.d());
        for j in (0..dec.dim()).filter(|j| !matched.contains(j)) {
            let dist = e - dec.eigenvalues[j];
            gap = gap.min(dist.abs());
            if dist.abs() <= tol.gap_rel * scale {
                return Err(Error::DegenerateGap { distance: dist.abs(), tol: tol.gap_rel * scale });
            }
            let v = dec.vector(j);
            rm += &v * v.adjoint() * c(1.0 / dist);
        }
        r.push(rm);
    }
    Ok(ReducedEigenCluster { lam, energies, vectors, lambda, r, matched, gap, basis })
}

/// Reduced cluster at `lam`.
///
/// At λ = 0 every exact mode must be reproduced by the reduced problem
/// (eigenvalue within `match_eig_rel·‖H(0)‖` and weight at least
/// `match_overlap` in the matching reduced eigenspace), otherwise
/// `SpectralPollution`. The λ = 0 frame is the projection of the exact
/// frame onto that eigenspace. At λ ≠ 0 branches continue from `refs`
/// (the λ = 0 frame when `None`).
pub fn solve_reduced(
    family: &OperatorFamily,
    space: &ReducedSpace,
    lam: f64,
    exact0: &EigenCluster,
    refs: Option<&[CVec]>,
    tol: &Tolerances,
) -> Result<ReducedEigenCluster> {
    if lam == 0.0 || refs.is_none() {
        let at0 = reduced_at_origin(family, space, exact0, tol)?;
        if lam == 0.0 {
            return Ok(at0);
        }
        return solve_reduced(family, space, lam, exact0, Some(&at0.vectors), tol);
    }
    let refs = refs.unwrap_or(&[]);
    let h = project(family, space, lam)?;
    let dec = spectral_decompose(&h)?;
    let basis = space.basis_matrix();
    let ref_coords: Vec<CVec> = refs.iter().map(|r| basis.adjoint() * r).collect();
    let cands: Vec<CVec> = (0..dec.dim()).map(|j| dec.vector(j)).collect();
    let matched = assign(&cands, &ref_coords, lam, tol.branch_overlap)?;
    let coords = matched.iter().zip(&ref_coords).map(|(&j, r)| phase_aligned(dec.vector(j), r)).collect();
    finish_reduced(lam, space, &dec, matched, coords, tol)
}

fn reduced_at_origin(
    family: &OperatorFamily,
    space: &ReducedSpace,
    exact0: &EigenCluster,
    tol: &Tolerances,
) -> Result<ReducedEigenCluster> {
    if exact0.lam != 0.0 {
        return Err(Error::InvalidInput("reference cluster must sit at lambda = 0".into()));
    }
    let h = project(family, space, 0.0)?;
    let dec = spectral_decompose(&h)?;
    let basis = space.basis_matrix();
    let eig_tol = tol.match_eig_rel * exact0.dec.norm().max(f64::MIN_POSITIVE);
    let mut matched: Vec<usize> = Vec::new();
    let mut coords = Vec::with_capacity(exact0.nu());
    for (mu, (e, phi)) in exact0.energies.iter().zip(&exact0.vectors).enumerate() {
        let near: Vec<usize> = (0..dec.dim()).filter(|&j| (dec.eigenvalues[j] - e).abs() <= eig_tol).collect();
        let x = basis.adjoint() * phi;
        let mut proj = CVec::zeros(dec.dim());
        for &j in &near {
            let v = dec.vector(j);
            proj += &v * v.dotc(&x);
        }
        if near.is_empty() || proj.norm_squared() < tol.match_overlap {
            return Err(Error::SpectralPollution(mu));
        }
        for j in near {
            if !matched.contains(&j) {
                matched.push(j);
            }
        }
        coords.push(proj.normalize());
    }
    if matched.len() != exact0.nu() {
        // More reduced eigenvalues at E_μ(0) than exact modes.
        return Err(Error::SpectralPollution(exact0.nu()));
    }
    // Reduced eigenvectors are replaced by the exact frame, so the matched
    // positions are recorded in ascending order for the gap bookkeeping.
    matched.sort_unstable();
    let mut out = finish_reduced(0.0, space, &dec, matched.clone(), coords, tol)?;
    out.matched = exact0
        .vectors
        .iter()
        .map(|phi| {
            let x = basis.adjoint() * phi;
            *matched.iter().max_by(|&&a, &&b| dec.vector(a).dotc(&x).norm().total_cmp(&dec.vector(b).dotc(&x).norm())).unwrap_or(&0)
        })
        .collect();
    Ok(out)
}

/// Exact and reduced clusters at one grid point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub exact: EigenCluster,
    pub reduced: ReducedEigenCluster,
}

/// Per-mode errors between an exact and a reduced cluster.
#[derive(Clone, Debug, Serialize)]
pub struct ModeError {
    pub lam: f64,
    pub mu: usize,
    pub e_exact: f64,
    pub e_reduced: f64,
    pub err_vec_l2: f64,
    pub err_vec_energy: f64,
    pub err_eig: f64,
}

/// Errors of mode `mu` with the phase of `ψ_μ` aligned to `φ_μ`.
///
/// The eigenvalue error is evaluated as `⟨φ−ψ, (H−E)(φ−ψ)⟩`, which equals
/// `𝓔 − E` for unit `ψ` and avoids the cancellation of a direct subtraction.
pub fn mode_error(family: &OperatorFamily, p: &SweepPoint, mu: usize) -> ModeError {
    let phi = &p.exact.vectors[mu];
    let psi = phase_aligned(p.reduced.vectors[mu].clone(), phi);
    let d = phi - psi;
    let e = p.exact.energies[mu];
    let h = assemble(family, p.exact.lam);
    let hd = h.as_mat() * &d - &d * c(e);
    ModeError {
        lam: p.exact.lam,
        mu,
        e_exact: e,
        e_reduced: p.reduced.energies[mu],
        err_vec_l2: d.norm(),
        err_vec_energy: family.energy().vec_norm(&d, 1),
        err_eig: d.dotc(&hd).re.abs(),
    }
}

/// Tracks exact and reduced branches from λ = 0 over `grid` (any order,
/// either sign). Results follow the input order.
pub fn sweep(
    family: &OperatorFamily,
    space: &ReducedSpace,
    grid: &[f64],
    exact0: &EigenCluster,
    tol: &Tolerances,
) -> Result<Vec<SweepPoint>> {
    let red0 = solve_reduced(family, space, 0.0, exact0, None, tol)?;
    let mut out: Vec<Option<SweepPoint>> = vec![None; grid.len()];
    for sign in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] * sign > 0.0).collect();
        idx.sort_by(|&a, &b| (grid[a] * sign).total_cmp(&(grid[b] * sign)));
        let mut cur = 0.0;
        let mut exact_refs = exact0.vectors.clone();
        let mut red_refs = red0.vectors.clone();
        for i in idx {
            let target = grid[i];
            let steps = ((target - cur).abs() / MAX_CONTINUATION_STEP).ceil().max(1.0) as usize;
            let start = cur;
            let mut last = None;
            for s in 1..=steps {
                let lam = if s == steps { target } else { start + (target - start) * s as f64 / steps as f64 };
                let ex = track_exact(family, lam, &exact_refs, tol)?;
                let red = solve_reduced(family, space, lam, exact0, Some(&red_refs), tol)?;
                exact_refs = ex.vectors.clone();
                red_refs = red.vectors.clone();
                last = Some(SweepPoint { exact: ex, reduced: red });
            }
            cur = target;
            out[i] = last;
        }
    }
    for (i, &lam) in grid.iter().enumerate() {
        if lam == 0.0 {
            out[i] = Some(SweepPoint { exact: exact0.clone(), reduced: red0.clone() });
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every grid point visited")).collect())
}

/// CSV table `lam, mu, E_exact, E_reduced, err_vec_l2, err_vec_energy, err_eig`.
pub fn sweep_table(family: &OperatorFamily, points: &[SweepPoint]) -> Table {
    let mut t = Table::new(&["lam", "mu", "E_exact", "E_reduced", "err_vec_l2", "err_vec_energy", "err_eig"]);
    for p in points {
        for mu in 0..p.exact.nu() {
            let m = mode_error(family, p, mu);
            t.push(vec![
                fmt17(m.lam),
                m.mu.to_string(),
                fmt17(m.e_exact),
                fmt17(m.e_reduced),
                fmt17(m.err_vec_l2),
                fmt17(m.err_vec_energy),
                fmt17(m.err_eig),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::select_cluster;
    use crate::perturbation::rs_nondegenerate;
    use nalgebra::DMatrix;

    fn sigma_x_family() -> OperatorFamily {
        OperatorFamily::with_identity_energy(vec![
            HermitianMatrix::from_diag(&[0.0, 1.0]),
            HermitianMatrix::from_real(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap(),
        ])
        .unwrap()
    }

    fn three_level() -> OperatorFamily {
        let h1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.3, 0.2, 0.3, 0.1, 0.4, 0.2, 0.4, -0.2]);
        OperatorFamily::with_identity_energy(vec![
            HermitianMatrix::from_diag(&[0.0, 1.0, 2.0]),
            HermitianMatrix::from_real(h1).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn derivative_space_dimensions() {
        let tol = Tolerances::default();
        let f = three_level();
        let cl = select_cluster(&f, 0.0, &[0], &tol).unwrap();
        let s = rs_nondegenerate(&f, &cl, 3).unwrap();
        assert_eq!(space_from_derivatives(&[&s], 0, &tol).unwrap().d(), 1);
        assert_eq!(space_from_derivatives(&[&s], 1, &tol).unwrap().d(), 2);
        let flat = OperatorFamily::with_identity_energy(vec![
            HermitianMatrix::from_diag(&[0.0, 1.0, 2.0]),
            HermitianMatrix::zeros(3),
        ])
        .unwrap();
        let cl = select_cluster(&flat, 0.0, &[0], &tol).unwrap();
        let s = rs_nondegenerate(&flat, &cl, 3).unwrap();
        assert_eq!(space_from_derivatives(&[&s], 3, &tol).unwrap().d(), 1);
    }

    #[test]
    fn excited_state_space() {
        let tol = Tolerances::default();
        let f = three_level();
        let s = space_from_excited_states(&f, 1, &tol).unwrap();
        let want = HermitianMatrix::from_diag(&[1.0, 1.0, 0.0]);
        assert!((s.p.as_mat() - want.as_mat()).norm() < 1e-14);
        assert_eq!(space_from_excited_states(&f, 0, &tol).unwrap().d(), 1);
    }

    #[test]
    fn projection_of_exact_eigenvector() {
        let tol = Tolerances::default();
        let f = three_level();
        let cl = select_cluster(&f, 0.2, &[0], &tol).unwrap();
        let space = ReducedSpace::from_spanning(&cl.vectors, Recipe::Custom, tol.rank_tol).unwrap();
        let h = project(&f, &space, 0.2).unwrap();
        assert!((h.as_mat()[(0, 0)].re - cl.energies[0]).abs() < 1e-14);
    }

    #[test]
    fn reduced_at_origin_reproduces_cluster() {
        let tol = Tolerances::default();
        let f = three_level();
        let cl = select_cluster(&f, 0.0, &[0], &tol).unwrap();
        let s = rs_nondegenerate(&f, &cl, 2).unwrap();
        let space = space_from_derivatives(&[&s], 1, &tol).unwrap();
        let red = solve_reduced(&f, &space, 0.0, &cl, None, &tol).unwrap();
        assert!((red.lambda.as_mat() - cl.gamma.as_mat()).norm() < 1e-10);
        let r = red.r_full(0);
        assert!((&r * red.lambda.as_mat()).norm() + (&r * space.p.complement().as_mat()).norm() < 1e-11);
    }

    #[test]
    fn pollution_is_detected() {
        let tol = Tolerances::default();
        let f = three_level();
        let cl = select_cluster(&f, 0.0, &[0], &tol).unwrap();
        let space = space_from_excited_states(&f, 1, &tol).unwrap();
        let cl2 = select_cluster(&f, 0.0, &[2], &tol).unwrap();
        assert!(solve_reduced(&f, &space, 0.0, &cl, None, &tol).is_ok());
        assert!(matches!(solve_reduced(&f, &space, 0.0, &cl2, None, &tol), Err(Error::SpectralPollution(0))));
    }

    #[test]
    fn sweep_on_full_space_is_exact() {
        let tol = Tolerances::default();
        let f = sigma_x_family();
        let cl = select_cluster(&f, 0.0, &[0], &tol).unwrap();
        let s = rs_nondegenerate(&f, &cl, 2).unwrap();
        let space = space_from_derivatives(&[&s], 1, &tol).unwrap();
        let pts = sweep(&f, &space, &[0.0, 0.1, 0.3], &cl, &tol).unwrap();
        for p in &pts {
            let m = mode_error(&f, p, 0);
            assert!(m.err_vec_l2 < 1e-12 && m.err_eig < 1e-14);
            let exact = 0.5 - (0.25 + p.exact.lam * p.exact.lam).sqrt();
            assert!((m.e_exact - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn sweep_grid_with_only_origin() {
        let tol = Tolerances::default();
        let f = three_level();
        let cl = select_cluster(&f, 0.0, &[0], &tol).unwrap();
        let space = space_from_excited_states(&f, 1, &tol).unwrap();
        let pts = sweep(&f, &space, &[0.0], &cl, &tol).unwrap();
        let m = mode_error(&f, &pts[0], 0);
        assert_eq!(m.err_vec_l2, 0.0);
    }
}
