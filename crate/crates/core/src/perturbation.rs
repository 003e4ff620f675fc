//! Rayleigh-Schrödinger series (simple and first-order-lifted degenerate
//! modes), density-matrix perturbation coefficients, and the Cauchy-square
//! majorant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{EigenCluster, OperatorFamily, Tolerances};
use crate::linalg::{
    c, hs_norm, outer, spectral_decompose, CMat, CVec, HermitianMatrix, VectorJson,
};

/// `2ζ(3/2)`.
pub const TWO_ZETA_THREE_HALVES: f64 = 5.224_750_697_370_977;

/// Taylor coefficients of one eigenpair branch.
#[derive(Clone, Debug)]
pub struct RSSeries {
    pub order: usize,
    /// `E⁰ … E^ℓ`.
    pub e: Vec<f64>,
    /// Intermediate normalization `Φ⁰ … Φ^ℓ`.
    pub big_phi: Vec<CVec>,
    /// Unit normalization `φ⁰ … φ^ℓ` (filled by [`intermediate_to_unit`]).
    pub phi: Vec<CVec>,
    /// Taylor coefficients of `‖Φ(λ)‖`.
    pub y: Vec<f64>,
    /// Taylor coefficients of `1/‖Φ(λ)‖`.
    pub x: Vec<f64>,
}

/// Series file form `{"order", "E", "Phi", "phi"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesJson {
    pub order: usize,
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    #[serde(rename = "Phi")]
    pub big_phi: Vec<VectorJson>,
    pub phi: Vec<VectorJson>,
}

impl RSSeries {
    pub fn to_json(&self) -> SeriesJson {
        SeriesJson {
            order: self.order,
            e: self.e.clone(),
            big_phi: self.big_phi.iter().map(VectorJson::from_vec).collect(),
            phi: self.phi.iter().map(VectorJson::from_vec).collect(),
        }
    }

    /// `Σ_{n≤ℓ} λⁿ φⁿ`.
    pub fn partial_sum(&self, lam: f64, ell: usize) -> CVec {
        let mut acc = CVec::zeros(self.phi[0].len());
        for n in (0..=ell.min(self.order)).rev() {
            acc = acc * c(lam) + &self.phi[n];
        }
        acc
    }
}

fn require_origin(cluster: &EigenCluster) -> Result<()> {
    if cluster.lam != 0.0 {
        return Err(Error::InvalidInput(format!(
            "perturbation series expand around lambda = 0, cluster is at {}",
            cluster.lam
        )));
    }
    Ok(())
}

/// Series of a simple eigenvalue of `H⁰`.
///
/// With `K = (E⁰ − H⁰)⁻¹` on `{φ⁰}^⊥`, the recursion on operators
/// `Qⁿ = hⁿ + Σ_{s<n} h^{n−s} K Q^s` is carried out on its action on `Φ⁰`,
/// which is all that `Φⁿ = K Qⁿ Φ⁰` and `Eⁿ = ⟨Φ⁰, qⁿ Φ⁰⟩` need.
pub fn rs_nondegenerate(family: &OperatorFamily, mode: &EigenCluster, order: usize) -> Result<RSSeries> {
    require_origin(mode)?;
    if mode.nu() != 1 {
        return Err(Error::InvalidInput(format!("expected one mode, got {}", mode.nu())));
    }
    let k = mode.reduced_resolvent(0)?;
    let phi0 = mode.vectors[0].clone();
    let mut e = vec![mode.energies[0]];
    let mut big_phi = vec![phi0.clone()];
    for n in 1..=order {
        // qⁿΦ⁰ = HⁿΦ⁰ + Σ_{s=1}^{n−1} h^{n−s} Φ^s.
        let mut q = family.apply_term(n, &phi0);
        for s in 1..n {
            q += family.apply_term(n - s, &big_phi[s]) - &big_phi[s] * c(e[n - s]);
        }
        let en = phi0.dotc(&q).re;
        e.push(en);
        // K annihilates Φ⁰, so KQⁿΦ⁰ = KqⁿΦ⁰.
        big_phi.push(&k * q);
    }
    Ok(intermediate_to_unit(RSSeries {
        order,
        e,
        big_phi,
        phi: vec![],
        y: vec![],
        x: vec![],
    }))
}

/// Frame and partial inverses for a degenerate cluster lifted at first order.
#[derive(Clone, Debug)]
pub struct DegenerateContext {
    /// Cluster at λ = 0, its frame rotated to diagonalize `𝔥`.
    pub cluster: EigenCluster,
    /// `𝔥_{αβ} = ⟨φ_α, H¹ φ_β⟩` in the input frame.
    pub frak_h: CMat,
    /// Eigenvalues of `𝔥`, ascending; `cluster.vectors[α]` belongs to `eprime[α]`.
    pub eprime: Vec<f64>,
    pub mu: usize,
    /// `K⁰ = (E⁰ − H⁰)⁻¹` on `Γ(0)^⊥`.
    pub k0: HermitianMatrix,
    /// `K¹ = Σ_{α≠μ} (E′_μ − E′_α)⁻¹ P_{φ_α}`.
    pub k1: HermitianMatrix,
    /// `min_{α≠μ} |E′_μ − E′_α|`.
    pub kappa_h: f64,
}

/// Builds `𝔥`, rotates the cluster frame to its eigenbasis and forms `K⁰`, `K¹`.
pub fn first_order_matrix(
    cluster: &EigenCluster,
    h1: &HermitianMatrix,
    mu: usize,
    tol: &Tolerances,
) -> Result<DegenerateContext> {
    require_origin(cluster)?;
    let nu = cluster.nu();
    if mu >= nu {
        return Err(Error::InvalidInput(format!("mode {mu} outside cluster of size {nu}")));
    }
    let spread = cluster.energies.iter().fold(0.0f64, |m, &x| m.max((x - cluster.energies[0]).abs()));
    if spread > tol.degeneracy_rel * cluster.dec.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!("cluster is not degenerate (spread {spread:e})")));
    }
    let n = cluster.dim();
    let basis = crate::linalg::columns(&cluster.vectors, n);
    let frak_h = basis.adjoint() * h1.as_mat() * &basis;
    let dec = spectral_decompose(&HermitianMatrix::new(frak_h.clone())?)?;
    let eprime = dec.eigenvalues.clone();
    let kappa_h = (0..nu)
        .filter(|&a| a != mu)
        .map(|a| (eprime[mu] - eprime[a]).abs())
        .fold(f64::INFINITY, f64::min);
    let scale = h1.norm().max(cluster.dec.norm()).max(f64::MIN_POSITIVE);
    if nu > 1 && kappa_h <= tol.gap_rel * scale {
        return Err(Error::DegeneracyNotLifted(kappa_h));
    }
    let rotated = &basis * &dec.eigenvectors;
    let vectors: Vec<CVec> = (0..nu).map(|j| rotated.column(j).into_owned()).collect();
    let mut k1 = CMat::zeros(n, n);
    for a in (0..nu).filter(|&a| a != mu) {
        k1 += outer(&vectors[a], &vectors[a]) * c(1.0 / (eprime[mu] - eprime[a]));
    }
    let k0 = crate::linalg::partial_inverse(&cluster.dec, cluster.energies[mu], &cluster.gamma)?;
    let energies = cluster.energies.clone();
    Ok(DegenerateContext {
        cluster: cluster.clone().with_frame(energies, vectors),
        frak_h,
        eprime,
        mu,
        k0,
        k1: HermitianMatrix::new(k1)?,
        kappa_h,
    })
}

/// Series of mode `ctx.mu` of a degenerate cluster.
///
/// Write `Φⁿ = xₙ + yₙ` with `xₙ ∈ Ran Γ(0)^⊥` and `yₙ` in the cluster,
/// orthogonal to `φ_μ`, and `hʲ = Hʲ − Eʲ`. The eigen-equation at order `n`
/// projected off the cluster gives `xₙ = K⁰ Σ_{k<n} h^{n−k} Φ^k`; at order
/// `n+1` projected on the cluster it gives
/// `E^{n+1} = ⟨φ_μ, H¹xₙ + Σ_{k<n} H^{n+1−k} Φ^k⟩` and
/// `yₙ = K¹ (H¹xₙ + Σ_{k<n} h^{n+1−k} Φ^k)`.
/// So `Φⁿ` needs `E^{n+1}` and the energies run one order past `order`.
pub fn rs_degenerate(family: &OperatorFamily, ctx: &DegenerateContext, order: usize) -> Result<RSSeries> {
    let mu = ctx.mu;
    let phi0 = ctx.cluster.vectors[mu].clone();
    let k0 = ctx.k0.as_mat();
    let k1 = ctx.k1.as_mat();
    let mut e = vec![ctx.cluster.energies[mu], ctx.eprime[mu]];
    let mut big_phi = vec![phi0.clone()];
    let h_apply = |j: usize, v: &CVec, e: &[f64]| family.apply_term(j, v) - v * c(e[j]);
    for n in 1..=order {
        let mut r = CVec::zeros(phi0.len());
        for (k, pk) in big_phi.iter().enumerate() {
            r += h_apply(n - k, pk, &e);
        }
        let xn = k0 * r;
        let mut t = family.apply_term(1, &xn);
        let mut en1 = phi0.dotc(&t).re;
        for (k, pk) in big_phi.iter().enumerate() {
            let hp = family.apply_term(n + 1 - k, pk);
            en1 += phi0.dotc(&hp).re;
            t += hp;
            if k > 0 {
                t -= pk * c(e[n + 1 - k]);
            }
        }
        // K¹ annihilates φ_μ, so the k = 0 energy shift E^{n+1}φ_μ drops out.
        e.push(en1);
        big_phi.push(xn + k1 * t);
    }
    e.truncate(order + 1);
    Ok(intermediate_to_unit(RSSeries { order, e, big_phi, phi: vec![], y: vec![], x: vec![] }))
}

/// Converts `Φⁿ` to the unit-normalized `φⁿ` (phase `⟨φ⁰, φ(λ)⟩ > 0`).
pub fn intermediate_to_unit(mut s: RSSeries) -> RSSeries {
    let l = s.order;
    let mut y = vec![0.0; l + 1];
    let mut x = vec![0.0; l + 1];
    y[0] = 1.0;
    x[0] = 1.0;
    for n in 2..=l {
        let mut acc = 0.0;
        for k in 1..n {
            acc += s.big_phi[n - k].dotc(&s.big_phi[k]).re - y[n - k] * y[k];
        }
        y[n] = 0.5 * acc;
        x[n] = -(0..=n - 2).map(|k| x[k] * y[n - k]).sum::<f64>();
    }
    let mut phi = Vec::with_capacity(l + 1);
    for n in 0..=l {
        let mut v = s.big_phi[n].clone();
        if n >= 2 {
            for k in 0..=n - 2 {
                v += &s.big_phi[k] * c(x[n - k]);
            }
        }
        phi.push(v);
    }
    s.y = y;
    s.x = x;
    s.phi = phi;
    s
}

/// Upper bound `α (2ζ(3/2) αβ)^{n−1} n^{−3/2}` on the Cauchy-square sequence.
pub fn cauchy_square_bound(alpha: f64, beta: f64, n: usize) -> f64 {
    cauchy_square_log_bound(alpha, beta, n).exp()
}

/// Natural logarithm of [`cauchy_square_bound`].
pub fn cauchy_square_log_bound(alpha: f64, beta: f64, n: usize) -> f64 {
    let n_f = n as f64;
    alpha.ln() + (n_f - 1.0) * (TWO_ZETA_THREE_HALVES * alpha * beta).ln() - 1.5 * n_f.ln()
}

/// `x₁ = α`, `xₙ = β Σ_{s=1}^{n−1} x_{n−s} x_s`; entry `i` holds `x_{i+1}`.
pub fn cauchy_square_sequence(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = Vec::with_capacity(n);
    for m in 1..=n {
        if m == 1 {
            x.push(alpha);
        } else {
            let s: f64 = (1..m).map(|s| x[m - s - 1] * x[s - 1]).sum();
            x.push(beta * s);
        }
    }
    x
}

/// The same recursion carried in logarithms (log-sum-exp convolution), for
/// parameters where `xₙ` overflows.
pub fn cauchy_square_log_sequence(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    let mut lx: Vec<f64> = Vec::with_capacity(n);
    for m in 1..=n {
        if m == 1 {
            lx.push(alpha.ln());
        } else {
            let terms: Vec<f64> = (1..m).map(|s| lx[m - s - 1] + lx[s - 1]).collect();
            let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
            lx.push(beta.ln() + mx + sum.ln());
        }
    }
    lx
}

/// Coefficients `Γⁿ` of the spectral projector with their block parts.
#[derive(Clone, Debug)]
pub struct DMSeries {
    pub order: usize,
    pub gamma: Vec<CMat>,
    /// `Γ⁰ Γⁿ Γ⁰`.
    pub a: Vec<CMat>,
    /// `(Γ⁰)^⊥ Γⁿ Γ⁰`.
    pub b: Vec<CMat>,
    /// `(Γ⁰)^⊥ Γⁿ (Γ⁰)^⊥`.
    pub c: Vec<CMat>,
    /// Right-hand sides of the off-diagonal equations.
    pub bsmall: Vec<CMat>,
}

/// McWeeny-type recursion for `Γⁿ`; degeneracy inside the cluster is allowed.
pub fn dm_coefficients(family: &OperatorFamily, cluster: &EigenCluster, order: usize) -> Result<DMSeries> {
    require_origin(cluster)?;
    let n_dim = family.dim();
    let g0 = cluster.gamma.as_mat().clone();
    let g0_perp = CMat::identity(n_dim, n_dim) - &g0;
    let ks: Vec<CMat> = (0..cluster.nu()).map(|m| cluster.reduced_resolvent(m)).collect::<Result<_>>()?;
    let ps: Vec<CMat> = cluster.vectors.iter().map(|v| outer(v, v)).collect();
    let zero = CMat::zeros(n_dim, n_dim);
    let mut a = vec![g0.clone()];
    let mut b = vec![zero.clone()];
    let mut cc = vec![zero.clone()];
    let mut bsmall = vec![zero.clone()];
    let mut gamma = vec![g0.clone()];
    for n in 1..=order {
        let mut an = zero.clone();
        let mut cn = zero.clone();
        for k in 1..n {
            an -= &a[n - k] * &a[k] + b[n - k].adjoint() * &b[k];
            cn += &cc[n - k] * &cc[k] + &b[n - k] * b[k].adjoint();
        }
        let mut inner = zero.clone();
        for k in 0..n {
            let hk = family.term(n - k);
            inner += &hk * (&a[k] + &b[k]) - (&b[k] + &cc[k]) * &hk;
        }
        let bn_small = &g0_perp * inner * &g0;
        let mut bn = zero.clone();
        for (k, p) in ks.iter().zip(&ps) {
            bn += k * &bn_small * p;
        }
        gamma.push(&an + &bn + bn.adjoint() + &cn);
        a.push(an);
        b.push(bn);
        cc.push(cn);
        bsmall.push(bn_small);
    }
    Ok(DMSeries { order, gamma, a, b, c: cc, bsmall })
}

/// `𝓛⁺F = −Σ_μ K_μ F P_{φ_μ}`, a partial inverse of `F ↦ [H⁰, F]`.
pub fn liouvillian_pinv_apply(cluster: &EigenCluster, f: &CMat) -> Result<CMat> {
    require_origin(cluster)?;
    let mut out = CMat::zeros(f.nrows(), f.ncols());
    for (m, v) in cluster.vectors.iter().enumerate() {
        let k = cluster.reduced_resolvent(m)?;
        out -= k * f * outer(v, v);
    }
    Ok(out)
}

/// Geometric envelope `a bⁿ` of coefficient magnitudes.
///
/// `b` comes from a least-squares fit of `ln cₙ` against `n` over the
/// nonzero coefficients; `a` is then inflated so that `a bⁿ ≥ cₙ` for
/// every `n`. An all-zero tail gives `b = 0` and `a = c₀`.
pub fn growth_fit(coeffs: &[f64]) -> (f64, f64) {
    let floor = 1e-300;
    let pts: Vec<(f64, f64)> = coeffs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &v)| v > floor)
        .map(|(n, &v)| (n as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        if pts.is_empty() {
            return (coeffs.first().copied().unwrap_or(0.0), 0.0);
        }
        // Single nonzero coefficient: pass through it and c₀.
        let (n, lv) = pts[0];
        let c0 = coeffs[0].max(floor);
        let b = ((lv - c0.ln()) / n).exp();
        return (inflate(coeffs, b), b);
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let b = slope.exp();
    (inflate(coeffs, b), b)
}

fn inflate(coeffs: &[f64], b: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(n, &v)| if v == 0.0 { 0.0 } else { v / b.powi(n as i32) })
        .fold(0.0, f64::max)
}

/// Envelope of `max(|Eⁿ|, ‖φⁿ‖_e, ‖Φⁿ‖_e)`.
pub fn series_growth_fit(family: &OperatorFamily, s: &RSSeries) -> (f64, f64) {
    let e = family.energy();
    let coeffs: Vec<f64> = (0..=s.order)
        .map(|n| s.e[n].abs().max(e.vec_norm(&s.phi[n], 1)).max(e.vec_norm(&s.big_phi[n], 1)))
        .collect();
    growth_fit(&coeffs)
}

/// Envelope of `‖A Γⁿ A‖₂`.
pub fn dm_growth_fit(family: &OperatorFamily, s: &DMSeries) -> (f64, f64) {
    let a = &family.energy().a;
    let coeffs: Vec<f64> = s.gamma.iter().map(|g| hs_norm(&(a * g * a))).collect();
    growth_fit(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::select_cluster;
    use nalgebra::DMatrix;

    fn sigma_x_family() -> OperatorFamily {
        OperatorFamily::with_identity_energy(vec![
            HermitianMatrix::from_diag(&[0.0, 1.0]),
            HermitianMatrix::from_real(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn two_level_series() {
        let f = sigma_x_family();
        let cl = select_cluster(&f, 0.0, &[0], &Tolerances::default()).unwrap();
        let s = rs_nondegenerate(&f, &cl, 6).unwrap();
        let want = [0.0, 0.0, -1.0, 0.0, 1.0, 0.0, -2.0];
        for (n, w) in want.iter().enumerate() {
            assert!((s.e[n] - w).abs() < 1e-13, "E^{n} = {}", s.e[n]);
        }
    }

    #[test]
    fn unperturbed_family_has_zero_tail() {
        let f = OperatorFamily::with_identity_energy(vec![
            HermitianMatrix::from_diag(&[0.0, 1.0, 3.0]),
            HermitianMatrix::zeros(3),
        ])
        .unwrap();
        let cl = select_cluster(&f, 0.0, &[1], &Tolerances::default()).unwrap();
        let s = rs_nondegenerate(&f, &cl, 4).unwrap();
        for n in 1..=4 {
            assert_eq!(s.e[n], 0.0);
            assert_eq!(s.big_phi[n].norm(), 0.0);
        }
        assert_eq!(series_growth_fit(&f, &s).1, 0.0);
    }

    #[test]
    fn unit_normalization_low_orders() {
        let f = sigma_x_family();
        let cl = select_cluster(&f, 0.0, &[0], &Tolerances::default()).unwrap();
        let s = rs_nondegenerate(&f, &cl, 4).unwrap();
        assert_eq!(s.phi[0], s.big_phi[0]);
        assert_eq!(s.phi[1], s.big_phi[1]);
        let want = &s.big_phi[2] - &s.phi[0] * c(0.5 * s.phi[1].norm_squared());
        assert!((&s.phi[2] - want).norm() < 1e-14);
    }

    #[test]
    fn first_order_matrix_examples() {
        let tol = Tolerances::default();
        let h0 = HermitianMatrix::from_diag(&[0.0, 0.0, 4.0]);
        let f = OperatorFamily::with_identity_energy(vec![h0.clone()]).unwrap();
        let cl = select_cluster(&f, 0.0, &[0, 1], &tol).unwrap();
        let err = first_order_matrix(&cl, &HermitianMatrix::zeros(3), 0, &tol).unwrap_err();
        assert!(matches!(err, Error::DegeneracyNotLifted(_)));
        let ctx = first_order_matrix(&cl, &HermitianMatrix::from_diag(&[1.0, 3.0, 0.0]), 0, &tol).unwrap();
        let p1 = outer(&ctx.cluster.vectors[1], &ctx.cluster.vectors[1]);
        assert!((ctx.k1.as_mat() - p1 * c(-0.5)).norm() < 1e-14);
        let x = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let ctx = first_order_matrix(&cl, &HermitianMatrix::from_real(x).unwrap(), 0, &tol).unwrap();
        assert!((ctx.eprime[0] + 1.0).abs() < 1e-14 && (ctx.eprime[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cauchy_examples() {
        assert_eq!(cauchy_square_bound(0.7, 3.0, 1), 0.7);
        assert!((TWO_ZETA_THREE_HALVES - 5.2248).abs() < 1e-4);
        assert!((cauchy_square_bound(1.0, 1.0, 2) - 1.8473).abs() < 1e-4);
        let x = cauchy_square_sequence(2.0, 3.0, 2);
        assert_eq!(x[1], 3.0 * 4.0);
        assert_eq!(cauchy_square_sequence(1.0, 1.0, 6), vec![1.0, 1.0, 2.0, 5.0, 14.0, 42.0]);
    }

    #[test]
    fn zeta_constant_matches_direct_summation() {
        // Partial sum plus Euler-Maclaurin tail ∫ + f/2 − f'/12.
        let m = 100_000u64;
        let s: f64 = (1..m).map(|k| (k as f64).powf(-1.5)).sum();
        let mf = m as f64;
        let tail = 2.0 / mf.sqrt() + 0.5 * mf.powf(-1.5) + 1.5 / 12.0 * mf.powf(-2.5);
        assert!((2.0 * (s + tail) - TWO_ZETA_THREE_HALVES).abs() < 1e-12);
    }

    #[test]
    fn dm_first_order_blocks() {
        let f = sigma_x_family();
        let cl = select_cluster(&f, 0.0, &[0], &Tolerances::default()).unwrap();
        let dm = dm_coefficients(&f, &cl, 3).unwrap();
        assert_eq!(dm.a[1].norm(), 0.0);
        assert_eq!(dm.c[1].norm(), 0.0);
        assert!((&dm.gamma[1] - (&dm.b[1] + dm.b[1].adjoint())).norm() < 1e-15);
    }

    #[test]
    fn growth_fit_envelope_dominates() {
        let coeffs = [1.0, 0.5, 3.0, 2.0, 9.0, 0.0, 40.0];
        let (a, b) = growth_fit(&coeffs);
        for (n, &v) in coeffs.iter().enumerate() {
            assert!(a * b.powi(n as i32) >= v * (1.0 - 1e-14));
        }
    }
}
