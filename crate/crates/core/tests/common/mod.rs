#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectral_rbm::family::{assemble, OperatorFamily};
use spectral_rbm::linalg::{c, spectral_decompose, CMat, CVec};
use spectral_rbm::perturbation::RSSeries;

#[allow(unused_imports)]
pub use spectral_rbm::fixtures::{
    hermitian_with_spectrum, random_complex, random_energy, random_family, random_hermitian, random_unitary,
    RandomInstance,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eigenpair of `H(λ)` with maximal overlap with `reference`.
pub fn closest_pair(family: &OperatorFamily, lam: f64, reference: &CVec) -> (f64, CVec) {
    let dec = spectral_decompose(&assemble(family, lam)).unwrap();
    let (best, _) = (0..dec.dim())
        .map(|j| (j, reference.dotc(&dec.vector(j)).norm()))
        .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    (dec.eigenvalues[best], dec.vector(best))
}

/// Follows the branch through `phi0` at λ = 0 to each of `lams` by overlap
/// continuation with steps of at most `2.5e-3`, returning eigenpairs gauged
/// so that `⟨phi0, v⟩ > 0`.
pub fn track_branch(family: &OperatorFamily, phi0: &CVec, lams: &[f64]) -> Vec<(f64, CVec)> {
    let e0 = phi0.dotc(&(assemble(family, 0.0).as_mat() * phi0)).re;
    let mut out: Vec<Option<(f64, CVec)>> = vec![None; lams.len()];
    for sign in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..lams.len()).filter(|&i| lams[i] * sign > 0.0).collect();
        idx.sort_by(|&a, &b| (lams[a] * sign).partial_cmp(&(lams[b] * sign)).unwrap());
        let mut cur = 0.0f64;
        let mut reference = phi0.clone();
        for i in idx {
            let target = lams[i];
            while (target - cur).abs() > 1e-15 {
                let step = (target - cur).clamp(-2.5e-3, 2.5e-3);
                cur = if (target - cur - step).abs() < 1e-15 { target } else { cur + step };
                reference = closest_pair(family, cur, &reference).1;
            }
            let (e, _) = closest_pair(family, target, &reference);
            out[i] = Some((e, reference.clone()));
        }
    }
    lams.iter()
        .zip(out)
        .map(|(&l, o)| {
            let (e, v) = if l == 0.0 { (e0, phi0.clone()) } else { o.unwrap() };
            let ov = phi0.dotc(&v);
            (e, v * (ov.conj() / ov.norm()))
        })
        .collect()
}

/// Half-width of the central stencil.
const STENCIL_HALF: i32 = 4;

/// Weights `w_j`, `|j| ≤ STENCIL_HALF`, with `Σ_j w_j j^k = δ_{kn}` for
/// `k ≤ 2·STENCIL_HALF`: `Σ_j w_j f(jh) / hⁿ` is the `n`-th Taylor
/// coefficient of `f` up to terms `h^{k−n}` with `k > 2·STENCIL_HALF`,
/// `k ≡ n (mod 2)`.
fn stencil(n: usize) -> Vec<f64> {
    let m = (2 * STENCIL_HALF + 1) as usize;
    let v = DMatrix::from_fn(m, m, |k, j| ((j as i32 - STENCIL_HALF) as f64).powi(k as i32));
    let mut rhs = nalgebra::DVector::zeros(m);
    rhs[n] = 1.0;
    v.lu().solve(&rhs).unwrap().iter().copied().collect()
}

/// Leading error exponent of [`stencil`]`(n)`.
fn stencil_order(n: usize) -> i32 {
    let mut k = 2 * STENCIL_HALF + 1;
    if (k - n as i32) % 2 != 0 {
        k += 1;
    }
    k - n as i32
}

/// Richardson ladder `h = 1e-2 · 2^{-k}`. It starts at `k = -2`: at
/// `h ≲ 1e-2` the fourth coefficient is dominated by roundoff `ε/h⁴`.
pub const FD_LEVELS: std::ops::RangeInclusive<i32> = -2..=3;

/// Grid points for [`fd_coefficients`], grouped by ladder level.
pub fn fd_grid() -> Vec<f64> {
    FD_LEVELS
        .flat_map(|k| {
            let h = 1e-2 * 0.5f64.powi(k);
            (-STENCIL_HALF..=STENCIL_HALF).map(move |j| j as f64 * h)
        })
        .collect()
}

/// Taylor coefficients `0..=nmax` at `λ = 0` from values on [`fd_grid`],
/// by central differences with Richardson extrapolation. `scale` bounds
/// the magnitude of the sampled values and sets the roundoff floor.
pub fn fd_coefficients(values: &[CVec], nmax: usize, scale: f64) -> Vec<CVec> {
    let width = (2 * STENCIL_HALF + 1) as usize;
    let steps: Vec<f64> = FD_LEVELS.map(|k| 1e-2 * 0.5f64.powi(k)).collect();
    let levels: Vec<&[CVec]> = values.chunks(width).collect();
    let mut out = vec![levels[0][STENCIL_HALF as usize].clone()];
    for n in 1..=nmax {
        let w = stencil(n);
        let raw: Vec<CVec> = steps
            .iter()
            .zip(&levels)
            .map(|(&h, level)| {
                let mut acc = CVec::zeros(level[0].len());
                for (wj, s) in w.iter().zip(level.iter()) {
                    acc += s * c(*wj);
                }
                acc / c(h.powi(n as i32))
            })
            .collect();
        let wsum: f64 = w.iter().map(|x| x.abs()).sum();
        let noise: Vec<f64> = steps.iter().map(|&h| 1e-15 * scale * wsum / h.powi(n as i32)).collect();
        out.push(richardson(&raw, &noise, stencil_order(n)));
    }
    out
}

/// Taylor coefficients of the eigenpair branch through `phi0`.
pub fn fd_taylor(family: &OperatorFamily, phi0: &CVec, nmax: usize) -> (Vec<f64>, Vec<CVec>) {
    let pairs = track_branch(family, phi0, &fd_grid());
    let scale = 1.0 + pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let es: Vec<CVec> = pairs.iter().map(|p| CVec::from_element(1, c(p.0))).collect();
    let vs: Vec<CVec> = pairs.into_iter().map(|p| p.1).collect();
    let e = fd_coefficients(&es, nmax, scale).iter().map(|x| x[0].re).collect();
    (e, fd_coefficients(&vs, nmax, 1.0))
}

/// Spectral projector of the `rank` eigenvectors of `H(λ)` that best overlap
/// `prev`.
fn continued_projector(family: &OperatorFamily, lam: f64, prev: &CMat, rank: usize) -> CMat {
    let dec = spectral_decompose(&assemble(family, lam)).unwrap();
    let mut weights: Vec<(usize, f64)> = (0..dec.dim())
        .map(|j| {
            let v = dec.vector(j);
            (j, v.dotc(&(prev * &v)).re)
        })
        .collect();
    weights.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut p = CMat::zeros(dec.dim(), dec.dim());
    for &(j, _) in weights.iter().take(rank) {
        let v = dec.vector(j);
        p += &v * v.adjoint();
    }
    p
}

/// Taylor coefficients of the spectral projector continuing `gamma0`.
pub fn fd_projector_taylor(family: &OperatorFamily, gamma0: &CMat, nmax: usize) -> Vec<CMat> {
    let rank = gamma0.trace().re.round() as usize;
    let n = family.dim();
    let grid = fd_grid();
    let mut vals: Vec<Option<CVec>> = vec![None; grid.len()];
    for sign in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] * sign > 0.0).collect();
        idx.sort_by(|&a, &b| (grid[a] * sign).partial_cmp(&(grid[b] * sign)).unwrap());
        let mut cur = 0.0f64;
        let mut p = gamma0.clone();
        for i in idx {
            while (grid[i] - cur).abs() > 1e-15 {
                let step = (grid[i] - cur).clamp(-2.5e-3, 2.5e-3);
                cur = if (grid[i] - cur - step).abs() < 1e-15 { grid[i] } else { cur + step };
                p = continued_projector(family, cur, &p, rank);
            }
            vals[i] = Some(CVec::from_column_slice(p.as_slice()));
        }
    }
    let vals: Vec<CVec> = vals
        .into_iter()
        .map(|v| v.unwrap_or_else(|| CVec::from_column_slice(gamma0.as_slice())))
        .collect();
    fd_coefficients(&vals, nmax, 1.0)
        .into_iter()
        .map(|v| CMat::from_column_slice(n, n, v.as_slice()))
        .collect()
}

/// `|a − b| ≤ tol · max(|a|, |b|, floor)`.
pub fn close_rel(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

/// Ridders' tableau: row `i` extrapolates levels `0..=i`; the search stops
/// once the diagonal moves by more than twice the best error estimate.
/// Levels share sample points, so their roundoff is correlated and invisible
/// to the successive-change estimate; `noise[i]` floors it.
fn richardson(raw: &[CVec], noise: &[f64], p0: i32) -> CVec {
    let mut rows: Vec<Vec<CVec>> = Vec::new();
    let mut best = raw[0].clone();
    let mut best_err = f64::INFINITY;
    for (i, r) in raw.iter().enumerate() {
        let mut row = vec![r.clone()];
        for j in 1..=i {
            let f = 2f64.powi(p0 + 2 * (j as i32 - 1));
            let t = (&row[j - 1] * c(f) - &rows[i - 1][j - 1]) / c(f - 1.0);
            let err = (&t - &row[j - 1]).norm().max((&t - &rows[i - 1][j - 1]).norm()).max(noise[i]);
            if err <= best_err {
                best_err = err;
                best = t.clone();
            }
            row.push(t);
        }
        if i > 0 && (&row[i] - &rows[i - 1][i - 1]).norm() >= 2.0 * best_err {
            break;
        }
        rows.push(row);
    }
    best
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, nu: usize, d: usize, eps: f64) -> RandomInstance {
    spectral_rbm::fixtures::random_instance(rng, n, nu, d, eps).unwrap()
}

/// Worst relative deviation of `Eⁿ` and `φⁿ`, `1 ≤ n ≤ nmax`, from reference
/// coefficients `e`, `v` (floor `1e-3`).
pub fn worst_rel(s: &RSSeries, e: &[f64], v: &[CVec], nmax: usize) -> (f64, f64) {
    let mut we = 0.0f64;
    let mut wv = 0.0f64;
    for n in 1..=nmax {
        we = we.max((e[n] - s.e[n]).abs() / s.e[n].abs().max(e[n].abs()).max(1e-3));
        wv = wv.max((&v[n] - &s.phi[n]).norm() / s.phi[n].norm().max(v[n].norm()).max(1e-3));
    }
    (we, wv)
}
