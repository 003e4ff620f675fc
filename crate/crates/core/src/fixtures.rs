//! Seeded random families and certification instances.
//!
//! Used by the test suites and by `certify --random`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::certify::Instance;
use crate::error::Result;
use crate::family::{assemble, OperatorFamily};
use crate::linalg::{c, density_matrix, orthonormalize, spectral_decompose, CMat, CVec, HermitianMatrix, C64};

pub fn random_complex(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CMat {
    DMatrix::from_fn(n, m, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> HermitianMatrix {
    let m = random_complex(rng, n, n);
    HermitianMatrix::new((&m + m.adjoint()) * c(0.5 * scale)).expect("finite matrix")
}

pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    random_complex(rng, n, n).qr().q()
}

/// `U diag(eigs) U*` for a random unitary `U`.
pub fn hermitian_with_spectrum(rng: &mut ChaCha8Rng, eigs: &[f64]) -> HermitianMatrix {
    let u = random_unitary(rng, eigs.len());
    let d = CMat::from_diagonal(&CVec::from_iterator(eigs.len(), eigs.iter().map(|&x| c(x))));
    HermitianMatrix::new(&u * d * u.adjoint()).expect("finite matrix")
}

/// Positive definite `A` with spectrum in `[1, 1 + spread]`.
pub fn random_energy(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> HermitianMatrix {
    let eigs: Vec<f64> = (0..n).map(|_| 1.0 + spread * rng.gen::<f64>()).collect();
    hermitian_with_spectrum(rng, &eigs)
}

/// `M + 1` terms: `H⁰` with eigenvalues near `0, 1, …, n−1` (equal at the
/// positions in `degenerate`) and random perturbations of size `pert`.
pub fn random_family(rng: &mut ChaCha8Rng, n: usize, m: usize, pert: f64, degenerate: &[usize]) -> OperatorFamily {
    let mut eigs: Vec<f64> = (0..n).map(|k| k as f64 + 0.3 * rng.gen::<f64>()).collect();
    for &k in degenerate {
        eigs[k] = eigs[degenerate[0]];
    }
    let mut terms = vec![hermitian_with_spectrum(rng, &eigs)];
    for _ in 0..m {
        terms.push(random_hermitian(rng, n, pert));
    }
    let a = random_energy(rng, n, 2.0);
    OperatorFamily::new(a, terms).expect("random family is well formed")
}

/// A family evaluated at a random `lam`, an exact cluster of `nu`
/// consecutive eigenpairs, a reduced space of dimension `d` holding the
/// cluster up to noise of size `eps`, and the `nu` reduced eigenpairs with
/// the largest weight on the exact cluster.
pub struct RandomInstance {
    pub family: OperatorFamily,
    pub lam: f64,
    pub instance: Instance,
    pub eps: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, nu: usize, d: usize, eps: f64) -> Result<RandomInstance> {
    let family = random_family(rng, n, 2, 0.5, &[]);
    let lam = rng.gen_range(0.05..0.3);
    let h = assemble(&family, lam);
    let dec = spectral_decompose(&h)?;
    let start = rng.gen_range(0..=(n - nu).min(2));
    let idx: Vec<usize> = (start..start + nu).collect();
    let phi: Vec<CVec> = idx.iter().map(|&j| dec.vector(j)).collect();
    let e: Vec<f64> = idx.iter().map(|&j| dec.eigenvalues[j]).collect();
    let mut span: Vec<CVec> = phi.iter().map(|v| v + random_complex(rng, n, 1).column(0) * c(eps)).collect();
    for _ in nu..d {
        span.push(random_complex(rng, n, 1).column(0).into_owned());
    }
    let (basis, _) = orthonormalize(&span, 1e-10);
    let p = density_matrix(&basis, n)?;
    let b = CMat::from_columns(&basis);
    let red = spectral_decompose(&HermitianMatrix::new(b.adjoint() * h.as_mat() * &b)?)?;
    let gamma = density_matrix(&phi, n)?;
    let mut order: Vec<(usize, f64)> =
        (0..red.dim()).map(|j| (j, (gamma.as_mat() * (&b * red.vector(j))).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut chosen: Vec<usize> = order[..nu].iter().map(|x| x.0).collect();
    chosen.sort_unstable();
    let psi: Vec<CVec> = chosen.iter().map(|&j| &b * red.vector(j)).collect();
    let ee: Vec<f64> = chosen.iter().map(|&j| red.eigenvalues[j]).collect();
    let instance = Instance::from_parts(&h, family.energy(), &p, e, phi, ee, psi)?;
    Ok(RandomInstance { family, lam, instance, eps })
}
