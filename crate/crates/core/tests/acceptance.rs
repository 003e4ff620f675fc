//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that every criterion is evaluated and
//! reported even when an earlier one fails. The process exits non-zero if
//! any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{fd_projector_taylor, fd_taylor, random_family, random_instance, rng, worst_rel};
use nalgebra::DMatrix;
use rand::Rng;
use spectral_rbm::certify::{certify, BoundStatus, Instance};
use spectral_rbm::family::{select_cluster, OperatorFamily, Tolerances};
use spectral_rbm::linalg::{
    basis_vector, density_matrix, spectral_decompose, CMat, EnergyOperator, HermitianMatrix,
};
use spectral_rbm::perturbation::{
    cauchy_square_log_bound, cauchy_square_log_sequence, dm_coefficients, first_order_matrix, rs_degenerate,
    rs_nondegenerate,
};
use spectral_rbm::reduced::{space_from_derivatives, sweep};
use spectral_rbm::schrodinger::{
    experiment_ell_sweep, experiment_es_comparison, experiment_xi_growth, ExperimentConfig, Lab,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Identities certified on random instances.
const IDENTITY_NAMES: [&str; 3] = ["equality_diff", "equality_E_diff", "explicit_diff"];

/// Bounds that must hold wherever they apply.
const BOUND_NAMES: [&str; 9] = [
    "bound_Omega",
    "ineq_cons",
    "proof_E_cE_bounded",
    "diff_errs_abs",
    "error_dm_vecs_lower",
    "error_dm_vecs_upper",
    "error_dm_vecs_energy",
    "control_energies",
    "total_PerrP_2",
];

fn log_uniform(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(r.gen_range(lo..hi))
}

/// `(family, λ, instance)` with dimension ≤ 20, ν ≤ 3, d ≤ 8.
fn seeded_instances(seed: u64, count: usize) -> Vec<(OperatorFamily, f64, Instance)> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.gen_range(8..=20);
            let nu = r.gen_range(1..=3);
            let d = r.gen_range(nu + 1..=8);
            let eps = log_uniform(&mut r, -4.0, -0.5);
            let ri = random_instance(&mut r, n, nu, d, eps);
            (ri.family, ri.lam, ri.instance)
        })
        .collect()
}

fn identity_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut checked = 0;
    let instances = seeded_instances(1, 120);
    for (k, (family, lam, inst)) in instances.iter().enumerate() {
        let report = certify(family, *lam, inst, &[0, 1]).unwrap();
        for id in report.identities.iter().filter(|i| IDENTITY_NAMES.contains(&i.name.as_str())) {
            checked += 1;
            worst = worst.max(id.residual / id.lhs_norm.max(1.0));
            if !id.pass {
                failures.push(format!("{}#{k}", id.name));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && worst <= 1e-10 && elapsed <= Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} instances, {checked} residuals, worst relative {worst:.2e} (tol 1e-10), {:.1} s (limit 30 s){}",
            instances.len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!(", failing {failures:?}") }
        ),
    )
}

/// Lowest mode of `H = [[0,0,ε],[0,1,3],[ε,3,12]]` against `𝒫 = span{e₁,e₂}`.
fn coupled_three_level(eps: f64) -> (OperatorFamily, f64, Instance) {
    let h = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, eps, 0.0, 1.0, 3.0, eps, 3.0, 12.0]);
    let h = HermitianMatrix::from_real(h).unwrap();
    let family = OperatorFamily::with_identity_energy(vec![h.clone()]).unwrap();
    let a = EnergyOperator::new(&HermitianMatrix::identity(3)).unwrap();
    let dec = spectral_decompose(&h).unwrap();
    let span = [basis_vector(3, 0), basis_vector(3, 1)];
    let b = CMat::from_columns(&span);
    let red = spectral_decompose(&HermitianMatrix::new(b.adjoint() * h.as_mat() * &b).unwrap()).unwrap();
    let p = density_matrix(&span, 3).unwrap();
    let inst = Instance::from_parts(
        &h,
        &a,
        &p,
        vec![dec.eigenvalues[0]],
        vec![dec.vector(0)],
        vec![red.eigenvalues[0]],
        vec![&b * red.vector(0)],
    )
    .unwrap();
    (family, 0.0, inst)
}

/// Instances along derivative-space sweeps, so the reduced modes come from
/// the reduced eigensolver rather than from perturbed exact vectors.
fn sweep_instances(seed: u64) -> Vec<(OperatorFamily, f64, Instance)> {
    let mut r = rng(seed);
    let tol = Tolerances::default();
    let mut out = Vec::new();
    for trial in 0..6 {
        let family = random_family(&mut r, 10, 2, 0.5, &[]);
        let mode = select_cluster(&family, 0.0, &[trial % 3], &tol).unwrap();
        let s = rs_nondegenerate(&family, &mode, 3).unwrap();
        let space = space_from_derivatives(&[&s], 1 + trial % 3, &tol).unwrap();
        let grid = [0.02, 0.05, 0.1, 0.2];
        for p in sweep(&family, &space, &grid, &mode, &tol).unwrap() {
            let inst = Instance::new(&family, &space, &p.exact, &p.reduced).unwrap();
            out.push((family.clone(), p.exact.lam, inst));
        }
    }
    out
}

fn bound_suite() -> Outcome {
    let mut instances = seeded_instances(2, 100);
    instances.extend(sweep_instances(3));
    instances.push(coupled_three_level(1e-2));
    // name (delta) -> [pass, fail, not applicable]
    let mut tally: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut unexplained = 0;
    for (family, lam, inst) in &instances {
        let report = certify(family, *lam, inst, &[0, 1]).unwrap();
        for b in report.bounds.iter().filter(|b| BOUND_NAMES.contains(&b.name.as_str())) {
            let key = match b.delta {
                Some(d) => format!("{}[{d}]", b.name),
                None => b.name.clone(),
            };
            let slot = tally.entry(key).or_default();
            match &b.status {
                BoundStatus::Pass => slot[0] += 1,
                BoundStatus::Fail => slot[1] += 1,
                BoundStatus::NotApplicable { reason } => {
                    slot[2] += 1;
                    if reason.trim().is_empty() {
                        unexplained += 1;
                    }
                }
            }
        }
    }
    let missing: Vec<&str> =
        BOUND_NAMES.iter().copied().filter(|n| !tally.keys().any(|k| k.split('[').next() == Some(*n))).collect();
    let failing: Vec<String> =
        tally.iter().filter(|(_, t)| t[1] > 0).map(|(k, t)| format!("{k} {}/{}", t[1], t[0] + t[1])).collect();
    let summary: Vec<String> = tally.iter().map(|(k, t)| format!("{k} {}/{}/{}", t[0], t[1], t[2])).collect();
    let pass = failing.is_empty() && missing.is_empty() && unexplained == 0;
    outcome(
        pass,
        format!(
            "{} instances; pass/fail/n-a: {}; failing: {}; unflagged n/a {unexplained}; never evaluated {missing:?}",
            instances.len(),
            summary.join(", "),
            if failing.is_empty() { "none".to_string() } else { failing.join(", ") },
        ),
    )
}

fn series_oracle() -> Outcome {
    let tol = Tolerances::default();
    let mut r = rng(31);
    let mut worst_simple = 0.0f64;
    for trial in 0..3 {
        let f = random_family(&mut r, 6, 2, 0.5, &[]);
        let mode = select_cluster(&f, 0.0, &[trial % 3], &tol).unwrap();
        let s = rs_nondegenerate(&f, &mode, 4).unwrap();
        let (e, v) = fd_taylor(&f, &s.phi[0], 4);
        let (we, wv) = worst_rel(&s, &e, &v, 4);
        worst_simple = worst_simple.max(we).max(wv);
    }
    let mut worst_deg = 0.0f64;
    for _ in 0..2 {
        let f = random_family(&mut r, 6, 2, 0.5, &[1, 2]);
        let cl = select_cluster(&f, 0.0, &[1, 2], &tol).unwrap();
        for mu in 0..2 {
            let ctx = first_order_matrix(&cl, &f.terms()[1], mu, &tol).unwrap();
            let s = rs_degenerate(&f, &ctx, 4).unwrap();
            let (e, v) = fd_taylor(&f, &s.phi[0], 4);
            let (we, wv) = worst_rel(&s, &e, &v, 4);
            worst_deg = worst_deg.max(we).max(wv);
        }
    }
    let mut worst_gamma = 0.0f64;
    let cases: [(&[usize], &[usize]); 3] = [(&[], &[0]), (&[0, 1], &[0, 1]), (&[], &[1, 2])];
    for (deg, targets) in cases {
        let f = random_family(&mut r, 6, 2, 0.5, deg);
        let cl = select_cluster(&f, 0.0, targets, &tol).unwrap();
        let dm = dm_coefficients(&f, &cl, 4).unwrap();
        let fd = fd_projector_taylor(&f, cl.gamma.as_mat(), 4);
        for n in 1..=4 {
            let rel = (&fd[n] - &dm.gamma[n]).norm() / dm.gamma[n].norm().max(fd[n].norm()).max(1e-3);
            worst_gamma = worst_gamma.max(rel);
        }
    }
    let worst = worst_simple.max(worst_deg).max(worst_gamma);
    outcome(
        worst <= 1e-5,
        format!(
            "n <= 4, worst relative: simple {worst_simple:.2e}, degenerate lifted {worst_deg:.2e}, \
             projector {worst_gamma:.2e} (tol 1e-5)"
        ),
    )
}

fn slope_law() -> Outcome {
    let start = Instant::now();
    let lab = Lab::new(&ExperimentConfig::default()).unwrap();
    let sweep = experiment_ell_sweep(&lab).unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed <= Duration::from_secs(120);
    let mut parts = Vec::new();
    for ell in 0..=2 {
        let fit = sweep.slopes.iter().find(|f| f.ell == ell).unwrap();
        let vec_ok = (fit.vec_rbm - (ell + 1) as f64).abs() <= 0.1;
        let eig_ok = (fit.eig_rbm - (2 * ell + 2) as f64).abs() <= 0.2;
        pass &= vec_ok && eig_ok;
        parts.push(format!(
            "ell {ell}: vec {:.3} (want {}), eig {:.3} (want {})",
            fit.vec_rbm,
            ell + 1,
            fit.eig_rbm,
            2 * ell + 2
        ));
    }
    outcome(pass, format!("{}; N = {}, {:.1} s (limit 120 s)", parts.join("; "), lab.disc.grid.n, elapsed.as_secs_f64()))
}

/// Family `{BᴴHⁿB}` of the reduced operators in the basis `b`.
fn compressed(family: &OperatorFamily, b: &CMat) -> OperatorFamily {
    let terms = family.terms().iter().map(|t| HermitianMatrix::new(b.adjoint() * t.as_mat() * b).unwrap()).collect();
    OperatorFamily::with_identity_energy(terms).unwrap()
}

fn series_matching() -> Outcome {
    let tol = Tolerances::default();
    let mut r = rng(5);
    let mut worst_vec = 0.0f64;
    let mut worst_eig = 0.0f64;
    let mut worst_dm = 0.0f64;
    let mut first_mismatch = f64::INFINITY;
    for trial in 0..4 {
        let family = random_family(&mut r, 10, 2, 0.5, &[]);
        let mode = select_cluster(&family, 0.0, &[trial % 3], &tol).unwrap();
        for ell in 0..=3 {
            let order = 2 * ell + 2;
            let s = rs_nondegenerate(&family, &mode, order).unwrap();
            let space = space_from_derivatives(&[&s], ell, &tol).unwrap();
            let b = space.basis_matrix();
            let red_family = compressed(&family, &b);
            let x0 = &b.adjoint() * &s.phi[0];
            let h0 = spectral_decompose(&red_family.terms()[0]).unwrap();
            let j = (0..h0.dim()).max_by(|&a, &c| h0.vector(a).dotc(&x0).norm().total_cmp(&h0.vector(c).dotc(&x0).norm())).unwrap();
            let cl = select_cluster(&red_family, 0.0, &[j], &tol).unwrap();
            let cl = cl.with_frame(vec![h0.eigenvalues[j]], vec![x0.normalize()]);
            let red = rs_nondegenerate(&red_family, &cl, order).unwrap();
            for n in 0..=ell {
                let lifted = &b * &red.phi[n];
                let rel = (&lifted - &s.phi[n]).norm() / s.phi[n].norm().max(lifted.norm()).max(1e-3);
                worst_vec = worst_vec.max(rel);
            }
            for k in 0..=2 * ell + 1 {
                let rel = (red.e[k] - s.e[k]).abs() / s.e[k].abs().max(red.e[k].abs()).max(1e-3);
                worst_eig = worst_eig.max(rel);
            }
            let k = 2 * ell + 2;
            first_mismatch = first_mismatch.min((red.e[k] - s.e[k]).abs() / s.e[k].abs().max(1e-3));
            // Second route: density-matrix series of both problems, with
            // energies from traces, E^k = Σ_j tr(H^j Γ^{k−j}).
            let dm_full = dm_coefficients(&family, &mode, order).unwrap();
            let dm_red = dm_coefficients(&red_family, &cl, order).unwrap();
            for n in 0..=ell {
                let lifted = &b * &dm_red.gamma[n] * b.adjoint();
                let rel = (&lifted - &dm_full.gamma[n]).norm() / dm_full.gamma[n].norm().max(1e-3);
                worst_dm = worst_dm.max(rel);
            }
            for k in 0..=2 * ell + 1 {
                let ek: f64 = (0..=k.min(red_family.max_order()))
                    .map(|j| (red_family.term(j) * &dm_red.gamma[k - j]).trace().re)
                    .sum();
                worst_dm = worst_dm.max((ek - s.e[k]).abs() / s.e[k].abs().max(ek.abs()).max(1e-3));
            }
        }
    }
    let worst = worst_vec.max(worst_eig).max(worst_dm);
    outcome(
        worst <= 1e-5,
        format!(
            "ell 0..3, worst relative: psi^n vs phi^n {worst_vec:.2e}, reduced E^k vs E^k {worst_eig:.2e}, \
             density-matrix route {worst_dm:.2e} (tol 1e-5); order 2ell+2 differs by >= {first_mismatch:.2e}"
        ),
    )
}

fn cauchy_square() -> Outcome {
    let mut r = rng(6);
    let nmax = 200;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_ratio = 0.0f64;
    for _ in 0..50 {
        let alpha = log_uniform(&mut r, -2.0, 2.0);
        let beta = log_uniform(&mut r, -2.0, 2.0);
        let lx = cauchy_square_log_sequence(alpha, beta, nmax);
        for n in 1..=nmax {
            let lb = cauchy_square_log_bound(alpha, beta, n);
            worst_excess = worst_excess.max((lx[n - 1] - lb) / lb.abs().max(1.0));
        }
        let n = nmax as f64;
        let asym = alpha.ln() - 0.5 * std::f64::consts::PI.ln() + (n - 1.0) * (4.0 * alpha * beta).ln() - 1.5 * n.ln();
        worst_ratio = worst_ratio.max(((lx[nmax - 1] - asym).exp() - 1.0).abs());
    }
    let pass = worst_excess <= 1e-12 && worst_ratio <= 0.05;
    outcome(
        pass,
        format!(
            "50 (alpha, beta) pairs, n <= {nmax}: max (ln x_n - ln bound) {worst_excess:.2e} (must be <= 0), \
             asymptotic ratio deviation at n = {nmax} {:.2}% (limit 5%)",
            100.0 * worst_ratio
        ),
    )
}

fn substituted_properties() -> Outcome {
    let lab = Lab::new(&ExperimentConfig::default()).unwrap();
    let xi = experiment_xi_growth(&lab).unwrap();
    let es = experiment_es_comparison(&lab).unwrap();
    let wins = es.pt_wins_at(0.3);
    let xis: Vec<String> = xi.records.iter().map(|x| format!("{:.3e}", x.xi_l)).collect();
    outcome(
        xi.monotone && xi.s_ec < xi.s_pt && wins,
        format!(
            "xi_ell [{}] monotone {}; s_ec {:.3} < s_pt {:.3}: {}; RBM+PT beats RBM+ES at lambda 0.3 for every budget: {wins}; \
             annotation: log10 xi slope {:.2} per ell (reference 1.2)",
            xis.join(", "),
            xi.monotone,
            xi.s_ec,
            xi.s_pt,
            xi.s_ec < xi.s_pt,
            xi.log10_xi_slope
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "identity suite", identity_suite),
        (2, "bound suite", bound_suite),
        (3, "series vs finite-difference oracle", series_oracle),
        (4, "slope law", slope_law),
        (5, "series matching", series_matching),
        (6, "Cauchy square", cauchy_square),
        (7, "xi growth and ES comparison", substituted_properties),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>())));
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k} ({name}): {} [{:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of 7 criteria pass", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
