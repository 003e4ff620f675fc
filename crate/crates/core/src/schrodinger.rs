//! Periodic one-dimensional Schrödinger families `H(λ) = −Δ + V₀ + λV₁ + λ²V₂`
//! on `[0, L)` and the three numerical experiments run on them.
//!
//! The discretization works in the position representation on `N` equispaced
//! points (`N` odd). `−Δ` and `A = (1 − Δ)^{1/2}` are Fourier multipliers
//! assembled as circulant matrices, the potentials are diagonal. Every
//! matrix is then real symmetric. Vectors carry the plain `ℓ²` grid norm.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::certify::{pt_approximant, pt_energy_error, xi_constants, XiRecord};
use crate::error::{Error, Result};
use crate::family::{select_cluster, EigenCluster, OperatorFamily, Tolerances};
use crate::linalg::{CVec, HermitianMatrix};
use crate::output::{fmt17, Table};
use crate::perturbation::{rs_nondegenerate, RSSeries};
use crate::reduced::{
    mode_error, solve_reduced, space_from_derivatives, space_from_excited_states, sweep, ReducedSpace, SweepPoint,
};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SPECTRAL_RBM_THREADS";

/// Relative Fourier tail of a potential above which it counts as aliased.
pub const ALIAS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1D {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for Grid1D {
    fn default() -> Self {
        Grid1D { l: 2.0 * PI, n: 129 }
    }
}

impl Grid1D {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        let g = Grid1D { l, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::Validation(format!("grid length L must be positive, got {}", self.l)));
        }
        if self.n < 5 || self.n % 2 == 0 {
            return Err(Error::Validation(format!("grid size N must be odd and at least 5, got {}", self.n)));
        }
        Ok(())
    }

    /// `x_j = jL/N`.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.l / self.n as f64).collect()
    }

    /// Angular wavenumber `2πk/L` of FFT slot `j`, with `|k| ≤ (N−1)/2`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let k = if j <= self.n / 2 { j as f64 } else { j as f64 - self.n as f64 };
        2.0 * PI * k / self.l
    }

    /// Circulant matrix of the Fourier multiplier `f(2πk/L)`.
    pub fn multiplier(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.n;
        let mut col: Vec<Complex<f64>> = (0..n).map(|j| Complex::new(f(self.wavenumber(j)), 0.0)).collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut col);
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| col[(i + n - j) % n].re / n as f64);
        HermitianMatrix::from_real(m).expect("finite multiplier")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `Σ_i a_i exp(−((x − c_i)/w_i)²)`, summed over periodic images.
    GaussianBumps { centers: Vec<f64>, widths: Vec<f64>, amplitudes: Vec<f64> },
    /// `c + Σ_k cos_k cos(2πkx/L) + sin_k sin(2πkx/L)`, `k = 1, 2, …`.
    CosineSeries {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// Values at the grid points.
    Samples { values: Vec<f64> },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::CosineSeries { constant: 0.0, cos: vec![], sin: vec![] }
    }

    pub fn sample(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        let xs = grid.points();
        let l = grid.l;
        let v: Vec<f64> = match self {
            PotentialSpec::GaussianBumps { centers, widths, amplitudes } => {
                if centers.len() != widths.len() || centers.len() != amplitudes.len() {
                    return Err(Error::Validation("gaussian_bumps needs equally long centers, widths, amplitudes".into()));
                }
                if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::Validation("gaussian widths must be positive".into()));
                }
                xs.iter()
                    .map(|&x| {
                        let mut acc = 0.0;
                        for ((&c, &w), &a) in centers.iter().zip(widths).zip(amplitudes) {
                            // exp(−36) is far below double precision relative to the peak.
                            let images = (6.0 * w / l).ceil() as i64 + 1;
                            for m in -images..=images {
                                let t = (x - c - m as f64 * l) / w;
                                acc += a * (-t * t).exp();
                            }
                        }
                        acc
                    })
                    .collect()
            }
            PotentialSpec::CosineSeries { constant, cos, sin } => xs
                .iter()
                .map(|&x| {
                    let th = 2.0 * PI * x / l;
                    let mut acc = *constant;
                    for (k, a) in cos.iter().enumerate() {
                        acc += a * ((k + 1) as f64 * th).cos();
                    }
                    for (k, b) in sin.iter().enumerate() {
                        acc += b * ((k + 1) as f64 * th).sin();
                    }
                    acc
                })
                .collect(),
            PotentialSpec::Samples { values } => {
                if values.len() != grid.n {
                    return Err(Error::Validation(format!("{} potential samples for N = {}", values.len(), grid.n)));
                }
                values.clone()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("potential has non-finite values".into()));
        }
        Ok(v)
    }
}

/// `V₀, V₁, V₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Potentials {
    pub v0: PotentialSpec,
    pub v1: PotentialSpec,
    pub v2: PotentialSpec,
}

impl Potentials {
    /// `V₀ = −4 exp(−((x − L/2)/(L/10))²)`, `V₁ = 2 cos(2πx/L)`, `V₂ = sin(4πx/L)`.
    pub fn default_for(l: f64) -> Self {
        Potentials {
            v0: PotentialSpec::GaussianBumps { centers: vec![l / 2.0], widths: vec![l / 10.0], amplitudes: vec![-4.0] },
            v1: PotentialSpec::CosineSeries { constant: 0.0, cos: vec![2.0], sin: vec![] },
            v2: PotentialSpec::CosineSeries { constant: 0.0, cos: vec![], sin: vec![0.0, 1.0] },
        }
    }
}

/// A potential whose Fourier coefficients beyond `|k| > (N−1)/4` are not
/// negligible. Recorded, not fatal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AliasWarning {
    pub potential: usize,
    /// Largest high-band coefficient relative to the largest coefficient.
    pub tail: f64,
}

#[derive(Clone, Debug)]
pub struct Discretization {
    pub grid: Grid1D,
    pub family: OperatorFamily,
    pub warnings: Vec<AliasWarning>,
}

fn fourier_tail(grid: &Grid1D, v: &[f64]) -> f64 {
    let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(grid.n).process(&mut buf);
    let peak = buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let cut = (grid.n - 1) / 4;
    let tail = (0..grid.n)
        .filter(|&j| j.min(grid.n - j) > cut)
        .map(|j| buf[j].norm())
        .fold(0.0, f64::max);
    tail / peak
}

/// `H⁰ = −Δ + V₀`, `H¹ = V₁`, `H² = V₂`, `A = (1 − Δ)^{1/2}`.
pub fn discretize(grid: &Grid1D, pots: &Potentials) -> Result<Discretization> {
    grid.validate()?;
    let lap = grid.multiplier(|k| k * k);
    let a = grid.multiplier(|k| (1.0 + k * k).sqrt());
    let mut terms = Vec::with_capacity(3);
    let mut warnings = vec![];
    for (i, spec) in [&pots.v0, &pots.v1, &pots.v2].into_iter().enumerate() {
        let v = spec.sample(grid)?;
        let tail = fourier_tail(grid, &v);
        if tail > ALIAS_TOL {
            warnings.push(AliasWarning { potential: i, tail });
        }
        let diag = HermitianMatrix::from_diag(&v);
        terms.push(if i == 0 { HermitianMatrix::new(lap.as_mat() + diag.as_mat())? } else { diag });
    }
    Ok(Discretization { grid: *grid, family: OperatorFamily::new(a, terms)?, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaGrid {
    Values { values: Vec<f64> },
    /// `points` logarithmically spaced values in `[min, max]`.
    Log { min: f64, max: f64, points: usize },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Log { min: 1e-3, max: 3e-1, points: 26 }
    }
}

impl LambdaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match *self {
            LambdaGrid::Values { ref values } => values.clone(),
            LambdaGrid::Log { min, max, points } => {
                if !(min > 0.0 && max > min && max.is_finite()) || points < 2 {
                    return Err(Error::Validation(format!("bad log grid [{min}, {max}] with {points} points")));
                }
                let (a, b) = (min.ln(), max.ln());
                (0..points)
                    .map(|i| match i {
                        0 => min,
                        i if i == points - 1 => max,
                        i => (a + (b - a) * i as f64 / (points - 1) as f64).exp(),
                    })
                    .collect()
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("lambda grid must be nonempty and finite".into()));
        }
        Ok(v)
    }
}

/// Experiment configuration, read from JSON. Missing fields take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Grid1D,
    /// Defaults to [`Potentials::default_for`] the grid length.
    pub potentials: Option<Potentials>,
    pub lambda_grid: LambdaGrid,
    pub ell_max: usize,
    pub delta: u8,
    pub seed: u64,
    /// Index of the tracked eigenvalue of `H(0)`, ascending.
    pub mode: usize,
    /// Slope fitting window in λ.
    pub slope_window: [f64; 2],
    /// Orders β of the equal-budget comparison; the budget is `β + 1`.
    pub budgets: Vec<usize>,
    pub comparison_lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: Grid1D::default(),
            potentials: None,
            lambda_grid: LambdaGrid::default(),
            ell_max: 5,
            delta: 0,
            seed: 0,
            mode: 0,
            slope_window: [1e-3, 1e-2],
            budgets: vec![0, 1, 2, 3, 4, 5],
            comparison_lambdas: vec![0.1, 0.3, 0.5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.delta > 1 {
            return Err(Error::Validation(format!("delta must be 0 or 1, got {}", self.delta)));
        }
        self.lambda_grid.values()?;
        let [w0, w1] = self.slope_window;
        if !(w0 > 0.0 && w1 > w0 && w1.is_finite()) {
            return Err(Error::Validation(format!("bad slope window [{w0}, {w1}]")));
        }
        if self.budgets.is_empty() || self.comparison_lambdas.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("budgets must be nonempty and comparison lambdas finite".into()));
        }
        if let Some(&b) = self.budgets.iter().find(|&&b| b < self.mode || b >= self.grid.n) {
            return Err(Error::Validation(format!("budget beta = {b} must lie in [mode, N)")));
        }
        Ok(())
    }

    pub fn potentials(&self) -> Potentials {
        self.potentials.clone().unwrap_or_else(|| Potentials::default_for(self.grid.l))
    }
}

/// Worker pool sized by [`THREADS_ENV`] when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var(THREADS_ENV) {
        let n: usize = s
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Discretized family, the tracked mode at λ = 0 and its series.
#[derive(Clone, Debug)]
pub struct Lab {
    pub config: ExperimentConfig,
    pub disc: Discretization,
    pub exact0: EigenCluster,
    pub series: RSSeries,
    pub tol: Tolerances,
}

impl Lab {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let disc = discretize(&config.grid, &config.potentials())?;
        let tol = Tolerances::default();
        let exact0 = select_cluster(&disc.family, 0.0, &[config.mode], &tol)?;
        let max_beta = config.budgets.iter().copied().max().unwrap_or(0);
        let order = (2 * config.ell_max + 2).max(max_beta + 1);
        let series = rs_nondegenerate(&disc.family, &exact0, order)?;
        Ok(Lab { config: config.clone(), disc, exact0, series, tol })
    }

    pub fn family(&self) -> &OperatorFamily {
        &self.disc.family
    }

    fn derivative_space(&self, ell: usize) -> Result<ReducedSpace> {
        space_from_derivatives(&[&self.series], ell, &self.tol)
    }

    /// `‖φ − e^{iθ}v‖_{e,δ}` with `θ` maximizing `Re⟨φ, e^{iθ}v⟩`.
    fn vec_error(&self, phi: &CVec, v: &CVec) -> f64 {
        let ov = v.dotc(phi);
        let v = if ov.norm() > 0.0 { v * (ov / ov.norm()) } else { v.clone() };
        self.family().energy().vec_norm(&(phi - v), self.config.delta)
    }

    fn mode_errors(&self, p: &SweepPoint) -> (f64, f64) {
        let m = mode_error(self.family(), p, 0);
        (if self.config.delta == 0 { m.err_vec_l2 } else { m.err_vec_energy }, m.err_eig)
    }

    /// `(vector error, |𝓔 − E|)` of the reduced space at each λ.
    fn reduced_errors(&self, space: &ReducedSpace, lams: &[f64]) -> Result<Vec<(f64, f64)>> {
        let pts = sweep(self.family(), space, lams, &self.exact0, &self.tol)?;
        Ok(pts.iter().map(|p| self.mode_errors(p)).collect())
    }
}

/// Least-squares slope of `ln y` against `ln x` over points with `x` in
/// `window` and `y > 0`. `NaN` with fewer than two such points.
pub fn loglog_slope(points: &[(f64, f64)], window: [f64; 2]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x >= window[0] && *x <= window[1] && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    linear_slope(&pts)
}

fn linear_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 { f64::NAN } else { sxy / sxx }
}

#[derive(Clone, Debug, Serialize)]
pub struct EllSweepRow {
    pub ell: usize,
    pub lam: f64,
    /// `‖φ − ψ^ℓ‖_{e,δ}`, RBM+PT.
    pub err_vec_rbm: f64,
    /// `‖φ − φ_PT^ℓ‖_{e,δ}`.
    pub err_vec_pt: f64,
    /// `|E − 𝓔^ℓ|`.
    pub err_eig_rbm: f64,
    /// `|E − e^ℓ|`, with `e^ℓ` the Rayleigh quotient of `φ_PT^ℓ`.
    pub err_eig_pt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub ell: usize,
    pub vec_rbm: f64,
    pub vec_pt: f64,
    pub eig_rbm: f64,
    pub eig_pt: f64,
    /// Sampled λ where the RBM+PT vector error does not exceed the PT one.
    pub rbm_not_worse: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EllSweep {
    #[serde(skip)]
    pub rows: Vec<EllSweepRow>,
    pub slopes: Vec<SlopeFit>,
    pub warnings: Vec<AliasWarning>,
}

impl EllSweep {
    /// Point rows followed by one slope row per ℓ (`lam` empty).
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["row", "ell", "lam", "err_vec_rbm", "err_vec_pt", "err_eig_rbm", "err_eig_pt"]);
        for r in &self.rows {
            t.push(vec![
                "point".into(),
                r.ell.to_string(),
                fmt17(r.lam),
                fmt17(r.err_vec_rbm),
                fmt17(r.err_vec_pt),
                fmt17(r.err_eig_rbm),
                fmt17(r.err_eig_pt),
            ]);
        }
        for s in &self.slopes {
            t.push(vec![
                "slope".into(),
                s.ell.to_string(),
                String::new(),
                fmt17(s.vec_rbm),
                fmt17(s.vec_pt),
                fmt17(s.eig_rbm),
                fmt17(s.eig_pt),
            ]);
        }
        t
    }
}

/// Errors of RBM+PT and plain PT at order ℓ over the λ grid, for
/// `ℓ = 0..=ell_max`, with small-λ log-log slopes.
pub fn experiment_ell_sweep(lab: &Lab) -> Result<EllSweep> {
    let lams = lab.config.lambda_grid.values()?;
    let per_ell: Vec<Vec<EllSweepRow>> = thread_pool()?.install(|| {
        (0..=lab.config.ell_max)
            .into_par_iter()
            .map(|ell| {
                let space = lab.derivative_space(ell)?;
                let pts = sweep(lab.family(), &space, &lams, &lab.exact0, &lab.tol)?;
                Ok(lams
                    .iter()
                    .zip(&pts)
                    .map(|(&lam, p)| {
                        let (ev, ee) = lab.mode_errors(p);
                        let (e, phi) = (p.exact.energies[0], &p.exact.vectors[0]);
                        let approx = pt_approximant(&lab.series, lam, ell);
                        EllSweepRow {
                            ell,
                            lam,
                            err_vec_rbm: ev,
                            err_vec_pt: lab.vec_error(phi, &approx),
                            err_eig_rbm: ee,
                            err_eig_pt: pt_energy_error(lab.family(), lam, e, phi, &approx).abs(),
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let w = lab.config.slope_window;
    let slopes = per_ell
        .iter()
        .enumerate()
        .map(|(ell, rows)| {
            let col = |f: fn(&EllSweepRow) -> f64| rows.iter().map(|r| (r.lam.abs(), f(r))).collect::<Vec<_>>();
            SlopeFit {
                ell,
                vec_rbm: loglog_slope(&col(|r| r.err_vec_rbm), w),
                vec_pt: loglog_slope(&col(|r| r.err_vec_pt), w),
                eig_rbm: loglog_slope(&col(|r| r.err_eig_rbm), w),
                eig_pt: loglog_slope(&col(|r| r.err_eig_pt), w),
                rbm_not_worse: rows.iter().filter(|r| r.err_vec_rbm <= r.err_vec_pt).count(),
                samples: rows.len(),
            }
        })
        .collect();
    Ok(EllSweep { rows: per_ell.into_iter().flatten().collect(), slopes, warnings: lab.disc.warnings.clone() })
}

#[derive(Clone, Debug, Serialize)]
pub struct XiGrowth {
    pub records: Vec<XiRecord>,
    /// `exp` of the slope of `ln ξ_PT,ℓ` against ℓ.
    pub s_pt: f64,
    /// `exp` of the slope of `ln ξ_RBM+PT,ℓ` against ℓ.
    pub s_ec: f64,
    /// Slope of `log₁₀ ξ_ℓ` against ℓ, for comparison with published rates.
    pub log10_xi_slope: f64,
    /// `ξ_ℓ` strictly increasing over `ℓ ≤ min(ell_max, 5)`.
    pub monotone: bool,
    /// `ξ_ℓ^simple` within a factor 3 of `ξ_ℓ` for `ℓ ≤ min(ell_max, 5)`.
    pub simple_close: bool,
    pub warnings: Vec<AliasWarning>,
}

impl XiGrowth {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "ell",
            "xi_pt",
            "xi_rbmpt",
            "xi_l",
            "xi_l_energy",
            "xi_l_simple",
            "xi_pt_e",
            "xi_rbmpt_e",
        ]);
        for r in &self.records {
            t.push(vec![
                r.ell.to_string(),
                fmt17(r.xi_pt),
                fmt17(r.xi_rbmpt),
                fmt17(r.xi_l),
                fmt17(r.xi_l_energy),
                fmt17(r.xi_l_simple),
                r.xi_pt_e.map(fmt17).unwrap_or_default(),
                fmt17(r.xi_rbmpt_e),
            ]);
        }
        t
    }
}

/// Acceleration constants for `ℓ = 0..=ell_max` with geometric-rate fits.
pub fn experiment_xi_growth(lab: &Lab) -> Result<XiGrowth> {
    if lab.config.ell_max < 2 {
        return Err(Error::Validation("xi_growth needs ell_max >= 2".into()));
    }
    let records = thread_pool()?.install(|| {
        (0..=lab.config.ell_max)
            .into_par_iter()
            .map(|ell| {
                let space = lab.derivative_space(ell)?;
                let red0 = solve_reduced(lab.family(), &space, 0.0, &lab.exact0, None, &lab.tol)?;
                xi_constants(lab.family(), &lab.series, &space, &red0, 0, ell, lab.config.delta)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let fit = |f: fn(&XiRecord) -> f64| {
        let pts: Vec<(f64, f64)> =
            records.iter().map(|r| (r.ell as f64, f(r))).filter(|p| p.1 > 0.0 && p.1.is_finite()).map(|(x, y)| (x, y.ln())).collect();
        linear_slope(&pts)
    };
    let s_pt = fit(|r| r.xi_pt).exp();
    let s_ec = fit(|r| r.xi_rbmpt).exp();
    let log10_xi_slope = fit(|r| r.xi_l) / std::f64::consts::LN_10;
    let head = &records[..=lab.config.ell_max.min(5)];
    let monotone = head.windows(2).all(|w| w[1].xi_l > w[0].xi_l);
    let simple_close = head.iter().all(|r| r.xi_l_simple <= 3.0 * r.xi_l && r.xi_l <= 3.0 * r.xi_l_simple);
    Ok(XiGrowth { records, s_pt, s_ec, log10_xi_slope, monotone, simple_close, warnings: lab.disc.warnings.clone() })
}

#[derive(Clone, Debug, Serialize)]
pub struct EsRow {
    pub beta: usize,
    pub lam: f64,
    /// Dimension of the derivative space (at most `β + 1`).
    pub d_pt: usize,
    pub err_vec_rbmpt: f64,
    pub err_vec_rbmes: f64,
    pub err_eig_rbmpt: f64,
    pub err_eig_rbmes: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EsComparison {
    #[serde(skip)]
    pub rows: Vec<EsRow>,
    /// `(β, λ)` pairs where RBM+PT has the strictly smaller vector error.
    pub pt_wins: Vec<(usize, f64)>,
    pub warnings: Vec<AliasWarning>,
}

impl EsComparison {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "beta",
            "budget",
            "lam",
            "d_pt",
            "err_vec_rbmpt",
            "err_vec_rbmes",
            "err_eig_rbmpt",
            "err_eig_rbmes",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.beta.to_string(),
                (r.beta + 1).to_string(),
                fmt17(r.lam),
                r.d_pt.to_string(),
                fmt17(r.err_vec_rbmpt),
                fmt17(r.err_vec_rbmes),
                fmt17(r.err_eig_rbmpt),
                fmt17(r.err_eig_rbmes),
            ]);
        }
        t
    }

    /// RBM+PT strictly better at `lam` for every budget `β ≥ 1`.
    pub fn pt_wins_at(&self, lam: f64) -> bool {
        let rows: Vec<&EsRow> = self.rows.iter().filter(|r| r.lam == lam && r.beta >= 1).collect();
        !rows.is_empty() && rows.iter().all(|r| r.err_vec_rbmpt < r.err_vec_rbmes)
    }
}

/// RBM+PT with `β + 1` derivative vectors against RBM+ES with the `β + 1`
/// lowest eigenvectors of `H(0)`, per budget and λ.
pub fn experiment_es_comparison(lab: &Lab) -> Result<EsComparison> {
    let lams = &lab.config.comparison_lambdas;
    let per_beta: Vec<Vec<EsRow>> = thread_pool()?.install(|| {
        lab.config
            .budgets
            .par_iter()
            .map(|&beta| {
                let pt = lab.derivative_space(beta)?;
                let es = space_from_excited_states(lab.family(), beta, &lab.tol)?;
                let a = lab.reduced_errors(&pt, lams)?;
                let b = lab.reduced_errors(&es, lams)?;
                Ok(lams
                    .iter()
                    .zip(a.into_iter().zip(b))
                    .map(|(&lam, ((va, ea), (vb, eb)))| EsRow {
                        beta,
                        lam,
                        d_pt: pt.d(),
                        err_vec_rbmpt: va,
                        err_vec_rbmes: vb,
                        err_eig_rbmpt: ea,
                        err_eig_rbmes: eb,
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<EsRow> = per_beta.into_iter().flatten().collect();
    let pt_wins = rows.iter().filter(|r| r.err_vec_rbmpt < r.err_vec_rbmes).map(|r| (r.beta, r.lam)).collect();
    Ok(EsComparison { rows, pt_wins, warnings: lab.disc.warnings.clone() })
}

/// `|E(N) − E(N + extra)|` for the tracked eigenvalue of `H(0)`.
pub fn resolution_check(config: &ExperimentConfig, extra: usize) -> Result<f64> {
    let pots = config.potentials();
    let mut e = [0.0; 2];
    for (i, n) in [config.grid.n, config.grid.n + extra].into_iter().enumerate() {
        let grid = Grid1D::new(config.grid.l, n)?;
        let d = discretize(&grid, &pots)?;
        e[i] = select_cluster(&d.family, 0.0, &[config.mode], &Tolerances::default())?.energies[0];
    }
    Ok((e[0] - e[1]).abs())
}
