//! Command-line harness: series, certification, sweeps and experiments.
//!
//! Exit codes: 0 success, 2 validation error, 3 certification failure,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{certify, CertificateReport, Instance};
use crate::error::{Error, Result};
use crate::family::{assemble, select_cluster, EigenCluster, FamilyJson, OperatorFamily, Tolerances};
use crate::fixtures::random_instance;
use crate::linalg::{CVec, HermitianMatrix, MatrixJson, VectorJson};
use crate::output::{manifest, write_json, Table};
use crate::perturbation::{
    dm_coefficients, first_order_matrix, rs_degenerate, rs_nondegenerate, series_growth_fit, RSSeries, SeriesJson,
};
use crate::reduced::{
    space_from_derivatives, space_from_excited_states, sweep, sweep_table, Recipe, ReducedSpace, SweepPoint,
};
use crate::schrodinger::{
    experiment_ell_sweep, experiment_es_comparison, experiment_xi_growth, ExperimentConfig, Lab,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CERTIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spectral-rbm", version, about = "Reduced-basis and perturbation-series eigenproblem toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Norm exponent; certification uses both 0 and 1 when omitted.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub delta: Option<u8>,
    /// Series order, reduced-space order or `ell_max`, depending on the command.
    #[arg(long, global = true)]
    pub ell: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Tolerance override, e.g. `gap_rel=1e-9`. Repeatable.
    #[arg(long = "tol", global = true, value_name = "KEY=VALUE")]
    pub tol: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Perturbation series of selected eigenvalues of H(λ) at λ = 0.
    Series {
        #[arg(long)]
        family: PathBuf,
        /// Ascending eigenvalue indices of H(0).
        #[arg(long, value_delimiter = ',', default_value = "0")]
        targets: Vec<usize>,
        /// Treat the targets as one degenerate cluster lifted at first order.
        #[arg(long)]
        degenerate: bool,
    },
    /// Evaluate error identities and bounds.
    Certify {
        #[arg(long, conflicts_with_all = ["instance", "random"])]
        family: Option<PathBuf>,
        /// Explicit instance file: `{"H", "A"?, "basis", "E", "phi", "EE", "psi", "lam"?}`.
        #[arg(long, conflicts_with = "random")]
        instance: Option<PathBuf>,
        /// Number of seeded random instances.
        #[arg(long)]
        random: Option<usize>,
        /// Dimension of random instances.
        #[arg(long, default_value_t = 12)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        targets: Vec<usize>,
        #[arg(long, value_enum, default_value_t = RecipeArg::Derivatives)]
        recipe: RecipeArg,
        #[arg(long)]
        degenerate: bool,
        #[arg(long, value_delimiter = ',', default_value = "0.05")]
        lam: Vec<f64>,
    },
    /// Exact against reduced eigenpairs over a list of λ values.
    Sweep {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        targets: Vec<usize>,
        #[arg(long, value_enum, default_value_t = RecipeArg::Derivatives)]
        recipe: RecipeArg,
        #[arg(long)]
        degenerate: bool,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.01,0.1")]
        lam: Vec<f64>,
    },
    /// Schrödinger experiments driven by `--config`.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RecipeArg {
    /// Span of the first `ell + 1` series vectors of every target.
    Derivatives,
    /// The `ell + 1` lowest eigenvectors of H(0).
    Excited,
    /// The exact target eigenvectors at each λ.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    #[value(name = "ell_sweep")]
    EllSweep,
    #[value(name = "xi_growth")]
    XiGrowth,
    #[value(name = "es_comparison")]
    EsComparison,
    All,
}

impl ExperimentName {
    fn label(self) -> &'static str {
        match self {
            ExperimentName::EllSweep => "ell_sweep",
            ExperimentName::XiGrowth => "xi_growth",
            ExperimentName::EsComparison => "es_comparison",
            ExperimentName::All => "all",
        }
    }
}

/// `{"H", "A"?, "basis", "E", "phi", "EE", "psi", "lam"?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJson {
    #[serde(rename = "H")]
    pub h: MatrixJson,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixJson>,
    pub basis: Vec<VectorJson>,
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    pub phi: Vec<VectorJson>,
    #[serde(rename = "EE")]
    pub ee: Vec<f64>,
    pub psi: Vec<VectorJson>,
    #[serde(default)]
    pub lam: f64,
}

fn vecs(v: &[VectorJson]) -> Result<Vec<CVec>> {
    v.iter().map(VectorJson::to_vec).collect()
}

impl InstanceJson {
    /// The one-term family `{H}` and the instance.
    pub fn load(&self, tol: &Tolerances) -> Result<(OperatorFamily, Instance)> {
        let h = self.h.to_hermitian()?;
        let a = match &self.a {
            Some(a) => a.to_hermitian()?,
            None => HermitianMatrix::identity(h.dim()),
        };
        let family = OperatorFamily::new(a, vec![h.clone()])?;
        let space = ReducedSpace::from_spanning(&vecs(&self.basis)?, Recipe::Custom, tol.rank_tol)?;
        let inst = Instance::from_parts(
            &h,
            family.energy(),
            &space.p,
            self.e.clone(),
            vecs(&self.phi)?,
            self.ee.clone(),
            vecs(&self.psi)?,
        )?;
        Ok((family, inst))
    }
}

/// Tolerances with `key=value` overrides applied.
pub fn tolerances(overrides: &[String]) -> Result<Tolerances> {
    let mut v = serde_json::to_value(Tolerances::default())?;
    let map = v.as_object_mut().expect("tolerances serialize to an object");
    for o in overrides {
        let (k, val) = o.split_once('=').ok_or_else(|| Error::Validation(format!("expected KEY=VALUE, got {o:?}")))?;
        let x: f64 = val.trim().parse().map_err(|_| Error::Validation(format!("tolerance {k} is not a number")))?;
        if !map.contains_key(k.trim()) {
            return Err(Error::Validation(format!("unknown tolerance {k:?}")));
        }
        map.insert(k.trim().to_string(), serde_json::json!(x));
    }
    Ok(serde_json::from_value(v)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn load_family(path: &Path) -> Result<OperatorFamily> {
    let j: FamilyJson = read_json(path)?;
    OperatorFamily::from_json(&j)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{}: no such file", path.display())))
    }
}

/// Exact cluster at λ = 0 in the frame of the series, and one series per target.
pub fn target_series(
    family: &OperatorFamily,
    targets: &[usize],
    degenerate: bool,
    order: usize,
    tol: &Tolerances,
) -> Result<(EigenCluster, Vec<RSSeries>)> {
    let cluster = select_cluster(family, 0.0, targets, tol)?;
    if degenerate {
        if family.max_order() < 1 {
            return Err(Error::Validation("degenerate series need a first-order term".into()));
        }
        let mut frame = None;
        let mut series = Vec::with_capacity(targets.len());
        for mu in 0..targets.len() {
            let ctx = first_order_matrix(&cluster, &family.terms()[1], mu, tol)?;
            series.push(rs_degenerate(family, &ctx, order)?);
            frame.get_or_insert(ctx.cluster);
        }
        Ok((frame.expect("nonempty targets"), series))
    } else {
        let series = targets
            .iter()
            .map(|&t| rs_nondegenerate(family, &select_cluster(family, 0.0, &[t], tol)?, order))
            .collect::<Result<Vec<_>>>()?;
        let vectors = series.iter().map(|s| s.phi[0].clone()).collect();
        let energies = series.iter().map(|s| s.e[0]).collect();
        Ok((cluster.with_frame(energies, vectors), series))
    }
}

fn build_space(
    family: &OperatorFamily,
    recipe: RecipeArg,
    series: &[RSSeries],
    ell: usize,
    tol: &Tolerances,
) -> Result<ReducedSpace> {
    match recipe {
        RecipeArg::Derivatives => space_from_derivatives(&series.iter().collect::<Vec<_>>(), ell, tol),
        RecipeArg::Excited => space_from_excited_states(family, ell, tol),
        RecipeArg::Exact => Err(Error::Validation("the exact recipe depends on lambda".into())),
    }
}

/// Instance with the reduced space equal to the exact cluster at `lam`.
fn exact_instance(family: &OperatorFamily, lam: f64, targets: &[usize], tol: &Tolerances) -> Result<Instance> {
    let cl = select_cluster(family, lam, targets, tol)?;
    let space = ReducedSpace::from_spanning(&cl.vectors, Recipe::Custom, tol.rank_tol)?;
    Instance::from_parts(
        &assemble(family, lam),
        family.energy(),
        &space.p,
        cl.energies.clone(),
        cl.vectors.clone(),
        cl.energies.clone(),
        cl.vectors.clone(),
    )
}

struct Ctx {
    out: PathBuf,
    seed: u64,
    quiet: bool,
    tol: Tolerances,
}

impl Ctx {
    fn say(&self, s: &str) {
        if !self.quiet {
            println!("{s}");
        }
    }

    /// Deterministic stand-in for a timestamp in output names.
    fn stamp(&self) -> String {
        format!("seed{}", self.seed)
    }
}

/// Runs a parsed command line. `Ok(true)` when a certification failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let tol = tolerances(&cli.tol)?;
    if let Some(c) = &cli.config {
        require_file(c)?;
    }
    match &cli.command {
        Command::Series { family, .. } | Command::Sweep { family, .. } => require_file(family)?,
        Command::Certify { family, instance, random, .. } => {
            match (family, instance, random) {
                (Some(f), None, None) | (None, Some(f), None) => require_file(f)?,
                (None, None, Some(_)) => {}
                _ => return Err(Error::Validation("certify needs one of --family, --instance, --random".into())),
            }
        }
        Command::Experiment { .. } => {}
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::Validation(format!("{}: {e}", cli.out.display())))?;
    let mut ctx = Ctx { out: cli.out.clone(), seed: cli.seed.unwrap_or(0), quiet: cli.quiet, tol };
    match &cli.command {
        Command::Series { family, targets, degenerate } => cmd_series(&ctx, family, targets, *degenerate, cli.ell.unwrap_or(4)),
        Command::Certify { family, instance, random, dim, targets, recipe, degenerate, lam } => {
            let deltas: Vec<u8> = cli.delta.map_or(vec![0, 1], |d| vec![d]);
            let reports = if let Some(path) = instance {
                let j: InstanceJson = read_json(path)?;
                let (fam, inst) = j.load(&ctx.tol)?;
                vec![certify(&fam, j.lam, &inst, &deltas)?]
            } else if let Some(count) = random {
                certify_random(&ctx, *count, *dim, &deltas)?
            } else {
                let family = load_family(family.as_deref().expect("checked above"))?;
                certify_family(&ctx, &family, targets, *recipe, *degenerate, lam, cli.ell.unwrap_or(1), &deltas)?
            };
            let failed = reports.iter().any(|r| !r.pass());
            for r in &reports {
                ctx.say(&r.to_table());
            }
            for r in reports.iter().filter(|r| !r.pass()) {
                let names: Vec<String> = r
                    .identities
                    .iter()
                    .filter(|i| !i.pass)
                    .map(|i| i.name.clone())
                    .chain(r.bounds.iter().filter(|b| b.failed()).map(|b| match b.delta {
                        Some(d) => format!("{} (delta={d})", b.name),
                        None => b.name.clone(),
                    }))
                    .collect();
                eprintln!("certification failed at lambda = {:e}: {}", r.lam, names.join(", "));
            }
            write_json(&ctx.out.join(format!("certify_{}.json", ctx.stamp())), &reports)?;
            Ok(failed)
        }
        Command::Sweep { family, targets, recipe, degenerate, lam } => {
            let family = load_family(family)?;
            let ell = cli.ell.unwrap_or(1);
            let (exact0, series) = target_series(&family, targets, *degenerate, ell.max(1), &ctx.tol)?;
            let space = build_space(&family, *recipe, &series, ell, &ctx.tol)?;
            let pts = sweep(&family, &space, lam, &exact0, &ctx.tol)?;
            let path = ctx.out.join(format!("sweep_{}.csv", ctx.stamp()));
            sweep_table(&family, &pts).write_csv(&path)?;
            ctx.say(&format!("wrote {}", path.display()));
            Ok(false)
        }
        Command::Experiment { name } => {
            let mut cfg: ExperimentConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(d) = cli.delta {
                cfg.delta = d;
            }
            if let Some(l) = cli.ell {
                cfg.ell_max = l;
            }
            ctx.seed = cfg.seed;
            cmd_experiment(&ctx, &cfg, *name)?;
            Ok(false)
        }
    }
}

#[derive(Serialize)]
struct SeriesOutput {
    targets: Vec<usize>,
    degenerate: bool,
    series: Vec<SeriesJson>,
    /// `(a, b)` with `a bⁿ` bounding the coefficient norms, per target.
    growth_fit: Vec<(f64, f64)>,
    /// `Γⁿ` of the target cluster.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gamma: Vec<MatrixJson>,
}

fn cmd_series(ctx: &Ctx, path: &Path, targets: &[usize], degenerate: bool, order: usize) -> Result<bool> {
    let family = load_family(path)?;
    let (cluster, series) = target_series(&family, targets, degenerate, order, &ctx.tol)?;
    let growth_fit: Vec<(f64, f64)> = series.iter().map(|s| series_growth_fit(&family, s)).collect();
    let gamma = if targets.len() > 1 {
        dm_coefficients(&family, &cluster, order)?.gamma.iter().map(MatrixJson::from_mat).collect()
    } else {
        vec![]
    };
    for (t, (a, b)) in targets.iter().zip(&growth_fit) {
        ctx.say(&format!("target {t}: growth fit a = {a:.6e}, b = {b:.6e}"));
    }
    let out = SeriesOutput {
        targets: targets.to_vec(),
        degenerate,
        series: series.iter().map(RSSeries::to_json).collect(),
        growth_fit,
        gamma,
    };
    write_json(&ctx.out.join("series.json"), &out)?;
    Ok(false)
}

#[allow(clippy::too_many_arguments)]
fn certify_family(
    ctx: &Ctx,
    family: &OperatorFamily,
    targets: &[usize],
    recipe: RecipeArg,
    degenerate: bool,
    lams: &[f64],
    ell: usize,
    deltas: &[u8],
) -> Result<Vec<CertificateReport>> {
    if recipe == RecipeArg::Exact {
        return lams
            .iter()
            .map(|&lam| certify(family, lam, &exact_instance(family, lam, targets, &ctx.tol)?, deltas))
            .collect();
    }
    let (exact0, series) = target_series(family, targets, degenerate, ell.max(1), &ctx.tol)?;
    let space = build_space(family, recipe, &series, ell, &ctx.tol)?;
    let pts: Vec<SweepPoint> = sweep(family, &space, lams, &exact0, &ctx.tol)?;
    pts.iter()
        .map(|p| certify(family, p.exact.lam, &Instance::new(family, &space, &p.exact, &p.reduced)?, deltas))
        .collect()
}

/// `count` instances of dimension `dim` with `ν ≤ 3`, `d ≤ 8`.
fn certify_random(ctx: &Ctx, count: usize, dim: usize, deltas: &[u8]) -> Result<Vec<CertificateReport>> {
    if dim < 9 {
        return Err(Error::Validation("random instances need --dim >= 9".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    (0..count)
        .map(|_| {
            let nu = rng.gen_range(1..=3);
            let d = rng.gen_range(nu + 1..=8);
            let eps = 10f64.powf(rng.gen_range(-4.0..-0.5));
            let ri = random_instance(&mut rng, dim, nu, d, eps)?;
            certify(&ri.family, ri.lam, &ri.instance, deltas)
        })
        .collect()
}

fn cmd_experiment(ctx: &Ctx, cfg: &ExperimentConfig, name: ExperimentName) -> Result<()> {
    let lab = Lab::new(cfg)?;
    for w in &lab.disc.warnings {
        eprintln!("warning: potential V{} is under-resolved (relative Fourier tail {:.2e})", w.potential, w.tail);
    }
    let names = match name {
        ExperimentName::All => vec![ExperimentName::EllSweep, ExperimentName::XiGrowth, ExperimentName::EsComparison],
        n => vec![n],
    };
    let stamp = ctx.stamp();
    let mut files = Vec::new();
    for n in names {
        let (table, report): (Table, serde_json::Value) = match n {
            ExperimentName::EllSweep => {
                let r = experiment_ell_sweep(&lab)?;
                for s in &r.slopes {
                    ctx.say(&format!(
                        "ell {}: slopes vec rbm {:.3} pt {:.3}, eig rbm {:.3} pt {:.3}",
                        s.ell, s.vec_rbm, s.vec_pt, s.eig_rbm, s.eig_pt
                    ));
                }
                (r.table(), serde_json::to_value(&r)?)
            }
            ExperimentName::XiGrowth => {
                let r = experiment_xi_growth(&lab)?;
                ctx.say(&format!(
                    "s_pt {:.4}, s_ec {:.4}, log10 xi slope {:.4}, monotone {}",
                    r.s_pt, r.s_ec, r.log10_xi_slope, r.monotone
                ));
                (r.table(), serde_json::to_value(&r)?)
            }
            ExperimentName::EsComparison => {
                let r = experiment_es_comparison(&lab)?;
                ctx.say(&format!("RBM+PT wins at {} of {} (beta, lambda) pairs", r.pt_wins.len(), r.rows.len()));
                (r.table(), serde_json::to_value(&r)?)
            }
            ExperimentName::All => unreachable!("expanded above"),
        };
        let csv = ctx.out.join(format!("{}_{stamp}.csv", n.label()));
        let json = ctx.out.join(format!("{}_{stamp}.json", n.label()));
        table.write_csv(&csv)?;
        write_json(&json, &serde_json::json!({ "experiment": n.label(), "config": cfg, "report": report }))?;
        files.push(csv);
        files.push(json);
    }
    let entries = manifest(&ctx.out, &files)?;
    let path = ctx.out.join(format!("manifest_{stamp}.json"));
    write_json(&path, &entries)?;
    ctx.say(&format!("wrote {} artifacts and {}", files.len(), path.display()));
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(false) => EXIT_OK,
        Ok(true) => EXIT_CERTIFICATION,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
