//! Experiment configuration, the sweep runners and their CSV/report output.
//!
//! Every runner returns an [`ExperimentReport`] whose verdict is a function of
//! the emitted CSV rows: rate fits use the `magnitude`/`d_Z_or_d_Upsilon` and
//! distance columns, and `k*` is recoverable from any row with a positive
//! distance as `log(psi / implied_kappa) / log(size)`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    coercivity_probe, estimate_structural_exponent, lambda_direct, lambda_dual, log_space,
    structural_k, CoercivityReport, RateReport,
};
use crate::error::{Error, Result};
use crate::grid::{norm, GridSpec, NormKind, ScalarField};
use crate::optimize::{
    multistart, non_bang_bang_measure, pontryagin_residual, read_snapshot_binary, solve_bangbang,
    solve_bangbang_from, solve_nonlinear_perturbed_from, solve_tikhonov, write_snapshot_binary,
    write_snapshot_csv, PerturbationTriple, SolveOptions, SolveOutcome,
};
use crate::perturb::{d_upsilon, DcOptions, NonlinearPerturbation};
use crate::problem::{build_preset, Preset, PresetParams, ProblemSpec, TargetMode};
use crate::solvers::{solve_state_general, OptimalitySnapshot};

/// Tolerance on fitted exponents below the theoretical `1/k*`.
pub const RATE_SLACK: f64 = 0.2;
/// Largest admissible spread `max/min` of the implied constant.
pub const KAPPA_SPREAD: f64 = 10.0;
/// Distances at or below this are solver noise.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    TikhonovSweep,
    RhoSweep,
    ZetaSweep,
    Diagnostics,
    Convergence,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::TikhonovSweep => "tikhonov-sweep",
            Self::RhoSweep => "rho-sweep",
            Self::ZetaSweep => "zeta-sweep",
            Self::Diagnostics => "diagnostics",
            Self::Convergence => "convergence",
        }
    }

    fn is_rate(&self) -> bool {
        matches!(self, Self::TikhonovSweep | Self::RhoSweep | Self::ZetaSweep)
    }
}

/// Shape of the fixed random direction used by the rho sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoShape {
    /// Independent uniform values in `[-1, 1]`, normalized to unit max norm.
    Random,
    Constant,
}

/// Which components of `(xi, eta, rho)` the rho sweep perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepComponents {
    Rho,
    XiEta,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManufacturedMode {
    /// Right-hand side from the continuous operator.
    Analytic,
    /// Right-hand side from the discrete operator; the error is rounding only.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub preset: Preset,
    /// Ascending; sweeps run on the last (finest) entry.
    pub grid_sizes: Vec<usize>,
    /// Sweep magnitudes (epsilon, |rho|, or the zeta family parameter).
    pub sweep: Vec<f64>,
    pub seed: u64,
    pub output: PathBuf,
    /// Perturbation family for the zeta sweep.
    pub family: String,
    pub rho_shape: RhoShape,
    pub components: SweepComponents,
    /// `tau = tau_factor * |sigma|_inf` for the coercivity probe.
    pub tau_factor: f64,
    pub probe_samples: usize,
    pub multistart: usize,
    pub reference_gap_tol: f64,
    pub manufactured: ManufacturedMode,
    pub params: PresetParams,
    pub solver: SolveOptions,
    pub dc: DcOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::TikhonovSweep,
            preset: Preset::LinearTracking,
            grid_sizes: vec![65],
            sweep: log_space(1e-4, 1e-1, 7),
            seed: 0,
            output: PathBuf::from("out"),
            family: "state-shift".into(),
            rho_shape: RhoShape::Random,
            components: SweepComponents::Rho,
            tau_factor: 0.1,
            probe_samples: 200,
            multistart: 5,
            reference_gap_tol: 1e-12,
            manufactured: ManufacturedMode::Analytic,
            params: PresetParams::defaults(),
            solver: SolveOptions {
                max_iters: 5000,
                gap_tol: 1e-9,
                ..SolveOptions::default()
            },
            dc: DcOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn finest_grid(&self) -> Result<GridSpec> {
        let n = *self
            .grid_sizes
            .last()
            .ok_or_else(|| Error::Config("grid_sizes is empty".into()))?;
        GridSpec::square(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_sizes.is_empty() {
            return Err(Error::Config("grid_sizes is empty".into()));
        }
        if self.grid_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "grid_sizes must be strictly ascending".into(),
            ));
        }
        if self.experiment == ExperimentKind::Convergence && self.grid_sizes.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "convergence needs at least 3 grid sizes, got {}",
                self.grid_sizes.len()
            )));
        }
        if self.experiment.is_rate() {
            if self.sweep.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("sweep values must be positive".into()));
            }
            if self.sweep.len() < 4 {
                return Err(Error::InsufficientData(format!(
                    "rate experiments need at least 4 sweep values, got {}",
                    self.sweep.len()
                )));
            }
        }
        if !(self.tau_factor > 0.0) {
            return Err(Error::Config("tau_factor must be positive".into()));
        }
        self.solver.validate()?;
        Ok(())
    }

    fn spec_on(&self, grid: GridSpec) -> Result<ProblemSpec> {
        build_preset(self.preset, &self.params, grid)
    }
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SubregularityRecord {
    pub magnitude: f64,
    /// `d_Z` for linear perturbations, `d_Upsilon` for nonlinear ones, `eps`
    /// for the Tikhonov sweep.
    pub zeta_size: f64,
    pub u_dist_l1: f64,
    pub y_dist_l2: f64,
    pub p_dist_l2: f64,
    pub implied_kappa: f64,
    pub iterations: usize,
    pub gap: f64,
}

impl SubregularityRecord {
    pub fn psi_distance(&self) -> f64 {
        self.u_dist_l1 + self.y_dist_l2 + self.p_dist_l2
    }
}

pub const SWEEP_HEADER: &str =
    "magnitude,d_Z_or_d_Upsilon,u_dist_L1,y_dist_L2,p_dist_L2,implied_kappa,iters,gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub verdict: Verdict,
    pub records: Vec<SubregularityRecord>,
    pub rate: Option<RateReport>,
    /// CSV body for experiments that do not emit sweep rows.
    pub table: Option<(String, Vec<String>)>,
    /// Ordered `key = value` lines for the text report.
    pub summary: Vec<(String, String)>,
    pub snapshot: Option<OptimalitySnapshot>,
}

impl ExperimentReport {
    fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            verdict: Verdict::Fail,
            records: Vec::new(),
            rate: None,
            table: None,
            summary: Vec::new(),
            snapshot: None,
        }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn csv(&self) -> String {
        let mut out = String::new();
        match &self.table {
            Some((header, rows)) => {
                out.push_str(header);
                out.push('\n');
                for r in rows {
                    out.push_str(r);
                    out.push('\n');
                }
            }
            None => {
                out.push_str(SWEEP_HEADER);
                out.push('\n');
                for r in &self.records {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        fmt_f(r.magnitude),
                        fmt_f(r.zeta_size),
                        fmt_f(r.u_dist_l1),
                        fmt_f(r.y_dist_l2),
                        fmt_f(r.p_dist_l2),
                        fmt_f(r.implied_kappa),
                        r.iterations,
                        fmt_f(r.gap)
                    );
                }
            }
        }
        out
    }

    pub fn report_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment = {}", self.experiment.name());
        let _ = writeln!(out, "verdict = {}", self.verdict.as_str());
        if let Some(r) = &self.rate {
            let _ = writeln!(out, "fitted_exponent = {}", fmt_f(r.exponent));
            let _ = writeln!(out, "fitted_constant = {}", fmt_f(r.constant));
            let _ = writeln!(out, "r_squared = {}", fmt_f(r.r_squared));
        }
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Write `<experiment>.csv` and `<experiment>-report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let name = self.experiment.name();
        fs::write(dir.join(format!("{name}.csv")), self.csv())?;
        fs::write(dir.join(format!("{name}-report.txt")), self.report_text())?;
        if let Some(s) = &self.snapshot {
            write_snapshot_csv(&dir.join(format!("{name}-snapshot.csv")), s)?;
        }
        Ok(())
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.17e}")
}

/// FNV-1a, used only to key cached reference solutions.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// The unperturbed reference solution on `spec`'s grid, computed at
/// `reference_gap_tol` and cached as a binary snapshot in `cache_dir`.
pub fn reference_solution(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    cache_dir: Option<&Path>,
) -> Result<OptimalitySnapshot> {
    let key = format!(
        "{}|{}|{}|{:e}|{}",
        config.preset.name(),
        spec.grid().nx(),
        toml::to_string(&config.params).map_err(|e| Error::Config(e.to_string()))?,
        config.reference_gap_tol,
        config.solver.max_iters
    );
    let file = cache_dir.map(|d| {
        d.join(format!(
            "reference-{}-{}-{:016x}.bin",
            config.preset.name(),
            spec.grid().nx(),
            fnv1a(key.as_bytes())
        ))
    });
    if let Some(f) = file.as_ref().filter(|f| f.exists()) {
        if let Ok(s) = read_snapshot_binary(f) {
            if s.y.grid() == spec.grid() {
                return Ok(s);
            }
        }
    }
    let opts = SolveOptions {
        gap_tol: config.reference_gap_tol,
        ..config.solver.clone()
    };
    let snap = solve_bangbang(spec, &opts, None)?.snapshot;
    if let Some(f) = file {
        fs::create_dir_all(f.parent().unwrap_or(Path::new(".")))?;
        write_snapshot_binary(&f, &snap)?;
    }
    Ok(snap)
}

/// Level-set exponent of `sigma` and the rounded `k*`; `None` when the
/// near-singular set is empty at every resolvable threshold.
pub fn structural_estimate(sigma: &ScalarField) -> Result<Option<(RateReport, u32)>> {
    let top = sigma.max_abs();
    if top == 0.0 {
        return Ok(None);
    }
    match estimate_structural_exponent(sigma, &log_space(1e-3 * top, 0.5 * top, 24)) {
        Ok(r) => {
            let k = structural_k(&r);
            Ok(Some((r, k)))
        }
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn distances(reference: &OptimalitySnapshot, s: &OptimalitySnapshot) -> Result<(f64, f64, f64)> {
    Ok((
        norm(&s.u.field().sub(reference.u.field())?, NormKind::L1),
        norm(&s.y.sub(&reference.y)?, NormKind::L2),
        norm(&s.p.sub(&reference.p)?, NormKind::L2),
    ))
}

fn record(
    magnitude: f64,
    zeta_size: f64,
    reference: &OptimalitySnapshot,
    out: &SolveOutcome,
    k_star: u32,
    tikhonov: bool,
) -> Result<SubregularityRecord> {
    let (u, y, p) = distances(reference, &out.snapshot)?;
    let lead = if tikhonov { u } else { u + y + p };
    let implied_kappa = if zeta_size > 0.0 {
        lead / zeta_size.powf(1.0 / k_star as f64)
    } else {
        0.0
    };
    Ok(SubregularityRecord {
        magnitude,
        zeta_size,
        u_dist_l1: u,
        y_dist_l2: y,
        p_dist_l2: p,
        implied_kappa,
        iterations: out.iterations,
        gap: out.gap,
    })
}

/// Fit `lead` against `size` and grade it. Returns the fitted rate, the
/// implied-constant spread and whether the sweep is vacuous.
fn grade(report: &mut ExperimentReport, k_star: u32, tikhonov: bool) -> Result<()> {
    let pts: Vec<(f64, f64, f64)> = report
        .records
        .iter()
        .map(|r| {
            let lead = if tikhonov {
                r.u_dist_l1
            } else {
                r.psi_distance()
            };
            (r.zeta_size, lead, r.implied_kappa)
        })
        .filter(|(s, l, _)| *s > 0.0 && *l > NOISE_FLOOR)
        .collect();
    report.note("k_star", k_star);
    report.note("fitted_points", pts.len());
    // zero distances satisfy any bound; too few survivors leave nothing to fit
    if pts.len() < 2 {
        report.note("vacuous_rate", true);
        report.verdict = Verdict::Pass;
        return Ok(());
    }
    report.note("vacuous_rate", false);
    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    let xs: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let fit = crate::analysis::fit_power_law_min(&xs, &ys, 2)?;
    let kmax = pts.iter().map(|p| p.2).fold(0.0, f64::max);
    let kmin = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let spread = kmax / kmin;
    let target = 1.0 / k_star as f64 - RATE_SLACK;
    report.note("exponent_threshold", fmt_f(target));
    report.note("kappa_spread", fmt_f(spread));
    let ok = fit.exponent >= target && spread <= KAPPA_SPREAD;
    report.verdict = Verdict::from_bool(ok);
    report.rate = Some(fit);
    Ok(())
}

fn k_star_for(report: &mut ExperimentReport, sigma: &ScalarField) -> Result<u32> {
    Ok(match structural_estimate(sigma)? {
        Some((r, k)) => {
            report.note("structural_exponent", fmt_f(r.exponent));
            k
        }
        None => {
            report.note("structural_exponent", "vacuous");
            1
        }
    })
}

/// Tikhonov rate study: `|u_eps - u_bar|_L1` against `eps`.
pub fn run_tikhonov_sweep(
    config: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config.spec_on(config.finest_grid()?)?;
    let reference = reference_solution(config, &spec, cache_dir)?;
    let mut report = ExperimentReport::new(ExperimentKind::TikhonovSweep);
    let k_star = k_star_for(&mut report, &reference.sigma)?;
    let outs: Vec<SubregularityRecord> = config
        .sweep
        .par_iter()
        .map(|&eps| {
            let out =
                solve_tikhonov(&spec, eps, &config.solver, Some(&reference.u)).map_err(|e| {
                    Error::Sweep {
                        value: eps,
                        source: Box::new(e),
                    }
                })?;
            record(eps, eps, &reference, &out, k_star, true)
        })
        .collect::<Result<_>>()?;
    report.records = outs;
    grade(&mut report, k_star, true)?;
    Ok(report)
}

fn unit_shape(grid: GridSpec, rng: &mut ChaCha8Rng, kind: NormKind) -> ScalarField {
    let v = ScalarField::from_vec_unchecked(
        grid,
        (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let n = norm(&v, kind);
    v.scale(1.0 / n)
}

/// Linear-perturbation subregularity sweep with a fixed random shape.
pub fn run_rho_sweep(
    config: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let grid = config.finest_grid()?;
    let spec = config.spec_on(grid)?;
    let reference = reference_solution(config, &spec, cache_dir)?;
    let mut report = ExperimentReport::new(ExperimentKind::RhoSweep);
    let k_star = k_star_for(&mut report, &reference.sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rho_shape = match config.rho_shape {
        RhoShape::Random => unit_shape(grid, &mut rng, NormKind::Linf),
        RhoShape::Constant => ScalarField::constant(grid, 1.0),
    };
    let xi_shape = unit_shape(grid, &mut rng, NormKind::L2);
    let eta_shape = unit_shape(grid, &mut rng, NormKind::L2);
    let (use_rho, use_xe) = match config.components {
        SweepComponents::Rho => (true, false),
        SweepComponents::XiEta => (false, true),
        SweepComponents::All => (true, true),
    };
    report.note(
        "components",
        format!("{:?}", config.components).to_lowercase(),
    );
    let outs: Vec<SubregularityRecord> = config
        .sweep
        .par_iter()
        .map(|&t| {
            let pick = |on: bool, f: &ScalarField| {
                if on {
                    f.scale(t)
                } else {
                    ScalarField::zeros(grid)
                }
            };
            let triple = PerturbationTriple {
                xi: pick(use_xe, &xi_shape),
                eta: pick(use_xe, &eta_shape),
                rho: pick(use_rho, &rho_shape),
            };
            let out = solve_bangbang_from(&spec, &config.solver, Some(&triple), Some(&reference.u))
                .map_err(|e| Error::Sweep {
                    value: t,
                    source: Box::new(e),
                })?;
            record(t, triple.size(), &reference, &out, k_star, false)
        })
        .collect::<Result<_>>()?;
    report.records = outs;
    grade(&mut report, k_star, false)?;
    Ok(report)
}

/// Nonlinear-perturbation sweep over a named family, sized by `d_Upsilon`.
pub fn run_zeta_sweep(
    config: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config.spec_on(config.finest_grid()?)?;
    NonlinearPerturbation::family(&config.family, 1.0)?;
    let reference = reference_solution(config, &spec, cache_dir)?;
    let mut report = ExperimentReport::new(ExperimentKind::ZetaSweep);
    report.note("family", &config.family);
    let k_star = k_star_for(&mut report, &reference.sigma)?;
    let zero = NonlinearPerturbation::zero();
    let outs: Vec<SubregularityRecord> = config
        .sweep
        .par_iter()
        .map(|&t| {
            let wrap = |e: Error| Error::Sweep {
                value: t,
                source: Box::new(e),
            };
            let zeta = NonlinearPerturbation::family(&config.family, t)?;
            let size = d_upsilon(&zeta, &zero, &config.dc).map_err(wrap)?;
            let out =
                solve_nonlinear_perturbed_from(&spec, &zeta, &config.solver, Some(&reference.u))
                    .map_err(wrap)?;
            record(t, size.value, &reference, &out, k_star, false)
        })
        .collect::<Result<_>>()?;
    report.records = outs;
    grade(&mut report, k_star, false)?;
    Ok(report)
}

/// Bang-bang solve on the finest grid.
pub fn run_solve(config: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config.spec_on(config.finest_grid()?)?;
    let out = solve_bangbang(&spec, &config.solver, None)?;
    let _ = cache_dir;
    let mut report = ExperimentReport::new(ExperimentKind::Solve);
    let s = &out.snapshot;
    let pont = pontryagin_residual(&spec, s);
    let nbb = non_bang_bang_measure(&spec, s, 1e-6);
    let objective = *out.objective_history.last().unwrap_or(&f64::NAN);
    let rows = vec![
        format!("iterations,{}", out.iterations),
        format!("gap,{}", fmt_f(out.gap)),
        format!("objective,{}", fmt_f(objective)),
        format!("pontryagin_residual,{}", fmt_f(pont)),
        format!("non_bang_bang_measure,{}", fmt_f(nbb)),
        format!("state_residual,{}", fmt_f(s.state_residual)),
        format!("adjoint_residual,{}", fmt_f(s.adjoint_residual)),
    ];
    report.verdict = Verdict::from_bool(pont >= -1e-8);
    report.table = Some(("quantity,value".into(), rows));
    report.note("grid", spec.grid().nx());
    report.note("iterations", out.iterations);
    report.note("gap", fmt_f(out.gap));
    report.note("pontryagin_residual", fmt_f(pont));
    report.snapshot = Some(out.snapshot);
    Ok(report)
}

/// Structural, coercivity and optimality checks at the reference solution.
pub fn run_diagnostics(
    config: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config.spec_on(config.finest_grid()?)?;
    let s = reference_solution(config, &spec, cache_dir)?;
    let g = *spec.grid();
    let mut report = ExperimentReport::new(ExperimentKind::Diagnostics);
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<String>, k: &str, v: String| rows.push(format!("{k},{v}"));

    let structural = structural_estimate(&s.sigma)?;
    let (k_star, growth_vacuous) = match &structural {
        Some((r, k)) => {
            push(&mut rows, "structural_exponent", fmt_f(r.exponent));
            push(&mut rows, "structural_constant", fmt_f(r.constant));
            (*k, false)
        }
        None => {
            push(&mut rows, "structural_exponent", "nan".into());
            push(&mut rows, "structural_constant", "nan".into());
            (1, true)
        }
    };
    push(&mut rows, "k_star", k_star.to_string());
    push(
        &mut rows,
        "level_set_growth_vacuous",
        (growth_vacuous as u8).to_string(),
    );
    push(
        &mut rows,
        "k_star_out_of_theory",
        ((k_star >= 2) as u8).to_string(),
    );

    let tau = config.tau_factor * s.sigma.max_abs();
    let probe: CoercivityReport = if tau > 0.0 {
        coercivity_probe(
            &spec,
            &s,
            tau,
            config.probe_samples.max(100),
            k_star,
            config.seed,
        )?
    } else {
        return Err(Error::InvalidProblem(
            "switching function vanishes identically".into(),
        ));
    };
    push(&mut rows, "tau", fmt_f(tau));
    push(&mut rows, "band_nodes", probe.band_nodes.to_string());
    push(&mut rows, "min_ratio_linear", fmt_f(probe.min_ratio_linear));
    push(
        &mut rows,
        "min_ratio_quadratic",
        fmt_f(probe.min_ratio_quadratic),
    );
    push(
        &mut rows,
        "min_ratio_combined",
        fmt_f(probe.min_ratio_combined),
    );
    push(&mut rows, "cone_vacuous", (probe.vacuous as u8).to_string());

    let nbb = non_bang_bang_measure(&spec, &s, 1e-6);
    let nbb_limit = config.reference_gap_tol / 1e-6;
    let pont = pontryagin_residual(&spec, &s);
    push(&mut rows, "non_bang_bang_measure", fmt_f(nbb));
    push(&mut rows, "non_bang_bang_limit", fmt_f(nbb_limit));
    push(&mut rows, "pontryagin_residual", fmt_f(pont));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut identity: f64 = 0.0;
    for _ in 0..10 {
        let v = unit_shape(g, &mut rng, NormKind::Linf);
        let a = lambda_direct(&spec, &s, &v)?;
        let b = lambda_dual(&spec, &s, &v)?;
        identity = identity.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
    }
    push(&mut rows, "lambda_identity_rel_error", fmt_f(identity));

    let ms = multistart(
        &spec,
        &SolveOptions {
            gap_tol: config.reference_gap_tol.max(config.solver.gap_tol),
            ..config.solver.clone()
        },
        &s.u,
        config.multistart,
    )?;
    push(&mut rows, "multistart_starts", ms.starts.to_string());
    push(
        &mut rows,
        "multistart_max_u_dist_L1",
        fmt_f(ms.max_control_distance),
    );

    let coercive = probe.vacuous || probe.coercive;
    let ok = coercive && nbb <= nbb_limit && pont >= -1e-8 && identity <= 1e-9;
    report.verdict = Verdict::from_bool(ok);
    report.note("k_star", k_star);
    report.note(
        "level_set_growth",
        if growth_vacuous {
            "vacuous"
        } else {
            "measured"
        },
    );
    report.note(
        "coercivity",
        if probe.vacuous {
            "vacuously coercive"
        } else if probe.coercive {
            "coercive"
        } else {
            "not coercive"
        },
    );
    report.note("multistart_agreement", fmt_f(ms.max_control_distance));
    report.table = Some(("quantity,value".into(), rows));
    report.snapshot = Some(s);
    Ok(report)
}

/// Smooth profile `phi(t) = cos(omega (t - 1/2))` with `a0 phi'(0) = b phi(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub omega: f64,
    pub a0: f64,
    pub bump: f64,
}

impl ManufacturedSolution {
    /// Solve `omega tan(omega / 2) = b / a0` on `(0, pi)` by bisection.
    pub fn new(a0: f64, bump: f64, robin: f64) -> Result<Self> {
        if !(a0 > 0.0 && robin > 0.0) {
            return Err(Error::InvalidProblem(
                "manufactured solution needs a0 > 0 and b > 0".into(),
            ));
        }
        let r = robin / a0;
        let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (0.5 * mid).tan() < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self {
            omega: 0.5 * (lo + hi),
            a0,
            bump,
        })
    }

    fn phi(&self, t: f64) -> (f64, f64) {
        let a = self.omega * (t - 0.5);
        (a.cos(), -self.omega * a.sin())
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.phi(x[0]).0 * self.phi(x[1]).0
    }

    /// `-div(a grad y*)`
    pub fn operator_value(&self, x: [f64; 2]) -> f64 {
        let (p1, d1) = self.phi(x[0]);
        let (p2, d2) = self.phi(x[1]);
        let y = p1 * p2;
        let a = self.a0 + self.bump * 16.0 * x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]);
        let ax = self.bump * 16.0 * (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]);
        let ay = self.bump * 16.0 * (1.0 - 2.0 * x[1]) * x[0] * (1.0 - x[0]);
        let lap = -2.0 * self.omega * self.omega * y;
        -a * lap - (ax * d1 * p2 + ay * p1 * d2)
    }
}

/// Nodal max error of the state solve against the manufactured solution.
pub fn manufactured_error(config: &ExperimentConfig, n: usize) -> Result<(f64, f64)> {
    let grid = GridSpec::square(n)?;
    let params = PresetParams {
        target: TargetMode::Smooth,
        ..config.params.clone()
    };
    let spec = build_preset(config.preset, &params, grid)?;
    let ms = ManufacturedSolution::new(params.diffusion, params.diffusion_bump, params.robin)?;
    let exact = ScalarField::from_fn(grid, |x| ms.value(x));
    let principal = match config.manufactured {
        ManufacturedMode::Analytic => ScalarField::from_fn(grid, |x| ms.operator_value(x)),
        ManufacturedMode::Discrete => spec.operator().apply(&exact)?,
    };
    let lift = ScalarField::from_vec_unchecked(
        grid,
        (0..grid.len())
            .map(|k| principal.values()[k] + spec.d(grid.coords(k), exact.values()[k]).value)
            .collect(),
    );
    let y = solve_state_general(&spec, &ScalarField::zeros(grid), Some(&lift), None, None)?.y;
    let err = y.sub(&exact)?;
    Ok((err.max_abs(), norm(&err, NormKind::L2)))
}

/// Mesh refinement against the manufactured state.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let errs: Vec<(usize, f64, f64)> = config
        .grid_sizes
        .par_iter()
        .map(|&n| manufactured_error(config, n).map(|(a, b)| (n, a, b)))
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new(ExperimentKind::Convergence);
    let rows = errs
        .iter()
        .map(|(n, linf, l2)| {
            format!(
                "{n},{},{},{}",
                fmt_f(1.0 / (*n - 1) as f64),
                fmt_f(*linf),
                fmt_f(*l2)
            )
        })
        .collect();
    report.table = Some(("n,h,error_linf,error_l2".into(), rows));
    let exact = errs.iter().all(|e| e.1 <= 1e-10);
    if exact {
        report.note("exact", true);
        report.verdict = Verdict::Pass;
        return Ok(report);
    }
    report.note("exact", false);
    let hs: Vec<f64> = errs.iter().map(|e| 1.0 / (e.0 - 1) as f64).collect();
    let es: Vec<f64> = errs.iter().map(|e| e.1).collect();
    let fit = crate::analysis::fit_power_law_min(&hs, &es, 3)?;
    report.verdict = Verdict::from_bool(fit.exponent >= 1.8);
    report.note("slope_threshold", fmt_f(1.8));
    report.rate = Some(fit);
    Ok(report)
}

/// Dispatch on `config.experiment`.
pub fn run(config: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<ExperimentReport> {
    match config.experiment {
        ExperimentKind::Solve => run_solve(config, cache_dir),
        ExperimentKind::TikhonovSweep => run_tikhonov_sweep(config, cache_dir),
        ExperimentKind::RhoSweep => run_rho_sweep(config, cache_dir),
        ExperimentKind::ZetaSweep => run_zeta_sweep(config, cache_dir),
        ExperimentKind::Diagnostics => run_diagnostics(config, cache_dir),
        ExperimentKind::Convergence => run_convergence(config),
    }
}
