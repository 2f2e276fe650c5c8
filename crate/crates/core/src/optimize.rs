//! Stationary points of the control problem and its perturbations.
//!
//! One conditional-gradient engine serves every variant. At the iterate `u`
//! it solves the (perturbed) state and adjoint, minimizes
//! `(sigma - rho) w + eta(x, y, w)` pointwise over `[b1, b2]` and moves
//! toward that minimizer with Armijo backtracking on the objective.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm, GridSpec, NormKind, ScalarField};
use crate::perturb::NonlinearPerturbation;
use crate::problem::{ControlField, ProblemSpec};
use crate::solvers::{
    objective, solve_adjoint_general, solve_state_general, switching, OptimalitySnapshot,
};

/// `|sigma - rho|` at or below this keeps the current control value.
pub const TIE_TOL: f64 = 1e-12;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Backtracking from the full step, halving up to 40 times.
    Armijo,
    /// Always take the full step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub damping: StepRule,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            gap_tol: 1e-10,
            damping: StepRule::Armijo,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument("gap_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Linear perturbation `(xi, eta, rho)` of the optimality system.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTriple {
    pub xi: ScalarField,
    pub eta: ScalarField,
    pub rho: ScalarField,
}

impl PerturbationTriple {
    pub fn zero(grid: GridSpec) -> Self {
        Self {
            xi: ScalarField::zeros(grid),
            eta: ScalarField::zeros(grid),
            rho: ScalarField::zeros(grid),
        }
    }

    pub fn rho_only(rho: ScalarField) -> Self {
        let g = *rho.grid();
        Self {
            xi: ScalarField::zeros(g),
            eta: ScalarField::zeros(g),
            rho,
        }
    }

    /// `|xi|_L2 + |eta|_L2 + |rho|_Linf`
    pub fn size(&self) -> f64 {
        norm(&self.xi, NormKind::L2)
            + norm(&self.eta, NormKind::L2)
            + norm(&self.rho, NormKind::Linf)
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        grid.check_same(self.xi.grid())?;
        grid.check_same(self.eta.grid())?;
        grid.check_same(self.rho.grid())
    }
}

/// A converged solve with its iteration record.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub snapshot: OptimalitySnapshot,
    pub iterations: usize,
    /// Stationarity measure at return.
    pub gap: f64,
    pub gap_history: Vec<f64>,
    pub objective_history: Vec<f64>,
}

struct Model<'a> {
    spec: &'a ProblemSpec,
    linear: Option<&'a PerturbationTriple>,
    zeta: Option<&'a NonlinearPerturbation>,
}

struct Iterate {
    u: ScalarField,
    y: ScalarField,
    objective: f64,
}

impl Model<'_> {
    fn xi_lift(&self) -> Option<&ScalarField> {
        self.linear.map(|t| &t.xi)
    }

    fn xi_fn(&self) -> Option<&crate::problem::PointwiseFn> {
        self.zeta.and_then(|z| z.xi.as_ref())
    }

    fn strictly_convex(&self) -> bool {
        self.zeta
            .is_some_and(|z| z.eta.is_some() && !z.eta_affine_in_u)
    }

    fn state(&self, u: &ScalarField, guess: Option<&ScalarField>) -> Result<(ScalarField, f64)> {
        let st = solve_state_general(self.spec, u, self.xi_lift(), self.xi_fn(), guess)?;
        let r = *st.residual_history.last().unwrap_or(&0.0);
        Ok((st.y, r))
    }

    fn objective(&self, u: &ScalarField, y: &ScalarField) -> Result<f64> {
        let g = *self.spec.grid();
        let mut j = objective(self.spec, u, y)?;
        if let Some(t) = self.linear {
            j += (0..g.len())
                .map(|k| {
                    g.weight(k)
                        * (t.eta.values()[k] * y.values()[k] - t.rho.values()[k] * u.values()[k])
                })
                .sum::<f64>();
        }
        if let Some(z) = self.zeta.filter(|z| z.eta.is_some()) {
            j += (0..g.len())
                .map(|k| g.weight(k) * z.eta_jet(g.coords(k), y.values()[k], u.values()[k]).value)
                .sum::<f64>();
        }
        Ok(j)
    }

    fn iterate(&self, u: ScalarField, guess: Option<&ScalarField>) -> Result<Iterate> {
        let (y, _) = self.state(&u, guess)?;
        let objective = self.objective(&u, &y)?;
        Ok(Iterate { u, y, objective })
    }

    /// Adjoint `p`, weak residual and the effective gradient `sigma - rho`.
    fn adjoint(&self, it: &Iterate) -> Result<(ScalarField, f64, ScalarField, ScalarField)> {
        let g = *self.spec.grid();
        let eta_y = self.zeta.filter(|z| z.eta.is_some()).map(|z| {
            let v = (0..g.len())
                .map(|k| {
                    z.eta_jet(g.coords(k), it.y.values()[k], it.u.values()[k])
                        .dy
                })
                .collect();
            ScalarField::from_vec_unchecked(g, v)
        });
        let (p, res) = solve_adjoint_general(
            self.spec,
            &it.u,
            &it.y,
            self.linear.map(|t| &t.eta),
            self.xi_fn(),
            eta_y.as_ref(),
        )?;
        let sigma = switching(self.spec, &it.y, &p)?;
        let c = match self.linear {
            Some(t) => sigma.sub(&t.rho)?,
            None => sigma.clone(),
        };
        Ok((p, res, sigma, c))
    }

    /// Pointwise minimizer of `c w + eta(x, y, w)` over `[b1, b2]`.
    fn pointwise_min(&self, k: usize, c: f64, y: f64, u: f64) -> f64 {
        let lo = self.spec.lower().values()[k];
        let hi = self.spec.upper().values()[k];
        let x = self.spec.grid().coords(k);
        let zeta = match self.zeta.filter(|z| z.eta.is_some()) {
            Some(z) => z,
            None => return vertex(c, lo, hi, u),
        };
        if zeta.eta_affine_in_u {
            return vertex(c + zeta.eta_jet(x, y, u).du, lo, hi, u);
        }
        let slope = |w: f64| c + zeta.eta_jet(x, y, w).du;
        if slope(lo) >= 0.0 {
            return lo;
        }
        if slope(hi) <= 0.0 {
            return hi;
        }
        // safeguarded Newton on the monotone slope
        let (mut a, mut b) = (lo, hi);
        let mut w = 0.5 * (a + b);
        for _ in 0..100 {
            let jet = zeta.eta_jet(x, y, w);
            let f = c + jet.du;
            if f == 0.0 {
                return w;
            }
            if f > 0.0 {
                b = w;
            } else {
                a = w;
            }
            let newton = if jet.duu > 0.0 {
                w - f / jet.duu
            } else {
                f64::NAN
            };
            let next = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - w).abs() <= 1e-15 * (1.0 + w.abs()) {
                return next;
            }
            w = next;
        }
        w
    }

    /// `sum w [c (u - w) + eta(u) - eta(w)]`, nonnegative for the exact
    /// pointwise minimizer.
    fn gap(&self, c: &ScalarField, it: &Iterate, target: &ScalarField) -> f64 {
        let g = *self.spec.grid();
        (0..g.len())
            .map(|k| {
                let (u, w) = (it.u.values()[k], target.values()[k]);
                let mut v = c.values()[k] * (u - w);
                if let Some(z) = self.zeta.filter(|z| z.eta.is_some()) {
                    let x = g.coords(k);
                    let y = it.y.values()[k];
                    v += z.eta_jet(x, y, u).value - z.eta_jet(x, y, w).value;
                }
                g.weight(k) * v
            })
            .sum()
    }

    /// Directional derivative of the objective along `target - u`.
    fn slope(&self, c: &ScalarField, it: &Iterate, target: &ScalarField) -> f64 {
        let g = *self.spec.grid();
        (0..g.len())
            .map(|k| {
                let (u, w) = (it.u.values()[k], target.values()[k]);
                let mut ck = c.values()[k];
                if let Some(z) = self.zeta.filter(|z| z.eta.is_some()) {
                    ck += z.eta_jet(g.coords(k), it.y.values()[k], u).du;
                }
                g.weight(k) * ck * (w - u)
            })
            .sum()
    }

    /// Derivative of the objective at `it` along `dir`.
    fn slope_along(&self, c: &ScalarField, it: &Iterate, dir: &ScalarField) -> f64 {
        let g = *self.spec.grid();
        (0..g.len())
            .map(|k| {
                let mut ck = c.values()[k];
                if let Some(z) = self.zeta.filter(|z| z.eta.is_some()) {
                    ck += z
                        .eta_jet(g.coords(k), it.y.values()[k], it.u.values()[k])
                        .du;
                }
                g.weight(k) * ck * dir.values()[k]
            })
            .sum()
    }

    fn run(&self, opts: &SolveOptions, start: ScalarField) -> Result<SolveOutcome> {
        opts.validate()?;
        let g = *self.spec.grid();
        let mut it = self.iterate(start, None)?;
        let mut gaps = Vec::new();
        let mut objectives = vec![it.objective];
        for iter in 0..=opts.max_iters {
            let (p, adjoint_residual, sigma, c) = self.adjoint(&it)?;
            let target: Vec<f64> = (0..g.len())
                .map(|k| self.pointwise_min(k, c.values()[k], it.y.values()[k], it.u.values()[k]))
                .collect();
            let target = ScalarField::from_vec_unchecked(g, target);
            let gap = self.gap(&c, &it, &target);
            if gap < -1e-12 {
                return Err(Error::NegativeGap {
                    iteration: iter,
                    gap,
                });
            }
            let gap = gap.max(0.0);
            gaps.push(gap);
            let measure = if self.strictly_convex() {
                norm(&target.sub(&it.u)?, NormKind::L1)
            } else {
                gap
            };
            if measure <= opts.gap_tol {
                let (_, state_residual) = self.state(&it.u, Some(&it.y))?;
                return Ok(SolveOutcome {
                    snapshot: OptimalitySnapshot {
                        u: ControlField::new_unchecked(it.u),
                        y: it.y,
                        p,
                        sigma,
                        state_residual,
                        adjoint_residual,
                    },
                    iterations: iter,
                    gap: measure,
                    gap_history: gaps,
                    objective_history: objectives,
                });
            }
            if iter == opts.max_iters {
                break;
            }
            let dir = target.sub(&it.u)?;
            let slope = self.slope(&c, &it, &target);
            it = self.step(opts, iter, it, &dir, slope, gap)?;
            objectives.push(it.objective);
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iters,
            last_gap: *gaps.last().unwrap_or(&f64::NAN),
            gap_history: gaps,
        })
    }

    fn step(
        &self,
        opts: &SolveOptions,
        iteration: usize,
        it: Iterate,
        dir: &ScalarField,
        slope: f64,
        gap: f64,
    ) -> Result<Iterate> {
        let lo = self.spec.lower();
        let hi = self.spec.upper();
        let trial_at = |theta: f64| -> Result<Iterate> {
            let u = if theta == 1.0 {
                it.u.add(dir)?
            } else {
                it.u.axpy(theta, dir)?
            };
            // stay inside the box despite rounding in the convex combination
            let u = u.zip_map(lo, f64::max)?.zip_map(hi, f64::min)?;
            self.iterate(u, Some(&it.y))
        };
        if opts.damping == StepRule::Full {
            return trial_at(1.0);
        }
        // objective rounding: differences below this are not resolvable
        let slack = 64.0 * f64::EPSILON * (1.0 + it.objective.abs());
        if gap <= 1e3 * slack {
            // secant on the directional derivative, which stays accurate
            // where objective values no longer separate
            let full = trial_at(1.0)?;
            let (_, _, _, c1) = self.adjoint(&full)?;
            let slope1 = self.slope_along(&c1, &full, dir);
            if slope1 <= 0.0 {
                return Ok(full);
            }
            let theta = slope / (slope - slope1);
            if theta.is_finite() && theta > 0.0 {
                return trial_at(theta.min(1.0));
            }
        }
        let mut theta = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial = trial_at(theta)?;
            if trial.objective <= it.objective + ARMIJO_C * theta * slope + slack {
                return Ok(trial);
            }
            theta *= 0.5;
        }
        Err(Error::LineSearch { iteration, gap })
    }
}

fn vertex(c: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if c > TIE_TOL {
        lo
    } else if c < -TIE_TOL {
        hi
    } else {
        u
    }
}

fn start_control(spec: &ProblemSpec, warm_start: Option<&ControlField>) -> Result<ScalarField> {
    match warm_start {
        Some(u) => {
            spec.grid().check_same(u.field().grid())?;
            Ok(u.field().clone())
        }
        None => Ok(spec
            .project_admissible(&ScalarField::zeros(*spec.grid()))?
            .into_field()),
    }
}

/// Conditional gradient for the variational inequality, optionally perturbed
/// by `(xi, eta, rho)`.
pub fn solve_bangbang(
    spec: &ProblemSpec,
    opts: &SolveOptions,
    perturbation: Option<&PerturbationTriple>,
) -> Result<SolveOutcome> {
    solve_bangbang_from(spec, opts, perturbation, None)
}

pub fn solve_bangbang_from(
    spec: &ProblemSpec,
    opts: &SolveOptions,
    perturbation: Option<&PerturbationTriple>,
    warm_start: Option<&ControlField>,
) -> Result<SolveOutcome> {
    if let Some(t) = perturbation {
        t.check(spec.grid())?;
    }
    let model = Model {
        spec,
        linear: perturbation,
        zeta: None,
    };
    model.run(opts, start_control(spec, warm_start)?)
}

/// Stationary point of the problem with `(eps/2) ∫ u²` added to the cost.
pub fn solve_tikhonov(
    spec: &ProblemSpec,
    epsilon: f64,
    opts: &SolveOptions,
    warm_start: Option<&ControlField>,
) -> Result<SolveOutcome> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    solve_nonlinear_perturbed_from(
        spec,
        &NonlinearPerturbation::tikhonov(epsilon),
        opts,
        warm_start,
    )
}

/// Stationary point of the problem perturbed by `zeta = (xi, eta)`.
pub fn solve_nonlinear_perturbed(
    spec: &ProblemSpec,
    zeta: &NonlinearPerturbation,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    solve_nonlinear_perturbed_from(spec, zeta, opts, None)
}

pub fn solve_nonlinear_perturbed_from(
    spec: &ProblemSpec,
    zeta: &NonlinearPerturbation,
    opts: &SolveOptions,
    warm_start: Option<&ControlField>,
) -> Result<SolveOutcome> {
    zeta.check_guards(spec)?;
    let model = Model {
        spec,
        linear: None,
        zeta: Some(zeta),
    };
    model.run(opts, start_control(spec, warm_start)?)
}

/// Admissible control with independent uniform values in `[b1, b2]`.
pub fn random_control(spec: &ProblemSpec, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.lower().values(), spec.upper().values());
    let v = (0..spec.grid().len())
        .map(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>())
        .collect();
    ControlField::new_unchecked(ScalarField::from_vec_unchecked(*spec.grid(), v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartReport {
    pub starts: usize,
    /// Largest `|u_i - u_ref|_L1` over the random starts.
    pub max_control_distance: f64,
    pub objectives: Vec<f64>,
}

/// Re-solve from `starts` random admissible controls and compare with
/// `reference`. Agreement is evidence of uniqueness, not a proof.
pub fn multistart(
    spec: &ProblemSpec,
    opts: &SolveOptions,
    reference: &ControlField,
    starts: usize,
) -> Result<MultistartReport> {
    use rayon::prelude::*;
    let runs: Vec<(f64, f64)> = (0..starts)
        .into_par_iter()
        .map(|i| {
            let u0 = random_control(spec, opts.seed.wrapping_add(1 + i as u64));
            let out = solve_bangbang_from(spec, opts, None, Some(&u0))?;
            let d = norm(
                &out.snapshot.u.field().sub(reference.field())?,
                NormKind::L1,
            );
            Ok((d, *out.objective_history.last().unwrap_or(&f64::NAN)))
        })
        .collect::<Result<_>>()?;
    Ok(MultistartReport {
        starts,
        max_control_distance: runs.iter().map(|r| r.0).fold(0.0, f64::max),
        objectives: runs.iter().map(|r| r.1).collect(),
    })
}

/// Quadrature measure of nodes where `u` is strictly between the bounds
/// although `|sigma| > threshold`.
pub fn non_bang_bang_measure(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    threshold: f64,
) -> f64 {
    let g = *spec.grid();
    (0..g.len())
        .filter(|&k| {
            let u = snapshot.u.field().values()[k];
            snapshot.sigma.values()[k].abs() > threshold
                && u != spec.lower().values()[k]
                && u != spec.upper().values()[k]
        })
        .fold(0.0, |acc, k| acc + g.weight(k))
}

/// `min_x sigma (w - u)` over both vertex choices `w`; nonnegative at a
/// solution of the variational inequality.
pub fn pontryagin_residual(spec: &ProblemSpec, snapshot: &OptimalitySnapshot) -> f64 {
    let u = snapshot.u.field().values();
    snapshot
        .sigma
        .values()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let a = s * (spec.lower().values()[k] - u[k]);
            let b = s * (spec.upper().values()[k] - u[k]);
            a.min(b)
        })
        .fold(f64::INFINITY, f64::min)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"BBSNAP01";

/// Binary layout, little endian: magic `BBSNAP01`, `nx: u64`, `ny: u64`,
/// `state_residual: f64`, `adjoint_residual: f64`, then `nx*ny` values each of
/// `u`, `y`, `p`, `sigma` in node order `k = j*nx + i`.
pub fn write_snapshot_binary(path: &Path, snapshot: &OptimalitySnapshot) -> Result<()> {
    let g = snapshot.y.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(g.nx() as u64).to_le_bytes())?;
    w.write_all(&(g.ny() as u64).to_le_bytes())?;
    w.write_all(&snapshot.state_residual.to_le_bytes())?;
    w.write_all(&snapshot.adjoint_residual.to_le_bytes())?;
    for f in [
        snapshot.u.field(),
        &snapshot.y,
        &snapshot.p,
        &snapshot.sigma,
    ] {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_binary(path: &Path) -> Result<OptimalitySnapshot> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 40 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
    let nx = u64::from_le_bytes(word(0)) as usize;
    let ny = u64::from_le_bytes(word(1)) as usize;
    let grid = GridSpec::new(nx, ny)?;
    let n = grid.len();
    if bytes.len() != 40 + 32 * n {
        return Err(Error::Format(format!(
            "expected {} bytes for a {nx}x{ny} snapshot, found {}",
            40 + 32 * n,
            bytes.len()
        )));
    }
    let values: Vec<f64> = (0..4 * n)
        .map(|i| f64::from_le_bytes(word(4 + i)))
        .collect();
    let field = |i: usize| ScalarField::new(grid, values[i * n..(i + 1) * n].to_vec());
    Ok(OptimalitySnapshot {
        u: ControlField::new_unchecked(field(0)?),
        y: field(1)?,
        p: field(2)?,
        sigma: field(3)?,
        state_residual: f64::from_le_bytes(word(2)),
        adjoint_residual: f64::from_le_bytes(word(3)),
    })
}

/// CSV layout: a line `# nx,ny,state_residual,adjoint_residual` with its
/// values, then the header `i,j,x1,x2,u,y,p,sigma` and one row per node in
/// order `k = j*nx + i`. Floats are written with 17 significant digits.
pub fn write_snapshot_csv(path: &Path, snapshot: &OptimalitySnapshot) -> Result<()> {
    let g = *snapshot.y.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# nx,ny,state_residual,adjoint_residual")?;
    writeln!(
        w,
        "# {},{},{:.17e},{:.17e}",
        g.nx(),
        g.ny(),
        snapshot.state_residual,
        snapshot.adjoint_residual
    )?;
    writeln!(w, "i,j,x1,x2,u,y,p,sigma")?;
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        let x = g.coords(k);
        writeln!(
            w,
            "{i},{j},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            x[0],
            x[1],
            snapshot.u.field().values()[k],
            snapshot.y.values()[k],
            snapshot.p.values()[k],
            snapshot.sigma.values()[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_csv(path: &Path) -> Result<OptimalitySnapshot> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("snapshot CSV ends early".into()))?
            .map_err(Error::from)
    };
    next()?;
    let meta = next()?;
    let meta: Vec<&str> = meta.trim_start_matches('#').trim().split(',').collect();
    if meta.len() != 4 {
        return Err(Error::Format("bad snapshot metadata line".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad number `{s}`")))
    };
    let nx: usize = meta[0]
        .trim()
        .parse()
        .map_err(|_| Error::Format("bad nx".into()))?;
    let ny: usize = meta[1]
        .trim()
        .parse()
        .map_err(|_| Error::Format("bad ny".into()))?;
    let grid = GridSpec::new(nx, ny)?;
    let (sr, ar) = (num(meta[2])?, num(meta[3])?);
    next()?;
    let n = grid.len();
    let mut cols = vec![vec![0.0; n]; 4];
    for k in 0..n {
        let line = next()?;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Format(format!(
                "row {k} has {} columns",
                parts.len()
            )));
        }
        for c in 0..4 {
            cols[c][k] = num(parts[4 + c])?;
        }
    }
    let mut it = cols.into_iter();
    let mut field = || ScalarField::new(grid, it.next().unwrap());
    Ok(OptimalitySnapshot {
        u: ControlField::new_unchecked(field()?),
        y: field()?,
        p: field()?,
        sigma: field()?,
        state_residual: sr,
        adjoint_residual: ar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_preset, Preset, PresetParams, TargetMode};

    fn manufactured(n: usize) -> ProblemSpec {
        build_preset(
            Preset::LinearTracking,
            &PresetParams::defaults(),
            GridSpec::square(n).unwrap(),
        )
        .unwrap()
    }

    fn exact_control(spec: &ProblemSpec) -> ControlField {
        let s0 = ScalarField::from_fn(*spec.grid(), |x| PresetParams::defaults().s0(x));
        spec.vertex_for(&s0).unwrap()
    }

    #[test]
    fn recovers_manufactured_bang_bang() {
        let spec = manufactured(33);
        let out = solve_bangbang(&spec, &SolveOptions::default(), None).unwrap();
        assert_eq!(out.snapshot.u, exact_control(&spec));
        assert!(non_bang_bang_measure(&spec, &out.snapshot, 1e-6) == 0.0);
        assert!(pontryagin_residual(&spec, &out.snapshot) >= -1e-8);
        for w in out.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
    }

    #[test]
    fn rho_shift_moves_switching_curve() {
        let spec = manufactured(33);
        let g = *spec.grid();
        let c = 0.05;
        let t = PerturbationTriple::rho_only(ScalarField::constant(g, c));
        let base = solve_bangbang(&spec, &SolveOptions::default(), None).unwrap();
        let pert = solve_bangbang(&spec, &SolveOptions::default(), Some(&t)).unwrap();
        // p stays at zero for the shifted vertex only if the target is unchanged,
        // so compare against the vertex rule applied to the returned sigma
        let s = &pert.snapshot.sigma;
        for k in 0..g.len() {
            let expected = vertex(s.values()[k] - c, -1.0, 1.0, f64::NAN);
            if (s.values()[k] - c).abs() > 1e-9 {
                assert_eq!(pert.snapshot.u.field().values()[k], expected);
            }
            let b = base.snapshot.sigma.values()[k];
            if (b - c).abs() > 0.2 && b.abs() > 0.2 {
                assert_eq!(
                    pert.snapshot.u.field().values()[k],
                    base.snapshot.u.field().values()[k]
                );
            }
        }
    }

    #[test]
    fn tikhonov_limits() {
        let spec = manufactured(17);
        let g = *spec.grid();
        let out = solve_tikhonov(&spec, 1e3, &SolveOptions::default(), None).unwrap();
        assert!(out.snapshot.u.field().max_abs() < 1e-2);
        let opts = SolveOptions::default();
        let eps = 1e-2;
        let out = solve_tikhonov(&spec, eps, &opts, None).unwrap();
        let clamp = out.snapshot.sigma.map(|s| (-s / eps).clamp(-1.0, 1.0));
        let r = norm(&clamp.sub(out.snapshot.u.field()).unwrap(), NormKind::L1);
        assert!(r <= 10.0 * opts.gap_tol, "{r}");
        let direct =
            solve_nonlinear_perturbed(&spec, &NonlinearPerturbation::tikhonov(eps), &opts).unwrap();
        assert_eq!(direct.snapshot.u, out.snapshot.u);
        assert!(!g.is_empty());
    }

    #[test]
    fn zero_zeta_matches_unperturbed() {
        let spec = build_preset(
            Preset::CubicMonotone,
            &PresetParams {
                target: TargetMode::Smooth,
                yd_amp: 1.0,
                ..PresetParams::defaults()
            },
            GridSpec::square(17).unwrap(),
        )
        .unwrap();
        let opts = SolveOptions::default();
        let a = solve_bangbang(&spec, &opts, None).unwrap();
        let b = solve_nonlinear_perturbed(&spec, &NonlinearPerturbation::zero(), &opts).unwrap();
        assert_eq!(a.snapshot.u, b.snapshot.u);
        assert_eq!(a.snapshot.y, b.snapshot.y);
    }

    #[test]
    fn state_shift_equals_modified_preset() {
        let g = GridSpec::square(17).unwrap();
        let params = PresetParams {
            target: TargetMode::Smooth,
            yd_amp: 1.0,
            d_linear: Some(0.0),
            ..PresetParams::defaults()
        };
        let spec = build_preset(Preset::LinearTracking, &params, g).unwrap();
        let shifted = build_preset(
            Preset::LinearTracking,
            &PresetParams {
                d_linear: Some(0.7),
                ..params
            },
            g,
        )
        .unwrap();
        let opts = SolveOptions::default();
        let a = solve_nonlinear_perturbed(&spec, &NonlinearPerturbation::state_shift(0.7), &opts)
            .unwrap();
        let b = solve_bangbang(&shifted, &opts, None).unwrap();
        assert_eq!(a.snapshot.u, b.snapshot.u);
        assert!(a.snapshot.y.sub(&b.snapshot.y).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn rejects_guard_violation() {
        let spec = manufactured(9);
        let err = solve_nonlinear_perturbed(
            &spec,
            &NonlinearPerturbation::state_shift(-1.0),
            &SolveOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MonotonicityGuard { .. }));
    }

    #[test]
    fn snapshot_round_trips() {
        let spec = manufactured(9);
        let out = solve_bangbang(&spec, &SolveOptions::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("s.bin");
        write_snapshot_binary(&b, &out.snapshot).unwrap();
        let back = read_snapshot_binary(&b).unwrap();
        assert_eq!(back.sigma, out.snapshot.sigma);
        assert_eq!(back.u, out.snapshot.u);
        let c = dir.path().join("s.csv");
        write_snapshot_csv(&c, &out.snapshot).unwrap();
        let back = read_snapshot_csv(&c).unwrap();
        assert_eq!(back.p, out.snapshot.p);
        assert_eq!(back.y, out.snapshot.y);
    }

    #[test]
    fn nonconvergence_carries_history() {
        let spec = build_preset(
            Preset::CubicMonotone,
            &PresetParams {
                target: TargetMode::Smooth,
                yd_amp: 1.0,
                ..PresetParams::defaults()
            },
            GridSpec::square(9).unwrap(),
        )
        .unwrap();
        let opts = SolveOptions {
            max_iters: 1,
            gap_tol: 1e-300,
            ..SolveOptions::default()
        };
        match solve_bangbang(&spec, &opts, None) {
            Err(Error::NonConvergence { gap_history, .. }) => assert_eq!(gap_history.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
