//! Problem instances: coefficients of the state equation and the cost, the
//! control bounds, and the admissible set.
//!
//! The state equation is `L y + d(x, y) = beta(x) u` and the cost is
//! `∫ w(x, y) + s(x, y) u dx` over controls with `b1 <= u <= b2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticOperator;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// Value and first two `y`-derivatives of a pointwise coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dy: f64,
    pub dyy: f64,
}

impl Jet {
    pub fn new(value: f64, dy: f64, dyy: f64) -> Self {
        Self { value, dy, dyy }
    }
}

/// Pointwise coefficient `(x, y) -> (f, f_y, f_yy)`.
pub type PointwiseFn = Arc<dyn Fn([f64; 2], f64) -> Jet + Send + Sync>;

/// Newton and line-search settings shared by all solves on one problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max-norm residual at which the state Newton iteration stops.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub newton_max_halvings: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max_iters: 50,
            newton_max_halvings: 30,
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    grid: GridSpec,
    operator: Arc<EllipticOperator>,
    beta: ScalarField,
    lower: ScalarField,
    upper: ScalarField,
    d_eval: PointwiseFn,
    w_eval: PointwiseFn,
    s_eval: PointwiseFn,
    tolerances: Tolerances,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

/// Range of `y` on which monotonicity of `d` is sampled.
const SAMPLE_Y_RANGE: f64 = 10.0;

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        grid: GridSpec,
        a_field: &ScalarField,
        b_boundary: &ScalarField,
        beta: ScalarField,
        lower: ScalarField,
        upper: ScalarField,
        d_eval: PointwiseFn,
        w_eval: PointwiseFn,
        s_eval: PointwiseFn,
    ) -> Result<Self> {
        for f in [&beta, &lower, &upper] {
            grid.check_same(f.grid())?;
        }
        let operator = Arc::new(EllipticOperator::assemble(grid, a_field, b_boundary)?);
        let spec = Self {
            name: name.into(),
            grid,
            operator,
            beta,
            lower,
            upper,
            d_eval,
            w_eval,
            s_eval,
            tolerances: Tolerances::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (k, (lo, hi)) in self
            .lower
            .values()
            .iter()
            .zip(self.upper.values())
            .enumerate()
        {
            if lo > hi {
                return Err(Error::InvalidProblem(format!(
                    "lower bound {lo} exceeds upper bound {hi} at node {k}"
                )));
            }
        }
        let ys: Vec<f64> = (0..=20)
            .map(|i| -SAMPLE_Y_RANGE + 2.0 * SAMPLE_Y_RANGE * i as f64 / 20.0)
            .collect();
        let stride = (self.grid.len() / 50).max(1);
        for k in (0..self.grid.len()).step_by(stride) {
            let x = self.grid.coords(k);
            for &y in &ys {
                for (label, eval) in [
                    ("d", &self.d_eval),
                    ("w", &self.w_eval),
                    ("s", &self.s_eval),
                ] {
                    let j = eval(x, y);
                    if !(j.value.is_finite() && j.dy.is_finite() && j.dyy.is_finite()) {
                        return Err(Error::InvalidProblem(format!(
                            "{label} is not finite at x = {x:?}, y = {y}"
                        )));
                    }
                }
                let dy = (self.d_eval)(x, y).dy;
                if dy < 0.0 {
                    return Err(Error::MonotonicityGuard {
                        x1: x[0],
                        x2: x[1],
                        y,
                        value: dy,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn operator(&self) -> &EllipticOperator {
        &self.operator
    }

    pub fn beta(&self) -> &ScalarField {
        &self.beta
    }

    pub fn lower(&self) -> &ScalarField {
        &self.lower
    }

    pub fn upper(&self) -> &ScalarField {
        &self.upper
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn d(&self, x: [f64; 2], y: f64) -> Jet {
        (self.d_eval)(x, y)
    }

    pub fn w(&self, x: [f64; 2], y: f64) -> Jet {
        (self.w_eval)(x, y)
    }

    pub fn s(&self, x: [f64; 2], y: f64) -> Jet {
        (self.s_eval)(x, y)
    }

    pub fn d_eval(&self) -> &PointwiseFn {
        &self.d_eval
    }

    pub fn w_eval(&self) -> &PointwiseFn {
        &self.w_eval
    }

    pub fn s_eval(&self) -> &PointwiseFn {
        &self.s_eval
    }

    /// Same instance with the state nonlinearity replaced.
    pub fn with_d(&self, d_eval: PointwiseFn) -> Result<Self> {
        let mut out = self.clone();
        out.d_eval = d_eval;
        out.validate()?;
        Ok(out)
    }

    /// Same instance with the tracking/cost integrand `w` replaced.
    pub fn with_w(&self, w_eval: PointwiseFn) -> Self {
        let mut out = self.clone();
        out.w_eval = w_eval;
        out
    }

    /// Evaluate a pointwise coefficient along a field of `y` values.
    pub fn eval_field(&self, eval: &PointwiseFn, y: &ScalarField) -> Result<Vec<Jet>> {
        self.grid.check_same(y.grid())?;
        Ok(y.values()
            .iter()
            .enumerate()
            .map(|(k, &yk)| eval(self.grid.coords(k), yk))
            .collect())
    }

    /// Pointwise projection onto `[b1, b2]`.
    pub fn project_admissible(&self, v: &ScalarField) -> Result<ControlField> {
        project_admissible(v, self)
    }

    /// The bang-bang control picking `b1` where `sign > 0`, `b2` where
    /// `sign < 0` and the midpoint on exact zeros.
    pub fn vertex_for(&self, sign: &ScalarField) -> Result<ControlField> {
        self.grid.check_same(sign.grid())?;
        let vals = sign
            .values()
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .map(|(&s, (&lo, &hi))| {
                if s > 0.0 {
                    lo
                } else if s < 0.0 {
                    hi
                } else {
                    0.5 * (lo + hi)
                }
            })
            .collect();
        Ok(ControlField(ScalarField::from_vec_unchecked(
            self.grid, vals,
        )))
    }
}

/// A control satisfying `b1 <= u <= b2` nodewise.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField(ScalarField);

impl ControlField {
    pub fn new(u: ScalarField, spec: &ProblemSpec) -> Result<Self> {
        spec.grid().check_same(u.grid())?;
        for (k, ((v, lo), hi)) in u
            .values()
            .iter()
            .zip(spec.lower().values())
            .zip(spec.upper().values())
            .enumerate()
        {
            if v < lo || v > hi {
                return Err(Error::InvalidArgument(format!(
                    "control value {v} at node {k} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self(u))
    }

    pub(crate) fn new_unchecked(u: ScalarField) -> Self {
        Self(u)
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn into_field(self) -> ScalarField {
        self.0
    }
}

impl AsRef<ScalarField> for ControlField {
    fn as_ref(&self) -> &ScalarField {
        &self.0
    }
}

/// `min(b2, max(b1, v))` nodewise.
pub fn project_admissible(v: &ScalarField, spec: &ProblemSpec) -> Result<ControlField> {
    spec.grid().check_same(v.grid())?;
    let vals = v
        .values()
        .iter()
        .zip(spec.lower().values().iter().zip(spec.upper().values()))
        .map(|(&x, (&lo, &hi))| x.max(lo).min(hi))
        .collect();
    Ok(ControlField(ScalarField::from_vec_unchecked(
        *spec.grid(),
        vals,
    )))
}

/// Nodal derivatives of `H(x, y, p, u) = w + s u + p (beta u - d)`.
#[derive(Debug, Clone)]
pub struct HamiltonianDerivatives {
    pub h_y: ScalarField,
    pub h_u: ScalarField,
    pub h_yy: ScalarField,
    pub h_yu: ScalarField,
    pub h_yp: ScalarField,
    pub h_up: ScalarField,
}

pub fn hamiltonian(
    spec: &ProblemSpec,
    y: &ScalarField,
    p: &ScalarField,
    u: &ScalarField,
) -> Result<ScalarField> {
    let g = *spec.grid();
    g.check_same(p.grid())?;
    g.check_same(u.grid())?;
    let vals = (0..g.len())
        .map(|k| {
            let x = g.coords(k);
            let (yk, pk, uk) = (y.values()[k], p.values()[k], u.values()[k]);
            spec.w(x, yk).value
                + spec.s(x, yk).value * uk
                + pk * (spec.beta().values()[k] * uk - spec.d(x, yk).value)
        })
        .collect();
    Ok(ScalarField::from_vec_unchecked(g, vals))
}

pub fn hamiltonian_derivatives(
    spec: &ProblemSpec,
    y: &ScalarField,
    p: &ScalarField,
    u: &ScalarField,
) -> Result<HamiltonianDerivatives> {
    let g = *spec.grid();
    g.check_same(y.grid())?;
    g.check_same(p.grid())?;
    g.check_same(u.grid())?;
    let n = g.len();
    let mut out = [
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    ];
    for k in 0..n {
        let x = g.coords(k);
        let (yk, pk, uk) = (y.values()[k], p.values()[k], u.values()[k]);
        let (d, w, s) = (spec.d(x, yk), spec.w(x, yk), spec.s(x, yk));
        let beta = spec.beta().values()[k];
        out[0][k] = w.dy + s.dy * uk - pk * d.dy;
        out[1][k] = s.value + beta * pk;
        out[2][k] = w.dyy + s.dyy * uk - pk * d.dyy;
        out[3][k] = s.dy;
        out[4][k] = -d.dy;
        out[5][k] = beta;
    }
    let [h_y, h_u, h_yy, h_yu, h_yp, h_up] = out.map(|v| ScalarField::from_vec_unchecked(g, v));
    Ok(HamiltonianDerivatives {
        h_y,
        h_u,
        h_yy,
        h_yu,
        h_yp,
        h_up,
    })
}

/// Built-in problem families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `d = 0`, `w = (y - y_d)^2 / 2`, `s = s0(x)`.
    LinearTracking,
    /// `d = y^3 + y`, `w = (y - y_d)^2 / 2`, `s = s0(x)`.
    CubicMonotone,
    /// `d = y`, `w = (y - y_d)^2 / 2`, `s = s0(x) (1 + y^2)`.
    BilinearCost,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "linear-tracking" => Ok(Self::LinearTracking),
            "cubic-monotone" => Ok(Self::CubicMonotone),
            "bilinear-cost" => Ok(Self::BilinearCost),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearTracking => "linear-tracking",
            Self::CubicMonotone => "cubic-monotone",
            Self::BilinearCost => "bilinear-cost",
        }
    }

    pub fn all() -> [Preset; 3] {
        [
            Self::LinearTracking,
            Self::CubicMonotone,
            Self::BilinearCost,
        ]
    }
}

/// How the tracking target `y_d` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// `y_d` is the discrete state of the bang-bang control `-sign(s0)`
    /// (plus the optional bump), so that control is optimal with `p = 0`
    /// when the bump amplitude is zero.
    Manufactured,
    /// `y_d = yd_amp * sin(pi x1) sin(pi x2)`.
    Smooth,
}

/// Parameters shared by the presets. Missing entries take the preset
/// defaults from [`PresetParams::defaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetParams {
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
    pub diffusion: f64,
    /// Amplitude of the interior bump `16 x1 x2 (1-x1)(1-x2)` added to `a`.
    pub diffusion_bump: f64,
    pub robin: f64,
    /// `s0(x) = s_slope * (x1 + s_tilt * x2 - s_shift) + s_offset`
    pub s_slope: f64,
    pub s_tilt: f64,
    pub s_shift: f64,
    pub s_offset: f64,
    pub target: TargetMode,
    pub yd_amp: f64,
    /// Overrides of the preset's `d = d_linear y + d_cubic y^3`.
    pub d_linear: Option<f64>,
    pub d_cubic: Option<f64>,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self::defaults()
    }
}

impl PresetParams {
    pub fn defaults() -> Self {
        Self {
            beta: 1.0,
            lower: -1.0,
            upper: 1.0,
            diffusion: 1.0,
            diffusion_bump: 0.0,
            robin: 1.0,
            s_slope: 0.4,
            s_tilt: 0.618_033_988_749_894_9,
            s_shift: 0.8,
            s_offset: 0.0,
            target: TargetMode::Manufactured,
            yd_amp: 0.0,
            d_linear: None,
            d_cubic: None,
        }
    }

    pub fn s0(&self, x: [f64; 2]) -> f64 {
        self.s_slope * (x[0] + self.s_tilt * x[1] - self.s_shift) + self.s_offset
    }
}

fn bump(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// Build a preset instance on `grid`.
pub fn build_preset(preset: Preset, params: &PresetParams, grid: GridSpec) -> Result<ProblemSpec> {
    if !(params.lower <= params.upper) {
        return Err(Error::InvalidProblem(
            "lower bound above upper bound".into(),
        ));
    }
    let (d_lin, d_cub, s_quad) = match preset {
        Preset::LinearTracking => (0.0, 0.0, 0.0),
        Preset::CubicMonotone => (1.0, 1.0, 0.0),
        Preset::BilinearCost => (1.0, 0.0, 1.0),
    };
    let d_lin = params.d_linear.unwrap_or(d_lin);
    let d_cub = params.d_cubic.unwrap_or(d_cub);
    if d_lin < 0.0 || d_cub < 0.0 {
        return Err(Error::InvalidProblem(
            "d coefficients must be nonnegative for monotonicity".into(),
        ));
    }

    let bump_amp = params.diffusion_bump;
    let a_field = ScalarField::from_fn(grid, |x| {
        params.diffusion + bump_amp * 16.0 * x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1])
    });
    let b_boundary = ScalarField::constant(grid, params.robin);
    let beta = ScalarField::constant(grid, params.beta);
    let lower = ScalarField::constant(grid, params.lower);
    let upper = ScalarField::constant(grid, params.upper);

    let d_eval: PointwiseFn = Arc::new(move |_x, y| {
        Jet::new(
            d_lin * y + d_cub * y * y * y,
            d_lin + 3.0 * d_cub * y * y,
            6.0 * d_cub * y,
        )
    });
    let p = params.clone();
    let s_eval: PointwiseFn = Arc::new(move |x, y| {
        let s0 = p.s0(x);
        Jet::new(
            s0 * (1.0 + s_quad * y * y),
            s0 * 2.0 * s_quad * y,
            s0 * 2.0 * s_quad,
        )
    });
    let tracking = |target: Arc<Vec<f64>>| -> PointwiseFn {
        let g = grid;
        Arc::new(move |x, y| {
            let yd = sample_nodal(&g, &target, x);
            let r = y - yd;
            Jet::new(0.5 * r * r, r, 1.0)
        })
    };

    let amp = params.yd_amp;
    let smooth_target: Vec<f64> = (0..grid.len())
        .map(|k| amp * bump(grid.coords(k)))
        .collect();
    let spec = ProblemSpec::new(
        preset.name(),
        grid,
        &a_field,
        &b_boundary,
        beta,
        lower,
        upper,
        d_eval,
        tracking(Arc::new(smooth_target.clone())),
        s_eval,
    )?;
    match params.target {
        TargetMode::Smooth => Ok(spec),
        TargetMode::Manufactured => {
            let s0 = ScalarField::from_fn(grid, |x| params.s0(x));
            let u0 = spec.vertex_for(&s0)?;
            let y0 = crate::solvers::solve_state(&spec, &u0, None)?;
            let target: Vec<f64> = y0
                .values()
                .iter()
                .zip(&smooth_target)
                .map(|(a, b)| a + b)
                .collect();
            Ok(spec.with_w(tracking(Arc::new(target))))
        }
    }
}

/// Nearest-node lookup of a nodal table; presets only evaluate at nodes.
fn sample_nodal(grid: &GridSpec, table: &[f64], x: [f64; 2]) -> f64 {
    let i = (x[0] / grid.hx())
        .round()
        .clamp(0.0, (grid.nx() - 1) as f64) as usize;
    let j = (x[1] / grid.hy())
        .round()
        .clamp(0.0, (grid.ny() - 1) as f64) as usize;
    table[grid.index(i, j)]
}

/// Worst ratio `|FD - reported| / delta^2` of the first and second
/// derivatives of `eval` against central differences, over `points`.
pub fn derivative_fd_error(
    eval: &PointwiseFn,
    points: &[([f64; 2], f64)],
    delta: f64,
) -> (f64, f64) {
    let mut e1: f64 = 0.0;
    let mut e2: f64 = 0.0;
    for &(x, y) in points {
        let j = eval(x, y);
        let jp = eval(x, y + delta);
        let jm = eval(x, y - delta);
        let fd1 = (jp.value - jm.value) / (2.0 * delta);
        let fd2 = (jp.dy - jm.dy) / (2.0 * delta);
        e1 = e1.max((fd1 - j.dy).abs());
        e2 = e2.max((fd2 - j.dyy).abs());
    }
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::square(9).unwrap()
    }

    fn spec(preset: Preset) -> ProblemSpec {
        build_preset(
            preset,
            &PresetParams {
                target: TargetMode::Smooth,
                yd_amp: 0.5,
                ..PresetParams::defaults()
            },
            grid(),
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let s = spec(Preset::LinearTracking);
        let g = grid();
        let inside = ScalarField::from_fn(g, |x| 2.0 * x[0] - 1.0);
        assert_eq!(project_admissible(&inside, &s).unwrap().field(), &inside);
        let big = ScalarField::constant(g, 1e300);
        let p = project_admissible(&big, &s).unwrap();
        assert!(p.field().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hamiltonian_simple_substitution() {
        // w = y^2/2 (zero target), s = 0, d = 0, p = 0
        let g = grid();
        let params = PresetParams {
            target: TargetMode::Smooth,
            s_slope: 0.0,
            ..PresetParams::defaults()
        };
        let s = build_preset(Preset::LinearTracking, &params, g).unwrap();
        let y = ScalarField::from_fn(g, |x| x[0] - x[1]);
        let p = ScalarField::zeros(g);
        let u = ScalarField::constant(g, 0.3);
        let h = hamiltonian_derivatives(&s, &y, &p, &u).unwrap();
        assert_eq!(h.h_y.values(), y.values());
        assert!(h.h_yy.values().iter().all(|&v| v == 1.0));
        assert!(h.h_yu.values().iter().all(|&v| v == 0.0));
        assert!(h.h_yp.values().iter().all(|&v| v == 0.0));
        assert!(h.h_up.values().iter().all(|&v| v == 1.0));
        assert!(h.h_u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn h_u_reduces_to_beta_p() {
        let g = grid();
        let params = PresetParams {
            target: TargetMode::Smooth,
            s_slope: 0.0,
            beta: 2.5,
            ..PresetParams::defaults()
        };
        let s = build_preset(Preset::CubicMonotone, &params, g).unwrap();
        let p = ScalarField::from_fn(g, |x| x[0] * x[1] + 0.1);
        let h = hamiltonian_derivatives(&s, &ScalarField::zeros(g), &p, &ScalarField::zeros(g))
            .unwrap();
        for (a, b) in h.h_u.values().iter().zip(p.values()) {
            assert_eq!(*a, 2.5 * b);
        }
    }

    #[test]
    fn h_y_matches_central_difference_to_second_order() {
        for preset in Preset::all() {
            let s = spec(preset);
            let g = grid();
            let y = ScalarField::from_fn(g, |x| 0.7 * x[0] - 0.4 * x[1] + 0.2);
            let p = ScalarField::from_fn(g, |x| 0.5 + x[0] * x[1]);
            let u = ScalarField::from_fn(g, |x| x[0] - 0.5);
            let h = hamiltonian_derivatives(&s, &y, &p, &u).unwrap();
            let deltas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
            let errs: Vec<f64> = deltas
                .iter()
                .map(|&dl| {
                    let hp = hamiltonian(&s, &y.map(|v| v + dl), &p, &u).unwrap();
                    let hm = hamiltonian(&s, &y.map(|v| v - dl), &p, &u).unwrap();
                    hp.sub(&hm)
                        .unwrap()
                        .scale(0.5 / dl)
                        .sub(&h.h_y)
                        .unwrap()
                        .max_abs()
                })
                .collect();
            if errs.iter().all(|e| *e < 1e-12) {
                // H is quadratic in y for this preset: differences are exact
                continue;
            }
            let fit = crate::analysis::fit_power_law(&deltas, &errs).unwrap();
            assert!(fit.exponent >= 1.9, "{:?}: slope {}", preset, fit.exponent);
        }
    }

    #[test]
    fn evaluators_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<([f64; 2], f64)> = (0..100)
            .map(|_| {
                (
                    [rng.gen::<f64>(), rng.gen::<f64>()],
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        for preset in Preset::all() {
            let s = spec(preset);
            for eval in [s.d_eval(), s.w_eval(), s.s_eval()] {
                let (a1, a2) = derivative_fd_error(eval, &pts, 1e-3);
                let (b1, b2) = derivative_fd_error(eval, &pts, 5e-4);
                // second-order: halving delta cuts the error ~4x (or it is at rounding)
                assert!(b1 <= a1 / 3.0 || b1 < 1e-9, "{preset:?} first derivative");
                assert!(b2 <= a2 / 3.0 || b2 < 1e-9, "{preset:?} second derivative");
            }
        }
    }

    #[test]
    fn d_is_monotone_in_presets() {
        for preset in Preset::all() {
            let s = spec(preset);
            for y in [-3.0, 0.0, 2.0] {
                assert!(s.d([0.3, 0.3], y).dy >= 0.0);
            }
        }
    }

    #[test]
    fn negative_d_slope_is_rejected() {
        let g = grid();
        let s = spec(Preset::LinearTracking);
        let bad: PointwiseFn = Arc::new(|_x, y| Jet::new(-y, -1.0, 0.0));
        assert!(matches!(
            s.with_d(bad),
            Err(Error::MonotonicityGuard { .. })
        ));
        let _ = g;
    }

    #[test]
    fn unknown_preset_name() {
        assert!(matches!(
            Preset::parse("nope"),
            Err(Error::UnknownPreset(_))
        ));
        assert_eq!(
            Preset::parse("bilinear-cost").unwrap(),
            Preset::BilinearCost
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_idempotent_and_nonexpansive(
                a in prop::collection::vec(-3.0f64..3.0, 81),
                b in prop::collection::vec(-3.0f64..3.0, 81),
            ) {
                let s = spec(Preset::LinearTracking);
                let g = grid();
                let fa = ScalarField::new(g, a).unwrap();
                let fb = ScalarField::new(g, b).unwrap();
                let pa = project_admissible(&fa, &s).unwrap();
                let pb = project_admissible(&fb, &s).unwrap();
                let ppa = project_admissible(pa.field(), &s).unwrap();
                prop_assert_eq!(&ppa, &pa);
                let d_proj = pa.field().sub(pb.field()).unwrap().max_abs();
                let d_in = fa.sub(&fb).unwrap().max_abs();
                prop_assert!(d_proj <= d_in + 1e-15);
            }
        }
    }
}
