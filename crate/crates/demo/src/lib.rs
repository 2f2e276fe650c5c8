//! Browser demo: solve the bang-bang problem, its Tikhonov regularization and
//! the level-set growth of the switching function on a small grid.

use bangbang_core::analysis::{estimate_structural_exponent, level_set_floor, log_space};
use bangbang_core::grid::{measure_level_set, norm, GridSpec, NormKind};
use bangbang_core::optimize::{solve_bangbang, solve_tikhonov, PerturbationTriple, SolveOptions};
use bangbang_core::problem::{build_preset, Preset, PresetParams};
use bangbang_core::{ProblemSpec, ScalarField};
use wasm_bindgen::prelude::*;

const MAX_GRID: usize = 129;

/// Nodal fields of a solved instance, row-major with `nx` nodes per row.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct SolveView {
    nx: usize,
    u: Vec<f64>,
    y: Vec<f64>,
    sigma: Vec<f64>,
    iterations: usize,
    gap: f64,
    distance: f64,
}

#[wasm_bindgen]
impl SolveView {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }
    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }
    pub fn sigma(&self) -> Vec<f64> {
        self.sigma.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    #[wasm_bindgen(getter)]
    pub fn gap(&self) -> f64 {
        self.gap
    }
    /// `|u - u_bar|_L1` against the unregularized solution (0 for it).
    #[wasm_bindgen(getter)]
    pub fn distance(&self) -> f64 {
        self.distance
    }
}

/// Level-set measures `meas{|sigma| <= eps}` and the fitted exponent.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct LevelSetView {
    eps: Vec<f64>,
    measure: Vec<f64>,
    exponent: f64,
    floor: f64,
}

#[wasm_bindgen]
impl LevelSetView {
    pub fn eps(&self) -> Vec<f64> {
        self.eps.clone()
    }
    pub fn measure(&self) -> Vec<f64> {
        self.measure.clone()
    }
    /// NaN when too few thresholds are resolvable.
    #[wasm_bindgen(getter)]
    pub fn exponent(&self) -> f64 {
        self.exponent
    }
    /// Thresholds below this are not resolved by the grid.
    #[wasm_bindgen(getter)]
    pub fn floor(&self) -> f64 {
        self.floor
    }
}

fn spec(n: usize, tilt: f64, shift: f64) -> Result<ProblemSpec, String> {
    if !(5..=MAX_GRID).contains(&n) {
        return Err(format!("grid must have 5 to {MAX_GRID} nodes per axis"));
    }
    let params = PresetParams {
        s_tilt: tilt,
        s_shift: shift,
        ..PresetParams::defaults()
    };
    build_preset(
        Preset::LinearTracking,
        &params,
        GridSpec::square(n).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())
}

fn options() -> SolveOptions {
    SolveOptions {
        max_iters: 5000,
        gap_tol: 1e-10,
        ..SolveOptions::default()
    }
}

fn view(n: usize, out: bangbang_core::optimize::SolveOutcome, distance: f64) -> SolveView {
    let s = out.snapshot;
    SolveView {
        nx: n,
        u: s.u.field().values().to_vec(),
        y: s.y.values().to_vec(),
        sigma: s.sigma.values().to_vec(),
        iterations: out.iterations,
        gap: out.gap,
        distance,
    }
}

/// Bang-bang solution with a constant cost tilt `rho` added to the switching
/// function (0 for the unperturbed problem).
pub fn bang_bang(n: usize, tilt: f64, shift: f64, rho: f64) -> Result<SolveView, String> {
    let spec = spec(n, tilt, shift)?;
    let g = *spec.grid();
    let triple = PerturbationTriple::rho_only(ScalarField::constant(g, rho));
    let pert = (rho != 0.0).then_some(&triple);
    let out = solve_bangbang(&spec, &options(), pert).map_err(|e| e.to_string())?;
    let distance = if pert.is_some() {
        let base = solve_bangbang(&spec, &options(), None).map_err(|e| e.to_string())?;
        l1_distance(&out.snapshot.u, &base.snapshot.u)?
    } else {
        0.0
    };
    Ok(view(n, out, distance))
}

fn l1_distance(
    a: &bangbang_core::problem::ControlField,
    b: &bangbang_core::problem::ControlField,
) -> Result<f64, String> {
    Ok(norm(
        &a.field().sub(b.field()).map_err(|e| e.to_string())?,
        NormKind::L1,
    ))
}

/// Tikhonov-regularized solution and its L1 distance to the bang-bang one.
pub fn tikhonov(n: usize, tilt: f64, shift: f64, eps: f64) -> Result<SolveView, String> {
    let spec = spec(n, tilt, shift)?;
    let base = solve_bangbang(&spec, &options(), None).map_err(|e| e.to_string())?;
    let out = solve_tikhonov(&spec, eps, &options(), Some(&base.snapshot.u))
        .map_err(|e| e.to_string())?;
    let distance = l1_distance(&out.snapshot.u, &base.snapshot.u)?;
    Ok(view(n, out, distance))
}

/// Level-set growth of the optimal switching function.
pub fn level_sets(n: usize, tilt: f64, shift: f64) -> Result<LevelSetView, String> {
    let spec = spec(n, tilt, shift)?;
    let out = solve_bangbang(&spec, &options(), None).map_err(|e| e.to_string())?;
    let sigma = out.snapshot.sigma;
    let top = sigma.max_abs();
    if top == 0.0 {
        return Err("switching function vanishes identically".into());
    }
    let eps = log_space(1e-3 * top, 0.5 * top, 24);
    let measure = eps
        .iter()
        .map(|&e| measure_level_set(&sigma, e).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let exponent = estimate_structural_exponent(&sigma, &eps)
        .map(|r| r.exponent)
        .unwrap_or(f64::NAN);
    Ok(LevelSetView {
        eps,
        measure,
        exponent,
        floor: level_set_floor(&sigma),
    })
}

#[wasm_bindgen(js_name = solveBangBang)]
pub fn solve_bang_bang_js(n: usize, tilt: f64, shift: f64, rho: f64) -> Result<SolveView, JsError> {
    bang_bang(n, tilt, shift, rho).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = solveTikhonov)]
pub fn solve_tikhonov_js(n: usize, tilt: f64, shift: f64, eps: f64) -> Result<SolveView, JsError> {
    tikhonov(n, tilt, shift, eps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = levelSets)]
pub fn level_sets_js(n: usize, tilt: f64, shift: f64) -> Result<LevelSetView, JsError> {
    level_sets(n, tilt, shift).map_err(|e| JsError::new(&e))
}
