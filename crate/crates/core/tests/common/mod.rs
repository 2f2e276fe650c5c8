#![allow(dead_code)]

use bangbang_core::grid::{GridSpec, ScalarField};
use bangbang_core::problem::{build_preset, Preset, PresetParams, ProblemSpec, TargetMode};
use bangbang_core::solvers::evaluate;
use bangbang_core::OptimalitySnapshot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Preset with a nonzero adjoint (smooth target away from the reachable states).
pub fn smooth_spec(preset: Preset, n: usize) -> ProblemSpec {
    let params = PresetParams {
        target: TargetMode::Smooth,
        yd_amp: 1.0,
        ..PresetParams::defaults()
    };
    build_preset(preset, &params, GridSpec::square(n).unwrap()).unwrap()
}

/// Snapshot at an interior, non-bang-bang control.
pub fn snapshot(spec: &ProblemSpec) -> OptimalitySnapshot {
    let u = spec
        .project_admissible(&ScalarField::from_fn(*spec.grid(), |x| {
            0.6 * (3.0 * x[0]).sin() - 0.4 * x[1]
        }))
        .unwrap();
    evaluate(spec, &u).unwrap()
}

pub fn random_field(g: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random smooth field: a few low Fourier modes with random amplitudes.
pub fn random_smooth(g: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::from_fn(g, |x| {
        let (a, b) = (std::f64::consts::PI * x[0], std::f64::consts::PI * x[1]);
        c[0] + c[1] * a.cos()
            + c[2] * b.cos()
            + c[3] * (a + b).sin()
            + c[4] * (2.0 * a).cos() * b.sin()
            + c[5] * x[0] * x[1]
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
