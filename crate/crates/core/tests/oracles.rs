mod common;

use bangbang_core::analysis::{gamma_form, lambda_direct, lambda_dual};
use bangbang_core::grid::{inner_product, norm, GridSpec, NormKind, ScalarField};
use bangbang_core::problem::{build_preset, Preset, PresetParams};
use bangbang_core::solvers::{evaluate, reduced_objective, solve_adjoint, solve_state};
use common::*;
use nalgebra::{DMatrix, DVector};

fn dense(spec: &bangbang_core::ProblemSpec) -> DMatrix<f64> {
    let rows = spec.operator().matrix().to_dense();
    let n = rows.len();
    DMatrix::from_fn(n, n, |r, c| rows[r][c])
}

#[test]
fn banded_solve_matches_dense_cholesky() {
    let spec = smooth_spec(Preset::CubicMonotone, 13);
    let g = *spec.grid();
    let mut r = rng(11);
    let alpha = random_field(g, &mut r).map(f64::abs);
    let h = random_field(g, &mut r);
    let w = g.weights();
    let mut m = dense(&spec);
    for k in 0..g.len() {
        m[(k, k)] += w[k] * alpha.values()[k];
    }
    let rhs = DVector::from_iterator(g.len(), (0..g.len()).map(|k| w[k] * h.values()[k]));
    let oracle = m.cholesky().expect("spd").solve(&rhs);
    let y = spec.operator().solve_shifted(&alpha, &h).unwrap();
    let err = (0..g.len())
        .map(|k| (y.values()[k] - oracle[k]).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-12 * oracle.amax(), "{err}");
}

#[test]
fn stiffness_energy_of_linear_function() {
    // a = 1: interior energy of x1 is exactly 1; the Robin term is the
    // trapezoid rule of b y^2 on the rim (x1^2 on two edges, 1 on one).
    for robin in [0.5, 2.0] {
        let params = PresetParams {
            robin,
            ..PresetParams::defaults()
        };
        let n = 17;
        let spec = build_preset(
            Preset::LinearTracking,
            &params,
            GridSpec::square(n).unwrap(),
        )
        .unwrap();
        let g = *spec.grid();
        let y = ScalarField::from_fn(g, |x| x[0]);
        let ky = spec.operator().matrix().matvec(y.values());
        let energy: f64 = ky.iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let h = g.hx();
        let trap_x2 = 1.0 / 3.0 + h * h / 6.0;
        let expected = 1.0 + robin * (2.0 * trap_x2 + 1.0);
        assert!(rel(energy, expected) < 1e-13, "{energy} vs {expected}");
    }
}

#[test]
fn stiffness_is_positive_definite_and_symmetric() {
    let spec = smooth_spec(Preset::BilinearCost, 9);
    let m = dense(&spec);
    assert_eq!(m, m.transpose());
    let eig = m.symmetric_eigenvalues();
    assert!(eig.min() > 0.0);
}

#[test]
fn lambda_matches_second_difference_of_reduced_objective() {
    // linear state: the reduced objective is quadratic, so the central second
    // difference is exact up to rounding
    let spec = smooth_spec(Preset::LinearTracking, 17);
    let snap = snapshot(&spec);
    let mut r = rng(3);
    for _ in 0..5 {
        let v = random_smooth(*spec.grid(), &mut r);
        let u = snap.u.field();
        let t = 1e-2;
        let jp = reduced_objective(&spec, &u.axpy(t, &v).unwrap()).unwrap();
        let j0 = reduced_objective(&spec, u).unwrap();
        let jm = reduced_objective(&spec, &u.axpy(-t, &v).unwrap()).unwrap();
        let fd = (jp - 2.0 * j0 + jm) / (t * t);
        let lam = lambda_direct(&spec, &snap, &v).unwrap();
        assert!(rel(fd, lam) < 1e-6, "{fd} vs {lam}");
    }
}

#[test]
fn lambda_second_difference_on_nonlinear_presets() {
    for preset in [Preset::CubicMonotone, Preset::BilinearCost] {
        let spec = smooth_spec(preset, 17);
        let snap = snapshot(&spec);
        let v = random_smooth(*spec.grid(), &mut rng(5));
        let u = snap.u.field();
        let j0 = reduced_objective(&spec, u).unwrap();
        let lam = lambda_dual(&spec, &snap, &v).unwrap();
        // second derivative of j equals Lambda only at stationary points in
        // general; here check the O(t^2) convergence of the difference to
        // j'' computed from a Richardson pair instead
        let second = |t: f64| {
            let jp = reduced_objective(&spec, &u.axpy(t, &v).unwrap()).unwrap();
            let jm = reduced_objective(&spec, &u.axpy(-t, &v).unwrap()).unwrap();
            (jp - 2.0 * j0 + jm) / (t * t)
        };
        let (a, b) = (second(4e-2), second(2e-2));
        let extrapolated = (4.0 * b - a) / 3.0;
        assert!(
            rel(extrapolated, lam) < 1e-4,
            "{preset:?}: {extrapolated} vs {lam}"
        );
    }
}

#[test]
fn polarization_identity() {
    let spec = smooth_spec(Preset::CubicMonotone, 17);
    let snap = snapshot(&spec);
    let mut r = rng(9);
    for _ in 0..10 {
        let v1 = random_field(*spec.grid(), &mut r);
        let v2 = random_field(*spec.grid(), &mut r);
        let gamma = gamma_form(&spec, &snap, &v1, &v2).unwrap();
        let plus = lambda_dual(&spec, &snap, &v1.add(&v2).unwrap()).unwrap();
        let minus = lambda_dual(&spec, &snap, &v1.sub(&v2).unwrap()).unwrap();
        let scale = plus.abs() + minus.abs();
        assert!((gamma - 0.25 * (plus - minus)).abs() <= 1e-10 * scale);
    }
}

#[test]
fn adjoint_duality_with_linearized_state() {
    // int (w_y + s_y u) z_v = int beta p v for the linear preset
    let spec = smooth_spec(Preset::LinearTracking, 17);
    let snap = snapshot(&spec);
    let v = random_smooth(*spec.grid(), &mut rng(1));
    let z = bangbang_core::solvers::solve_linearized_state(&spec, &snap, &v).unwrap();
    let g = *spec.grid();
    let rhs: Vec<f64> = (0..g.len())
        .map(|k| spec.w(g.coords(k), snap.y.values()[k]).dy)
        .collect();
    let lhs = inner_product(&ScalarField::new(g, rhs).unwrap(), &z).unwrap();
    let right = inner_product(&spec.beta().mul(&snap.p).unwrap(), &v).unwrap();
    assert!(rel(lhs, right) < 1e-10, "{lhs} vs {right}");
}

#[test]
fn state_is_lipschitz_from_l1_controls_to_l2() {
    let spec = smooth_spec(Preset::CubicMonotone, 33);
    let u0 = bangbang_core::optimize::random_control(&spec, 1);
    let y0 = solve_state(&spec, &u0, None).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 2..8 {
        let u = bangbang_core::optimize::random_control(&spec, seed);
        let y = solve_state(&spec, &u, None).unwrap();
        let ratio = norm(&y.sub(&y0).unwrap(), NormKind::L2)
            / norm(&u.field().sub(u0.field()).unwrap(), NormKind::L1);
        worst = worst.max(ratio);
    }
    assert!(worst.is_finite() && worst < 10.0, "{worst}");
}

#[test]
fn adjoint_of_manufactured_target_vanishes_at_generating_control() {
    for preset in [Preset::LinearTracking, Preset::CubicMonotone] {
        let spec = build_preset(
            preset,
            &PresetParams::defaults(),
            GridSpec::square(17).unwrap(),
        )
        .unwrap();
        let sign = ScalarField::from_fn(*spec.grid(), |x| PresetParams::defaults().s0(x));
        let u = spec.vertex_for(&sign).unwrap();
        let snap = evaluate(&spec, &u).unwrap();
        let p = solve_adjoint(&spec, &u, &snap.y, None).unwrap();
        assert!(p.max_abs() < 1e-12, "{preset:?}: {}", p.max_abs());
    }
}
