mod common;

use bangbang_core::analysis::{estimate_structural_exponent, fit_power_law, log_space};
use bangbang_core::grid::{norm, GridSpec, NormKind, ScalarField};
use bangbang_core::optimize::{solve_bangbang, solve_tikhonov, SolveOptions};
use bangbang_core::perturb::{dc_metric, metlem_constant, DcOptions, LatticeFn};
use bangbang_core::problem::{build_preset, ControlField, Preset, PresetParams};
use bangbang_core::solvers::{evaluate, sensitivity};
use common::*;
use proptest::prelude::*;

fn taylor_slopes(preset: Preset) -> [f64; 3] {
    let spec = smooth_spec(preset, 17);
    let snap = snapshot(&spec);
    let g = *spec.grid();
    // direction vanishing near the box so u + t v stays admissible
    let v = ScalarField::from_fn(g, |x| 0.3 * (x[0] * x[1]).sin());
    let sens = sensitivity(&spec, &snap, &v).unwrap();
    let ts = [1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3];
    let mut errs = [vec![], vec![], vec![]];
    for &t in &ts {
        let ut = ControlField::new(snap.u.field().axpy(t, &v).unwrap(), &spec).unwrap();
        let s = evaluate(&spec, &ut).unwrap();
        let ey = s.y.sub(&snap.y).unwrap().axpy(-t, &sens.z).unwrap();
        let ep = s.p.sub(&snap.p).unwrap().axpy(-t, &sens.q).unwrap();
        let es = s
            .sigma
            .sub(&snap.sigma)
            .unwrap()
            .axpy(-t, &sens.pi)
            .unwrap();
        errs[0].push(norm(&ey, NormKind::L2));
        errs[1].push(norm(&ep, NormKind::L2));
        errs[2].push(norm(&es, NormKind::Linf));
    }
    // an affine map leaves only rounding: report that as infinite order
    errs.map(|e| {
        if e.iter().all(|v| *v < 1e-13) {
            f64::INFINITY
        } else {
            fit_power_law(&ts, &e).unwrap().exponent
        }
    })
}

#[test]
fn taylor_remainders_are_second_order() {
    for preset in [Preset::CubicMonotone, Preset::BilinearCost] {
        let slopes = taylor_slopes(preset);
        for s in slopes {
            assert!(s >= 1.9, "{preset:?}: {slopes:?}");
        }
    }
}

#[test]
fn structural_exponent_is_scale_invariant() {
    let g = GridSpec::square(129).unwrap();
    let sigma = ScalarField::from_fn(g, |x| x[0] - 0.5);
    let eps = log_space(1e-3, 0.5, 24);
    let base = estimate_structural_exponent(&sigma, &eps).unwrap();
    for c in [0.1, 7.0] {
        let scaled: Vec<f64> = eps.iter().map(|e| e * c).collect();
        let r = estimate_structural_exponent(&sigma.scale(c), &scaled).unwrap();
        assert!((r.exponent - base.exponent).abs() < 1e-9);
    }
}

#[test]
fn tikhonov_distance_decreases_with_epsilon() {
    let spec = build_preset(
        Preset::LinearTracking,
        &PresetParams::defaults(),
        GridSpec::square(33).unwrap(),
    )
    .unwrap();
    let opts = SolveOptions {
        max_iters: 5000,
        gap_tol: 1e-11,
        ..SolveOptions::default()
    };
    let reference = solve_bangbang(&spec, &opts, None).unwrap().snapshot;
    let mut prev = f64::INFINITY;
    for eps in log_space(1e-1, 1e-4, 5) {
        let out = solve_tikhonov(&spec, eps, &opts, None).unwrap();
        let d = norm(
            &out.snapshot.u.field().sub(reference.u.field()).unwrap(),
            NormKind::L1,
        );
        assert!(d < prev, "eps {eps}: {d} >= {prev}");
        prev = d;
    }
}

#[test]
fn objective_history_is_monotone() {
    let spec = smooth_spec(Preset::CubicMonotone, 17);
    let out = solve_bangbang(
        &spec,
        &SolveOptions {
            max_iters: 2000,
            ..SolveOptions::default()
        },
        None,
    )
    .unwrap();
    let slack = 64.0 * f64::EPSILON * (1.0 + out.objective_history[0].abs());
    for w in out.objective_history.windows(2) {
        assert!(w[1] <= w[0] + slack, "{} > {}", w[1], w[0]);
    }
}

fn dc_opts() -> DcOptions {
    DcOptions {
        m_max: 12,
        samples_per_axis: 33,
        x_samples: 3,
    }
}

fn family(c: f64) -> impl Fn([f64; 2], &[f64]) -> f64 + Sync {
    move |x: [f64; 2], f: &[f64]| c * (f[0] * f[0] + x[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dc_triangle_inequality(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let (fa, fb, fc) = (family(a), family(b), family(c));
        let o = dc_opts();
        let d = |p: &LatticeFn<'_>, q: &LatticeFn<'_>| dc_metric(p, q, 1, &o).unwrap().value;
        let ab = d(&fa, &fb);
        let bc = d(&fb, &fc);
        let ac = d(&fa, &fc);
        prop_assert!(ac <= ab + bc + 1e-15);
        prop_assert!((ab - d(&fb, &fa)).abs() <= 1e-15);
        prop_assert!(ab <= 1.0);
    }

    #[test]
    fn dc_controls_sup_on_balls(c in 1e-4f64..1e-1, radius in 0.5f64..6.0) {
        // r_m / (1 + r_m) <= 2^m d_C on the ball of radius m >= radius
        let o = dc_opts();
        let d = dc_metric(&family(c), &|_, _| 0.0, 1, &o).unwrap().value;
        let m = metlem_constant(radius).unwrap();
        prop_assert!(m as f64 >= radius);
        let sup = c * ((m * m) as f64 + 1.0);
        let bound = 2f64.powi(m as i32) * d;
        prop_assert!(sup / (1.0 + sup) <= bound * (1.0 + 1e-12));
    }
}
