//! Second-order quantities at a candidate optimum, the level-set exponent
//! estimator and the sampled coercivity probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{inner_product, measure_level_set, norm, NormKind, ScalarField};
use crate::problem::{hamiltonian_derivatives, ProblemSpec};
use crate::solvers::{pi_of, solve_linearized_state, OptimalitySnapshot};

/// Least-squares fit of `log y = log C + p log x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub exponent: f64,
    pub constant: f64,
    pub r_squared: f64,
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<RateReport> {
    fit_power_law_min(xs, ys, 4)
}

/// As [`fit_power_law`] with a caller-chosen minimum sample count (at least 2).
pub fn fit_power_law_min(xs: &[f64], ys: &[f64], min_points: usize) -> Result<RateReport> {
    let min_points = min_points.max(2);
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "{} abscissae against {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < min_points {
        return Err(Error::InsufficientData(format!(
            "{} samples, at least {min_points} required",
            xs.len()
        )));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "power-law samples must be positive and finite, got {v}"
        )));
    }
    let increasing = xs.windows(2).all(|w| w[1] > w[0]);
    let decreasing = xs.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidArgument(
            "abscissae must be strictly monotone".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - exponent * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateReport {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        exponent,
        constant: intercept.exp(),
        r_squared,
    })
}

/// `Λ(v) = ∫ H_yy z_v² + 2 H_uy z_v v`.
pub fn lambda_direct(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
) -> Result<f64> {
    let z = solve_linearized_state(spec, snapshot, v)?;
    let h = hamiltonian_derivatives(spec, &snapshot.y, &snapshot.p, snapshot.u.field())?;
    let g = *spec.grid();
    Ok((0..g.len())
        .map(|k| {
            let zk = z.values()[k];
            g.weight(k)
                * (h.h_yy.values()[k] * zk * zk + 2.0 * h.h_yu.values()[k] * zk * v.values()[k])
        })
        .sum())
}

/// `Λ(v) = ∫ π_v v`.
pub fn lambda_dual(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
) -> Result<f64> {
    inner_product(&pi_of(spec, snapshot, v)?, v)
}

/// `Γ(v1, v2) = ½ ∫ π_{v1} v2 + π_{v2} v1`.
pub fn gamma_form(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v1: &ScalarField,
    v2: &ScalarField,
) -> Result<f64> {
    let a = inner_product(&pi_of(spec, snapshot, v1)?, v2)?;
    let b = inner_product(&pi_of(spec, snapshot, v2)?, v1)?;
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSplit {
    /// Part of the direction supported in the band `|sigma| <= tau`.
    pub v1: ScalarField,
    pub v2: ScalarField,
    pub tau: f64,
}

pub fn cone_split(snapshot: &OptimalitySnapshot, v: &ScalarField, tau: f64) -> Result<ConeSplit> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let band = snapshot
        .sigma
        .map(|s| if s.abs() <= tau { 1.0 } else { 0.0 });
    let v1 = v.mul(&band)?;
    let v2 = v.zip_map(&band, |a, b| if b == 1.0 { 0.0 } else { a })?;
    Ok(ConeSplit { v1, v2, tau })
}

/// Below this `eps` the band `|sigma| <= eps` is thinner than a few cells.
pub fn level_set_floor(sigma: &ScalarField) -> f64 {
    let g = sigma.grid();
    5.0 * g.hx().max(g.hy()) * sigma.max_gradient()
}

/// Fit `meas{|sigma| <= eps} ~ mu0 eps^(1/k*)`. The exponent estimates `1/k*`
/// and the constant `mu0`.
pub fn estimate_structural_exponent(sigma: &ScalarField, eps_grid: &[f64]) -> Result<RateReport> {
    if eps_grid.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} thresholds, at least 4 required",
            eps_grid.len()
        )));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("thresholds must be positive".into()));
    }
    let lo = eps_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_grid.iter().cloned().fold(0.0, f64::max);
    if (hi / lo).log10() < 1.5 {
        return Err(Error::InvalidArgument(format!(
            "thresholds span {:.2} decades, at least 1.5 required",
            (hi / lo).log10()
        )));
    }
    let floor = level_set_floor(sigma);
    let mut pts = Vec::new();
    for &e in eps_grid {
        if e < floor {
            continue;
        }
        let m = measure_level_set(sigma, e)?;
        if m > 0.0 {
            pts.push((e, m));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} resolvable thresholds with nonzero measure (floor {floor:.3e})",
            pts.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    fit_power_law(&xs, &ys)
}

/// `k*` from a fitted level-set exponent, rounded into `{1, 2, 3}`.
pub fn structural_k(report: &RateReport) -> u32 {
    let k = (1.0 / report.exponent).round();
    if k.is_nan() {
        return 3;
    }
    k.clamp(1.0, 3.0) as u32
}

/// Geometric grid of `n` values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub tau: f64,
    pub k_star: u32,
    pub band_nodes: usize,
    pub samples: usize,
    pub min_ratio_linear: f64,
    pub min_ratio_quadratic: f64,
    /// Minimum of the summed ratio over the same samples.
    pub min_ratio_combined: f64,
    /// No node lies in the band, so the cone is trivial.
    pub vacuous: bool,
    pub coercive: bool,
}

/// Random cone direction: on band nodes the admissible extreme displacement
/// scaled by `U[0, 1]`, zero elsewhere.
pub fn random_cone_direction(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    tau: f64,
    rng: &mut impl Rng,
) -> ScalarField {
    let g = *spec.grid();
    let u = snapshot.u.field().values();
    let (lo, hi) = (spec.lower().values(), spec.upper().values());
    let vals = (0..g.len())
        .map(|k| {
            if snapshot.sigma.values()[k].abs() > tau {
                return 0.0;
            }
            let t: f64 = rng.gen();
            let up = hi[k] - u[k];
            let down = lo[k] - u[k];
            let extreme = if u[k] <= lo[k] {
                up
            } else if u[k] >= hi[k] {
                down
            } else if rng.gen::<bool>() {
                up
            } else {
                down
            };
            t * extreme
        })
        .collect();
    ScalarField::from_vec_unchecked(g, vals)
}

/// Sampled minima of `∫ sigma v / |v|_1^(k*+1)` and `Λ(v) / |v|_1^(k*+1)` over
/// random cone directions.
pub fn coercivity_probe(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    tau: f64,
    n_samples: usize,
    k_star: u32,
    seed: u64,
) -> Result<CoercivityReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "coercivity probe needs at least 100 samples, got {n_samples}"
        )));
    }
    let band_nodes = snapshot
        .sigma
        .values()
        .iter()
        .filter(|s| s.abs() <= tau)
        .count();
    if band_nodes == 0 {
        return Ok(CoercivityReport {
            tau,
            k_star,
            band_nodes,
            samples: 0,
            min_ratio_linear: f64::INFINITY,
            min_ratio_quadratic: f64::INFINITY,
            min_ratio_combined: f64::INFINITY,
            vacuous: true,
            coercive: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<ScalarField> = (0..n_samples)
        .map(|_| random_cone_direction(spec, snapshot, tau, &mut rng))
        .collect();
    let power = k_star as i32 + 1;
    let ratios: Vec<Option<(f64, f64)>> = dirs
        .par_iter()
        .map(|v| -> Result<Option<(f64, f64)>> {
            let l1 = norm(v, NormKind::L1);
            if l1 == 0.0 {
                return Ok(None);
            }
            let scale = l1.powi(power);
            let lin = inner_product(&snapshot.sigma, v)? / scale;
            let quad = lambda_direct(spec, snapshot, v)? / scale;
            Ok(Some((lin, quad)))
        })
        .collect::<Result<_>>()?;
    let mut rep = CoercivityReport {
        tau,
        k_star,
        band_nodes,
        samples: 0,
        min_ratio_linear: f64::INFINITY,
        min_ratio_quadratic: f64::INFINITY,
        min_ratio_combined: f64::INFINITY,
        vacuous: false,
        coercive: false,
    };
    for (lin, quad) in ratios.into_iter().flatten() {
        rep.samples += 1;
        rep.min_ratio_linear = rep.min_ratio_linear.min(lin);
        rep.min_ratio_quadratic = rep.min_ratio_quadratic.min(quad);
        rep.min_ratio_combined = rep.min_ratio_combined.min(lin + quad);
    }
    rep.coercive = rep.min_ratio_combined > 0.0;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::problem::{build_preset, ControlField, Preset, PresetParams, TargetMode};
    use crate::solvers::{evaluate, solve_linearized_state};

    fn snapshot_for(preset: Preset, n: usize) -> (ProblemSpec, OptimalitySnapshot) {
        let params = PresetParams {
            target: TargetMode::Smooth,
            yd_amp: 1.0,
            ..PresetParams::defaults()
        };
        let spec = build_preset(preset, &params, GridSpec::square(n).unwrap()).unwrap();
        let u = spec
            .project_admissible(&ScalarField::from_fn(*spec.grid(), |x| 0.8 * (x[0] - x[1])))
            .unwrap();
        let snap = evaluate(&spec, &u).unwrap();
        (spec, snap)
    }

    #[test]
    fn power_law_recovers_exact_data() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * f64::powf(*x, 1.5)).collect();
        let r = fit_power_law(&xs, &ys).unwrap();
        assert!((r.exponent - 1.5).abs() < 1e-12);
        assert!((r.constant - 3.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(matches!(
            fit_power_law(&xs[..3], &ys[..3]),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_power_law(&[1.0, 3.0, 2.0, 4.0], &ys).is_err());
    }

    #[test]
    fn lambda_vanishes_and_is_homogeneous() {
        let (spec, snap) = snapshot_for(Preset::CubicMonotone, 17);
        let g = *spec.grid();
        assert_eq!(
            lambda_direct(&spec, &snap, &ScalarField::zeros(g)).unwrap(),
            0.0
        );
        assert_eq!(
            lambda_dual(&spec, &snap, &ScalarField::zeros(g)).unwrap(),
            0.0
        );
        let v = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() + x[1]);
        let l1 = lambda_direct(&spec, &snap, &v).unwrap();
        let l3 = lambda_direct(&spec, &snap, &v.scale(3.0)).unwrap();
        assert!((l3 - 9.0 * l1).abs() <= 1e-10 * l3.abs());
    }

    #[test]
    fn lambda_is_state_energy_for_linear_tracking() {
        let (spec, snap) = snapshot_for(Preset::LinearTracking, 17);
        let g = *spec.grid();
        let v = ScalarField::from_fn(g, |x| if x[0] < 0.4 && x[1] > 0.5 { 1.0 } else { 0.0 });
        let z = solve_linearized_state(&spec, &snap, &v).unwrap();
        let oracle = norm(&z, NormKind::L2).powi(2);
        let direct = lambda_direct(&spec, &snap, &v).unwrap();
        let dual = lambda_dual(&spec, &snap, &v).unwrap();
        assert!(oracle > 0.0);
        assert!((direct - oracle).abs() <= 1e-12 * oracle);
        assert!((dual - oracle).abs() <= 1e-9 * oracle);
    }

    #[test]
    fn gamma_matches_lambda_on_diagonal() {
        let (spec, snap) = snapshot_for(Preset::BilinearCost, 17);
        let v = ScalarField::from_fn(*spec.grid(), |x| x[0] * x[1] - 0.2);
        let gm = gamma_form(&spec, &snap, &v, &v).unwrap();
        let lm = lambda_dual(&spec, &snap, &v).unwrap();
        assert!((gm - lm).abs() <= 1e-10 * lm.abs().max(1e-300));
    }

    #[test]
    fn cone_split_examples() {
        let g = GridSpec::square(33).unwrap();
        let spec = build_preset(Preset::LinearTracking, &PresetParams::defaults(), g).unwrap();
        let mut snap = evaluate(
            &spec,
            &ControlField::new(ScalarField::zeros(g), &spec).unwrap(),
        )
        .unwrap();
        let v = ScalarField::from_fn(g, |x| x[0] + 2.0);

        snap.sigma = ScalarField::zeros(g);
        let s = cone_split(&snap, &v, 0.3).unwrap();
        assert_eq!(s.v1, v);
        assert_eq!(s.v2.max_abs(), 0.0);

        snap.sigma = ScalarField::constant(g, 0.5);
        let s = cone_split(&snap, &v, 0.1).unwrap();
        assert_eq!(s.v1.max_abs(), 0.0);
        assert_eq!(s.v2, v);

        snap.sigma = ScalarField::from_fn(g, |x| x[0] - 0.5);
        let s = cone_split(&snap, &ScalarField::constant(g, 1.0), 0.1).unwrap();
        assert!((norm(&s.v1, NormKind::L1) - 0.2).abs() <= 2.0 * g.hx());
        assert_eq!(s.v1.add(&s.v2).unwrap(), ScalarField::constant(g, 1.0));
        assert!(cone_split(&snap, &v, 0.0).is_err());
    }

    #[test]
    fn structural_exponent_examples() {
        let g = GridSpec::square(129).unwrap();
        let eps = log_space(1e-3, 0.2, 12);
        let lin = ScalarField::from_fn(g, |x| x[0] - 0.5);
        let r = estimate_structural_exponent(&lin, &eps).unwrap();
        assert!((r.exponent - 1.0).abs() <= 0.1, "{r:?}");
        assert_eq!(structural_k(&r), 1);
        let quad = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
        let r = estimate_structural_exponent(&quad, &eps).unwrap();
        assert!((r.exponent - 0.5).abs() <= 0.1, "{r:?}");
        assert_eq!(structural_k(&r), 2);
        let away = ScalarField::constant(g, 1.0);
        assert!(matches!(
            estimate_structural_exponent(&away, &eps),
            Err(Error::InsufficientData(_))
        ));
        assert!(estimate_structural_exponent(&lin, &log_space(0.05, 0.2, 6)).is_err());
    }

    #[test]
    fn coercivity_vacuous_when_band_empty() {
        let (spec, mut snap) = snapshot_for(Preset::LinearTracking, 9);
        snap.sigma = ScalarField::constant(*spec.grid(), 1.0);
        let r = coercivity_probe(&spec, &snap, 0.1, 100, 1, 0).unwrap();
        assert!(r.vacuous && r.coercive);
    }
}
