//! Nonlinear perturbations `zeta = (xi, eta)`, the compact-convergence metric
//! `d_C` and the pseudometric `d_Upsilon` built from it.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Jet, PointwiseFn, ProblemSpec};

/// Value and derivatives of `eta(x, y, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EtaJet {
    pub value: f64,
    pub dy: f64,
    pub du: f64,
    pub duu: f64,
}

pub type EtaFn = Arc<dyn Fn([f64; 2], f64, f64) -> EtaJet + Send + Sync>;

/// Half-width of the `y` range on which the membership guards are sampled.
pub const GUARD_Y_RANGE: f64 = 10.0;

#[derive(Clone)]
pub struct NonlinearPerturbation {
    pub label: String,
    /// `xi(x, y)` with `xi_y`; added to the state equation.
    pub xi: Option<PointwiseFn>,
    /// `eta(x, y, u)`; added to the integrand of the objective.
    pub eta: Option<EtaFn>,
    /// `eta` is affine in `u`, so the pointwise subproblem keeps vertex form.
    pub eta_affine_in_u: bool,
}

impl fmt::Debug for NonlinearPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearPerturbation")
            .field("label", &self.label)
            .field("xi", &self.xi.is_some())
            .field("eta", &self.eta.is_some())
            .finish()
    }
}

impl NonlinearPerturbation {
    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            xi: None,
            eta: None,
            eta_affine_in_u: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.xi.is_none() && self.eta.is_none()
    }

    /// `eta = eps u^2 / 2`
    pub fn tikhonov(eps: f64) -> Self {
        Self {
            label: format!("tikhonov({eps})"),
            xi: None,
            eta: Some(Arc::new(move |_, _, u| EtaJet {
                value: 0.5 * eps * u * u,
                dy: 0.0,
                du: eps * u,
                duu: eps,
            })),
            eta_affine_in_u: false,
        }
    }

    /// `xi = c y`
    pub fn state_shift(c: f64) -> Self {
        Self {
            label: format!("state-shift({c})"),
            xi: Some(Arc::new(move |_, y| Jet::new(c * y, c, 0.0))),
            eta: None,
            eta_affine_in_u: true,
        }
    }

    /// `eta = c u`
    pub fn cost_tilt(c: f64) -> Self {
        Self {
            label: format!("cost-tilt({c})"),
            xi: None,
            eta: Some(Arc::new(move |_, _, u| EtaJet {
                value: c * u,
                dy: 0.0,
                du: c,
                duu: 0.0,
            })),
            eta_affine_in_u: true,
        }
    }

    /// `xi = c exp(-|x - center|^2 / (2 width^2))`, a source term in the state
    /// equation.
    pub fn smooth_bump(c: f64, center: [f64; 2], width: f64) -> Self {
        Self {
            label: format!("smooth-bump({c}, {}, {}, {width})", center[0], center[1]),
            xi: Some(Arc::new(move |x, _| {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                Jet::new(c * (-r2 / (2.0 * width * width)).exp(), 0.0, 0.0)
            })),
            eta: None,
            eta_affine_in_u: true,
        }
    }

    /// Parse `tikhonov(eps)`, `state-shift(c)`, `cost-tilt(c)`,
    /// `smooth-bump(c, x1, x2, width)` or `zero`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, args) = parse_call(text)?;
        let want = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} takes {n} argument(s), got {}",
                    args.len()
                )))
            }
        };
        match name.as_str() {
            "zero" => {
                want(0)?;
                Ok(Self::zero())
            }
            "tikhonov" => {
                want(1)?;
                if !(args[0] > 0.0) {
                    return Err(Error::InvalidArgument("tikhonov needs eps > 0".into()));
                }
                Ok(Self::tikhonov(args[0]))
            }
            "state-shift" => {
                want(1)?;
                Ok(Self::state_shift(args[0]))
            }
            "cost-tilt" => {
                want(1)?;
                Ok(Self::cost_tilt(args[0]))
            }
            "smooth-bump" => {
                want(4)?;
                if !(args[3] > 0.0) {
                    return Err(Error::InvalidArgument("smooth-bump needs width > 0".into()));
                }
                Ok(Self::smooth_bump(args[0], [args[1], args[2]], args[3]))
            }
            _ => Err(Error::UnknownPreset(text.to_string())),
        }
    }

    /// The same family at magnitude `t` (the first parameter replaced).
    pub fn family(name: &str, t: f64) -> Result<Self> {
        match name {
            "tikhonov" => Ok(Self::tikhonov(t)),
            "state-shift" => Ok(Self::state_shift(t)),
            "cost-tilt" => Ok(Self::cost_tilt(t)),
            "smooth-bump" => Ok(Self::smooth_bump(t, [0.5, 0.5], 0.15)),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn xi_jet(&self, x: [f64; 2], y: f64) -> Jet {
        self.xi.as_ref().map_or(Jet::default(), |f| f(x, y))
    }

    pub fn eta_jet(&self, x: [f64; 2], y: f64, u: f64) -> EtaJet {
        self.eta.as_ref().map_or(EtaJet::default(), |f| f(x, y, u))
    }

    /// Check `d_y + xi_y >= 0` and `eta_uu >= 0` at every node for sampled
    /// `y` in `[-GUARD_Y_RANGE, GUARD_Y_RANGE]` and `u` in `[b1, b2]`.
    pub fn check_guards(&self, spec: &ProblemSpec) -> Result<()> {
        let g = *spec.grid();
        let ys: Vec<f64> = (0..=40)
            .map(|i| -GUARD_Y_RANGE + 2.0 * GUARD_Y_RANGE * i as f64 / 40.0)
            .collect();
        for k in 0..g.len() {
            let x = g.coords(k);
            for &y in &ys {
                if self.xi.is_some() {
                    let value = spec.d(x, y).dy + self.xi_jet(x, y).dy;
                    if value < 0.0 {
                        return Err(Error::MonotonicityGuard {
                            x1: x[0],
                            x2: x[1],
                            y,
                            value,
                        });
                    }
                }
                if self.eta.is_some() {
                    let (lo, hi) = (spec.lower().values()[k], spec.upper().values()[k]);
                    for i in 0..=8 {
                        let u = lo + (hi - lo) * i as f64 / 8.0;
                        let value = self.eta_jet(x, y, u).duu;
                        if value < 0.0 {
                            return Err(Error::ConvexityGuard {
                                x1: x[0],
                                x2: x[1],
                                y,
                                u,
                                value,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_call(text: &str) -> Result<(String, Vec<f64>)> {
    let t = text.trim();
    let Some(open) = t.find('(') else {
        return Ok((t.to_string(), Vec::new()));
    };
    if !t.ends_with(')') {
        return Err(Error::InvalidArgument(format!(
            "malformed perturbation `{text}`"
        )));
    }
    let name = t[..open].trim().to_string();
    let inner = &t[open + 1..t.len() - 1];
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|a| {
                a.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("bad number `{}` in `{text}`", a.trim()))
                })
            })
            .collect::<Result<_>>()?
    };
    Ok((name, args))
}

/// Lattice used to approximate each `L_inf(K_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcOptions {
    /// Truncation of the series.
    pub m_max: u32,
    /// Samples per free axis on `[-m, m]` (odd values include `0`).
    pub samples_per_axis: usize,
    /// Samples per spatial axis on `[0, 1]`.
    pub x_samples: usize,
}

impl Default for DcOptions {
    fn default() -> Self {
        Self {
            m_max: 20,
            samples_per_axis: 65,
            x_samples: 9,
        }
    }
}

/// A truncated series value with its tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcValue {
    pub value: f64,
    pub uncertainty: f64,
}

impl std::ops::Add for DcValue {
    type Output = DcValue;
    fn add(self, o: DcValue) -> DcValue {
        DcValue {
            value: self.value + o.value,
            uncertainty: self.uncertainty + o.uncertainty,
        }
    }
}

/// Evaluator on `(x, free)`, with `free` of fixed length.
pub type LatticeFn<'a> = dyn Fn([f64; 2], &[f64]) -> f64 + Sync + 'a;

/// Per-level sup-norm differences `|w1 - w2|_{L_inf(K_m)}` for `m = 1..=m_max`.
pub fn sup_differences(
    omega1: &LatticeFn<'_>,
    omega2: &LatticeFn<'_>,
    free_dims: usize,
    opts: &DcOptions,
) -> Result<Vec<f64>> {
    if opts.m_max < 8 {
        return Err(Error::InvalidArgument(format!(
            "m_max must be >= 8, got {}",
            opts.m_max
        )));
    }
    if opts.samples_per_axis < 33 {
        return Err(Error::InvalidArgument(format!(
            "samples_per_axis must be >= 33, got {}",
            opts.samples_per_axis
        )));
    }
    if opts.x_samples < 2 {
        return Err(Error::InvalidArgument("x_samples must be >= 2".into()));
    }
    let nx = opts.x_samples;
    let ns = opts.samples_per_axis;
    let xs: Vec<[f64; 2]> = (0..nx * nx)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            [i as f64 / (nx - 1) as f64, j as f64 / (nx - 1) as f64]
        })
        .collect();
    let per_level = ns.pow(free_dims as u32);
    Ok((1..=opts.m_max)
        .into_par_iter()
        .map(|m| {
            let m = m as f64;
            let mut sup = 0.0f64;
            let mut free = vec![0.0; free_dims];
            for x in &xs {
                for idx in 0..per_level {
                    let mut r = idx;
                    for f in free.iter_mut() {
                        *f = -m + 2.0 * m * (r % ns) as f64 / (ns - 1) as f64;
                        r /= ns;
                    }
                    let d = (omega1(*x, &free) - omega2(*x, &free)).abs();
                    if d > sup || d.is_nan() {
                        sup = if d.is_nan() { f64::INFINITY } else { d };
                    }
                }
            }
            sup
        })
        .collect())
}

/// `d_C(w1, w2) = sum_m 2^-m r_m / (1 + r_m)` truncated at `m_max`; the tail
/// `2^-m_max` is returned as the uncertainty.
pub fn dc_metric(
    omega1: &LatticeFn<'_>,
    omega2: &LatticeFn<'_>,
    free_dims: usize,
    opts: &DcOptions,
) -> Result<DcValue> {
    let sups = sup_differences(omega1, omega2, free_dims, opts)?;
    let value = sups
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let w = 0.5f64.powi(i as i32 + 1);
            if r.is_infinite() {
                w
            } else {
                w * r / (1.0 + r)
            }
        })
        .sum();
    Ok(DcValue {
        value,
        uncertainty: 0.5f64.powi(opts.m_max as i32),
    })
}

/// `d_Upsilon = d_C(xi, xi') + d_C(xi_y, xi_y') + d_C(eta_y, eta_y') + d_C(eta_u, eta_u')`.
pub fn d_upsilon(
    zeta: &NonlinearPerturbation,
    zeta_ref: &NonlinearPerturbation,
    opts: &DcOptions,
) -> Result<DcValue> {
    let xi = |z: &NonlinearPerturbation, x: [f64; 2], f: &[f64]| z.xi_jet(x, f[0]);
    let eta = |z: &NonlinearPerturbation, x: [f64; 2], f: &[f64]| z.eta_jet(x, f[0], f[1]);
    let mut total = DcValue {
        value: 0.0,
        uncertainty: 0.0,
    };
    if zeta.xi.is_some() || zeta_ref.xi.is_some() {
        total = total
            + dc_metric(
                &|x, f| xi(zeta, x, f).value,
                &|x, f| xi(zeta_ref, x, f).value,
                1,
                opts,
            )?
            + dc_metric(
                &|x, f| xi(zeta, x, f).dy,
                &|x, f| xi(zeta_ref, x, f).dy,
                1,
                opts,
            )?;
    }
    if zeta.eta.is_some() || zeta_ref.eta.is_some() {
        total = total
            + dc_metric(
                &|x, f| eta(zeta, x, f).dy,
                &|x, f| eta(zeta_ref, x, f).dy,
                2,
                opts,
            )?
            + dc_metric(
                &|x, f| eta(zeta, x, f).du,
                &|x, f| eta(zeta_ref, x, f).du,
                2,
                opts,
            )?;
    }
    Ok(total)
}

/// Smallest `m >= 1` with the ball of radius `k_bound` inside `K_m`.
pub fn metlem_constant(k_bound: f64) -> Result<u32> {
    if !(k_bound > 0.0 && k_bound.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "compact-set radius must be positive, got {k_bound}"
        )));
    }
    Ok((k_bound.ceil() as u32).max(1))
}
