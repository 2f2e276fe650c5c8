//! State, adjoint and sensitivity solves.
//!
//! All linear systems are shifted solves `L z + d_y(., y) z = rhs` against the
//! problem's operator, so the adjoint is the exact discrete transpose of the
//! linearized state equation.

use crate::error::{Error, Result};
use crate::grid::{inner_product, ScalarField};
use crate::problem::{hamiltonian_derivatives, ControlField, PointwiseFn, ProblemSpec};

/// Converged state/adjoint triple with its switching function.
#[derive(Debug, Clone)]
pub struct OptimalitySnapshot {
    pub u: ControlField,
    pub y: ScalarField,
    pub p: ScalarField,
    pub sigma: ScalarField,
    pub state_residual: f64,
    pub adjoint_residual: f64,
}

#[derive(Debug, Clone)]
pub struct StateSolve {
    pub y: ScalarField,
    /// Max-norm residual before each Newton step and after the last one.
    pub residual_history: Vec<f64>,
}

impl StateSolve {
    pub fn iterations(&self) -> usize {
        self.residual_history.len().saturating_sub(1)
    }
}

fn state_residual(
    spec: &ProblemSpec,
    u: &ScalarField,
    y: &ScalarField,
    lift: Option<&ScalarField>,
    xi: Option<&PointwiseFn>,
) -> Result<(ScalarField, Vec<f64>, f64)> {
    let g = *spec.grid();
    let ly = spec.operator().apply(y)?;
    let w = spec.operator().weights();
    let mut scale = spec
        .operator()
        .matrix()
        .abs_matvec_shifted(None, y.values());
    for (s, wk) in scale.iter_mut().zip(w) {
        *s /= wk;
    }
    let beta = spec.beta().values();
    let mut f = ly.into_values();
    let mut slope = vec![0.0; g.len()];
    for k in 0..g.len() {
        let x = g.coords(k);
        let yk = y.values()[k];
        let d = spec.d(x, yk);
        let bu = beta[k] * u.values()[k];
        let mut r = d.value - bu;
        let mut s = d.dy;
        scale[k] += d.value.abs() + bu.abs();
        if let Some(xi) = xi {
            let e = xi(x, yk);
            r += e.value;
            s += e.dy;
            scale[k] += e.value.abs();
        }
        if let Some(l) = lift {
            r -= l.values()[k];
            scale[k] += l.values()[k].abs();
        }
        f[k] += r;
        slope[k] = s;
    }
    // residuals below the rounding of the terms themselves are noise
    let floor = 64.0 * f64::EPSILON * scale.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok((ScalarField::from_vec_unchecked(g, f), slope, floor))
}

fn shift_field(spec: &ProblemSpec, slope: Vec<f64>) -> Result<ScalarField> {
    let g = *spec.grid();
    if let Some((k, &v)) = slope.iter().enumerate().find(|(_, v)| **v < 0.0) {
        let x = g.coords(k);
        return Err(Error::MonotonicityGuard {
            x1: x[0],
            x2: x[1],
            y: f64::NAN,
            value: v,
        });
    }
    Ok(ScalarField::from_vec_unchecked(g, slope))
}

/// Damped Newton on `L y + d(., y) + xi(., y) - beta u - lift = 0`.
pub fn solve_state_general(
    spec: &ProblemSpec,
    u: &ScalarField,
    lift: Option<&ScalarField>,
    xi: Option<&PointwiseFn>,
    guess: Option<&ScalarField>,
) -> Result<StateSolve> {
    let g = *spec.grid();
    g.check_same(u.grid())?;
    if let Some(l) = lift {
        g.check_same(l.grid())?;
    }
    let tol = spec.tolerances();
    let mut y = match guess {
        Some(y0) => {
            g.check_same(y0.grid())?;
            y0.clone()
        }
        None => ScalarField::zeros(g),
    };
    let (mut f, mut slope, mut floor) = state_residual(spec, u, &y, lift, xi)?;
    let mut res = f.max_abs();
    let mut history = vec![res];
    for _ in 0..tol.newton_max_iters {
        if res <= tol.newton_tol.max(floor) {
            return Ok(StateSolve {
                y,
                residual_history: history,
            });
        }
        let alpha = shift_field(spec, slope)?;
        let step = spec.operator().solve_shifted(&alpha, &f.scale(-1.0))?;
        let mut theta = 1.0;
        let mut halvings = 0;
        loop {
            let trial = y.axpy(theta, &step)?;
            let (ft, st, fl) = state_residual(spec, u, &trial, lift, xi)?;
            let rt = ft.max_abs();
            if rt <= res || halvings >= tol.newton_max_halvings {
                y = trial;
                f = ft;
                slope = st;
                floor = fl;
                res = rt;
                break;
            }
            theta *= 0.5;
            halvings += 1;
        }
        history.push(res);
        if !res.is_finite() {
            break;
        }
    }
    if res <= tol.newton_tol.max(floor) {
        return Ok(StateSolve {
            y,
            residual_history: history,
        });
    }
    Err(Error::NewtonDivergence {
        iterations: history.len() - 1,
        history,
    })
}

/// State `y_u` with optional right-hand-side shift `lift`.
pub fn solve_state(
    spec: &ProblemSpec,
    u: &ControlField,
    lift: Option<&ScalarField>,
) -> Result<ScalarField> {
    Ok(solve_state_general(spec, u.field(), lift, None, None)?.y)
}

/// Adjoint `L p + (d_y + xi_y) p = w_y + s_y u + eta_y + lift`.
pub fn solve_adjoint_general(
    spec: &ProblemSpec,
    u: &ScalarField,
    y: &ScalarField,
    lift: Option<&ScalarField>,
    xi: Option<&PointwiseFn>,
    extra_rhs: Option<&ScalarField>,
) -> Result<(ScalarField, f64)> {
    let g = *spec.grid();
    g.check_same(u.grid())?;
    g.check_same(y.grid())?;
    let n = g.len();
    let mut slope = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let x = g.coords(k);
        let yk = y.values()[k];
        slope[k] = spec.d(x, yk).dy + xi.map_or(0.0, |f| f(x, yk).dy);
        rhs[k] = spec.w(x, yk).dy + spec.s(x, yk).dy * u.values()[k];
        if let Some(l) = lift {
            rhs[k] += l.values()[k];
        }
        if let Some(e) = extra_rhs {
            rhs[k] += e.values()[k];
        }
    }
    let alpha = shift_field(spec, slope)?;
    let rhs = ScalarField::from_vec_unchecked(g, rhs);
    let p = spec.operator().solve_shifted(&alpha, &rhs)?;
    let residual = relative_residual(spec, &alpha, &p, &rhs)?;
    Ok((p, residual))
}

/// `max |(L + alpha) p - rhs| w / max |rhs w|`, the weak-form relative residual.
pub fn relative_residual(
    spec: &ProblemSpec,
    alpha: &ScalarField,
    p: &ScalarField,
    rhs: &ScalarField,
) -> Result<f64> {
    let lp = spec.operator().apply_shifted(alpha, p)?;
    let w = spec.operator().weights();
    let num = lp
        .values()
        .iter()
        .zip(rhs.values())
        .zip(w)
        .fold(0.0f64, |m, ((a, b), wk)| m.max(((a - b) * wk).abs()));
    let den = rhs
        .values()
        .iter()
        .zip(w)
        .fold(0.0f64, |m, (b, wk)| m.max((b * wk).abs()));
    Ok(if den == 0.0 { num } else { num / den })
}

pub fn solve_adjoint(
    spec: &ProblemSpec,
    u: &ControlField,
    y: &ScalarField,
    lift: Option<&ScalarField>,
) -> Result<ScalarField> {
    Ok(solve_adjoint_general(spec, u.field(), y, lift, None, None)?.0)
}

/// `sigma = s(., y) + beta p`
pub fn switching(spec: &ProblemSpec, y: &ScalarField, p: &ScalarField) -> Result<ScalarField> {
    let g = *spec.grid();
    g.check_same(y.grid())?;
    g.check_same(p.grid())?;
    let vals = (0..g.len())
        .map(|k| spec.s(g.coords(k), y.values()[k]).value + spec.beta().values()[k] * p.values()[k])
        .collect();
    Ok(ScalarField::from_vec_unchecked(g, vals))
}

/// Solve state and adjoint for `u` and assemble the snapshot.
pub fn evaluate(spec: &ProblemSpec, u: &ControlField) -> Result<OptimalitySnapshot> {
    let st = solve_state_general(spec, u.field(), None, None, None)?;
    let (p, adjoint_residual) = solve_adjoint_general(spec, u.field(), &st.y, None, None, None)?;
    let sigma = switching(spec, &st.y, &p)?;
    Ok(OptimalitySnapshot {
        u: u.clone(),
        state_residual: *st.residual_history.last().unwrap_or(&0.0),
        y: st.y,
        p,
        sigma,
        adjoint_residual,
    })
}

/// Discrete objective `∫ w(x, y) + s(x, y) u dx`.
pub fn objective(spec: &ProblemSpec, u: &ScalarField, y: &ScalarField) -> Result<f64> {
    let g = *spec.grid();
    g.check_same(u.grid())?;
    g.check_same(y.grid())?;
    Ok((0..g.len())
        .map(|k| {
            let x = g.coords(k);
            let yk = y.values()[k];
            g.weight(k) * (spec.w(x, yk).value + spec.s(x, yk).value * u.values()[k])
        })
        .sum())
}

/// Reduced objective `J(u)`, solving the state on the way.
pub fn reduced_objective(spec: &ProblemSpec, u: &ScalarField) -> Result<f64> {
    let y = solve_state_general(spec, u, None, None, None)?.y;
    objective(spec, u, &y)
}

fn linearization_shift(spec: &ProblemSpec, snapshot: &OptimalitySnapshot) -> Result<ScalarField> {
    let g = *spec.grid();
    let slope = (0..g.len())
        .map(|k| spec.d(g.coords(k), snapshot.y.values()[k]).dy)
        .collect();
    shift_field(spec, slope)
}

/// `z_v`: `L z + d_y(., y) z = beta v`.
pub fn solve_linearized_state(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
) -> Result<ScalarField> {
    let alpha = linearization_shift(spec, snapshot)?;
    let rhs = spec.beta().mul(v)?;
    spec.operator().solve_shifted(&alpha, &rhs)
}

/// `q_v`: `L q + d_y(., y) q = H_yy z_v + H_yu v`.
pub fn solve_linearized_adjoint(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
    z_v: &ScalarField,
) -> Result<ScalarField> {
    let h = hamiltonian_derivatives(spec, &snapshot.y, &snapshot.p, snapshot.u.field())?;
    let rhs = h.h_yy.mul(z_v)?.add(&h.h_yu.mul(v)?)?;
    let alpha = linearization_shift(spec, snapshot)?;
    spec.operator().solve_shifted(&alpha, &rhs)
}

/// The linearized state, adjoint and switching function along `v`.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub z: ScalarField,
    pub q: ScalarField,
    pub pi: ScalarField,
}

pub fn sensitivity(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
) -> Result<Sensitivity> {
    let z = solve_linearized_state(spec, snapshot, v)?;
    let q = solve_linearized_adjoint(spec, snapshot, v, &z)?;
    let g = *spec.grid();
    let pi = (0..g.len())
        .map(|k| {
            spec.s(g.coords(k), snapshot.y.values()[k]).dy * z.values()[k]
                + spec.beta().values()[k] * q.values()[k]
        })
        .collect();
    Ok(Sensitivity {
        pi: ScalarField::from_vec_unchecked(g, pi),
        z,
        q,
    })
}

/// `pi_v = H_uy z_v + H_up q_v`
pub fn pi_of(
    spec: &ProblemSpec,
    snapshot: &OptimalitySnapshot,
    v: &ScalarField,
) -> Result<ScalarField> {
    Ok(sensitivity(spec, snapshot, v)?.pi)
}

/// `∫ sigma v dx`, the directional derivative of the reduced objective.
pub fn directional_derivative(snapshot: &OptimalitySnapshot, v: &ScalarField) -> Result<f64> {
    inner_product(&snapshot.sigma, v)
}
