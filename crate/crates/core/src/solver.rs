//! Explicit Ito finite-difference integration of the semilinear stochastic
//! heat equation, its linear special case, the exponential kill-rate
//! transform, and the stochastic convolution sup-norm functional.
//!
//! Interior update for one step:
//!
//! ```text
//! u_i <- u_i + dt * (u_{i+1} - 2 u_i + u_{i-1}) / dx^2
//!           + dt * b(t, x_i, u_i)
//!           + sigma(t, x_i, u_i) * dW_{j,i} / dx
//! ```
//!
//! with coefficients evaluated at the left time point (Ito convention) and
//! endpoints reset to zero after every step.

use crate::grid::{FieldState, FieldTrajectory, Grid};
use crate::noise::NoiseRealization;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite value at step {step}, cell {cell}")]
    BlowUp { step: usize, cell: usize },
    #[error("coefficient contract violated: |{field}(t={t}, x={x})| = {value:e} exceeds declared bound {bound:e}")]
    CoefficientContract {
        field: &'static str,
        t: f64,
        x: f64,
        value: f64,
        bound: f64,
    },
    #[error("state time {state_time} does not match grid step time {expected}")]
    TimeMismatch { state_time: f64, expected: f64 },
    #[error("noise realization shape does not match grid")]
    NoiseShapeMismatch,
}

pub type CoeffFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Drift and diffusion coefficients of the equation, together with their
/// u-derivatives for the linearized (Malliavin) system.
#[derive(Clone)]
pub enum Coefficients {
    /// b(t,x,u), sigma(t,x,u) with analytically supplied u-derivatives.
    General {
        b: CoeffFn,
        sigma: CoeffFn,
        b_du: CoeffFn,
        sigma_du: CoeffFn,
    },
    /// b = B(t,x) u, sigma = H(t,x) u with declared sup bounds; the bounds
    /// are checked at every evaluated point.
    Linear {
        big_b: FieldFn,
        h: FieldFn,
        k_b: f64,
        k_h: f64,
    },
}

impl Coefficients {
    /// b = 0, sigma = 0.
    pub fn deterministic() -> Self {
        Coefficients::General {
            b: Arc::new(|_, _, _| 0.0),
            sigma: Arc::new(|_, _, _| 0.0),
            b_du: Arc::new(|_, _, _| 0.0),
            sigma_du: Arc::new(|_, _, _| 0.0),
        }
    }

    /// b = 0, sigma identically `sigma0` (additive noise).
    pub fn additive(sigma0: f64) -> Self {
        Coefficients::General {
            b: Arc::new(|_, _, _| 0.0),
            sigma: Arc::new(move |_, _, _| sigma0),
            b_du: Arc::new(|_, _, _| 0.0),
            sigma_du: Arc::new(|_, _, _| 0.0),
        }
    }

    /// Linear fields with constant B and H.
    pub fn linear_const(big_b: f64, h: f64) -> Self {
        Coefficients::Linear {
            big_b: Arc::new(move |_, _| big_b),
            h: Arc::new(move |_, _| h),
            k_b: big_b.abs(),
            k_h: h.abs(),
        }
    }

    pub fn linear(big_b: FieldFn, h: FieldFn, k_b: f64, k_h: f64) -> Self {
        Coefficients::Linear { big_b, h, k_b, k_h }
    }

    pub fn semilinear(b: CoeffFn, sigma: CoeffFn, b_du: CoeffFn, sigma_du: CoeffFn) -> Self {
        Coefficients::General {
            b,
            sigma,
            b_du,
            sigma_du,
        }
    }

    /// Drift and diffusion at (t, x, u); linear fields are bound-checked.
    #[inline]
    pub fn eval(&self, t: f64, x: f64, u: f64) -> Result<(f64, f64), SolverError> {
        match self {
            Coefficients::General { b, sigma, .. } => Ok((b(t, x, u), sigma(t, x, u))),
            Coefficients::Linear { big_b, h, k_b, k_h } => {
                let bv = big_b(t, x);
                if bv.abs() > *k_b + 1e-12 {
                    return Err(SolverError::CoefficientContract {
                        field: "B",
                        t,
                        x,
                        value: bv.abs(),
                        bound: *k_b,
                    });
                }
                let hv = h(t, x);
                if hv.abs() > *k_h + 1e-12 {
                    return Err(SolverError::CoefficientContract {
                        field: "H",
                        t,
                        x,
                        value: hv.abs(),
                        bound: *k_h,
                    });
                }
                Ok((bv * u, hv * u))
            }
        }
    }

    /// (db/du, dsigma/du) at (t, x, u). For linear fields these are (B, H).
    #[inline]
    pub fn eval_derivatives(&self, t: f64, x: f64, u: f64) -> (f64, f64) {
        match self {
            Coefficients::General { b_du, sigma_du, .. } => (b_du(t, x, u), sigma_du(t, x, u)),
            Coefficients::Linear { big_b, h, .. } => (big_b(t, x), h(t, x)),
        }
    }
}

/// One explicit Euler-Maruyama step. `noise_row` holds the step's standard
/// normals, one per spatial cell; the physical increment is recovered with
/// the grid's dt and dx.
pub fn step(
    state: &FieldState,
    coeffs: &Coefficients,
    noise_row: &[f64],
    grid: &Grid,
) -> Result<FieldState, SolverError> {
    let mut next = state.clone();
    let j = (state.time / grid.dt()).round() as usize;
    step_in_place(&mut next.values, j, state.time, coeffs, noise_row, grid)?;
    next.time = state.time + grid.dt();
    Ok(next)
}

/// Core update, writing the new state over `values`.
#[inline]
fn step_in_place(
    values: &mut [f64],
    j: usize,
    t: f64,
    coeffs: &Coefficients,
    noise_row: &[f64],
    grid: &Grid,
) -> Result<(), SolverError> {
    let n = grid.n_space();
    let dt = grid.dt();
    let dx = grid.dx();
    let r = dt / (dx * dx);
    let noise_scale = (dt / dx).sqrt();
    let mut left = values[0];
    let mut bad: Option<usize> = None;
    for i in 1..n {
        let u = values[i];
        let (b, sigma) = coeffs.eval(t, grid.node(i), u)?;
        let lap = values[i + 1] - 2.0 * u + left;
        let new = u + r * lap + dt * b + sigma * noise_row[i] * noise_scale;
        left = u;
        values[i] = new;
        if !new.is_finite() && bad.is_none() {
            bad = Some(i);
        }
    }
    values[0] = 0.0;
    values[n] = 0.0;
    if let Some(cell) = bad {
        return Err(SolverError::BlowUp { step: j, cell });
    }
    Ok(())
}

/// Integrate from `u0` to the horizon, recording every `record_stride`-th
/// state (the initial and final states are always recorded).
pub fn evolve_recorded(
    coeffs: &Coefficients,
    u0: &FieldState,
    grid: &Grid,
    noise: &NoiseRealization,
    record_stride: usize,
) -> Result<FieldTrajectory, SolverError> {
    if u0.time != 0.0 {
        return Err(SolverError::TimeMismatch {
            state_time: u0.time,
            expected: 0.0,
        });
    }
    if noise.n_steps() != grid.n_steps() || noise.n_space() != grid.n_space() {
        return Err(SolverError::NoiseShapeMismatch);
    }
    let stride = record_stride.max(1);
    let mut values = u0.values.clone();
    let mut states = Vec::with_capacity(grid.n_steps() / stride + 2);
    states.push(FieldState {
        values: values.clone(),
        time: 0.0,
    });
    for j in 0..grid.n_steps() {
        step_in_place(&mut values, j, grid.time(j), coeffs, noise.row(j), grid)?;
        let done = j + 1 == grid.n_steps();
        if (j + 1) % stride == 0 || done {
            states.push(FieldState {
                values: values.clone(),
                time: grid.time(j + 1),
            });
        }
    }
    Ok(FieldTrajectory {
        states,
        path_id: noise.path_index(),
        seed: noise.seed(),
        record_stride: stride,
    })
}

/// Integrate from `u0` to the horizon, recording every state.
pub fn evolve(
    coeffs: &Coefficients,
    u0: &FieldState,
    grid: &Grid,
    noise: &NoiseRealization,
) -> Result<FieldTrajectory, SolverError> {
    evolve_recorded(coeffs, u0, grid, noise, 1)
}

/// Final state only; avoids retaining the trajectory for large ensembles.
pub fn evolve_final(
    coeffs: &Coefficients,
    u0: &FieldState,
    grid: &Grid,
    noise: &NoiseRealization,
) -> Result<FieldState, SolverError> {
    if noise.n_steps() != grid.n_steps() || noise.n_space() != grid.n_space() {
        return Err(SolverError::NoiseShapeMismatch);
    }
    let mut values = u0.values.clone();
    for j in 0..grid.n_steps() {
        step_in_place(&mut values, j, grid.time(j), coeffs, noise.row(j), grid)?;
    }
    Ok(FieldState {
        values,
        time: grid.horizon(),
    })
}

/// Linear equation du = u_xx + B u + H u dW with declared sup bounds.
pub fn evolve_linear(
    big_b: FieldFn,
    h: FieldFn,
    k_b: f64,
    k_h: f64,
    u0: &FieldState,
    grid: &Grid,
    noise: &NoiseRealization,
) -> Result<FieldTrajectory, SolverError> {
    evolve(&Coefficients::linear(big_b, h, k_b, k_h), u0, grid, noise)
}

/// Scale every recorded state by exp(-K t_j).
///
/// For a trajectory of du = u_xx + H u dW under a given noise, this produces
/// the trajectory of dw = w_xx - K w + H w dW under the same noise (up to the
/// scheme's O(dt) step error), and moments satisfy
/// E[w^{-p}] = e^{K t p} E[u^{-p}].
pub fn kill_rate_transform(traj: &FieldTrajectory, kill_rate: f64) -> FieldTrajectory {
    let mut out = traj.clone();
    for state in &mut out.states {
        let factor = (-kill_rate * state.time).exp();
        for v in &mut state.values {
            *v *= factor;
        }
    }
    out
}

/// Evolve the stochastic convolution
/// N(t,x) = int_0^t int_0^1 G_{t-s}(x,y) w(s,y) W(ds,dy)
/// for a deterministic bounded field w, returning sup |N| over every step
/// and node. The field must satisfy |w| <= bound_m everywhere it is
/// evaluated.
pub fn stochastic_convolution_sup(
    w: &dyn Fn(f64, f64) -> f64,
    bound_m: f64,
    grid: &Grid,
    noise: &NoiseRealization,
) -> Result<f64, SolverError> {
    if noise.n_steps() != grid.n_steps() || noise.n_space() != grid.n_space() {
        return Err(SolverError::NoiseShapeMismatch);
    }
    let n = grid.n_space();
    let dt = grid.dt();
    let dx = grid.dx();
    let r = dt / (dx * dx);
    let noise_scale = (dt / dx).sqrt();
    let mut values = vec![0.0; grid.n_nodes()];
    let mut sup = 0.0f64;
    for j in 0..grid.n_steps() {
        let t = grid.time(j);
        let row = noise.row(j);
        let mut left = values[0];
        for i in 1..n {
            let x = grid.node(i);
            let wv = w(t, x);
            if wv.abs() > bound_m + 1e-12 {
                return Err(SolverError::CoefficientContract {
                    field: "w",
                    t,
                    x,
                    value: wv.abs(),
                    bound: bound_m,
                });
            }
            let u = values[i];
            let lap = values[i + 1] - 2.0 * u + left;
            let new = u + r * lap + wv * row[i] * noise_scale;
            if !new.is_finite() {
                return Err(SolverError::BlowUp { step: j, cell: i });
            }
            left = u;
            values[i] = new;
            let a = new.abs();
            if a > sup {
                sup = a;
            }
        }
        values[0] = 0.0;
        values[n] = 0.0;
    }
    Ok(sup)
}
