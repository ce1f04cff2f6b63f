//! Malliavin derivative co-integration along a frozen solution path.
//!
//! The derivative D_{theta,xi}u(t,x) solves the linearized equation driven by
//! the same noise as the base path, started at time theta from
//! sigma(theta, xi, u(theta,xi)) times a discrete delta (1/dx at node xi).
//! The integrated derivative Y^theta starts from the band indicator instead,
//! and the Malliavin energy C_{t,x} integrates D^2 over (theta, xi) by
//! trapezoid quadrature.

use crate::grid::{FieldTrajectory, Grid};
use crate::noise::NoiseRealization;
use crate::solver::Coefficients;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MalliavinError {
    #[error("trajectory and noise are not a generating pair (seed/path/shape mismatch)")]
    PairingMismatch,
    #[error("trajectory must record every step (record_stride = {0})")]
    StrideNotUnit(usize),
    #[error("band [{a}, {b}] is not aligned to grid nodes inside (0,1)")]
    BandAlignment { a: f64, b: f64 },
    #[error("theta step {theta} exceeds target step {t}")]
    ThetaAfterTarget { theta: usize, t: usize },
    #[error("theta stride {stride} exceeds step count {n_steps}")]
    StrideTooLarge { stride: usize, n_steps: usize },
    #[error("node index {0} is not an interior node")]
    NotInterior(usize),
}

/// Derivative field D_{theta,xi}u(t_j, x_i) for one (theta, xi), recorded at
/// every step from theta to the horizon. The delta initial condition is
/// regularized over one cell (width dx).
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub theta_index: usize,
    pub xi_index: usize,
    /// states[k] holds the field at step theta_index + k.
    pub states: Vec<Vec<f64>>,
    /// Regularization width of the discrete delta (= dx).
    pub regularization_width: f64,
}

impl DerivativeField {
    /// D at solver step j, node i; zero for j < theta ("the derivative
    /// vanishes before the perturbation time").
    pub fn value(&self, j: usize, i: usize) -> f64 {
        if j < self.theta_index {
            0.0
        } else {
            self.states[j - self.theta_index][i]
        }
    }

    pub fn field_at(&self, j: usize) -> Option<&[f64]> {
        j.checked_sub(self.theta_index)
            .and_then(|k| self.states.get(k))
            .map(Vec::as_slice)
    }
}

/// Integrated derivative Y^theta_{t,x} over a node-aligned band [a,b].
#[derive(Debug, Clone)]
pub struct IntegratedDerivative {
    pub theta_index: usize,
    /// Band endpoints as node indices.
    pub band: (usize, usize),
    /// states[k] holds Y at step theta_index + k.
    pub states: Vec<Vec<f64>>,
}

impl IntegratedDerivative {
    pub fn value(&self, j: usize, i: usize) -> f64 {
        if j < self.theta_index {
            0.0
        } else {
            self.states[j - self.theta_index][i]
        }
    }
}

/// Malliavin energy C_{t,x} with quadrature bookkeeping.
#[derive(Debug, Clone)]
pub struct MalliavinEnergy {
    pub c: f64,
    pub t_index: usize,
    pub x_index: usize,
    pub theta_stride: usize,
    /// Coarse estimate from comparing against a doubled theta stride.
    pub quadrature_error_estimate: f64,
    /// Per-sample lower bound sum_theta dtheta (Y^theta)^2 / (b-a) when a
    /// band was supplied.
    pub band_lower_bound: Option<f64>,
}

fn check_pairing(
    traj: &FieldTrajectory,
    noise: &NoiseRealization,
    grid: &Grid,
) -> Result<(), MalliavinError> {
    if traj.record_stride != 1 {
        return Err(MalliavinError::StrideNotUnit(traj.record_stride));
    }
    if traj.seed != noise.seed()
        || traj.path_id != noise.path_index()
        || traj.states.len() != grid.n_steps() + 1
        || noise.n_steps() != grid.n_steps()
        || noise.n_space() != grid.n_space()
    {
        return Err(MalliavinError::PairingMismatch);
    }
    Ok(())
}

/// Map a band [a,b] in (0,1) to node indices, requiring node alignment.
pub fn band_to_nodes(a: f64, b: f64, grid: &Grid) -> Result<(usize, usize), MalliavinError> {
    let err = MalliavinError::BandAlignment { a, b };
    let (Some(lo), Some(hi)) = (grid.node_index(a, 1e-9), grid.node_index(b, 1e-9)) else {
        return Err(err);
    };
    if lo == 0 || hi >= grid.n_space() || hi <= lo {
        return Err(MalliavinError::BandAlignment { a, b });
    }
    Ok((lo, hi))
}

/// One linearized step applied in place: the same explicit scheme with drift
/// coefficient (db/du) D and noise coefficient (dsigma/du) D, evaluated
/// along the base path at the left time point.
#[inline]
fn linearized_step_in_place(
    d: &mut [f64],
    u_state: &[f64],
    j: usize,
    coeffs: &Coefficients,
    noise: &NoiseRealization,
    grid: &Grid,
) {
    let n = grid.n_space();
    let dt = grid.dt();
    let dx = grid.dx();
    let r = dt / (dx * dx);
    let noise_scale = (dt / dx).sqrt();
    let t = grid.time(j);
    let row = noise.row(j);
    let mut left = d[0];
    for i in 1..n {
        let (b_du, s_du) = coeffs.eval_derivatives(t, grid.node(i), u_state[i]);
        let v = d[i];
        let lap = d[i + 1] - 2.0 * v + left;
        left = v;
        d[i] = v + r * lap + dt * b_du * v + s_du * v * row[i] * noise_scale;
    }
    d[0] = 0.0;
    d[n] = 0.0;
}

/// Per-step multipliers shared by every row of the delta-basis matrix
/// recursion: growth factor a_i = 1 + dt (db/du) + (dsigma/du) dW/dx.
#[inline]
fn step_multipliers(
    j: usize,
    u_state: &[f64],
    coeffs: &Coefficients,
    noise: &NoiseRealization,
    grid: &Grid,
    out: &mut [f64],
) {
    let t = grid.time(j);
    let dt = grid.dt();
    let noise_scale = (dt / grid.dx()).sqrt();
    let row = noise.row(j);
    for i in 1..grid.n_space() {
        let (b_du, s_du) = coeffs.eval_derivatives(t, grid.node(i), u_state[i]);
        out[i] = 1.0 + dt * b_du + s_du * row[i] * noise_scale;
    }
}

/// Evolve D_{theta,xi} along the (traj, noise) pair that generated each
/// other. The initial condition at step theta is
/// sigma(theta, xi, u(theta,xi)) / dx at node xi.
pub fn evolve_derivative(
    traj: &FieldTrajectory,
    coeffs: &Coefficients,
    theta_index: usize,
    xi_index: usize,
    noise: &NoiseRealization,
    grid: &Grid,
) -> Result<DerivativeField, MalliavinError> {
    check_pairing(traj, noise, grid)?;
    if xi_index == 0 || xi_index >= grid.n_space() {
        return Err(MalliavinError::NotInterior(xi_index));
    }
    let n_steps = grid.n_steps();
    if theta_index > n_steps {
        return Err(MalliavinError::ThetaAfterTarget {
            theta: theta_index,
            t: n_steps,
        });
    }
    let u_theta = &traj.states[theta_index];
    let (_, sigma) = coeffs
        .eval(
            grid.time(theta_index),
            grid.node(xi_index),
            u_theta.values[xi_index],
        )
        .expect("coefficient bounds hold along an already-integrated path");
    let mut d = vec![0.0; grid.n_nodes()];
    d[xi_index] = sigma / grid.dx();
    let mut states = Vec::with_capacity(n_steps - theta_index + 1);
    states.push(d.clone());
    for j in theta_index..n_steps {
        linearized_step_in_place(&mut d, &traj.states[j].values, j, coeffs, noise, grid);
        states.push(d.clone());
    }
    Ok(DerivativeField {
        theta_index,
        xi_index,
        states,
        regularization_width: grid.dx(),
    })
}

/// Evolve the integrated derivative Y^theta for a node-aligned band, started
/// from sigma(theta, xi, u(theta,xi)) 1_[a,b](xi) nodewise (no delta, no
/// regularization).
pub fn evolve_integrated_derivative(
    traj: &FieldTrajectory,
    coeffs: &Coefficients,
    theta_index: usize,
    band: (f64, f64),
    noise: &NoiseRealization,
    grid: &Grid,
) -> Result<IntegratedDerivative, MalliavinError> {
    check_pairing(traj, noise, grid)?;
    let (lo, hi) = band_to_nodes(band.0, band.1, grid)?;
    let n_steps = grid.n_steps();
    if theta_index > n_steps {
        return Err(MalliavinError::ThetaAfterTarget {
            theta: theta_index,
            t: n_steps,
        });
    }
    let u_theta = &traj.states[theta_index];
    let mut y = vec![0.0; grid.n_nodes()];
    for (xi, v) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let (_, sigma) = coeffs
            .eval(grid.time(theta_index), grid.node(xi), u_theta.values[xi])
            .expect("coefficient bounds hold along an already-integrated path");
        *v = sigma;
    }
    y[0] = 0.0;
    y[grid.n_space()] = 0.0;
    let mut states = Vec::with_capacity(n_steps - theta_index + 1);
    states.push(y.clone());
    for j in theta_index..n_steps {
        linearized_step_in_place(&mut y, &traj.states[j].values, j, coeffs, noise, grid);
        states.push(y.clone());
    }
    Ok(IntegratedDerivative {
        theta_index,
        band: (lo, hi),
        states,
    })
}

/// Trapezoid weights over an index range [lo, hi] with spacing dx.
fn trapezoid_weight(i: usize, lo: usize, hi: usize, dx: f64) -> f64 {
    if i == lo || i == hi {
        0.5 * dx
    } else {
        dx
    }
}

/// Compute the Malliavin energy C_{t,x} = int_0^t int_0^1 D^2 dxi dtheta by
/// trapezoid quadrature on a theta subgrid of the given stride.
///
/// For each sampled theta the full delta basis is evolved simultaneously as
/// a matrix recursion (one row per interior perturbation node), so a single
/// pass from theta to t yields D_{theta,xi}u(t,x) for every xi. When `band`
/// is supplied, the per-theta band integrals Y^theta are accumulated into
/// the Cauchy-Schwarz lower bound sum_theta dtheta (Y^theta)^2 / (b-a).
#[allow(clippy::too_many_arguments)]
pub fn malliavin_energy(
    traj: &FieldTrajectory,
    coeffs: &Coefficients,
    noise: &NoiseRealization,
    t_index: usize,
    x_index: usize,
    theta_stride: usize,
    band: Option<(f64, f64)>,
    grid: &Grid,
) -> Result<MalliavinEnergy, MalliavinError> {
    check_pairing(traj, noise, grid)?;
    if x_index == 0 || x_index >= grid.n_space() {
        return Err(MalliavinError::NotInterior(x_index));
    }
    if theta_stride == 0 || theta_stride > grid.n_steps() {
        return Err(MalliavinError::StrideTooLarge {
            stride: theta_stride,
            n_steps: grid.n_steps(),
        });
    }
    if t_index > grid.n_steps() || t_index == 0 {
        return Err(MalliavinError::ThetaAfterTarget {
            theta: t_index,
            t: grid.n_steps(),
        });
    }
    let band_nodes = band.map(|(a, b)| band_to_nodes(a, b, grid)).transpose()?;

    let n = grid.n_space();
    let dx = grid.dx();
    let dt = grid.dt();

    // theta sample points: 0, stride, 2*stride, ..., t_index (always included)
    let mut thetas: Vec<usize> = (0..t_index).step_by(theta_stride).collect();
    thetas.push(t_index);

    // Precompute per-step multipliers and reuse them across theta passes.
    let mut multipliers = vec![vec![0.0; grid.n_nodes()]; t_index];
    for (j, m) in multipliers.iter_mut().enumerate() {
        step_multipliers(j, &traj.states[j].values, coeffs, noise, grid, m);
    }
    let r = dt / (dx * dx);

    let mut space_integrals = Vec::with_capacity(thetas.len());
    let mut band_integrals = Vec::with_capacity(thetas.len());
    // matrix recursion state: one row per interior perturbation node xi
    let mut rows = vec![vec![0.0; grid.n_nodes()]; n - 1];
    let mut scratch = vec![0.0; grid.n_nodes()];
    for &theta in &thetas {
        let u_theta = &traj.states[theta];
        for (k, row) in rows.iter_mut().enumerate() {
            let xi = k + 1;
            row.iter_mut().for_each(|v| *v = 0.0);
            let (_, sigma) = coeffs
                .eval(grid.time(theta), grid.node(xi), u_theta.values[xi])
                .expect("coefficient bounds hold along an already-integrated path");
            row[xi] = sigma / dx;
        }
        for mult in multipliers.iter().take(t_index).skip(theta) {
            for row in rows.iter_mut() {
                scratch[..=n].copy_from_slice(row);
                for i in 1..n {
                    row[i] = mult[i] * scratch[i]
                        + r * (scratch[i + 1] - 2.0 * scratch[i] + scratch[i - 1]);
                }
                row[0] = 0.0;
                row[n] = 0.0;
            }
        }
        // D_{theta,xi}u(t,x) over xi is the x_index column of the matrix
        let mut sq = 0.0;
        let mut band_sum = 0.0;
        for (k, row) in rows.iter().enumerate() {
            let xi = k + 1;
            let d = row[x_index];
            sq += trapezoid_weight(xi, 0, n, dx) * d * d;
            if let Some((lo, hi)) = band_nodes {
                if xi >= lo && xi <= hi {
                    band_sum += trapezoid_weight(xi, lo, hi, dx) * d;
                }
            }
        }
        space_integrals.push(sq);
        band_integrals.push(band_sum);
    }

    let theta_time = |k: usize| grid.time(thetas[k]);
    let integrate = |vals: &dyn Fn(usize) -> f64, every: usize| -> f64 {
        // non-uniform trapezoid over the (sub)sampled theta grid
        let idx: Vec<usize> = (0..thetas.len())
            .step_by(every)
            .chain(std::iter::once(thetas.len() - 1))
            .collect();
        let mut acc = 0.0;
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            acc += 0.5 * (vals(a) + vals(b)) * (theta_time(b) - theta_time(a));
        }
        acc
    };

    let c = integrate(&|k| space_integrals[k], 1);
    let c_coarse = if thetas.len() >= 3 {
        integrate(&|k| space_integrals[k], 2)
    } else {
        c
    };
    let band_lower_bound = band_nodes.map(|(lo, hi)| {
        let width = (hi - lo) as f64 * dx;
        integrate(&|k| band_integrals[k] * band_integrals[k], 1) / width
    });

    Ok(MalliavinEnergy {
        c,
        t_index,
        x_index,
        theta_stride,
        quadrature_error_estimate: (c - c_coarse).abs(),
        band_lower_bound,
    })
}
