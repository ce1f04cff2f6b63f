//! Dirichlet heat kernel G_t(x,y) on [0,1] and its semigroup action.
//!
//! Two representations are used: the eigenfunction series
//! 2 sum_n sin(n pi x) sin(n pi y) exp(-n^2 pi^2 t) for large t and the
//! method-of-images sum of Gaussians for small t, switched at
//! `crossover_time`. Both series are truncated once their tail bound drops
//! below `tolerance`.

use crate::grid::{FieldState, Grid};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("kernel coordinate {0} outside [0,1]")]
    OutOfDomain(f64),
}

/// Evaluator for the Dirichlet heat kernel with a fixed truncation target.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    tolerance: f64,
    crossover_time: f64,
}

impl Default for KernelEvaluator {
    fn default() -> Self {
        KernelEvaluator {
            tolerance: 1e-10,
            crossover_time: 0.025,
        }
    }
}

impl KernelEvaluator {
    pub fn new(tolerance: f64, crossover_time: f64) -> Self {
        assert!(
            tolerance > 0.0 && tolerance <= 1e-6,
            "tolerance must be in (0, 1e-6]"
        );
        assert!(crossover_time > 0.0, "crossover_time must be positive");
        KernelEvaluator {
            tolerance,
            crossover_time,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// G_t(x,y) with absolute truncation error at most `tolerance`.
    pub fn value(&self, t: f64, x: f64, y: f64) -> Result<f64, KernelError> {
        if t <= 0.0 || t.is_nan() {
            return Err(KernelError::NonPositiveTime(t));
        }
        for c in [x, y] {
            if !(0.0..=1.0).contains(&c) {
                return Err(KernelError::OutOfDomain(c));
            }
        }
        if t < self.crossover_time {
            Ok(self.image_sum(t, x, y))
        } else {
            Ok(self.eigen_sum(t, x, y))
        }
    }

    /// Method-of-images representation: sum over reflections of the
    /// free-space Gaussian, with the odd images entering negatively.
    pub fn image_sum(&self, t: f64, x: f64, y: f64) -> f64 {
        let norm = 1.0 / (4.0 * PI * t).sqrt();
        let gauss = |z: f64| {
            let e = -z * z / (4.0 * t);
            if e < -745.0 {
                0.0
            } else {
                norm * e.exp()
            }
        };
        let mut sum = gauss(x - y) - gauss(x + y);
        let mut k = 1i64;
        loop {
            let shift = 2.0 * k as f64;
            let term = gauss(x - y - shift) - gauss(x + y - shift) + gauss(x - y + shift)
                - gauss(x + y + shift);
            sum += term;
            // largest remaining image sits at distance >= 2k - 2 from [0,1]
            let far = 2.0 * k as f64 - 1.0;
            if 4.0 * norm * (-far * far / (4.0 * t)).exp() < self.tolerance || k > 64 {
                break;
            }
            k += 1;
        }
        sum
    }

    /// Eigenfunction representation 2 sum_n sin(n pi x) sin(n pi y) e^{-n^2 pi^2 t}.
    pub fn eigen_sum(&self, t: f64, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        for n in 1..=4096 {
            let nf = n as f64;
            let damp = (-nf * nf * PI * PI * t).exp();
            sum += 2.0 * (nf * PI * x).sin() * (nf * PI * y).sin() * damp;
            // remaining terms are dominated by a geometric series with
            // ratio exp(-(2n+3) pi^2 t)
            let ratio = (-(2.0 * nf + 3.0) * PI * PI * t).exp();
            let next = (-(nf + 1.0) * (nf + 1.0) * PI * PI * t).exp();
            if 2.0 * next / (1.0 - ratio) < self.tolerance {
                break;
            }
        }
        sum
    }

    /// Semigroup action: node values of int_0^1 G_t(x,y) u(y) dy by trapezoid
    /// quadrature on the grid nodes. Endpoints are set to zero.
    pub fn semigroup_apply(
        &self,
        t: f64,
        state: &FieldState,
        grid: &Grid,
    ) -> Result<FieldState, KernelError> {
        let n = grid.n_space();
        let dx = grid.dx();
        let mut values = vec![0.0; grid.n_nodes()];
        for (i, out) in values.iter_mut().enumerate().take(n).skip(1) {
            let x = grid.node(i);
            let mut acc = 0.5
                * (self.value(t, x, 0.0)? * state.values[0]
                    + self.value(t, x, 1.0)? * state.values[n]);
            for k in 1..n {
                acc += self.value(t, x, grid.node(k))? * state.values[k];
            }
            *out = acc * dx;
        }
        Ok(FieldState {
            values,
            time: state.time + t,
        })
    }

    /// int_lo^hi G_t(x,y) dy by trapezoid quadrature with `n_quad` panels.
    /// Requires [lo, hi] inside [0,1].
    pub fn integrate_band(
        &self,
        t: f64,
        x: f64,
        lo: f64,
        hi: f64,
        n_quad: usize,
    ) -> Result<f64, KernelError> {
        assert!(hi > lo && n_quad >= 2);
        let h = (hi - lo) / n_quad as f64;
        let mut acc = 0.5 * (self.value(t, x, lo)? + self.value(t, x, hi)?);
        for k in 1..n_quad {
            acc += self.value(t, x, lo + k as f64 * h)?;
        }
        Ok(acc * h)
    }
}

/// Closed form of int_0^1 G_tau(x,xi)^2 dxi via eigenfunction orthonormality:
/// 2 sum_n sin^2(n pi x) exp(-2 n^2 pi^2 tau).
pub fn kernel_squared_space_integral(tau: f64, x: f64) -> f64 {
    assert!(tau > 0.0);
    let mut sum = 0.0;
    for n in 1..=4096 {
        let nf = n as f64;
        let term = 2.0 * (nf * PI * x).sin().powi(2) * (-2.0 * nf * nf * PI * PI * tau).exp();
        sum += term;
        if 2.0 * (-2.0 * (nf + 1.0) * (nf + 1.0) * PI * PI * tau).exp() < 1e-16 {
            break;
        }
    }
    sum
}

/// Closed form of the additive-noise Malliavin energy
/// int_0^t int_0^1 G_{t-theta}(x,xi)^2 dxi dtheta
/// = sum_n sin^2(n pi x) (1 - exp(-2 n^2 pi^2 t)) / (n^2 pi^2).
pub fn kernel_energy_integral(t: f64, x: f64) -> f64 {
    assert!(t > 0.0);
    let mut sum = 0.0;
    for n in 1..=200_000 {
        let nf = n as f64;
        let lam = nf * nf * PI * PI;
        let term = (nf * PI * x).sin().powi(2) * (1.0 - (-2.0 * lam * t).exp()) / lam;
        sum += term;
        // tail of sum 1/(n^2 pi^2) below 1e-12
        if 1.0 / (nf * PI * PI) < 1e-12 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::project_initial_condition;
    use approx::assert_relative_eq;

    #[test]
    fn symmetry_in_x_and_y() {
        let k = KernelEvaluator::default();
        let a = k.value(0.05, 0.3, 0.7).unwrap();
        let b = k.value(0.05, 0.7, 0.3).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn small_time_matches_free_space_gaussian() {
        // image corrections at t = 0.001, x = y = 0.5 are below 1e-20
        let k = KernelEvaluator::default();
        let expected = 1.0 / (4.0 * PI * 0.001).sqrt();
        let got = k.value(0.001, 0.5, 0.5).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        assert_relative_eq!(got, 8.9206, max_relative = 1e-4);
    }

    #[test]
    fn large_time_matches_leading_eigenmode() {
        // next term is suppressed by exp(-3 pi^2) relative to the first
        let k = KernelEvaluator::default();
        let expected = 2.0 * (-PI * PI).exp();
        let got = k.value(1.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-10);
        assert_relative_eq!(got, 1.035e-4, max_relative = 1e-3);
    }

    #[test]
    fn representations_agree_near_crossover() {
        let k = KernelEvaluator::default();
        // deterministic pseudo-random (x, y) pairs across the crossover band
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s ^= s >> 30;
            s = s.wrapping_mul(0xbf58476d1ce4e5b9);
            s ^= s >> 27;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..100 {
            let t = 0.01 + 0.04 * (i as f64) / 99.0;
            let x = next();
            let y = next();
            let a = k.image_sum(t, x, y);
            let b = k.eigen_sum(t, x, y);
            assert!(
                (a - b).abs() <= 2.0 * k.tolerance(),
                "mismatch at t={t} x={x} y={y}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn mass_is_strictly_between_zero_and_one() {
        let k = KernelEvaluator::default();
        for &t in &[1e-3, 0.01, 0.05, 0.3, 1.0] {
            for &x in &[0.1, 0.5, 0.9] {
                let m = k.integrate_band(t, x, 0.0, 1.0, 400).unwrap();
                // at t = 1e-3 away from the walls the boundary loss is below
                // the quadrature resolution, so only require mass <= 1 up to
                // rounding there; strict loss is checked from t = 0.01 on
                assert!(m > 0.0 && m < 1.0 + 1e-12, "mass {m} at t={t} x={x}");
                if t >= 0.01 {
                    assert!(m < 1.0, "no boundary loss at t={t} x={x}: {m}");
                }
            }
        }
    }

    #[test]
    fn kernel_nonnegative_up_to_truncation() {
        let k = KernelEvaluator::default();
        for &t in &[1e-3, 0.02, 0.1, 0.5] {
            for i in 0..=20 {
                for j in 0..=20 {
                    let v = k.value(t, i as f64 / 20.0, j as f64 / 20.0).unwrap();
                    assert!(v >= -k.tolerance());
                }
            }
        }
    }

    #[test]
    fn domain_errors() {
        let k = KernelEvaluator::default();
        assert!(matches!(
            k.value(0.0, 0.5, 0.5),
            Err(KernelError::NonPositiveTime(_))
        ));
        assert!(matches!(
            k.value(0.1, 1.5, 0.5),
            Err(KernelError::OutOfDomain(_))
        ));
    }

    #[test]
    fn sine_is_an_eigenfunction_of_the_semigroup() {
        let grid = Grid::new(64, 0.2, None).unwrap();
        let k = KernelEvaluator::default();
        let u0 = project_initial_condition(|x| (PI * x).sin(), &grid).unwrap();
        let out = k.semigroup_apply(0.1, &u0, &grid).unwrap();
        let decay = (-PI * PI * 0.1).exp();
        let dx2 = grid.dx() * grid.dx();
        for i in 1..grid.n_space() {
            let exact = decay * (PI * grid.node(i)).sin();
            assert!(
                (out.values[i] - exact).abs() <= 10.0 * dx2 * exact.max(1e-3),
                "node {i}: {} vs {exact}",
                out.values[i]
            );
        }
    }

    #[test]
    fn semigroup_law_within_quadrature_tolerance() {
        let grid = Grid::new(64, 0.2, None).unwrap();
        let k = KernelEvaluator::default();
        let u0 = project_initial_condition(|x| (PI * x).sin() + 0.3 * (2.0 * PI * x).sin(), &grid)
            .unwrap();
        let two_step = k
            .semigroup_apply(0.07, &k.semigroup_apply(0.05, &u0, &grid).unwrap(), &grid)
            .unwrap();
        let one_step = k.semigroup_apply(0.12, &u0, &grid).unwrap();
        let dx2 = grid.dx() * grid.dx();
        for i in 1..grid.n_space() {
            assert!((two_step.values[i] - one_step.values[i]).abs() <= 2.0 * 10.0 * dx2);
        }
    }

    #[test]
    fn positivity_and_mass_loss() {
        let grid = Grid::new(32, 0.2, None).unwrap();
        let k = KernelEvaluator::default();
        let u0 = project_initial_condition(crate::grid::indicator(0.25, 0.75), &grid).unwrap();
        let out = k.semigroup_apply(0.05, &u0, &grid).unwrap();
        assert!(out.values.iter().all(|&v| v >= -1e-12));
        assert!(out.integral(&grid) < u0.integral(&grid));
    }

    #[test]
    fn energy_integral_matches_theta_quadrature_of_space_integral() {
        // independent route: trapezoid in theta over the closed-form space
        // integral, with the integrable sqrt singularity handled by a fine
        // graded grid near theta = t
        let t = 0.05;
        let x = 0.5;
        let closed = kernel_energy_integral(t, x);
        let mut acc = 0.0;
        let m = 20_000usize;
        // graded substitution theta = t * (1 - s^2) concentrates points near t
        let mut prev_theta = 0.0;
        let mut prev_val = kernel_squared_space_integral(t, x);
        for k in 1..=m {
            let s = k as f64 / m as f64;
            let theta = t * s * s * (3.0 - 2.0 * s); // smoothstep grading
            let tau = (t - theta).max(1e-12);
            let val = kernel_squared_space_integral(tau, x);
            acc += 0.5 * (val + prev_val) * (theta - prev_theta);
            prev_theta = theta;
            prev_val = val;
        }
        assert_relative_eq!(acc, closed, max_relative = 2e-3);
    }

    proptest::proptest! {
        #[test]
        fn kernel_symmetry_property(t in 1e-3f64..1.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let k = KernelEvaluator::default();
            let a = k.value(t, x, y).unwrap();
            let b = k.value(t, y, x).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}
