//! Space-time discretization of [0,T] x [0,1] and the field-state vocabulary.
//!
//! Nodes are x_i = i/n_space for i = 0..n_space, endpoints held at zero
//! (Dirichlet). The explicit scheme requires dt <= dx^2/2, enforced at
//! construction.

use thiserror::Error;

/// Boundary values of the initial condition must be below this to count as
/// satisfying u0(0) = u0(1) = 0.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("degenerate grid: n_space = {0}, need at least 2 spatial cells")]
    Degenerate(usize),
    #[error("requested dt {requested:e} violates stability bound dx^2/2 = {limit:e}")]
    Unstable { requested: f64, limit: f64 },
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("requested dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("initial condition violates Dirichlet boundary: |u0({x})| = {value:e}")]
    BoundaryViolation { x: f64, value: f64 },
}

/// Uniform space-time grid on [0,T] x [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_space: usize,
    dt: f64,
    n_steps: usize,
    horizon: f64,
}

impl Grid {
    /// Build a grid with `n_space` spatial cells over time horizon `horizon`.
    ///
    /// When `dt_request` is absent the step starts from the stability bound
    /// dx^2/2 and is adjusted downward so that `n_steps * dt == horizon`
    /// exactly. A requested dt above the bound is rejected.
    pub fn new(n_space: usize, horizon: f64, dt_request: Option<f64>) -> Result<Self, GridError> {
        if n_space < 2 {
            return Err(GridError::Degenerate(n_space));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(GridError::NonPositiveHorizon(horizon));
        }
        let dx = 1.0 / n_space as f64;
        let limit = 0.5 * dx * dx;
        let dt0 = match dt_request {
            Some(dt) if dt <= 0.0 || dt.is_nan() => return Err(GridError::NonPositiveDt(dt)),
            Some(dt) if dt > limit * (1.0 + 1e-12) => {
                return Err(GridError::Unstable {
                    requested: dt,
                    limit,
                })
            }
            Some(dt) => dt.min(limit),
            None => limit,
        };
        let n_steps = (horizon / dt0).ceil() as usize;
        let n_steps = n_steps.max(1);
        let dt = horizon / n_steps as f64;
        Ok(Grid {
            n_space,
            dt,
            n_steps,
            horizon,
        })
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    /// Number of nodes, n_space + 1.
    pub fn n_nodes(&self) -> usize {
        self.n_space + 1
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_space as f64
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Spatial coordinate of node i. Endpoints are exactly 0 and 1.
    pub fn node(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if i == self.n_space {
            1.0
        } else {
            i as f64 / self.n_space as f64
        }
    }

    /// Model time of step j.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.horizon
        } else {
            j as f64 * self.dt
        }
    }

    /// Stability bound dx^2/2 for the explicit scheme.
    pub fn stability_limit(&self) -> f64 {
        let dx = self.dx();
        0.5 * dx * dx
    }

    /// Nearest node index for a coordinate in [0,1]; errors are the caller's
    /// responsibility when the coordinate is off-grid by more than `tol`.
    pub fn node_index(&self, x: f64, tol: f64) -> Option<usize> {
        let raw = x * self.n_space as f64;
        let i = raw.round();
        if (raw - i).abs() <= tol * self.n_space as f64 && (0.0..=self.n_space as f64).contains(&i)
        {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Solution values u(t, x_i) at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub values: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    /// Zero field at the given time.
    pub fn zero(grid: &Grid, time: f64) -> Self {
        FieldState {
            values: vec![0.0; grid.n_nodes()],
            time,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Trapezoid integral over [0,1] on the grid nodes.
    pub fn integral(&self, grid: &Grid) -> f64 {
        let dx = grid.dx();
        let n = self.values.len();
        let mut s = 0.5 * (self.values[0] + self.values[n - 1]);
        for v in &self.values[1..n - 1] {
            s += v;
        }
        s * dx
    }
}

/// Project a continuous initial condition onto the grid nodes.
///
/// The boundary values must vanish (within [`BOUNDARY_TOL`]); endpoints of the
/// projected state are assigned exactly zero.
pub fn project_initial_condition<F>(u0: F, grid: &Grid) -> Result<FieldState, GridError>
where
    F: Fn(f64) -> f64,
{
    for x in [0.0, 1.0] {
        let v = u0(x);
        if v.abs() > BOUNDARY_TOL {
            return Err(GridError::BoundaryViolation { x, value: v });
        }
    }
    let mut values = vec![0.0; grid.n_nodes()];
    for (i, v) in values.iter_mut().enumerate().take(grid.n_space()).skip(1) {
        *v = u0(grid.node(i));
    }
    Ok(FieldState { values, time: 0.0 })
}

/// Indicator of the closed interval [a, b]; ties at cell boundaries resolve
/// toward inclusion.
pub fn indicator(a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        if x >= a - BOUNDARY_TOL && x <= b + BOUNDARY_TOL {
            1.0
        } else {
            0.0
        }
    }
}

/// One sample path: recorded states at times 0, r*dt, 2r*dt, ..., T for
/// record stride r.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub states: Vec<FieldState>,
    pub path_id: u64,
    pub seed: u64,
    /// Solver steps between consecutive recorded states.
    pub record_stride: usize,
}

impl FieldTrajectory {
    pub fn final_state(&self) -> &FieldState {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    /// Recorded state at solver step j, when the stride records it.
    pub fn state_at_step(&self, j: usize) -> Option<&FieldState> {
        if !j.is_multiple_of(self.record_stride) {
            return None;
        }
        self.states.get(j / self.record_stride)
    }

    /// Value at solver step j and node i; requires step j to be recorded.
    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.state_at_step(j).expect("step not recorded").values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn build_grid_defaults_satisfy_stability_and_exact_horizon() {
        let g = Grid::new(4, 0.1, None).unwrap();
        assert_relative_eq!(g.dx(), 0.25);
        assert!(g.dt() <= 0.03125 + 1e-15);
        assert_relative_eq!(g.dt() * g.n_steps() as f64, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_grid_rejected() {
        assert!(matches!(
            Grid::new(1, 1.0, None),
            Err(GridError::Degenerate(1))
        ));
    }

    #[test]
    fn unstable_dt_rejected() {
        // dx^2/2 for n=128 is about 3.05e-5 < 1e-4
        let err = Grid::new(128, 0.1, Some(1e-4)).unwrap_err();
        assert!(matches!(err, GridError::Unstable { .. }));
    }

    #[test]
    fn node_coordinates_increasing_with_exact_endpoints() {
        let g = Grid::new(7, 0.5, None).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 1.0);
        for i in 1..=7 {
            assert!(g.node(i) > g.node(i - 1));
        }
    }

    #[test]
    fn project_sine_hits_exact_nodes() {
        let g = Grid::new(4, 0.1, None).unwrap();
        let s = project_initial_condition(|x| (PI * x).sin(), &g).unwrap();
        let r = 0.5f64.sqrt();
        assert_eq!(s.values[0], 0.0);
        assert_eq!(s.values[4], 0.0);
        assert_relative_eq!(s.values[1], r, max_relative = 1e-15);
        assert_relative_eq!(s.values[2], 1.0, max_relative = 1e-15);
        assert_relative_eq!(s.values[3], r, max_relative = 1e-15);
    }

    #[test]
    fn project_indicator_closed_interval() {
        let g = Grid::new(4, 0.1, None).unwrap();
        let s = project_initial_condition(indicator(0.25, 0.75), &g).unwrap();
        assert_eq!(s.values, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn project_nonzero_boundary_rejected() {
        let g = Grid::new(4, 0.1, None).unwrap();
        assert!(matches!(
            project_initial_condition(|_| 1.0, &g),
            Err(GridError::BoundaryViolation { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn horizon_reproduced_exactly(n_space in 2usize..512, horizon in 1e-3f64..10.0) {
            let g = Grid::new(n_space, horizon, None).unwrap();
            let rebuilt = g.dt() * g.n_steps() as f64;
            proptest::prop_assert!((rebuilt - horizon).abs() <= 1e-12 * horizon);
            proptest::prop_assert!(g.dt() <= g.stability_limit() * (1.0 + 1e-12));
        }
    }
}
