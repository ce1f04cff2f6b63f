//! Reproducible discrete space-time white noise.
//!
//! Increments are generated by a counter-based scheme: every standard normal
//! is a pure function of (seed, path_index, step, cell), so any increment can
//! be produced without generating its predecessors, distinct paths are
//! order-independent, and a realization can be shared bit-exactly between
//! coupled solver runs.
//!
//! Increments are stored as standard normals and scaled by sqrt(dt*dx) at
//! use, so the same realization can drive transformed equations without
//! regeneration.

use crate::grid::Grid;
use std::f64::consts::PI;
use std::sync::Arc;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    splitmix(
        state
            ^ word
                .wrapping_mul(GOLDEN)
                .wrapping_add(0x2545_f491_4f6c_dd1d),
    )
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // (0, 1): 53-bit mantissa shifted off zero
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn normal_pair(seed: u64, path_index: u64, step: u64, base: u64) -> (f64, f64) {
    let mut h = absorb(seed, path_index);
    h = absorb(h, step);
    h = absorb(h, base);
    let u1 = to_open_unit(splitmix(h ^ 0xa076_1d64_78bd_642f));
    let u2 = to_open_unit(splitmix(h ^ 0xe703_7ed1_a0b4_28db));
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}

/// Standard normal keyed on (seed, path, step, cell).
///
/// Box-Muller over a hashed counter; each key (step, cell & !1) yields a
/// pair, and the cell's low bit selects the cosine or sine branch.
pub fn standard_normal_at(seed: u64, path_index: u64, step: u64, cell: u64) -> f64 {
    let (even, odd) = normal_pair(seed, path_index, step, cell & !1u64);
    if cell & 1 == 0 {
        even
    } else {
        odd
    }
}

/// One path's worth of white-noise increments on a grid.
///
/// Stored as standard normals indexed by (step j, spatial cell i) with
/// i = 0..n_space-1; the physical increment N(0, dt*dx) is recovered by
/// scaling. Cloning (and [`NoiseRealization::couple`]) aliases the same
/// array.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    normals: Arc<Vec<f64>>,
    n_space: usize,
    n_steps: usize,
    dt: f64,
    dx: f64,
    seed: u64,
    path_index: u64,
}

impl NoiseRealization {
    /// Sample the full increment array for (grid, seed, path_index).
    /// Regeneration from the same key is bit-identical.
    pub fn sample(grid: &Grid, seed: u64, path_index: u64) -> Self {
        let n_space = grid.n_space();
        let n_steps = grid.n_steps();
        let mut normals = Vec::with_capacity(n_steps * n_space);
        // fill pairwise so each Box-Muller pair is hashed once, not twice
        for j in 0..n_steps {
            let mut i = 0;
            while i + 1 < n_space {
                let (even, odd) = normal_pair(seed, path_index, j as u64, i as u64);
                normals.push(even);
                normals.push(odd);
                i += 2;
            }
            if i < n_space {
                normals.push(standard_normal_at(seed, path_index, j as u64, i as u64));
            }
        }
        NoiseRealization {
            normals: Arc::new(normals),
            n_space,
            n_steps,
            dt: grid.dt(),
            dx: grid.dx(),
            seed,
            path_index,
        }
    }

    /// Handle to the identical increment array for a second coupled run.
    pub fn couple(&self) -> Self {
        self.clone()
    }

    /// Wrap externally assembled standard normals (e.g. a coarse-grid view
    /// of a finer realization in a refinement study). The array length must
    /// be n_steps * n_space for the grid.
    pub fn from_normals(grid: &Grid, seed: u64, path_index: u64, normals: Vec<f64>) -> Self {
        assert_eq!(normals.len(), grid.n_steps() * grid.n_space());
        NoiseRealization {
            normals: Arc::new(normals),
            n_space: grid.n_space(),
            n_steps: grid.n_steps(),
            dt: grid.dt(),
            dx: grid.dx(),
            seed,
            path_index,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    /// Standard normals for time step j, one per spatial cell.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.normals[j * self.n_space..(j + 1) * self.n_space]
    }

    /// Standard normal for (step j, cell i).
    pub fn standard_normal(&self, j: usize, i: usize) -> f64 {
        self.normals[j * self.n_space + i]
    }

    /// Physical increment W(cell) ~ N(0, dt*dx).
    pub fn increment(&self, j: usize, i: usize) -> f64 {
        self.standard_normal(j, i) * (self.dt * self.dx).sqrt()
    }

    pub fn increment_scale(&self) -> f64 {
        (self.dt * self.dx).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, v)
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let grid = Grid::new(16, 0.01, None).unwrap();
        let a = NoiseRealization::sample(&grid, 42, 7);
        let b = NoiseRealization::sample(&grid, 42, 7);
        assert_eq!(*a.normals, *b.normals);
        let c = a.couple();
        for j in 0..a.n_steps() {
            for i in 0..a.n_space() {
                assert_eq!(a.increment(j, i).to_bits(), c.increment(j, i).to_bits());
            }
        }
    }

    #[test]
    fn different_keys_differ() {
        let grid = Grid::new(8, 0.01, None).unwrap();
        let a = NoiseRealization::sample(&grid, 1, 0);
        let b = NoiseRealization::sample(&grid, 1, 1);
        let c = NoiseRealization::sample(&grid, 2, 0);
        assert_ne!(*a.normals, *b.normals);
        assert_ne!(*a.normals, *c.normals);
    }

    #[test]
    fn increment_variance_within_one_percent() {
        // 10^6 increments at dt*dx = 1e-5; the chi-square 99% band for the
        // sample variance of 10^6 Gaussians is about +/-0.36%, well inside 1%
        let grid = Grid::new(10, 10.0, Some(1e-4)).unwrap();
        assert_eq!(grid.n_steps(), 100_000);
        let scale2 = grid.dt() * grid.dx();
        assert!((scale2 - 1e-5).abs() < 1e-18);
        let r = NoiseRealization::sample(&grid, 2024, 0);
        let incs: Vec<f64> = (0..grid.n_steps())
            .flat_map(|j| (0..grid.n_space()).map(move |i| (j, i)))
            .map(|(j, i)| r.increment(j, i))
            .collect();
        assert!(incs.len() >= 1_000_000);
        let (mean, v) = var(&incs);
        assert!(mean.abs() < 4.0 * (scale2 / incs.len() as f64).sqrt());
        assert!(
            (v - scale2).abs() / scale2 < 0.01,
            "variance {v:e} vs {scale2:e}"
        );
    }

    #[test]
    fn cross_cell_correlation_within_clt_band() {
        // empirical correlation between two distinct cells over 1e5 paths
        let n = 100_000u64;
        let pairs = [
            ((3u64, 5u64), (3u64, 6u64)),
            ((0, 0), (7, 3)),
            ((2, 4), (2, 5)),
        ];
        for ((j1, i1), (j2, i2)) in pairs {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in 0..n {
                let x = standard_normal_at(99, p, j1, i1);
                let y = standard_normal_at(99, p, j2, i2);
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
            let nf = n as f64;
            let cov = sxy / nf - sx / nf * sy / nf;
            let vx = sxx / nf - (sx / nf) * (sx / nf);
            let vy = syy / nf - (sy / nf) * (sy / nf);
            let rho = cov / (vx * vy).sqrt();
            assert!(
                rho.abs() <= 3.0 / nf.sqrt(),
                "correlation {rho} for ({j1},{i1}) vs ({j2},{i2})"
            );
        }
    }

    #[test]
    fn distinct_paths_pass_pairwise_correlation_smoke_test() {
        let grid = Grid::new(16, 0.02, None).unwrap();
        let a = NoiseRealization::sample(&grid, 5, 0);
        let b = NoiseRealization::sample(&grid, 5, 1);
        let n = a.normals.len() as f64;
        let dot: f64 = a
            .normals
            .iter()
            .zip(b.normals.iter())
            .map(|(x, y)| x * y)
            .sum();
        assert!((dot / n).abs() <= 3.0 / n.sqrt());
    }
}
