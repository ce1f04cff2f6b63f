//! The closed experiment registry.
//!
//! Each experiment reads its knobs from the shared config (defaults filled
//! per experiment), runs a deterministic ensemble with per-path noise
//! substreams, and reports a machine-checked PASS verdict plus CSV tables.
//! Paths are a pure function of (seed, path_index), and reductions run over
//! the path-ordered result vector, so output bytes do not depend on the
//! worker count.

use super::config::{Config, ConfigError};
use super::output::Table;
use super::{RunOutcome, RunnerError};
use crate::estimators::{
    decay_exponent_fit, kde_density, linear_fit, mc_moment, tail_probability, Bandwidth,
};
use crate::grid::{indicator, project_initial_condition, FieldState, Grid};
use crate::heat_kernel::{kernel_energy_integral, KernelEvaluator};
use crate::malliavin::{evolve_derivative, malliavin_energy};
use crate::noise::NoiseRealization;
use crate::solver::{
    evolve, evolve_final, kill_rate_transform, stochastic_convolution_sup, Coefficients,
};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn cfg_err(message: impl Into<String>) -> RunnerError {
    RunnerError::Config(ConfigError {
        line: None,
        message: message.into(),
    })
}

/// Grid from `[grid]` keys. When `grid.dt` is absent, dt defaults to
/// `ratio * dx^2` for the experiment's preferred ratio (at most the
/// stability limit 1/2).
fn read_grid(
    cfg: &mut Config,
    default_n: usize,
    default_horizon: f64,
    ratio: f64,
) -> Result<Grid, RunnerError> {
    let n_space = cfg.get_usize("grid.n_space", default_n)?;
    let horizon = cfg.get_f64("grid.horizon", default_horizon)?;
    let dt = match cfg.get_opt_f64("grid.dt")? {
        Some(v) => Some(v),
        None => {
            if n_space < 2 {
                None // let Grid::new report the degenerate grid
            } else {
                let dx = 1.0 / n_space as f64;
                Some(ratio * dx * dx)
            }
        }
    };
    Ok(Grid::new(n_space, horizon, dt)?)
}

/// Initial condition from `[initial]` keys: kind = sin | indicator | zero.
fn read_u0(cfg: &mut Config, grid: &Grid, default_kind: &str) -> Result<FieldState, RunnerError> {
    let kind = cfg.get_str("initial.kind", default_kind);
    match kind.as_str() {
        "sin" => Ok(project_initial_condition(|x| (PI * x).sin(), grid)?),
        "zero" => Ok(FieldState::zero(grid, 0.0)),
        "indicator" => {
            let lo = cfg.get_f64("initial.band_lo", 0.25)?;
            let hi = cfg.get_f64("initial.band_hi", 0.75)?;
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(cfg_err(format!(
                    "initial band [{lo}, {hi}] must satisfy 0 < lo < hi < 1"
                )));
            }
            Ok(project_initial_condition(indicator(lo, hi), grid)?)
        }
        other => Err(cfg_err(format!(
            "initial.kind: unknown kind {other:?} (sin | indicator | zero)"
        ))),
    }
}

/// Interior on-grid probe node from `experiment.probe_x`.
fn read_probe(cfg: &mut Config, grid: &Grid, default_x: f64) -> Result<usize, RunnerError> {
    let x = cfg.get_f64("experiment.probe_x", default_x)?;
    let i = grid
        .node_index(x, 1e-9)
        .ok_or_else(|| cfg_err(format!("probe x = {x} is not a grid node")))?;
    if i == 0 || i == grid.n_space() {
        return Err(cfg_err(format!(
            "probe x = {x} is a boundary point (the solution is pinned to 0 there)"
        )));
    }
    Ok(i)
}

/// Semilinear test equation b = k_b u, sigma = s0 + s1 sin(u), configurable
/// through `[coefficients]`.
fn read_semilinear(cfg: &mut Config) -> Result<Coefficients, RunnerError> {
    let kb = cfg.get_f64("coefficients.drift_coeff", 0.1)?;
    let s0 = cfg.get_f64("coefficients.sigma0", 1.0)?;
    let s1 = cfg.get_f64("coefficients.sigma_amp", 0.5)?;
    Ok(Coefficients::semilinear(
        Arc::new(move |_, _, u| kb * u),
        Arc::new(move |_, _, u| s0 + s1 * u.sin()),
        Arc::new(move |_, _, _| kb),
        Arc::new(move |_, _, u| s1 * u.cos()),
    ))
}

/// Ordered parallel map over path indices; results come back sorted by path.
fn par_paths<T, F>(m: usize, f: F) -> Result<Vec<T>, RunnerError>
where
    T: Send,
    F: Fn(u64) -> Result<T, RunnerError> + Sync + Send,
{
    (0..m as u64).into_par_iter().map(f).collect()
}

fn verdict(out: &mut RunOutcome, passed: bool) {
    out.passed = passed;
    out.lines.push(if passed {
        "verdict: PASS".to_string()
    } else {
        "verdict: FAIL".to_string()
    });
}

// deterministic_limit: sigma = 0, b = 0, u0 = sin(pi x); the final state must
// match exp(-pi^2 T) sin(pi x) within 2% relative, and halving dx must shrink
// the error about 4x.
pub fn deterministic_limit(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 128, 0.1, 0.5)?;
    let _m = cfg.get_usize("run.paths", 1)?;
    let max_rel = cfg.get_f64("experiment.max_rel_err", 0.02)?;

    let run_on = |grid: &Grid| -> Result<(FieldState, f64), RunnerError> {
        let u0 = project_initial_condition(|x| (PI * x).sin(), grid)?;
        let noise = NoiseRealization::sample(grid, seed, 0);
        let fs = evolve_final(&Coefficients::deterministic(), &u0, grid, &noise)?;
        let factor = (-PI * PI * grid.horizon()).exp();
        let mut worst = 0.0f64;
        for i in 1..grid.n_space() {
            let exact = factor * (PI * grid.node(i)).sin();
            worst = worst.max(((fs.values[i] - exact) / exact).abs());
        }
        Ok((fs, worst))
    };

    let (fs, err_fine) = run_on(&grid)?;
    let coarse = Grid::new(grid.n_space() / 2, grid.horizon(), None)?;
    let (_, err_coarse) = run_on(&coarse)?;
    let ratio = err_coarse / err_fine;

    let mut table = Table::new("fields.csv", &["i", "x", "value", "exact", "rel_err"]);
    let factor = (-PI * PI * grid.horizon()).exp();
    for i in 0..=grid.n_space() {
        let exact = factor * (PI * grid.node(i)).sin();
        let rel = if exact != 0.0 {
            ((fs.values[i] - exact) / exact).abs()
        } else {
            0.0
        };
        table.push(vec![
            i.into(),
            grid.node(i).into(),
            fs.values[i].into(),
            exact.into(),
            rel.into(),
        ]);
    }

    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!("max relative interior error = {err_fine:.3e}"));
    out.note(format!(
        "error ratio (n_space {} vs {}) = {ratio:.2}",
        coarse.n_space(),
        grid.n_space()
    ));
    verdict(
        &mut out,
        err_fine <= max_rel && (2.5..=6.0).contains(&ratio),
    );
    Ok(out)
}

// mean_identity: linear equation with zero drift; the ensemble mean at the
// probe must match the semigroup applied to u0 within 3 standard errors.
pub fn mean_identity(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 64, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 2000)?;
    let u0 = read_u0(cfg, &grid, "indicator")?;
    let probe = read_probe(cfg, &grid, 0.5)?;
    let big_b = cfg.get_f64("coefficients.drift", 0.0)?;
    let h = cfg.get_f64("coefficients.diffusion", 1.0)?;
    if big_b != 0.0 {
        return Err(cfg_err("mean_identity requires coefficients.drift = 0"));
    }
    let coeffs = Coefficients::linear_const(big_b, h);

    let values = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        Ok(evolve_final(&coeffs, &u0, &grid, &noise)?.values[probe])
    })?;

    let kernel = KernelEvaluator::default();
    let oracle = kernel.semigroup_apply(grid.horizon(), &u0, &grid)?.values[probe];
    let report = mc_moment(&values, 1.0, None)?;
    let z = (report.estimate - oracle) / report.standard_error;

    let mut table = Table::new("ensemble.csv", &["path", "value"]);
    for (p, v) in values.iter().enumerate() {
        table.push(vec![p.into(), (*v).into()]);
    }
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "ensemble mean = {:.6} (se {:.2e}), kernel oracle = {oracle:.6}, z = {z:.2}",
        report.estimate, report.standard_error
    ));
    verdict(&mut out, z.abs() <= 3.0);
    Ok(out)
}

// comparison: drifts B1 <= B2 under coupled noise must give pathwise ordered
// solutions at every recorded node, up to 1e-8 relative.
pub fn comparison(cfg: &mut Config, seed: u64, _workers: usize) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 32, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 500)?;
    let u0 = read_u0(cfg, &grid, "indicator")?;
    let b_lo = cfg.get_f64("experiment.drift_lo", -1.0)?;
    let b_hi = cfg.get_f64("experiment.drift_hi", 1.0)?;
    let h = cfg.get_f64("coefficients.diffusion", 1.0)?;
    let tol = cfg.get_f64("experiment.rel_tol", 1e-8)?;
    if b_lo > b_hi {
        return Err(cfg_err(
            "experiment.drift_lo must be <= experiment.drift_hi",
        ));
    }
    let lo = Coefficients::linear_const(b_lo, h);
    let hi = Coefficients::linear_const(b_hi, h);

    let per_path = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        let a = evolve(&lo, &u0, &grid, &noise)?;
        let b = evolve(&hi, &u0, &grid, &noise.couple())?;
        let mut violations = 0u64;
        let mut worst = 0.0f64;
        for (sa, sb) in a.states.iter().zip(b.states.iter()) {
            for (va, vb) in sa.values.iter().zip(sb.values.iter()) {
                let excess = va - vb - tol * vb.abs().max(1.0);
                if excess > 0.0 {
                    violations += 1;
                    worst = worst.max(excess);
                }
            }
        }
        Ok((violations, worst))
    })?;

    let total: u64 = per_path.iter().map(|(v, _)| v).sum();
    let mut table = Table::new("paths.csv", &["path", "violations", "max_excess"]);
    for (p, (v, w)) in per_path.iter().enumerate() {
        table.push(vec![p.into(), (*v).into(), (*w).into()]);
    }
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "node-level ordering violations beyond {tol:.0e} relative: {total} across {m} paths"
    ));
    verdict(&mut out, total == 0);
    Ok(out)
}

// positivity_trend: fraction of paths with a detectable negative excursion,
// measured over a refinement ladder; the fraction must not increase.
pub fn positivity_trend(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let horizon = cfg.get_f64("grid.horizon", 0.05)?;
    let m = cfg.get_usize("run.paths", 300)?;
    let base_n = cfg.get_usize("grid.n_space", 8)?;
    let rungs = cfg.get_usize("experiment.rungs", 3)?;
    let h = cfg.get_f64("coefficients.diffusion", 1.0)?;
    if rungs < 2 {
        return Err(cfg_err("experiment.rungs must be at least 2"));
    }
    let coeffs = Coefficients::linear_const(0.0, h);

    let mut fractions = Vec::new();
    let mut table = Table::new("trend.csv", &["n_space", "paths", "violating_fraction"]);
    for rung in 0..rungs {
        let n = base_n << rung;
        let dx = 1.0 / n as f64;
        // dt = dx^2 / 3 keeps a positive self weight while leaving a nonzero
        // rate of noise-driven sign flips at coarse resolution
        let grid = Grid::new(n, horizon, Some(dx * dx / 3.0))?;
        let u0 = project_initial_condition(indicator(0.25, 0.75), &grid)?;
        let flags = par_paths(m, |p| {
            let noise = NoiseRealization::sample(&grid, seed, p);
            let traj = evolve(&coeffs, &u0, &grid, &noise)?;
            let max_abs = traj
                .states
                .iter()
                .map(|s| s.max_abs())
                .fold(0.0f64, f64::max);
            let min = traj
                .states
                .iter()
                .map(|s| s.min())
                .fold(f64::INFINITY, f64::min);
            Ok(u64::from(min < -1e-6 * max_abs))
        })?;
        let fraction = flags.iter().sum::<u64>() as f64 / m as f64;
        table.push(vec![n.into(), m.into(), fraction.into()]);
        fractions.push(fraction);
    }

    let monotone = fractions.windows(2).all(|w| w[0] >= w[1]);
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "violating fractions over refinement: {fractions:?}"
    ));
    verdict(&mut out, monotone);
    Ok(out)
}

// large_deviations: sup |N| of the stochastic convolution of w = 1; the log
// tail probability must be linear in lambda^2 with negative slope.
pub fn large_deviations(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 32, 0.25, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 4000)?;
    let w_const = cfg.get_f64("experiment.field", 1.0)?;
    let r2_min = cfg.get_f64("experiment.r_squared_min", 0.95)?;

    let sups = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        Ok(stochastic_convolution_sup(
            &move |_, _| w_const,
            w_const.abs(),
            &grid,
            &noise,
        )?)
    })?;

    let mut sorted = sups.clone();
    sorted.sort_by(f64::total_cmp);
    // thresholds at evenly spaced quantiles of the empirical 50-99% range
    let n_levels = 20usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut fit_table = Table::new("fit.csv", &["lambda", "lambda_sq", "p_hat"]);
    for k in 0..n_levels {
        let q = 0.50 + (0.99 - 0.50) * k as f64 / (n_levels - 1) as f64;
        let lambda = sorted[((q * (m - 1) as f64).round() as usize).min(m - 1)];
        let count = sups.iter().filter(|&&s| s > lambda).count();
        if count == 0 {
            continue;
        }
        let p_hat = count as f64 / m as f64;
        fit_table.push(vec![lambda.into(), (lambda * lambda).into(), p_hat.into()]);
        xs.push(lambda * lambda);
        ys.push(p_hat.ln());
    }
    let (slope, _intercept, _stderr, r_squared) = linear_fit(&xs, &ys);

    let mut sup_table = Table::new("sups.csv", &["path", "sup_abs"]);
    for (p, s) in sups.iter().enumerate() {
        sup_table.push(vec![p.into(), (*s).into()]);
    }
    let mut out = RunOutcome::new();
    out.tables.push(sup_table);
    out.tables.push(fit_table);
    out.note(format!(
        "log P(sup > lambda) vs lambda^2: slope = {slope:.3}, R^2 = {r_squared:.4}"
    ));
    verdict(&mut out, slope < 0.0 && r_squared >= r2_min);
    Ok(out)
}

/// The kernel infimum c = inf over 0 <= t + s <= T and
/// x in [a - g(t+s), b + g(t+s)] of the band integral of G_t(x, .) over
/// [a - g s, b + g s], with g = gamma. Evaluated on a sampling grid; the
/// infimum is a smooth optimization so a modest grid suffices.
pub fn kernel_infimum(
    a: f64,
    b: f64,
    gamma: f64,
    t_cap: f64,
    kernel: &KernelEvaluator,
) -> Result<f64, RunnerError> {
    let n_t = 24usize;
    let n_s = 12usize;
    let n_x = 25usize;
    let mut inf = f64::INFINITY;
    for it in 1..=n_t {
        let t = t_cap * it as f64 / n_t as f64;
        for is in 0..=n_s {
            let s = (t_cap - t) * is as f64 / n_s as f64;
            let lo = a - gamma * s;
            let hi = b + gamma * s;
            let xlo = a - gamma * (t + s);
            let xhi = b + gamma * (t + s);
            for ix in 0..=n_x {
                let x = xlo + (xhi - xlo) * ix as f64 / n_x as f64;
                let v = kernel
                    .integrate_band(t, x, lo.max(0.0), hi.min(1.0), 200)
                    .map_err(|e| RunnerError::Runtime(e.to_string()))?;
                inf = inf.min(v);
            }
        }
    }
    Ok(inf)
}

// tail_decay: lower-tail probabilities of u(T, probe) at thresholds (c/2)^n;
// the fitted slope of log(-log P) against log n must be at least 0.9.
pub fn tail_decay(cfg: &mut Config, seed: u64, _workers: usize) -> Result<RunOutcome, RunnerError> {
    // dt well inside the stability limit: at the limit itself the highest
    // spatial mode of the scheme never decays and a sizable fraction of
    // paths end with spurious negative values, which sit below every
    // threshold and flatten the deep levels into a plateau
    let grid = read_grid(cfg, 64, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 100_000)?;
    let band_lo = cfg.get_f64("initial.band_lo", 0.25)?;
    let band_hi = cfg.get_f64("initial.band_hi", 0.75)?;
    if !(0.0 < band_lo && band_lo < band_hi && band_hi < 1.0) {
        return Err(cfg_err("initial band must satisfy 0 < lo < hi < 1"));
    }
    cfg.set("initial.kind", "indicator");
    let u0 = read_u0(cfg, &grid, "indicator")?;
    // a strong (but bounded, so still within the statement) diffusion field
    // speeds up intermittency enough that several threshold levels carry
    // resolvable probabilities at desk-scale ensembles
    let h = cfg.get_f64("coefficients.diffusion", 4.0)?;
    let levels = cfg.get_usize("experiment.levels", 5)?;
    let slope_min = cfg.get_f64("experiment.slope_min", 0.9)?;
    let probe = read_probe(cfg, &grid, 0.5)?;
    let coeffs = Coefficients::linear_const(0.0, h);

    let kernel = KernelEvaluator::default();
    let gamma = band_lo.min(1.0 - band_hi) / (2.0 * grid.horizon());
    let c = kernel_infimum(band_lo, band_hi, gamma, grid.horizon(), &kernel)?;

    let samples = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        Ok(evolve_final(&coeffs, &u0, &grid, &noise)?.values[probe])
    })?;

    let mut table = Table::new(
        "levels.csv",
        &["n", "threshold", "p_hat", "ci_low", "ci_high", "n_samples"],
    );
    let mut ns = Vec::new();
    let mut p_hats = Vec::new();
    for n in 1..=levels {
        let threshold = (c / 2.0).powi(n as i32);
        let report = tail_probability(&samples, threshold)?;
        table.push(vec![
            n.into(),
            threshold.into(),
            report.estimate.into(),
            report.ci_low.into(),
            report.ci_high.into(),
            report.n_samples.into(),
        ]);
        ns.push(n as f64);
        p_hats.push(report.estimate);
    }

    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!("kernel infimum c = {c:.6} (gamma = {gamma:.4})"));
    match decay_exponent_fit(&ns, &p_hats) {
        Ok(fit) => {
            out.note(format!(
                "decay fit: slope = {:.3} (stderr {:.3}), R^2 = {:.4}, {} levels used, excluded {:?}",
                fit.slope, fit.slope_stderr, fit.r_squared, fit.n_used, fit.excluded
            ));
            verdict(&mut out, fit.slope >= slope_min);
        }
        Err(e) => {
            out.note(format!("decay fit unavailable: {e}"));
            verdict(&mut out, false);
        }
    }
    Ok(out)
}

// negative_moments: truncated E[u^-2] stable in the truncation threshold,
// and killing at rate K rescales the moment by exp(2KT).
pub fn negative_moments(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 64, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 10_000)?;
    let u0 = read_u0(cfg, &grid, "indicator")?;
    let probe = read_probe(cfg, &grid, 0.5)?;
    let h = cfg.get_f64("coefficients.diffusion", 1.0)?;
    let tau = cfg.get_f64("experiment.truncation", 1e-3)?;
    let kill = cfg.get_f64("experiment.kill_rate", 1.0)?;
    let p_order = cfg.get_f64("experiment.moment_order", -2.0)?;
    if p_order >= 0.0 {
        return Err(cfg_err("experiment.moment_order must be negative"));
    }
    let undamped = Coefficients::linear_const(0.0, h);
    let damped = Coefficients::linear_const(-kill, h);

    let pairs = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        let u = evolve_final(&undamped, &u0, &grid, &noise)?.values[probe];
        let w = evolve_final(&damped, &u0, &grid, &noise.couple())?.values[probe];
        Ok((u, w))
    })?;
    let u_samples: Vec<f64> = pairs.iter().map(|(u, _)| *u).collect();
    let w_samples: Vec<f64> = pairs.iter().map(|(_, w)| *w).collect();

    let u_report = mc_moment(&u_samples, p_order, Some(tau))?;
    let w_report = mc_moment(&w_samples, p_order, Some(tau))?;
    let trunc = u_report.truncation.as_ref().expect("negative order");
    let drift = (trunc.sensitivity[1].1 - u_report.estimate).abs() / u_report.estimate;

    // E[w^-p] = exp(K T p) E[u^-p] with w the damped solution; p_order is
    // the signed exponent, so the factor is exp(-K T p_order)
    let factor = (-kill * grid.horizon() * p_order).exp();
    let scaled_lo = factor * u_report.ci_low;
    let scaled_hi = factor * u_report.ci_high;
    let overlap = w_report.ci_low <= scaled_hi && scaled_lo <= w_report.ci_high;

    let mut table = Table::new(
        "estimates.csv",
        &["quantity", "estimate", "ci_low", "ci_high", "n_samples"],
    );
    table.push(vec![
        "u_neg_moment".into(),
        u_report.estimate.into(),
        u_report.ci_low.into(),
        u_report.ci_high.into(),
        u_report.n_samples.into(),
    ]);
    table.push(vec![
        "u_neg_moment_tau_half".into(),
        trunc.sensitivity[0].1.into(),
        f64::NAN.into(),
        f64::NAN.into(),
        u_report.n_samples.into(),
    ]);
    table.push(vec![
        "u_neg_moment_tau_quarter".into(),
        trunc.sensitivity[1].1.into(),
        f64::NAN.into(),
        f64::NAN.into(),
        u_report.n_samples.into(),
    ]);
    table.push(vec![
        "w_neg_moment".into(),
        w_report.estimate.into(),
        w_report.ci_low.into(),
        w_report.ci_high.into(),
        w_report.n_samples.into(),
    ]);
    table.push(vec![
        "u_neg_moment_scaled".into(),
        (factor * u_report.estimate).into(),
        scaled_lo.into(),
        scaled_hi.into(),
        u_report.n_samples.into(),
    ]);

    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "truncated moment = {:.4} at tau = {tau:.1e}; drift to tau/4 = {:.2}%; floored fraction {:.2e}",
        u_report.estimate,
        100.0 * drift,
        trunc.floored_fraction
    ));
    out.note(format!(
        "kill identity: damped moment = {:.4} vs scaled = {:.4} (factor {factor:.4}), CI overlap = {overlap}",
        w_report.estimate,
        factor * u_report.estimate
    ));
    verdict(&mut out, drift < 0.10 && overlap);
    Ok(out)
}

// kill_transform: exp(-Kt)-scaling of the undamped trajectory must agree
// pathwise with the damped equation under the same noise.
pub fn kill_transform(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 64, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 20)?;
    let u0 = read_u0(cfg, &grid, "indicator")?;
    let h = cfg.get_f64("coefficients.diffusion", 1.0)?;
    let kill = cfg.get_f64("experiment.kill_rate", 1.0)?;
    let rel_tol = cfg.get_f64("experiment.rel_tol", 0.01)?;
    let undamped = Coefficients::linear_const(0.0, h);
    let damped = Coefficients::linear_const(-kill, h);

    let per_path = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        let u = evolve(&undamped, &u0, &grid, &noise)?;
        let w = evolve(&damped, &u0, &grid, &noise.couple())?;
        let transformed = kill_rate_transform(&u, kill);
        let scale = w
            .states
            .iter()
            .map(|s| s.max_abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let mut sup_diff = 0.0f64;
        for (sw, st) in w.states.iter().zip(transformed.states.iter()) {
            for (vw, vt) in sw.values.iter().zip(st.values.iter()) {
                sup_diff = sup_diff.max((vw - vt).abs());
            }
        }
        Ok((sup_diff, scale))
    })?;

    let mut table = Table::new("paths.csv", &["path", "sup_diff", "scale"]);
    let mut worst_rel = 0.0f64;
    for (p, (d, s)) in per_path.iter().enumerate() {
        table.push(vec![p.into(), (*d).into(), (*s).into()]);
        worst_rel = worst_rel.max(d / s);
    }
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "worst pathwise sup difference = {:.2}% of sup scale (allowance {:.2}%)",
        100.0 * worst_rel,
        100.0 * rel_tol
    ));
    verdict(&mut out, worst_rel <= rel_tol);
    Ok(out)
}

// malliavin_additive: with b = 0, sigma = 1 the derivative field equals the
// heat kernel, and the energy equals the kernel's squared space-time
// integral.
pub fn malliavin_additive(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 64, 0.05, 1.0 / 6.0)?;
    let _m = cfg.get_usize("run.paths", 1)?;
    let sigma0 = cfg.get_f64("coefficients.sigma0", 1.0)?;
    let d_tol = cfg.get_f64("experiment.derivative_rel_tol", 0.01)?;
    let c_tol = cfg.get_f64("experiment.energy_rel_tol", 0.05)?;
    let coeffs = Coefficients::additive(sigma0);
    let u0 = FieldState::zero(&grid, 0.0);
    let noise = NoiseRealization::sample(&grid, seed, 0);
    let traj = evolve(&coeffs, &u0, &grid, &noise)?;
    let kernel = KernelEvaluator::default();

    // derivative vs kernel at theta = 0, target = horizon (elapsed time is
    // far beyond 10 dx^2, where the scheme's kernel is accurate)
    let xi = grid.n_space() / 2;
    let d = evolve_derivative(&traj, &coeffs, 0, xi, &noise, &grid)?;
    let t = grid.horizon();
    let mut sup_err = 0.0f64;
    let mut sup_ref = 0.0f64;
    let mut table = Table::new("derivative.csv", &["i", "x", "scheme", "kernel"]);
    for i in 1..grid.n_space() {
        let oracle = sigma0
            * kernel
                .value(t, grid.node(i), grid.node(xi))
                .map_err(|e| RunnerError::Runtime(e.to_string()))?;
        let v = d.value(grid.n_steps(), i);
        sup_err = sup_err.max((v - oracle).abs());
        sup_ref = sup_ref.max(oracle.abs());
        table.push(vec![i.into(), grid.node(i).into(), v.into(), oracle.into()]);
    }
    let d_rel = sup_err / sup_ref;

    let probe = grid.n_space() / 2;
    let energy = malliavin_energy(
        &traj,
        &coeffs,
        &noise,
        grid.n_steps(),
        probe,
        1,
        None,
        &grid,
    )?;
    let c_oracle = sigma0 * sigma0 * kernel_energy_integral(grid.horizon(), grid.node(probe));
    let c_rel = (energy.c - c_oracle).abs() / c_oracle;

    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "derivative vs kernel: sup relative error = {:.3}% (tolerance {:.1}%)",
        100.0 * d_rel,
        100.0 * d_tol
    ));
    out.note(format!(
        "energy = {:.6} vs kernel integral {c_oracle:.6} ({:.2}% off, tolerance {:.0}%)",
        energy.c,
        100.0 * c_rel,
        100.0 * c_tol
    ));
    verdict(&mut out, d_rel <= d_tol && c_rel <= c_tol);
    Ok(out)
}

// malliavin_energy: nondegenerate semilinear case; every sampled energy must
// be strictly positive, the truncated inverse moment stable under ensemble
// doubling, and the band lower bound must hold per sample.
pub fn malliavin_energy_experiment(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 32, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 2000)?;
    if m < 2 {
        return Err(cfg_err("run.paths must be at least 2"));
    }
    let u0 = read_u0(cfg, &grid, "sin")?;
    let probe = read_probe(cfg, &grid, 0.5)?;
    let coeffs = read_semilinear(cfg)?;
    let stride = cfg.get_usize("experiment.theta_stride", 4)?;
    let band_lo = cfg.get_f64("experiment.band_lo", 0.25)?;
    let band_hi = cfg.get_f64("experiment.band_hi", 0.75)?;
    let tau = cfg.get_f64("experiment.truncation", 1e-3)?;

    let results = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        let traj = evolve(&coeffs, &u0, &grid, &noise)?;
        let e = malliavin_energy(
            &traj,
            &coeffs,
            &noise,
            grid.n_steps(),
            probe,
            stride,
            Some((band_lo, band_hi)),
            &grid,
        )?;
        Ok((
            e.c,
            e.band_lower_bound.unwrap_or(0.0),
            e.quadrature_error_estimate,
        ))
    })?;

    let cs: Vec<f64> = results.iter().map(|r| r.0).collect();
    let all_positive = cs.iter().all(|&c| c > 0.0);
    let min_c = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound_ok = results
        .iter()
        .all(|&(c, lb, quad)| lb <= c * (1.0 + 1e-9) + quad.abs() + 1e-12);

    let full = mc_moment(&cs, -1.0, Some(tau))?;
    let half = mc_moment(&cs[..m / 2], -1.0, Some(tau))?;
    let doubling_drift = (full.estimate - half.estimate).abs() / full.estimate;

    let mut table = Table::new(
        "energies.csv",
        &["path", "c", "band_lower_bound", "quad_error"],
    );
    for (p, (c, lb, q)) in results.iter().enumerate() {
        table.push(vec![p.into(), (*c).into(), (*lb).into(), (*q).into()]);
    }
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note(format!(
        "all {m} energies positive = {all_positive} (min {min_c:.3e}); band bound holds per sample = {bound_ok}"
    ));
    out.note(format!(
        "truncated inverse moment: {:.4} at M = {m} vs {:.4} at M/2 (drift {:.2}%)",
        full.estimate,
        half.estimate,
        100.0 * doubling_drift
    ));
    verdict(&mut out, all_positive && bound_ok && doubling_drift <= 0.20);
    Ok(out)
}

// density_diagnostic (qualitative): the kernel density estimate of u(T, x*)
// must be strictly positive over the sample bulk and keep a single prominent
// mode when the bandwidth is halved.
pub fn density_diagnostic(
    cfg: &mut Config,
    seed: u64,
    _workers: usize,
) -> Result<RunOutcome, RunnerError> {
    let grid = read_grid(cfg, 32, 0.05, 1.0 / 6.0)?;
    let m = cfg.get_usize("run.paths", 2000)?;
    let u0 = read_u0(cfg, &grid, "sin")?;
    let probe = read_probe(cfg, &grid, 0.5)?;
    let coeffs = read_semilinear(cfg)?;
    let prominence = cfg.get_f64("experiment.mode_prominence", 0.2)?;

    let samples = par_paths(m, |p| {
        let noise = NoiseRealization::sample(&grid, seed, p);
        Ok(evolve_final(&coeffs, &u0, &grid, &noise)?.values[probe])
    })?;

    let base = kde_density(&samples, Bandwidth::Silverman, None)?;
    let halved = kde_density(
        &samples,
        Bandwidth::Fixed(base.bandwidth / 2.0),
        Some(&base.xs),
    )?;

    // strict positivity over the sample bulk (between the 1% and 99%
    // empirical quantiles); the far tails of a KDE decay to zero by design
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let q01 = sorted[m / 100];
    let q99 = sorted[m - 1 - m / 100];
    let positive = base
        .xs
        .iter()
        .zip(base.ys.iter())
        .filter(|(x, _)| (q01..=q99).contains(*x))
        .all(|(_, &y)| y > 0.0);
    let modes_base = base.prominent_modes(prominence);
    let modes_halved = halved.prominent_modes(prominence);

    let mut table = Table::new("density.csv", &["x", "density", "density_half_bandwidth"]);
    for ((x, y), yh) in base.xs.iter().zip(base.ys.iter()).zip(halved.ys.iter()) {
        table.push(vec![(*x).into(), (*y).into(), (*yh).into()]);
    }
    let mut out = RunOutcome::new();
    out.tables.push(table);
    out.note("qualitative diagnostic: finite samples cannot certify smoothness".to_string());
    out.note(format!(
        "bandwidth = {:.4}; strictly positive over bulk = {positive}; prominent modes = {modes_base} (halved bandwidth: {modes_halved})",
        base.bandwidth
    ));
    verdict(&mut out, positive && modes_base == 1 && modes_halved == 1);
    Ok(out)
}
