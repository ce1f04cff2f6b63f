//! Monte Carlo statistics: moments (including truncated negative powers),
//! tail probabilities with Wilson score intervals, decay-exponent fits, and
//! Gaussian kernel density estimates.

use thiserror::Error;

/// Two-sided z for the fixed 95% confidence level.
pub const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("empty sample array")]
    EmptySamples,
    #[error("truncation threshold required for negative moment order p = {0}")]
    MissingTruncation(f64),
    #[error("truncation threshold must be positive, got {0}")]
    NonPositiveTruncation(f64),
    #[error("need at least 3 usable levels for a decay fit, got {0}")]
    TooFewLevels(usize),
    #[error("kernel density estimation needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
}

/// Truncation bookkeeping for negative-moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationInfo {
    pub threshold: f64,
    /// Fraction of samples floored at the threshold (includes any negative
    /// or zero samples).
    pub floored_fraction: f64,
    /// Sensitivity record: the estimate recomputed at threshold/2 and
    /// threshold/4.
    pub sensitivity: [(f64, f64); 2],
}

/// A Monte Carlo estimate with its 95% confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub standard_error: f64,
    pub truncation: Option<TruncationInfo>,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt(), n)
}

/// Monte Carlo moment E[s^p]. For p < 0 a positive truncation threshold is
/// required; samples below it (including any nonpositive ones) are floored
/// at the threshold before raising to the power, and the floored fraction
/// plus a sensitivity record at threshold/2 and threshold/4 are reported.
pub fn mc_moment(
    samples: &[f64],
    p: f64,
    truncation: Option<f64>,
) -> Result<EstimateReport, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptySamples);
    }
    if p < 0.0 {
        let tau = truncation.ok_or(EstimatorError::MissingTruncation(p))?;
        if tau <= 0.0 || tau.is_nan() {
            return Err(EstimatorError::NonPositiveTruncation(tau));
        }
        let estimate_at = |tau: f64| {
            let (mean, se, _) = mean_and_se(samples.iter().map(move |&s| s.max(tau).powf(p)));
            (mean, se)
        };
        let (mean, se) = estimate_at(tau);
        let floored = samples.iter().filter(|&&s| s < tau).count();
        Ok(EstimateReport {
            estimate: mean,
            ci_low: mean - Z_95 * se,
            ci_high: mean + Z_95 * se,
            n_samples: samples.len(),
            standard_error: se,
            truncation: Some(TruncationInfo {
                threshold: tau,
                floored_fraction: floored as f64 / samples.len() as f64,
                sensitivity: [
                    (tau / 2.0, estimate_at(tau / 2.0).0),
                    (tau / 4.0, estimate_at(tau / 4.0).0),
                ],
            }),
        })
    } else {
        let (mean, se, n) = mean_and_se(samples.iter().map(move |&s| s.powf(p)));
        Ok(EstimateReport {
            estimate: mean,
            ci_low: mean - Z_95 * se,
            ci_high: mean + Z_95 * se,
            n_samples: n,
            standard_error: se,
            truncation: None,
        })
    }
}

/// Wilson score interval for a binomial proportion k/n at 95% confidence.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z_95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Empirical P(sample < threshold) with a Wilson score interval.
pub fn tail_probability(samples: &[f64], threshold: f64) -> Result<EstimateReport, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptySamples);
    }
    let n = samples.len();
    let k = samples.iter().filter(|&&s| s < threshold).count();
    let p = k as f64 / n as f64;
    let (lo, hi) = wilson_interval(k, n);
    Ok(EstimateReport {
        estimate: p,
        ci_low: lo,
        ci_high: hi,
        n_samples: n,
        standard_error: (p * (1.0 - p) / n as f64).sqrt(),
        truncation: None,
    })
}

/// Result of fitting log(-log P_n) against log n.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// Indices of levels excluded because their estimate left (0, 1).
    pub excluded: Vec<usize>,
    pub n_used: usize,
}

/// Least-squares slope of log(-log P_n) versus log n, with an intercept so a
/// common prefactor is absorbed. Levels with P outside (0,1) are excluded
/// and reported; fewer than 3 usable levels is an error.
pub fn decay_exponent_fit(levels: &[f64], p_hats: &[f64]) -> Result<DecayFit, EstimatorError> {
    assert_eq!(levels.len(), p_hats.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for (idx, (&n, &p)) in levels.iter().zip(p_hats.iter()).enumerate() {
        if p > 0.0 && p < 1.0 && n > 0.0 {
            xs.push(n.ln());
            ys.push((-p.ln()).ln());
        } else {
            excluded.push(idx);
        }
    }
    if xs.len() < 3 {
        return Err(EstimatorError::TooFewLevels(xs.len()));
    }
    let (slope, intercept, slope_stderr, r_squared) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        excluded,
        n_used: xs.len(),
    })
}

/// Ordinary least squares y = a + b x; returns (slope, intercept,
/// slope standard error, R^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let sxy = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    let syy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = syy - slope * sxy;
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dof = (xs.len().saturating_sub(2)).max(1) as f64;
    let slope_stderr = (ss_res.max(0.0) / dof / sxx).sqrt();
    (slope, intercept, slope_stderr, r_squared)
}

/// Bandwidth selection for the Gaussian KDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule of thumb, 0.9 min(sd, IQR/1.34) n^{-1/5}.
    Silverman,
    Fixed(f64),
}

/// A kernel density estimate evaluated on a query grid.
#[derive(Debug, Clone)]
pub struct DensityCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub bandwidth: f64,
    /// Trapezoid integral of the curve over the query grid.
    pub integral: f64,
}

impl DensityCurve {
    /// Number of local maxima whose topographic prominence (height above
    /// the highest saddle separating the peak from any higher peak) exceeds
    /// `prominence` times the global maximum. Sampling wiggles on the flank
    /// of one big bump have tiny prominence and are not counted.
    pub fn prominent_modes(&self, prominence: f64) -> usize {
        let n = self.ys.len();
        let peak = self.ys.iter().cloned().fold(0.0f64, f64::max);
        let mut count = 0;
        for i in 1..n.saturating_sub(1) {
            let y = self.ys[i];
            if !(y > self.ys[i - 1] && y >= self.ys[i + 1]) {
                continue;
            }
            // walk outward to the nearest higher ground on each side,
            // tracking the lowest point passed; the saddle is the higher of
            // the two minima (an unobstructed side contributes base 0)
            let mut left_base = 0.0f64;
            let mut low = y;
            for k in (0..i).rev() {
                low = low.min(self.ys[k]);
                if self.ys[k] > y {
                    left_base = low;
                    break;
                }
            }
            let mut right_base = 0.0f64;
            low = y;
            for k in i + 1..n {
                low = low.min(self.ys[k]);
                if self.ys[k] > y {
                    right_base = low;
                    break;
                }
            }
            if y - left_base.max(right_base) >= prominence * peak {
                count += 1;
            }
        }
        count
    }
}

pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q =
        |f: f64| sorted[((f * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        // degenerate sample: a single narrow bump at the common value
        1e-3 * mean.abs().max(1.0)
    }
}

/// Gaussian-kernel density estimate on a query grid (default: the sample
/// span widened by four bandwidths, 512 points).
pub fn kde_density(
    samples: &[f64],
    bandwidth: Bandwidth,
    query: Option<&[f64]>,
) -> Result<DensityCurve, EstimatorError> {
    if samples.len() < 100 {
        return Err(EstimatorError::TooFewSamples(samples.len()));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(samples),
        Bandwidth::Fixed(h) => {
            assert!(h > 0.0, "bandwidth must be positive");
            h
        }
    };
    let xs: Vec<f64> = match query {
        Some(q) => q.to_vec(),
        None => {
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * h;
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
            let m = 512usize;
            (0..m)
                .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
                .collect()
        }
    };
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * samples.len() as f64);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let mut integral = 0.0;
    for k in 1..xs.len() {
        integral += 0.5 * (ys[k] + ys[k - 1]) * (xs[k] - xs[k - 1]);
    }
    Ok(DensityCurve {
        xs,
        ys,
        bandwidth: h,
        integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::standard_normal_at;
    use approx::assert_relative_eq;

    #[test]
    fn constant_samples_negative_moment_exact() {
        let samples = vec![0.5; 200];
        let r = mc_moment(&samples, -2.0, Some(0.01)).unwrap();
        assert_relative_eq!(r.estimate, 4.0, max_relative = 1e-12);
        assert_eq!(r.ci_low, r.ci_high);
        assert_eq!(r.truncation.as_ref().unwrap().floored_fraction, 0.0);
    }

    #[test]
    fn zeroth_moment_is_one() {
        let samples = vec![0.3, 1.7, 2.9];
        let r = mc_moment(&samples, 0.0, None).unwrap();
        assert_eq!(r.estimate, 1.0);
    }

    #[test]
    fn lognormal_negative_second_moment_matches_closed_form() {
        // s = exp(Z), Z ~ N(0, 0.25): E[s^-2] = exp(2 * 0.25) = e^{0.5}
        let n = 100_000u64;
        let samples: Vec<f64> = (0..n)
            .map(|i| (0.5 * standard_normal_at(8, i, 0, 0)).exp())
            .collect();
        let r = mc_moment(&samples, -2.0, Some(1e-6)).unwrap();
        let exact = 0.5f64.exp();
        assert!(
            r.ci_low <= exact && exact <= r.ci_high,
            "CI [{}, {}] misses {exact}",
            r.ci_low,
            r.ci_high
        );
        assert_eq!(r.truncation.as_ref().unwrap().floored_fraction, 0.0);
    }

    #[test]
    fn truncation_required_for_negative_p() {
        assert!(matches!(
            mc_moment(&[1.0, 2.0], -1.0, None),
            Err(EstimatorError::MissingTruncation(_))
        ));
    }

    #[test]
    fn truncation_sensitivity_detects_divergence() {
        // centered Gaussian samples: E[max(s, tau)^{-2}] blows up as tau -> 0,
        // so the tau vs tau/4 comparison must move by far more than 10%;
        // strictly positive lognormal samples stay put
        let n = 20_000u64;
        let gaussian: Vec<f64> = (0..n).map(|i| standard_normal_at(3, i, 0, 0)).collect();
        let r = mc_moment(&gaussian, -2.0, Some(1e-3)).unwrap();
        let t = r.truncation.unwrap();
        let drift = (t.sensitivity[1].1 - r.estimate).abs() / r.estimate;
        assert!(drift > 0.10, "divergent case moved only {drift}");

        let lognormal: Vec<f64> = (0..n)
            .map(|i| (0.5 * standard_normal_at(4, i, 0, 0)).exp())
            .collect();
        let r = mc_moment(&lognormal, -2.0, Some(1e-3)).unwrap();
        let t = r.truncation.unwrap();
        let drift = (t.sensitivity[1].1 - r.estimate).abs() / r.estimate;
        assert!(drift < 0.10, "stable case moved {drift}");
    }

    #[test]
    fn tail_probability_counts() {
        let r = tail_probability(&[0.1, 0.2, 0.3, 0.4], 0.25).unwrap();
        assert_eq!(r.estimate, 0.5);
    }

    #[test]
    fn zero_count_wilson_upper_bound() {
        let n = 1000usize;
        let samples = vec![1.0; n];
        let r = tail_probability(&samples, 0.0).unwrap();
        assert_eq!(r.estimate, 0.0);
        let z2 = Z_95 * Z_95;
        assert_relative_eq!(r.ci_high, z2 / (n as f64 + z2), max_relative = 1e-9);
        assert_relative_eq!(r.ci_high, 3.84 / (n as f64 + 3.84), max_relative = 1e-2);
    }

    #[test]
    fn uniform_tail_within_wilson_interval() {
        let n = 10_000u64;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                // uniform(0,1) from the counter generator's uniform bits
                let z = standard_normal_at(5, i, 0, 0);
                // Phi(z) is uniform when z is standard normal
                0.5 * (1.0 + erf_approx(z / std::f64::consts::SQRT_2))
            })
            .collect();
        let r = tail_probability(&samples, 0.5).unwrap();
        assert!(
            r.ci_low <= 0.5 && 0.5 <= r.ci_high,
            "[{}, {}]",
            r.ci_low,
            r.ci_high
        );
    }

    // Abramowitz-Stegun 7.1.26, max absolute error 1.5e-7
    fn erf_approx(x: f64) -> f64 {
        let sign = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        sign * (1.0 - poly * (-x * x).exp())
    }

    #[test]
    fn wilson_coverage_over_synthetic_binomials() {
        // >= 93% coverage over 200 replications at each true p
        for (case, &p_true) in [0.01, 0.1, 0.5].iter().enumerate() {
            let n = 500usize;
            let mut covered = 0;
            for rep in 0..200u64 {
                let mut k = 0usize;
                for i in 0..n {
                    let u = 0.5
                        * (1.0
                            + erf_approx(
                                standard_normal_at(100 + case as u64, rep, i as u64, 0)
                                    / std::f64::consts::SQRT_2,
                            ));
                    if u < p_true {
                        k += 1;
                    }
                }
                let (lo, hi) = wilson_interval(k, n);
                if lo <= p_true && p_true <= hi {
                    covered += 1;
                }
            }
            assert!(covered >= 186, "coverage {covered}/200 at p = {p_true}");
        }
    }

    #[test]
    fn decay_fit_recovers_synthetic_exponents() {
        let levels: Vec<f64> = (1..=5).map(|n| n as f64).collect();
        for (exponent, expected) in [(1.5, 1.5), (1.0, 1.0)] {
            let p: Vec<f64> = levels.iter().map(|n| (-n.powf(exponent)).exp()).collect();
            let fit = decay_exponent_fit(&levels, &p).unwrap();
            assert_relative_eq!(fit.slope, expected, epsilon = 1e-6);
            assert!(fit.r_squared > 1.0 - 1e-9);
        }
    }

    #[test]
    fn decay_fit_excludes_degenerate_levels_and_errors_below_three() {
        let levels = [1.0, 2.0, 3.0, 4.0];
        let p = [0.5, 0.1, 0.0, 1.0];
        assert!(matches!(
            decay_exponent_fit(&levels, &p),
            Err(EstimatorError::TooFewLevels(2))
        ));
        let p = [0.5, 0.1, 0.01, 0.0];
        let fit = decay_exponent_fit(&levels, &p).unwrap();
        assert_eq!(fit.excluded, vec![3]);
        assert_eq!(fit.n_used, 3);
    }

    #[test]
    fn decay_fit_slope_scales_with_power_transform() {
        // P -> P^lambda multiplies -log P by lambda: the slope is unchanged
        // and the intercept shifts by log lambda
        let levels: Vec<f64> = (1..=6).map(|n| n as f64).collect();
        let p: Vec<f64> = levels.iter().map(|n| (-0.7 * n.powf(1.3)).exp()).collect();
        let base = decay_exponent_fit(&levels, &p).unwrap();
        let lam = 2.5;
        let powered: Vec<f64> = p.iter().map(|q| q.powf(lam)).collect();
        let scaled = decay_exponent_fit(&levels, &powered).unwrap();
        assert_relative_eq!(scaled.slope, base.slope, epsilon = 1e-9);
        assert_relative_eq!(scaled.intercept, base.intercept + lam.ln(), epsilon = 1e-9);
    }

    #[test]
    fn kde_normalizes_to_one() {
        let samples: Vec<f64> = (0..5000u64)
            .map(|i| standard_normal_at(6, i, 0, 0))
            .collect();
        let curve = kde_density(&samples, Bandwidth::Silverman, None).unwrap();
        assert!(
            (curve.integral - 1.0).abs() < 0.01,
            "integral {}",
            curve.integral
        );
    }

    #[test]
    fn kde_sup_error_against_normal_density() {
        let samples: Vec<f64> = (0..100_000u64)
            .map(|i| standard_normal_at(7, i, 0, 0))
            .collect();
        let curve = kde_density(&samples, Bandwidth::Silverman, None).unwrap();
        let mut sup = 0.0f64;
        for (x, y) in curve.xs.iter().zip(curve.ys.iter()) {
            let exact = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            sup = sup.max((y - exact).abs());
        }
        assert!(sup <= 0.01, "sup error {sup}");
    }

    #[test]
    fn kde_identical_samples_single_bump() {
        let samples = vec![2.5; 200];
        let curve = kde_density(&samples, Bandwidth::Silverman, None).unwrap();
        assert_eq!(curve.prominent_modes(0.05), 1);
        let peak_x = curve.xs[curve
            .ys
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0];
        assert!((peak_x - 2.5).abs() < 0.01);
    }

    #[test]
    fn kde_too_few_samples_rejected() {
        assert!(matches!(
            kde_density(&[1.0; 50], Bandwidth::Silverman, None),
            Err(EstimatorError::TooFewSamples(50))
        ));
    }

    proptest::proptest! {
        #[test]
        fn wilson_interval_brackets_the_point_estimate(k in 0usize..=100, extra in 1usize..1000) {
            let n = k + extra;
            let (lo, hi) = wilson_interval(k, n);
            let p = k as f64 / n as f64;
            // Wilson center is shrunk toward 1/2 but the interval always
            // contains the raw proportion
            proptest::prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }
}
