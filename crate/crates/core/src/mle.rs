//! Gaussian maximum-likelihood fitting of GARCH(1,1).
//!
//! The search runs over an unconstrained parameter vector `(ln ω, a, b)`
//! mapped onto the feasible set by
//!
//! ```text
//! ω = exp(ln ω)
//! α = (1 - ε) · e^a / (1 + e^a + e^b)
//! β = (1 - ε) · e^b / (1 + e^a + e^b)
//! ```
//!
//! so every trial point satisfies `ω > 0, α, β ≥ 0, α + β ≤ 1 - ε`.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{sample_variance, ReturnSeries};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::volmodels::Garch11;

/// Gap kept between `α + β` and one.
pub const STATIONARITY_MARGIN: f64 = 1e-6;
pub const MIN_FIT_LENGTH: usize = 100;
pub const FIT_TOLERANCE: f64 = 1e-8;
pub const FIT_MAX_ITERATIONS: usize = 10_000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_OMEGA_BOUNDS: (f64, f64) = (-60.0, 5.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GarchFitResult {
    pub params: Garch11,
    /// Conditional log-likelihood (observations `1..n`).
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub persistence: f64,
    pub initial_guess: Garch11,
    /// σ²_0 used to start the recursion (sample variance).
    pub seed_variance: f64,
}

/// Full Gaussian log-likelihood over every observation, with `σ²_0` given.
pub fn garch_log_likelihood(
    returns: &ReturnSeries,
    params: Garch11,
    seed_variance: f64,
) -> Result<f64> {
    let r = returns.values();
    garch_log_likelihood_window(r, params, seed_variance, 0..r.len())
}

/// Sums the log-density of `returns[t]` for `t` in `window`. The variance
/// recursion always starts at index 0 with `seed_variance`.
pub fn garch_log_likelihood_window(
    returns: &[f64],
    params: Garch11,
    seed_variance: f64,
    window: Range<usize>,
) -> Result<f64> {
    params.validate()?;
    if window.end > returns.len() || window.start > window.end {
        return Err(Error::Parameter(format!(
            "likelihood window {window:?} outside series of length {}",
            returns.len()
        )));
    }
    let mut var = seed_variance;
    let mut ll = 0.0;
    for (t, &r) in returns[..window.end].iter().enumerate() {
        if t > 0 {
            let prev = returns[t - 1];
            var = params.omega + params.alpha * prev * prev + params.beta * var;
        }
        if t >= window.start {
            if !(var > 0.0 && var.is_finite()) {
                return Err(Error::Evaluation(format!(
                    "conditional variance {var} at t = {t} is not positive"
                )));
            }
            ll += -0.5 * (LN_2PI + var.ln() + r * r / var);
        }
    }
    Ok(ll)
}

/// Likelihood conditioned on the first observation, as maximized by
/// [`fit_garch_mle`].
pub fn conditional_log_likelihood(
    returns: &[f64],
    params: Garch11,
    seed_variance: f64,
) -> Result<f64> {
    garch_log_likelihood_window(
        returns,
        params,
        seed_variance,
        1.min(returns.len())..returns.len(),
    )
}

fn to_params(theta: &[f64]) -> Garch11 {
    let scale = 1.0 - STATIONARITY_MARGIN;
    let ln_omega = theta[0].clamp(LN_OMEGA_BOUNDS.0, LN_OMEGA_BOUNDS.1);
    let (a, b) = (theta[1], theta[2]);
    let m = a.max(b).max(0.0);
    let (e0, ea, eb) = ((-m).exp(), (a - m).exp(), (b - m).exp());
    let denom = e0 + ea + eb;
    let alpha = scale * ea / denom;
    let mut beta = scale * eb / denom;
    if alpha + beta > scale {
        beta = scale - alpha;
    }
    Garch11 {
        omega: ln_omega.exp(),
        alpha,
        beta: beta.max(0.0),
    }
}

fn from_params(p: Garch11) -> Vec<f64> {
    let scale = 1.0 - STATIONARITY_MARGIN;
    let (a, b) = (p.alpha / scale, p.beta / scale);
    let rest = 1.0 - a - b;
    vec![p.omega.ln(), (a / rest).ln(), (b / rest).ln()]
}

/// Maximizes the Gaussian GARCH(1,1) likelihood of `returns`.
///
/// Starts from `ω = 0.05·σ̄², α = 0.10, β = 0.85` with `σ̄²` the sample
/// variance, which also seeds the recursion. Series shorter than
/// [`MIN_FIT_LENGTH`] are refused.
pub fn fit_garch_mle(returns: &ReturnSeries) -> Result<GarchFitResult> {
    let r = returns.values();
    if r.len() < MIN_FIT_LENGTH {
        return Err(Error::InsufficientData(format!(
            "{}: GARCH fit needs at least {MIN_FIT_LENGTH} returns, got {}",
            returns.asset_id(),
            r.len()
        )));
    }
    let seed_variance = sample_variance(r).unwrap_or(0.0);
    if !(seed_variance > 0.0) {
        return Err(Error::Validation(format!(
            "{}: zero sample variance, nothing to fit",
            returns.asset_id()
        )));
    }

    let initial_guess = Garch11 {
        omega: 0.05 * seed_variance,
        alpha: 0.10,
        beta: 0.85,
    };
    let objective =
        |theta: &[f64]| match conditional_log_likelihood(r, to_params(theta), seed_variance) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        };
    let opts = NelderMeadOptions {
        max_iterations: FIT_MAX_ITERATIONS,
        f_tolerance: FIT_TOLERANCE,
        ..Default::default()
    };
    let min = nelder_mead::minimize(objective, &from_params(initial_guess), &opts);
    let params = to_params(&min.x);
    let log_likelihood = conditional_log_likelihood(r, params, seed_variance)?;

    Ok(GarchFitResult {
        params,
        log_likelihood,
        converged: min.converged,
        iterations: min.iterations,
        persistence: params.persistence(),
        initial_guess,
        seed_variance,
    })
}

/// Draws `n` returns `r_t = σ_t z_t` from a GARCH(1,1) with Gaussian
/// innovations, starting at the long-run variance (or `ω` when
/// non-stationary).
pub fn simulate_garch11(params: Garch11, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut var = params.long_run_variance().unwrap_or(params.omega);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let r = var.sqrt() * z;
        out.push(r);
        var = params.omega + params.alpha * r * r + params.beta * var;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(xs: Vec<f64>) -> ReturnSeries {
        ReturnSeries::from_values("T", xs).unwrap()
    }

    fn iid_normal(v: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v.sqrt() * z
            })
            .collect::<Vec<f64>>()
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let p = Garch11 {
            omega: 1.0,
            alpha: 0.0,
            beta: 0.0,
        };
        let ll = garch_log_likelihood(&series(vec![0.0]), p, 1.0).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn excluded_appended_return_does_not_matter() {
        let p = Garch11 {
            omega: 1e-5,
            alpha: 0.1,
            beta: 0.85,
        };
        let base = vec![0.01, -0.02, 0.005, 0.03];
        let mut longer = base.clone();
        longer.push(0.5);
        let a = garch_log_likelihood_window(&base, p, 2e-4, 1..4).unwrap();
        let b = garch_log_likelihood_window(&longer, p, 2e-4, 1..4).unwrap();
        assert_eq!(a, b);
        let c = garch_log_likelihood_window(&longer, p, 2e-4, 1..5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn likelihood_matches_direct_density_sum() {
        let p = Garch11 {
            omega: 2e-5,
            alpha: 0.08,
            beta: 0.9,
        };
        let r: [f64; 5] = [0.01, -0.03, 0.02, 0.0, -0.01];
        let mut var: f64 = 3e-4;
        let mut oracle = 0.0;
        for t in 0..r.len() {
            if t > 0 {
                var = 2e-5 + 0.08 * r[t - 1] * r[t - 1] + 0.9 * var;
            }
            let density =
                (-r[t] * r[t] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            oracle += density.ln();
        }
        let ll = garch_log_likelihood_window(&r, p, 3e-4, 0..5).unwrap();
        assert!((ll - oracle).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_variance_is_an_error() {
        let p = Garch11 {
            omega: 0.0,
            alpha: 0.0,
            beta: 0.5,
        };
        let err = garch_log_likelihood(&series(vec![0.01, 0.02]), p, 0.0).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn true_variance_beats_inflated_variance() {
        let v = 4e-4;
        let r = series(iid_normal(v, 10_000, 11));
        let at = |w| {
            garch_log_likelihood(
                &r,
                Garch11 {
                    omega: w,
                    alpha: 0.0,
                    beta: 0.0,
                },
                w,
            )
            .unwrap()
        };
        assert!(at(v) > at(4.0 * v));
    }

    #[test]
    fn reparameterization_round_trips_and_stays_feasible() {
        let p = Garch11 {
            omega: 3e-6,
            alpha: 0.12,
            beta: 0.8,
        };
        let q = to_params(&from_params(p));
        assert!((q.omega - p.omega).abs() < 1e-18);
        assert!((q.alpha - p.alpha).abs() < 1e-12);
        assert!((q.beta - p.beta).abs() < 1e-12);
        for theta in [
            [0.0, 800.0, 800.0],
            [-900.0, -800.0, 40.0],
            [3.0, 50.0, -50.0],
        ] {
            let q = to_params(&theta);
            assert!(q.omega > 0.0 && q.alpha >= 0.0 && q.beta >= 0.0);
            assert!(q.alpha + q.beta <= 1.0 - STATIONARITY_MARGIN);
        }
    }

    #[test]
    fn short_series_is_refused() {
        let err = fit_garch_mle(&series(iid_normal(1e-4, 50, 1))).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn recovers_simulated_parameters() {
        let truth = Garch11 {
            omega: 1e-5,
            alpha: 0.10,
            beta: 0.85,
        };
        let r = series(simulate_garch11(truth, 5000, 20_240_101));
        let fit = fit_garch_mle(&r).unwrap();
        let p = fit.params;
        assert!(fit.converged, "{fit:?}");
        assert!((p.alpha - 0.10).abs() <= 0.05, "{fit:?}");
        assert!((p.persistence() - 0.95).abs() <= 0.05, "{fit:?}");
        assert!(p.persistence() >= 0.90);
        assert!(p.omega > 0.0 && p.alpha + p.beta <= 1.0 - STATIONARITY_MARGIN);
        assert!(fit.log_likelihood.is_finite());

        let again = fit_garch_mle(&r).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn iid_data_has_small_alpha() {
        let r = series(iid_normal(4e-4, 5000, 99));
        let fit = fit_garch_mle(&r).unwrap();
        assert!(fit.params.alpha <= 0.05, "{fit:?}");
    }
}
