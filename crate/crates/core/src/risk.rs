//! Distributional risk metrics and rolling VaR backtests.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ingest::{sample_variance, ReturnSeries};
use crate::simulate::TerminalDistribution;
use crate::volmodels::VolatilityModel;

pub const DEFAULT_VAR_LEVEL: f64 = 0.05;
pub const MIN_BACKTEST_WINDOW: usize = 30;

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "level must lie in (0, 1), got {level}"
        )))
    }
}

/// Empirical quantile with linear interpolation between order statistics:
/// `h = (n - 1)·level`, `q = x_⌊h⌋ + (h - ⌊h⌋)(x_⌊h⌋+1 - x_⌊h⌋)`.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if values.is_empty() {
        return Err(Error::InsufficientData(
            "quantile of an empty sample".into(),
        ));
    }
    let mut v = values.to_vec();
    let h = (v.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, x_lo, upper) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let x_lo = *x_lo;
    if frac == 0.0 || upper.is_empty() {
        return Ok(x_lo);
    }
    let x_hi = upper
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .expect("non-empty");
    Ok(x_lo + frac * (x_hi - x_lo))
}

/// Terminal-value quantile at `level`.
pub fn var_quantile(dist: &TerminalDistribution, level: f64) -> Result<f64> {
    quantile(&dist.terminal_values, level)
}

/// Fraction of terminal values strictly below `threshold`.
pub fn loss_probability(dist: &TerminalDistribution, threshold: f64) -> Result<f64> {
    fraction_below(&dist.terminal_values, threshold)
}

pub(crate) fn fraction_below(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("empty distribution".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let below = values.iter().filter(|v| **v < threshold).count();
    Ok(below as f64 / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub model_label: String,
    pub var_level: f64,
    /// Terminal portfolio value at the `var_level` quantile.
    pub var_quantile_value: f64,
    /// `initial value - var_quantile_value`; negative when the quantile is a gain.
    pub var_loss: f64,
    /// `var_loss` floored at zero.
    pub var_loss_floored: f64,
    pub loss_probability: f64,
    pub threshold: f64,
    pub weights: Vec<f64>,
    pub n_paths: usize,
    pub horizon_days: u32,
    pub seed: u64,
}

impl RiskReport {
    /// Evaluates `dist` with the initial portfolio value as loss threshold.
    pub fn evaluate(
        model_label: impl Into<String>,
        dist: &TerminalDistribution,
        level: f64,
    ) -> Result<Self> {
        let cfg = &dist.config;
        let threshold = cfg.initial_portfolio_value;
        let q = var_quantile(dist, level)?;
        let var_loss = threshold - q;
        Ok(Self {
            model_label: model_label.into(),
            var_level: level,
            var_quantile_value: q,
            var_loss,
            var_loss_floored: var_loss.max(0.0),
            loss_probability: loss_probability(dist, threshold)?,
            threshold,
            weights: cfg.weights.clone(),
            n_paths: cfg.n_paths,
            horizon_days: cfg.horizon_days,
            seed: cfg.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    pub window_length: usize,
    pub n_forecasts: usize,
    pub n_violations: usize,
    pub violation_rate: f64,
    pub expected_rate: f64,
}

/// Rolling one-day parametric VaR backtest.
///
/// For every day `t ≥ window` the model is restarted on
/// `returns[t-window..t]` with the window's sample variance as seed (and, for
/// the mean-reverting model, as long-run level). The next-day variance
/// `σ²_t` gives the VaR return `Φ⁻¹(level)·σ_t`; a realized return strictly
/// below it counts as a violation.
pub fn backtest_var(
    returns: &ReturnSeries,
    model: &VolatilityModel,
    window: usize,
    level: f64,
) -> Result<BacktestResult> {
    model.validate()?;
    rolling_backtest(returns, window, level, |trailing| {
        let seed = sample_variance(trailing).expect("window >= 30");
        let m = match *model {
            VolatilityModel::IgarchMeanRevert { lambda, kappa, .. } => {
                VolatilityModel::IgarchMeanRevert {
                    lambda,
                    kappa,
                    sigma_bar_sq: seed,
                }
            }
            other => other,
        };
        let path = m.recursion(trailing, seed);
        let last = *path.last().expect("non-empty window");
        m.step(last, trailing[trailing.len() - 1])
    })
}

/// Rolling backtest with the trailing window's sample variance as the
/// next-day forecast (constant-volatility baseline).
pub fn backtest_static_var(
    returns: &ReturnSeries,
    window: usize,
    level: f64,
) -> Result<BacktestResult> {
    rolling_backtest(returns, window, level, |trailing| {
        sample_variance(trailing).expect("window >= 30")
    })
}

fn rolling_backtest<F>(
    returns: &ReturnSeries,
    window: usize,
    level: f64,
    forecast: F,
) -> Result<BacktestResult>
where
    F: Fn(&[f64]) -> f64,
{
    check_level(level)?;
    let r = returns.values();
    if window < MIN_BACKTEST_WINDOW {
        return Err(Error::Parameter(format!(
            "backtest window must be >= {MIN_BACKTEST_WINDOW}, got {window}"
        )));
    }
    if r.len() <= window {
        return Err(Error::InsufficientData(format!(
            "{}: {} returns is not more than the backtest window {window}",
            returns.asset_id(),
            r.len()
        )));
    }

    let z = Normal::standard().inverse_cdf(level);
    let n_violations = (window..r.len())
        .filter(|&t| r[t] < z * forecast(&r[t - window..t]).sqrt())
        .count();
    let n_forecasts = r.len() - window;
    Ok(BacktestResult {
        window_length: window,
        n_forecasts,
        n_violations,
        violation_rate: n_violations as f64 / n_forecasts as f64,
        expected_rate: level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{cholesky, simulate_terminal_distribution, SimulationConfig};
    use crate::volmodels::Garch11;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dist(values: Vec<f64>) -> TerminalDistribution {
        let n = values.len();
        TerminalDistribution {
            terminal_values: values,
            config: SimulationConfig {
                n_paths: n,
                ..SimulationConfig::new(vec![1.0], vec![0.0], vec![0.0], 0)
            },
        }
    }

    #[test]
    fn degenerate_distribution() {
        let d = dist(vec![100_000.0; 50]);
        for level in [0.01, 0.05, 0.5, 0.99] {
            assert_eq!(var_quantile(&d, level).unwrap(), 100_000.0);
        }
    }

    #[test]
    fn interpolated_quantile_of_one_to_hundred() {
        // h = 99·0.05 = 4.95 → x[4] + 0.95·(x[5] - x[4]) = 5.95
        let mut values: Vec<f64> = (1..=100).map(f64::from).collect();
        values.reverse();
        let q = var_quantile(&dist(values), 0.05).unwrap();
        assert!((q - 5.95).abs() < 1e-12, "{q}");
    }

    #[test]
    fn quantile_errors() {
        assert!(quantile(&[], 0.05).is_err());
        assert!(quantile(&[1.0], 0.0).is_err());
        assert!(quantile(&[1.0], 1.0).is_err());
        assert_eq!(quantile(&[3.0], 0.4).unwrap(), 3.0);
    }

    #[test]
    fn loss_probability_is_strict() {
        let d = dist(vec![100.0, 200.0, 300.0, 400.0]);
        assert_eq!(loss_probability(&d, 50.0).unwrap(), 0.0);
        assert_eq!(loss_probability(&d, 1e9).unwrap(), 1.0);
        assert_eq!(loss_probability(&d, 200.0).unwrap(), 0.25);
        assert!(loss_probability(&d, 0.0).is_err());
        assert!(loss_probability(&dist(vec![]), 1.0).is_err());
    }

    #[test]
    fn degenerate_simulation_has_no_losses() {
        let cfg = SimulationConfig {
            n_paths: 100,
            ..SimulationConfig::new(vec![0.5, 0.5], vec![0.0, 0.0], vec![0.0, 0.0], 1)
        };
        let chol = cholesky(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let d = simulate_terminal_distribution(&cfg, &chol).unwrap();
        assert_eq!(
            loss_probability(&d, cfg.initial_portfolio_value).unwrap(),
            0.0
        );
        let report = RiskReport::evaluate("flat", &d, 0.05).unwrap();
        assert_eq!(report.var_quantile_value, 100_000.0);
        assert_eq!(report.var_loss, 0.0);
        assert_eq!(report.loss_probability, 0.0);
    }

    #[test]
    fn lognormal_quantile_matches_closed_form() {
        let cfg = SimulationConfig {
            n_paths: 50_000,
            ..SimulationConfig::new(vec![1.0], vec![0.0], vec![0.3], 5)
        };
        let d = simulate_terminal_distribution(&cfg, &cholesky(&[vec![1.0]]).unwrap()).unwrap();
        let z = Normal::standard().inverse_cdf(0.05);
        let analytic = 100_000.0 * (-0.5 * 0.09 + 0.3 * z).exp();
        let q = var_quantile(&d, 0.05).unwrap();
        assert!(
            ((q - analytic) / analytic).abs() < 0.01,
            "{q} vs {analytic}"
        );
    }

    fn gaussian(n: usize, sd: f64, seed: u64) -> ReturnSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        ReturnSeries::from_values("G", xs).unwrap()
    }

    #[test]
    fn backtest_is_calibrated_on_gaussian_data() {
        let window = 250;
        let r = gaussian(window + 2000, 0.03, 42);
        let models = [
            VolatilityModel::EwmaIgarch { lambda: 0.94 },
            VolatilityModel::Garch11(Garch11 {
                omega: 0.0009,
                alpha: 0.0,
                beta: 0.0,
            }),
            VolatilityModel::IgarchMeanRevert {
                lambda: 0.85,
                kappa: 0.02,
                sigma_bar_sq: 0.0,
            },
            VolatilityModel::AsymIgarch {
                lambda: 0.97,
                gamma: 0.25,
            },
        ];
        for m in models {
            let b = backtest_var(&r, &m, window, 0.05).unwrap();
            assert_eq!(b.n_forecasts, 2000);
            assert!((b.violation_rate - 0.05).abs() <= 0.015, "{m:?}: {b:?}");
        }
        let b = backtest_static_var(&r, window, 0.05).unwrap();
        assert!((b.violation_rate - 0.05).abs() <= 0.015, "{b:?}");
    }

    #[test]
    fn zero_returns_never_violate() {
        let r = ReturnSeries::from_values("Z", vec![0.0; 100]).unwrap();
        let b = backtest_var(&r, &VolatilityModel::EwmaIgarch { lambda: 0.94 }, 30, 0.05).unwrap();
        assert_eq!(b.n_violations, 0);
        assert_eq!(b.n_forecasts, 70);
    }

    #[test]
    fn understated_variance_violates_often() {
        // Model variance fixed at v; data drawn with variance 4v.
        let v: f64 = 1e-4;
        let r = gaussian(2100, (4.0 * v).sqrt(), 3);
        let m = VolatilityModel::Garch11(Garch11 {
            omega: v,
            alpha: 0.0,
            beta: 0.0,
        });
        let b = backtest_var(&r, &m, 100, 0.05).unwrap();
        assert!(b.violation_rate > 0.10, "{b:?}");
    }

    #[test]
    fn backtest_preconditions() {
        let r = gaussian(100, 0.01, 1);
        let m = VolatilityModel::EwmaIgarch { lambda: 0.94 };
        assert!(matches!(
            backtest_var(&r, &m, 100, 0.05),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            backtest_var(&r, &m, 29, 0.05),
            Err(Error::Parameter(_))
        ));
        assert!(backtest_var(&r, &m, 30, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn quantile_is_monotone_and_translation_consistent(
            values in prop::collection::vec(1.0f64..1e6, 1..300),
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
            shift in 0.0f64..1e5,
            t in 1.0f64..1e6,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let d = dist(values.clone());
            prop_assert!(var_quantile(&d, lo).unwrap() <= var_quantile(&d, hi).unwrap());

            // Shifted values are compared against quantiles of an exactly
            // representable shift to avoid rounding noise in the sum.
            let shift = shift.round();
            let shifted = dist(values.iter().map(|v| v + shift).collect());
            let q0 = var_quantile(&d, lo).unwrap();
            let q1 = var_quantile(&shifted, lo).unwrap();
            prop_assert!((q1 - (q0 + shift)).abs() <= 1e-9 * (1.0 + q1.abs()));

            let p0 = loss_probability(&d, t).unwrap();
            prop_assert_eq!(p0, loss_probability(&shifted, t + shift).unwrap());
            prop_assert!(p0 <= loss_probability(&d, t * 1.5).unwrap());
            prop_assert!((0.0..=1.0).contains(&p0));
        }
    }
}
