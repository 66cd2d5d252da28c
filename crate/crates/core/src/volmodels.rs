//! Conditional variance recursions.
//!
//! Every model maps a return series `r_0..r_{n-1}` and a seed variance to a
//! path `σ²_0..σ²_{n-1}` with `σ²_0 = seed` and, for `t ≥ 1`:
//!
//! ```text
//! EWMA / IGARCH      σ²_t = λ σ²_{t-1} + (1-λ) r²_{t-1}
//! GARCH(1,1)         σ²_t = ω + α r²_{t-1} + β σ²_{t-1}
//! IGARCH + reversion σ²_t = λ σ²_{t-1} + (1-λ) r²_{t-1} - κ (σ²_{t-1} - σ̄²)
//! Asymmetric IGARCH  σ²_t = λ σ²_{t-1} + (1-λ)(r²_{t-1} + γ 1[r_{t-1} < 0] r²_{t-1})
//! ```
//!
//! All variances are daily; [`annualize_variance`] converts to an annual
//! volatility with `√(days · σ²)`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnSeries;

pub const TRADING_DAYS_PER_YEAR: u32 = 252;

/// GARCH(1,1) coefficients on daily variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Garch11 {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Garch11 {
    pub fn new(omega: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { omega, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn is_stationary(&self) -> bool {
        self.persistence() < 1.0
    }

    /// `ω / (1 - α - β)` for stationary parameters.
    pub fn long_run_variance(&self) -> Option<f64> {
        self.is_stationary()
            .then(|| self.omega / (1.0 - self.persistence()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!(
                    "garch11 {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How a variance path is collapsed into the single volatility fed to the
/// simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaConvention {
    /// Last element of the path.
    FinalDay,
    /// Arithmetic mean of the path.
    PathMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VolatilityModel {
    EwmaIgarch {
        lambda: f64,
    },
    Garch11(Garch11),
    IgarchMeanRevert {
        lambda: f64,
        kappa: f64,
        sigma_bar_sq: f64,
    },
    AsymIgarch {
        lambda: f64,
        gamma: f64,
    },
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "decay factor lambda must lie in (0, 1), got {lambda}"
        )))
    }
}

impl VolatilityModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            VolatilityModel::EwmaIgarch { lambda } => check_lambda(lambda),
            VolatilityModel::Garch11(p) => p.validate(),
            VolatilityModel::IgarchMeanRevert {
                lambda,
                kappa,
                sigma_bar_sq,
            } => {
                check_lambda(lambda)?;
                if !(kappa > 0.0 && kappa < lambda) {
                    return Err(Error::Parameter(format!(
                        "reversion speed kappa must satisfy 0 < kappa < lambda = {lambda}, got {kappa}"
                    )));
                }
                if !(sigma_bar_sq.is_finite() && sigma_bar_sq >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "long-run variance must be finite and >= 0, got {sigma_bar_sq}"
                    )));
                }
                Ok(())
            }
            VolatilityModel::AsymIgarch { lambda, gamma } => {
                check_lambda(lambda)?;
                if !(gamma.is_finite() && gamma >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "asymmetry gamma must be finite and >= 0, got {gamma}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// One step of the recursion: the variance for day `t` given the
    /// variance and return of day `t-1`.
    #[inline]
    pub fn step(&self, prev_variance: f64, prev_return: f64) -> f64 {
        let r2 = prev_return * prev_return;
        match *self {
            VolatilityModel::EwmaIgarch { lambda } => ewma_step(lambda, prev_variance, r2),
            VolatilityModel::Garch11(p) => p.omega + p.alpha * r2 + p.beta * prev_variance,
            VolatilityModel::IgarchMeanRevert {
                lambda,
                kappa,
                sigma_bar_sq,
            } => mean_revert_step(lambda, kappa, sigma_bar_sq, prev_variance, r2),
            VolatilityModel::AsymIgarch { lambda, gamma } => {
                let down = if prev_return < 0.0 { 1.0 } else { 0.0 };
                lambda * prev_variance + (1.0 - lambda) * (r2 + gamma * down * r2)
            }
        }
    }

    /// Runs the recursion over `returns`. Validates parameters first.
    pub fn variance_path(
        &self,
        returns: &ReturnSeries,
        seed_variance: f64,
    ) -> Result<VariancePath> {
        self.validate()?;
        check_seed(seed_variance)?;
        Ok(VariancePath {
            timestamps: returns.timestamps().to_vec(),
            variances: self.recursion(returns.values(), seed_variance),
            model: *self,
            seed_variance,
        })
    }

    /// Unchecked recursion over raw values.
    pub(crate) fn recursion(&self, returns: &[f64], seed_variance: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(returns.len());
        if returns.is_empty() {
            return out;
        }
        let mut v = seed_variance;
        out.push(v);
        for &r in &returns[..returns.len() - 1] {
            v = self.step(v, r);
            out.push(v);
        }
        out
    }

    pub fn sigma_convention(&self) -> SigmaConvention {
        match self {
            VolatilityModel::EwmaIgarch { .. } | VolatilityModel::Garch11(_) => {
                SigmaConvention::FinalDay
            }
            VolatilityModel::IgarchMeanRevert { .. } | VolatilityModel::AsymIgarch { .. } => {
                SigmaConvention::PathMean
            }
        }
    }
}

#[inline]
fn ewma_step(lambda: f64, prev_variance: f64, r2: f64) -> f64 {
    lambda * prev_variance + (1.0 - lambda) * r2
}

#[inline]
fn mean_revert_step(
    lambda: f64,
    kappa: f64,
    sigma_bar_sq: f64,
    prev_variance: f64,
    r2: f64,
) -> f64 {
    // λ > κ keeps this nonnegative; the clamp only absorbs rounding.
    (lambda * prev_variance + (1.0 - lambda) * r2 - kappa * (prev_variance - sigma_bar_sq)).max(0.0)
}

fn check_seed(seed_variance: f64) -> Result<()> {
    if seed_variance.is_finite() && seed_variance >= 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "seed variance must be finite and >= 0, got {seed_variance}"
        )))
    }
}

/// Conditional daily variances produced by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath {
    pub timestamps: Vec<NaiveDate>,
    pub variances: Vec<f64>,
    pub model: VolatilityModel,
    pub seed_variance: f64,
}

impl VariancePath {
    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn final_variance(&self) -> Option<f64> {
        self.variances.last().copied()
    }

    pub fn mean_variance(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.variances.iter().sum::<f64>() / self.variances.len() as f64)
    }
}

/// Default σ²_0: the unbiased sample variance of the series itself.
pub fn default_seed_variance(returns: &ReturnSeries) -> Result<f64> {
    returns.sample_variance().ok_or_else(|| {
        Error::InsufficientData(format!(
            "{}: need at least 2 returns for a sample variance",
            returns.asset_id()
        ))
    })
}

pub fn ewma_variance_path(
    returns: &ReturnSeries,
    lambda: f64,
    seed_variance: f64,
) -> Result<VariancePath> {
    VolatilityModel::EwmaIgarch { lambda }.variance_path(returns, seed_variance)
}

pub fn garch11_variance_path(
    returns: &ReturnSeries,
    params: Garch11,
    seed_variance: f64,
) -> Result<VariancePath> {
    VolatilityModel::Garch11(params).variance_path(returns, seed_variance)
}

pub fn igarch_mr_variance_path(
    returns: &ReturnSeries,
    lambda: f64,
    kappa: f64,
    sigma_bar_sq: f64,
    seed_variance: f64,
) -> Result<VariancePath> {
    VolatilityModel::IgarchMeanRevert {
        lambda,
        kappa,
        sigma_bar_sq,
    }
    .variance_path(returns, seed_variance)
}

pub fn asym_igarch_variance_path(
    returns: &ReturnSeries,
    lambda: f64,
    gamma: f64,
    seed_variance: f64,
) -> Result<VariancePath> {
    VolatilityModel::AsymIgarch { lambda, gamma }.variance_path(returns, seed_variance)
}

/// `√(252 · daily_variance)`.
pub fn annualize_variance(daily_variance: f64) -> Result<f64> {
    annualize_variance_with(daily_variance, TRADING_DAYS_PER_YEAR)
}

pub fn annualize_variance_with(daily_variance: f64, days_per_year: u32) -> Result<f64> {
    if !(daily_variance.is_finite() && daily_variance >= 0.0) {
        return Err(Error::Parameter(format!(
            "daily variance must be finite and >= 0, got {daily_variance}"
        )));
    }
    Ok((f64::from(days_per_year) * daily_variance).sqrt())
}

/// Annual volatility handed to the simulation: the final-day variance or the
/// path mean, annualized.
pub fn model_sigma_for_simulation(
    path: &VariancePath,
    convention: SigmaConvention,
    days_per_year: u32,
) -> Result<f64> {
    let v = match convention {
        SigmaConvention::FinalDay => path.final_variance(),
        SigmaConvention::PathMean => path.mean_variance(),
    }
    .ok_or_else(|| Error::InsufficientData("empty variance path".into()))?;
    annualize_variance_with(v, days_per_year)
}
