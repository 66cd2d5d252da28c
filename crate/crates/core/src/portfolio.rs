//! Exhaustive long-only allocation search on a simplex grid.
//!
//! Per-asset growth is simulated once; every candidate weight vector is
//! scored on that same sample, so comparisons between candidates carry no
//! independent Monte Carlo noise.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CrossStats;
use crate::risk::quantile;
use crate::simulate::{cholesky, simulate_growth, GrowthSample, SimulationConfig};

pub const MAX_GRID_ASSETS: usize = 4;
/// Relative margin a candidate must clear to displace an earlier grid point.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean terminal return over its standard deviation (zero risk-free rate).
    Sharpe,
    MeanTerminal,
    /// Mean terminal value less `penalty · (initial - VaR quantile)₊`.
    VarAdjusted,
}

impl Objective {
    pub fn label(&self) -> &'static str {
        match self {
            Objective::Sharpe => "sharpe",
            Objective::MeanTerminal => "mean_terminal",
            Objective::VarAdjusted => "var_adjusted",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpe" => Ok(Objective::Sharpe),
            "mean_terminal" => Ok(Objective::MeanTerminal),
            "var_adjusted" => Ok(Objective::VarAdjusted),
            other => Err(Error::Parameter(format!(
                "unknown objective `{other}` (expected sharpe, mean_terminal or var_adjusted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub step: f64,
    pub var_penalty: f64,
    pub var_level: f64,
}

impl Default for GridSearch {
    fn default() -> Self {
        Self {
            step: 0.01,
            var_penalty: 1.0,
            var_level: 0.05,
        }
    }
}

impl GridSearch {
    fn divisions(&self) -> Result<usize> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Parameter(format!(
                "grid step must be positive, got {}",
                self.step
            )));
        }
        let n = (1.0 / self.step).round();
        if n < 1.0 || self.step > 1.0 {
            return Err(Error::Parameter(format!(
                "grid step {} leaves a single grid point per axis",
                self.step
            )));
        }
        if (n * self.step - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "grid step {} does not divide 1",
                self.step
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    pub weights: Vec<f64>,
    pub objective_value: f64,
    pub objective_kind: Objective,
    pub evaluations: usize,
}

/// All integer vectors `k` with `Σ k = total`, in ascending lexicographic
/// order.
fn compositions(n_assets: usize, total: usize) -> Vec<Vec<usize>> {
    fn fill(prefix: &mut Vec<usize>, slots: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            fill(prefix, slots - 1, remaining - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(&mut Vec::with_capacity(n_assets), n_assets, total, &mut out);
    out
}

pub fn simplex_grid(n_assets: usize, search: &GridSearch) -> Result<Vec<Vec<f64>>> {
    let divisions = search.divisions()?;
    if n_assets == 0 {
        return Err(Error::DimensionMismatch("no assets".into()));
    }
    if n_assets > MAX_GRID_ASSETS {
        return Err(Error::Parameter(format!(
            "grid search supports at most {MAX_GRID_ASSETS} assets, got {n_assets}"
        )));
    }
    Ok(compositions(n_assets, divisions)
        .into_iter()
        .map(|k| k.into_iter().map(|k| k as f64 / divisions as f64).collect())
        .collect())
}

/// Scores `weights` per unit of initial value (scale-free).
fn score(
    sample: &GrowthSample,
    weights: &[f64],
    objective: Objective,
    search: &GridSearch,
) -> Result<f64> {
    let r = sample.portfolio_returns(weights);
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    Ok(match objective {
        Objective::MeanTerminal => 1.0 + mean,
        Objective::Sharpe => {
            let var = if r.len() > 1 {
                r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            if var > 0.0 {
                mean / var.sqrt()
            } else {
                0.0
            }
        }
        Objective::VarAdjusted => {
            let q = quantile(&r, search.var_level)?;
            1.0 + mean - search.var_penalty * (-q).max(0.0)
        }
    })
}

/// Grid search over a precomputed growth sample.
pub fn optimize_on_sample(
    sample: &GrowthSample,
    initial_value: f64,
    objective: Objective,
    search: &GridSearch,
) -> Result<AllocationResult> {
    let grid = simplex_grid(sample.n_assets(), search)?;
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|w| score(sample, w, objective, search))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = scores[best];
        if *s > b + TIE_TOLERANCE * b.abs().max(1.0) {
            best = i;
        }
    }
    let scale = match objective {
        Objective::Sharpe => 1.0,
        Objective::MeanTerminal | Objective::VarAdjusted => initial_value,
    };
    Ok(AllocationResult {
        weights: grid[best].clone(),
        objective_value: scores[best] * scale,
        objective_kind: objective,
        evaluations: grid.len(),
    })
}

/// Picks the grid allocation that maximizes `objective` under a common
/// random-number simulation.
///
/// Drifts are the annualized mean log-returns from `stats`, correlation is
/// `stats.correlation`, `vols` are annual volatilities. Path count, horizon,
/// initial value, seed and annualization come from `sim_template`; its
/// weights, drifts and vols are ignored.
pub fn optimize_weights(
    stats: &CrossStats,
    vols: &[f64],
    sim_template: &SimulationConfig,
    objective: &str,
    search: &GridSearch,
) -> Result<AllocationResult> {
    let objective: Objective = objective.parse()?;
    let n = stats.n_assets();
    if vols.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} vols for {n} assets",
            vols.len()
        )));
    }
    let days = f64::from(sim_template.annualization_days);
    let config = SimulationConfig {
        weights: vec![1.0 / n as f64; n],
        drifts: stats.means.iter().map(|m| m * days).collect(),
        vols: vols.to_vec(),
        ..sim_template.clone()
    };
    let chol = cholesky(&stats.correlation)?;
    let sample = simulate_growth(&config, &chol)?;
    optimize_on_sample(&sample, config.initial_portfolio_value, objective, search)
}
