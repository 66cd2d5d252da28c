//! Stage orchestration: ingest → model → portfolio → simulate → risk.
//!
//! Every entry point computes its full result in memory first; files are
//! written only once nothing can fail any more.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;

use super::config::{ModelKind, RunConfig};
use crate::error::Error;
use crate::ingest::{
    align, align_and_stats, load_prices, log_returns, CrossStats, PriceSource, ReturnSeries,
};
use crate::mle::{fit_garch_mle, GarchFitResult};
use crate::portfolio::{optimize_on_sample, AllocationResult};
use crate::risk::{backtest_static_var, backtest_var, BacktestResult, RiskReport};
use crate::simulate::{
    cholesky, simulate_growth, CholeskyFactor, GrowthSample, TerminalDistribution,
};
use crate::volmodels::{
    annualize_variance_with, default_seed_variance, model_sigma_for_simulation, SigmaConvention,
    VolatilityModel,
};

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn new(stage: &'static str, source: Error) -> Self {
        Self { stage, source }
    }

    /// `{"error":{"stage":...,"message":...}}` on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": { "stage": self.stage, "message": self.source.to_string() }
        })
        .to_string()
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

trait Stage<T> {
    fn stage(self, name: &'static str) -> StageResult<T>;
}

impl<T> Stage<T> for crate::error::Result<T> {
    fn stage(self, name: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError::new(name, e))
    }
}

/// Sub-seed for a named stage: FNV-1a of the name mixed into the master seed
/// with SplitMix64.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `f` on a pool with `threads` workers (all cores for `None` or 0).
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> StageResult<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| StageError::new("config", Error::Config(format!("thread pool: {e}"))))?;
    Ok(pool.install(f))
}

struct Inputs {
    aligned: Vec<ReturnSeries>,
    stats: CrossStats,
}

fn ingest(cfg: &RunConfig) -> StageResult<Inputs> {
    let mut series = Vec::with_capacity(cfg.assets.len());
    for a in &cfg.assets {
        let prices = load_prices(cfg.resolve(&a.path), &a.id).stage("ingest")?;
        series.push(log_returns(&prices).stage("ingest")?);
    }
    let aligned = align(&series).stage("ingest")?;
    let stats = align_and_stats(&aligned).stage("ingest")?;
    Ok(Inputs { aligned, stats })
}

/// The recursion behind `kind`, or `None` for the static baseline and the
/// fitted GARCH (whose parameters depend on the data).
fn conditional_model(
    cfg: &RunConfig,
    kind: ModelKind,
    sample_variance: f64,
) -> Option<VolatilityModel> {
    let p = &cfg.params;
    match kind {
        ModelKind::GbmStatic | ModelKind::Garch11Mle => None,
        ModelKind::EwmaIgarch => Some(VolatilityModel::EwmaIgarch {
            lambda: p.ewma_lambda,
        }),
        ModelKind::IgarchMr => Some(VolatilityModel::IgarchMeanRevert {
            lambda: p.mr_lambda,
            kappa: p.mr_kappa,
            sigma_bar_sq: p.mr_sigma_bar_sq.unwrap_or(sample_variance),
        }),
        ModelKind::AsymIgarch => Some(VolatilityModel::AsymIgarch {
            lambda: p.asym_lambda,
            gamma: p.asym_gamma,
        }),
    }
}

struct ModelInputs {
    vols: Vec<f64>,
    convention: &'static str,
    fits: Option<Vec<GarchFitResult>>,
}

fn model_vols(cfg: &RunConfig, kind: ModelKind, inputs: &Inputs) -> StageResult<ModelInputs> {
    let days = cfg.annualization_days;
    let mut vols = Vec::with_capacity(inputs.aligned.len());
    match kind {
        ModelKind::GbmStatic => {
            for v in &inputs.stats.variances {
                vols.push(annualize_variance_with(*v, days).stage("model")?);
            }
            Ok(ModelInputs {
                vols,
                convention: "sample",
                fits: None,
            })
        }
        ModelKind::Garch11Mle => {
            let mut fits = Vec::with_capacity(inputs.aligned.len());
            for r in &inputs.aligned {
                let fit = fit_garch_mle(r).stage("fit")?;
                let path = VolatilityModel::Garch11(fit.params)
                    .variance_path(r, fit.seed_variance)
                    .stage("model")?;
                vols.push(
                    model_sigma_for_simulation(&path, SigmaConvention::FinalDay, days)
                        .stage("model")?,
                );
                fits.push(fit);
            }
            Ok(ModelInputs {
                vols,
                convention: "final-day",
                fits: Some(fits),
            })
        }
        _ => {
            let mut convention = "final-day";
            for (r, v) in inputs.aligned.iter().zip(&inputs.stats.variances) {
                let model = conditional_model(cfg, kind, *v).expect("conditional kind");
                let seed = default_seed_variance(r).stage("model")?;
                let path = model.variance_path(r, seed).stage("model")?;
                let conv = model.sigma_convention();
                convention = match conv {
                    SigmaConvention::FinalDay => "final-day",
                    SigmaConvention::PathMean => "path-mean",
                };
                vols.push(model_sigma_for_simulation(&path, conv, days).stage("model")?);
            }
            Ok(ModelInputs {
                vols,
                convention,
                fits: None,
            })
        }
    }
}

/// Annualized arithmetic drift `μ = 252·(m + v/2)` from the sample mean `m`
/// and variance `v` of daily log-returns. Shared by every model.
fn drifts(cfg: &RunConfig, stats: &CrossStats) -> Vec<f64> {
    let days = f64::from(cfg.annualization_days);
    stats
        .means
        .iter()
        .zip(&stats.variances)
        .map(|(m, v)| days * (m + 0.5 * v))
        .collect()
}

struct Simulated {
    inputs: ModelInputs,
    allocation: AllocationResult,
    sample: GrowthSample,
    sim_seed: u64,
}

fn simulate_model(
    cfg: &RunConfig,
    kind: ModelKind,
    inputs: &Inputs,
    chol: &CholeskyFactor,
) -> StageResult<Simulated> {
    let model = model_vols(cfg, kind, inputs)?;
    let n = inputs.aligned.len();
    let sim_seed = derive_seed(cfg.seed, "simulate");
    let template = crate::simulate::SimulationConfig {
        seed: sim_seed,
        ..cfg.simulation_template(
            vec![1.0 / n as f64; n],
            drifts(cfg, &inputs.stats),
            model.vols.clone(),
        )
    };
    let sample = simulate_growth(&template, chol).stage("simulate")?;
    let allocation = optimize_on_sample(
        &sample,
        cfg.simulation.initial_value,
        cfg.portfolio.objective,
        &cfg.grid_search(),
    )
    .stage("portfolio")?;
    Ok(Simulated {
        inputs: model,
        allocation,
        sample,
        sim_seed,
    })
}

fn simulation_config(
    cfg: &RunConfig,
    inputs: &Inputs,
    sim: &Simulated,
) -> crate::simulate::SimulationConfig {
    crate::simulate::SimulationConfig {
        seed: sim.sim_seed,
        ..cfg.simulation_template(
            sim.allocation.weights.clone(),
            drifts(cfg, &inputs.stats),
            sim.inputs.vols.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataWindow {
    pub assets: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_returns: usize,
    pub daily_means: Vec<f64>,
    pub daily_variances: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
}

impl DataWindow {
    fn new(stats: &CrossStats) -> Self {
        Self {
            assets: stats.asset_ids.clone(),
            start: stats.start,
            end: stats.end,
            n_returns: stats.n_obs,
            daily_means: stats.means.clone(),
            daily_variances: stats.variances.clone(),
            correlation: stats.correlation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub simulation: u64,
}

/// Rounded strings for people; the numeric fields stay exact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplayRow {
    pub var_quantile: String,
    pub var_loss: String,
    pub loss_probability: String,
    pub allocation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub model: String,
    pub sigma_convention: String,
    pub annual_vols: Vec<f64>,
    pub annual_drifts: Vec<f64>,
    pub allocation: AllocationResult,
    pub risk: RiskReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub garch_fits: Option<Vec<GarchFitResult>>,
    pub display: DisplayRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub config: RunConfig,
    pub data: DataWindow,
    pub seeds: Seeds,
    pub rows: Vec<ModelRow>,
}

/// One row per selected model, in config order.
pub fn run_report(cfg: &RunConfig) -> StageResult<ComparisonReport> {
    cfg.validate().stage("config")?;
    let inputs = ingest(cfg)?;
    let chol = cholesky(&inputs.stats.correlation).stage("simulate")?;
    let ids = &inputs.stats.asset_ids;

    let mut rows = Vec::with_capacity(cfg.models.len());
    for &kind in &cfg.models {
        let sim = simulate_model(cfg, kind, &inputs, &chol)?;
        let sim_cfg = simulation_config(cfg, &inputs, &sim);
        let dist = TerminalDistribution::from_growth(&sim.sample, &sim_cfg).stage("risk")?;
        let risk =
            RiskReport::evaluate(kind.label(), &dist, cfg.simulation.var_level).stage("risk")?;
        let display = DisplayRow {
            var_quantile: currency(risk.var_quantile_value),
            var_loss: currency(risk.var_loss),
            loss_probability: percent(risk.loss_probability),
            allocation: allocation_string(ids, &sim.allocation.weights),
        };
        rows.push(ModelRow {
            model: kind.label().to_string(),
            sigma_convention: sim.inputs.convention.to_string(),
            annual_vols: sim.inputs.vols.clone(),
            annual_drifts: sim_cfg.drifts.clone(),
            allocation: sim.allocation,
            risk,
            garch_fits: sim.inputs.fits,
            display,
        });
    }

    Ok(ComparisonReport {
        config: cfg.clone(),
        data: DataWindow::new(&inputs.stats),
        seeds: Seeds {
            master: cfg.seed,
            simulation: derive_seed(cfg.seed, "simulate"),
        },
        rows,
    })
}

impl ComparisonReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<13} {:>16} {:>14} {:>10}  {}",
            "Model", "VaR quantile", "VaR loss", "P(loss)", "Allocation"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<13} {:>16} {:>14} {:>10}  {}",
                r.model,
                r.display.var_quantile,
                r.display.var_loss,
                r.display.loss_probability,
                r.display.allocation
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestRow {
    pub asset: String,
    pub model: String,
    #[serde(flatten)]
    pub result: BacktestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub window: usize,
    pub level: f64,
    pub rows: Vec<BacktestRow>,
}

/// Rolling one-day VaR violation rates per asset and model.
///
/// The fitted GARCH is estimated once on each asset's first `window`
/// returns and held fixed afterwards.
pub fn run_backtest(cfg: &RunConfig, window: usize, level: f64) -> StageResult<BacktestReport> {
    cfg.validate().stage("config")?;
    let inputs = ingest(cfg)?;
    let mut rows = Vec::new();
    for r in &inputs.aligned {
        let sample_var = r.sample_variance().unwrap_or(0.0);
        for &kind in &cfg.models {
            let result = match kind {
                ModelKind::GbmStatic => backtest_static_var(r, window, level),
                ModelKind::Garch11Mle => {
                    let head = r.values().get(..window).ok_or_else(|| {
                        Error::InsufficientData(format!(
                            "{}: {} returns is not more than the backtest window {window}",
                            r.asset_id(),
                            r.len()
                        ))
                    });
                    let fit = head
                        .and_then(|h| ReturnSeries::from_values(r.asset_id(), h.to_vec()))
                        .and_then(|h| fit_garch_mle(&h))
                        .stage("fit")?;
                    backtest_var(r, &VolatilityModel::Garch11(fit.params), window, level)
                }
                _ => {
                    let model = conditional_model(cfg, kind, sample_var).expect("conditional kind");
                    backtest_var(r, &model, window, level)
                }
            }
            .stage("backtest")?;
            rows.push(BacktestRow {
                asset: r.asset_id().to_string(),
                model: kind.label().to_string(),
                result,
            });
        }
    }
    Ok(BacktestReport {
        window,
        level,
        rows,
    })
}

impl BacktestReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<13} {:>9} {:>10} {:>9} {:>9}",
            "Asset", "Model", "Forecasts", "Violations", "Rate", "Expected"
        );
        for r in &self.rows {
            let b = &r.result;
            let _ = writeln!(
                s,
                "{:<10} {:<13} {:>9} {:>10} {:>9} {:>9}",
                r.asset,
                r.model,
                b.n_forecasts,
                b.n_violations,
                percent(b.violation_rate),
                percent(b.expected_rate)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub asset: String,
    #[serde(flatten)]
    pub fit: GarchFitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub rows: Vec<FitRow>,
}

/// GARCH(1,1) maximum-likelihood fit per asset, in config order.
pub fn run_fit(cfg: &RunConfig) -> StageResult<FitReport> {
    cfg.validate().stage("config")?;
    if !cfg.models.contains(&ModelKind::Garch11Mle) {
        return Err(StageError::new(
            "config",
            Error::Config("fit requires `garch11-mle` among the selected models".into()),
        ));
    }
    let inputs = ingest(cfg)?;
    let rows = inputs
        .aligned
        .iter()
        .map(|r| {
            Ok(FitRow {
                asset: r.asset_id().to_string(),
                fit: fit_garch_mle(r).stage("fit")?,
            })
        })
        .collect::<StageResult<_>>()?;
    Ok(FitReport { rows })
}

impl FitReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>8} {:>8} {:>11} {:>14} {:>9}",
            "Asset", "omega", "alpha", "beta", "persistence", "log-lik", "converged"
        );
        for r in &self.rows {
            let f = &r.fit;
            let _ = writeln!(
                s,
                "{:<10} {:>12.4e} {:>8.4} {:>8.4} {:>11.4} {:>14.2} {:>9}",
                r.asset,
                f.params.omega,
                f.params.alpha,
                f.params.beta,
                f.persistence,
                f.log_likelihood,
                f.converged
            );
        }
        s
    }
}

/// Terminal values for one model at its optimal allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDump {
    pub model: ModelKind,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub terminal_values: Vec<f64>,
}

pub fn run_simulate(cfg: &RunConfig, model: ModelKind) -> StageResult<SimulationDump> {
    cfg.validate().stage("config")?;
    let inputs = ingest(cfg)?;
    let chol = cholesky(&inputs.stats.correlation).stage("simulate")?;
    let sim = simulate_model(cfg, model, &inputs, &chol)?;
    let sim_cfg = simulation_config(cfg, &inputs, &sim);
    let dist = TerminalDistribution::from_growth(&sim.sample, &sim_cfg).stage("simulate")?;
    Ok(SimulationDump {
        model,
        weights: sim_cfg.weights,
        seed: sim.sim_seed,
        terminal_values: dist.terminal_values,
    })
}

impl SimulationDump {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.terminal_values.len() * 24);
        s.push_str("path,terminal_value\n");
        for (i, v) in self.terminal_values.iter().enumerate() {
            let _ = writeln!(s, "{i},{v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchRow {
    pub asset: String,
    pub n_prices: usize,
    pub first: NaiveDate,
    pub last: NaiveDate,
}

/// Pulls every configured asset through `source`.
pub fn run_fetch(cfg: &RunConfig, source: &dyn PriceSource) -> StageResult<Vec<FetchRow>> {
    cfg.assets
        .iter()
        .map(|a| {
            let p = source.fetch(&a.id).stage("fetch")?;
            let t = p.timestamps();
            Ok(FetchRow {
                asset: a.id.clone(),
                n_prices: p.len(),
                first: t[0],
                last: t[t.len() - 1],
            })
        })
        .collect()
}

/// Writes `contents` to `dir/name` through a temporary file and rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> StageResult<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir, e))
        .stage("output")?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)
        .map_err(|e| Error::io(&tmp, e))
        .stage("output")?;
    fs::rename(&tmp, &target)
        .map_err(|e| Error::io(&target, e))
        .stage("output")?;
    Ok(target)
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

/// `$126,481`; negative values as `-$1,234`.
pub fn currency(x: f64) -> String {
    let rounded = x.round();
    let digits = format!("{:.0}", rounded.abs());
    let mut grouped = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    if rounded < 0.0 {
        format!("-${grouped}")
    } else {
        format!("${grouped}")
    }
}

pub fn percent(p: f64) -> String {
    format!("{:.2}%", 100.0 * p)
}

fn allocation_string(ids: &[String], weights: &[f64]) -> String {
    ids.iter()
        .zip(weights)
        .map(|(id, w)| format!("{id} {:.0}%", 100.0 * w))
        .collect::<Vec<_>>()
        .join(" / ")
}
