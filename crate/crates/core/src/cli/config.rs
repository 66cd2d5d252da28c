//! Run configuration (TOML).
//!
//! ```toml
//! seed = 42
//! models = ["gbm-static", "ewma-igarch", "igarch-mr", "asym-igarch"]
//!
//! [[assets]]
//! id = "SOL"
//! path = "data/sol.csv"      # relative to this file
//! ```
//!
//! Every other section is optional; see `configs/example.toml` for the full
//! schema with defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::{GridSearch, Objective};
use crate::simulate::SimulationConfig;
use crate::volmodels::{VolatilityModel, TRADING_DAYS_PER_YEAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Constant sample volatility.
    GbmStatic,
    EwmaIgarch,
    IgarchMr,
    AsymIgarch,
    #[serde(rename = "garch11-mle")]
    Garch11Mle,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::GbmStatic => "gbm-static",
            ModelKind::EwmaIgarch => "ewma-igarch",
            ModelKind::IgarchMr => "igarch-mr",
            ModelKind::AsymIgarch => "asym-igarch",
            ModelKind::Garch11Mle => "garch11-mle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            ModelKind::GbmStatic,
            ModelKind::EwmaIgarch,
            ModelKind::IgarchMr,
            ModelKind::AsymIgarch,
            ModelKind::Garch11Mle,
        ]
        .into_iter()
        .find(|k| k.label() == s)
        .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub ewma_lambda: f64,
    pub mr_lambda: f64,
    pub mr_kappa: f64,
    /// Long-run daily variance; the asset's sample variance when absent.
    pub mr_sigma_bar_sq: Option<f64>,
    pub asym_lambda: f64,
    pub asym_gamma: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            ewma_lambda: 0.94,
            mr_lambda: 0.85,
            mr_kappa: 0.02,
            mr_sigma_bar_sq: None,
            asym_lambda: 0.97,
            asym_gamma: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationBlock {
    pub n_paths: usize,
    pub horizon_days: u32,
    pub initial_value: f64,
    pub var_level: f64,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            horizon_days: 252,
            initial_value: 100_000.0,
            var_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioBlock {
    pub objective: Objective,
    pub grid_step: f64,
    pub var_penalty: f64,
}

impl Default for PortfolioBlock {
    fn default() -> Self {
        Self {
            objective: Objective::Sharpe,
            grid_step: 0.01,
            var_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// Directory for report files; relative to the config file.
    pub dir: Option<PathBuf>,
}

fn default_days() -> u32 {
    TRADING_DAYS_PER_YEAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_days")]
    pub annualization_days: u32,
    /// Worker threads for simulation and search; all cores when absent or 0.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    pub models: Vec<ModelKind>,
    pub assets: Vec<AssetSpec>,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub portfolio: PortfolioBlock,
    #[serde(default, skip_serializing)]
    pub output: OutputBlock,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    /// Parses and validates the file, including that every asset file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::from_toml_str(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.dir.as_deref().map(|d| self.resolve(d))
    }

    pub fn grid_search(&self) -> GridSearch {
        GridSearch {
            step: self.portfolio.grid_step,
            var_penalty: self.portfolio.var_penalty,
            var_level: self.simulation.var_level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.assets.is_empty() {
            return Err(Error::Config("no assets configured".into()));
        }
        for (i, a) in self.assets.iter().enumerate() {
            if self.assets[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::Config(format!("duplicate asset id `{}`", a.id)));
            }
            let p = self.resolve(&a.path);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "asset `{}`: file {} does not exist",
                    a.id,
                    p.display()
                )));
            }
        }

        let p = &self.params;
        VolatilityModel::EwmaIgarch {
            lambda: p.ewma_lambda,
        }
        .validate()?;
        VolatilityModel::IgarchMeanRevert {
            lambda: p.mr_lambda,
            kappa: p.mr_kappa,
            sigma_bar_sq: p.mr_sigma_bar_sq.unwrap_or(0.0),
        }
        .validate()?;
        VolatilityModel::AsymIgarch {
            lambda: p.asym_lambda,
            gamma: p.asym_gamma,
        }
        .validate()?;

        // Scalar simulation settings only; per-asset vectors come later.
        self.simulation_template(vec![1.0], vec![0.0], vec![0.0])
            .validate()?;
        let level = self.simulation.var_level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!(
                "var_level must lie in (0, 1), got {level}"
            )));
        }
        if !(self.portfolio.var_penalty.is_finite() && self.portfolio.var_penalty >= 0.0) {
            return Err(Error::Config("var_penalty must be >= 0".into()));
        }
        crate::portfolio::simplex_grid(self.assets.len(), &self.grid_search())?;
        Ok(())
    }

    pub fn simulation_template(
        &self,
        weights: Vec<f64>,
        drifts: Vec<f64>,
        vols: Vec<f64>,
    ) -> SimulationConfig {
        SimulationConfig {
            n_paths: self.simulation.n_paths,
            horizon_days: self.simulation.horizon_days,
            initial_portfolio_value: self.simulation.initial_value,
            weights,
            drifts,
            vols,
            annualization_days: self.annualization_days,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        models = ["ewma-igarch", "garch11-mle"]
        [[assets]]
        id = "A"
        path = "a.csv"
    "#;

    #[test]
    fn defaults_follow_model_configurations() {
        let cfg = RunConfig::from_toml_str(MINIMAL, "/tmp").unwrap();
        assert_eq!(cfg.params.ewma_lambda, 0.94);
        assert_eq!((cfg.params.mr_lambda, cfg.params.mr_kappa), (0.85, 0.02));
        assert_eq!(
            (cfg.params.asym_lambda, cfg.params.asym_gamma),
            (0.97, 0.25)
        );
        assert_eq!(cfg.annualization_days, 252);
        assert_eq!(cfg.simulation.n_paths, 100_000);
        assert_eq!(cfg.simulation.initial_value, 100_000.0);
        assert_eq!(cfg.portfolio.objective, Objective::Sharpe);
        assert_eq!(
            cfg.models,
            vec![ModelKind::EwmaIgarch, ModelKind::Garch11Mle]
        );
    }

    #[test]
    fn unknown_keys_and_models_are_rejected() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nsedd = 8");
        assert!(RunConfig::from_toml_str(&bad, "").is_err());
        let bad = MINIMAL.replace("garch11-mle", "egarch");
        assert!(RunConfig::from_toml_str(&bad, "").is_err());
        assert!(ModelKind::parse("egarch").is_err());
        assert_eq!(ModelKind::parse("igarch-mr").unwrap(), ModelKind::IgarchMr);
    }

    #[test]
    fn validation_catches_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "date,close\n").unwrap();
        let cfg = RunConfig::from_toml_str(MINIMAL, dir.path()).unwrap();
        cfg.validate().unwrap();

        let empty = RunConfig {
            models: vec![],
            ..cfg.clone()
        };
        assert_eq!(
            empty.validate().unwrap_err().to_string(),
            "config error: no models selected"
        );

        let missing = RunConfig {
            assets: vec![AssetSpec {
                id: "B".into(),
                path: "nope.csv".into(),
            }],
            ..cfg.clone()
        };
        assert!(missing
            .validate()
            .unwrap_err()
            .to_string()
            .contains("nope.csv"));

        let mut bad = cfg.clone();
        bad.params.mr_kappa = 0.9;
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));

        let mut bad = cfg.clone();
        bad.params.ewma_lambda = 1.0;
        assert!(bad.validate().is_err());

        let mut bad = cfg;
        bad.portfolio.grid_step = 0.0;
        assert!(bad.validate().is_err());
    }
}
