//! Correlated geometric Brownian motion Monte Carlo.
//!
//! Each asset follows `dS/S = μ dt + σ dW` with constant annual `μ, σ` and
//! correlated Brownian drivers `dW = L dB` where `L Lᵀ = R`. Paths are
//! stepped daily (`Δt = 1 / annualization_days`) in log space.
//!
//! Path `p` draws from its own ChaCha8 stream (`stream = p`) keyed by the
//! master seed, so results do not depend on how paths are scheduled across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volmodels::TRADING_DAYS_PER_YEAR;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Vec<Vec<f64>>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[Vec<f64>] {
        &self.lower
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = (0..=i.min(j))
                    .map(|k| self.lower[i][k] * self.lower[j][k])
                    .sum();
            }
        }
        out
    }

    /// Writes `L ε` into `out`.
    #[inline]
    pub fn apply(&self, eps: &[f64], out: &mut [f64]) {
        for (i, row) in self.lower.iter().enumerate() {
            out[i] = row[..=i].iter().zip(eps).map(|(l, e)| l * e).sum();
        }
    }
}

fn check_correlation_shape(m: &[Vec<f64>]) -> Result<usize> {
    let n = m.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("empty correlation matrix".into()));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "correlation row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if (row[i] - 1.0).abs() > SYMMETRY_TOLERANCE {
            return Err(Error::Validation(format!(
                "correlation diagonal entry {i} is {}, expected 1",
                row[i]
            )));
        }
        for j in 0..i {
            if !row[j].is_finite() || (row[j] - m[j][i]).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::Validation(format!(
                    "correlation matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(n)
}

fn factor(m: &[Vec<f64>], zero_pivot_tolerance: Option<f64>) -> Result<CholeskyFactor> {
    let n = check_correlation_shape(m)?;
    let mut lower = vec![vec![0.0; n]; n];
    for j in 0..n {
        let pivot = m[j][j] - (0..j).map(|k| lower[j][k] * lower[j][k]).sum::<f64>();
        let diag = if pivot > zero_pivot_tolerance.unwrap_or(0.0) {
            pivot.sqrt()
        } else if zero_pivot_tolerance.is_some_and(|tol| pivot.abs() <= tol) {
            0.0
        } else {
            return Err(Error::NotPositiveDefinite {
                minor: j + 1,
                pivot,
            });
        };
        lower[j][j] = diag;
        for i in (j + 1)..n {
            let s = m[i][j] - (0..j).map(|k| lower[i][k] * lower[j][k]).sum::<f64>();
            lower[i][j] = if diag > 0.0 {
                s / diag
            } else if s.abs() <= zero_pivot_tolerance.unwrap_or(0.0) {
                0.0
            } else {
                return Err(Error::NotPositiveDefinite {
                    minor: j + 1,
                    pivot,
                });
            };
        }
    }
    Ok(CholeskyFactor { lower })
}

/// Cholesky factor of a positive-definite correlation matrix. Fails with the
/// order of the first leading minor whose pivot is not positive.
pub fn cholesky(correlation: &[Vec<f64>]) -> Result<CholeskyFactor> {
    factor(correlation, None)
}

/// Like [`cholesky`] but accepts positive semidefinite input where a pivot
/// vanishes to within `1e-12`, e.g. perfectly correlated assets. The
/// corresponding diagonal entry of `L` is zero.
pub fn cholesky_semidefinite(correlation: &[Vec<f64>]) -> Result<CholeskyFactor> {
    factor(correlation, Some(1e-12))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub horizon_days: u32,
    pub initial_portfolio_value: f64,
    pub weights: Vec<f64>,
    /// Annualized drift per asset.
    pub drifts: Vec<f64>,
    /// Annualized volatility per asset.
    pub vols: Vec<f64>,
    pub annualization_days: u32,
    pub seed: u64,
}

impl SimulationConfig {
    /// Defaults: 100,000 paths over 252 days on a 100,000 portfolio.
    pub fn new(weights: Vec<f64>, drifts: Vec<f64>, vols: Vec<f64>, seed: u64) -> Self {
        Self {
            n_paths: 100_000,
            horizon_days: 252,
            initial_portfolio_value: 100_000.0,
            weights,
            drifts,
            vols,
            annualization_days: TRADING_DAYS_PER_YEAR,
            seed,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("no assets".into()));
        }
        if self.drifts.len() != n || self.vols.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} weights, {} drifts, {} vols",
                n,
                self.drifts.len(),
                self.vols.len()
            )));
        }
        validate_weights(&self.weights)?;
        if let Some(v) = self.vols.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parameter(format!(
                "volatility must be >= 0, got {v}"
            )));
        }
        if let Some(m) = self.drifts.iter().find(|m| !m.is_finite()) {
            return Err(Error::Parameter(format!("drift must be finite, got {m}")));
        }
        if self.n_paths == 0 || self.horizon_days == 0 || self.annualization_days == 0 {
            return Err(Error::Parameter(
                "n_paths, horizon_days and annualization_days must be >= 1".into(),
            ));
        }
        if !(self.initial_portfolio_value.is_finite() && self.initial_portfolio_value > 0.0) {
            return Err(Error::Parameter(format!(
                "initial portfolio value must be positive, got {}",
                self.initial_portfolio_value
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Parameter(format!("weights must be >= 0, got {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Independent standard normal draws for one path, correlated through `L`.
pub struct PathStream {
    rng: ChaCha8Rng,
    eps: Vec<f64>,
}

impl PathStream {
    pub fn new(seed: u64, path: u64, n_assets: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self {
            rng,
            eps: vec![0.0; n_assets],
        }
    }

    /// Next vector `z = L ε` for one day.
    #[inline]
    pub fn next_correlated(&mut self, chol: &CholeskyFactor, out: &mut [f64]) {
        for e in self.eps.iter_mut() {
            *e = StandardNormal.sample(&mut self.rng);
        }
        chol.apply(&self.eps, out);
    }
}

/// Per-path, per-asset excess growth `S_T / S_0 - 1`, row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSample {
    n_assets: usize,
    excess: Vec<f64>,
}

impl GrowthSample {
    pub fn n_paths(&self) -> usize {
        self.excess.len() / self.n_assets.max(1)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    /// `S_T / S_0 - 1` for every asset on path `p`.
    pub fn path(&self, p: usize) -> &[f64] {
        &self.excess[p * self.n_assets..(p + 1) * self.n_assets]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.excess.chunks_exact(self.n_assets)
    }

    /// Portfolio return `Σ w_i (S_T,i / S_0,i - 1)` on every path.
    pub fn portfolio_returns(&self, weights: &[f64]) -> Vec<f64> {
        self.paths()
            .map(|x| x.iter().zip(weights).map(|(x, w)| w * x).sum())
            .collect()
    }
}

/// Simulates the per-asset growth on every path. Weights in `config` are
/// not used.
pub fn simulate_growth(config: &SimulationConfig, chol: &CholeskyFactor) -> Result<GrowthSample> {
    config.validate()?;
    let n = config.n_assets();
    if chol.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky factor is {}x{} but config has {n} assets",
            chol.dim(),
            chol.dim()
        )));
    }

    let dt = 1.0 / f64::from(config.annualization_days);
    let drift_step: Vec<f64> = config
        .drifts
        .iter()
        .zip(&config.vols)
        .map(|(mu, s)| (mu - 0.5 * s * s) * dt)
        .collect();
    let vol_step: Vec<f64> = config.vols.iter().map(|s| s * dt.sqrt()).collect();

    let mut excess = vec![0.0; config.n_paths * n];
    excess.par_chunks_mut(n).enumerate().for_each(|(p, out)| {
        let mut stream = PathStream::new(config.seed, p as u64, n);
        let mut z = vec![0.0; n];
        let mut log_growth = vec![0.0; n];
        for _ in 0..config.horizon_days {
            stream.next_correlated(chol, &mut z);
            for i in 0..n {
                log_growth[i] += drift_step[i] + vol_step[i] * z[i];
            }
        }
        for i in 0..n {
            out[i] = log_growth[i].exp_m1();
        }
    });

    Ok(GrowthSample {
        n_assets: n,
        excess,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDistribution {
    pub terminal_values: Vec<f64>,
    pub config: SimulationConfig,
}

impl TerminalDistribution {
    /// `V_T = V_0 (1 + Σ w_i (S_T,i / S_0,i - 1))` using `config.weights`.
    pub fn from_growth(sample: &GrowthSample, config: &SimulationConfig) -> Result<Self> {
        if sample.n_assets() != config.n_assets() {
            return Err(Error::DimensionMismatch(format!(
                "growth sample has {} assets, config has {}",
                sample.n_assets(),
                config.n_assets()
            )));
        }
        validate_weights(&config.weights)?;
        let v0 = config.initial_portfolio_value;
        let terminal_values = sample
            .portfolio_returns(&config.weights)
            .into_iter()
            .map(|r| v0 * (1.0 + r))
            .collect();
        Ok(Self {
            terminal_values,
            config: config.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.terminal_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal_values.is_empty()
    }
}

pub fn simulate_terminal_distribution(
    config: &SimulationConfig,
    chol: &CholeskyFactor,
) -> Result<TerminalDistribution> {
    let sample = simulate_growth(config, chol)?;
    TerminalDistribution::from_growth(&sample, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_factors_to_identity() {
        let id = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(cholesky(&id).unwrap().lower(), id.as_slice());
    }

    #[test]
    fn two_by_two_closed_form() {
        let l = cholesky(&[vec![1.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let expected = [[1.0, 0.0], [0.6, 0.8]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((l.lower()[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn indefinite_matrix_names_the_minor() {
        let m = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        match cholesky(&m).unwrap_err() {
            Error::NotPositiveDefinite { minor, .. } => assert_eq!(minor, 3),
            e => panic!("unexpected {e}"),
        }
        let perfect = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            cholesky(&perfect),
            Err(Error::NotPositiveDefinite { minor: 2, .. })
        ));
        let l = cholesky_semidefinite(&perfect).unwrap();
        assert_eq!(l.lower(), &[vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn rejects_malformed_correlation() {
        assert!(cholesky(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(cholesky(&[vec![2.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(cholesky(&[vec![1.0, 0.0]]).is_err());
    }

    fn random_correlation(seed: u64, n: usize) -> Vec<Vec<f64>> {
        // Sample correlation of random data with a shared factor.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = 50;
        let mut cols = vec![vec![0.0; obs]; n];
        for t in 0..obs {
            let common: f64 = StandardNormal.sample(&mut rng);
            for col in cols.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                col[t] = 0.7 * common + e;
            }
        }
        let series: Vec<_> = cols
            .into_iter()
            .enumerate()
            .map(|(i, c)| crate::ingest::ReturnSeries::from_values(format!("A{i}"), c).unwrap())
            .collect();
        crate::ingest::align_and_stats(&series).unwrap().correlation
    }

    #[test]
    fn reconstruction_of_random_correlation() {
        for seed in 0..20 {
            let r = random_correlation(seed, 3);
            let rebuilt = cholesky(&r).unwrap().reconstruct();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((rebuilt[i][j] - r[i][j]).abs() <= 1e-10);
                }
            }
        }
    }

    fn small_config(n_paths: usize, vols: Vec<f64>, drifts: Vec<f64>) -> SimulationConfig {
        let n = vols.len();
        SimulationConfig {
            n_paths,
            ..SimulationConfig::new(vec![1.0 / n as f64; n], drifts, vols, 7)
        }
    }

    #[test]
    fn zero_vol_zero_drift_is_degenerate() {
        let cfg = SimulationConfig {
            weights: vec![0.33, 0.33, 0.34],
            ..small_config(500, vec![0.0; 3], vec![0.0; 3])
        };
        let chol = cholesky(&random_correlation(1, 3)).unwrap();
        let dist = simulate_terminal_distribution(&cfg, &chol).unwrap();
        assert_eq!(dist.len(), 500);
        assert!(dist.terminal_values.iter().all(|v| *v == 100_000.0));
    }

    #[test]
    fn perfect_correlation_is_preserved() {
        let cfg = small_config(20_000, vec![0.4, 0.4], vec![0.1, 0.1]);
        let chol = cholesky_semidefinite(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let g = simulate_growth(&cfg, &chol).unwrap();
        let a: Vec<f64> = g.paths().map(|x| x[0].ln_1p()).collect();
        let b: Vec<f64> = g.paths().map(|x| x[1].ln_1p()).collect();
        let rho = pearson(&a, &b);
        assert!((rho - 1.0).abs() < 1e-6, "{rho}");
    }

    pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = small_config(10, vec![0.2, 0.3], vec![0.0, 0.0]);
        let chol = cholesky(&[vec![1.0]]).unwrap();
        assert!(matches!(
            simulate_terminal_distribution(&cfg, &chol),
            Err(Error::DimensionMismatch(_))
        ));
        let bad = SimulationConfig {
            drifts: vec![0.0],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let cfg = SimulationConfig {
            weights: vec![0.7, 0.7],
            ..small_config(10, vec![0.2, 0.3], vec![0.0, 0.0])
        };
        assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        let cfg = SimulationConfig {
            weights: vec![1.5, -0.5],
            ..cfg
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_determinism_across_thread_counts() {
        let cfg = small_config(3_000, vec![0.5, 0.8, 0.3], vec![0.1, -0.2, 0.0]);
        let chol = cholesky(&random_correlation(3, 3)).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_terminal_distribution(&cfg, &chol).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.terminal_values, b.terminal_values);
        let other = SimulationConfig {
            seed: 8,
            ..cfg.clone()
        };
        assert_ne!(
            a.terminal_values,
            simulate_terminal_distribution(&other, &chol)
                .unwrap()
                .terminal_values
        );
    }

    #[test]
    fn zero_drift_is_a_martingale() {
        let cfg = SimulationConfig {
            horizon_days: 63,
            ..small_config(40_000, vec![0.6, 1.0], vec![0.0, 0.0])
        };
        let chol = cholesky(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let g = simulate_growth(&cfg, &chol).unwrap();
        for i in 0..2 {
            let xs: Vec<f64> = g.paths().map(|x| 1.0 + x[i]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let se = sd / n.sqrt();
            assert!(
                (mean - 1.0).abs() < 3.0 * se,
                "asset {i}: mean {mean} se {se}"
            );
        }
    }

    fn spread(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        q(0.95) - q(0.05)
    }

    #[test]
    fn more_volatility_widens_the_distribution() {
        let chol = cholesky(&[vec![1.0, 0.2], vec![0.2, 1.0]]).unwrap();
        let low = small_config(20_000, vec![0.3, 0.5], vec![0.05, 0.05]);
        let high = SimulationConfig {
            vols: vec![0.45, 0.7],
            ..low.clone()
        };
        let a = simulate_terminal_distribution(&low, &chol).unwrap();
        let b = simulate_terminal_distribution(&high, &chol).unwrap();
        assert!(spread(&b.terminal_values) >= spread(&a.terminal_values));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn terminal_values_are_positive(
            vols in prop::collection::vec(0.0f64..3.0, 2),
            drifts in prop::collection::vec(-1.0f64..1.0, 2),
            rho in -0.95f64..0.95,
            w in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let cfg = SimulationConfig {
                n_paths: 200,
                horizon_days: 30,
                weights: vec![w, 1.0 - w],
                ..SimulationConfig::new(vec![0.5, 0.5], drifts, vols, seed)
            };
            let chol = cholesky(&[vec![1.0, rho], vec![rho, 1.0]]).unwrap();
            let dist = simulate_terminal_distribution(&cfg, &chol).unwrap();
            prop_assert_eq!(dist.len(), 200);
            prop_assert!(dist.terminal_values.iter().all(|v| *v > 0.0));
        }
    }
}
