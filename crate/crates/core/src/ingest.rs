//! Daily price ingestion, log-returns and cross-asset sample statistics.
//!
//! CSV input is UTF-8 with a header row. The `date` (`YYYY-MM-DD`) and
//! `close` columns are required; any other column is ignored. One file per
//! asset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Daily closing prices for one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    asset_id: String,
    timestamps: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    /// Builds a series from rows that are already in date order.
    ///
    /// Rejects non-positive or non-finite closes, duplicate or decreasing
    /// dates and series shorter than two observations.
    pub fn new(
        asset_id: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        closes: Vec<f64>,
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if timestamps.len() != closes.len() {
            return Err(Error::Validation(format!(
                "{asset_id}: {} dates but {} closes",
                timestamps.len(),
                closes.len()
            )));
        }
        if closes.len() < 2 {
            return Err(Error::Validation(format!(
                "{asset_id}: need at least 2 prices, got {}",
                closes.len()
            )));
        }
        if let Some((i, c)) = closes
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c > 0.0))
        {
            return Err(Error::Validation(format!(
                "{asset_id}: close on {} must be positive and finite, got {c}",
                timestamps[i]
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] == w[0] {
                return Err(Error::Validation(format!(
                    "{asset_id}: duplicate date {}",
                    w[0]
                )));
            }
            if w[1] < w[0] {
                return Err(Error::Validation(format!(
                    "{asset_id}: dates not increasing at {}",
                    w[1]
                )));
            }
        }
        Ok(Self {
            asset_id,
            timestamps,
            closes,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

/// Daily log-returns of one asset. `timestamps[i]` is the date of the close
/// that ends the return interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    asset_id: String,
    timestamps: Vec<NaiveDate>,
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(
        asset_id: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        returns: Vec<f64>,
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if timestamps.len() != returns.len() {
            return Err(Error::Validation(format!(
                "{asset_id}: {} dates but {} returns",
                timestamps.len(),
                returns.len()
            )));
        }
        if let Some(r) = returns.iter().find(|r| !r.is_finite()) {
            return Err(Error::Validation(format!(
                "{asset_id}: non-finite return {r}"
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "{asset_id}: return dates must be strictly increasing"
            )));
        }
        Ok(Self {
            asset_id,
            timestamps,
            returns,
        })
    }

    /// Wraps raw values with consecutive calendar dates starting 2000-01-02.
    /// Intended for synthetic data.
    pub fn from_values(asset_id: impl Into<String>, returns: Vec<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 2).expect("valid date");
        let timestamps = start.iter_days().take(returns.len()).collect();
        Self::new(asset_id, timestamps, returns)
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.returns)
    }

    /// Unbiased sample variance; `None` for fewer than two observations.
    pub fn sample_variance(&self) -> Option<f64> {
        sample_variance(&self.returns)
    }

    fn restrict_to(&self, dates: &BTreeSet<NaiveDate>) -> ReturnSeries {
        let (timestamps, returns) = self
            .timestamps
            .iter()
            .zip(&self.returns)
            .filter(|(d, _)| dates.contains(d))
            .map(|(d, r)| (*d, *r))
            .unzip();
        ReturnSeries {
            asset_id: self.asset_id.clone(),
            timestamps,
            returns,
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Means, sample variances and Pearson correlation over the common dates of
/// a set of return series.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossStats {
    pub asset_ids: Vec<String>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Row-major n×n, symmetric with an exact unit diagonal.
    pub correlation: Vec<Vec<f64>>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Number of aligned observations per series.
    pub n_obs: usize,
}

impl CrossStats {
    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }
}

/// Reads `path` as a daily close CSV. Rows may appear in any order; the
/// result is sorted by date.
pub fn load_prices(path: impl AsRef<Path>, asset_id: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_prices(file, path, asset_id)
}

fn read_prices<R: std::io::Read>(reader: R, path: &Path, asset_id: &str) -> Result<PriceSeries> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        row,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| parse_err(1, format!("missing required column `{name}`")))
    };
    let date_col = column("date")?;
    let close_col = column("close")?;

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let date_raw = record
            .get(date_col)
            .ok_or_else(|| parse_err(line, "missing date field".into()))?;
        let close_raw = record
            .get(close_col)
            .ok_or_else(|| parse_err(line, "missing close field".into()))?;
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date `{date_raw}`: {e}")))?;
        let close: f64 = close_raw
            .parse()
            .map_err(|e| parse_err(line, format!("bad close `{close_raw}`: {e}")))?;
        rows.push((date, close));
    }

    rows.sort_by_key(|(d, _)| *d);
    let (timestamps, closes) = rows.into_iter().unzip();
    PriceSeries::new(asset_id, timestamps, closes)
}

/// `returns[i] = ln(closes[i+1] / closes[i])`.
pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: need at least 2 prices for a return",
            prices.asset_id
        )));
    }
    let returns = prices
        .closes
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    ReturnSeries::new(
        prices.asset_id.clone(),
        prices.timestamps[1..].to_vec(),
        returns,
    )
}

/// Restricts every series to the dates present in all of them.
pub fn align(series: &[ReturnSeries]) -> Result<Vec<ReturnSeries>> {
    let first = series
        .first()
        .ok_or_else(|| Error::InsufficientData("no return series given".into()))?;
    let mut common: BTreeSet<NaiveDate> = first.timestamps.iter().copied().collect();
    for s in &series[1..] {
        let dates: BTreeSet<NaiveDate> = s.timestamps.iter().copied().collect();
        common = common.intersection(&dates).copied().collect();
    }
    if common.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "series share {} common date(s); need at least 2",
            common.len()
        )));
    }
    Ok(series.iter().map(|s| s.restrict_to(&common)).collect())
}

/// Aligns the series on their common dates, then computes per-series mean,
/// unbiased variance and the Pearson correlation matrix.
pub fn align_and_stats(series: &[ReturnSeries]) -> Result<CrossStats> {
    let aligned = align(series)?;
    stats_of_aligned(&aligned)
}

pub(crate) fn stats_of_aligned(aligned: &[ReturnSeries]) -> Result<CrossStats> {
    let n = aligned.len();
    let means: Vec<f64> = aligned.iter().map(|s| s.mean()).collect();
    let variances: Vec<f64> = aligned
        .iter()
        .map(|s| s.sample_variance().unwrap_or(0.0))
        .collect();
    // A lone series needs no correlation, so a flat one is allowed.
    if let Some(s) = aligned
        .iter()
        .zip(&variances)
        .find(|(_, v)| n > 1 && **v <= 0.0)
        .map(|(s, _)| s)
    {
        return Err(Error::Validation(format!(
            "{}: zero variance over the aligned window; correlation undefined",
            s.asset_id
        )));
    }

    let centred: Vec<Vec<f64>> = aligned
        .iter()
        .zip(&means)
        .map(|(s, m)| s.returns.iter().map(|r| r - m).collect())
        .collect();
    let mut correlation = vec![vec![0.0; n]; n];
    for i in 0..n {
        correlation[i][i] = 1.0;
        for j in 0..i {
            let cross: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let ss_i: f64 = centred[i].iter().map(|a| a * a).sum();
            let ss_j: f64 = centred[j].iter().map(|b| b * b).sum();
            let rho = (cross / (ss_i.sqrt() * ss_j.sqrt())).clamp(-1.0, 1.0);
            correlation[i][j] = rho;
            correlation[j][i] = rho;
        }
    }

    let first = &aligned[0];
    Ok(CrossStats {
        asset_ids: aligned.iter().map(|s| s.asset_id.clone()).collect(),
        means,
        variances,
        correlation,
        start: first.timestamps[0],
        end: *first.timestamps.last().expect("non-empty"),
        n_obs: first.len(),
    })
}

/// A source of daily price history.
pub trait PriceSource {
    fn fetch(&self, asset_id: &str) -> Result<PriceSeries>;
}

/// Reads `<dir>/<asset_id>.csv`.
#[derive(Debug, Clone)]
pub struct CsvDirectorySource {
    pub dir: PathBuf,
}

impl PriceSource for CsvDirectorySource {
    fn fetch(&self, asset_id: &str) -> Result<PriceSeries> {
        load_prices(self.dir.join(format!("{asset_id}.csv")), asset_id)
    }
}

/// Placeholder for a live exchange client. Always fails.
#[derive(Debug, Clone, Default)]
pub struct ExchangeSource {
    pub endpoint: Option<String>,
}

impl PriceSource for ExchangeSource {
    fn fetch(&self, asset_id: &str) -> Result<PriceSeries> {
        Err(Error::Unsupported(format!(
            "live exchange source is not available (asset {asset_id}); use CSV files"
        )))
    }
}
