//! Writes the synthetic sample data under `data/`:
//! three correlated crypto-like assets, 730 daily closes each, with a
//! volatility regime that roughly doubles over the last 120 days.
//!
//! cargo run --example make_fixtures -- crates/core/data

use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use volvar::simulate::cholesky;

const DAYS: usize = 730;

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir).expect("create output dir");

    let assets = [
        ("SOL", 20.0, 0.045, 0.0012),
        ("ETH", 1600.0, 0.032, 0.0006),
        ("BTC", 30000.0, 0.026, 0.0005),
    ];
    let corr = vec![
        vec![1.0, 0.75, 0.65],
        vec![0.75, 1.0, 0.8],
        vec![0.65, 0.8, 1.0],
    ];
    let chol = cholesky(&corr).expect("positive definite");

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    let mut prices: Vec<f64> = assets.iter().map(|a| a.1).collect();
    let mut files = vec![String::from("date,close\n"); 3];
    let mut eps = [0.0; 3];
    let mut z = [0.0; 3];

    for d in 0..DAYS {
        let date = start + Duration::days(d as i64);
        for (i, f) in files.iter_mut().enumerate() {
            writeln!(f, "{date},{:.6}", prices[i]).unwrap();
        }
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        chol.apply(&eps, &mut z);
        let regime = if d + 120 >= DAYS { 2.1 } else { 1.0 };
        for (i, a) in assets.iter().enumerate() {
            let vol = a.2 * regime;
            prices[i] *= (a.3 - 0.5 * vol * vol + vol * z[i]).exp();
        }
    }

    for (a, f) in assets.iter().zip(files) {
        let path = dir.join(format!("{}.csv", a.0.to_lowercase()));
        std::fs::write(&path, f).expect("write csv");
        println!("{}", path.display());
    }
}
