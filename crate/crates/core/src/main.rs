use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use volvar::cli::pipeline::{to_json, with_threads, write_atomic};
use volvar::cli::{
    run_backtest, run_fetch, run_fit, run_report, run_simulate, ModelKind, RunConfig, StageError,
};
use volvar::error::Error;
use volvar::ingest::{CsvDirectorySource, ExchangeSource, PriceSource};
use volvar::risk::DEFAULT_VAR_LEVEL;

#[derive(Parser)]
#[command(
    name = "volvar",
    version,
    about = "Conditional-volatility Monte Carlo VaR for crypto portfolios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model comparison table: VaR quantile, loss probability, allocation.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config `output.dir`, else `out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rolling one-day VaR violation rates.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_VAR_LEVEL)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GARCH(1,1) maximum-likelihood fit per asset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dumps simulated terminal values for one model as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Checks that every configured asset can be fetched.
    Fetch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Source::Csv)]
        source: Source,
        /// Directory holding `<asset>.csv` (default: the config's directory).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Csv,
    Exchange,
}

fn load(path: &PathBuf) -> Result<RunConfig, StageError> {
    RunConfig::load(path).map_err(|e| StageError::new("config", e))
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir())
        .unwrap_or_else(|| cfg.resolve("out".as_ref()))
}

fn run(cmd: Command) -> Result<(), StageError> {
    match cmd {
        Command::Report {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = with_threads(threads.or(cfg.threads), || run_report(&cfg))??;
            let path = write_atomic(&out_dir(&cfg, out), "report.json", &to_json(&report))?;
            print!("{}", report.table());
            println!("report: {}", path.display());
        }
        Command::Backtest {
            config,
            window,
            level,
            out,
        } => {
            let cfg = load(&config)?;
            let report = run_backtest(&cfg, window, level)?;
            let path = write_atomic(&out_dir(&cfg, out), "backtest.json", &to_json(&report))?;
            print!("{}", report.table());
            println!("report: {}", path.display());
        }
        Command::Fit { config, out } => {
            let cfg = load(&config)?;
            let report = run_fit(&cfg)?;
            let path = write_atomic(&out_dir(&cfg, out), "fit.json", &to_json(&report))?;
            print!("{}", report.table());
            println!("report: {}", path.display());
        }
        Command::Simulate {
            config,
            model,
            seed,
            out,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let kind = ModelKind::parse(&model).map_err(|e| StageError::new("config", e))?;
            let dump = with_threads(threads.or(cfg.threads), || run_simulate(&cfg, kind))??;
            let name = format!("terminal_{}.csv", kind.label());
            let path = write_atomic(&out_dir(&cfg, out), &name, dump.to_csv().as_bytes())?;
            println!(
                "{}: {} paths, weights {:?}, seed {} -> {}",
                kind,
                dump.terminal_values.len(),
                dump.weights,
                dump.seed,
                path.display()
            );
        }
        Command::Fetch {
            config,
            source,
            dir,
        } => {
            let cfg = load(&config)?;
            let src: Box<dyn PriceSource> = match source {
                Source::Csv => Box::new(CsvDirectorySource {
                    dir: dir.unwrap_or_else(|| cfg.base_dir.clone()),
                }),
                Source::Exchange => Box::new(ExchangeSource::default()),
            };
            for r in run_fetch(&cfg, src.as_ref())? {
                println!(
                    "{:<10} {:>6} prices  {} .. {}",
                    r.asset, r.n_prices, r.first, r.last
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!(
                "{}",
                StageError::new("args", Error::Config(first.to_string())).to_json_line()
            );
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
