pub mod cli;
pub mod error;
pub mod ingest;
pub mod mle;
mod nelder_mead;
pub mod portfolio;
pub mod risk;
pub mod simulate;
pub mod volmodels;
