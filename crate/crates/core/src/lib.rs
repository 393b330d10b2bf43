//! Backtesting of rank-based functionally generated portfolios on the top-k
//! sub-market, with leakage estimation at every constituent renewal.
//!
//! The crate is organized bottom-up:
//!
//! - [`market_data`]: daily cap/return panels (CSV or synthetic),
//! - [`ranking`]: rank permutation and renormalized sub-market weights,
//! - [`genfn`]: entropy and quadratic generating functions,
//! - [`engine`]: the share-accounting rebalance loop,
//! - [`leakage`]: per-renewal leakage increments and their ledger,
//! - [`cli`]: run configuration, k-sweeps and CSV/JSON emission.

pub mod cli;
pub mod engine;
pub mod error;
pub mod exec;
pub mod genfn;
pub mod leakage;
pub mod market_data;
pub mod ranking;

pub use engine::Mode;
pub use error::{Error, Result};
pub use exec::Execution;
pub use genfn::{GenFnKind, GenFnSpec};
