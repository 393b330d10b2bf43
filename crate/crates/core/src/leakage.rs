//! Leakage from renewing the constituent list.
//!
//! On a day the list changes, the previous list carried forward by returns
//! (`mu_hat`) and the freshly ranked list (`mu_tilde`) give two values of
//! the generating function. Their log-difference (multiplicative) or
//! difference (additive) estimates the wealth lost to the renewal.

use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::genfn::GenFnEval;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

fn same_normalization(hat: &GenFnEval, new: &GenFnEval) -> Result<()> {
    if hat.normalization != new.normalization {
        return Err(Error::Domain(format!(
            "leakage compares values under normalizations {} and {}",
            hat.normalization, new.normalization
        )));
    }
    Ok(())
}

/// `log G(mu_hat) - log G(mu_tilde)`.
pub fn leakage_increment_multiplicative(eval_hat: &GenFnEval, eval_new: &GenFnEval) -> Result<f64> {
    same_normalization(eval_hat, eval_new)?;
    for v in [eval_hat.value, eval_new.value] {
        if !(v > 0.0) {
            return Err(Error::Generation { value: v });
        }
    }
    Ok(eval_hat.value.ln() - eval_new.value.ln())
}

/// `G(mu_hat) - G(mu_tilde)`.
pub fn leakage_increment_additive(eval_hat: &GenFnEval, eval_new: &GenFnEval) -> Result<f64> {
    same_normalization(eval_hat, eval_new)?;
    Ok(eval_hat.value - eval_new.value)
}

pub fn leakage_increment(mode: Mode, eval_hat: &GenFnEval, eval_new: &GenFnEval) -> Result<f64> {
    match mode {
        Mode::Multiplicative => leakage_increment_multiplicative(eval_hat, eval_new),
        Mode::Additive => leakage_increment_additive(eval_hat, eval_new),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageEntry {
    pub date: NaiveDate,
    pub delta: f64,
    pub list_changed: bool,
}

/// Running leakage of one backtest. Log-wealth units in multiplicative
/// mode, wealth units in additive mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageLedger {
    pub mode: Mode,
    cumulative: f64,
    entries: Vec<LeakageEntry>,
}

impl LeakageLedger {
    pub fn new(mode: Mode) -> Self {
        LeakageLedger {
            mode,
            cumulative: 0.0,
            entries: Vec::new(),
        }
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    pub fn entries(&self) -> &[LeakageEntry] {
        &self.entries
    }

    pub fn change_days(&self) -> usize {
        self.entries.iter().filter(|e| e.list_changed).count()
    }

    /// Appends one day. The increment is dropped unless the list changed.
    pub fn apply(&mut self, date: NaiveDate, list_changed: bool, delta: f64) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if date <= last.date {
                return Err(Error::Sequencing {
                    date,
                    last: last.date,
                });
            }
        }
        let delta = if list_changed { delta } else { 0.0 };
        self.cumulative += delta;
        self.entries.push(LeakageEntry {
            date,
            delta,
            list_changed,
        });
        Ok(())
    }
}
