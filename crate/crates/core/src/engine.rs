//! Daily rebalance loop for functionally generated strategies on the top-k
//! sub-market.
//!
//! Wealth is always obtained from share accounting; the generating function
//! only decides the target weights. Within a step the order is: rank the
//! day's caps into the new list, carry the old list forward by returns,
//! value the old holdings, accrue the finite-variation term and leakage,
//! then rebalance into the new list.

use crate::error::{Error, Result};
use crate::genfn::{GenFnEval, GenFnSpec};
use crate::leakage::{leakage_increment, LeakageLedger};
use crate::market_data::{MarketDay, MarketPanel};
use crate::ranking::{grown_caps, old_list_weights, top_k_weights, ConstituentList, SubMarketWeights};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "mult")]
    Multiplicative,
    #[serde(rename = "add")]
    Additive,
}

impl Mode {
    pub fn short_name(self) -> &'static str {
        match self {
            Mode::Multiplicative => "mult",
            Mode::Additive => "add",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mult" | "multiplicative" => Ok(Mode::Multiplicative),
            "add" | "additive" => Ok(Mode::Additive),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected mult or add)"
            ))),
        }
    }
}

/// Holdings and accumulators right after a rebalance.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    pub date: NaiveDate,
    pub mode: Mode,
    /// Sub-market weights of the current list, carrying the list itself.
    pub mu: SubMarketWeights,
    /// Generating function evaluated at `mu`.
    pub eval: GenFnEval,
    /// Target weights the holdings were set to.
    pub weights: Vec<f64>,
    /// Share holdings aligned with `mu.list`.
    pub shares: Vec<f64>,
    /// Wealth relative to the top-k sub-market.
    pub wealth: f64,
    pub gamma: f64,
    /// Running sum of `dGamma / G` at the start of each step; the
    /// multiplicative master formula reconstructs
    /// `log V = log G + gamma_over_g`.
    pub gamma_over_g: f64,
    pub leakage: LeakageLedger,
}

impl StrategyState {
    pub fn list(&self) -> &ConstituentList {
        &self.mu.list
    }

    /// `sum(shares * mu)`; equals `wealth` up to rounding.
    pub fn implied_wealth(&self) -> f64 {
        self.shares.iter().zip(&self.mu.weights).map(|(p, m)| p * m).sum()
    }
}

/// Per-day output of [`step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub date: NaiveDate,
    /// Value of the carried holdings relative to the new top-k list.
    pub wealth_before_rebalance: f64,
    /// Same holdings relative to the old list's current caps.
    pub wealth_old_list: f64,
    pub target_weights: Vec<f64>,
    pub gamma_increment: f64,
    pub leakage_increment: f64,
    pub list_changed: bool,
    /// Half L1 distance between drifted holdings and new targets, taken over
    /// the union of old and new names.
    pub turnover: f64,
}

/// Result of valuing the previous holdings on a new day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthUpdate {
    /// `sum_j shares_j * S_j(t-1) * (1 + r_j(t))` over the old list.
    pub numerator: f64,
    /// Numerator over the new list's cap sum.
    pub wealth: f64,
    /// Numerator over the old list's cap sum at `t`.
    pub wealth_old_list: f64,
}

/// Values holdings on `prev_list` at `day`, relative to `new_list`.
pub fn wealth_update(
    shares: &[f64],
    prev_list: &ConstituentList,
    day: &MarketDay,
    new_list: &ConstituentList,
) -> Result<WealthUpdate> {
    if shares.len() != prev_list.len() {
        return Err(Error::Alignment(format!(
            "{} shares for a list of {} names",
            shares.len(),
            prev_list.len()
        )));
    }
    let grown = grown_caps(prev_list, day)?;
    let numerator: f64 = shares.iter().zip(&grown).map(|(p, g)| p * g).sum();
    let cap_sum = |list: &ConstituentList| -> Result<f64> {
        list.names
            .iter()
            .map(|&n| {
                day.caps.get(n).copied().ok_or_else(|| Error::Delisted {
                    name: format!("#{n}"),
                    date: day.date,
                })
            })
            .sum()
    };
    Ok(WealthUpdate {
        numerator,
        wealth: numerator / cap_sum(new_list)?,
        wealth_old_list: numerator / cap_sum(prev_list)?,
    })
}

fn weights_from_denominator(eval: &GenFnEval, mu: &SubMarketWeights, denom: f64) -> Vec<f64> {
    let tilt: f64 = eval.grad.iter().zip(&mu.weights).map(|(g, m)| g * m).sum();
    mu.weights
        .iter()
        .zip(&eval.grad)
        .map(|(m, g)| m / denom * (g + denom - tilt))
        .collect()
}

/// Weights of the multiplicatively generated strategy at `mu`.
pub fn target_weights_multiplicative(eval: &GenFnEval, mu: &SubMarketWeights) -> Result<Vec<f64>> {
    if !(eval.value > 0.0) {
        return Err(Error::Generation { value: eval.value });
    }
    Ok(weights_from_denominator(eval, mu, eval.value))
}

/// Weights of the additively generated strategy at `mu` with current
/// wealth `wealth`.
pub fn target_weights_additive(
    eval: &GenFnEval,
    mu: &SubMarketWeights,
    wealth: f64,
) -> Result<Vec<f64>> {
    if !(wealth > 0.0) {
        return Err(Error::NonPositiveWealth {
            date: mu.list.as_of,
            wealth,
        });
    }
    Ok(weights_from_denominator(eval, mu, wealth))
}

pub fn target_weights(
    mode: Mode,
    eval: &GenFnEval,
    mu: &SubMarketWeights,
    wealth: f64,
) -> Result<Vec<f64>> {
    match mode {
        Mode::Multiplicative => target_weights_multiplicative(eval, mu),
        Mode::Additive => target_weights_additive(eval, mu, wealth),
    }
}

/// Share counts realizing weights `pi` with total value `numerator` at `caps`.
pub fn weights_to_shares(pi: &[f64], numerator: f64, caps: &[f64]) -> Vec<f64> {
    pi.iter().zip(caps).map(|(w, c)| w * numerator / c).collect()
}

/// Finite-variation increment over one step on the frozen old list:
/// `G(mu_prev) - G(mu_hat) + sum grad_prev * (mu_hat - mu_prev)`.
pub fn gamma_increment(
    eval_prev: &GenFnEval,
    eval_hat: &GenFnEval,
    mu_prev: &SubMarketWeights,
    mu_hat: &SubMarketWeights,
) -> Result<f64> {
    if mu_prev.list.names != mu_hat.list.names {
        return Err(Error::Alignment(format!(
            "increment between lists of {} and {} on {} and {}",
            mu_prev.list.len(),
            mu_hat.list.len(),
            mu_prev.list.as_of,
            mu_hat.list.as_of
        )));
    }
    let drift: f64 = eval_prev
        .grad
        .iter()
        .zip(mu_hat.weights.iter().zip(&mu_prev.weights))
        .map(|(g, (h, p))| g * (h - p))
        .sum();
    Ok(eval_prev.value - eval_hat.value + drift)
}

fn turnover(
    drifted: &[f64],
    old: &ConstituentList,
    target: &[f64],
    new: &ConstituentList,
) -> f64 {
    let mut diff: BTreeMap<usize, f64> = BTreeMap::new();
    for (&n, &w) in old.names.iter().zip(drifted) {
        *diff.entry(n).or_default() += w;
    }
    for (&n, &w) in new.names.iter().zip(target) {
        *diff.entry(n).or_default() -= w;
    }
    0.5 * diff.values().map(|v| v.abs()).sum::<f64>()
}

/// Opening state on `day`: wealth 1 and `spec` calibrated so that the
/// generating function is 1 at the opening weights.
///
/// Returns the calibrated spec, which every later [`step`] must use.
pub fn initial_state(
    day: &MarketDay,
    k: usize,
    spec: GenFnSpec,
    mode: Mode,
) -> Result<(StrategyState, GenFnSpec)> {
    let mu = top_k_weights(&day.caps, k, day.date)?;
    let spec = spec.calibrate(&mu.weights)?;
    let eval = spec.evaluate(&mu.weights)?;
    let wealth = eval.value;
    let weights = target_weights(mode, &eval, &mu, wealth)?;
    let shares = weights_to_shares(&weights, wealth * mu.list.cap_sum(), &mu.list.caps);
    let mut leakage = LeakageLedger::new(mode);
    leakage.apply(day.date, false, 0.0)?;
    Ok((
        StrategyState {
            date: day.date,
            mode,
            mu,
            eval,
            weights,
            shares,
            wealth,
            gamma: 0.0,
            gamma_over_g: 0.0,
            leakage,
        },
        spec,
    ))
}

/// Advances `prev` by one trading day.
pub fn step(
    prev: StrategyState,
    day: &MarketDay,
    k: usize,
    spec: &GenFnSpec,
) -> Result<(StrategyState, RebalanceRecord)> {
    let date = day.date;
    step_inner(prev, day, k, spec).map_err(|e| e.context(format!("on {date}")))
}

fn step_inner(
    prev: StrategyState,
    day: &MarketDay,
    k: usize,
    spec: &GenFnSpec,
) -> Result<(StrategyState, RebalanceRecord)> {
    let StrategyState {
        mode,
        mu: mu_prev,
        eval: eval_prev,
        shares,
        gamma,
        gamma_over_g,
        mut leakage,
        ..
    } = prev;

    let mu_new = top_k_weights(&day.caps, k, day.date)?;
    let mu_hat = old_list_weights(&mu_prev.list, day)?;
    let update = wealth_update(&shares, &mu_prev.list, day, &mu_new.list)?;

    let eval_hat = spec.evaluate(&mu_hat.weights)?;
    let d_gamma = gamma_increment(&eval_prev, &eval_hat, &mu_prev, &mu_hat)?;

    let eval_new = spec.evaluate(&mu_new.weights)?;
    let list_changed = !mu_prev.list.same_members(&mu_new.list);
    let d_leak = if list_changed {
        leakage_increment(mode, &eval_hat, &eval_new)?
    } else {
        0.0
    };
    leakage.apply(day.date, list_changed, d_leak)?;

    let weights = target_weights(mode, &eval_new, &mu_new, update.wealth)?;
    let new_shares = weights_to_shares(&weights, update.numerator, &mu_new.list.caps);

    let drifted: Vec<f64> = shares
        .iter()
        .zip(&mu_hat.list.caps)
        .map(|(p, g)| p * g / update.numerator)
        .collect();
    let record = RebalanceRecord {
        date: day.date,
        wealth_before_rebalance: update.wealth,
        wealth_old_list: update.wealth_old_list,
        turnover: turnover(&drifted, &mu_prev.list, &weights, &mu_new.list),
        target_weights: weights.clone(),
        gamma_increment: d_gamma,
        leakage_increment: leakage.entries().last().map_or(0.0, |e| e.delta),
        list_changed,
    };
    let state = StrategyState {
        date: day.date,
        mode,
        mu: mu_new,
        eval: eval_new,
        weights,
        shares: new_shares,
        wealth: update.wealth,
        gamma: gamma + d_gamma,
        gamma_over_g: gamma_over_g + d_gamma / eval_prev.value,
        leakage,
    };
    Ok((state, record))
}

/// One row of a backtest's daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub date: NaiveDate,
    pub wealth: f64,
    pub log_wealth: f64,
    pub g: f64,
    pub gamma: f64,
    pub leakage: f64,
    pub list_changed: bool,
    pub turnover: f64,
    pub gamma_over_g: f64,
    pub wealth_old_list: f64,
}

impl SeriesRow {
    fn from_state(state: &StrategyState, record: Option<&RebalanceRecord>) -> Self {
        SeriesRow {
            date: state.date,
            wealth: state.wealth,
            log_wealth: state.wealth.ln(),
            g: state.eval.value,
            gamma: state.gamma,
            leakage: state.leakage.cumulative(),
            list_changed: record.is_some_and(|r| r.list_changed),
            turnover: record.map_or(0.0, |r| r.turnover),
            gamma_over_g: state.gamma_over_g,
            wealth_old_list: record.map_or(state.wealth, |r| r.wealth_old_list),
        }
    }
}

/// Full single-threaded backtest over every day of `panel`.
///
/// An empty panel gives an empty series.
pub fn run_series(
    panel: &MarketPanel,
    k: usize,
    spec: GenFnSpec,
    mode: Mode,
) -> Result<(Vec<SeriesRow>, Option<StrategyState>)> {
    let days = panel.days();
    let Some(first) = days.first() else {
        return Ok((Vec::new(), None));
    };
    let (mut state, spec) = initial_state(first, k, spec, mode)?;
    let mut rows = Vec::with_capacity(days.len());
    rows.push(SeriesRow::from_state(&state, None));
    for day in &days[1..] {
        let (next, record) = step(state, day, k, &spec)?;
        rows.push(SeriesRow::from_state(&next, Some(&record)));
        state = next;
    }
    Ok((rows, Some(state)))
}
