//! Rank operator, constituent lists and renormalized sub-market weights.
//!
//! Ranks are 0-based here: position 0 of a permutation holds the name index
//! of the largest capitalization. Ties on exactly equal caps go to the lower
//! name index first.

use crate::error::{Error, Result};
use crate::market_data::MarketDay;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Rank-to-name permutation of a capitalization vector.
///
/// `result[r]` is the name index holding rank `r`. Caps are sorted
/// non-increasingly with exact float equality deciding ties.
pub fn rank_names(caps: &[f64]) -> Result<Vec<usize>> {
    if let Some((i, c)) = caps.iter().enumerate().find(|(_, c)| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::Domain(format!(
            "capitalization of name {i} is {c}, expected a positive finite value"
        )));
    }
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| by_rank(caps, a, b));
    Ok(order)
}

fn by_rank(caps: &[f64], a: usize, b: usize) -> Ordering {
    caps[b]
        .partial_cmp(&caps[a])
        .expect("caps validated finite")
        .then(a.cmp(&b))
}

/// The names making up the sub-market at one rebalance, in rank order, with
/// the capitalizations they had at `as_of`.
///
/// Freshly ranked lists have non-increasing caps. A list carried forward to
/// the next day (see [`old_list_weights`]) keeps its name order even when
/// the caps have since crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstituentList {
    pub names: Vec<usize>,
    pub caps: Vec<f64>,
    pub as_of: NaiveDate,
}

impl ConstituentList {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn cap_sum(&self) -> f64 {
        self.caps.iter().sum()
    }

    /// True when both lists hold the same set of names, in any order.
    pub fn same_members(&self, other: &ConstituentList) -> bool {
        if self.names.len() != other.names.len() {
            return false;
        }
        let mut a = self.names.clone();
        let mut b = other.names.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

/// Weights of a top-k sub-market, renormalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMarketWeights {
    pub weights: Vec<f64>,
    /// Total universe cap over the sub-market cap; at least 1.
    pub multiplier: f64,
    pub list: ConstituentList,
}

impl SubMarketWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Top-k sub-market weights of a capitalization vector.
///
/// `k == caps.len()` is accepted and gives a closed universe with
/// multiplier 1.
pub fn top_k_weights(caps: &[f64], k: usize, as_of: NaiveDate) -> Result<SubMarketWeights> {
    let d = caps.len();
    if k < 2 || k > d {
        return Err(Error::Domain(format!(
            "list size {k} outside 2..={d} for a universe of {d} names"
        )));
    }
    let order = rank_names(caps)?;
    let names: Vec<usize> = order[..k].to_vec();
    let member_caps: Vec<f64> = names.iter().map(|&i| caps[i]).collect();
    let top: f64 = member_caps.iter().sum();
    let total: f64 = order.iter().map(|&i| caps[i]).sum();
    Ok(SubMarketWeights {
        weights: member_caps.iter().map(|c| c / top).collect(),
        multiplier: total / top,
        list: ConstituentList {
            names,
            caps: member_caps,
            as_of,
        },
    })
}

/// Weights of the previous list carried to `day`: each member's prior cap
/// grown by its return on `day`, renormalized over the old list.
///
/// The returned list keeps the old name order and carries the grown caps,
/// so the weights need not be monotone. The multiplier is measured against
/// the universe cap reported on `day`.
pub fn old_list_weights(prev_list: &ConstituentList, day: &MarketDay) -> Result<SubMarketWeights> {
    let grown = grown_caps(prev_list, day)?;
    let old_sum: f64 = grown.iter().sum();
    let universe: f64 = day.caps.iter().sum();
    Ok(SubMarketWeights {
        weights: grown.iter().map(|g| g / old_sum).collect(),
        multiplier: universe / old_sum,
        list: ConstituentList {
            names: prev_list.names.clone(),
            caps: grown,
            as_of: day.date,
        },
    })
}

/// `S(t_{l-1}) * (1 + r(t_l))` for every member of `prev_list`, in list order.
pub(crate) fn grown_caps(prev_list: &ConstituentList, day: &MarketDay) -> Result<Vec<f64>> {
    prev_list
        .names
        .iter()
        .zip(&prev_list.caps)
        .map(|(&name, &cap)| {
            day.returns
                .get(name)
                .map(|r| cap * (1.0 + r))
                .ok_or_else(|| Error::Delisted {
                    name: format!("#{name}"),
                    date: day.date,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2001, 2, 3).unwrap()
    }

    fn day(caps: Vec<f64>, returns: Vec<f64>) -> MarketDay {
        MarketDay {
            date: date(),
            caps,
            returns,
        }
    }

    #[test]
    fn ranks_by_descending_cap() {
        // 1-based (2, 3, 1)
        assert_eq!(rank_names(&[0.2, 0.5, 0.3]).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn exact_ties_go_to_lower_name_index() {
        assert_eq!(rank_names(&[0.4, 0.4, 0.2]).unwrap(), vec![0, 1, 2]);
        assert_eq!(rank_names(&[0.2, 0.4, 0.4]).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn rejects_non_positive_caps() {
        assert!(matches!(rank_names(&[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(rank_names(&[1.0, -2.0]), Err(Error::Domain(_))));
        assert!(matches!(rank_names(&[1.0, f64::NAN]), Err(Error::Domain(_))));
    }

    #[test]
    fn multiplier_from_universe_share() {
        let w = top_k_weights(&[0.3, 0.5, 0.2], 2, date()).unwrap();
        assert!((w.multiplier - 1.25).abs() < 1e-15);
        assert!((w.weights[0] - 0.625).abs() < 1e-15);
        assert!((w.weights[1] - 0.375).abs() < 1e-15);
        assert_eq!(w.list.names, vec![1, 0]);
    }

    #[test]
    fn closed_universe_has_unit_multiplier() {
        let w = top_k_weights(&[0.3, 0.5, 0.2], 3, date()).unwrap();
        assert_eq!(w.multiplier, 1.0);
        assert_eq!(w.weights, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(top_k_weights(&[1.0, 2.0, 3.0], 1, date()).is_err());
        assert!(top_k_weights(&[1.0, 2.0, 3.0], 4, date()).is_err());
    }

    #[test]
    fn old_list_weights_hand_example() {
        let prev = top_k_weights(&[60.0, 40.0], 2, date()).unwrap().list;
        let w = old_list_weights(&prev, &day(vec![66.0, 38.0], vec![0.1, -0.05])).unwrap();
        // 66/104 and 38/104 to 50 digits
        assert!((w.weights[0] - 0.634_615_384_615_384_6).abs() < 1e-15);
        assert!((w.weights[1] - 0.365_384_615_384_615_4).abs() < 1e-15);
    }

    #[test]
    fn old_list_weights_missing_name() {
        let prev = ConstituentList {
            names: vec![0, 5],
            caps: vec![2.0, 1.0],
            as_of: date(),
        };
        let err = old_list_weights(&prev, &day(vec![1.0, 1.0], vec![0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Delisted { ref name, .. } if name == "#5"));
    }

    #[test]
    fn set_comparison_ignores_order() {
        let a = ConstituentList { names: vec![3, 1, 2], caps: vec![3.0, 2.0, 1.0], as_of: date() };
        let b = ConstituentList { names: vec![1, 2, 3], caps: vec![3.0, 2.0, 1.0], as_of: date() };
        let c = ConstituentList { names: vec![1, 2, 4], caps: vec![3.0, 2.0, 1.0], as_of: date() };
        assert!(a.same_members(&b));
        assert!(!a.same_members(&c));
    }

    fn caps_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        // small integer grid so exact ties actually occur
        prop::collection::vec((1u32..6).prop_map(|v| v as f64 * 0.25), 2..=max_len)
    }

    proptest! {
        #[test]
        fn rank_names_is_a_sorted_bijection(caps in caps_strategy(8)) {
            let order = rank_names(&caps).unwrap();
            let mut seen = order.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..caps.len()).collect::<Vec<_>>());
            // pairwise oracle: every earlier-ranked name beats every later one
            for a in 0..order.len() {
                for b in a + 1..order.len() {
                    let (i, j) = (order[a], order[b]);
                    prop_assert!(caps[i] > caps[j] || (caps[i] == caps[j] && i < j));
                }
            }
        }

        #[test]
        fn top_k_weights_consistency(
            caps in prop::collection::vec(0.01f64..100.0, 3..20),
            k_frac in 0.0f64..1.0,
        ) {
            let d = caps.len();
            let k = 2 + ((d - 2) as f64 * k_frac) as usize;
            let w = top_k_weights(&caps, k, date()).unwrap();
            let s: f64 = w.weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let total: f64 = caps.iter().sum();
            let share: f64 = w.list.names.iter().map(|&i| caps[i] / total).sum();
            prop_assert!((1.0 / w.multiplier - share).abs() < 1e-12);
            prop_assert!(w.weights.windows(2).all(|p| p[0] >= p[1]));
            prop_assert!(w.weights.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn zero_returns_reproduce_prior_weights(caps in prop::collection::vec(0.01f64..100.0, 3..20)) {
            let k = caps.len() - 1;
            let prior = top_k_weights(&caps, k, date()).unwrap();
            let today = day(caps.clone(), vec![0.0; caps.len()]);
            let hat = old_list_weights(&prior.list, &today).unwrap();
            for (a, b) in hat.weights.iter().zip(&prior.weights) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn scale_invariance(
            caps in prop::collection::vec(0.01f64..100.0, 3..12),
            returns in prop::collection::vec(-0.5f64..0.5, 12),
            scale in 1e-3f64..1e3,
        ) {
            let d = caps.len();
            let k = d - 1;
            let scaled: Vec<f64> = caps.iter().map(|c| c * scale).collect();
            prop_assert_eq!(rank_names(&caps).unwrap(), rank_names(&scaled).unwrap());
            let a = top_k_weights(&caps, k, date()).unwrap();
            let b = top_k_weights(&scaled, k, date()).unwrap();
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-14);
            }
            let r = returns[..d].to_vec();
            let next: Vec<f64> = caps.iter().zip(&r).map(|(c, r)| c * (1.0 + r)).collect();
            let next_scaled: Vec<f64> = next.iter().map(|c| c * scale).collect();
            let ha = old_list_weights(&a.list, &day(next, r.clone())).unwrap();
            let hb = old_list_weights(&b.list, &day(next_scaled, r)).unwrap();
            for (x, y) in ha.weights.iter().zip(&hb.weights) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn old_list_weights_sum_to_one(
            caps in prop::collection::vec(0.01f64..100.0, 3..12),
            returns in prop::collection::vec(-0.9f64..2.0, 12),
        ) {
            let d = caps.len();
            let prior = top_k_weights(&caps, 2, date()).unwrap();
            let r = returns[..d].to_vec();
            let next: Vec<f64> = caps.iter().zip(&r).map(|(c, r)| c * (1.0 + r)).collect();
            let hat = old_list_weights(&prior.list, &day(next, r)).unwrap();
            prop_assert!((hat.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
