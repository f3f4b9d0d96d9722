//! Modified (s,S) heuristic: keep only the top pair `(s_m, S_m)` of each
//! period and order `min(S - x, B)` whenever `x < s`.

use serde::{Deserialize, Serialize};

use crate::policy::{check_cop, extract_thresholds, PolicyError};
use crate::scalar::Scalar;
use crate::sdp::{Capacity, ValueTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsPair {
    pub s: i64,
    pub big_s: i64,
}

/// Order quantity of a modified (s,S) rule.
pub fn apply_modified_ss(x: i64, s: i64, big_s: i64, capacity: Capacity) -> i64 {
    if x >= s {
        0
    } else {
        capacity.clamp(big_s - x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifiedSsPolicy {
    pub capacity: Capacity,
    /// `None` for periods in which no state orders.
    pub periods: Vec<Option<SsPair>>,
    /// Periods whose tables violate the continuous order property; their
    /// pair comes from the topmost ordering interval.
    pub flagged: Vec<usize>,
}

impl ModifiedSsPolicy {
    /// `s` is the highest ordering state, as in the threshold policy, so
    /// the strict rule is applied with reorder point `s + 1`.
    pub fn order(&self, period: usize, x: i64) -> i64 {
        match self.periods[period - 1] {
            Some(p) => apply_modified_ss(x, p.s + 1, p.big_s, self.capacity),
            None => 0,
        }
    }
}

/// Takes `(s_m, S_m)` of every period from solved tables.
pub fn modified_ss_from_tables<T: Scalar>(
    tables: &ValueTables<T>,
) -> Result<ModifiedSsPolicy, PolicyError> {
    let mut periods = Vec::with_capacity(tables.horizon());
    let mut flagged = Vec::new();
    for t in 1..=tables.horizon() {
        match extract_thresholds(tables, t) {
            Ok(p) => periods.push(p.top_pair().map(|(s, big_s)| SsPair { s, big_s })),
            Err(PolicyError::CopViolated { .. }) => {
                flagged.push(t);
                let top = check_cop(tables, t).ordering_set.last().map(|iv| iv.1);
                periods.push(top.map(|s| SsPair {
                    s,
                    big_s: s + tables.qstar(t, s),
                }));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ModifiedSsPolicy {
        capacity: tables.capacity,
        periods,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rule_examples() {
        let b = Capacity::Finite(65);
        assert_eq!(apply_modified_ss(13, 14, 70, b), 57);
        assert_eq!(apply_modified_ss(14, 14, 70, b), 0);
        assert_eq!(apply_modified_ss(-60, 14, 70, b), 65);
        assert_eq!(apply_modified_ss(-60, 14, 70, Capacity::Infinite), 130);
    }

    proptest! {
        #[test]
        fn order_stays_in_bounds(x in -500i64..500, s in -200i64..200, gap in 1i64..300, b in 1i64..200) {
            let big_s = s + gap;
            let q = apply_modified_ss(x, s, big_s, Capacity::Finite(b));
            prop_assert!((0..=b).contains(&q));
            if q > 0 {
                prop_assert!(x + q <= big_s);
            }
        }
    }
}
