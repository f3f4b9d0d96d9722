//! Structured policies read off solved tables.
//!
//! When every state below some level orders (the continuous order
//! property), the optimal rule of a period is a modified multi-(s,S)
//! policy: thresholds `s_1 < ... < s_m` with order-up-to levels
//! `S_1 < ... < S_m`, ordering `min(S_k - x, B)` for `s_{k-1} < x <= s_k`
//! and nothing above `s_m`.
//!
//! All scans are restricted to the states reported reliable by the solver,
//! so artefacts of the lower grid edge never show up as structure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sdp::{Capacity, ValueTables};

/// Slack allowed on the (K,B)-convexity inequalities.
pub const KB_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("continuous order property violated in period {period}")]
    CopViolated { period: usize, report: CopReport },
    #[error("period {period}: order quantity {found} at state {x} does not fit the threshold structure (expected {expected})")]
    MalformedTable {
        period: usize,
        x: i64,
        expected: i64,
        found: i64,
    },
    #[error("window [{lo}, {hi}] does not fit in {len} values")]
    BadWindow { lo: usize, hi: usize, len: usize },
}

/// Closed interval of inventory levels.
pub type Interval = (i64, i64);

/// A no-order gap lying below an ordering interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopViolation {
    pub no_order: Interval,
    pub order_above: Interval,
}

impl CopViolation {
    /// `(x_noorder, x_order)`: no order at the first, an order at the second.
    pub fn witness(&self) -> (i64, i64) {
        (self.no_order.0, self.order_above.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopReport {
    pub period: usize,
    pub holds: bool,
    /// Maximal intervals of reliable states at which an order is placed.
    pub ordering_set: Vec<Interval>,
    /// Widest gap, populated when the property fails.
    pub violation: Option<CopViolation>,
}

/// Checks whether the ordering states of a period form one interval that
/// starts at the bottom of the reliable grid.
pub fn check_cop<T: Scalar>(tables: &ValueTables<T>, period: usize) -> CopReport {
    let states = tables.reliable_states(period);
    let lowest = *states.start();
    let mut ordering_set: Vec<Interval> = Vec::new();
    let mut open: Option<i64> = None;
    for x in states.clone() {
        let orders = tables.qstar(period, x) > 0;
        match (orders, open) {
            (true, None) => open = Some(x),
            (false, Some(start)) => {
                ordering_set.push((start, x - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        ordering_set.push((start, *states.end()));
    }

    let holds = ordering_set.is_empty() || (ordering_set.len() == 1 && ordering_set[0].0 == lowest);
    let violation = if holds {
        None
    } else {
        let mut gaps = Vec::new();
        if ordering_set[0].0 > lowest {
            gaps.push(CopViolation {
                no_order: (lowest, ordering_set[0].0 - 1),
                order_above: ordering_set[0],
            });
        }
        for w in ordering_set.windows(2) {
            gaps.push(CopViolation {
                no_order: (w[0].1 + 1, w[1].0 - 1),
                order_above: w[1],
            });
        }
        gaps.into_iter()
            .max_by_key(|g| (g.no_order.1 - g.no_order.0, -g.no_order.0))
    };
    CopReport {
        period,
        holds,
        ordering_set,
        violation,
    }
}

/// Thresholds of one period of a modified multi-(s,S) policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodPolicy {
    pub period: usize,
    /// `(s_k, S_k)`, both strictly increasing in `k`. Empty when no state
    /// orders.
    pub pairs: Vec<(i64, i64)>,
}

impl PeriodPolicy {
    /// Highest ordering state.
    pub fn s_m(&self) -> Option<i64> {
        self.pairs.last().map(|p| p.0)
    }

    pub fn top_pair(&self) -> Option<(i64, i64)> {
        self.pairs.last().copied()
    }

    pub fn thresholds(&self) -> usize {
        self.pairs.len()
    }

    /// Order quantity prescribed at `x`.
    pub fn order_quantity(&self, x: i64, capacity: Capacity) -> i64 {
        match self.pairs.iter().find(|&&(s, _)| x <= s) {
            Some(&(_, big_s)) => capacity.clamp(big_s - x),
            None => 0,
        }
    }
}

/// Per-period thresholds; `None` marks a period where the continuous
/// order property fails and the raw table is the policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub capacity_is_finite: bool,
    pub periods: Vec<Option<PeriodPolicy>>,
}

impl ThresholdPolicy {
    pub fn cop_holds(&self) -> bool {
        self.periods.iter().all(Option::is_some)
    }

    pub fn max_thresholds(&self) -> usize {
        self.periods
            .iter()
            .flatten()
            .map(PeriodPolicy::thresholds)
            .max()
            .unwrap_or(0)
    }
}

/// Reads `(s_k, S_k)` off the order quantities of a period.
///
/// Unsaturated states (`0 < Q < B`) order up to a level `x + Q`; each level
/// occupies one run whose top is its threshold. Saturated states between
/// runs carry no level of their own. The result is checked by dispatching
/// every reliable state through it.
pub fn extract_thresholds<T: Scalar>(
    tables: &ValueTables<T>,
    period: usize,
) -> Result<PeriodPolicy, PolicyError> {
    let report = check_cop(tables, period);
    if !report.holds {
        return Err(PolicyError::CopViolated { period, report });
    }
    let Some(&(lowest, s_m)) = report.ordering_set.first() else {
        return Ok(PeriodPolicy {
            period,
            pairs: Vec::new(),
        });
    };
    let cap = tables.capacity;
    let top = s_m + tables.qstar(period, s_m);
    let mut pairs = vec![(s_m, top)];
    let mut level = top;
    for x in (lowest..s_m).rev() {
        let q = tables.qstar(period, x);
        if cap.is_saturated(q) {
            continue;
        }
        let target = x + q;
        if target < level {
            pairs.push((x, target));
            level = target;
        }
    }
    pairs.reverse();

    let policy = PeriodPolicy { period, pairs };
    for x in tables.reliable_states(period) {
        let expected = policy.order_quantity(x, cap);
        let found = tables.qstar(period, x);
        if expected != found {
            return Err(PolicyError::MalformedTable {
                period,
                x,
                expected,
                found,
            });
        }
    }
    Ok(policy)
}

/// Extracts every period, marking periods where the property fails.
pub fn extract_policy<T: Scalar>(tables: &ValueTables<T>) -> Result<ThresholdPolicy, PolicyError> {
    let mut periods = Vec::with_capacity(tables.horizon());
    for t in 1..=tables.horizon() {
        match extract_thresholds(tables, t) {
            Ok(p) => periods.push(Some(p)),
            Err(PolicyError::CopViolated { .. }) => periods.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(ThresholdPolicy {
        capacity_is_finite: !tables.capacity.is_infinite(),
        periods,
    })
}

/// Which inequality a (K,B)-convexity defect breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KbCondition {
    /// `(K + g(x+a) - g(x))/a >= (g(y) - g(y-b))/b`
    First,
    /// `(K + g(x+a) - g(x))/a >= (K + g(y) - g(y-B))/B`
    Second,
}

/// First violating triple found, as window-relative indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbViolation {
    pub condition: KbCondition,
    pub x: usize,
    pub a: usize,
    pub y: usize,
    pub b: usize,
    /// Left side minus right side; negative.
    pub defect: f64,
}

/// Checks both (K,B)-convexity inequalities on `values[lo..=hi]` for all
/// `y <= x`, `0 < a, b <= B` with every point inside the window.
///
/// For each `x` only the smallest left slope matters, and it must dominate
/// the largest right slope over all `y <= x`, so the scan is linear in the
/// window length times `B`.
pub fn verify_kb_convexity<T: Scalar>(
    values: &[T],
    fixed_cost: T,
    capacity: Capacity,
    window: (usize, usize),
) -> Result<Option<KbViolation>, PolicyError> {
    let (lo, hi) = window;
    if lo > hi || hi >= values.len() {
        return Err(PolicyError::BadWindow {
            lo,
            hi,
            len: values.len(),
        });
    }
    let g = |i: usize| values[i].as_f64();
    let k = fixed_cost.as_f64();
    let span = |limit: usize| match capacity {
        Capacity::Finite(b) => (b as usize).min(limit),
        Capacity::Infinite => limit,
    };

    // running maxima of the right-hand sides over y <= x: (value, y, b)
    let mut first: Option<(f64, usize, usize)> = None;
    let mut second: Option<(f64, usize, usize)> = None;
    for x in lo..=hi {
        for b in 1..=span(x - lo) {
            let slope = (g(x) - g(x - b)) / b as f64;
            if first.is_none_or(|(v, _, _)| slope > v) {
                first = Some((slope, x, b));
            }
        }
        if let Capacity::Finite(cap) = capacity {
            let cap = cap as usize;
            if x >= lo + cap {
                let rhs = (k + g(x) - g(x - cap)) / cap as f64;
                if second.is_none_or(|(v, _, _)| rhs > v) {
                    second = Some((rhs, x, cap));
                }
            }
        }
        let mut lhs: Option<(f64, usize)> = None;
        for a in 1..=span(hi - x) {
            let slope = (k + g(x + a) - g(x)) / a as f64;
            if lhs.is_none_or(|(v, _)| slope < v) {
                lhs = Some((slope, a));
            }
        }
        let Some((lhs, a)) = lhs else { continue };
        for (condition, rhs) in [(KbCondition::First, first), (KbCondition::Second, second)] {
            if let Some((rhs, y, b)) = rhs {
                if lhs - rhs < -KB_TOL {
                    return Ok(Some(KbViolation {
                        condition,
                        x: x - lo,
                        a,
                        y: y - lo,
                        b,
                        defect: lhs - rhs,
                    }));
                }
            }
        }
    }
    Ok(None)
}

/// Index window used for (K,B)-convexity checks of a period: the ordering
/// region plus and minus twice the capacity, inside the reliable states.
pub fn kb_window<T: Scalar>(tables: &ValueTables<T>, period: usize) -> (usize, usize) {
    let grid = tables.grid;
    let lowest = tables.period(period).reliable_from;
    let report = check_cop(tables, period);
    let centre = report
        .ordering_set
        .last()
        .map(|iv| iv.1)
        .unwrap_or_else(|| argmin_g(tables, period));
    let reach = match tables.capacity {
        Capacity::Finite(b) => 2 * b,
        Capacity::Infinite => 200,
    };
    let lo = (centre - reach).max(lowest);
    let hi = (centre + reach).min(grid.x_max);
    (grid.index(lo), grid.index(hi))
}

/// Smallest minimizer of `G` over the reliable states.
pub fn argmin_g<T: Scalar>(tables: &ValueTables<T>, period: usize) -> i64 {
    let mut best = *tables.reliable_states(period).start();
    for y in tables.reliable_states(period) {
        if tables.g(period, y) < tables.g(period, best) {
            best = y;
        }
    }
    best
}

/// A local minimum of `G` on `(s_m, S_m)`: strict from the right, entered
/// from above on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeMinimum {
    /// Leftmost point of the plateau ending at the minimum.
    pub level: i64,
    pub on_envelope: bool,
    pub nontrivial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QceReport {
    pub period: usize,
    pub s_m: i64,
    pub big_s_m: i64,
    pub minima: Vec<EnvelopeMinimum>,
    /// True when the nontrivial minima are exactly the levels `S_k`, `k < m`
    /// (finite capacity), or when there is a single pair (no capacity).
    pub matches_thresholds: bool,
}

impl QceReport {
    pub fn nontrivial_levels(&self) -> Vec<i64> {
        self.minima
            .iter()
            .filter(|m| m.nontrivial)
            .map(|m| m.level)
            .collect()
    }
}

/// Largest `b` strictly between `level` and `next` with `G(b) >= G(level)`:
/// the last state from which a full order still cannot beat stopping at
/// `level`. `s = b - B` is then the reorder point of `level`.
pub fn breakpoint<T: Scalar>(
    tables: &ValueTables<T>,
    period: usize,
    level: i64,
    next: i64,
) -> Option<i64> {
    let floor = tables.g(period, level);
    (level + 1..next)
        .rev()
        .find(|&b| tables.g(period, b) >= floor)
}

/// Classifies the local minima of `G` between `s_m` and `S_m` against the
/// quasiconvex envelope, which on that interval is the running minimum
/// from the left.
pub fn qce_diagnostics<T: Scalar>(
    tables: &ValueTables<T>,
    period: usize,
) -> Result<QceReport, PolicyError> {
    let policy = extract_thresholds(tables, period)?;
    let Some((s_m, big_s_m)) = policy.top_pair() else {
        return Ok(QceReport {
            period,
            s_m: 0,
            big_s_m: 0,
            minima: Vec::new(),
            matches_thresholds: true,
        });
    };
    let g = |y: i64| tables.g(period, y);
    // envelope over [s_m, S_m]; G(s_m) dominates the open interval
    let mut env = Vec::with_capacity((big_s_m - s_m + 1) as usize);
    let mut run = g(s_m);
    for y in s_m..=big_s_m {
        run = run.min(g(y));
        env.push(run);
    }
    let env_at = |y: i64| env[(y - s_m) as usize];

    let mut minima = Vec::new();
    for b in s_m + 1..big_s_m {
        if g(b + 1) <= g(b) {
            continue;
        }
        let mut a = b;
        while a - 1 > s_m && g(a - 1) == g(b) {
            a -= 1;
        }
        // points on a rising stretch are minima from the right only
        if g(a - 1) < g(a) {
            continue;
        }
        let on_envelope = g(a) == env_at(a);
        let nontrivial = on_envelope && g(a - 1) > g(a) && g(a - 1) == env_at(a - 1);
        minima.push(EnvelopeMinimum {
            level: a,
            on_envelope,
            nontrivial,
        });
    }
    // without a capacity every order reaches S_m and no envelope minimum
    // below it is ever a target
    let matches_thresholds = if tables.capacity.is_infinite() {
        policy.pairs.len() == 1
    } else {
        let lower: Vec<i64> = policy.pairs[..policy.pairs.len() - 1]
            .iter()
            .map(|p| p.1)
            .collect();
        let nontrivial: Vec<i64> = minima
            .iter()
            .filter(|m| m.nontrivial)
            .map(|m| m.level)
            .collect();
        lower == nontrivial
    };
    Ok(QceReport {
        period,
        s_m,
        big_s_m,
        matches_thresholds,
        minima,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandPmf;
    use crate::sdp::{solve, Grid, Instance};

    fn deterministic() -> ValueTables<f64> {
        let inst = Instance::new(
            0.0,
            0.0,
            1.0,
            10.0,
            Capacity::Infinite,
            vec![DemandPmf::point(5).unwrap()],
            1.0,
        )
        .unwrap();
        solve(&inst, Grid::new(-20, 30).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_single_period_has_cop() {
        let tables = deterministic();
        let report = check_cop(&tables, 1);
        assert!(report.holds);
        assert_eq!(report.ordering_set, vec![(-20, 4)]);
        let p = extract_thresholds(&tables, 1).unwrap();
        assert_eq!(p.pairs, vec![(4, 5)]);
    }

    #[test]
    fn dispatch_follows_thresholds() {
        let p = PeriodPolicy {
            period: 1,
            pairs: vec![(-1, 6), (2, 9), (5, 12)],
        };
        let b = Capacity::Finite(9);
        let got: Vec<i64> = (-4..=7).map(|x| p.order_quantity(x, b)).collect();
        assert_eq!(got, vec![9, 9, 8, 7, 9, 8, 7, 9, 8, 7, 0, 0]);
    }

    #[test]
    fn convex_sequence_is_kb_convex() {
        let v: Vec<f64> = (-50..=50).map(|x| (x * x) as f64).collect();
        for b in [Capacity::Finite(1), Capacity::Finite(7), Capacity::Infinite] {
            assert_eq!(verify_kb_convexity(&v, 0.0, b, (0, 100)).unwrap(), None);
        }
    }

    #[test]
    fn dip_breaks_kb_convexity() {
        // 0, -10, 0 inside a flat run, K = B = 1. Scanning x upwards, the
        // first failure is x = 10, a = 1: K + g(11) - g(10) = -9, against
        // the flat slope g(1) - g(0) = 0 seen first at y = 1, b = 1.
        let mut v = vec![0.0f64; 25];
        v[11] = -10.0;
        let viol = verify_kb_convexity(&v, 1.0, Capacity::Finite(1), (0, 24))
            .unwrap()
            .expect("dip must violate");
        assert_eq!(viol.condition, KbCondition::First);
        assert_eq!((viol.x, viol.a, viol.y, viol.b), (10, 1, 1, 1));
        assert!((viol.defect - (-9.0)).abs() < 1e-12);
    }

    #[test]
    fn window_checks() {
        let v = vec![0.0f64; 5];
        assert!(matches!(
            verify_kb_convexity(&v, 0.0, Capacity::Finite(1), (0, 5)),
            Err(PolicyError::BadWindow { .. })
        ));
    }

    #[test]
    fn quasiconvex_g_has_no_nontrivial_minima() {
        let tables = deterministic();
        let report = qce_diagnostics(&tables, 1).unwrap();
        assert!(report.nontrivial_levels().is_empty());
        assert!(report.matches_thresholds);
    }
}
