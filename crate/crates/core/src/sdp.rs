//! Backward stochastic dynamic programming on a unit inventory grid.
//!
//! Periods are numbered forward, `1..=n`. For each period the solver stores
//! the expected cost-to-go `C(x)` before ordering, the post-order function
//! `G(y) = v*y + L(y) + discount * E[C_next(y - d)]`, and the optimal order
//! quantity. With `C_next` of the last period identically zero,
//!
//! ```text
//! C(x) = -v*x + min{ G(x), K + min_{x < y <= x+B} G(y) }
//! ```
//!
//! Ties are broken towards not ordering, then towards the smallest order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandPmf;
use crate::scalar::Scalar;

/// Absolute tolerance under which two costs are treated as equal when
/// choosing an action.
pub const TIE_TOL: f64 = 1e-9;

/// Demand mass allowed to fall below the grid from inventory level zero.
pub const SPAN_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("{demands} demand distributions for a horizon of {horizon}")]
    DemandCount { horizon: usize, demands: usize },
    #[error("{name} must be {rule}, got {value}")]
    BadCost {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("capacity must be at least 1, got {0}")]
    BadCapacity(i64),
    #[error("discount factor must lie in (0, 1], got {0}")]
    BadDiscount(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("grid [{x_min}, {x_max}] must satisfy x_min < 0 < x_max")]
    BadGrid { x_min: i64, x_max: i64 },
    #[error("capacity {capacity} exceeds grid width {width}")]
    CapacityExceedsGrid { capacity: i64, width: i64 },
    #[error(
        "grid lower edge {x_min} is under-spanned: period {period} demand exceeds {} with probability {tail:e}",
        -x_min
    )]
    UnderSpanned {
        period: usize,
        x_min: i64,
        tail: f64,
    },
    #[error("optimal order at state {x} in period {period} targets the grid upper edge {x_max}")]
    UpperEdgeTarget { period: usize, x: i64, x_max: i64 },
}

/// Maximum order quantity per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Capacity {
    Finite(i64),
    Infinite,
}

impl Capacity {
    pub fn finite(self) -> Option<i64> {
        match self {
            Capacity::Finite(b) => Some(b),
            Capacity::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Capacity::Infinite)
    }

    /// Caps a desired quantity at the capacity.
    pub fn clamp(self, q: i64) -> i64 {
        match self {
            Capacity::Finite(b) => q.min(b),
            Capacity::Infinite => q,
        }
    }

    /// True when `q` uses the whole capacity.
    pub fn is_saturated(self, q: i64) -> bool {
        matches!(self, Capacity::Finite(b) if q == b)
    }
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Finite(b) => write!(f, "{b}"),
            Capacity::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Capacity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Capacity::Finite(b) => s.serialize_i64(*b),
            Capacity::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(b) => Ok(Capacity::Finite(b)),
            Raw::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => {
                Ok(Capacity::Infinite)
            }
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "capacity must be an integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// A complete finite-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<T> {
    pub fixed_cost: T,
    pub unit_cost: T,
    pub holding_cost: T,
    pub penalty_cost: T,
    pub capacity: Capacity,
    /// Per-period demand, forward time order.
    pub demands: Vec<DemandPmf<T>>,
    pub discount: T,
}

impl<T: Scalar> Instance<T> {
    pub fn new(
        fixed_cost: T,
        unit_cost: T,
        holding_cost: T,
        penalty_cost: T,
        capacity: Capacity,
        demands: Vec<DemandPmf<T>>,
        discount: T,
    ) -> Result<Self, ModelError> {
        let inst = Instance {
            fixed_cost,
            unit_cost,
            holding_cost,
            penalty_cost,
            capacity,
            demands,
            discount,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.demands.is_empty() {
            return Err(ModelError::EmptyHorizon);
        }
        let check = |name, value: T, strict: bool| {
            let v = value.as_f64();
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(ModelError::BadCost {
                    name,
                    rule: if strict { "positive" } else { "nonnegative" },
                    value: v,
                })
            }
        };
        check("fixed cost K", self.fixed_cost, false)?;
        check("unit cost v", self.unit_cost, false)?;
        check("holding cost h", self.holding_cost, true)?;
        check("penalty cost p", self.penalty_cost, true)?;
        if let Capacity::Finite(b) = self.capacity {
            if b < 1 {
                return Err(ModelError::BadCapacity(b));
            }
        }
        let a = self.discount.as_f64();
        if !(a > 0.0 && a <= 1.0) {
            return Err(ModelError::BadDiscount(a));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.demands.len()
    }

    /// Ordering cost `c(q)`: zero for no order, `K + v*q` otherwise.
    pub fn order_cost(&self, q: i64) -> T {
        if q <= 0 {
            T::zero()
        } else {
            self.fixed_cost + self.unit_cost * T::of_int(q)
        }
    }

    /// Same instance on another scalar type.
    pub fn cast<U: Scalar>(&self) -> Instance<U> {
        Instance {
            fixed_cost: U::of(self.fixed_cost.as_f64()),
            unit_cost: U::of(self.unit_cost.as_f64()),
            holding_cost: U::of(self.holding_cost.as_f64()),
            penalty_cost: U::of(self.penalty_cost.as_f64()),
            capacity: self.capacity,
            demands: self.demands.iter().map(DemandPmf::cast).collect(),
            discount: U::of(self.discount.as_f64()),
        }
    }
}

/// Inventory grid with unit step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: i64,
    pub x_max: i64,
}

impl Grid {
    /// Grid of the published computational study.
    pub const BENCHMARK: Grid = Grid {
        x_min: -10_000,
        x_max: 10_000,
    };

    pub fn new(x_min: i64, x_max: i64) -> Result<Self, SolveError> {
        if !(x_min < 0 && 0 < x_max) {
            return Err(SolveError::BadGrid { x_min, x_max });
        }
        Ok(Grid { x_min, x_max })
    }

    /// A grid sized from the instance. The lower edge leaves every period a
    /// reliable region reaching below `-B`, where all thresholds lie since
    /// each `s_k` orders less than `B` up to a nonnegative level. The upper
    /// edge sits above any useful target.
    pub fn spanning<T: Scalar>(instance: &Instance<T>) -> Grid {
        let maxes: Vec<i64> = instance
            .demands
            .iter()
            .map(|d| d.max_value().max(1))
            .collect();
        let quantiles: i64 = instance
            .demands
            .iter()
            .map(|d| d.upper_quantile(SPAN_EPS).max(1))
            .sum();
        let peak = maxes.iter().copied().max().unwrap_or(1);
        let last = *maxes.last().unwrap_or(&1);
        let carried: i64 = maxes[..maxes.len().saturating_sub(1)].iter().sum();
        let (margin, reach) = match instance.capacity {
            Capacity::Finite(b) => (b.max(last), quantiles.max(peak) + b),
            Capacity::Infinite => (carried + last, 2 * quantiles.max(peak)),
        };
        Grid {
            x_min: -carried - margin - 2,
            x_max: reach + 1,
        }
    }

    pub fn len(&self) -> usize {
        (self.x_max - self.x_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn contains(&self, x: i64) -> bool {
        (self.x_min..=self.x_max).contains(&x)
    }

    pub fn index(&self, x: i64) -> usize {
        debug_assert!(self.contains(x));
        (x - self.x_min) as usize
    }

    pub fn state(&self, i: usize) -> i64 {
        self.x_min + i as i64
    }

    pub fn states(&self) -> std::ops::RangeInclusive<i64> {
        self.x_min..=self.x_max
    }

    /// Checks the grid against an instance before solving.
    pub fn check_spans<T: Scalar>(&self, instance: &Instance<T>) -> Result<(), SolveError> {
        Grid::new(self.x_min, self.x_max)?;
        if let Capacity::Finite(b) = instance.capacity {
            if b > self.width() {
                return Err(SolveError::CapacityExceedsGrid {
                    capacity: b,
                    width: self.width(),
                });
            }
        }
        for (t, d) in instance.demands.iter().enumerate() {
            let tail = d.tail_above(-self.x_min);
            if tail > SPAN_EPS {
                return Err(SolveError::UnderSpanned {
                    period: t + 1,
                    x_min: self.x_min,
                    tail,
                });
            }
        }
        Ok(())
    }
}

/// Solved functions of one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodTable<T> {
    pub c: Vec<T>,
    pub g: Vec<T>,
    pub qstar: Vec<i64>,
    /// Lowest state whose values are unaffected by clamping at the lower
    /// grid edge.
    pub reliable_from: i64,
}

/// Output of [`solve`]: per-period `C`, `G` and optimal order quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables<T> {
    pub grid: Grid,
    pub fixed_cost: T,
    pub unit_cost: T,
    pub capacity: Capacity,
    /// Forward order: `periods[0]` is period 1.
    pub periods: Vec<PeriodTable<T>>,
}

impl<T: Scalar> ValueTables<T> {
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    /// Table of a forward period, `1..=horizon`.
    pub fn period(&self, period: usize) -> &PeriodTable<T> {
        assert!(
            (1..=self.horizon()).contains(&period),
            "period {period} outside 1..={}",
            self.horizon()
        );
        &self.periods[period - 1]
    }

    pub fn c(&self, period: usize, x: i64) -> T {
        self.period(period).c[self.grid.index(x)]
    }

    pub fn g(&self, period: usize, y: i64) -> T {
        self.period(period).g[self.grid.index(y)]
    }

    pub fn qstar(&self, period: usize, x: i64) -> i64 {
        self.period(period).qstar[self.grid.index(x)]
    }

    /// States whose values do not depend on the lower-edge clamp.
    pub fn reliable_states(&self, period: usize) -> std::ops::RangeInclusive<i64> {
        self.period(period).reliable_from..=self.grid.x_max
    }

    /// Highest feasible post-order level from `x`.
    fn reach(&self, x: i64) -> i64 {
        match self.capacity {
            Capacity::Finite(b) => (x + b).min(self.grid.x_max),
            Capacity::Infinite => self.grid.x_max,
        }
    }

    /// `min_{x <= y <= x+B} G(y)` over the grid.
    pub fn window_min_g(&self, period: usize, x: i64) -> T {
        let g = &self.period(period).g;
        let lo = self.grid.index(x);
        let hi = self.grid.index(self.reach(x));
        g[lo..=hi].iter().copied().fold(T::infinity(), T::min)
    }

    /// `V(x) = min(0, K + min_{x <= y <= x+B} G(y) - G(x))`, the gain of the
    /// best order over not ordering.
    pub fn order_gain(&self, period: usize, x: i64) -> T {
        let v = self.fixed_cost + self.window_min_g(period, x) - self.g(period, x);
        v.min(T::zero())
    }
}

/// Expected one-period holding and shortage cost at post-order level `y`.
pub fn single_period_cost<T: Scalar>(y: i64, pmf: &DemandPmf<T>, h: T, p: T) -> T {
    pmf.iter().fold(T::zero(), |acc, (d, prob)| {
        let over = T::of_int((y - d).max(0));
        let short = T::of_int((d - y).max(0));
        acc + prob * (h * over + p * short)
    })
}

/// Runs the backward recursion over all periods.
pub fn solve<T: Scalar>(instance: &Instance<T>, grid: Grid) -> Result<ValueTables<T>, SolveError> {
    grid.check_spans(instance)?;
    let n = instance.horizon();
    let len = grid.len();
    let tol = T::of(TIE_TOL);
    let zero_next = vec![T::zero(); len];

    let mut periods: Vec<PeriodTable<T>> = Vec::with_capacity(n);
    let mut reliable_from = grid.x_min;
    for t in (0..n).rev() {
        let pmf = &instance.demands[t];
        let last = t + 1 == n;
        let next: &[T] = if last {
            &zero_next
        } else {
            &periods.last().unwrap().c
        };
        let g = post_order_costs(instance, pmf, next, grid, last);

        let rmq = RangeMin::new(&g);
        let rows: Vec<(T, i64)> = (0..len)
            .into_par_iter()
            .map(|i| best_action(instance, &rmq, grid, i, tol))
            .collect();
        let (c, qstar): (Vec<T>, Vec<i64>) = rows.into_iter().unzip();

        if let Some(i) = qstar.iter().enumerate().position(|(i, &q)| {
            q > 0 && grid.state(i) + q == grid.x_max && !instance.capacity.is_saturated(q)
        }) {
            return Err(SolveError::UpperEdgeTarget {
                period: t + 1,
                x: grid.state(i),
                x_max: grid.x_max,
            });
        }

        if !last {
            reliable_from = (reliable_from + pmf.max_value()).min(grid.x_max);
        }
        periods.push(PeriodTable {
            c,
            g,
            qstar,
            reliable_from,
        });
    }
    periods.reverse();

    Ok(ValueTables {
        grid,
        fixed_cost: instance.fixed_cost,
        unit_cost: instance.unit_cost,
        capacity: instance.capacity,
        periods,
    })
}

/// `G(y)` for every grid state; continuation values below the grid are
/// read at the lower edge.
fn post_order_costs<T: Scalar>(
    instance: &Instance<T>,
    pmf: &DemandPmf<T>,
    next: &[T],
    grid: Grid,
    last: bool,
) -> Vec<T> {
    let h = instance.holding_cost;
    let p = instance.penalty_cost;
    let v = instance.unit_cost;
    let alpha = instance.discount;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let y = grid.state(i);
            let mut acc = v * T::of_int(y);
            for (d, prob) in pmf.iter() {
                let over = T::of_int((y - d).max(0));
                let short = T::of_int((d - y).max(0));
                let mut term = h * over + p * short;
                if !last {
                    let j = (i as i64 - d).max(0) as usize;
                    term = term + alpha * next[j];
                }
                acc = acc + prob * term;
            }
            acc
        })
        .collect()
}

/// Sparse table answering range minima of `G` in constant time.
struct RangeMin<'a, T> {
    levels: Vec<Vec<T>>,
    base: &'a [T],
}

impl<'a, T: Scalar> RangeMin<'a, T> {
    fn new(base: &'a [T]) -> Self {
        let mut levels: Vec<Vec<T>> = Vec::new();
        // level k holds minima of windows of width 2^(k+1)
        let mut half = 1;
        while 2 * half <= base.len() {
            let prev: &[T] = levels.last().map_or(base, Vec::as_slice);
            let count = base.len() + 1 - 2 * half;
            levels.push((0..count).map(|i| prev[i].min(prev[i + half])).collect());
            half *= 2;
        }
        RangeMin { levels, base }
    }

    /// Minimum of `base[lo..=hi]`.
    fn min(&self, lo: usize, hi: usize) -> T {
        let len = hi - lo + 1;
        let k = usize::BITS - 1 - len.leading_zeros();
        if k == 0 {
            return self.base[lo];
        }
        let row = &self.levels[k as usize - 1];
        row[lo].min(row[hi + 1 - (1 << k)])
    }

    /// Smallest `j` in `lo..=hi` with `base[j] <= threshold`, given one exists.
    fn first_at_most(&self, lo: usize, hi: usize, threshold: T) -> usize {
        let (mut a, mut b) = (lo, hi);
        while a < b {
            let mid = a + (b - a) / 2;
            if self.min(lo, mid) <= threshold {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        a
    }
}

/// Optimal cost and order quantity at grid index `i` given `G`.
fn best_action<T: Scalar>(
    instance: &Instance<T>,
    g: &RangeMin<'_, T>,
    grid: Grid,
    i: usize,
    tol: T,
) -> (T, i64) {
    let x = grid.state(i);
    let last = g.base.len() - 1;
    let hi = match instance.capacity {
        Capacity::Finite(b) => (i + b as usize).min(last),
        Capacity::Infinite => last,
    };
    let vx = instance.unit_cost * T::of_int(x);
    let stay = g.base[i];
    if hi == i {
        return (stay - vx, 0);
    }
    let best = g.min(i + 1, hi);
    if instance.fixed_cost + best < stay - tol {
        // smallest quantity whose cost ties the minimum
        let j = g.first_at_most(i + 1, hi, best + tol);
        (instance.fixed_cost + g.base[j] - vx, (j - i) as i64)
    } else {
        (stay - vx, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn point(v: i64) -> DemandPmf<f64> {
        DemandPmf::point(v).unwrap()
    }

    #[test]
    fn range_min_matches_scan() {
        let base: Vec<f64> = (0..97)
            .map(|i| ((i * 37 % 23) as f64 - 11.0).abs())
            .collect();
        let rmq = RangeMin::new(&base);
        for lo in 0..base.len() {
            for hi in lo..base.len() {
                let m = base[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
                assert_eq!(rmq.min(lo, hi), m);
                let first = lo + base[lo..=hi].iter().position(|&v| v <= m + 0.5).unwrap();
                assert_eq!(rmq.first_at_most(lo, hi, m + 0.5), first);
            }
        }
    }

    #[test]
    fn newsvendor_costs() {
        let pois =
            DemandPmf::<f64>::parametric(crate::demand::Family::Poisson, 20.0, None, 1e-9).unwrap();
        assert_abs_diff_eq!(
            single_period_cost(0, &pois, 1.0, 10.0),
            200.0,
            epsilon = 1e-6
        );
        assert_eq!(single_period_cost(5, &point(5), 1.0, 10.0), 0.0);
        let two = DemandPmf::<f64>::empirical(&[6, 7], &[0.95, 0.05]).unwrap();
        assert_abs_diff_eq!(
            single_period_cost(10, &two, 1.0, 10.0),
            3.95,
            epsilon = 1e-12
        );
    }

    #[test]
    fn deterministic_uncapacitated_orders_up_to_demand() {
        let inst =
            Instance::new(0.0, 0.0, 1.0, 10.0, Capacity::Infinite, vec![point(5)], 1.0).unwrap();
        let tables = solve(&inst, Grid::new(-20, 30).unwrap()).unwrap();
        for x in -20..=30 {
            assert_eq!(tables.qstar(1, x), (5 - x).max(0), "x={x}");
        }
    }

    #[test]
    fn cost_identity_holds() {
        let d = DemandPmf::<f64>::empirical(&[0, 3, 8], &[0.2, 0.5, 0.3]).unwrap();
        let inst = Instance::new(
            7.0,
            1.0,
            1.0,
            6.0,
            Capacity::Finite(5),
            vec![d.clone(), d.clone(), d],
            0.95,
        )
        .unwrap();
        let tables = solve(&inst, Grid::new(-40, 40).unwrap()).unwrap();
        for t in 1..=3 {
            for x in -40..=40 {
                let g = tables.g(t, x);
                let c = -1.0 * x as f64 + g.min(7.0 + tables.window_min_g(t, x));
                assert_abs_diff_eq!(tables.c(t, x), c, epsilon = 1e-6);
                let q = tables.qstar(t, x);
                assert!((0..=5).contains(&q));
            }
        }
    }

    #[test]
    fn grid_validation() {
        let inst = Instance::new(
            1.0,
            0.0,
            1.0,
            1.0,
            Capacity::Finite(50),
            vec![point(10)],
            1.0,
        )
        .unwrap();
        let small = Instance {
            capacity: Capacity::Finite(5),
            ..inst.clone()
        };
        assert!(matches!(Grid::new(0, 10), Err(SolveError::BadGrid { .. })));
        assert!(matches!(
            solve(&small, Grid::new(-5, 30).unwrap()),
            Err(SolveError::UnderSpanned { period: 1, .. })
        ));
        assert!(matches!(
            solve(&inst, Grid::new(-10, 20).unwrap()),
            Err(SolveError::CapacityExceedsGrid { .. })
        ));
    }

    #[test]
    fn upper_edge_target_rejected() {
        let inst =
            Instance::new(0.0, 0.0, 1.0, 10.0, Capacity::Infinite, vec![point(5)], 1.0).unwrap();
        assert!(matches!(
            solve(&inst, Grid::new(-10, 5).unwrap()),
            Err(SolveError::UpperEdgeTarget { .. })
        ));
    }

    #[test]
    fn model_validation() {
        let d = vec![point(1)];
        assert!(matches!(
            Instance::new(1.0, 0.0, 0.0, 1.0, Capacity::Infinite, d.clone(), 1.0),
            Err(ModelError::BadCost { .. })
        ));
        assert!(matches!(
            Instance::new(1.0, 0.0, 1.0, 1.0, Capacity::Finite(0), d.clone(), 1.0),
            Err(ModelError::BadCapacity(0))
        ));
        assert!(matches!(
            Instance::new(1.0, 0.0, 1.0, 1.0, Capacity::Infinite, d, 1.5),
            Err(ModelError::BadDiscount(_))
        ));
        assert!(matches!(
            Instance::new(1.0, 0.0, 1.0, 1.0, Capacity::Infinite, vec![], 1.0),
            Err(ModelError::EmptyHorizon)
        ));
    }

    #[test]
    fn capacity_serde() {
        let b: Capacity = serde_json::from_str("65").unwrap();
        assert_eq!(b, Capacity::Finite(65));
        let inf: Capacity = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(inf, Capacity::Infinite);
        assert_eq!(serde_json::to_string(&inf).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<Capacity>("\"lots\"").is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let inst = Instance::new(0.0, 0.0, 1.0, 10.0, Capacity::Infinite, vec![point(5)], 1.0)
            .unwrap()
            .cast::<f32>();
        let tables = solve(&inst, Grid::new(-20, 30).unwrap()).unwrap();
        assert_eq!(tables.qstar(1, -3), 8);
        assert_eq!(tables.c(1, 5), 0.0f32);
    }
}
