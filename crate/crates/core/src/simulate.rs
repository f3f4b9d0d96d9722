//! Monte Carlo policy evaluation under common random numbers.
//!
//! Replication `r` draws its demands from a ChaCha stream selected by
//! `(base_seed, r)` alone, so every policy evaluated with the same config
//! sees the same demand paths. Replications run in fixed blocks whose
//! accumulators are merged in block order, which keeps results identical
//! across thread counts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::heuristic::ModifiedSsPolicy;
use crate::policy::ThresholdPolicy;
use crate::scalar::Scalar;
use crate::sdp::{single_period_cost, Capacity, Grid, Instance, ValueTables};

const BLOCK: u64 = 1_000;
/// Replications between two stopping checks.
pub const CHECK_EVERY: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("relative error target not met after {} replications", .0.first().map_or(0, |e| e.reps))]
    BudgetExceeded(Vec<SimulationEstimate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub confidence: f64,
    pub target_rel_error: f64,
    pub base_seed: u64,
    pub min_reps: u64,
    pub max_reps: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            confidence: 0.95,
            target_rel_error: 1e-4,
            base_seed: 0,
            min_reps: 10_000,
            max_reps: 50_000_000,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SimError::Config(format!(
                "confidence {} outside (0,1)",
                self.confidence
            )));
        }
        if !(self.target_rel_error > 0.0) {
            return Err(SimError::Config(
                "target relative error must be positive".into(),
            ));
        }
        if self.min_reps < 1000 {
            return Err(SimError::Config(format!(
                "min_reps {} below 1000",
                self.min_reps
            )));
        }
        if self.min_reps > self.max_reps {
            return Err(SimError::Config("min_reps exceeds max_reps".into()));
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + self.confidence / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationEstimate {
    pub mean_cost: f64,
    pub half_width: f64,
    pub reps: u64,
    pub converged: bool,
}

impl SimulationEstimate {
    pub fn rel_error(&self) -> f64 {
        if self.half_width == 0.0 {
            0.0
        } else {
            self.half_width / self.mean_cost.abs()
        }
    }
}

/// A replenishment rule: order quantity for a period (1-based, forward)
/// and pre-order inventory level.
pub trait OrderPolicy: Sync {
    fn order(&self, period: usize, x: i64) -> i64;
}

impl<F: Fn(usize, i64) -> i64 + Sync> OrderPolicy for F {
    fn order(&self, period: usize, x: i64) -> i64 {
        self(period, x)
    }
}

impl OrderPolicy for ModifiedSsPolicy {
    fn order(&self, period: usize, x: i64) -> i64 {
        ModifiedSsPolicy::order(self, period, x)
    }
}

/// The optimal policy as tabulated by the solver. States off the grid
/// order as the nearest edge would: nothing above, towards the edge's
/// target below.
pub struct TablePolicy<'a, T> {
    tables: &'a ValueTables<T>,
}

impl<'a, T: Scalar> TablePolicy<'a, T> {
    pub fn new(tables: &'a ValueTables<T>) -> Self {
        TablePolicy { tables }
    }
}

impl<T: Scalar> OrderPolicy for TablePolicy<'_, T> {
    fn order(&self, period: usize, x: i64) -> i64 {
        let grid = self.tables.grid;
        if x > grid.x_max {
            0
        } else if x < grid.x_min {
            let target = grid.x_min + self.tables.qstar(period, grid.x_min);
            self.tables.capacity.clamp(target - x)
        } else {
            self.tables.qstar(period, x)
        }
    }
}

/// A threshold policy dispatched per period; periods without thresholds
/// never order.
pub struct ThresholdDispatch<'a> {
    pub policy: &'a ThresholdPolicy,
    pub capacity: Capacity,
}

impl OrderPolicy for ThresholdDispatch<'_> {
    fn order(&self, period: usize, x: i64) -> i64 {
        match &self.policy.periods[period - 1] {
            Some(p) => p.order_quantity(x, self.capacity),
            None => 0,
        }
    }
}

/// Running mean and squared deviations, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    fn estimate(&self, z: f64, target: f64) -> SimulationEstimate {
        let var = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        let half_width = z * (var / self.n as f64).sqrt();
        let mut est = SimulationEstimate {
            mean_cost: self.mean,
            half_width,
            reps: self.n,
            converged: false,
        };
        est.converged = est.rel_error() <= target;
        est
    }
}

struct Sampler {
    support: Vec<Vec<i64>>,
    cumulative: Vec<Vec<f64>>,
}

impl Sampler {
    fn new(instance: &Instance<f64>) -> Self {
        Sampler {
            support: instance
                .demands
                .iter()
                .map(|d| d.support().to_vec())
                .collect(),
            cumulative: instance.demands.iter().map(|d| d.cumulative()).collect(),
        }
    }

    fn draw(&self, period: usize, u: f64) -> i64 {
        let cum = &self.cumulative[period];
        let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        self.support[period][i]
    }
}

/// Fills `demands` with the demand path of replication `rep`.
fn demand_path(sampler: &Sampler, seed: u64, rep: u64, demands: &mut [i64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    for (t, d) in demands.iter_mut().enumerate() {
        let u: f64 = rng.random();
        *d = sampler.draw(t, u);
    }
}

fn path_cost(instance: &Instance<f64>, policy: &dyn OrderPolicy, x0: i64, demands: &[i64]) -> f64 {
    let mut x = x0;
    let mut weight = 1.0;
    let mut total = 0.0;
    for (t, &d) in demands.iter().enumerate() {
        let q = policy.order(t + 1, x).max(0);
        let after = x + q - d;
        let stage = instance.order_cost(q)
            + instance.holding_cost * after.max(0) as f64
            + instance.penalty_cost * (-after).max(0) as f64;
        total += weight * stage;
        weight *= instance.discount;
        x = after;
    }
    total
}

fn run_blocks(
    instance: &Instance<f64>,
    sampler: &Sampler,
    policies: &[&dyn OrderPolicy],
    x0: i64,
    seed: u64,
    blocks: std::ops::Range<u64>,
) -> Vec<Vec<Moments>> {
    blocks
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Moments::default(); policies.len()];
            let mut demands = vec![0i64; instance.horizon()];
            for rep in b * BLOCK..(b + 1) * BLOCK {
                demand_path(sampler, seed, rep, &mut demands);
                for (m, p) in acc.iter_mut().zip(policies) {
                    m.push(path_cost(instance, *p, x0, &demands));
                }
            }
            acc
        })
        .collect()
}

/// Simulates several policies on shared demand paths until every estimate
/// meets the relative error target.
pub fn simulate_policies<T: Scalar>(
    instance: &Instance<T>,
    policies: &[&dyn OrderPolicy],
    x0: i64,
    config: &SimulationConfig,
) -> Result<Vec<SimulationEstimate>, SimError> {
    config.validate()?;
    let instance = instance.cast::<f64>();
    let sampler = Sampler::new(&instance);
    let z = config.z();
    let max_blocks = config.max_reps / BLOCK;
    let mut acc = vec![Moments::default(); policies.len()];
    let mut done = 0u64;
    let mut next = config.min_reps.div_ceil(BLOCK).min(max_blocks.max(1));
    loop {
        for block in run_blocks(
            &instance,
            &sampler,
            policies,
            x0,
            config.base_seed,
            done..next,
        ) {
            for (a, m) in acc.iter_mut().zip(&block) {
                a.merge(m);
            }
        }
        done = next;
        let estimates: Vec<SimulationEstimate> = acc
            .iter()
            .map(|m| m.estimate(z, config.target_rel_error))
            .collect();
        if estimates.iter().all(|e| e.converged) {
            return Ok(estimates);
        }
        if done >= max_blocks {
            return Err(SimError::BudgetExceeded(estimates));
        }
        next = (done + CHECK_EVERY / BLOCK).min(max_blocks);
    }
}

pub fn simulate_policy<T: Scalar>(
    instance: &Instance<T>,
    policy: &dyn OrderPolicy,
    x0: i64,
    config: &SimulationConfig,
) -> Result<SimulationEstimate, SimError> {
    simulate_policies(instance, &[policy], x0, config).map(|mut v| v.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `100 * (heuristic - optimal) / optimal`.
    pub gap_percent: f64,
    pub optimal: SimulationEstimate,
    pub heuristic: SimulationEstimate,
    /// `C(x0)` of the first period.
    pub dp_value: f64,
    /// Simulated optimal cost within three half-widths of `dp_value`.
    pub dp_consistent: bool,
}

/// Percentage cost increase of the modified (s,S) heuristic over the
/// tabulated optimal policy, both simulated on common random numbers.
pub fn optimality_gap<T: Scalar>(
    instance: &Instance<T>,
    tables: &ValueTables<T>,
    heuristic: &ModifiedSsPolicy,
    x0: i64,
    config: &SimulationConfig,
) -> Result<GapReport, SimError> {
    let optimal = TablePolicy::new(tables);
    let est = simulate_policies(instance, &[&optimal, heuristic], x0, config)?;
    Ok(gap_report(tables, x0, est[0], est[1]))
}

/// Builds the gap report from the two estimates.
pub fn gap_report<T: Scalar>(
    tables: &ValueTables<T>,
    x0: i64,
    optimal: SimulationEstimate,
    heuristic: SimulationEstimate,
) -> GapReport {
    let dp_value = tables.c(1, x0).as_f64();
    let gap_percent = if optimal.mean_cost == heuristic.mean_cost {
        0.0
    } else {
        100.0 * (heuristic.mean_cost - optimal.mean_cost) / optimal.mean_cost
    };
    let slack = (3.0 * optimal.half_width).max(1e-9 * dp_value.abs().max(1.0));
    GapReport {
        gap_percent,
        optimal,
        heuristic,
        dp_value,
        dp_consistent: (optimal.mean_cost - dp_value).abs() <= slack,
    }
}

/// Exact expected cost of `policy` from every grid state of period 1, by
/// backward evaluation with the solver's edge clamping. Used to cross-check
/// simulated estimates.
pub fn evaluate_policy<T: Scalar>(
    instance: &Instance<T>,
    grid: Grid,
    policy: &dyn OrderPolicy,
) -> Vec<f64> {
    let inst = instance.cast::<f64>();
    let n = inst.horizon();
    let mut next = vec![0.0; grid.len()];
    for t in (1..=n).rev() {
        let pmf = &inst.demands[t - 1];
        next = grid
            .states()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| {
                let q = policy.order(t, x).max(0);
                let y = x + q;
                let mut cost = inst.order_cost(q)
                    + single_period_cost(y, pmf, inst.holding_cost, inst.penalty_cost);
                if t < n {
                    for (d, p) in pmf.iter() {
                        let z = (y - d).clamp(grid.x_min, grid.x_max);
                        cost += inst.discount * p * next[grid.index(z)];
                    }
                }
                cost
            })
            .collect();
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandPmf;
    use crate::sdp::solve;

    fn quick() -> SimulationConfig {
        SimulationConfig {
            target_rel_error: 1e-2,
            min_reps: 1000,
            max_reps: 200_000,
            ..Default::default()
        }
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.5).collect();
        let mut seq = Moments::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut merged = Moments::default();
        for chunk in xs.chunks(64) {
            let mut m = Moments::default();
            chunk.iter().for_each(|&x| m.push(x));
            merged.merge(&m);
        }
        assert_eq!(seq.n, merged.n);
        assert!((seq.mean - merged.mean).abs() < 1e-12);
        assert!((seq.m2 - merged.m2).abs() < 1e-6);
    }

    #[test]
    fn sampler_inverts_cdf() {
        let d = DemandPmf::<f64>::empirical(&[6, 7], &[0.95, 0.05]).unwrap();
        let inst = Instance::new(0.0, 0.0, 1.0, 1.0, Capacity::Infinite, vec![d], 1.0).unwrap();
        let s = Sampler::new(&inst);
        assert_eq!(s.draw(0, 0.0), 6);
        assert_eq!(s.draw(0, 0.9499), 6);
        assert_eq!(s.draw(0, 0.95), 7);
        assert_eq!(s.draw(0, 0.999999), 7);
    }

    #[test]
    fn deterministic_demand_reproduces_dp_value() {
        let d = DemandPmf::<f64>::point(5).unwrap();
        let inst =
            Instance::new(10.0, 1.0, 1.0, 4.0, Capacity::Finite(8), vec![d; 3], 1.0).unwrap();
        let tables = solve(&inst, Grid::new(-20, 40).unwrap()).unwrap();
        let est = simulate_policy(&inst, &TablePolicy::new(&tables), 0, &quick()).unwrap();
        assert_eq!(est.half_width, 0.0);
        assert_eq!(est.mean_cost, tables.c(1, 0));
        assert!(est.converged);
    }

    #[test]
    fn exact_evaluation_of_optimal_policy_reproduces_c() {
        let d = DemandPmf::<f64>::empirical(&[0, 3, 6], &[0.2, 0.5, 0.3]).unwrap();
        let inst =
            Instance::new(8.0, 1.0, 1.0, 6.0, Capacity::Finite(5), vec![d; 3], 0.95).unwrap();
        let grid = Grid::new(-40, 40).unwrap();
        let tables = solve(&inst, grid).unwrap();
        let exact = evaluate_policy(&inst, grid, &TablePolicy::new(&tables));
        for x in tables.reliable_states(1) {
            assert!(
                (exact[grid.index(x)] - tables.c(1, x)).abs() < 1e-9,
                "x={x}"
            );
        }
        let est = simulate_policy(&inst, &TablePolicy::new(&tables), 0, &quick()).unwrap();
        assert!((est.mean_cost - exact[grid.index(0)]).abs() <= 3.0 * est.half_width);
    }

    #[test]
    fn config_validation() {
        let bad = SimulationConfig {
            min_reps: 10,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::Config(_))));
        let bad = SimulationConfig {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn budget_exceeded_carries_estimate() {
        let d = DemandPmf::<f64>::empirical(&[0, 50], &[0.5, 0.5]).unwrap();
        let inst = Instance::new(0.0, 0.0, 1.0, 1.0, Capacity::Infinite, vec![d], 1.0).unwrap();
        let never = |_: usize, _: i64| 0;
        let cfg = SimulationConfig {
            target_rel_error: 1e-6,
            min_reps: 1000,
            max_reps: 2000,
            ..Default::default()
        };
        match simulate_policy(&inst, &never, 0, &cfg) {
            Err(SimError::BudgetExceeded(est)) => {
                assert_eq!(est[0].reps, 2000);
                assert!(!est[0].converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
