//! Random search for instances on which the ordering region of some
//! period is not a single interval.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandPmf;
use crate::io::write_instance;
use crate::policy::{check_cop, CopReport, Interval};
use crate::scalar::Scalar;
use crate::sdp::{solve, Capacity, Grid, Instance, ValueTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMode {
    /// Independent uniform draws, normalized.
    Random,
    /// Equal mass on every support point.
    Equal,
    /// Uniform on the probability simplex: normalized exponential draws.
    Simplex,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CexError {
    #[error("invalid search parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CexSearchParams {
    pub k_range: (i64, i64),
    pub p_range: (i64, i64),
    pub b_range: (i64, i64),
    pub support_max: i64,
    pub points_per_pmf: usize,
    pub horizon: usize,
    pub mass_mode: MassMode,
    pub seed: u64,
    /// Index of the first generated instance.
    #[serde(default)]
    pub start: u64,
    pub budget: u64,
}

impl Default for CexSearchParams {
    fn default() -> Self {
        CexSearchParams {
            k_range: (1, 500),
            p_range: (1, 30),
            b_range: (20, 200),
            support_max: 300,
            points_per_pmf: 4,
            horizon: 4,
            mass_mode: MassMode::Random,
            seed: 0,
            start: 0,
            budget: 1000,
        }
    }
}

impl CexSearchParams {
    pub fn validate(&self) -> Result<(), CexError> {
        let bad = |msg: String| Err(CexError::Params(msg));
        for (name, (lo, hi)) in [
            ("K", self.k_range),
            ("p", self.p_range),
            ("B", self.b_range),
        ] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.k_range.0 < 0 || self.p_range.0 < 1 || self.b_range.0 < 1 {
            return bad("K must be nonnegative, p and B positive".into());
        }
        if self.points_per_pmf < 2 {
            return bad("at least two support points per period".into());
        }
        let above = self.support_max - self.b_range.1;
        if above < (self.points_per_pmf - 1) as i64 {
            return bad(format!(
                "support_max {} leaves no room for {} points above B",
                self.support_max,
                self.points_per_pmf - 1
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        Ok(())
    }
}

/// Stream of instance `index` under `seed`.
fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one instance: one support point below `B`, the rest strictly
/// between `B` and `support_max`.
pub fn random_instance(params: &CexSearchParams, rng: &mut impl Rng) -> Instance<f64> {
    let k = rng.random_range(params.k_range.0..=params.k_range.1);
    let p = rng.random_range(params.p_range.0..=params.p_range.1);
    let b = rng.random_range(params.b_range.0..=params.b_range.1);
    let above = (params.support_max - b) as usize;
    let demands = (0..params.horizon)
        .map(|_| {
            let mut values = vec![rng.random_range(0..b)];
            values.extend(
                sample(rng, above, params.points_per_pmf - 1)
                    .into_iter()
                    .map(|i| b + 1 + i as i64),
            );
            let masses: Vec<f64> = match params.mass_mode {
                MassMode::Equal => vec![1.0; values.len()],
                MassMode::Random => (0..values.len()).map(|_| rng.random::<f64>()).collect(),
                MassMode::Simplex => (0..values.len())
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect(),
            };
            let total: f64 = masses.iter().sum();
            let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
            DemandPmf::empirical(&values, &masses).expect("generated masses are valid")
        })
        .collect();
    Instance::new(
        k as f64,
        0.0,
        1.0,
        p as f64,
        Capacity::Finite(b),
        demands,
        1.0,
    )
    .expect("generated parameters are valid")
}

/// Instance `index` of the search stream.
pub fn replay_instance(params: &CexSearchParams, index: u64) -> Instance<f64> {
    random_instance(params, &mut instance_rng(params.seed, index))
}

/// Solve grid of the search: the lower edge covers the whole horizon's
/// demand, and the upper edge sits a full order above it, beyond any useful
/// target.
pub fn search_grid<T: Scalar>(instance: &Instance<T>) -> Grid {
    let total: i64 = instance.demands.iter().map(DemandPmf::max_value).sum();
    let peak = instance
        .demands
        .iter()
        .map(DemandPmf::max_value)
        .max()
        .unwrap_or(0);
    let b = instance.capacity.finite().unwrap_or(total);
    Grid {
        x_min: -total.max(1),
        x_max: (peak + b * instance.horizon() as i64).max(total) + b + 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CexFinding {
    pub index: u64,
    pub instance: Instance<f64>,
    pub period: usize,
    pub report: CopReport,
}

impl CexFinding {
    pub fn witness(&self) -> Option<Interval> {
        self.report.violation.as_ref().map(|v| v.no_order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CexOutcome {
    pub findings: Vec<CexFinding>,
    /// Instances whose solve failed on the search grid.
    pub skipped: Vec<u64>,
}

/// Every period of `tables` whose ordering region is not one interval.
pub fn cop_violations<T: Scalar>(tables: &ValueTables<T>) -> Vec<(usize, CopReport)> {
    (1..=tables.horizon())
        .map(|t| (t, check_cop(tables, t)))
        .filter(|(_, r)| !r.holds)
        .collect()
}

/// Generates instances `start..start + budget` and reports every violating
/// period, in generation order.
pub fn search_cop_violations(params: &CexSearchParams) -> Result<CexOutcome, CexError> {
    params.validate()?;
    let results: Vec<(u64, Option<Vec<(usize, CopReport)>>, Instance<f64>)> = (params.start
        ..params.start + params.budget)
        .into_par_iter()
        .map(|index| {
            let instance = replay_instance(params, index);
            let found = solve(&instance, search_grid(&instance))
                .ok()
                .map(|tables| cop_violations(&tables));
            (index, found, instance)
        })
        .collect();
    let mut outcome = CexOutcome {
        findings: Vec::new(),
        skipped: Vec::new(),
    };
    for (index, found, instance) in results {
        match found {
            None => outcome.skipped.push(index),
            Some(v) => outcome
                .findings
                .extend(v.into_iter().map(|(period, report)| CexFinding {
                    index,
                    instance: instance.clone(),
                    period,
                    report,
                })),
        }
    }
    Ok(outcome)
}

/// Maximal runs of reliable states over which `V` strictly decreases.
pub fn v_monotonicity_report<T: Scalar>(tables: &ValueTables<T>, period: usize) -> Vec<Interval> {
    let tol = T::of(1e-9);
    let states = tables.reliable_states(period);
    let (lo, hi) = (*states.start(), *states.end());
    let mut out: Vec<Interval> = Vec::new();
    let mut prev = tables.order_gain(period, lo);
    for x in lo..hi {
        let next = tables.order_gain(period, x + 1);
        if next < prev - tol {
            match out.last_mut() {
                Some(last) if last.1 == x => last.1 = x + 1,
                _ => out.push((x, x + 1)),
            }
        }
        prev = next;
    }
    out
}

/// Writes one instance file per violating instance and a manifest
/// `seed,index,period,gap_lo,gap_hi`.
pub fn write_findings(dir: &Path, seed: u64, findings: &[CexFinding]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))?;
    manifest.write_record(["seed", "index", "period", "gap_lo", "gap_hi"])?;
    let mut last = None;
    for f in findings {
        if last != Some(f.index) {
            std::fs::write(
                dir.join(instance_file_name(seed, f.index)),
                write_instance(&f.instance),
            )?;
            last = Some(f.index);
        }
        let (a, b) = f.witness().unwrap_or((0, 0));
        manifest.serialize((seed, f.index, f.period, a, b))?;
    }
    manifest.flush()
}

pub fn instance_file_name(seed: u64, index: u64) -> String {
    format!("violator_s{seed}_i{index}.json")
}
