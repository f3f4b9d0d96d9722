//! Factorial test bed over demand patterns, distribution families and
//! cost parameters, with pivot-table reporting.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{DemandPmf, Family, DEFAULT_TAIL_EPS};
use crate::heuristic::modified_ss_from_tables;
use crate::policy::{check_cop, extract_policy};
use crate::sdp::{solve, Capacity, Grid, Instance};
use crate::simulate::{evaluate_policy, optimality_gap, SimulationConfig, TablePolicy};

pub const HORIZON: usize = 20;
pub const K_LEVELS: [f64; 3] = [250.0, 500.0, 1000.0];
pub const V_LEVELS: [f64; 3] = [2.0, 5.0, 10.0];
pub const P_LEVELS: [f64; 3] = [5.0, 10.0, 15.0];
pub const B_MULTIPLIERS: [f64; 3] = [2.0, 3.0, 4.0];
pub const CV_LEVELS: [f64; 3] = [0.1, 0.2, 0.3];

const PATTERNS: [(&str, [u32; HORIZON]); 10] = [
    ("STA", [30; HORIZON]),
    (
        "LC1",
        [
            46, 49, 50, 50, 49, 46, 42, 38, 35, 33, 30, 28, 26, 23, 21, 18, 14, 11, 8, 6,
        ],
    ),
    (
        "LC2",
        [
            7, 9, 11, 13, 17, 22, 24, 26, 32, 34, 36, 41, 44, 47, 48, 50, 50, 49, 47, 44,
        ],
    ),
    (
        "SIN1",
        [
            47, 30, 13, 6, 13, 30, 47, 54, 47, 30, 13, 6, 13, 30, 47, 30, 15, 8, 11, 30,
        ],
    ),
    (
        "SIN2",
        [
            36, 30, 24, 21, 24, 30, 36, 39, 36, 30, 24, 21, 24, 30, 36, 31, 24, 21, 26, 33,
        ],
    ),
    (
        "RAND",
        [
            63, 27, 10, 24, 1, 23, 33, 35, 67, 7, 14, 41, 4, 63, 26, 45, 53, 25, 10, 50,
        ],
    ),
    (
        "EMP1",
        [
            5, 15, 46, 140, 80, 147, 134, 74, 84, 109, 47, 88, 66, 28, 32, 89, 162, 36, 32, 50,
        ],
    ),
    (
        "EMP2",
        [
            14, 24, 71, 118, 49, 86, 152, 117, 226, 208, 78, 59, 96, 33, 57, 116, 18, 135, 128, 180,
        ],
    ),
    (
        "EMP3",
        [
            13, 35, 79, 43, 44, 59, 22, 55, 61, 34, 50, 95, 36, 145, 160, 104, 151, 86, 123, 64,
        ],
    ),
    (
        "EMP4",
        [
            15, 56, 19, 84, 136, 67, 67, 155, 87, 164, 194, 67, 65, 132, 35, 131, 133, 36, 173, 152,
        ],
    ),
];

/// Expected demand per period of every pattern, in table order.
pub fn demand_patterns() -> BTreeMap<&'static str, [u32; HORIZON]> {
    PATTERNS.iter().copied().collect()
}

pub fn pattern_names() -> [&'static str; 10] {
    PATTERNS.map(|(name, _)| name)
}

/// Horizon-average expected demand of a pattern.
pub fn average_demand(pattern: &[u32; HORIZON]) -> f64 {
    pattern.iter().map(|&d| d as f64).sum::<f64>() / HORIZON as f64
}

/// Parameter levels of one test-bed instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub family: Family,
    pub pattern: String,
    pub fixed_cost: f64,
    pub unit_cost: f64,
    pub penalty_cost: f64,
    pub b_multiplier: f64,
    pub capacity: i64,
    pub cv: Option<f64>,
}

impl DesignPoint {
    pub fn instance(&self) -> Instance<f64> {
        let means = demand_patterns()[self.pattern.as_str()];
        let demands = means
            .iter()
            .map(|&m| {
                DemandPmf::parametric(self.family, m as f64, self.cv, DEFAULT_TAIL_EPS)
                    .expect("test-bed demands are valid")
            })
            .collect();
        Instance::new(
            self.fixed_cost,
            self.unit_cost,
            1.0,
            self.penalty_cost,
            Capacity::Finite(self.capacity),
            demands,
            1.0,
        )
        .expect("test-bed parameters are valid")
    }

    /// `(dimension, level)` pairs this point contributes to.
    pub fn groups(&self) -> Vec<(&'static str, String)> {
        let mut g = vec![
            ("K", fmt_level(self.fixed_cost)),
            ("v", fmt_level(self.unit_cost)),
            ("p", fmt_level(self.penalty_cost)),
            ("B", format!("{:.1}D", self.b_multiplier)),
            ("Demand", self.pattern.clone()),
        ];
        if let Some(cv) = self.cv {
            g.push(("cv", fmt_level(cv)));
        }
        g
    }

    fn key(&self) -> [u64; 7] {
        let idx = |levels: &[f64], x: f64| levels.iter().position(|&l| l == x).unwrap_or(0) as u64;
        [
            Family::ALL
                .iter()
                .position(|&f| f == self.family)
                .unwrap_or(0) as u64,
            pattern_names()
                .iter()
                .position(|&p| p == self.pattern)
                .unwrap_or(0) as u64,
            idx(&K_LEVELS, self.fixed_cost),
            idx(&V_LEVELS, self.unit_cost),
            idx(&P_LEVELS, self.penalty_cost),
            idx(&B_MULTIPLIERS, self.b_multiplier),
            self.cv.map_or(0, |cv| 1 + idx(&CV_LEVELS, cv)),
        ]
    }

    /// Stable pseudo-random rank used for subsampling.
    fn rank(&self) -> u64 {
        self.key()
            .iter()
            .fold(0x9e37_79b9_7f4a_7c15u64, |h, &k| splitmix(h ^ k))
    }
}

fn fmt_level(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Full factorial design for `families`, or a deterministic stratified
/// subsample when `scale < 1`. Every level of every dimension keeps at
/// least one instance per family.
pub fn build_design(families: &[Family], scale: f64) -> Vec<DesignPoint> {
    assert!(scale > 0.0 && scale <= 1.0, "scale must lie in (0, 1]");
    let mut out = Vec::new();
    for &family in families {
        let full = full_design(family);
        if scale >= 1.0 {
            out.extend(full);
            continue;
        }
        let cut = (scale * u64::MAX as f64) as u64;
        let mut keep: Vec<bool> = full.iter().map(|d| d.rank() <= cut).collect();
        let mut covered: BTreeMap<(&'static str, String), bool> = BTreeMap::new();
        for (d, &k) in full.iter().zip(&keep) {
            for g in d.groups() {
                *covered.entry(g).or_default() |= k;
            }
        }
        for (group, hit) in covered {
            if hit {
                continue;
            }
            let best = full
                .iter()
                .enumerate()
                .filter(|(_, d)| d.groups().contains(&group))
                .min_by_key(|(_, d)| d.rank())
                .map(|(i, _)| i);
            if let Some(i) = best {
                keep[i] = true;
            }
        }
        out.extend(
            full.into_iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(d, _)| d),
        );
    }
    out
}

fn full_design(family: Family) -> Vec<DesignPoint> {
    let cvs: Vec<Option<f64>> = if family.takes_cv() {
        CV_LEVELS.iter().map(|&c| Some(c)).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for (name, means) in PATTERNS {
        let d = average_demand(&means);
        for &k in &K_LEVELS {
            for &v in &V_LEVELS {
                for &p in &P_LEVELS {
                    for &mult in &B_MULTIPLIERS {
                        for &cv in &cvs {
                            out.push(DesignPoint {
                                family,
                                pattern: name.to_string(),
                                fixed_cost: k,
                                unit_cost: v,
                                penalty_cost: p,
                                b_multiplier: mult,
                                capacity: (mult * d).round() as i64,
                                cv,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// How the heuristic's gap is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapMethod {
    /// CRN simulation of both policies.
    Simulated(SimulationConfig),
    /// Exact expected costs by backward policy evaluation.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceResult {
    pub point: DesignPoint,
    pub gap_percent: f64,
    pub max_thresholds: usize,
    /// Periods whose ordering region is not one interval.
    pub cop_violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PivotRow {
    pub group: String,
    pub level: String,
    pub avg_gap: f64,
    pub max_gap: f64,
    pub max_thresholds: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BenchmarkReport {
    pub results: Vec<InstanceResult>,
    pub failures: Vec<(DesignPoint, String)>,
}

impl BenchmarkReport {
    /// Rows grouped by dimension and level, in design order, followed by
    /// an `Overall` row.
    pub fn pivot(&self) -> Vec<PivotRow> {
        let mut order: Vec<(&'static str, String)> = Vec::new();
        let mut acc: BTreeMap<(&'static str, String), (f64, f64, usize, usize)> = BTreeMap::new();
        let mut add = |key: (&'static str, String), r: &InstanceResult, order: &mut Vec<_>| {
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0.0, f64::NEG_INFINITY, 0, 0)
            });
            e.0 += r.gap_percent;
            e.1 = e.1.max(r.gap_percent);
            e.2 = e.2.max(r.max_thresholds);
            e.3 += 1;
        };
        let dims = ["K", "v", "p", "B", "cv", "Demand"];
        for dim in dims {
            let mut levels: Vec<String> = Vec::new();
            for r in &self.results {
                for (d, level) in r.point.groups() {
                    if d == dim && !levels.contains(&level) {
                        levels.push(level);
                    }
                }
            }
            if dim == "Demand" {
                levels.sort();
            }
            for level in levels {
                for r in &self.results {
                    if r.point
                        .groups()
                        .iter()
                        .any(|(d, l)| *d == dim && *l == level)
                    {
                        add((dim, level.clone()), r, &mut order);
                    }
                }
            }
        }
        for r in &self.results {
            add(("Overall", String::new()), r, &mut order);
        }
        order
            .into_iter()
            .map(|key| {
                let (sum, max, thr, n) = acc[&key];
                PivotRow {
                    group: key.0.to_string(),
                    level: key.1,
                    avg_gap: sum / n as f64,
                    max_gap: max,
                    max_thresholds: thr,
                    instances: n,
                }
            })
            .collect()
    }

    pub fn overall(&self) -> Option<PivotRow> {
        self.pivot().pop()
    }

    pub fn cop_violations(&self) -> impl Iterator<Item = &InstanceResult> {
        self.results.iter().filter(|r| !r.cop_violations.is_empty())
    }

    pub fn write_pivot_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "group",
            "level",
            "avg_gap",
            "max_gap",
            "max_thresholds",
            "instances",
        ])?;
        for row in self.pivot() {
            out.write_record(&[
                row.group,
                row.level,
                format!("{:.3}", row.avg_gap),
                format!("{:.3}", row.max_gap),
                row.max_thresholds.to_string(),
                row.instances.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Solves every design point, extracts its policy and measures the gap of
/// the modified (s,S) heuristic from zero initial inventory. Per-instance
/// failures are recorded, not propagated.
pub fn run_benchmark(
    design: &[DesignPoint],
    method: GapMethod,
    grid: Option<Grid>,
) -> BenchmarkReport {
    let outcomes: Vec<Result<InstanceResult, String>> = design
        .par_iter()
        .map(|point| run_one(point, method, grid))
        .collect();
    let mut report = BenchmarkReport::default();
    for (point, outcome) in design.iter().zip(outcomes) {
        match outcome {
            Ok(r) => report.results.push(r),
            Err(e) => report.failures.push((point.clone(), e)),
        }
    }
    report
}

fn run_one(
    point: &DesignPoint,
    method: GapMethod,
    grid: Option<Grid>,
) -> Result<InstanceResult, String> {
    let instance = point.instance();
    let grid = grid.unwrap_or_else(|| Grid::spanning(&instance));
    let tables = solve(&instance, grid).map_err(|e| e.to_string())?;
    let cop_violations: Vec<usize> = (1..=tables.horizon())
        .filter(|&t| !check_cop(&tables, t).holds)
        .collect();
    let max_thresholds = if cop_violations.is_empty() {
        extract_policy(&tables)
            .map_err(|e| e.to_string())?
            .max_thresholds()
    } else {
        0
    };
    let heuristic = modified_ss_from_tables(&tables).map_err(|e| e.to_string())?;
    let gap_percent = match method {
        GapMethod::Simulated(config) => {
            optimality_gap(&instance, &tables, &heuristic, 0, &config)
                .map_err(|e| e.to_string())?
                .gap_percent
        }
        GapMethod::Exact => {
            let at = grid.index(0);
            let opt = evaluate_policy(&instance, grid, &TablePolicy::new(&tables))[at];
            let heu = evaluate_policy(&instance, grid, &heuristic)[at];
            100.0 * (heu - opt) / opt
        }
    };
    Ok(InstanceResult {
        point: point.clone(),
        gap_percent,
        max_thresholds,
        cop_violations,
    })
}
