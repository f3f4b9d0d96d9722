#![allow(dead_code)]

use std::path::PathBuf;

use multiss::cex::v_monotonicity_report;
use multiss::heuristic::modified_ss_from_tables;
use multiss::io::read_instance;
use multiss::policy::{
    check_cop, extract_policy, extract_thresholds, kb_window, verify_kb_convexity,
};
use multiss::simulate::{simulate_policies, simulate_policy, SimulationConfig, TablePolicy};
use multiss::{solve, Capacity, DemandPmf, Grid, Instance, Instance64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> Instance64 {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    read_instance(&text).unwrap()
}

pub const EXAMPLE1: [&str; 4] = [
    "example1_b35.json",
    "example1_b65.json",
    "example1_b71.json",
    "example1_binf.json",
];

/// Fixture name with the grid its reference values were computed on.
pub fn reference_grids() -> Vec<(&'static str, Grid)> {
    let mut v: Vec<(&str, Grid)> = EXAMPLE1
        .iter()
        .map(|&n| (n, Grid::new(-300, 600).unwrap()))
        .collect();
    v.push(("example2.json", Grid::new(-300, 900).unwrap()));
    v.push(("discounted_stationary.json", Grid::new(-200, 100).unwrap()));
    v.push(("example3.json", Grid::new(-1600, 2000).unwrap()));
    v
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn random_pmf(rng: &mut ChaCha8Rng, max_value: i64) -> DemandPmf<f64> {
    let n = rng.random_range(1..=4usize);
    let mut values: Vec<i64> = (0..n).map(|_| rng.random_range(0..=max_value)).collect();
    values.sort();
    values.dedup();
    let raw: Vec<f64> = values.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
    DemandPmf::empirical(&values, &masses).unwrap()
}

/// Horizon at most 3, capacity at most 10 or unbounded, demand at most 6.
pub fn micro_instance(rng: &mut ChaCha8Rng) -> Instance64 {
    let horizon = rng.random_range(1..=3);
    let capacity = if rng.random_bool(0.2) {
        Capacity::Infinite
    } else {
        Capacity::Finite(rng.random_range(1..=10))
    };
    Instance::new(
        rng.random_range(0..=20) as f64,
        rng.random_range(0..=3) as f64,
        rng.random_range(1..=3) as f64,
        rng.random_range(1..=10) as f64,
        capacity,
        (0..horizon).map(|_| random_pmf(rng, 6)).collect(),
        if rng.random_bool(0.5) { 1.0 } else { 0.9 },
    )
    .unwrap()
}

/// Plain backward recursion over every feasible order quantity.
pub fn brute_force(inst: &Instance64, grid: Grid) -> Vec<Vec<f64>> {
    let n = inst.horizon();
    let mut out = vec![vec![0.0; grid.len()]; n];
    for t in (0..n).rev() {
        for x in grid.states() {
            let cap = match inst.capacity {
                Capacity::Finite(b) => b.min(grid.x_max - x),
                Capacity::Infinite => grid.x_max - x,
            };
            let mut best = f64::INFINITY;
            for q in 0..=cap {
                let y = x + q;
                let mut cost = if q > 0 {
                    inst.fixed_cost + inst.unit_cost * q as f64
                } else {
                    0.0
                };
                for (d, p) in inst.demands[t].iter() {
                    let z = y - d;
                    cost += p
                        * (inst.holding_cost * z.max(0) as f64
                            + inst.penalty_cost * (-z).max(0) as f64);
                    if t + 1 < n {
                        cost += inst.discount * p * out[t + 1][grid.index(z.max(grid.x_min))];
                    }
                }
                best = best.min(cost);
            }
            out[t][grid.index(x)] = best;
        }
    }
    out
}

pub fn check_brute_force(count: usize, seed: u64) -> Check {
    let grid = Grid::new(-30, 30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let inst = micro_instance(&mut rng);
        let tables = solve(&inst, grid).map_err(|e| format!("instance {i}: {e}"))?;
        let oracle = brute_force(&inst, grid);
        for t in 1..=inst.horizon() {
            for x in tables.reliable_states(t) {
                let err = (tables.c(t, x) - oracle[t - 1][grid.index(x)]).abs();
                worst = worst.max(err);
                ensure!(err <= 1e-9, "instance {i} period {t} x {x}: error {err:e}");
            }
        }
    }
    Ok(format!("{count} instances, max |C - oracle| = {worst:.1e}"))
}

pub fn check_kb_convexity() -> Check {
    let mut periods = 0;
    for (name, grid) in reference_grids() {
        let inst = fixture(name);
        let tables = solve(&inst, grid).map_err(|e| e.to_string())?;
        for t in 1..=tables.horizon() {
            let window = kb_window(&tables, t);
            let p = tables.period(t);
            for (label, values) in [("G", &p.g), ("C", &p.c)] {
                let v = verify_kb_convexity(values, inst.fixed_cost, inst.capacity, window)
                    .map_err(|e| e.to_string())?;
                ensure!(v.is_none(), "{name} period {t} {label}: {v:?}");
            }
            periods += 1;
        }
    }
    Ok(format!("G and C (K,B)-convex in {periods} fixture periods"))
}

pub fn check_reconstruction() -> Check {
    let mut states = 0;
    for (name, grid) in reference_grids() {
        let tables = solve(&fixture(name), grid).map_err(|e| e.to_string())?;
        for t in 1..=tables.horizon() {
            if !check_cop(&tables, t).holds {
                continue;
            }
            let policy = extract_thresholds(&tables, t).map_err(|e| e.to_string())?;
            for x in tables.reliable_states(t) {
                let q = policy.order_quantity(x, tables.capacity);
                ensure!(
                    q == tables.qstar(t, x),
                    "{name} period {t} x {x}: {q} vs {}",
                    tables.qstar(t, x)
                );
                states += 1;
            }
        }
    }
    Ok(format!("{states} states reproduced"))
}

pub fn check_single_period_gain(count: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(-120, 160).unwrap();
    for i in 0..count {
        let inst = Instance::new(
            rng.random_range(0.0..200.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.5..3.0),
            rng.random_range(1.0..30.0),
            Capacity::Finite(rng.random_range(1..=60)),
            vec![random_pmf(&mut rng, 100)],
            1.0,
        )
        .unwrap();
        let tables = solve(&inst, grid).map_err(|e| e.to_string())?;
        let dips = v_monotonicity_report(&tables, 1);
        ensure!(dips.is_empty(), "instance {i}: V decreases on {dips:?}");
        ensure!(
            check_cop(&tables, 1).holds,
            "instance {i}: ordering region split"
        );
    }
    Ok(format!("{count} single-period instances"))
}

pub fn check_uncapacitated(count: usize, seed: u64) -> Check {
    let tables = solve(
        &fixture("example1_binf.json"),
        Grid::new(-300, 600).unwrap(),
    )
    .unwrap();
    let policy = extract_policy(&tables).map_err(|e| e.to_string())?;
    ensure!(
        policy.max_thresholds() == 1,
        "uncapacitated example has {} pairs",
        policy.max_thresholds()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(-60, 80).unwrap();
    for i in 0..count {
        let mut inst = micro_instance(&mut rng);
        inst.capacity = Capacity::Infinite;
        inst.demands = (0..3).map(|_| random_pmf(&mut rng, 15)).collect();
        let tables = solve(&inst, grid).map_err(|e| e.to_string())?;
        let policy = extract_policy(&tables).map_err(|e| format!("instance {i}: {e}"))?;
        ensure!(
            policy.max_thresholds() <= 1,
            "instance {i}: {} pairs",
            policy.max_thresholds()
        );
    }
    Ok(format!("one pair per period on {} instances", count + 1))
}

pub fn quick_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        target_rel_error: 2e-3,
        base_seed: seed,
        min_reps: 10_000,
        max_reps: 2_000_000,
        ..Default::default()
    }
}

pub fn check_simulation() -> Check {
    let inst = fixture("example1_b65.json");
    let tables = solve(&inst, Grid::new(-300, 600).unwrap()).unwrap();
    let policy = TablePolicy::new(&tables);
    let a = simulate_policy(&inst, &policy, 0, &quick_config(11)).map_err(|e| e.to_string())?;
    let b = simulate_policy(&inst, &policy, 0, &quick_config(11)).map_err(|e| e.to_string())?;
    ensure!(
        a.mean_cost.to_bits() == b.mean_cost.to_bits() && a == b,
        "repeat run differs"
    );
    let pair = simulate_policies(&inst, &[&policy, &policy], 0, &quick_config(11))
        .map_err(|e| e.to_string())?;
    ensure!(
        pair[0] == a && pair[1] == a,
        "joint run differs from single run"
    );

    let mut checked = 0;
    for (name, _) in reference_grids() {
        if name == "example3.json" {
            continue;
        }
        let inst = fixture(name);
        let grid = Grid::spanning(&inst);
        let tables = solve(&inst, grid).map_err(|e| e.to_string())?;
        let est = simulate_policy(&inst, &TablePolicy::new(&tables), 0, &quick_config(3))
            .map_err(|e| e.to_string())?;
        let dp = tables.c(1, 0);
        ensure!(
            (est.mean_cost - dp).abs() <= 3.0 * est.half_width,
            "{name}: simulated {} +/- {} vs C(0) = {dp}",
            est.mean_cost,
            est.half_width
        );
        checked += 1;

        let h = modified_ss_from_tables(&tables).map_err(|e| e.to_string())?;
        if h.flagged.is_empty()
            && extract_policy(&tables)
                .map(|p| p.max_thresholds() <= 1)
                .unwrap_or(false)
        {
            let est = simulate_policies(
                &inst,
                &[&TablePolicy::new(&tables), &h],
                0,
                &quick_config(8),
            )
            .map_err(|e| e.to_string())?;
            ensure!(
                est[0].mean_cost == est[1].mean_cost,
                "{name}: single-pair heuristic differs from optimal"
            );
        }
    }
    Ok(format!(
        "bit-identical reruns; {checked} fixtures within 3 half-widths of C(0)"
    ))
}
