use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use multiss::cex::{search_cop_violations, write_findings, CexSearchParams, MassMode};
use multiss::heuristic::modified_ss_from_tables;
use multiss::io::{
    read_instance, write_cop_csv, write_heuristic_csv, write_policy_csv, write_series_csv,
    write_tables_csv,
};
use multiss::policy::{check_cop, extract_policy};
use multiss::simulate::{
    gap_report, simulate_policies, OrderPolicy, SimError, SimulationConfig, TablePolicy,
};
use multiss::testbed::{build_design, run_benchmark, GapMethod};
use multiss::{solve, Family, Grid, Instance, Tables64};

#[derive(Parser)]
#[command(
    name = "multiss",
    version,
    about = "Capacitated stochastic lot sizing with fixed ordering costs"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and print its threshold policy.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Directory for tables.csv, policy.csv, heuristic.csv and cop.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate policy costs by simulation.
    Simulate {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyChoice::Both)]
        policy: PolicyChoice,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Initial inventory.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        x0: i64,
        /// Run CSV: policy, mean, half_width, reps, seed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized search for instances violating the continuous order property.
    SearchCex {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long, default_value_t = 1000)]
        budget: u64,
        #[arg(long, value_enum, default_value_t = MassArg::Random)]
        masses: MassArg,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        /// Directory for violator instance files and manifest.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the factorial test bed and print the pivot table.
    Benchmark {
        /// Demand family; repeat for several, or `all`.
        #[arg(long = "family", required = true)]
        families: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        scale: f64,
        /// Measure gaps by simulation instead of exact evaluation.
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Pivot CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write G, C and V series of every period for plotting.
    Series {
        instance: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    grid_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    grid_max: Option<i64>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Target relative half-width of the confidence interval.
    #[arg(long, default_value_t = 1e-4)]
    rel_error: f64,
    #[arg(long, default_value_t = 10_000)]
    min_reps: u64,
    #[arg(long, default_value_t = 50_000_000)]
    max_reps: u64,
}

impl SimArgs {
    fn config(&self) -> SimulationConfig {
        SimulationConfig {
            confidence: self.confidence,
            target_rel_error: self.rel_error,
            base_seed: self.seed,
            min_reps: self.min_reps,
            max_reps: self.max_reps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Optimal,
    ModifiedSs,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum MassArg {
    Random,
    Equal,
    Simplex,
}

enum Failure {
    Usage(String),
    Numeric(String),
    Budget(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Budget(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) | Failure::Budget(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Usage(format!("cannot write csv: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve {
            instance,
            grid,
            out,
        } => cmd_solve(&instance, &grid, out.as_deref()),
        Command::Simulate {
            instance,
            policy,
            grid,
            sim,
            x0,
            out,
        } => cmd_simulate(&instance, policy, &grid, &sim, x0, out.as_deref()),
        Command::SearchCex {
            seed,
            start,
            budget,
            masses,
            horizon,
            out,
        } => {
            let params = CexSearchParams {
                seed,
                start,
                budget,
                horizon,
                mass_mode: match masses {
                    MassArg::Random => MassMode::Random,
                    MassArg::Equal => MassMode::Equal,
                    MassArg::Simplex => MassMode::Simplex,
                },
                ..Default::default()
            };
            cmd_search(&params, out.as_deref())
        }
        Command::Benchmark {
            families,
            scale,
            simulate,
            grid,
            sim,
            out,
        } => cmd_benchmark(&families, scale, simulate, &grid, &sim, out.as_deref()),
        Command::Series {
            instance,
            grid,
            out,
        } => {
            let (_, tables) = load_and_solve(&instance, &grid)?;
            let file = File::create(&out).map_err(io_err(&out))?;
            write_series_csv(&tables, BufWriter::new(file)).map_err(csv_err)
        }
    }
}

fn load(path: &Path) -> Result<Instance<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    read_instance(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn pick_grid(args: &GridArgs, instance: &Instance<f64>) -> Result<Grid, Failure> {
    let auto = Grid::spanning(instance);
    Grid::new(
        args.grid_min.unwrap_or(auto.x_min),
        args.grid_max.unwrap_or(auto.x_max),
    )
    .map_err(|e| Failure::Numeric(e.to_string()))
}

fn load_and_solve(path: &Path, args: &GridArgs) -> Result<(Instance<f64>, Tables64), Failure> {
    let instance = load(path)?;
    let grid = pick_grid(args, &instance)?;
    let tables = solve(&instance, grid).map_err(|e| Failure::Numeric(e.to_string()))?;
    Ok((instance, tables))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(io_err(&path))
}

fn cmd_solve(path: &Path, grid: &GridArgs, out: Option<&Path>) -> Result<(), Failure> {
    let (_, tables) = load_and_solve(path, grid)?;
    let reports: Vec<_> = (1..=tables.horizon())
        .map(|t| check_cop(&tables, t))
        .collect();
    let violated: Vec<usize> = reports
        .iter()
        .filter(|r| !r.holds)
        .map(|r| r.period)
        .collect();
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let _ = writeln!(
        w,
        "grid [{}, {}], B = {}",
        tables.grid.x_min, tables.grid.x_max, tables.capacity
    );
    for r in &reports {
        if let Some(v) = &r.violation {
            let _ = writeln!(
                w,
                "WARNING: continuous order property violated, period {}; no order on [{}, {}] below ordering states [{}, {}]",
                r.period, v.no_order.0, v.no_order.1, v.order_above.0, v.order_above.1
            );
        }
    }
    let policy = if violated.is_empty() {
        Some(extract_policy(&tables).map_err(|e| Failure::Numeric(e.to_string()))?)
    } else {
        None
    };
    if let Some(policy) = &policy {
        let _ = writeln!(w, "{:<8} (s_k, S_k)", "period");
        for (t, p) in policy.periods.iter().enumerate() {
            let pairs = p
                .iter()
                .flat_map(|p| p.pairs.iter())
                .map(|(s, big_s)| format!("({s},{big_s})"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                w,
                "{:<8} {}",
                t + 1,
                if pairs.is_empty() { "-".into() } else { pairs }
            );
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_tables_csv(&tables, create(dir, "tables.csv")?).map_err(csv_err)?;
        write_cop_csv(&reports, create(dir, "cop.csv")?).map_err(csv_err)?;
        if let Some(policy) = &policy {
            write_policy_csv(policy, create(dir, "policy.csv")?).map_err(csv_err)?;
        }
        let heuristic =
            modified_ss_from_tables(&tables).map_err(|e| Failure::Numeric(e.to_string()))?;
        write_heuristic_csv(&heuristic, create(dir, "heuristic.csv")?).map_err(csv_err)?;
    }
    Ok(())
}

fn cmd_simulate(
    path: &Path,
    choice: PolicyChoice,
    grid: &GridArgs,
    sim: &SimArgs,
    x0: i64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (instance, tables) = load_and_solve(path, grid)?;
    let config = sim.config();
    let heuristic =
        modified_ss_from_tables(&tables).map_err(|e| Failure::Numeric(e.to_string()))?;
    let optimal = TablePolicy::new(&tables);
    let (names, policies): (Vec<&str>, Vec<&dyn OrderPolicy>) = match choice {
        PolicyChoice::Optimal => (vec!["optimal"], vec![&optimal]),
        PolicyChoice::ModifiedSs => (vec!["modified-ss"], vec![&heuristic]),
        PolicyChoice::Both => (vec!["optimal", "modified-ss"], vec![&optimal, &heuristic]),
    };
    if !heuristic.flagged.is_empty() && !matches!(choice, PolicyChoice::Optimal) {
        println!(
            "WARNING: continuous order property violated, period {}; heuristic uses the top ordering interval",
            heuristic.flagged[0]
        );
    }
    let (estimates, budget) = match simulate_policies(&instance, &policies, x0, &config) {
        Ok(e) => (e, None),
        Err(SimError::BudgetExceeded(e)) => (e, Some(config.max_reps)),
        Err(e) => return Err(Failure::Usage(e.to_string())),
    };
    for (name, e) in names.iter().zip(&estimates) {
        println!(
            "{name}: mean {:.6} +/- {:.6} ({}% CI), reps {}",
            e.mean_cost,
            e.half_width,
            config.confidence * 100.0,
            e.reps
        );
    }
    if estimates.len() == 2 {
        let report = gap_report(&tables, x0, estimates[0], estimates[1]);
        println!("gap: {:.3}%", report.gap_percent);
        println!(
            "dp value C(x0) = {:.6}, {}",
            report.dp_value,
            if report.dp_consistent {
                "consistent"
            } else {
                "INCONSISTENT"
            }
        );
    }
    if let Some(path) = out {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["policy", "mean", "half_width", "reps", "seed"])
            .map_err(csv_err)?;
        for (name, e) in names.iter().zip(&estimates) {
            w.serialize((name, e.mean_cost, e.half_width, e.reps, config.base_seed))
                .map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    match budget {
        Some(max) => Err(Failure::Budget(format!(
            "relative error target {} not met within {max} replications",
            config.target_rel_error
        ))),
        None => Ok(()),
    }
}

fn cmd_search(params: &CexSearchParams, out: Option<&Path>) -> Result<(), Failure> {
    let outcome = search_cop_violations(params).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("seed,index,period,gap_lo,gap_hi");
    for f in &outcome.findings {
        let (a, b) = f.witness().unwrap_or((0, 0));
        println!("{},{},{},{a},{b}", params.seed, f.index, f.period);
    }
    eprintln!(
        "{} instances, {} violating periods, {} skipped",
        params.budget,
        outcome.findings.len(),
        outcome.skipped.len()
    );
    if let Some(dir) = out {
        write_findings(dir, params.seed, &outcome.findings).map_err(io_err(dir))?;
    }
    Ok(())
}

fn parse_families(names: &[String]) -> Result<Vec<Family>, Failure> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Family::ALL);
            continue;
        }
        match Family::parse(name) {
            Some(f) => out.push(f),
            None => {
                return Err(Failure::Usage(format!(
                    "unknown family {name:?}; expected one of {} or all",
                    Family::ALL.map(|f| f.name()).join(", ")
                )))
            }
        }
    }
    out.dedup();
    Ok(out)
}

fn cmd_benchmark(
    families: &[String],
    scale: f64,
    simulate: bool,
    grid: &GridArgs,
    sim: &SimArgs,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let families = parse_families(families)?;
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Failure::Usage(format!("scale {scale} outside (0, 1]")));
    }
    let grid = match (grid.grid_min, grid.grid_max) {
        (Some(a), Some(b)) => Some(Grid::new(a, b).map_err(|e| Failure::Numeric(e.to_string()))?),
        (None, None) => None,
        _ => {
            return Err(Failure::Usage(
                "give both --grid-min and --grid-max, or neither".into(),
            ))
        }
    };
    let method = if simulate {
        GapMethod::Simulated(sim.config())
    } else {
        GapMethod::Exact
    };
    let design = build_design(&families, scale);
    let report = run_benchmark(&design, method, grid);
    let stdout = std::io::stdout();
    report.write_pivot_csv(stdout.lock()).map_err(csv_err)?;
    for r in report.cop_violations() {
        eprintln!(
            "continuous order property violated, period {}: {:?}",
            r.cop_violations[0], r.point
        );
    }
    for (point, e) in &report.failures {
        eprintln!("failed: {point:?}: {e}");
    }
    if let Some(path) = out {
        let file = File::create(path).map_err(io_err(path))?;
        report
            .write_pivot_csv(BufWriter::new(file))
            .map_err(csv_err)?;
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "{} instances failed",
            report.failures.len()
        )))
    }
}
