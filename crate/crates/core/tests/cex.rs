mod common;

use common::*;
use multiss::cex::{cop_violations, v_monotonicity_report, write_findings, CexFinding};
use multiss::{solve, Grid};

#[test]
fn example2_is_flagged_in_first_period() {
    let tables = solve(&fixture("example2.json"), Grid::new(-300, 900).unwrap()).unwrap();
    let periods: Vec<usize> = cop_violations(&tables).iter().map(|(t, _)| *t).collect();
    assert!(periods.contains(&1), "{periods:?}");
}

#[test]
fn example2_order_gain_dips_before_the_gap() {
    let tables = solve(&fixture("example2.json"), Grid::new(-300, 900).unwrap()).unwrap();
    let dips = v_monotonicity_report(&tables, 1);
    assert!(dips.iter().any(|&(a, _)| a < 616), "{dips:?}");
}

#[test]
fn example1_order_gain_never_dips() {
    for name in EXAMPLE1 {
        let tables = solve(&fixture(name), Grid::new(-300, 600).unwrap()).unwrap();
        assert!(cop_violations(&tables).is_empty(), "{name}");
        for t in 1..=tables.horizon() {
            assert!(
                v_monotonicity_report(&tables, t).is_empty(),
                "{name} period {t}"
            );
        }
    }
}

#[test]
fn findings_are_written_with_manifest() {
    let inst = fixture("example2.json");
    let tables = solve(&inst, Grid::new(-300, 900).unwrap()).unwrap();
    let findings: Vec<CexFinding> = cop_violations(&tables)
        .into_iter()
        .map(|(period, report)| CexFinding {
            index: 5,
            instance: inst.clone(),
            period,
            report,
        })
        .collect();
    let dir = std::env::temp_dir().join(format!("multiss-cex-{}", std::process::id()));
    write_findings(&dir, 9, &findings).unwrap();
    let manifest = std::fs::read_to_string(dir.join("manifest.csv")).unwrap();
    assert!(
        manifest.starts_with("seed,index,period,gap_lo,gap_hi\n9,5,1,602,615"),
        "{manifest}"
    );
    assert!(dir.join("violator_s9_i5.json").exists());
    std::fs::remove_dir_all(dir).unwrap();
}
