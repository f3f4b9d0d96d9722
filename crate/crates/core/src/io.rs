//! Instance files and CSV output.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandError, DemandPmf, DemandSpec};
use crate::heuristic::ModifiedSsPolicy;
use crate::policy::{CopReport, ThresholdPolicy};
use crate::scalar::Scalar;
use crate::sdp::{Capacity, Instance, ModelError, ValueTables};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot parse instance: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("period {period}: {source}")]
    Demand { period: usize, source: DemandError },
    #[error("horizon is {horizon} but {given} demand specs were given")]
    HorizonMismatch { horizon: usize, given: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// On-disk instance. A single demand spec with `horizon > 1` is repeated
/// in every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub horizon: usize,
    #[serde(rename = "K")]
    pub fixed_cost: f64,
    #[serde(rename = "v", default)]
    pub unit_cost: f64,
    #[serde(rename = "h")]
    pub holding_cost: f64,
    #[serde(rename = "p")]
    pub penalty_cost: f64,
    #[serde(rename = "B")]
    pub capacity: Capacity,
    #[serde(default = "one")]
    pub discount: f64,
    pub demands: Vec<DemandSpec>,
}

fn one() -> f64 {
    1.0
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<Self, FileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance files always serialize")
    }

    pub fn build<T: Scalar>(&self) -> Result<Instance<T>, FileError> {
        let given = self.demands.len();
        if given != self.horizon && !(given == 1 && self.horizon > 0) {
            return Err(FileError::HorizonMismatch {
                horizon: self.horizon,
                given,
            });
        }
        let demands = (0..self.horizon)
            .map(|t| {
                self.demands[t.min(given - 1)]
                    .build::<T>()
                    .map_err(|source| FileError::Demand {
                        period: t + 1,
                        source,
                    })
            })
            .collect::<Result<Vec<DemandPmf<T>>, _>>()?;
        Ok(Instance::new(
            T::of(self.fixed_cost),
            T::of(self.unit_cost),
            T::of(self.holding_cost),
            T::of(self.penalty_cost),
            self.capacity,
            demands,
            T::of(self.discount),
        )?)
    }

    /// Explicit-mass form of a solved instance.
    pub fn from_instance<T: Scalar>(instance: &Instance<T>) -> Self {
        InstanceFile {
            horizon: instance.horizon(),
            fixed_cost: instance.fixed_cost.as_f64(),
            unit_cost: instance.unit_cost.as_f64(),
            holding_cost: instance.holding_cost.as_f64(),
            penalty_cost: instance.penalty_cost.as_f64(),
            capacity: instance.capacity,
            discount: instance.discount.as_f64(),
            demands: instance.demands.iter().map(DemandSpec::from_pmf).collect(),
        }
    }
}

pub fn read_instance<T: Scalar>(text: &str) -> Result<Instance<T>, FileError> {
    InstanceFile::parse(text)?.build()
}

pub fn write_instance<T: Scalar>(instance: &Instance<T>) -> String {
    InstanceFile::from_instance(instance).to_json()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

/// `period,x,C,G,Qstar` for every grid state.
pub fn write_tables_csv<T: Scalar, W: Write>(tables: &ValueTables<T>, w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["period", "x", "C", "G", "Qstar"])?;
    for t in 1..=tables.horizon() {
        for x in tables.grid.states() {
            out.write_record(&[
                t.to_string(),
                x.to_string(),
                tables.c(t, x).as_f64().to_string(),
                tables.g(t, x).as_f64().to_string(),
                tables.qstar(t, x).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `period,k,s,S`; periods without thresholds get no rows.
pub fn write_policy_csv<W: Write>(policy: &ThresholdPolicy, w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["period", "k", "s", "S"])?;
    for (t, p) in policy.periods.iter().enumerate() {
        for (k, (s, big_s)) in p.iter().flat_map(|p| p.pairs.iter()).enumerate() {
            out.serialize((t + 1, k + 1, s, big_s))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_heuristic_csv<W: Write>(policy: &ModifiedSsPolicy, w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["period", "s", "S"])?;
    for (t, p) in policy.periods.iter().enumerate() {
        if let Some(p) = p {
            out.serialize((t + 1, p.s, p.big_s))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per COP report: the ordering intervals and the witness gap.
pub fn write_cop_csv<W: Write>(reports: &[CopReport], w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["period", "holds", "ordering_set", "gap_lo", "gap_hi"])?;
    for r in reports {
        let set = r
            .ordering_set
            .iter()
            .map(|(a, b)| format!("[{a};{b}]"))
            .collect::<Vec<_>>()
            .join(" ");
        let (lo, hi) = match &r.violation {
            Some(v) => (v.no_order.0.to_string(), v.no_order.1.to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record(&[r.period.to_string(), r.holds.to_string(), set, lo, hi])?;
    }
    out.flush()?;
    Ok(())
}

/// Plot series `period,x,G,C,V` over reliable states.
pub fn write_series_csv<T: Scalar, W: Write>(tables: &ValueTables<T>, w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["period", "x", "G", "C", "V"])?;
    for t in 1..=tables.horizon() {
        for x in tables.reliable_states(t) {
            out.serialize((
                t,
                x,
                tables.g(t, x).as_f64(),
                tables.c(t, x).as_f64(),
                tables.order_gain(t, x).as_f64(),
            ))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Family;

    const EXAMPLE: &str = r#"{
        "horizon": 4, "K": 100, "v": 0, "h": 1, "p": 10, "B": 65, "discount": 1,
        "demands": [
            {"family": "poisson", "mean": 20},
            {"family": "poisson", "mean": 40},
            {"values": [0, 5], "probs": [0.5, 0.5]},
            {"family": "normal", "mean": 40, "cv": 0.2}
        ]
    }"#;

    #[test]
    fn parses_mixed_specs() {
        let inst: Instance<f64> = read_instance(EXAMPLE).unwrap();
        assert_eq!(inst.horizon(), 4);
        assert_eq!(inst.capacity, Capacity::Finite(65));
        assert_eq!(inst.demands[2].support(), &[0, 5]);
        let p = DemandPmf::<f64>::parametric(Family::Poisson, 40.0, None, 1e-9).unwrap();
        assert_eq!(inst.demands[1], p);
    }

    #[test]
    fn round_trip_is_identical() {
        let inst: Instance<f64> = read_instance(EXAMPLE).unwrap();
        let again: Instance<f64> = read_instance(&write_instance(&inst)).unwrap();
        assert_eq!(inst, again);
        let text = write_instance(&again);
        assert_eq!(text, write_instance(&inst));
    }

    #[test]
    fn rejects_bad_files() {
        let unknown = EXAMPLE.replace("\"discount\"", "\"discnt\"");
        assert!(matches!(
            InstanceFile::parse(&unknown),
            Err(FileError::Parse(_))
        ));
        let short = EXAMPLE.replace("\"horizon\": 4", "\"horizon\": 3");
        assert!(matches!(
            read_instance::<f64>(&short),
            Err(FileError::HorizonMismatch {
                horizon: 3,
                given: 4
            })
        ));
        let neg = EXAMPLE.replace("\"h\": 1", "\"h\": -1");
        assert!(matches!(
            read_instance::<f64>(&neg),
            Err(FileError::Model(_))
        ));
        let bad = EXAMPLE.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(matches!(
            read_instance::<f64>(&bad),
            Err(FileError::Demand { period: 3, .. })
        ));
    }

    #[test]
    fn single_spec_repeats() {
        let text = r#"{"horizon": 20, "K": 22, "v": 1, "h": 1, "p": 10, "B": "inf",
            "discount": 0.9, "demands": [{"values": [6, 7], "probs": [0.95, 0.05]}]}"#;
        let inst: Instance<f64> = read_instance(text).unwrap();
        assert_eq!(inst.horizon(), 20);
        assert!(inst.capacity.is_infinite());
        assert!(inst.demands.iter().all(|d| d.support() == [6, 7]));
    }
}
