//! Discrete demand distributions.
//!
//! Every period's demand is held as a finite probability mass function on
//! nonnegative integers. Parametric families are discretized onto the unit
//! grid and truncated where the remaining tail mass drops below `tail_eps`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Discrete, Gamma, LogNormal, Normal, Poisson};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default truncation threshold for unbounded families.
pub const DEFAULT_TAIL_EPS: f64 = 1e-9;

const EMPIRICAL_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("support and mass lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty demand distribution")]
    Empty,
    #[error("negative demand value {0}")]
    NegativeValue(i64),
    #[error("duplicate demand value {0}")]
    DuplicateValue(i64),
    #[error("mass {0} is not a positive probability")]
    BadMass(f64),
    #[error("masses sum to {0}, expected 1")]
    MassSum(f64),
    #[error("mean must be positive, got {0}")]
    NonPositiveMean(f64),
    #[error("family {0} requires a positive coefficient of variation")]
    MissingCv(Family),
    #[error("family {0} does not take a coefficient of variation")]
    UnexpectedCv(Family),
    #[error("tail_eps must lie in (0, 0.01), got {0}")]
    BadTailEps(f64),
    #[error("could not build {0} distribution: {1}")]
    Distribution(Family, String),
}

/// Parametric demand families of the computational study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DiscreteUniform,
    Geometric,
    Poisson,
    Normal,
    Lognormal,
    Gamma,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::DiscreteUniform,
        Family::Geometric,
        Family::Poisson,
        Family::Normal,
        Family::Lognormal,
        Family::Gamma,
    ];

    /// Continuous families take a coefficient of variation.
    pub fn takes_cv(self) -> bool {
        matches!(self, Family::Normal | Family::Lognormal | Family::Gamma)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::DiscreteUniform => "discrete_uniform",
            Family::Geometric => "geometric",
            Family::Poisson => "poisson",
            Family::Normal => "normal",
            Family::Lognormal => "lognormal",
            Family::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Finite probability mass function of a single period's demand.
///
/// The support is strictly increasing and nonnegative, every mass is
/// strictly positive and the masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandPmf<T> {
    support: Vec<i64>,
    probs: Vec<T>,
}

impl<T: Scalar> DemandPmf<T> {
    /// Builds a PMF from explicit (value, mass) lists.
    pub fn empirical(values: &[i64], masses: &[f64]) -> Result<Self, DemandError> {
        if values.len() != masses.len() {
            return Err(DemandError::LengthMismatch(values.len(), masses.len()));
        }
        if values.is_empty() {
            return Err(DemandError::Empty);
        }
        let mut pairs: Vec<(i64, f64)> = Vec::with_capacity(values.len());
        for (&v, &m) in values.iter().zip(masses) {
            if v < 0 {
                return Err(DemandError::NegativeValue(v));
            }
            if !(m.is_finite() && m > 0.0 && m <= 1.0 + EMPIRICAL_SUM_TOL) {
                return Err(DemandError::BadMass(m));
            }
            pairs.push((v, m));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > EMPIRICAL_SUM_TOL {
            return Err(DemandError::MassSum(total));
        }
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DemandError::DuplicateValue(w[0].0));
        }
        Ok(Self::from_sorted(pairs))
    }

    /// Degenerate distribution concentrated on `value`.
    pub fn point(value: i64) -> Result<Self, DemandError> {
        Self::empirical(&[value], &[1.0])
    }

    /// Discretizes one of the parametric families onto the integers.
    pub fn parametric(
        family: Family,
        mean: f64,
        cv: Option<f64>,
        tail_eps: f64,
    ) -> Result<Self, DemandError> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(DemandError::NonPositiveMean(mean));
        }
        if !(tail_eps > 0.0 && tail_eps < 0.01) {
            return Err(DemandError::BadTailEps(tail_eps));
        }
        let cv = match (family.takes_cv(), cv) {
            (true, Some(c)) if c.is_finite() && c > 0.0 => Some(c),
            (true, _) => return Err(DemandError::MissingCv(family)),
            (false, Some(_)) => return Err(DemandError::UnexpectedCv(family)),
            (false, None) => None,
        };
        let dist_err = |e: &dyn std::fmt::Display| DemandError::Distribution(family, e.to_string());

        let raw: Vec<f64> = match family {
            Family::DiscreteUniform => {
                let n = (2.0 * mean).ceil().max(1.0) as usize;
                vec![1.0 / n as f64; n]
            }
            Family::Geometric => {
                let q = mean / (1.0 + mean);
                let p = 1.0 - q;
                let mut out = Vec::new();
                let mut mass = p;
                let mut tail = 1.0;
                while tail >= tail_eps {
                    out.push(mass);
                    tail -= mass;
                    mass *= q;
                    if mass <= 0.0 {
                        break;
                    }
                }
                out
            }
            Family::Poisson => {
                let d = Poisson::new(mean).map_err(|e| dist_err(&e))?;
                let mut out = Vec::new();
                let mut cum = 0.0;
                let mut k = 0u64;
                loop {
                    let m = d.pmf(k);
                    out.push(m);
                    cum += m;
                    k += 1;
                    if k as f64 > mean && 1.0 - cum < tail_eps {
                        break;
                    }
                }
                out
            }
            Family::Normal => {
                let sd = cv.unwrap() * mean;
                let d = Normal::new(mean, sd).map_err(|e| dist_err(&e))?;
                discretize(|x| d.cdf(x), |x| d.sf(x), mean, tail_eps)
            }
            Family::Lognormal => {
                let c = cv.unwrap();
                let s2 = (1.0 + c * c).ln();
                let d =
                    LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt()).map_err(|e| dist_err(&e))?;
                discretize(|x| d.cdf(x), |x| d.sf(x), mean, tail_eps)
            }
            Family::Gamma => {
                let c = cv.unwrap();
                let shape = 1.0 / (c * c);
                let d = Gamma::new(shape, shape / mean).map_err(|e| dist_err(&e))?;
                discretize(|x| d.cdf(x), |x| d.sf(x), mean, tail_eps)
            }
        };

        Ok(Self::truncate(raw, tail_eps))
    }

    /// Drops leading and trailing points whose cumulative mass is below
    /// `tail_eps`, removes zero masses and renormalizes.
    fn truncate(raw: Vec<f64>, tail_eps: f64) -> Self {
        let n = raw.len();
        let mut lo = 0;
        let mut acc = 0.0;
        while lo + 1 < n && acc + raw[lo] < tail_eps {
            acc += raw[lo];
            lo += 1;
        }
        let mut hi = n;
        let mut acc = 0.0;
        while hi > lo + 1 && acc + raw[hi - 1] < tail_eps {
            acc += raw[hi - 1];
            hi -= 1;
        }
        let pairs = (lo..hi)
            .filter(|&k| raw[k] > 0.0)
            .map(|k| (k as i64, raw[k]))
            .collect();
        Self::from_sorted(pairs)
    }

    fn from_sorted(pairs: Vec<(i64, f64)>) -> Self {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        // Already-normalized input is kept bit-for-bit so that
        // serialize/parse cycles are the identity.
        let scale = if (total - 1.0).abs() <= 1e-12 {
            1.0
        } else {
            total
        };
        let support = pairs.iter().map(|p| p.0).collect();
        let probs = pairs.iter().map(|p| T::of(p.1 / scale)).collect();
        DemandPmf { support, probs }
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, T)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn min_value(&self) -> i64 {
        self.support[0]
    }

    pub fn max_value(&self) -> i64 {
        *self.support.last().unwrap()
    }

    /// Mass at `value` (zero off the support).
    pub fn prob(&self, value: i64) -> T {
        match self.support.binary_search(&value) {
            Ok(i) => self.probs[i],
            Err(_) => T::zero(),
        }
    }

    pub fn mean(&self) -> T {
        self.iter()
            .fold(T::zero(), |acc, (v, p)| acc + T::of_int(v) * p)
    }

    pub fn variance(&self) -> T {
        let mu = self.mean();
        self.iter().fold(T::zero(), |acc, (v, p)| {
            let d = T::of_int(v) - mu;
            acc + d * d * p
        })
    }

    /// Smallest `d` in the support with `P(D > d) <= eps`.
    pub fn upper_quantile(&self, eps: f64) -> i64 {
        let mut tail = 1.0;
        for (v, p) in self.iter() {
            tail -= p.as_f64();
            if tail <= eps {
                return v;
            }
        }
        self.max_value()
    }

    /// `P(D > d)`.
    pub fn tail_above(&self, d: i64) -> f64 {
        self.iter()
            .filter(|&(v, _)| v > d)
            .map(|(_, p)| p.as_f64())
            .sum()
    }

    /// Cumulative masses in `f64`, aligned with the support.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p.as_f64();
                acc
            })
            .collect()
    }

    /// Same distribution on another scalar type.
    pub fn cast<U: Scalar>(&self) -> DemandPmf<U> {
        DemandPmf {
            support: self.support.clone(),
            probs: self.probs.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }
}

/// Continuity-corrected discretization: `P(0) = F(0.5)`,
/// `P(k) = F(k + 0.5) - F(k - 0.5)`. Upper differences use the survival
/// function to avoid cancellation in the right tail.
fn discretize(
    cdf: impl Fn(f64) -> f64,
    sf: impl Fn(f64) -> f64,
    mean: f64,
    tail_eps: f64,
) -> Vec<f64> {
    let mut out = vec![cdf(0.5).max(0.0)];
    let mut k = 1.0;
    loop {
        let lower = k - 0.5;
        let upper = k + 0.5;
        let mass = if lower > mean {
            sf(lower) - sf(upper)
        } else {
            cdf(upper) - cdf(lower)
        };
        out.push(mass.max(0.0));
        if upper > mean && sf(upper) < tail_eps {
            break;
        }
        k += 1.0;
    }
    out
}

/// Serialized form of one period's demand: explicit masses or a family
/// record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DemandSpec {
    Empirical {
        values: Vec<i64>,
        probs: Vec<f64>,
    },
    Parametric {
        family: Family,
        mean: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cv: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail_eps: Option<f64>,
    },
}

impl DemandSpec {
    pub fn build<T: Scalar>(&self) -> Result<DemandPmf<T>, DemandError> {
        match self {
            DemandSpec::Empirical { values, probs } => DemandPmf::empirical(values, probs),
            DemandSpec::Parametric {
                family,
                mean,
                cv,
                tail_eps,
            } => DemandPmf::parametric(*family, *mean, *cv, tail_eps.unwrap_or(DEFAULT_TAIL_EPS)),
        }
    }

    pub fn from_pmf<T: Scalar>(pmf: &DemandPmf<T>) -> Self {
        DemandSpec::Empirical {
            values: pmf.support().to_vec(),
            probs: pmf.probs().iter().map(|p| p.as_f64()).collect(),
        }
    }
}
