//! Stability indicators over repeated measurements and the range
//! intersection rule used to decide whether a difference is conclusive.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("mean is zero, coefficient of variation undefined")]
    ZeroMean,
    #[error("Q1 + Q3 = 0, quartile coefficient of dispersion undefined")]
    DegenerateQuartiles,
    #[error("need at least {needed} values, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
}

fn check(xs: &[f64]) -> Result<(), StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> Result<f64, StatsError> {
    check(xs)?;
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation (divisor N).
pub fn population_stddev(xs: &[f64]) -> Result<f64, StatsError> {
    let mu = mean(xs)?;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64;
    Ok(var.sqrt())
}

/// σ/µ with the population σ.
pub fn coefficient_of_variation(xs: &[f64]) -> Result<f64, StatsError> {
    let mu = mean(xs)?;
    if mu == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    Ok(population_stddev(xs)? / mu)
}

pub fn median(xs: &[f64]) -> Result<f64, StatsError> {
    check(xs)?;
    Ok(quantile_sorted(&sorted(xs), 0.5))
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile by linear interpolation at rank `p·(n−1)` of a sorted sample.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Returns (Q1, Q3).
pub fn quartiles(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    check(xs)?;
    let s = sorted(xs);
    Ok((quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75)))
}

/// (Q3 − Q1) / (Q3 + Q1). Requires at least four values.
pub fn quartile_coefficient_of_dispersion(xs: &[f64]) -> Result<f64, StatsError> {
    if xs.len() < 4 {
        check(xs)?;
        return Err(StatsError::TooFewSamples { needed: 4, got: xs.len() });
    }
    let (q1, q3) = quartiles(xs)?;
    if q1 + q3 == 0.0 {
        return Err(StatsError::DegenerateQuartiles);
    }
    Ok((q3 - q1) / (q3 + q1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "direction")]
pub enum ConclusivenessVerdict {
    Conclusive(Direction),
    Inconclusive,
}

impl ConclusivenessVerdict {
    pub fn is_increase(self) -> bool {
        self == ConclusivenessVerdict::Conclusive(Direction::Increase)
    }
}

/// Compares the observed ranges `[min a, max a]` and `[min b, max b]`.
/// Disjoint ranges are conclusive, with the direction going from `a` to
/// `b`; touching endpoints count as an intersection.
pub fn ranges_disjoint(a: &[f64], b: &[f64]) -> Result<ConclusivenessVerdict, StatsError> {
    check(a)?;
    check(b)?;
    let (a_min, a_max) = min_max(a);
    let (b_min, b_max) = min_max(b);
    Ok(if a_max < b_min {
        ConclusivenessVerdict::Conclusive(Direction::Increase)
    } else if b_max < a_min {
        ConclusivenessVerdict::Conclusive(Direction::Decrease)
    } else {
        ConclusivenessVerdict::Inconclusive
    })
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Summary of one sample. `cv` and `qcd` are `None` where undefined
/// (zero mean, fewer than four values, Q1 + Q3 = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub cv: Option<f64>,
    pub qcd: Option<f64>,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(xs: &[f64]) -> Result<StabilitySummary, StatsError> {
    check(xs)?;
    let s = sorted(xs);
    let (q1, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    Ok(StabilitySummary {
        n: s.len(),
        // summing the sorted sample keeps the result permutation-invariant
        mean: mean(&s)?,
        median: quantile_sorted(&s, 0.5),
        stddev: population_stddev(&s)?,
        cv: coefficient_of_variation(&s).ok(),
        qcd: quartile_coefficient_of_dispersion(&s).ok(),
        q1,
        q3,
        min: s[0],
        max: s[s.len() - 1],
    })
}

/// Thresholds under which a metric counts as stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityGate {
    pub max_cv: f64,
    pub max_qcd: f64,
}

impl Default for StabilityGate {
    fn default() -> Self {
        StabilityGate { max_cv: 0.05, max_qcd: 0.05 }
    }
}

impl StabilityGate {
    /// Stable when CV or QCD is within its threshold. A sample with no
    /// spread at all is stable even when both indicators are undefined.
    pub fn is_stable(&self, s: &StabilitySummary) -> bool {
        if s.stddev == 0.0 {
            return true;
        }
        s.cv.is_some_and(|cv| cv.abs() <= self.max_cv) || s.qcd.is_some_and(|q| q.abs() <= self.max_qcd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn stddev_examples() {
        assert_eq!(population_stddev(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert!(close(population_stddev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap(), 2.0));
        assert!(close(population_stddev(&[0.0, 10.0]).unwrap(), 5.0));
        assert_eq!(population_stddev(&[]), Err(StatsError::EmptySample));
    }

    #[test]
    fn cv_examples() {
        assert!(close(coefficient_of_variation(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap(), 0.4));
        assert_eq!(coefficient_of_variation(&[3.5; 6]).unwrap(), 0.0);
        assert_eq!(coefficient_of_variation(&[1.0, -1.0]), Err(StatsError::ZeroMean));
    }

    #[test]
    fn qcd_examples() {
        let xs: Vec<f64> = (1..=8).map(f64::from).collect();
        let (q1, q3) = quartiles(&xs).unwrap();
        assert!(close(q1, 2.75) && close(q3, 6.25));
        assert!(close(quartile_coefficient_of_dispersion(&xs).unwrap(), 7.0 / 18.0));
        assert_eq!(quartile_coefficient_of_dispersion(&[4.0; 5]).unwrap(), 0.0);
        assert_eq!(
            quartile_coefficient_of_dispersion(&[-3.0, -1.0, 1.0, 3.0]),
            Err(StatsError::DegenerateQuartiles)
        );
        assert!(matches!(
            quartile_coefficient_of_dispersion(&[1.0, 2.0, 3.0]),
            Err(StatsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn ranges() {
        use ConclusivenessVerdict::*;
        assert_eq!(ranges_disjoint(&[10.1, 10.3], &[11.0, 11.2]).unwrap(), Conclusive(Direction::Increase));
        assert_eq!(ranges_disjoint(&[11.0, 11.2], &[10.1, 10.3]).unwrap(), Conclusive(Direction::Decrease));
        assert_eq!(ranges_disjoint(&[10.0, 12.0], &[11.0, 13.0]).unwrap(), Inconclusive);
        assert_eq!(ranges_disjoint(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), Inconclusive);
        assert_eq!(ranges_disjoint(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), Inconclusive);
    }

    #[test]
    fn summaries() {
        let one = summarize(&[1.0]).unwrap();
        assert_eq!((one.mean, one.stddev, one.n), (1.0, 0.0, 1));
        assert_eq!(one.qcd, None);
        assert_eq!(one.cv, Some(0.0));

        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!(close(s.mean, 5.0) && close(s.stddev, 2.0) && close(s.cv.unwrap(), 0.4));
        assert_eq!((s.min, s.max, s.median), (2.0, 9.0, 4.5));

        let zero_mean = summarize(&[-1.0, 1.0]).unwrap();
        assert_eq!(zero_mean.cv, None);
    }

    #[test]
    fn stability_gate() {
        let gate = StabilityGate::default();
        assert!(gate.is_stable(&summarize(&[100.0, 101.0, 99.0, 100.0]).unwrap()));
        assert!(!gate.is_stable(&summarize(&[50.0, 150.0, 60.0, 140.0]).unwrap()));
        assert!(gate.is_stable(&summarize(&[0.0, 0.0]).unwrap()));
    }
}
