//! Cross-trial statistics of learning curves on a fixed grid.

use std::io::Write;

use estop_core::LearningCurve;
use serde::{Deserialize, Serialize};

/// Spacing of the aggregation grid, in environment transitions.
pub const GRID_STEP: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub states_seen: u64,
    /// Trials whose curve spans this x.
    pub trials: usize,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub step: u64,
    pub points: Vec<AggregatePoint>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Summary statistics of a non-empty sample.
pub fn summarize(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() < 2 {
        0.0
    } else {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (median(&sorted), mean, std, sorted[0], sorted[sorted.len() - 1])
}

impl AggregateCurve {
    /// Interpolates every curve at multiples of `step`; each x uses only the
    /// curves that span it.
    pub fn from_curves(curves: &[LearningCurve], step: u64) -> Self {
        assert!(step > 0, "grid step must be positive");
        let end = curves
            .iter()
            .filter_map(|c| c.points.last())
            .map(|p| p.states_seen)
            .max()
            .unwrap_or(0);
        let mut points = Vec::new();
        let mut values = Vec::with_capacity(curves.len());
        let mut x = 0;
        while x <= end && !curves.is_empty() {
            values.clear();
            values.extend(curves.iter().filter_map(|c| c.interpolate(x as f64)));
            if !values.is_empty() {
                let (median, mean, std, min, max) = summarize(&values);
                points.push(AggregatePoint {
                    states_seen: x,
                    trials: values.len(),
                    median,
                    mean,
                    std,
                    min,
                    max,
                });
            }
            x += step;
        }
        Self { step, points }
    }

    pub fn at(&self, states_seen: u64) -> Option<&AggregatePoint> {
        self.points.iter().find(|p| p.states_seen == states_seen)
    }

    /// Rows `config_hash,variant,states_seen,trials,median,mean,std,min,max`.
    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>, hash: &str, variant: &str) -> csv::Result<()> {
        for p in &self.points {
            w.write_record([
                hash.to_string(),
                variant.to_string(),
                p.states_seen.to_string(),
                p.trials.to_string(),
                p.median.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
                p.min.to_string(),
                p.max.to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const AGGREGATE_HEADER: [&str; 9] = [
    "config_hash",
    "variant",
    "states_seen",
    "trials",
    "median",
    "mean",
    "std",
    "min",
    "max",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(seed: u64, pts: &[(u64, f64)]) -> LearningCurve {
        let mut c = LearningCurve::new(seed);
        for &(x, y) in pts {
            c.push(x, y, y);
        }
        c
    }

    #[test]
    fn single_trial_is_its_own_median() {
        let c = curve(0, &[(0, 0.0), (1500, 0.3), (4000, 0.8)]);
        let agg = AggregateCurve::from_curves(std::slice::from_ref(&c), GRID_STEP);
        assert_eq!(agg.points.len(), 5);
        for p in &agg.points {
            let want = c.interpolate(p.states_seen as f64).unwrap();
            assert_eq!((p.median, p.mean, p.min, p.max, p.std), (want, want, want, want, 0.0));
        }
    }

    #[test]
    fn identical_trials_have_no_spread() {
        let c = curve(0, &[(0, 0.1), (2000, 0.5)]);
        let agg = AggregateCurve::from_curves(&[c.clone(), c], GRID_STEP);
        assert!(agg.points.iter().all(|p| p.std == 0.0 && p.trials == 2));
    }

    #[test]
    fn only_covering_trials_count() {
        let short = curve(0, &[(0, 0.0), (1000, 1.0)]);
        let long = curve(1, &[(0, 0.0), (3000, 0.3)]);
        let agg = AggregateCurve::from_curves(&[short, long], GRID_STEP);
        assert_eq!(agg.at(1000).unwrap().trials, 2);
        assert_eq!(agg.at(2000).unwrap().trials, 1);
        assert!((agg.at(2000).unwrap().median - 0.2).abs() < 1e-12);
        assert!((agg.at(1000).unwrap().median - 0.55).abs() < 1e-12);
    }

    #[test]
    fn statistics() {
        let (median, mean, std, min, max) = summarize(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!((median, mean, min, max), (2.5, 4.0, 1.0, 10.0));
        assert!((std - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
