use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Cumulative training transitions, e-stop transitions included.
    pub states_seen: u64,
    /// Return of the evaluated policy in the full environment.
    pub eval_return: f64,
    /// Return of the same policy in the environment it was trained on.
    pub eval_return_train: f64,
}

/// Evaluated return against training experience.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            points: Vec::new(),
        }
    }

    /// Appends a point; a point at an already-recorded `states_seen` replaces
    /// the last one so the x-axis stays strictly increasing.
    pub fn push(&mut self, states_seen: u64, eval_return: f64, eval_return_train: f64) {
        let point = CurvePoint {
            states_seen,
            eval_return,
            eval_return_train,
        };
        match self.points.last_mut() {
            Some(last) if last.states_seen >= states_seen => *last = point,
            _ => self.points.push(point),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean `eval_return` over the final `fraction` of points (at least one).
    pub fn asymptote(&self, fraction: f64) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let k = ((self.points.len() as f64 * fraction).ceil() as usize).clamp(1, self.points.len());
        let tail = &self.points[self.points.len() - k..];
        Some(tail.iter().map(|p| p.eval_return).sum::<f64>() / k as f64)
    }

    /// First `states_seen` at which `eval_return >= threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.points
            .iter()
            .find(|p| p.eval_return >= threshold)
            .map(|p| p.states_seen)
    }

    /// Steps until the curve first reaches `level` times its own asymptote
    /// (the mean of the last 10% of points).
    pub fn steps_to_asymptote_fraction(&self, level: f64) -> Option<u64> {
        self.first_reaching(level * self.asymptote(0.1)?)
    }

    /// Linear interpolation of `eval_return`; `None` outside the sampled range.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        let first = self.points.first()?;
        let last = self.points.last()?;
        if x < first.states_seen as f64 || x > last.states_seen as f64 {
            return None;
        }
        let idx = self.points.partition_point(|p| (p.states_seen as f64) < x);
        let hi = self.points[idx];
        if hi.states_seen as f64 == x || idx == 0 {
            return Some(hi.eval_return);
        }
        let lo = self.points[idx - 1];
        let w = (x - lo.states_seen as f64) / (hi.states_seen - lo.states_seen) as f64;
        Some(lo.eval_return + w * (hi.eval_return - lo.eval_return))
    }

    /// CSV rows `states_seen,eval_return,seed`, with header when `header`.
    pub fn write_csv(&self, writer: impl Write, header: bool) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if header {
            w.write_record(["states_seen", "eval_return", "seed"])?;
        }
        for p in &self.points {
            w.write_record([p.states_seen.to_string(), p.eval_return.to_string(), self.seed.to_string()])?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(xs: &[(u64, f64)]) -> LearningCurve {
        let mut c = LearningCurve::new(7);
        for &(x, y) in xs {
            c.push(x, y, y);
        }
        c
    }

    #[test]
    fn interpolation_hits_samples_exactly() {
        let c = curve(&[(0, 0.0), (10, 1.0), (30, 0.5)]);
        assert_eq!(c.interpolate(10.0), Some(1.0));
        assert_eq!(c.interpolate(0.0), Some(0.0));
        assert_eq!(c.interpolate(5.0), Some(0.5));
        assert_eq!(c.interpolate(20.0), Some(0.75));
        assert_eq!(c.interpolate(31.0), None);
    }

    #[test]
    fn push_keeps_x_strictly_increasing() {
        let c = curve(&[(0, 0.0), (0, 0.2), (5, 0.1)]);
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[0].eval_return, 0.2);
    }

    #[test]
    fn asymptote_and_threshold() {
        let pts: Vec<(u64, f64)> = (0..20).map(|i| (i * 10, (i as f64 / 10.0).min(1.0))).collect();
        let c = curve(&pts);
        assert_eq!(c.asymptote(0.1), Some(1.0));
        assert_eq!(c.steps_to_asymptote_fraction(0.9), Some(90));
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        curve(&[(0, 0.0), (3, 0.25)]).write_csv(&mut out, true).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "states_seen,eval_return,seed\n0,0,7\n3,0.25,7\n");
    }
}
