//! Sampled time series and linear resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real samples on a strictly increasing, possibly non-uniform mesh.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                found: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("time mesh must be strictly increasing".into()));
        }
        Ok(TimeSeries { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, value: f64) {
        self.times.push(t);
        self.values.push(value);
    }

    /// Linear interpolation; errors outside the sampled interval.
    pub fn at(&self, t: f64) -> Result<f64> {
        interpolate(&self.times, &self.values, t)
    }

    pub fn resample(&self, mesh: &[f64]) -> Result<Vec<f64>> {
        mesh.iter().map(|&t| self.at(t)).collect()
    }
}

/// `0, step, 2 step, ...` up to `t_max`; the last point is `t_max` when it is a multiple of `step`.
pub fn uniform_mesh(t_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Precondition(format!("invalid mesh: t_max {t_max}, step {step}")));
    }
    let n = (t_max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

/// Linear interpolation of `(times, values)` at `t`, tolerating round-off at the ends.
pub fn interpolate(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let n = times.len();
    if n == 0 || n != values.len() {
        return Err(Error::Precondition("cannot interpolate an empty series".into()));
    }
    let slack = 1e-9 * times[n - 1].abs().max(1.0);
    if t < times[0] - slack || t > times[n - 1] + slack {
        return Err(Error::Precondition(format!(
            "time {t} outside sampled interval [{}, {}]",
            times[0],
            times[n - 1]
        )));
    }
    if n == 1 || t <= times[0] {
        return Ok(values[0]);
    }
    if t >= times[n - 1] {
        return Ok(values[n - 1]);
    }
    let hi = times.partition_point(|&s| s <= t).min(n - 1);
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    Ok(values[lo] + w * (values[hi] - values[lo]))
}

/// True when consecutive spacings agree to a relative `1e-9`.
pub fn is_uniform(times: &[f64]) -> bool {
    if times.len() < 2 {
        return true;
    }
    let step = times[1] - times[0];
    step > 0.0
        && times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_lines() {
        let s = TimeSeries::new(vec![0.0, 0.3, 1.0], vec![1.0, 1.6, 3.0]).unwrap();
        assert!((s.at(0.65).unwrap() - 2.3).abs() < 1e-14);
        assert_eq!(s.at(0.0).unwrap(), 1.0);
        assert_eq!(s.at(1.0).unwrap(), 3.0);
        assert!(s.at(1.1).is_err());
    }

    #[test]
    fn mesh_endpoints() {
        let m = uniform_mesh(10.0, 0.02).unwrap();
        assert_eq!(m.len(), 501);
        assert!((m[500] - 10.0).abs() < 1e-12);
        assert!(is_uniform(&m));
        assert!(!is_uniform(&[0.0, 0.1, 0.3]));
    }

    #[test]
    fn rejects_unsorted() {
        assert!(TimeSeries::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }
}
