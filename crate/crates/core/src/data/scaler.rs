//! Standardization statistics fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub const IDENTITY: Stats = Stats { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation of the finite values.
    pub fn fit<'a>(name: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        for &v in values {
            if !v.is_finite() {
                continue;
            }
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        if n == 0 {
            return Err(Error::ZeroVariance(format!("{name} (no training values)")));
        }
        let std = (m2 / n as f64).sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(name.to_string()));
        }
        Ok(Stats { mean, std })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-channel statistics plus one label scaler per target mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub channels: Vec<(String, Stats)>,
    pub label_si: Stats,
    pub label_delta: Stats,
}

impl ScalerStats {
    pub fn get(&self, channel: &str) -> Option<Stats> {
        self.channels.iter().find(|(n, _)| n == channel).map(|(_, s)| *s)
    }
}

/// Δv_t = v_t − v_{t−1}, first delta 0. A missing predecessor also gives 0.
pub fn deltas(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev = None;
    for &v in values {
        out.push(match prev {
            Some(p) if f64::is_finite(p) => v - p,
            _ => 0.0,
        });
        prev = Some(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_column() {
        let s = Stats::fit("x", &[0.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.std), (5.0, 5.0));
        assert_eq!([s.apply(0.0), s.apply(10.0)], [-1.0, 1.0]);
    }

    #[test]
    fn constant_column_is_rejected_by_name() {
        let err = Stats::fit("flat", &[3.0; 10]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(ref c) if c == "flat"));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(deltas(&[5.0, 7.0, 7.0, 4.0]), vec![0.0, 2.0, 0.0, -3.0]);
        assert!(deltas(&[2.5; 6]).iter().all(|&d| d == 0.0));
    }

    proptest! {
        #[test]
        fn standardized_moments(xs in proptest::collection::vec(-1e4f64..1e4, 3..200)) {
            prop_assume!(Stats::fit("x", &xs).is_ok());
            let s = Stats::fit("x", &xs).unwrap();
            let z: Vec<f64> = xs.iter().map(|&v| s.apply(v)).collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-9);
            for (&x, &zz) in xs.iter().zip(&z) {
                prop_assert!((s.invert(zz) - x).abs() <= 1e-12 * x.abs().max(s.mean.abs()).max(1.0));
            }
        }

        #[test]
        fn delta_matches_shift_subtract(xs in proptest::collection::vec(-1e3f64..1e3, 1..100)) {
            let d = deltas(&xs);
            prop_assert_eq!(d[0], 0.0);
            for i in 1..xs.len() {
                prop_assert_eq!(d[i], xs[i] - xs[i - 1]);
            }
        }
    }
}
