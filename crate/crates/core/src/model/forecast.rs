//! Quantile forecasts in MW.

use serde::{Deserialize, Serialize};

use crate::data::{Stats, TargetMode};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub const QUANTILES: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

/// One sample's forecast: `values[i][j]` is the level-`j` quantile of
/// horizon `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub issue_minute: i64,
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub crossings: usize,
}

impl QuantileForecast {
    pub fn median(&self, horizon: usize) -> f64 {
        let j = median_index(&self.levels);
        self.values[horizon][j]
    }
}

pub(crate) fn median_index(levels: &[f64]) -> usize {
    levels
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map_or(0, |(i, _)| i)
}

/// Forecasts for many samples, row `b` laid out horizon-major
/// (`i * n_q + j`).
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSet {
    pub levels: Vec<f64>,
    pub n_o: usize,
    pub issue_minutes: Vec<i64>,
    pub values: Tensor2,
    /// Observed SI per sample and horizon, when known.
    pub truth: Option<Tensor2>,
}

impl ForecastSet {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn n_q(&self) -> usize {
        self.levels.len()
    }

    pub fn row(&self, b: usize, horizon: usize) -> &[f64] {
        let n_q = self.n_q();
        &self.values.row(b)[horizon * n_q..(horizon + 1) * n_q]
    }

    pub fn get(&self, b: usize) -> QuantileForecast {
        let values: Vec<Vec<f64>> = (0..self.n_o).map(|i| self.row(b, i).to_vec()).collect();
        let crossings = values.iter().map(|r| crossings(r)).sum();
        QuantileForecast {
            issue_minute: self.issue_minutes[b],
            levels: self.levels.clone(),
            values,
            crossings,
        }
    }

    /// Point forecasts (the median quantile), B × n_o.
    pub fn medians(&self) -> Tensor2 {
        let j = median_index(&self.levels);
        let mut out = Tensor2::zeros(self.len(), self.n_o);
        for b in 0..self.len() {
            for i in 0..self.n_o {
                out.set(b, i, self.row(b, i)[j]);
            }
        }
        out
    }

    /// Total number of adjacent quantile pairs in decreasing order.
    pub fn crossing_count(&self) -> usize {
        (0..self.len())
            .flat_map(|b| (0..self.n_o).map(move |i| (b, i)))
            .map(|(b, i)| crossings(self.row(b, i)))
            .sum()
    }

    /// Fraction of (sample, horizon) rows with at least one crossing.
    pub fn crossing_rate(&self) -> f64 {
        let rows = self.len() * self.n_o;
        if rows == 0 {
            return 0.0;
        }
        let crossed = (0..self.len())
            .flat_map(|b| (0..self.n_o).map(move |i| (b, i)))
            .filter(|&(b, i)| crossings(self.row(b, i)) > 0)
            .count();
        crossed as f64 / rows as f64
    }

    /// Per-quantile mean over several sets with identical layout.
    pub fn average(sets: &[ForecastSet]) -> Result<ForecastSet> {
        let first = sets.first().ok_or_else(|| Error::Input("no forecasts to average".into()))?;
        let mut sum = Tensor2::zeros(first.values.rows(), first.values.cols());
        for s in sets {
            if s.values.shape() != first.values.shape() || s.levels != first.levels || s.issue_minutes != first.issue_minutes {
                return Err(Error::shape(
                    "forecast_average",
                    format!("{:?}", first.values.shape()),
                    format!("{:?}", s.values.shape()),
                ));
            }
            sum.add_assign(&s.values);
        }
        sum.scale(1.0 / sets.len() as f64);
        Ok(ForecastSet {
            values: sum,
            ..first.clone()
        })
    }
}

pub fn crossings(row: &[f64]) -> usize {
    row.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Standardized network output to SI quantiles in MW. ΔSI outputs are
/// summed onto the last observed quarter-hour, per quantile.
pub fn to_mw(out: &Tensor2, n_o: usize, mode: TargetMode, stats: Stats, prev_si: &[f64]) -> Result<Tensor2> {
    let (b, width) = out.shape();
    if width % n_o != 0 || prev_si.len() != b {
        return Err(Error::shape("to_mw", format!("{b}x(k*{n_o})"), format!("{b}x{width}")));
    }
    let n_q = width / n_o;
    let mut mw = Tensor2::zeros(b, width);
    for r in 0..b {
        let src = out.row(r);
        let dst = mw.row_mut(r);
        match mode {
            TargetMode::Si => {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = stats.invert(s);
                }
            }
            TargetMode::DeltaSi => {
                for j in 0..n_q {
                    let mut level = prev_si[r];
                    for i in 0..n_o {
                        level += stats.invert(src[i * n_q + j]);
                        dst[i * n_q + j] = level;
                    }
                }
            }
        }
    }
    Ok(mw)
}
