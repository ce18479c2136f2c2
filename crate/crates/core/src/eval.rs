//! Forecast scoring: RMSE, CRPS, calibration and stratified reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{crossings, ForecastSet};
use crate::par;

pub const DEFAULT_THRESHOLD: f64 = 500.0;
pub const CRPS_POINTS: usize = 2000;
pub const TAIL_MASS: f64 = 1e-4;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "rmse needs equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Pinball loss of one quantile.
#[inline]
pub fn pinball(q: f64, truth: f64, pred: f64) -> f64 {
    let e = truth - pred;
    if e > 0.0 {
        q * e
    } else {
        (q - 1.0) * e
    }
}

/// Forecast CDF built from quantile points.
///
/// Distinct values become knots of a monotone cubic Hermite interpolant;
/// repeated values become jumps. Outside the outermost knots the CDF decays
/// exponentially with the slope of the adjacent segment, so it stays C¹ at
/// the ends.
#[derive(Clone, Debug)]
pub struct QuantileCdf {
    knots: Vec<f64>,
    /// CDF value just left / right of each knot.
    left: Vec<f64>,
    right: Vec<f64>,
    /// Hermite derivatives at the start and end of each segment.
    d_start: Vec<f64>,
    d_end: Vec<f64>,
    lambda_lo: f64,
    lambda_hi: f64,
}

impl QuantileCdf {
    /// `values` are sorted first; ties become jumps.
    pub fn new(levels: &[f64], values: &[f64]) -> Result<Self> {
        if levels.len() != values.len() || levels.is_empty() {
            return Err(Error::Input("quantile levels and values differ in length".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite quantile forecast".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut knots: Vec<f64> = Vec::new();
        let mut left: Vec<f64> = Vec::new();
        let mut right: Vec<f64> = Vec::new();
        for (&x, &q) in v.iter().zip(levels) {
            if knots.last() == Some(&x) {
                *right.last_mut().expect("same length") = q;
            } else {
                knots.push(x);
                left.push(q);
                right.push(q);
            }
        }
        let m = knots.len();
        if m == 1 {
            // A point mass: the CDF is a step at the single value.
            return Ok(QuantileCdf {
                knots,
                left: vec![0.0],
                right: vec![1.0],
                d_start: Vec::new(),
                d_end: Vec::new(),
                lambda_lo: f64::INFINITY,
                lambda_hi: f64::INFINITY,
            });
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let s: Vec<f64> = (0..m - 1).map(|k| (left[k + 1] - right[k]) / h[k]).collect();
        let mut d_start = s.clone();
        let mut d_end = s.clone();
        for k in 1..m - 1 {
            if left[k] != right[k] {
                continue;
            }
            let (a, b) = (s[k - 1], s[k]);
            let d = if a <= 0.0 || b <= 0.0 {
                0.0
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                (w1 + w2) / (w1 / a + w2 / b)
            };
            d_end[k - 1] = d;
            d_start[k] = d;
        }
        let lambda_lo = s[0] / left[0];
        let lambda_hi = s[m - 2] / (1.0 - right[m - 1]);
        Ok(QuantileCdf {
            knots,
            left,
            right,
            d_start,
            d_end,
            lambda_lo,
            lambda_hi,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Value at `x` inside segment `k` (between knots k and k+1).
    fn segment(&self, k: usize, x: f64) -> f64 {
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (y0, y1) = (self.right[k], self.left[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * h * self.d_start[k] + h01 * y1 + h11 * h * self.d_end[k]
    }

    fn lower_tail(&self, x: f64) -> f64 {
        self.left[0] * (self.lambda_lo * (x - self.knots[0])).exp()
    }

    fn upper_tail(&self, x: f64) -> f64 {
        let m = self.knots.len() - 1;
        1.0 - (1.0 - self.right[m]) * (-self.lambda_hi * (x - self.knots[m])).exp()
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        let m = self.knots.len();
        if x < self.knots[0] {
            return if m == 1 { 0.0 } else { self.lower_tail(x) };
        }
        if x >= self.knots[m - 1] {
            return if m == 1 { 1.0 } else { self.upper_tail(x) };
        }
        let k = self.knots.partition_point(|&u| u <= x) - 1;
        if x == self.knots[k] {
            self.right[k]
        } else {
            self.segment(k, x)
        }
    }

    /// Limit of the CDF approaching `x` from inside the interval (lo, hi).
    fn inside(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let m = self.knots.len();
        let mid = 0.5 * (lo + hi);
        if mid < self.knots[0] {
            return if m == 1 { 0.0 } else { self.lower_tail(x) };
        }
        if mid >= self.knots[m - 1] {
            return if m == 1 { 1.0 } else { self.upper_tail(x) };
        }
        let k = self.knots.partition_point(|&u| u <= mid) - 1;
        self.segment(k, x)
    }

    /// Support cut-offs beyond which each tail holds less than `mass`.
    fn cutoffs(&self, mass: f64) -> (f64, f64) {
        let m = self.knots.len();
        if m == 1 {
            return (self.knots[0], self.knots[0]);
        }
        let lo = if self.left[0] > mass {
            self.knots[0] + (mass / self.left[0]).ln() / self.lambda_lo
        } else {
            self.knots[0]
        };
        let top = 1.0 - self.right[m - 1];
        let hi = if top > mass {
            self.knots[m - 1] - (mass / top).ln() / self.lambda_hi
        } else {
            self.knots[m - 1]
        };
        (lo, hi)
    }

    /// ∫ (F(x) − 1{x ≥ s})² dx with `points` trapezoid nodes over the
    /// truncated support and exact exponential tail remainders.
    pub fn crps(&self, truth: f64, points: usize) -> f64 {
        let (lo, hi) = self.cutoffs(TAIL_MASS);
        let a = lo.min(truth);
        let b = hi.max(truth);
        let mut breaks: Vec<f64> = Vec::with_capacity(self.knots.len() + 4);
        breaks.push(a);
        breaks.extend(self.knots.iter().copied().filter(|&k| k > a && k < b));
        if truth > a && truth < b {
            breaks.push(truth);
        }
        breaks.push(b);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();

        let span = b - a;
        let mut total = 0.0;
        if span > 0.0 {
            for w in breaks.windows(2) {
                let (x0, x1) = (w[0], w[1]);
                let len = x1 - x0;
                if len <= 0.0 {
                    continue;
                }
                let n = ((points as f64 * len / span).ceil() as usize).max(2);
                let step = len / n as f64;
                let heav = if 0.5 * (x0 + x1) >= truth { 1.0 } else { 0.0 };
                let f = |x: f64| {
                    let d = self.inside(x, x0, x1) - heav;
                    d * d
                };
                let mut acc = 0.5 * (f(x0) + f(x1));
                for i in 1..n {
                    acc += f(x0 + step * i as f64);
                }
                total += acc * step;
            }
        }
        if self.knots.len() > 1 {
            // Below a: H = 0, F = F(a) e^{λ(x−a)}; above b: 1 − F decays likewise.
            let fa = self.cdf(a);
            total += fa * fa / (2.0 * self.lambda_lo);
            let gb = 1.0 - self.cdf(b);
            total += gb * gb / (2.0 * self.lambda_hi);
        }
        total
    }
}

/// CRPS of one quantile row against the observed value.
pub fn crps_single(levels: &[f64], values: &[f64], truth: f64) -> Result<f64> {
    if !truth.is_finite() {
        return Err(Error::Input("non-finite observation".into()));
    }
    Ok(QuantileCdf::new(levels, values)?.crps(truth, CRPS_POINTS))
}

/// CRPS of every (sample, horizon) row, sample-major.
pub fn crps_rows(set: &ForecastSet) -> Result<Vec<f64>> {
    let truth = set
        .truth
        .as_ref()
        .ok_or_else(|| Error::Input("forecasts carry no observations".into()))?;
    let n_o = set.n_o;
    par::map_range(set.len() * n_o, |r| crps_single(&set.levels, set.row(r / n_o, r % n_o), truth.data()[r]))
        .into_iter()
        .collect()
}

/// Mean pinball loss in MW over samples, horizons and quantiles.
pub fn quantile_loss_mw(set: &ForecastSet) -> Result<f64> {
    let truth = set
        .truth
        .as_ref()
        .ok_or_else(|| Error::Input("forecasts carry no observations".into()))?;
    if set.is_empty() {
        return Err(Error::Input("no forecasts".into()));
    }
    let mut sum = 0.0;
    for b in 0..set.len() {
        for i in 0..set.n_o {
            let s = truth.get(b, i);
            for (q, v) in set.levels.iter().zip(set.row(b, i)) {
                sum += pinball(*q, s, *v);
            }
        }
    }
    Ok(sum / (set.len() * set.n_o * set.n_q()) as f64)
}

/// Fraction of observations strictly below each quantile forecast.
pub fn calibration(set: &ForecastSet) -> Result<Vec<f64>> {
    let truth = set
        .truth
        .as_ref()
        .ok_or_else(|| Error::Input("forecasts carry no observations".into()))?;
    let rows = set.len() * set.n_o;
    if rows == 0 {
        return Err(Error::Input("no forecasts".into()));
    }
    let mut below = vec![0usize; set.n_q()];
    for b in 0..set.len() {
        for i in 0..set.n_o {
            let s = truth.get(b, i);
            for (c, v) in below.iter_mut().zip(set.row(b, i)) {
                if s < *v {
                    *c += 1;
                }
            }
        }
    }
    Ok(below.into_iter().map(|c| c as f64 / rows as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub crps: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: Metrics,
    /// Rows with |SI| above the threshold; `None` when empty.
    pub conditional: Option<Metrics>,
    /// Rows with |SI| at or below the threshold.
    pub complement: Option<Metrics>,
    /// Index `l − 1` holds lead minute `l`.
    pub per_lead: Vec<Option<Metrics>>,
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    pub crossing_rate: f64,
    pub crossings: usize,
}

fn metrics(idx: &[usize], pred: &[f64], truth: &[f64], crps: &[f64]) -> Option<Metrics> {
    if idx.is_empty() {
        return None;
    }
    let n = idx.len() as f64;
    let sse: f64 = idx.iter().map(|&r| (pred[r] - truth[r]).powi(2)).sum();
    Some(Metrics {
        rmse: (sse / n).sqrt(),
        crps: idx.iter().map(|&r| crps[r]).sum::<f64>() / n,
        count: idx.len(),
    })
}

/// Minutes between issue and the end of horizon `i`'s quarter-hour.
pub fn lead_minute(issue_minute: i64, horizon: usize) -> usize {
    15 * (horizon + 1) - issue_minute.rem_euclid(15) as usize
}

pub fn stratified_report(set: &ForecastSet, threshold: f64) -> Result<EvalReport> {
    let truth_t = set
        .truth
        .as_ref()
        .ok_or_else(|| Error::Input("forecasts carry no observations".into()))?;
    if set.is_empty() {
        return Err(Error::Input("no forecasts to evaluate".into()));
    }
    let crps = crps_rows(set)?;
    let pred = set.medians();
    let (pred, truth) = (pred.data(), truth_t.data());
    let rows = pred.len();
    let all: Vec<usize> = (0..rows).collect();
    let (above, below): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&r| truth[r].abs() > threshold);
    let mut by_lead: Vec<Vec<usize>> = vec![Vec::new(); 15 * set.n_o];
    for r in 0..rows {
        let lead = lead_minute(set.issue_minutes[r / set.n_o], r % set.n_o);
        by_lead[lead - 1].push(r);
    }
    Ok(EvalReport {
        threshold,
        overall: metrics(&all, pred, truth, &crps).expect("non-empty"),
        conditional: metrics(&above, pred, truth, &crps),
        complement: metrics(&below, pred, truth, &crps),
        per_lead: by_lead.iter().map(|idx| metrics(idx, pred, truth, &crps)).collect(),
        levels: set.levels.clone(),
        coverage: calibration(set)?,
        crossing_rate: set.crossing_rate(),
        crossings: set.crossing_count(),
    })
}

impl EvalReport {
    /// Block CSV: overall, conditional, per-lead-minute and coverage.
    pub fn to_csv_blocks(&self, header: &str) -> String {
        let mut s = String::from(header);
        let fmt = |m: &Option<Metrics>| match m {
            Some(m) => format!("{},{},{}", m.rmse, m.crps, m.count),
            None => ",,0".to_string(),
        };
        let _ = writeln!(s, "[overall]\nstratum,rmse_mw,crps_mw,count");
        let _ = writeln!(s, "all,{}", fmt(&Some(self.overall)));
        let _ = writeln!(s, "\n[conditional]\nstratum,rmse_mw,crps_mw,count");
        let _ = writeln!(s, "abs_si_gt_{},{}", self.threshold, fmt(&self.conditional));
        let _ = writeln!(s, "abs_si_le_{},{}", self.threshold, fmt(&self.complement));
        let _ = writeln!(s, "\n[per_lead_minute]\nlead_minute,rmse_mw,crps_mw,count");
        for (l, m) in self.per_lead.iter().enumerate() {
            let _ = writeln!(s, "{},{}", l + 1, fmt(m));
        }
        let _ = writeln!(s, "\n[coverage]\nquantile,coverage");
        for (q, c) in self.levels.iter().zip(&self.coverage) {
            let _ = writeln!(s, "{q},{c}");
        }
        let _ = writeln!(s, "\n[crossing]\ncrossing_rate,crossings");
        let _ = writeln!(s, "{},{}", self.crossing_rate, self.crossings);
        s
    }

    /// Long format: metric,stratum,lead_minute,value.
    pub fn to_long_csv(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("metric,stratum,lead_minute,value\n");
        let mut push = |stratum: &str, lead: &str, m: &Metrics| {
            let _ = writeln!(s, "rmse,{stratum},{lead},{}", m.rmse);
            let _ = writeln!(s, "crps,{stratum},{lead},{}", m.crps);
            let _ = writeln!(s, "count,{stratum},{lead},{}", m.count);
        };
        push("all", "", &self.overall);
        if let Some(m) = &self.conditional {
            push("high_abs_si", "", m);
        }
        if let Some(m) = &self.complement {
            push("low_abs_si", "", m);
        }
        for (l, m) in self.per_lead.iter().enumerate() {
            if let Some(m) = m {
                push("all", &(l + 1).to_string(), m);
            }
        }
        for (q, c) in self.levels.iter().zip(&self.coverage) {
            let _ = writeln!(s, "coverage,q{q},,{c}");
        }
        let _ = writeln!(s, "crossing_rate,all,,{}", self.crossing_rate);
        s
    }

    pub fn write(&self, dir: &Path, stem: &str, header: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv_blocks(header))?;
        std::fs::write(dir.join(format!("{stem}_long.csv")), self.to_long_csv(header))?;
        Ok(())
    }
}

/// Sort a crossing row in place and return how many adjacent pairs were
/// out of order.
pub fn sort_crossing(row: &mut [f64]) -> usize {
    let n = crossings(row);
    row.sort_by(f64::total_cmp);
    n
}
