//! Standardized, window-addressable view of a raw table.
//!
//! Columns are kept at their native resolution (one value per minute or per
//! quarter-hour). Windows are cut on demand, so a sample costs nothing until
//! it is put into a batch.

use serde::{Deserialize, Serialize};

use super::scaler::{deltas, ScalerStats, Stats};
use super::schema::{Channel, Derived, FeatureSchema, Horizon, Resolution};
use super::table::{format_minute, RawTable};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

const YEAR_MINUTES: f64 = 365.25 * 1440.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Si,
    DeltaSi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Absolute minute boundaries (minutes since the Unix epoch). Train covers
/// `[train_start, val_start)`, validation `[val_start, test_start)`, test
/// `[test_start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_start: i64,
    pub val_start: i64,
    pub test_start: i64,
    pub end: i64,
}

impl SplitBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_start < self.val_start && self.val_start < self.test_start && self.test_start < self.end) {
            return Err(Error::Config(format!(
                "split boundaries must be strictly increasing: {} < {} < {} < {}",
                format_minute(self.train_start),
                format_minute(self.val_start),
                format_minute(self.test_start),
                format_minute(self.end)
            )));
        }
        Ok(())
    }

    fn range(&self, part: SplitPart) -> (i64, i64) {
        match part {
            SplitPart::Train => (self.train_start, self.val_start),
            SplitPart::Validation => (self.val_start, self.test_start),
            SplitPart::Test => (self.test_start, self.end),
        }
    }
}

/// A feature whose values only exist from `available_from` on. Its scaler is
/// fit on that tail and earlier values are held at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitedHistory {
    pub feature: String,
    pub available_from: i64,
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub n_c: usize,
    pub n_o: usize,
    pub limited_history: Vec<LimitedHistory>,
    /// Reuse existing statistics instead of fitting on the train split.
    pub scaler: Option<ScalerStats>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            n_c: 15,
            n_o: 3,
            limited_history: Vec::new(),
            scaler: None,
        }
    }
}

#[derive(Clone, Debug)]
struct ChannelData {
    resolution: Resolution,
    horizon: Horizon,
    categorical: bool,
    values: Vec<f64>,
}

/// One model input sample in matrix form.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    /// N_c × N_f, standardized (categorical channels hold codes).
    pub inputs: Tensor2,
    /// Standardized labels for the requested target mode.
    pub label: Vec<f64>,
    pub raw_label: Vec<f64>,
    pub issue_minute: i64,
    pub prev_si: f64,
}

/// Columnar mini-batch. `inputs[c]` is B × N_c for channel c.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Vec<Tensor2>,
    pub labels: Tensor2,
    pub truth: Tensor2,
    pub prev_si: Vec<f64>,
    pub issue_minutes: Vec<i64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.prev_si.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prev_si.is_empty()
    }
}

/// Issue rows of one split plus the number of candidates rejected for
/// missing context.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub rows: Vec<usize>,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    schema: FeatureSchema,
    channels: Vec<Channel>,
    data: Vec<ChannelData>,
    n_c: usize,
    n_o: usize,
    start_minute: i64,
    len: usize,
    si: Vec<f64>,
    si_delta: Vec<f64>,
    broken_prefix: Vec<u32>,
    scaler: ScalerStats,
    bounds: SplitBounds,
}

impl Dataset {
    pub fn prepare(table: &RawTable, schema: &FeatureSchema, bounds: SplitBounds, opts: &PrepareOptions) -> Result<Self> {
        bounds.validate()?;
        schema.validate()?;
        table.check_schema(schema)?;
        if opts.n_c == 0 || opts.n_o == 0 {
            return Err(Error::Config("n_c and n_o must be positive".into()));
        }
        for lh in &opts.limited_history {
            if schema.feature_index(&lh.feature).is_none() {
                return Err(Error::Config(format!("limited-history feature `{}` is not in the schema", lh.feature)));
            }
        }
        let start = table.start_minute;
        let len = table.len();
        let n_qh = len / 15;
        let abs_qh = |q: usize| start + 15 * q as i64;
        let qh_range = |from: i64, to: i64| -> (usize, usize) {
            let lo = ((from - start).max(0) as usize).div_ceil(15).min(n_qh);
            let hi = (((to - start).max(0) as usize) / 15).min(n_qh);
            (lo, hi.max(lo))
        };
        let row_range = |from: i64, to: i64| -> (usize, usize) {
            let lo = ((from - start).max(0) as usize).min(len);
            let hi = ((to - start).max(0) as usize).min(len);
            (lo, hi.max(lo))
        };

        let qh_of = |col: &[f64]| -> Vec<f64> { (0..n_qh).map(|q| col[15 * q]).collect() };
        let target = table
            .column(&schema.target)
            .ok_or_else(|| Error::Schema(format!("missing column `{}`", schema.target)))?;
        let si = qh_of(target);
        let si_delta = deltas(&si);

        let span = (bounds.val_start - bounds.train_start) as f64;
        let channels = schema.channels();
        let mut data = Vec::with_capacity(channels.len());
        for ch in &channels {
            let spec = &schema.features[ch.feature];
            let raw: Vec<f64> = match (spec.derive, spec.resolution) {
                (Some(Derived::QhOfDay), _) => (0..n_qh).map(|q| (abs_qh(q) / 15).rem_euclid(96) as f64).collect(),
                (Some(Derived::MinuteOfHour), _) => (0..len).map(|t| (start + t as i64).rem_euclid(60) as f64).collect(),
                (Some(Derived::YearCosine), _) => (0..n_qh)
                    .map(|q| (std::f64::consts::TAU * abs_qh(q).rem_euclid(YEAR_MINUTES as i64) as f64 / YEAR_MINUTES).cos())
                    .collect(),
                (Some(Derived::Recentness), _) => (0..n_qh)
                    .map(|q| ((abs_qh(q) - bounds.train_start) as f64 / span).clamp(0.0, 1.0))
                    .collect(),
                (None, res) => {
                    let col = table
                        .column(&spec.column)
                        .ok_or_else(|| Error::Schema(format!("missing column `{}`", spec.column)))?;
                    match res {
                        Resolution::Minute => col.to_vec(),
                        Resolution::QuarterHour => qh_of(col),
                    }
                }
            };
            let values = if ch.delta { deltas(&raw) } else { raw };
            data.push(ChannelData {
                resolution: spec.resolution,
                horizon: spec.horizon,
                categorical: ch.vocab.is_some(),
                values,
            });
        }

        // Position (in native units) from which each channel is observed.
        let available: Vec<usize> = channels
            .iter()
            .zip(&data)
            .map(|(ch, d)| {
                let name = &schema.features[ch.feature].name;
                match opts.limited_history.iter().find(|l| &l.feature == name) {
                    None => 0,
                    Some(l) => match d.resolution {
                        Resolution::Minute => row_range(l.available_from, l.available_from).0,
                        Resolution::QuarterHour => qh_range(l.available_from, l.available_from).0,
                    },
                }
            })
            .collect();

        let scaler = match &opts.scaler {
            Some(s) => {
                for ch in &channels {
                    if s.get(&ch.name).is_none() {
                        return Err(Error::Schema(format!("scaler has no statistics for `{}`", ch.name)));
                    }
                }
                s.clone()
            }
            None => {
                let (qlo, qhi) = qh_range(bounds.train_start, bounds.val_start);
                let (rlo, rhi) = row_range(bounds.train_start, bounds.val_start);
                let mut stats = Vec::with_capacity(channels.len());
                for ((ch, d), &avail) in channels.iter().zip(&data).zip(&available) {
                    let (lo, hi) = match d.resolution {
                        Resolution::Minute => (rlo.max(avail), rhi),
                        Resolution::QuarterHour => (qlo.max(avail), qhi),
                    };
                    let slice = &d.values[lo.min(hi)..hi];
                    let s = match d.resolution {
                        Resolution::Minute => Stats::fit(
                            &ch.name,
                            slice.iter().enumerate().filter(|(i, _)| !table.broken[lo + i]).map(|(_, v)| v),
                        )?,
                        Resolution::QuarterHour => Stats::fit(&ch.name, slice)?,
                    };
                    stats.push((ch.name.clone(), s));
                }
                ScalerStats {
                    channels: stats,
                    label_si: Stats::fit(&schema.target, &si[qlo..qhi])?,
                    label_delta: Stats::fit(&format!("{}_delta", schema.target), &si_delta[qlo..qhi])?,
                }
            }
        };

        for ((ch, d), &avail) in channels.iter().zip(data.iter_mut()).zip(&available) {
            let s = scaler.get(&ch.name).expect("checked above");
            for (i, v) in d.values.iter_mut().enumerate() {
                if i < avail {
                    *v = 0.0;
                } else if !d.categorical {
                    *v = s.apply(*v);
                }
            }
        }

        let mut broken_prefix = Vec::with_capacity(len + 1);
        broken_prefix.push(0u32);
        let mut acc = 0u32;
        for &b in &table.broken {
            acc += u32::from(b);
            broken_prefix.push(acc);
        }

        Ok(Dataset {
            schema: schema.clone(),
            channels,
            data,
            n_c: opts.n_c,
            n_o: opts.n_o,
            start_minute: start,
            len,
            si,
            si_delta,
            broken_prefix,
            scaler,
            bounds,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_o(&self) -> usize {
        self.n_o
    }

    pub fn n_f(&self) -> usize {
        self.channels.len()
    }

    pub fn scaler(&self) -> &ScalerStats {
        &self.scaler
    }

    pub fn bounds(&self) -> SplitBounds {
        self.bounds
    }

    pub fn start_minute(&self) -> i64 {
        self.start_minute
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Raw SI of quarter-hour `q` (relative to the table start).
    pub fn si(&self, q: usize) -> f64 {
        self.si[q]
    }

    pub fn label_stats(&self, mode: TargetMode) -> Stats {
        match mode {
            TargetMode::Si => self.scaler.label_si,
            TargetMode::DeltaSi => self.scaler.label_delta,
        }
    }

    /// Whether issue row `t` has complete, unbroken context.
    pub fn is_valid(&self, t: usize) -> bool {
        let k = t / 15;
        if k < self.n_c {
            return false;
        }
        let lo = 15 * (k - self.n_c);
        let hi = 15 * (k + self.n_c.max(self.n_o));
        hi <= self.len && self.broken_prefix[hi] == self.broken_prefix[lo]
    }

    fn part_of(&self, t: usize) -> Option<SplitPart> {
        let issue = self.start_minute + t as i64;
        let label_end = self.start_minute + 15 * (t / 15 + self.n_o) as i64;
        [SplitPart::Train, SplitPart::Validation, SplitPart::Test]
            .into_iter()
            .find(|&p| {
                let (lo, hi) = self.bounds.range(p);
                issue >= lo && issue < hi && label_end <= hi
            })
    }

    /// Issue rows of a split, thinned to roughly one in `stride`. The kept
    /// minute shifts by one every quarter-hour, so every minute-of-Qh offset
    /// is represented whatever the stride (a plain every-k-th rule with k
    /// sharing a factor with 15 would only ever issue at a few offsets).
    pub fn samples(&self, part: SplitPart, stride: usize) -> SampleSet {
        let stride = stride.max(1);
        let mut set = SampleSet::default();
        let (lo, hi) = self.bounds.range(part);
        let first = (lo - self.start_minute).max(0) as usize;
        let last = ((hi - self.start_minute).max(0) as usize).min(self.len);
        for t in first..last {
            if self.part_of(t) != Some(part) {
                continue;
            }
            if !self.is_valid(t) {
                set.skipped += 1;
                continue;
            }
            if (t + t / 15) % stride == 0 {
                set.rows.push(t);
            }
        }
        set
    }

    /// Copy channel `c`'s window for issue row `t` into `out` (length N_c).
    fn fill_window(&self, c: usize, t: usize, out: &mut [f64]) {
        let d = &self.data[c];
        let n = self.n_c;
        let k = t / 15;
        let src = match (d.resolution, d.horizon) {
            (Resolution::Minute, Horizon::Past) => &d.values[t + 1 - n..=t],
            (Resolution::Minute, Horizon::Future) => &d.values[t..t + n],
            (Resolution::QuarterHour, Horizon::Past) => &d.values[k - n..k],
            (Resolution::QuarterHour, Horizon::Future) => &d.values[k..k + n],
        };
        out.copy_from_slice(src);
    }

    fn labels_into(&self, t: usize, mode: TargetMode, label: &mut [f64], truth: &mut [f64]) {
        let k = t / 15;
        let stats = self.label_stats(mode);
        for i in 0..self.n_o {
            truth[i] = self.si[k + i];
            let raw = match mode {
                TargetMode::Si => self.si[k + i],
                TargetMode::DeltaSi => self.si_delta[k + i],
            };
            label[i] = stats.apply(raw);
        }
    }

    pub fn sample(&self, t: usize, mode: TargetMode) -> Result<WindowedSample> {
        if !self.is_valid(t) {
            return Err(Error::Input(format!("issue row {t} lacks complete context")));
        }
        let n_f = self.n_f();
        let mut inputs = Tensor2::zeros(self.n_c, n_f);
        let mut col = vec![0.0; self.n_c];
        for c in 0..n_f {
            self.fill_window(c, t, &mut col);
            for (r, &v) in col.iter().enumerate() {
                inputs.set(r, c, v);
            }
        }
        let mut label = vec![0.0; self.n_o];
        let mut raw_label = vec![0.0; self.n_o];
        self.labels_into(t, mode, &mut label, &mut raw_label);
        Ok(WindowedSample {
            inputs,
            label,
            raw_label,
            issue_minute: self.start_minute + t as i64,
            prev_si: self.si[t / 15 - 1],
        })
    }

    /// Build a batch from valid issue rows. Channels flagged in `zeroed` are
    /// held at 0.
    pub fn batch(&self, rows: &[usize], mode: TargetMode, zeroed: Option<&[bool]>) -> Batch {
        let (n_f, n_c, n_o, b) = (self.n_f(), self.n_c, self.n_o, rows.len());
        let mut inputs = Vec::with_capacity(n_f);
        for c in 0..n_f {
            let mut m = Tensor2::zeros(b, n_c);
            if !zeroed.is_some_and(|z| z[c]) {
                for (i, &t) in rows.iter().enumerate() {
                    self.fill_window(c, t, m.row_mut(i));
                }
            }
            inputs.push(m);
        }
        let mut labels = Tensor2::zeros(b, n_o);
        let mut truth = Tensor2::zeros(b, n_o);
        let mut prev_si = Vec::with_capacity(b);
        let mut issue_minutes = Vec::with_capacity(b);
        let mut l = vec![0.0; n_o];
        let mut s = vec![0.0; n_o];
        for (i, &t) in rows.iter().enumerate() {
            self.labels_into(t, mode, &mut l, &mut s);
            labels.row_mut(i).copy_from_slice(&l);
            truth.row_mut(i).copy_from_slice(&s);
            prev_si.push(self.si[t / 15 - 1]);
            issue_minutes.push(self.start_minute + t as i64);
        }
        Batch {
            inputs,
            labels,
            truth,
            prev_si,
            issue_minutes,
        }
    }

    /// Flags for the channels (base and delta) of the named features.
    pub fn channel_mask(&self, features: &[String]) -> Result<Vec<bool>> {
        for f in features {
            if self.schema.feature_index(f).is_none() {
                return Err(Error::Config(format!("feature `{f}` is not in the schema")));
            }
        }
        Ok(self
            .channels
            .iter()
            .map(|ch| features.iter().any(|f| *f == self.schema.features[ch.feature].name))
            .collect())
    }
}
