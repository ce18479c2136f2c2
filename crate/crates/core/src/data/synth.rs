//! Synthetic imbalance data with a known generating process.
//!
//! Per quarter-hour q:
//!
//! ```text
//! SI_q = seasonal(q) + holiday_q·h + a_q + β·x_q + β_Δ·Δx_q
//!        + κ·(γ·x_q·z_q + θ·(|z_q| − E|z|)) + β_u·u_q
//! a_q  = φ·a_{q−1} + shock_q
//! ```
//!
//! `x` (cross-border flow) and `z` (asset schedule) are known one Qh ahead,
//! `wind_forecast` is a pure-noise covariate and `u` is an optional asset
//! signal that may only be recorded for the tail of the series. Shocks are
//! Gaussian or Student-t. Minute SI scatters around the Qh value with zero
//! mean inside each quarter-hour, plus measurement noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::schema::{Derived, FeatureGroup, FeatureSchema, FeatureSpec, Horizon, Resolution};
use super::table::{parse_minute, RawTable};
use crate::error::{Error, Result};

/// E|z| for z ~ N(0, 1).
const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FutureAsset {
    /// MW per unit of the signal.
    pub scale: f64,
    /// First day on which the signal is recorded; earlier cells are empty.
    #[serde(default)]
    pub available_from_day: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub start: String,
    pub days: usize,
    pub seed: u64,
    pub heavy_tails: bool,
    pub tail_dof: f64,
    /// Standard deviation of the latent innovation in MW.
    pub shock_scale: f64,
    /// Extra multiplier on Student-t shocks.
    pub tail_scale: f64,
    pub ar_coef: f64,
    pub seasonal_amplitude: f64,
    pub holiday_effect: f64,
    pub holiday_every_days: usize,
    pub minute_noise: f64,
    pub measurement_noise: f64,
    pub driver_scale: f64,
    pub delta_scale: f64,
    pub nonlinearity: f64,
    pub interaction_scale: f64,
    pub threshold_scale: f64,
    pub future_asset: Option<FutureAsset>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            start: "2023-01-01T00:00".into(),
            days: 28,
            seed: 7,
            heavy_tails: true,
            tail_dof: 2.5,
            shock_scale: 25.0,
            tail_scale: 3.0,
            ar_coef: 0.9,
            seasonal_amplitude: 60.0,
            holiday_effect: 40.0,
            holiday_every_days: 17,
            minute_noise: 25.0,
            measurement_noise: 5.0,
            driver_scale: 60.0,
            delta_scale: 40.0,
            nonlinearity: 1.0,
            interaction_scale: 45.0,
            threshold_scale: 60.0,
            future_asset: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("synthetic.days must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ar_coef.abs()) {
            return Err(Error::Config("synthetic.ar_coef must lie in (-1, 1)".into()));
        }
        if self.heavy_tails && self.tail_dof <= 2.0 {
            return Err(Error::Config("synthetic.tail_dof must exceed 2".into()));
        }
        if self.holiday_every_days < 2 {
            return Err(Error::Config("synthetic.holiday_every_days must be at least 2".into()));
        }
        let start = parse_minute(&self.start).map_err(Error::Config)?;
        if start.rem_euclid(15) != 0 {
            return Err(Error::Config("synthetic.start must be a quarter-hour".into()));
        }
        Ok(())
    }

    pub fn start_minute(&self) -> Result<i64> {
        parse_minute(&self.start).map_err(Error::Config)
    }

    /// Schema matching the generated columns.
    pub fn schema(&self) -> FeatureSchema {
        use FeatureGroup as G;
        use Horizon::{Future, Past};
        use Resolution::{Minute, QuarterHour as Qh};
        let f = FeatureSpec::new;
        let mut v = vec![
            f("si_qh_past", G::SiNrv, Qh, Past, true).with_column("si_qh"),
            f("si_min_past", G::SiNrv, Minute, Past, true).with_column("si_min"),
            f("cross_border_past", G::CrossBorder, Qh, Past, true).with_column("cross_border"),
            f("cross_border_next", G::CrossBorder, Qh, Future, true).with_column("cross_border"),
            f("asset_schedule_next", G::Asset, Qh, Future, true).with_column("asset_schedule"),
        ];
        if self.future_asset.is_some() {
            v.push(f("future_asset_next", G::Asset, Qh, Future, false).with_column("future_asset"));
        }
        v.extend([
            FeatureSpec::derived("qh_of_day", Derived::QhOfDay),
            FeatureSpec::derived("minute_of_hour", Derived::MinuteOfHour),
            FeatureSpec::derived("year_cosine", Derived::YearCosine),
            f("holiday", G::Time, Qh, Future, false).binary(),
            FeatureSpec::derived("recentness", Derived::Recentness),
            f("wind_forecast_next", G::WindForecast, Qh, Future, true).with_column("wind_forecast"),
        ]);
        FeatureSchema::new("si_qh", v).expect("synthetic schema is valid")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub schema: FeatureSchema,
    pub table: RawTable,
    /// Quarter-hour SI in MW (equal to the `si_qh` column).
    pub si: Vec<f64>,
}

impl SyntheticData {
    /// Write `<stem>.csv`, `<stem>.schema` and the parameter sidecar
    /// `<stem>.synthetic.toml`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let schema = dir.join(format!("{stem}.schema"));
        let sidecar = dir.join(format!("{stem}.synthetic.toml"));
        self.table.write_csv(&csv)?;
        self.schema.save(&schema)?;
        let text = toml::to_string(&self.spec).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&sidecar, text)?;
        Ok(vec![csv, schema, sidecar])
    }
}

fn ar_step(rng: &mut ChaCha8Rng, prev: f64, phi: f64) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    phi * prev + (1.0 - phi * phi).sqrt() * e
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let start = spec.start_minute()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_qh = spec.days * 96;
    let len = n_qh * 15;
    let t_dist = StudentT::new(spec.tail_dof.max(2.5)).map_err(|e| Error::Config(e.to_string()))?;
    let t_unit = ((spec.tail_dof - 2.0) / spec.tail_dof).max(0.0).sqrt();
    let holiday_offset = rng.random_range(0..spec.holiday_every_days);

    let mut si = Vec::with_capacity(n_qh);
    let mut xs = Vec::with_capacity(n_qh);
    let mut zs = Vec::with_capacity(n_qh);
    let mut ws = Vec::with_capacity(n_qh);
    let mut us = Vec::with_capacity(n_qh);
    let mut hol = Vec::with_capacity(n_qh);
    let (mut x, mut z, mut w, mut u, mut a) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let dx_std = (2.0 * (1.0 - 0.97f64)).sqrt();
    for q in 0..n_qh {
        let x_prev = x;
        x = ar_step(&mut rng, x, 0.97);
        z = ar_step(&mut rng, z, 0.6);
        w = ar_step(&mut rng, w, 0.95);
        u = ar_step(&mut rng, u, 0.3);
        let shock = if spec.heavy_tails {
            let t: f64 = t_dist.sample(&mut rng);
            spec.shock_scale * spec.tail_scale * t_unit * t
        } else {
            let e: f64 = StandardNormal.sample(&mut rng);
            spec.shock_scale * e
        };
        a = spec.ar_coef * a + shock;

        let abs_min = start + 15 * q as i64;
        let day = abs_min.div_euclid(1440);
        let tod = abs_min.rem_euclid(1440) as f64 / 1440.0;
        let holiday = f64::from(u8::from((day + holiday_offset as i64).rem_euclid(spec.holiday_every_days as i64) == 0));
        let seasonal = spec.seasonal_amplitude
            * ((std::f64::consts::TAU * tod).sin() + 0.6 * (2.0 * std::f64::consts::TAU * tod + 1.0).sin());
        let dx = if q == 0 { 0.0 } else { (x - x_prev) / dx_std };
        let nonlinear = spec.interaction_scale * x * z + spec.threshold_scale * (z.abs() - MEAN_ABS_NORMAL);
        let asset = spec.future_asset.as_ref().map_or(0.0, |f| f.scale * u);
        si.push(
            seasonal
                + holiday * spec.holiday_effect
                + a
                + spec.driver_scale * x
                + spec.delta_scale * dx
                + spec.nonlinearity * nonlinear
                + asset,
        );
        xs.push(x);
        zs.push(z);
        ws.push(w);
        us.push(u);
        hol.push(holiday);
    }

    let mut si_min = Vec::with_capacity(len);
    let mut dev = [0.0; 15];
    for &s in &si {
        for d in dev.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *d = spec.minute_noise * e;
        }
        let mean = dev.iter().sum::<f64>() / 15.0;
        for d in dev {
            let e: f64 = StandardNormal.sample(&mut rng);
            si_min.push(s + d - mean + spec.measurement_noise * e);
        }
    }

    let per_minute = |v: &[f64]| -> Vec<f64> { v.iter().flat_map(|&x| std::iter::repeat_n(x, 15)).collect() };
    let mut columns = vec!["si_qh".to_string(), "si_min".into(), "cross_border".into(), "asset_schedule".into()];
    let mut values = vec![per_minute(&si), si_min, per_minute(&xs), per_minute(&zs)];
    if let Some(fa) = &spec.future_asset {
        let mut col = per_minute(&us);
        if let Some(day) = fa.available_from_day {
            let cut = (day * 1440).min(len);
            col[..cut].iter_mut().for_each(|v| *v = f64::NAN);
        }
        columns.push("future_asset".into());
        values.push(col);
    }
    columns.push("holiday".into());
    values.push(per_minute(&hol));
    columns.push("wind_forecast".into());
    values.push(per_minute(&ws));

    let table = RawTable::new(start, columns, values)?;
    Ok(SyntheticData {
        spec: spec.clone(),
        schema: spec.schema(),
        table,
        si,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac_above(si: &[f64], thr: f64) -> f64 {
        si.iter().filter(|v| v.abs() > thr).count() as f64 / si.len() as f64
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_seed_same_table() {
        let spec = SyntheticSpec { days: 3, ..SyntheticSpec::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.table, b.table);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn tail_fraction_depends_on_heavy_tail_switch() {
        let spec = SyntheticSpec { days: 180, ..SyntheticSpec::default() };
        let heavy = generate_synthetic(&spec).unwrap();
        let f = frac_above(&heavy.si, 500.0);
        assert!((0.01..=0.02).contains(&f), "heavy-tail fraction {f}");
        let light = generate_synthetic(&SyntheticSpec { heavy_tails: false, ..spec }).unwrap();
        let f = frac_above(&light.si, 500.0);
        assert!(f < 0.001, "gaussian fraction {f}");
    }

    #[test]
    fn predictive_covariate_correlates_with_next_qh() {
        let d = generate_synthetic(&SyntheticSpec { days: 60, ..SyntheticSpec::default() }).unwrap();
        let x: Vec<f64> = (0..d.si.len()).map(|q| d.table.column("cross_border").unwrap()[15 * q]).collect();
        let w: Vec<f64> = (0..d.si.len()).map(|q| d.table.column("wind_forecast").unwrap()[15 * q]).collect();
        let n = d.si.len();
        // The value published for the next quarter-hour against its imbalance.
        let c = corr(&x[1..], &d.si[1..n]);
        assert!(c.abs() > 0.3, "driver correlation {c}");
        assert!(corr(&w[1..], &d.si[1..n]).abs() < 0.1);
    }

    #[test]
    fn minute_values_average_to_quarter_hour() {
        let spec = SyntheticSpec { days: 2, measurement_noise: 0.0, ..SyntheticSpec::default() };
        let d = generate_synthetic(&spec).unwrap();
        let m = d.table.column("si_min").unwrap();
        for q in 0..d.si.len() {
            let avg = m[15 * q..15 * q + 15].iter().sum::<f64>() / 15.0;
            assert!((avg - d.si[q]).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_table_matches_its_schema() {
        let spec = SyntheticSpec {
            days: 2,
            future_asset: Some(FutureAsset { scale: 50.0, available_from_day: Some(1) }),
            ..SyntheticSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        d.table.check_schema(&d.schema).unwrap();
        d.table.validate_quarter_hours(&d.schema).unwrap();
        let fa = d.table.column("future_asset").unwrap();
        assert!(fa[..1440].iter().all(|v| v.is_nan()));
        assert!(fa[1440..].iter().all(|v| v.is_finite()));
    }
}
