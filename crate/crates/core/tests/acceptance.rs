//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails.
//!
//! `cargo test -p cvsn --test acceptance -- 6 9` runs only criteria 6 and 9.
//! Training criteria run at desk scale by default (180 synthetic days,
//! every 5th training issue minute, every 7th evaluation minute). Set
//! `CVSN_ACCEPTANCE_FULL=1` to use every issue minute.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cvsn::checkpoint::{AnyModel, Checkpoint};
use cvsn::data::{
    deltas, generate_synthetic, Dataset, Derived, FeatureSchema, FutureAsset, Horizon, LimitedHistory, PrepareOptions,
    Resolution, SplitBounds, SplitPart, SyntheticData, SyntheticSpec, TargetMode,
};
use cvsn::ensemble::{build_ensemble, ensemble_predict, member_forecasts, EnsembleSpec, Member};
use cvsn::eval;
use cvsn::model::{predict, CvsnConfig, CvsnModel, ForecastSet, LinearConfig, LinearQuantileModel, Network, QUANTILES};
use cvsn::nn::{Parameters, Tensor2};
use cvsn::training::{finetune, loss_weight, quantile_loss, train, FinetuneConfig, TrainConfig, TrainData};

const DAY: i64 = 1440;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug)]
struct Scale {
    days: usize,
    test_days: usize,
    val_days: usize,
    train_stride: usize,
    eval_stride: usize,
    epochs: usize,
}

fn scale() -> Scale {
    let full = std::env::var("CVSN_ACCEPTANCE_FULL").is_ok_and(|v| !v.is_empty() && v != "0");
    Scale {
        days: 180,
        test_days: 30,
        val_days: 20,
        train_stride: if full { 1 } else { 5 },
        eval_stride: if full { 1 } else { 7 },
        epochs: 10,
    }
}

/// A synthetic table cut into train, validation and a final held-out month.
struct Scenario {
    data: SyntheticData,
    schema: FeatureSchema,
    bounds: SplitBounds,
    ds: Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Drops the two calendar-trend features. On a stationary synthetic process
/// they only tell the model where in the series a sample sits, which the
/// test month never sees during training.
fn stationary_schema(schema: &FeatureSchema) -> FeatureSchema {
    let kept = schema
        .features
        .iter()
        .filter(|f| !matches!(f.derive, Some(Derived::Recentness | Derived::YearCosine)))
        .cloned()
        .collect();
    FeatureSchema::new(&schema.target, kept).expect("subset of a valid schema")
}

impl Scenario {
    fn new(spec: SyntheticSpec, sc: Scale) -> Scenario {
        let data = generate_synthetic(&spec).expect("valid synthetic spec");
        let schema = stationary_schema(&data.schema);
        let s = data.table.start_minute;
        let days = spec.days as i64;
        let bounds = SplitBounds {
            train_start: s,
            val_start: s + (days - (sc.test_days + sc.val_days) as i64) * DAY,
            test_start: s + (days - sc.test_days as i64) * DAY,
            end: s + days * DAY,
        };
        let ds = Dataset::prepare(&data.table, &schema, bounds, &PrepareOptions::default()).expect("prepare");
        let train = ds.samples(SplitPart::Train, sc.train_stride).rows;
        let val = ds.samples(SplitPart::Validation, sc.eval_stride).rows;
        let test = ds.samples(SplitPart::Test, sc.eval_stride).rows;
        Scenario { data, schema, bounds, ds, train, val, test }
    }

    fn train_data(&self) -> TrainData<'_> {
        TrainData { ds: &self.ds, train: self.train.clone(), validation: self.val.clone(), zeroed: None }
    }
}

fn base_train(sc: Scale, seed: u64, c: f64) -> TrainConfig {
    TrainConfig { epochs: sc.epochs, seed, loss_weight: c, ..TrainConfig::default() }
}

fn fit_cvsn(data: &TrainData, target: TargetMode, seed: u64, c: f64, sc: Scale) -> CvsnModel {
    let mut m = CvsnModel::new(CvsnConfig::for_dataset(data.ds, target), seed).expect("model");
    train(&mut m, data, &base_train(sc, seed, c), None).expect("training");
    m
}

fn fit_linear(data: &TrainData, seed: u64, sc: Scale) -> LinearQuantileModel {
    let mut m = LinearQuantileModel::new(LinearConfig::for_dataset(data.ds, TargetMode::Si), seed).expect("model");
    train(&mut m, data, &base_train(sc, seed, 0.0), None).expect("training");
    m
}

fn mean_crps(set: &ForecastSet) -> f64 {
    mean(&eval::crps_rows(set).expect("crps"))
}

// --- analytic criteria -----------------------------------------------------

fn bump(m: &mut CvsnModel, mut i: usize, by: f64) {
    for (_, t) in m.named_params_mut() {
        if i < t.len() {
            t.data_mut()[i] += by;
            return;
        }
        i -= t.len();
    }
}

fn gradient_check() -> Outcome {
    // 6 numeric channels and the two categorical time channels
    let vocabs = vec![None, None, None, Some(96), None, None, Some(60), None];
    let mut cfg = CvsnConfig::new(5, 3, vocabs.clone(), TargetMode::Si);
    cfg.hidden = 4;
    cfg.inner = 8;
    cfg.dropout = 0.0;
    let m = CvsnModel::new(cfg, 2024).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let b = 6;
    let inputs: Vec<Tensor2> = vocabs
        .iter()
        .map(|v| {
            let data = (0..b * 5)
                .map(|_| match v {
                    Some(n) => rng.random_range(0..*n) as f64,
                    None => StandardNormal.sample(&mut rng),
                })
                .collect();
            Tensor2::from_vec(b, 5, data).expect("shape")
        })
        .collect();
    let (out, tape) = m.forward_train(&inputs, None).map_err(|e| e.to_string())?;
    let r = Tensor2::from_vec(out.rows(), out.cols(), (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape");
    let objective = |mm: &CvsnModel| -> f64 {
        let o = mm.infer(&inputs).expect("forward");
        o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut grad = m.zeroed();
    m.backward(&tape, &r, &mut grad).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grad.named_params().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    // Embedding rows of codes absent from the batch have zero gradient on
    // both sides; sample only parameters that the batch touches.
    let touched: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let n = 250.min(touched.len());
    for _ in 0..n {
        let i = touched[rng.random_range(0..touched.len())];
        let (mut plus, mut minus) = (m.clone(), m.clone());
        bump(&mut plus, i, eps);
        bump(&mut minus, i, -eps);
        let num = (objective(&plus) - objective(&minus)) / (2.0 * eps);
        let a = analytic[i];
        let rel = (num - a).abs() / num.abs().max(a.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    check(
        n >= 200 && worst < 1e-4,
        format!("{n} of {} parameters sampled, max relative error {worst:.2e}", analytic.len()),
    )
}

fn median_loss_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (b, n_o) = (rng.random_range(1..50), rng.random_range(1..4));
        let pred: Vec<f64> = (0..b * n_o).map(|_| rng.random_range(-5.0..5.0)).collect();
        let labels: Vec<f64> = (0..b * n_o).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mae = pred.iter().zip(&labels).map(|(p, s)| (p - s).abs()).sum::<f64>() / (b * n_o) as f64;
        let l = quantile_loss(
            &Tensor2::from_vec(b, n_o, pred).expect("shape"),
            &Tensor2::from_vec(b, n_o, labels).expect("shape"),
            &[0.5],
            0.0,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((l - 0.5 * mae).abs());
    }
    check(worst <= 1e-12, format!("max |L - MAE/2| = {worst:.1e}"))
}

fn weight_curve() -> Outcome {
    let w0 = loss_weight(0.0, 0.1);
    let w = loss_weight(62f64.sqrt(), 0.1);
    check(w0 == 1.0 && (w - 7.2).abs() <= 1e-12, format!("w(0) = {w0}, w(sqrt 62) = {w}"))
}

fn degenerate_crps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let v = rng.random_range(-1000.0..1000.0);
        let s = v + rng.random_range(1.0..500.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let c = eval::crps_single(&QUANTILES, &[v; 9], s).map_err(|e| e.to_string())?;
        worst = worst.max((c - (v - s).abs()).abs() / (v - s).abs());
    }
    check(worst <= 0.01, format!("max relative deviation from |v - s|: {worst:.2e}"))
}

fn uniform_crps_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a: f64 = rng.random_range(-500.0..500.0);
        let b = a + rng.random_range(1.0..800.0);
        let s = rng.random_range(a..b);
        let values: Vec<f64> = QUANTILES.iter().map(|q| a + q * (b - a)).collect();
        let c = eval::crps_single(&QUANTILES, &values, s).map_err(|e| e.to_string())?;
        let e = ((s - a).powi(3) + (b - s).powi(3)) / (3.0 * (b - a).powi(2));
        worst = worst.max((c - e).abs() / e);
    }
    check(worst <= 1e-3, format!("max relative error vs closed form {worst:.2e}"))
}

// --- shared ensemble -----------------------------------------------------

struct Shared {
    scenario: Scenario,
    members: Vec<Member<CvsnModel>>,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = scale();
        let scenario = Scenario::new(SyntheticSpec { days: sc.days, seed: 11, ..SyntheticSpec::default() }, sc);
        let spec = EnsembleSpec { size: 5, base_seed: 100, ..EnsembleSpec::default() };
        let members = build_ensemble(&spec, &scenario.train_data(), &base_train(sc, 0, 0.0), |m| {
            CvsnModel::new(CvsnConfig::for_dataset(&scenario.ds, m.target), m.seed)
        })
        .expect("ensemble training");
        Shared { scenario, members }
    })
}

/// Three bootstrapped SI members with unweighted loss. A weight of 1 + c·s²
/// moves every quantile towards the s²-tilted distribution, and ΔSI members
/// add quantiles of successive changes, which widens the later horizons;
/// both are deliberate sharpness trade-offs, not calibration targets.
fn calibration() -> Outcome {
    let sh = shared();
    let sc = scale();
    let spec = EnsembleSpec { size: 3, base_seed: 200, c_min: 0.0, c_max: 0.0, alternate_targets: false, ..EnsembleSpec::default() };
    let members = build_ensemble(&spec, &sh.scenario.train_data(), &base_train(sc, 0, 0.0), |m| {
        CvsnModel::new(CvsnConfig::for_dataset(&sh.scenario.ds, m.target), m.seed)
    })
    .map_err(|e| e.to_string())?;
    let models: Vec<&CvsnModel> = members.iter().map(|m| &m.model).collect();
    let set = ensemble_predict(&models, &sh.scenario.ds, &sh.scenario.test, None).map_err(|e| e.to_string())?;
    let cov = eval::calibration(&set).map_err(|e| e.to_string())?;
    let worst = cov.iter().zip(QUANTILES).map(|(c, q)| (c - q).abs()).fold(0.0, f64::max);
    check(
        worst <= 0.03,
        format!("{} test forecasts, coverage {} (max deviation {worst:.3})", set.len(), fmt_vec(&cov)),
    )
}

fn ensemble_dominance() -> Outcome {
    let sh = shared();
    let models: Vec<&CvsnModel> = sh.members.iter().map(|m| &m.model).collect();
    let sc = &sh.scenario;
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, rows) in [("validation", &sc.val), ("test", &sc.test)] {
        let sets = member_forecasts(&models, &sc.ds, rows, None).map_err(|e| e.to_string())?;
        let ens = ForecastSet::average(&sets).map_err(|e| e.to_string())?;
        let member_ql: Vec<f64> = sets.iter().map(|s| eval::quantile_loss_mw(s).expect("loss")).collect();
        let ens_ql = eval::quantile_loss_mw(&ens).map_err(|e| e.to_string())?;
        ok &= ens_ql <= mean(&member_ql);
        notes.push(format!("{name} loss {ens_ql:.3} vs member mean {:.3}", mean(&member_ql)));
        if name == "test" {
            let member_crps: Vec<f64> = sets.iter().map(mean_crps).collect();
            let ens_crps = mean_crps(&ens);
            let gain = 1.0 - ens_crps / mean(&member_crps);
            ok &= gain >= 0.01;
            notes.push(format!("test CRPS {ens_crps:.2} vs member mean {:.2} ({:.1}% lower)", mean(&member_crps), 100.0 * gain));
        }
    }
    check(ok, notes.join("; "))
}

fn feature_selection() -> Outcome {
    let sh = shared();
    let sc = &sh.scenario;
    let channels_of = |feature: &str| -> Vec<usize> {
        sc.ds
            .channels()
            .iter()
            .enumerate()
            .filter(|(_, ch)| sc.schema.features[ch.feature].name == feature)
            .map(|(i, _)| i)
            .collect()
    };
    let (planted, noise) = (channels_of("cross_border_next"), channels_of("wind_forecast_next"));
    let mut wins = 0;
    let mut total = 0;
    for m in &sh.members {
        let (pc, nc) = (m.model.columns_of_channels(&planted), m.model.columns_of_channels(&noise));
        for chunk in sc.test.chunks(512) {
            let batch = sc.ds.batch(chunk, m.model.target(), None);
            let w = m.model.feature_weights(&batch.inputs).map_err(|e| e.to_string())?;
            for r in 0..w.rows() {
                let sum = |cols: &[usize]| cols.iter().map(|&j| w.get(r, j)).sum::<f64>();
                wins += usize::from(sum(&pc) > sum(&nc));
                total += 1;
            }
        }
    }
    let frac = wins as f64 / total as f64;
    check(frac >= 0.95, format!("planted covariate outweighs noise in {:.2}% of {total} forecasts", 100.0 * frac))
}

fn checkpoint_roundtrip() -> Outcome {
    let sh = shared();
    let sc = &sh.scenario;
    let model = sh.members[0].model.clone();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    Checkpoint::new(AnyModel::Cvsn(model.clone()), &sc.ds, 100, 0.0, "acceptance", Some(sh.members[0].history.clone()))
        .and_then(|c| c.save(&path))
        .map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    loaded.check_schema(&sc.ds).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pool = sc.ds.samples(SplitPart::Test, 1).rows;
    let rows: Vec<usize> = (0..1000).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let batch = sc.ds.batch(&rows, model.target(), None);
    let a = model.infer(&batch.inputs).map_err(|e| e.to_string())?;
    let b = loaded.model.infer(&batch.inputs).map_err(|e| e.to_string())?;
    let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    check(differing == 0, format!("{} outputs over {} samples, {differing} differ", a.len(), rows.len()))
}

// --- independent training criteria ------------------------------------

fn loss_weighting() -> Outcome {
    let sc = scale();
    let mut rows = Vec::new();
    for seed in [21u64, 22, 23] {
        // Student-t shocks with 4 degrees of freedom. With the heavier
        // default tails the top stratum is dominated by shock onsets that no
        // input can anticipate, so no weighting can move its error.
        let spec = SyntheticSpec { days: sc.days, seed, tail_dof: 4.0, tail_scale: 1.5, ..SyntheticSpec::default() };
        let s = Scenario::new(spec, sc);
        let data = s.train_data();
        let mut res = Vec::new();
        for c in [0.0, 0.1] {
            let m = fit_cvsn(&data, TargetMode::Si, seed, c, sc);
            let set = predict(&m, &s.ds, &s.test, None).map_err(|e| e.to_string())?;
            let truth = set.truth.clone().expect("truth");
            let med = set.medians();
            let mut mags: Vec<f64> = truth.data().iter().map(|v| v.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let cut = mags[(0.985 * mags.len() as f64) as usize];
            let (mut sse_top, mut n_top) = (0.0, 0usize);
            for (p, t) in med.data().iter().zip(truth.data()) {
                if t.abs() >= cut {
                    sse_top += (p - t).powi(2);
                    n_top += 1;
                }
            }
            let overall = eval::rmse(med.data(), truth.data()).map_err(|e| e.to_string())?;
            res.push(((sse_top / n_top as f64).sqrt(), overall));
        }
        rows.push((res[0], res[1]));
    }
    let top0 = mean(&rows.iter().map(|r| r.0 .0).collect::<Vec<_>>());
    let top1 = mean(&rows.iter().map(|r| r.1 .0).collect::<Vec<_>>());
    let all0 = mean(&rows.iter().map(|r| r.0 .1).collect::<Vec<_>>());
    let all1 = mean(&rows.iter().map(|r| r.1 .1).collect::<Vec<_>>());
    check(
        top1 < top0 && all1 < 1.03 * all0,
        format!(
            "top-1.5% RMSE {top0:.1} -> {top1:.1} (per seed {} -> {}), overall RMSE {all0:.2} -> {all1:.2} ({:+.2}%)",
            fmt_vec(&rows.iter().map(|r| r.0 .0).collect::<Vec<_>>()),
            fmt_vec(&rows.iter().map(|r| r.1 .0).collect::<Vec<_>>()),
            100.0 * (all1 / all0 - 1.0)
        ),
    )
}

fn nonlinearity() -> Outcome {
    let sc = scale();
    let (mut nn, mut lin) = (Vec::new(), Vec::new());
    for seed in [31u64, 32, 33] {
        let spec = SyntheticSpec { days: sc.days, seed, nonlinearity: 2.0, ..SyntheticSpec::default() };
        let s = Scenario::new(spec, sc);
        let data = s.train_data();
        let m = fit_cvsn(&data, TargetMode::Si, seed, 0.0, sc);
        let l = fit_linear(&data, seed, sc);
        nn.push(mean_crps(&predict(&m, &s.ds, &s.test, None).map_err(|e| e.to_string())?));
        lin.push(mean_crps(&predict(&l, &s.ds, &s.test, None).map_err(|e| e.to_string())?));
    }
    let gain = 1.0 - mean(&nn) / mean(&lin);
    check(
        gain >= 0.10,
        format!("CRPS C-VSN {} vs linear {} ({:.1}% lower)", fmt_vec(&nn), fmt_vec(&lin), 100.0 * gain),
    )
}

fn finetune_recovery() -> Outcome {
    let sc = scale();
    let feature = "future_asset_next".to_string();
    let mut gaps = (Vec::new(), Vec::new(), Vec::new());
    // The recent window is the last sixth of the training span (4 of 24
    // months). A longer series keeps that window large enough to learn
    // from in one epoch; the two reference models see every other desk-scale
    // issue minute to hold the runtime.
    let sc = Scale { days: 314, train_stride: 2 * sc.train_stride, ..sc };
    for seed in [41u64, 42, 43] {
        let spec = SyntheticSpec {
            days: sc.days,
            seed,
            future_asset: Some(FutureAsset { scale: 80.0, available_from_day: None }),
            ..SyntheticSpec::default()
        };
        let full = Scenario::new(spec, sc);
        // recorded only for the last sixth of the training span
        let span = full.bounds.val_start - full.bounds.train_start;
        let available_from = full.bounds.val_start - (span / 6 / 15) * 15;
        let opts = PrepareOptions {
            limited_history: vec![LimitedHistory { feature: feature.clone(), available_from }],
            ..PrepareOptions::default()
        };
        let ds = Dataset::prepare(&full.data.table, &full.schema, full.bounds, &opts).map_err(|e| e.to_string())?;
        let mask = ds.channel_mask(std::slice::from_ref(&feature)).map_err(|e| e.to_string())?;

        let with = fit_cvsn(&full.train_data(), TargetMode::Si, seed, 0.0, sc);
        let blind_data = TrainData { ds: &ds, train: full.train.clone(), validation: full.val.clone(), zeroed: Some(mask.clone()) };
        let mut model = fit_cvsn(&blind_data, TargetMode::Si, seed, 0.0, sc);
        let c_full = mean_crps(&predict(&with, &full.ds, &full.test, None).map_err(|e| e.to_string())?);
        let c_blind = mean_crps(&predict(&model, &ds, &full.test, Some(&mask)).map_err(|e| e.to_string())?);

        let recent: Vec<usize> = ds
            .samples(SplitPart::Train, 1)
            .rows
            .into_iter()
            .filter(|&t| ds.start_minute() + t as i64 >= available_from)
            .collect();
        let recent_data = TrainData { ds: &ds, train: recent, validation: full.val.clone(), zeroed: None };
        let cfg = FinetuneConfig { new_features: vec![feature.clone()], recent_days: (span / 6) as f64 / DAY as f64, ..FinetuneConfig::default() };
        finetune(&mut model, &recent_data, &base_train(sc, seed, 0.0), &cfg).map_err(|e| e.to_string())?;
        let c_tuned = mean_crps(&predict(&model, &ds, &full.test, None).map_err(|e| e.to_string())?);
        gaps.0.push(c_full);
        gaps.1.push(c_blind);
        gaps.2.push(c_tuned);
    }
    let (full, blind, tuned) = (mean(&gaps.0), mean(&gaps.1), mean(&gaps.2));
    let recovered = (blind - tuned) / (blind - full);
    check(
        blind > full && recovered >= 0.5,
        format!(
            "CRPS full {} blind {} fine-tuned {}, {:.0}% of the gap recovered",
            fmt_vec(&gaps.0),
            fmt_vec(&gaps.1),
            fmt_vec(&gaps.2),
            100.0 * recovered
        ),
    )
}

// --- windowing oracle ---------------------------------------------------

fn windowing_oracle() -> Outcome {
    let spec = SyntheticSpec { days: 3, seed: 13, holiday_every_days: 2, ..SyntheticSpec::default() };
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let schema = data.schema.clone();
    let start = data.table.start_minute;
    let bounds = SplitBounds { train_start: start, val_start: start + 2 * DAY, test_start: start + 2 * DAY + 720, end: start + 3 * DAY };
    let ds = Dataset::prepare(&data.table, &schema, bounds, &PrepareOptions::default()).map_err(|e| e.to_string())?;
    let (n_c, n_o) = (ds.n_c(), ds.n_o());
    let len = data.table.len();
    let n_qh = len / 15;

    // native-resolution series per channel, before standardization
    let year = 365.25 * 1440.0;
    let series: Vec<Vec<f64>> = ds
        .channels()
        .iter()
        .map(|ch| {
            let f = &schema.features[ch.feature];
            let qh_minute = |q: usize| start + 15 * q as i64;
            let raw: Vec<f64> = match f.derive {
                Some(Derived::QhOfDay) => (0..n_qh).map(|q| (qh_minute(q).rem_euclid(DAY) / 15) as f64).collect(),
                Some(Derived::MinuteOfHour) => (0..len).map(|t| (start + t as i64).rem_euclid(60) as f64).collect(),
                Some(Derived::YearCosine) => (0..n_qh)
                    .map(|q| (std::f64::consts::TAU * qh_minute(q).rem_euclid(year as i64) as f64 / year).cos())
                    .collect(),
                Some(Derived::Recentness) => (0..n_qh)
                    .map(|q| ((qh_minute(q) - bounds.train_start) as f64 / (2 * DAY) as f64).clamp(0.0, 1.0))
                    .collect(),
                None => {
                    let col = data.table.column(&f.column).expect("column");
                    match f.resolution {
                        Resolution::Minute => col.to_vec(),
                        Resolution::QuarterHour => (0..n_qh).map(|q| col[15 * q]).collect(),
                    }
                }
            };
            let v = if ch.delta { deltas(&raw) } else { raw };
            if ch.vocab.is_some() {
                v
            } else {
                let st = ds.scaler().get(&ch.name).expect("stats");
                v.into_iter().map(|x| st.apply(x)).collect()
            }
        })
        .collect();
    let si: Vec<f64> = (0..n_qh).map(|q| data.table.column("si_qh").expect("si")[15 * q]).collect();

    let mut emitted = 0usize;
    let mut cells = 0usize;
    for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
        let (lo, hi) = match part {
            SplitPart::Train => (bounds.train_start, bounds.val_start),
            SplitPart::Validation => (bounds.val_start, bounds.test_start),
            SplitPart::Test => (bounds.test_start, bounds.end),
        };
        // brute force: issue minute in the split, full context in the
        // table, and every label Qh ending inside the split
        let expected: Vec<usize> = (0..len)
            .filter(|&t| {
                let k = t / 15;
                let m = start + t as i64;
                k >= n_c && 15 * (k + n_c.max(n_o)) <= len && m >= lo && start + 15 * (k + n_o) as i64 <= hi
            })
            .collect();
        let rows = ds.samples(part, 1).rows;
        if rows != expected {
            return Err(format!("{part:?}: {} rows emitted, oracle expects {}", rows.len(), expected.len()));
        }
        for &t in &rows {
            let s = ds.sample(t, TargetMode::Si).map_err(|e| e.to_string())?;
            let k = t / 15;
            for (c, ch) in ds.channels().iter().enumerate() {
                let f = &schema.features[ch.feature];
                for r in 0..n_c {
                    let idx = match (f.resolution, f.horizon) {
                        (Resolution::Minute, Horizon::Past) => t + 1 + r - n_c,
                        (Resolution::Minute, Horizon::Future) => t + r,
                        (Resolution::QuarterHour, Horizon::Past) => k - n_c + r,
                        (Resolution::QuarterHour, Horizon::Future) => k + r,
                    };
                    if s.inputs.get(r, c).to_bits() != series[c][idx].to_bits() {
                        return Err(format!("row {t} channel {} step {r}: {} vs oracle {}", ch.name, s.inputs.get(r, c), series[c][idx]));
                    }
                    cells += 1;
                }
            }
            let stats = ds.label_stats(TargetMode::Si);
            for i in 0..n_o {
                if s.raw_label[i].to_bits() != si[k + i].to_bits() || s.label[i].to_bits() != stats.apply(si[k + i]).to_bits() {
                    return Err(format!("row {t} label {i}"));
                }
                cells += 1;
            }
            if s.prev_si != si[k - 1] || s.issue_minute != start + t as i64 {
                return Err(format!("row {t} issue metadata"));
            }
            emitted += 1;
        }
    }

    // Issued at 00:03 on day 2: labels are the Qh starting 00:00, 00:15 and
    // 00:30, and the minute window ends at 00:03 itself.
    let t = (DAY + 3) as usize;
    let s = ds.sample(t, TargetMode::Si).map_err(|e| e.to_string())?;
    let k = (DAY / 15) as usize;
    let si_min = ds.channels().iter().position(|ch| ch.name == "si_min_past").expect("si_min_past channel");
    let st = ds.scaler().get("si_min_past").expect("stats");
    let last = st.apply(data.table.column("si_min").expect("si_min")[t]);
    let example = s.raw_label == vec![si[k], si[k + 1], si[k + 2]] && s.inputs.get(n_c - 1, si_min).to_bits() == last.to_bits();
    check(example, format!("{emitted} samples, {cells} cells match; 00:03 example holds: {example}"))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        (1, "gradient correctness", gradient_check),
        (2, "quantile-loss identity", median_loss_identity),
        (3, "loss-weight curve", weight_curve),
        (4, "CRPS degenerate reduction", degenerate_crps),
        (5, "CRPS oracle equivalence", uniform_crps_oracle),
        (6, "calibration", calibration),
        (7, "ensemble dominance", ensemble_dominance),
        (8, "loss-weighting trade-off", loss_weighting),
        (9, "non-linearity advantage", nonlinearity),
        (10, "fine-tuning recovery", finetune_recovery),
        (11, "feature-selection sanity", feature_selection),
        (12, "checkpoint round-trip", checkpoint_roundtrip),
        (13, "windowing oracle", windowing_oracle),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let (verdict, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:2} {verdict} {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
