//! The seven commands. Each reads its inputs, writes artifacts under the
//! output directory and returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cvsn::checkpoint::{AnyModel, Checkpoint};
use cvsn::data::{
    format_minute, generate_synthetic, Dataset, FeatureGroup, FeatureSchema, IngestOptions, LimitedHistory, PrepareOptions, RawTable,
    ScalerStats, SplitPart, TargetMode,
};
use cvsn::ensemble::{bootstrap_rows, EnsembleManifest, EnsembleSpec, ManifestEntry, MemberSpec};
use cvsn::eval::{stratified_report, EvalReport, Metrics};
use cvsn::model::{CvsnConfig, CvsnModel, ForecastSet, LinearConfig, LinearQuantileModel, Network, VsnVariant};
use cvsn::training::{self, finetune, TrainConfig, TrainData, TrainHistory};
use cvsn::{par, Error, Result};

use crate::config::{minute, ModelKind, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    TrainEnsemble,
    Finetune,
    Predict,
    Evaluate,
    Ablate,
}

pub const ABLATION_TOGGLES: [&str; 6] = ["ensembling", "loss-weighting", "delta-si", "bootstrapping", "delta-features", "constant-vsn"];

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    par::with_threads(cfg.parallelism, || match cmd {
        Command::Generate => generate(cfg),
        Command::Train => train(cfg),
        Command::TrainEnsemble => train_ensemble(cfg),
        Command::Finetune => finetune_cmd(cfg),
        Command::Predict => predict(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Ablate => ablate(cfg),
    })
}

fn generate(cfg: &RunConfig) -> Result<String> {
    let data = generate_synthetic(&cfg.generate)?;
    for p in [&cfg.data.csv, &cfg.data.schema] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
    }
    data.table.write_csv(&cfg.data.csv)?;
    data.schema.save(&cfg.data.schema)?;
    let sidecar = cfg.data.csv.with_extension("synthetic.toml");
    std::fs::write(&sidecar, toml::to_string(&data.spec).map_err(|e| Error::Config(e.to_string()))?)?;
    Ok(format!(
        "wrote {} rows to {} and schema {}",
        data.table.len(),
        cfg.data.csv.display(),
        cfg.data.schema.display()
    ))
}

/// Loads the schema and table named in the config.
pub fn load_inputs(cfg: &RunConfig) -> Result<(FeatureSchema, RawTable)> {
    let schema = FeatureSchema::load(&cfg.data.schema)
        .map_err(|e| Error::Schema(format!("{}: {e}", cfg.data.schema.display())))?;
    let sparse = cfg
        .data
        .limited_history
        .iter()
        .map(|l| {
            schema
                .feature_index(&l.feature)
                .map(|i| schema.features[i].column.clone())
                .ok_or_else(|| Error::Config(format!("limited_history feature `{}` is not in the schema", l.feature)))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = IngestOptions {
        max_fill: cfg.data.max_fill,
        max_gap: cfg.data.max_gap,
        sparse_columns: sparse,
    };
    let (table, _) = RawTable::read_csv(&cfg.data.csv, &schema, &opts).map_err(|e| match e {
        Error::Io(io) => Error::Input(format!("{}: {io}", cfg.data.csv.display())),
        other => other,
    })?;
    Ok((schema, table))
}

pub fn prepare(cfg: &RunConfig, schema: &FeatureSchema, table: &RawTable, scaler: Option<ScalerStats>) -> Result<Dataset> {
    let bounds = cfg.split_bounds(table.start_minute, table.start_minute + table.len() as i64)?;
    let limited = cfg
        .data
        .limited_history
        .iter()
        .filter(|l| schema.feature_index(&l.feature).is_some())
        .map(|l| Ok(LimitedHistory { feature: l.feature.clone(), available_from: minute(&l.available_from)? }))
        .collect::<Result<Vec<_>>>()?;
    let opts = PrepareOptions {
        n_c: cfg.data.n_c,
        n_o: cfg.data.n_o,
        limited_history: limited,
        scaler,
    };
    Dataset::prepare(table, schema, bounds, &opts)
}

fn train_data<'a>(cfg: &RunConfig, ds: &'a Dataset) -> Result<TrainData<'a>> {
    let zeroed = if cfg.train.zero_features.is_empty() { None } else { Some(ds.channel_mask(&cfg.train.zero_features)?) };
    Ok(TrainData {
        ds,
        train: ds.samples(SplitPart::Train, cfg.data.train_stride).rows,
        validation: ds.samples(SplitPart::Validation, cfg.data.eval_stride).rows,
        zeroed,
    })
}

fn cvsn_config(cfg: &RunConfig, ds: &Dataset, target: TargetMode) -> CvsnConfig {
    let m = &cfg.model;
    CvsnConfig {
        hidden: m.hidden,
        inner: m.inner,
        embed_dim: m.embed_dim,
        dropout: m.dropout,
        variant: m.variant,
        ..CvsnConfig::for_dataset(ds, target)
    }
}

/// Train one member of the configured kind.
fn train_one(cfg: &RunConfig, data: &TrainData, base: &TrainConfig, m: &MemberSpec) -> Result<(AnyModel, TrainHistory)> {
    fn go<N: Network>(mut net: N, data: &TrainData, base: &TrainConfig, m: &MemberSpec) -> Result<(N, TrainHistory)> {
        let rows = if m.bootstrap { bootstrap_rows(&data.train, m.seed) } else { data.train.clone() };
        let local = TrainData { train: rows, ..data.clone() };
        let tc = TrainConfig { loss_weight: m.c, seed: m.seed, ..base.clone() };
        let h = training::train(&mut net, &local, &tc, None)?;
        Ok((net, h))
    }
    let wrap = |e: Error| Error::Member { index: m.index, source: Box::new(e) };
    match cfg.model.kind {
        ModelKind::Cvsn => {
            let net = CvsnModel::new(cvsn_config(cfg, data.ds, m.target), m.seed)?;
            go(net, data, base, m).map(|(n, h)| (AnyModel::Cvsn(n), h)).map_err(wrap)
        }
        ModelKind::Linear => {
            let net = LinearQuantileModel::new(LinearConfig::for_dataset(data.ds, m.target), m.seed)?;
            go(net, data, base, m).map(|(n, h)| (AnyModel::Linear(n), h)).map_err(wrap)
        }
    }
}

fn train(cfg: &RunConfig) -> Result<String> {
    let (schema, table) = load_inputs(cfg)?;
    let ds = prepare(cfg, &schema, &table, None)?;
    let data = train_data(cfg, &ds)?;
    let tc = cfg.train_config();
    let member = MemberSpec { index: 0, seed: cfg.seed, c: tc.loss_weight, target: cfg.model.target, bootstrap: false };
    let (model, history) = train_one(cfg, &data, &tc, &member).map_err(unwrap_member)?;
    let path = cfg.output_dir.join("model.ckpt");
    Checkpoint::new(model, &ds, cfg.seed, tc.loss_weight, &cfg.hash(), Some(history.clone()))?.save(&path)?;
    std::fs::write(cfg.output_dir.join("history.csv"), history.to_csv(&cfg.header()))?;
    Ok(format!(
        "trained {} epochs on {} samples (best epoch {}); checkpoint {}",
        history.epochs.len(),
        data.train.len(),
        history.best_epoch,
        path.display()
    ))
}

fn unwrap_member(e: Error) -> Error {
    match e {
        Error::Member { source, .. } => *source,
        other => other,
    }
}

struct Trained {
    spec: MemberSpec,
    model: AnyModel,
    history: TrainHistory,
}

fn train_members(cfg: &RunConfig, spec: &EnsembleSpec, data: &TrainData) -> Result<Vec<Trained>> {
    spec.validate()?;
    let tc = cfg.train_config();
    let members = spec.members();
    par::map_slice(&members, |m| train_one(cfg, data, &tc, m).map(|(model, history)| Trained { spec: m.clone(), model, history }))
        .into_iter()
        .collect()
}

fn train_ensemble(cfg: &RunConfig) -> Result<String> {
    let (schema, table) = load_inputs(cfg)?;
    let ds = prepare(cfg, &schema, &table, None)?;
    let data = train_data(cfg, &ds)?;
    let spec = cfg.ensemble_spec();
    let trained = train_members(cfg, &spec, &data)?;
    let mut entries = Vec::new();
    for t in &trained {
        let rel = PathBuf::from("members").join(format!("{:02}", t.spec.index + 1));
        let dir = cfg.output_dir.join(&rel);
        std::fs::create_dir_all(&dir)?;
        Checkpoint::new(t.model.clone(), &ds, t.spec.seed, t.spec.c, &cfg.hash(), Some(t.history.clone()))?.save(&dir.join("model.ckpt"))?;
        std::fs::write(dir.join("history.csv"), t.history.to_csv(&cfg.header()))?;
        entries.push(ManifestEntry {
            index: t.spec.index,
            checkpoint: rel.join("model.ckpt").to_string_lossy().into_owned(),
            seed: t.spec.seed,
            bootstrap_seed: t.spec.bootstrap.then_some(t.spec.seed),
            c: t.spec.c,
            target: t.spec.target,
        });
    }
    let manifest = EnsembleManifest {
        model_kind: trained[0].model.kind().to_string(),
        schema_fingerprint: schema.fingerprint(),
        config_hash: cfg.hash(),
        members: entries,
    };
    let path = cfg.output_dir.join("ensemble.json");
    manifest.save(&path)?;
    Ok(format!("trained {} members; manifest {}", trained.len(), path.display()))
}

fn finetune_cmd(cfg: &RunConfig) -> Result<String> {
    let ck = Checkpoint::load(&cfg.finetune.checkpoint)?;
    let AnyModel::Cvsn(mut model) = ck.model.clone() else {
        return Err(Error::Checkpoint("fine-tuning needs a cvsn checkpoint".into()));
    };
    let (schema, table) = load_inputs(cfg)?;
    let ds = prepare(cfg, &schema, &table, Some(ck.meta.scaler.clone()))?;
    ck.check_schema(&ds)?;
    let ft = cfg.finetune_config();
    let cutoff = ds.bounds().val_start - (ft.recent_days * 1440.0).round() as i64;
    let recent: Vec<usize> = ds
        .samples(SplitPart::Train, cfg.data.train_stride)
        .rows
        .into_iter()
        .filter(|&t| ds.start_minute() + t as i64 >= cutoff)
        .collect();
    let data = TrainData {
        ds: &ds,
        train: recent,
        validation: ds.samples(SplitPart::Validation, cfg.data.eval_stride).rows,
        zeroed: None,
    };
    let tc = cfg.train_config();
    let history = finetune(&mut model, &data, &tc, &ft)?;
    let path = cfg.output_dir.join("finetuned.ckpt");
    Checkpoint::new(AnyModel::Cvsn(model), &ds, cfg.seed, ck.meta.loss_weight, &cfg.hash(), Some(history.clone()))?.save(&path)?;
    std::fs::write(cfg.output_dir.join("finetune_history.csv"), history.to_csv(&cfg.header()))?;
    Ok(format!("fine-tuned on {} recent samples; checkpoint {}", data.train.len(), path.display()))
}

/// One checkpoint, or every member listed in a manifest.
pub fn load_models(path: &Path) -> Result<Vec<Checkpoint>> {
    if path.extension().is_some_and(|e| e == "json") {
        let manifest = EnsembleManifest::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let cks = manifest
            .members
            .iter()
            .map(|m| Checkpoint::load(&dir.join(&m.checkpoint)))
            .collect::<Result<Vec<_>>>()?;
        if cks.is_empty() {
            return Err(Error::Checkpoint("manifest lists no members".into()));
        }
        for c in &cks {
            if c.meta.schema_fingerprint != manifest.schema_fingerprint {
                return Err(Error::Checkpoint("member schema fingerprint differs from the manifest".into()));
            }
        }
        Ok(cks)
    } else {
        Ok(vec![Checkpoint::load(path)?])
    }
}

fn forecast(cfg: &RunConfig) -> Result<ForecastSet> {
    let cks = load_models(&cfg.predict.model)?;
    let (schema, table) = load_inputs(cfg)?;
    let ds = prepare(cfg, &schema, &table, Some(cks[0].meta.scaler.clone()))?;
    for c in &cks {
        c.check_schema(&ds)?;
    }
    let rows = ds.samples(cfg.predict.split, cfg.data.eval_stride).rows;
    if rows.is_empty() {
        return Err(Error::Input("the selected split holds no valid samples".into()));
    }
    let zeroed = if cfg.train.zero_features.is_empty() { None } else { Some(ds.channel_mask(&cfg.train.zero_features)?) };
    let sets = cks.iter().map(|c| c.model.predict(&ds, &rows, zeroed.as_deref())).collect::<Result<Vec<_>>>()?;
    ForecastSet::average(&sets)
}

/// `issue_timestamp,horizon_qh,q0.01,…` with one line per (issue, horizon).
pub fn forecast_csv(set: &ForecastSet, header: &str) -> String {
    let mut s = String::from(header);
    s.push_str("issue_timestamp,horizon_qh");
    for q in &set.levels {
        let _ = write!(s, ",q{q}");
    }
    s.push('\n');
    for (b, &issue) in set.issue_minutes.iter().enumerate() {
        for i in 0..set.n_o {
            let _ = write!(s, "{},{}", format_minute(issue), i + 1);
            for v in set.row(b, i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

fn predict(cfg: &RunConfig) -> Result<String> {
    let set = forecast(cfg)?;
    let path = cfg.output_dir.join("forecasts.csv");
    std::fs::write(&path, forecast_csv(&set, &cfg.header()))?;
    Ok(format!("wrote {} forecasts to {}", set.len(), path.display()))
}

fn metrics_line(name: &str, m: Option<&Metrics>) -> String {
    match m {
        Some(m) => format!("{name}: rmse {:.2} MW, crps {:.2} MW over {} samples", m.rmse, m.crps, m.count),
        None => format!("{name}: no samples"),
    }
}

fn evaluate(cfg: &RunConfig) -> Result<String> {
    let set = forecast(cfg)?;
    let report = stratified_report(&set, cfg.threshold)?;
    report.write(&cfg.output_dir, "eval", &cfg.header())?;
    std::fs::write(cfg.output_dir.join("forecasts.csv"), forecast_csv(&set, &cfg.header()))?;
    Ok(format!(
        "{}\n{}\ncoverage {:?}",
        metrics_line("overall", Some(&report.overall)),
        metrics_line(&format!("|SI| > {}", cfg.threshold), report.conditional.as_ref()),
        report.coverage.iter().map(|c| (c * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    ))
}

/// Overall RMSE, overall CRPS, high-|SI| RMSE and high-|SI| CRPS.
pub fn four_metrics(r: &EvalReport) -> [f64; 4] {
    let c = r.conditional.as_ref();
    [
        r.overall.rmse,
        r.overall.crps,
        c.map_or(f64::NAN, |m| m.rmse),
        c.map_or(f64::NAN, |m| m.crps),
    ]
}

pub const METRIC_NAMES: [&str; 4] = ["rmse", "crps", "rmse_high", "crps_high"];

/// Apply an ablation toggle to the config and schema.
pub fn ablated(cfg: &RunConfig, schema: &FeatureSchema, toggle: &str) -> Result<(RunConfig, FeatureSchema)> {
    let mut c = cfg.clone();
    let mut s = schema.clone();
    match toggle {
        "ensembling" => c.ensemble.size = 1,
        "loss-weighting" => {
            c.ensemble.c_min = 0.0;
            c.ensemble.c_max = 0.0;
        }
        "delta-si" => c.ensemble.alternate_targets = false,
        "bootstrapping" => c.ensemble.bootstrap = false,
        "delta-features" => s = s.without_deltas(),
        "constant-vsn" => c.model.variant = VsnVariant::PerTimestep,
        t => match t.strip_prefix("group:") {
            Some(g) => {
                let group = FeatureGroup::parse(g).map_err(|_| Error::Config(format!("unknown feature group `{g}`")))?;
                s = s.without_group(group)?;
            }
            None => {
                return Err(Error::Config(format!(
                    "unknown ablation toggle `{t}`; expected one of {} or group:<name>",
                    ABLATION_TOGGLES.join(", ")
                )))
            }
        },
    }
    Ok((c, s))
}

fn ensemble_report(cfg: &RunConfig, schema: &FeatureSchema, table: &RawTable) -> Result<EvalReport> {
    let ds = prepare(cfg, schema, table, None)?;
    let data = train_data(cfg, &ds)?;
    let trained = train_members(cfg, &cfg.ensemble_spec(), &data)?;
    let rows = ds.samples(SplitPart::Test, cfg.data.eval_stride).rows;
    let sets = trained.iter().map(|t| t.model.predict(&ds, &rows, data.zeroed.as_deref())).collect::<Result<Vec<_>>>()?;
    stratified_report(&ForecastSet::average(&sets)?, cfg.threshold)
}

fn ablate(cfg: &RunConfig) -> Result<String> {
    if cfg.ablate.toggles.is_empty() {
        return Err(Error::Config("ablate.toggles is empty".into()));
    }
    let (schema, table) = load_inputs(cfg)?;
    let variants = cfg
        .ablate
        .toggles
        .iter()
        .map(|t| ablated(cfg, &schema, t).map(|v| (t.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let base = ensemble_report(cfg, &schema, &table)?;
    base.write(&cfg.output_dir, "ablation_baseline", &cfg.header())?;
    let b = four_metrics(&base);
    let mut csv = cfg.header();
    csv.push_str("toggle,metric,baseline,ablated,change_pct\n");
    let mut summary = String::new();
    for (toggle, (c, s)) in variants {
        let r = ensemble_report(&c, &s, &table)?;
        let v = four_metrics(&r);
        let _ = write!(summary, "{toggle}:");
        for k in 0..4 {
            let pct = 100.0 * (v[k] - b[k]) / b[k];
            let _ = writeln!(csv, "{toggle},{},{},{},{}", METRIC_NAMES[k], b[k], v[k], pct);
            let _ = write!(summary, " {} {:+.2}%", METRIC_NAMES[k], pct);
        }
        summary.push('\n');
    }
    std::fs::write(cfg.output_dir.join("ablation.csv"), csv)?;
    Ok(summary.trim_end().to_string())
}
