//! Declarative description of the model inputs.
//!
//! Text format, blank-line separated blocks of `key: value` lines:
//!
//! ```text
//! schema_version: 1
//! target: si_qh
//!
//! name: si_qh_past
//! column: si_qh
//! group: si_nrv
//! resolution: qh
//! horizon: past
//! kind: continuous
//! has_delta: true
//! ```
//!
//! `column` defaults to `name`. Time features computed from the timestamp
//! carry `derive: qh_of_day | minute_of_hour | year_cosine | recentness` and
//! have no CSV column.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const QH_OF_DAY_VOCAB: usize = 96;
pub const MINUTE_OF_HOUR_VOCAB: usize = 60;

/// Input feature groups, in descending order of importance on the
/// reference data set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    SiNrv,
    CrossBorder,
    Asset,
    Time,
    Pv,
    DsoNomination,
    LoadForecast,
    DaGeneration,
    ImbalancePrice,
    WindForecast,
    Other,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 11] = [
        FeatureGroup::SiNrv,
        FeatureGroup::CrossBorder,
        FeatureGroup::Asset,
        FeatureGroup::Time,
        FeatureGroup::Pv,
        FeatureGroup::DsoNomination,
        FeatureGroup::LoadForecast,
        FeatureGroup::DaGeneration,
        FeatureGroup::ImbalancePrice,
        FeatureGroup::WindForecast,
        FeatureGroup::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::SiNrv => "si_nrv",
            FeatureGroup::CrossBorder => "cross_border",
            FeatureGroup::Asset => "asset",
            FeatureGroup::Time => "time",
            FeatureGroup::Pv => "pv",
            FeatureGroup::DsoNomination => "dso_nomination",
            FeatureGroup::LoadForecast => "load_forecast",
            FeatureGroup::DaGeneration => "da_generation",
            FeatureGroup::ImbalancePrice => "imbalance_price",
            FeatureGroup::WindForecast => "wind_forecast",
            FeatureGroup::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown feature group `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    QuarterHour,
    Minute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizon {
    Past,
    Future,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Continuous,
    CategoricalTime { vocab: usize },
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Derived {
    QhOfDay,
    MinuteOfHour,
    YearCosine,
    Recentness,
}

impl Derived {
    fn as_str(self) -> &'static str {
        match self {
            Derived::QhOfDay => "qh_of_day",
            Derived::MinuteOfHour => "minute_of_hour",
            Derived::YearCosine => "year_cosine",
            Derived::Recentness => "recentness",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "qh_of_day" => Ok(Derived::QhOfDay),
            "minute_of_hour" => Ok(Derived::MinuteOfHour),
            "year_cosine" => Ok(Derived::YearCosine),
            "recentness" => Ok(Derived::Recentness),
            other => Err(Error::Schema(format!("unknown derived feature `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub column: String,
    pub group: FeatureGroup,
    pub resolution: Resolution,
    pub horizon: Horizon,
    pub kind: FeatureKind,
    pub has_delta: bool,
    pub derive: Option<Derived>,
}

impl FeatureSpec {
    pub fn new(
        name: &str,
        group: FeatureGroup,
        resolution: Resolution,
        horizon: Horizon,
        has_delta: bool,
    ) -> Self {
        FeatureSpec {
            name: name.to_string(),
            column: name.to_string(),
            group,
            resolution,
            horizon,
            kind: FeatureKind::Continuous,
            has_delta,
            derive: None,
        }
    }

    pub fn with_column(mut self, column: &str) -> Self {
        self.column = column.to_string();
        self
    }

    pub fn binary(mut self) -> Self {
        self.kind = FeatureKind::Binary;
        self
    }

    pub fn derived(name: &str, derive: Derived) -> Self {
        let (resolution, horizon, kind) = match derive {
            Derived::QhOfDay => (
                Resolution::QuarterHour,
                Horizon::Future,
                FeatureKind::CategoricalTime { vocab: QH_OF_DAY_VOCAB },
            ),
            Derived::MinuteOfHour => (
                Resolution::Minute,
                Horizon::Future,
                FeatureKind::CategoricalTime {
                    vocab: MINUTE_OF_HOUR_VOCAB,
                },
            ),
            Derived::YearCosine | Derived::Recentness => {
                (Resolution::QuarterHour, Horizon::Future, FeatureKind::Continuous)
            }
        };
        FeatureSpec {
            name: name.to_string(),
            column: name.to_string(),
            group: FeatureGroup::Time,
            resolution,
            horizon,
            kind,
            has_delta: false,
            derive: Some(derive),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::CategoricalTime { .. })
    }

    pub fn vocab(&self) -> Option<usize> {
        match self.kind {
            FeatureKind::CategoricalTime { vocab } => Some(vocab),
            _ => None,
        }
    }
}

/// One model input channel: a feature or the delta of a feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub name: String,
    pub feature: usize,
    pub delta: bool,
    pub vocab: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub target: String,
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(target: &str, features: Vec<FeatureSpec>) -> Result<Self> {
        let s = FeatureSchema {
            target: target.to_string(),
            features,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let mut resolution_of: HashMap<&str, Resolution> = HashMap::new();
        resolution_of.insert(self.target.as_str(), Resolution::QuarterHour);
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match (f.kind, f.derive) {
                (FeatureKind::CategoricalTime { vocab }, Some(Derived::QhOfDay)) if vocab == QH_OF_DAY_VOCAB => {
                    if f.resolution != Resolution::QuarterHour {
                        return Err(Error::Schema(format!("`{}` must have qh resolution", f.name)));
                    }
                }
                (FeatureKind::CategoricalTime { vocab }, Some(Derived::MinuteOfHour))
                    if vocab == MINUTE_OF_HOUR_VOCAB =>
                {
                    if f.resolution != Resolution::Minute {
                        return Err(Error::Schema(format!("`{}` must have minute resolution", f.name)));
                    }
                }
                (FeatureKind::CategoricalTime { .. }, _) => {
                    return Err(Error::Schema(format!(
                        "`{}`: only qh_of_day (96) and minute_of_hour (60) may be categorical",
                        f.name
                    )))
                }
                (_, Some(Derived::QhOfDay | Derived::MinuteOfHour)) => {
                    return Err(Error::Schema(format!("`{}` must be categorical", f.name)))
                }
                _ => {}
            }
            if f.derive.is_some() && f.has_delta {
                return Err(Error::Schema(format!("derived feature `{}` cannot carry a delta", f.name)));
            }
            if f.derive.is_none() {
                if let Some(prev) = resolution_of.insert(f.column.as_str(), f.resolution) {
                    if prev != f.resolution {
                        return Err(Error::Schema(format!(
                            "column `{}` is used at both minute and quarter-hour resolution",
                            f.column
                        )));
                    }
                }
            }
        }
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        Ok(())
    }

    /// Input channels in model order: every feature, then the delta of every
    /// feature that has one.
    pub fn channels(&self) -> Vec<Channel> {
        let base = self.features.iter().enumerate().map(|(i, f)| Channel {
            name: f.name.clone(),
            feature: i,
            delta: false,
            vocab: f.vocab(),
        });
        let deltas = self
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.has_delta)
            .map(|(i, f)| Channel {
                name: format!("{}_delta", f.name),
                feature: i,
                delta: true,
                vocab: None,
            });
        base.chain(deltas).collect()
    }

    /// N_f: features plus their deltas.
    pub fn input_count(&self) -> usize {
        self.features.len() + self.features.iter().filter(|f| f.has_delta).count()
    }

    pub fn categorical_count(&self) -> usize {
        self.features.iter().filter(|f| f.is_categorical()).count()
    }

    /// N'_f after replacing each categorical channel by `embed_dim` columns.
    pub fn expanded_count(&self, embed_dim: usize) -> usize {
        self.input_count() - self.categorical_count() + self.categorical_count() * embed_dim
    }

    /// CSV columns the data file must provide (target first).
    pub fn required_columns(&self) -> Vec<String> {
        let mut cols = vec![self.target.clone()];
        for f in &self.features {
            if f.derive.is_none() && !cols.contains(&f.column) {
                cols.push(f.column.clone());
            }
        }
        cols
    }

    pub fn column_resolution(&self, column: &str) -> Option<Resolution> {
        if column == self.target {
            return Some(Resolution::QuarterHour);
        }
        self.features
            .iter()
            .find(|f| f.derive.is_none() && f.column == column)
            .map(|f| f.resolution)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Schema without the features of `group`.
    pub fn without_group(&self, group: FeatureGroup) -> Result<Self> {
        FeatureSchema::new(
            &self.target,
            self.features.iter().filter(|f| f.group != group).cloned().collect(),
        )
    }

    pub fn without_deltas(&self) -> Self {
        let mut s = self.clone();
        s.features.iter_mut().for_each(|f| f.has_delta = false);
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "schema_version: {SCHEMA_VERSION}");
        let _ = writeln!(out, "target: {}", self.target);
        for f in &self.features {
            out.push('\n');
            let _ = writeln!(out, "name: {}", f.name);
            if f.column != f.name {
                let _ = writeln!(out, "column: {}", f.column);
            }
            let _ = writeln!(out, "group: {}", f.group.as_str());
            let _ = writeln!(
                out,
                "resolution: {}",
                match f.resolution {
                    Resolution::QuarterHour => "qh",
                    Resolution::Minute => "minute",
                }
            );
            let _ = writeln!(
                out,
                "horizon: {}",
                match f.horizon {
                    Horizon::Past => "past",
                    Horizon::Future => "future",
                }
            );
            let kind = match f.kind {
                FeatureKind::Continuous => "continuous".to_string(),
                FeatureKind::Binary => "binary".to_string(),
                FeatureKind::CategoricalTime { vocab } => format!("categorical({vocab})"),
            };
            let _ = writeln!(out, "kind: {kind}");
            let _ = writeln!(out, "has_delta: {}", f.has_delta);
            if let Some(d) = f.derive {
                let _ = writeln!(out, "derive: {}", d.as_str());
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks: Vec<Vec<(usize, String, String)>> = vec![Vec::new()];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                if !blocks.last().expect("non-empty").is_empty() {
                    blocks.push(Vec::new());
                }
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Schema(format!("line {}: expected `key: value`", lineno + 1)))?;
            blocks
                .last_mut()
                .expect("non-empty")
                .push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        blocks.retain(|b| !b.is_empty());
        let mut iter = blocks.into_iter();
        let header = iter.next().ok_or_else(|| Error::Schema("empty schema".into()))?;
        let mut version = None;
        let mut target = None;
        for (line, k, v) in header {
            match k.as_str() {
                "schema_version" => version = Some(v),
                "target" => target = Some(v),
                other => return Err(Error::Schema(format!("line {line}: unknown header key `{other}`"))),
            }
        }
        match version.as_deref() {
            Some("1") => {}
            Some(v) => return Err(Error::Schema(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Schema("missing schema_version".into())),
        }
        let target = target.ok_or_else(|| Error::Schema("missing target".into()))?;
        let mut features = Vec::new();
        for block in iter {
            features.push(parse_feature(&block)?);
        }
        FeatureSchema::new(&target, features)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// SHA-256 of the canonical text form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The full input layout of the Belgian reference setup: 43 non-time
    /// features with deltas and five time features (N_f = 91).
    pub fn reference_layout() -> Self {
        use FeatureGroup as G;
        use Horizon::{Future, Past};
        use Resolution::{Minute, QuarterHour as Qh};
        let f = FeatureSpec::new;
        let mut v = vec![
            f("si_qh_past", G::SiNrv, Qh, Past, true).with_column("si_qh"),
            f("si_min_past", G::SiNrv, Minute, Past, true).with_column("si_min"),
            f("nrv_qh_past", G::SiNrv, Qh, Past, true).with_column("nrv_qh"),
            f("nrv_min_past", G::SiNrv, Minute, Past, true).with_column("nrv_min"),
            f("cross_border_past", G::CrossBorder, Qh, Past, true).with_column("cross_border"),
            f("cross_border_next", G::CrossBorder, Qh, Future, true).with_column("cross_border"),
        ];
        for a in 1..=3 {
            v.push(f(&format!("asset{a}_imbalance_qh_past"), G::Asset, Qh, Past, true).with_column(&format!("asset{a}_imbalance_qh")));
            v.push(f(&format!("asset{a}_imbalance_min_past"), G::Asset, Minute, Past, true).with_column(&format!("asset{a}_imbalance_min")));
            v.push(f(&format!("asset{a}_metering_qh_past"), G::Asset, Qh, Past, true).with_column(&format!("asset{a}_metering_qh")));
            v.push(f(&format!("asset{a}_metering_min_past"), G::Asset, Minute, Past, true).with_column(&format!("asset{a}_metering_min")));
            v.push(f(&format!("asset{a}_da_nomination_past"), G::Asset, Qh, Past, true).with_column(&format!("asset{a}_da_nomination")));
            v.push(f(&format!("asset{a}_da_nomination_next"), G::Asset, Qh, Future, true).with_column(&format!("asset{a}_da_nomination")));
            v.push(f(&format!("asset{a}_mfrr_past"), G::Asset, Qh, Past, true).with_column(&format!("asset{a}_mfrr")));
        }
        v.extend([
            FeatureSpec::derived("qh_of_day", Derived::QhOfDay),
            FeatureSpec::derived("minute_of_hour", Derived::MinuteOfHour),
            FeatureSpec::derived("year_cosine", Derived::YearCosine),
            f("holiday", G::Time, Qh, Future, false).binary(),
            FeatureSpec::derived("recentness", Derived::Recentness),
            f("pv_measured_past", G::Pv, Qh, Past, true).with_column("pv_measured"),
            f("pv_forecast_next", G::Pv, Qh, Future, true).with_column("pv_forecast"),
            f("dso_nomination_past", G::DsoNomination, Qh, Past, true).with_column("dso_nomination"),
            f("dso_nomination_next", G::DsoNomination, Qh, Future, true).with_column("dso_nomination"),
            f("id_load_forecast_past", G::LoadForecast, Qh, Past, true).with_column("id_load_forecast"),
            f("id_load_forecast_next", G::LoadForecast, Qh, Future, true).with_column("id_load_forecast"),
            f("recent_load_forecast_past", G::LoadForecast, Qh, Past, true).with_column("recent_load_forecast"),
            f("recent_load_forecast_next", G::LoadForecast, Qh, Future, true).with_column("recent_load_forecast"),
        ]);
        for kind in ["total", "gas", "nuclear", "hydro", "wind"] {
            v.push(f(&format!("{kind}_da_nomination_next"), G::DaGeneration, Qh, Future, true));
        }
        v.extend([
            f("imbalance_price_qh_past", G::ImbalancePrice, Qh, Past, true).with_column("imbalance_price_qh"),
            f("imbalance_price_min_past", G::ImbalancePrice, Minute, Past, true).with_column("imbalance_price_min"),
            f("wind_forecast_next", G::WindForecast, Qh, Future, true).with_column("wind_forecast"),
        ]);
        FeatureSchema::new("si_qh", v).expect("reference layout is valid")
    }
}

fn parse_feature(block: &[(usize, String, String)]) -> Result<FeatureSpec> {
    let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
    for (line, k, v) in block {
        const KEYS: [&str; 8] = ["name", "column", "group", "resolution", "horizon", "kind", "has_delta", "derive"];
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Schema(format!("line {line}: unknown feature key `{k}`")));
        }
        if map.insert(k.as_str(), (*line, v.as_str())).is_some() {
            return Err(Error::Schema(format!("line {line}: repeated key `{k}`")));
        }
    }
    let line = block.first().map_or(0, |b| b.0);
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Schema(format!("feature block at line {line}: missing `{k}`")))
    };
    let name = get("name")?;
    let resolution = match get("resolution")? {
        "qh" => Resolution::QuarterHour,
        "minute" => Resolution::Minute,
        other => return Err(Error::Schema(format!("`{name}`: unknown resolution `{other}`"))),
    };
    let horizon = match get("horizon")? {
        "past" => Horizon::Past,
        "future" => Horizon::Future,
        other => return Err(Error::Schema(format!("`{name}`: unknown horizon `{other}`"))),
    };
    let kind_text = get("kind")?;
    let kind = match kind_text {
        "continuous" => FeatureKind::Continuous,
        "binary" => FeatureKind::Binary,
        k if k.starts_with("categorical(") && k.ends_with(')') => {
            let vocab = k["categorical(".len()..k.len() - 1]
                .parse()
                .map_err(|_| Error::Schema(format!("`{name}`: bad vocabulary in `{k}`")))?;
            FeatureKind::CategoricalTime { vocab }
        }
        other => return Err(Error::Schema(format!("`{name}`: unknown kind `{other}`"))),
    };
    let has_delta = match get("has_delta")? {
        "true" => true,
        "false" => false,
        other => return Err(Error::Schema(format!("`{name}`: has_delta must be true/false, got `{other}`"))),
    };
    let derive = map.get("derive").map(|(_, v)| Derived::parse(v)).transpose()?;
    Ok(FeatureSpec {
        name: name.to_string(),
        column: map.get("column").map_or(name, |(_, v)| *v).to_string(),
        group: FeatureGroup::parse(get("group")?)?,
        resolution,
        horizon,
        kind,
        has_delta,
        derive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layout_counts() {
        let s = FeatureSchema::reference_layout();
        let non_time = s.features.iter().filter(|f| f.group != FeatureGroup::Time).count();
        assert_eq!(non_time, 43);
        assert_eq!(s.input_count(), 91);
        assert_eq!(s.categorical_count(), 2);
        assert_eq!(s.expanded_count(5), 99);
        assert_eq!(s.channels().len(), 91);
    }

    #[test]
    fn text_round_trip() {
        let s = FeatureSchema::reference_layout();
        let parsed = FeatureSchema::parse(&s.to_text()).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.fingerprint(), s.fingerprint());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_categoricals() {
        let mut s = FeatureSchema::reference_layout();
        s.features[1].name = s.features[0].name.clone();
        assert!(s.validate().is_err());

        let mut s = FeatureSchema::reference_layout();
        s.features[0].kind = FeatureKind::CategoricalTime { vocab: 10 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_mixed_resolution_column() {
        let s = FeatureSchema::new(
            "si",
            vec![
                FeatureSpec::new("a", FeatureGroup::Other, Resolution::Minute, Horizon::Past, false).with_column("x"),
                FeatureSpec::new("b", FeatureGroup::Other, Resolution::QuarterHour, Horizon::Past, false).with_column("x"),
            ],
        );
        assert!(matches!(s, Err(Error::Schema(_))));
    }

    #[test]
    fn parse_reports_unknown_keys() {
        let text = "schema_version: 1\ntarget: si\n\nname: a\ngroup: other\nresolution: qh\nhorizon: past\nkind: continuous\nhas_delta: false\ncolour: red\n";
        let err = FeatureSchema::parse(text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }
}
