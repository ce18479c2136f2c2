//! Diversity ensembles: per-member seed, bootstrap draw, target mode and
//! loss weight, averaged per quantile in MW.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetMode};
use crate::error::{Error, Result};
use crate::model::{predict, ForecastSet, Network};
use crate::nn::NnRng;
use crate::par;
use crate::training::{train, TrainConfig, TrainData, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub size: usize,
    pub base_seed: u64,
    pub c_min: f64,
    pub c_max: f64,
    /// Odd members (1-based) predict SI, even members ΔSI.
    pub alternate_targets: bool,
    pub bootstrap: bool,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            size: 21,
            base_seed: 0,
            c_min: 0.0,
            c_max: 0.1,
            alternate_targets: true,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    /// 0-based.
    pub index: usize,
    pub seed: u64,
    pub c: f64,
    pub target: TargetMode,
    pub bootstrap: bool,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("ensemble size must be positive".into()));
        }
        if !(self.c_min >= 0.0 && self.c_max >= self.c_min) {
            return Err(Error::Config("need 0 <= c_min <= c_max".into()));
        }
        Ok(())
    }

    /// Evenly spaced from `c_min` to `c_max`; a single member uses `c_min`.
    pub fn c_schedule(&self) -> Vec<f64> {
        if self.size == 1 {
            return vec![self.c_min];
        }
        let step = (self.c_max - self.c_min) / (self.size - 1) as f64;
        (0..self.size)
            .map(|i| if i + 1 == self.size { self.c_max } else { self.c_min + step * i as f64 })
            .collect()
    }

    pub fn members(&self) -> Vec<MemberSpec> {
        self.c_schedule()
            .into_iter()
            .enumerate()
            .map(|(index, c)| MemberSpec {
                index,
                seed: self.base_seed.wrapping_add(index as u64),
                c,
                target: if self.alternate_targets && index % 2 == 1 { TargetMode::DeltaSi } else { TargetMode::Si },
                bootstrap: self.bootstrap,
            })
            .collect()
    }
}

const BOOTSTRAP_STREAM: u64 = 0xb007;

/// `rows.len()` draws with replacement.
pub fn bootstrap_rows(rows: &[usize], seed: u64) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    let mut rng = NnRng::seed_from_u64(seed);
    rng.set_stream(BOOTSTRAP_STREAM);
    (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect()
}

pub fn unique_fraction(draw: &[usize]) -> f64 {
    draw.iter().collect::<BTreeSet<_>>().len() as f64 / draw.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct Member<N> {
    pub spec: MemberSpec,
    pub model: N,
    pub history: TrainHistory,
}

/// Train every member independently. `make` builds the untrained network for
/// a member (its seed and target mode are in the spec).
pub fn build_ensemble<N, F>(spec: &EnsembleSpec, data: &TrainData, base: &TrainConfig, make: F) -> Result<Vec<Member<N>>>
where
    N: Network,
    F: Fn(&MemberSpec) -> Result<N> + Sync + Send,
{
    spec.validate()?;
    let members = spec.members();
    let results = par::map_slice(&members, |m| train_member(m, data, base, &make));
    results.into_iter().collect()
}

pub fn train_member<N, F>(m: &MemberSpec, data: &TrainData, base: &TrainConfig, make: &F) -> Result<Member<N>>
where
    N: Network,
    F: Fn(&MemberSpec) -> Result<N>,
{
    let wrap = |e: Error| Error::Member { index: m.index, source: Box::new(e) };
    let mut model = make(m).map_err(wrap)?;
    if model.target() != m.target {
        return Err(wrap(Error::Config("member network target differs from its spec".into())));
    }
    let rows = if m.bootstrap { bootstrap_rows(&data.train, m.seed) } else { data.train.clone() };
    let local = TrainData { train: rows, ..data.clone() };
    let cfg = TrainConfig { loss_weight: m.c, seed: m.seed, ..base.clone() };
    let history = train(&mut model, &local, &cfg, None).map_err(wrap)?;
    Ok(Member { spec: m.clone(), model, history })
}

/// Per-member MW forecasts.
pub fn member_forecasts<N: Network>(members: &[&N], ds: &Dataset, rows: &[usize], zeroed: Option<&[bool]>) -> Result<Vec<ForecastSet>> {
    members.iter().map(|m| predict(*m, ds, rows, zeroed)).collect()
}

/// Mean of the member quantiles in MW.
pub fn ensemble_predict<N: Network>(members: &[&N], ds: &Dataset, rows: &[usize], zeroed: Option<&[bool]>) -> Result<ForecastSet> {
    ForecastSet::average(&member_forecasts(members, ds, rows, zeroed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub checkpoint: String,
    pub seed: u64,
    pub bootstrap_seed: Option<u64>,
    pub c: f64,
    pub target: TargetMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub model_kind: String,
    pub schema_fingerprint: String,
    pub config_hash: String,
    pub members: Vec<ManifestEntry>,
}

impl EnsembleManifest {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
