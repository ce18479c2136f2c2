//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CVSNCKPT"  u32 version  u64 meta_len  meta (JSON, UTF-8)
//! u32 record_count
//! per record: u32 name_len  name  u64 rows  u64 cols  rows·cols × f64
//! ```
//!
//! Records follow the model's `named_params` order and are matched by name
//! and shape on load, so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScalerStats};
use crate::error::{Error, Result};
use crate::model::{predict, CvsnConfig, CvsnModel, ForecastSet, LinearConfig, LinearQuantileModel, Network};
use crate::nn::{Parameters, Tensor2};
use crate::training::TrainHistory;

pub const MAGIC: &[u8; 8] = b"CVSNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Cvsn(CvsnModel),
    Linear(LinearQuantileModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Cvsn(m) => m.kind(),
            AnyModel::Linear(m) => m.kind(),
        }
    }

    pub fn predict(&self, ds: &Dataset, rows: &[usize], zeroed: Option<&[bool]>) -> Result<ForecastSet> {
        match self {
            AnyModel::Cvsn(m) => predict(m, ds, rows, zeroed),
            AnyModel::Linear(m) => predict(m, ds, rows, zeroed),
        }
    }

    pub fn infer(&self, inputs: &[Tensor2]) -> Result<Tensor2> {
        match self {
            AnyModel::Cvsn(m) => m.infer(inputs),
            AnyModel::Linear(m) => m.infer(inputs),
        }
    }

    fn params(&self) -> Vec<(String, &Tensor2)> {
        match self {
            AnyModel::Cvsn(m) => m.named_params(),
            AnyModel::Linear(m) => m.named_params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        match self {
            AnyModel::Cvsn(m) => m.named_params_mut(),
            AnyModel::Linear(m) => m.named_params_mut(),
        }
    }

    fn config_json(&self) -> Result<serde_json::Value> {
        let v = match self {
            AnyModel::Cvsn(m) => serde_json::to_value(m.config()),
            AnyModel::Linear(m) => serde_json::to_value(m.config()),
        };
        v.map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model_kind: String,
    pub config: serde_json::Value,
    pub schema_fingerprint: String,
    pub scaler: ScalerStats,
    pub seed: u64,
    pub loss_weight: f64,
    pub config_hash: String,
    pub training: Option<TrainHistory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: AnyModel,
}

impl Checkpoint {
    /// Wall-clock timings in `training` are dropped so identical runs give
    /// identical files.
    pub fn new(model: AnyModel, ds: &Dataset, seed: u64, loss_weight: f64, config_hash: &str, mut training: Option<TrainHistory>) -> Result<Self> {
        if let Some(h) = training.as_mut() {
            h.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        }
        let meta = CheckpointMeta {
            model_kind: model.kind().to_string(),
            config: model.config_json()?,
            schema_fingerprint: ds.schema().fingerprint(),
            scaler: ds.scaler().clone(),
            seed,
            loss_weight,
            config_hash: config_hash.to_string(),
            training,
        };
        Ok(Checkpoint { meta, model })
    }

    /// Hard error unless `ds` was built from the schema this model saw.
    pub fn check_schema(&self, ds: &Dataset) -> Result<()> {
        let found = ds.schema().fingerprint();
        if found != self.meta.schema_fingerprint {
            return Err(Error::Fingerprint { expected: self.meta.schema_fingerprint.clone(), found });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        let params = self.model.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let meta_len = read_u64(r)? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(r, &mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("model config: {e}"));
        let mut model = match meta.model_kind.as_str() {
            "cvsn" => AnyModel::Cvsn(CvsnModel::new(serde_json::from_value::<CvsnConfig>(meta.config.clone()).map_err(bad)?, 0)?),
            "linear" => AnyModel::Linear(LinearQuantileModel::new(
                serde_json::from_value::<LinearConfig>(meta.config.clone()).map_err(bad)?,
                0,
            )?),
            other => return Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        };
        let count = read_u32(r)? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameter records, found {count}", params.len())));
        }
        for (name, t) in params.iter_mut() {
            let len = read_u32(r)? as usize;
            let mut got = vec![0u8; len];
            read_exact(r, &mut got)?;
            if got != name.as_bytes() {
                return Err(Error::Checkpoint(format!("expected record `{name}`, found `{}`", String::from_utf8_lossy(&got))));
            }
            let (rows, cols) = (read_u64(r)? as usize, read_u64(r)? as usize);
            if (rows, cols) != t.shape() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {rows}x{cols}, model needs {}x{}", t.rows(), t.cols())));
            }
            let mut buf = vec![0u8; rows * cols * 8];
            read_exact(r, &mut buf)?;
            for (dst, b) in t.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
                *dst = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
        }
        drop(params);
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after the last record".into()));
        }
        Ok(Checkpoint { meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
