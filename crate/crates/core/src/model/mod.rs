//! C-VSN quantile model and the shared network interface.

mod cvsn;
mod forecast;
mod linear;

pub use cvsn::{CvsnConfig, CvsnModel, CvsnTape, ForwardStats, VsnVariant};
pub use linear::{LinearConfig, LinearQuantileModel};
pub use forecast::{crossings, to_mw, ForecastSet, QuantileForecast, QUANTILES};

use crate::data::{Dataset, TargetMode};
use crate::error::Result;
use crate::nn::{NnRng, Parameters, Tensor2};
use crate::par;

/// Rows per inference chunk.
pub const PREDICT_CHUNK: usize = 256;

/// A quantile network trainable by the shared loop. Outputs are
/// B × (n_o·n_q), horizon-major, in standardized label units.
pub trait Network: Parameters + Clone + Send + Sync {
    type Tape: Send;

    fn forward_train(&self, inputs: &[Tensor2], rng: Option<&mut NnRng>) -> Result<(Tensor2, Self::Tape)>;

    /// Accumulate parameter gradients of `sum(d_out ⊙ output)` into `grad`.
    fn backward(&self, tape: &Self::Tape, d_out: &Tensor2, grad: &mut Self) -> Result<()>;

    fn infer(&self, inputs: &[Tensor2]) -> Result<Tensor2>;

    fn target(&self) -> TargetMode;

    fn n_o(&self) -> usize;

    fn quantiles(&self) -> &[f64];

    fn kind(&self) -> &'static str;
}

/// MW forecasts for the given issue rows.
pub fn predict<N: Network>(net: &N, ds: &Dataset, rows: &[usize], zeroed: Option<&[bool]>) -> Result<ForecastSet> {
    let chunks: Vec<&[usize]> = rows.chunks(PREDICT_CHUNK).collect();
    let target = net.target();
    let stats = ds.label_stats(target);
    let parts = par::map_slice(&chunks, |chunk| -> Result<(Tensor2, Tensor2, Vec<i64>)> {
        let batch = ds.batch(chunk, target, zeroed);
        let out = net.infer(&batch.inputs)?;
        let mw = to_mw(&out, net.n_o(), target, stats, &batch.prev_si)?;
        Ok((mw, batch.truth, batch.issue_minutes))
    });
    let width = net.n_o() * net.quantiles().len();
    let mut values = Vec::with_capacity(rows.len() * width);
    let mut truth = Vec::with_capacity(rows.len() * net.n_o());
    let mut issue = Vec::with_capacity(rows.len());
    for p in parts {
        let (v, t, i) = p?;
        values.extend_from_slice(v.data());
        truth.extend_from_slice(t.data());
        issue.extend(i);
    }
    Ok(ForecastSet {
        levels: net.quantiles().to_vec(),
        n_o: net.n_o(),
        issue_minutes: issue,
        values: Tensor2::from_vec(rows.len(), width, values)?,
        truth: Some(Tensor2::from_vec(rows.len(), net.n_o(), truth)?),
    })
}
