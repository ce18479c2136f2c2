//! Quantile linear regression: one affine map from the flattened window.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetMode};
use crate::error::{Error, Result};
use crate::nn::{Dense, InputGrad, NnRng, Parameters, Tensor2};

use super::{Network, QUANTILES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub n_c: usize,
    pub n_o: usize,
    pub target: TargetMode,
    pub quantiles: Vec<f64>,
    pub vocabs: Vec<Option<usize>>,
}

impl LinearConfig {
    pub fn new(n_c: usize, n_o: usize, vocabs: Vec<Option<usize>>, target: TargetMode) -> Self {
        LinearConfig { n_c, n_o, target, quantiles: QUANTILES.to_vec(), vocabs }
    }

    pub fn for_dataset(ds: &Dataset, target: TargetMode) -> Self {
        Self::new(ds.n_c(), ds.n_o(), ds.channels().iter().map(|c| c.vocab).collect(), target)
    }

    pub fn n_f(&self) -> usize {
        self.vocabs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.n_o == 0 || self.n_f() == 0 || self.quantiles.is_empty() {
            return Err(Error::Config("linear model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and std of a code drawn uniformly from 0..vocab.
fn code_stats(vocab: usize) -> (f64, f64) {
    let v = vocab as f64;
    ((v - 1.0) / 2.0, ((v * v - 1.0) / 12.0).sqrt().max(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearQuantileModel {
    config: LinearConfig,
    pub dense: Dense,
}

impl LinearQuantileModel {
    pub fn new(config: LinearConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = NnRng::seed_from_u64(seed);
        let dense = Dense::new(config.n_c * config.n_f(), config.n_o * config.quantiles.len(), &mut rng);
        Ok(LinearQuantileModel { config, dense })
    }

    pub fn config(&self) -> &LinearConfig {
        &self.config
    }

    /// B × (N_f·N_c), channel-major. Categorical codes are standardized.
    pub fn flatten(&self, inputs: &[Tensor2]) -> Result<Tensor2> {
        let (n_f, n_c) = (self.config.n_f(), self.config.n_c);
        if inputs.len() != n_f {
            return Err(Error::shape("linear inputs", n_f, inputs.len()));
        }
        let b = inputs[0].rows();
        let mut x = Tensor2::zeros(b, n_f * n_c);
        for (j, t) in inputs.iter().enumerate() {
            if t.shape() != (b, n_c) {
                return Err(Error::shape("linear input", format!("{b}x{n_c}"), format!("{}x{}", t.rows(), t.cols())));
            }
            let (mean, std) = self.config.vocabs[j].map_or((0.0, 1.0), code_stats);
            for r in 0..b {
                for (dst, &v) in x.row_mut(r)[j * n_c..(j + 1) * n_c].iter_mut().zip(t.row(r)) {
                    *dst = (v - mean) / std;
                }
            }
        }
        Ok(x)
    }
}

impl Parameters for LinearQuantileModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        self.dense.collect_params(&crate::nn::join(prefix, "dense"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        self.dense.collect_params_mut(&crate::nn::join(prefix, "dense"), out);
    }
}

impl Network for LinearQuantileModel {
    type Tape = Tensor2;

    fn forward_train(&self, inputs: &[Tensor2], _rng: Option<&mut NnRng>) -> Result<(Tensor2, Tensor2)> {
        let x = self.flatten(inputs)?;
        Ok((self.dense.forward(&x)?, x))
    }

    fn backward(&self, x: &Tensor2, d_out: &Tensor2, grad: &mut Self) -> Result<()> {
        self.dense.backward(x, d_out, &mut grad.dense, InputGrad::None)?;
        Ok(())
    }

    fn infer(&self, inputs: &[Tensor2]) -> Result<Tensor2> {
        self.dense.forward(&self.flatten(inputs)?)
    }

    fn target(&self) -> TargetMode {
        self.config.target
    }

    fn n_o(&self) -> usize {
        self.config.n_o
    }

    fn quantiles(&self) -> &[f64] {
        &self.config.quantiles
    }

    fn kind(&self) -> &'static str {
        "linear"
    }
}
