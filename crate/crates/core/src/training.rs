//! Weighted multi-quantile loss, the mini-batch training loop and
//! fine-tuning for features with a short history.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{predict, CvsnModel, Network};
use crate::nn::{Adam, NnRng, Parameters, Tensor2};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// c in w(s) = 1 + c·s².
    pub loss_weight: f64,
    pub seed: u64,
    /// Rows per independently computed gradient chunk.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.001,
            patience: 2,
            loss_weight: 0.0,
            seed: 0,
            chunk_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config("epochs, batch_size and chunk_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.loss_weight >= 0.0) {
            return Err(Error::Config("loss_weight must be non-negative".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// w(s) = 1 + c·s² on standardized labels.
#[inline]
pub fn loss_weight(s: f64, c: f64) -> f64 {
    1.0 + c * s * s
}

/// Mean over samples, horizons and quantiles of w(s)·L_q(s, ŝ_q).
/// `pred` is B × (n_o·n_q) horizon-major, `labels` B × n_o.
pub fn quantile_loss(pred: &Tensor2, labels: &Tensor2, levels: &[f64], c: f64) -> Result<f64> {
    let (sum, n) = loss_sum(pred, labels, levels, c, None)?;
    Ok(sum / n as f64)
}

/// Sum of weighted pinball terms and their count. When `grad` is given the
/// derivative of the sum, scaled by `scale`, is written into it.
fn loss_sum(pred: &Tensor2, labels: &Tensor2, levels: &[f64], c: f64, mut grad: Option<(&mut Tensor2, f64)>) -> Result<(f64, usize)> {
    let (b, n_o) = labels.shape();
    let n_q = levels.len();
    if pred.shape() != (b, n_o * n_q) {
        return Err(Error::shape(
            "quantile_loss",
            format!("{b}x{}", n_o * n_q),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    let mut sum = 0.0;
    for r in 0..b {
        let p = pred.row(r);
        for i in 0..n_o {
            let s = labels.get(r, i);
            let w = loss_weight(s, c);
            for (j, &q) in levels.iter().enumerate() {
                let k = i * n_q + j;
                sum += w * eval::pinball(q, s, p[k]);
                if let Some((g, scale)) = grad.as_mut() {
                    let d = if s > p[k] { -q } else { 1.0 - q };
                    g.row_mut(r)[k] = w * d * *scale;
                }
            }
        }
    }
    Ok((sum, b * n_o * n_q))
}

/// Pairs one forward pass with at most one backward pass.
pub struct Session<'a, N: Network> {
    net: &'a N,
    tape: Option<N::Tape>,
}

impl<'a, N: Network> Session<'a, N> {
    pub fn new(net: &'a N) -> Self {
        Session { net, tape: None }
    }

    pub fn forward(&mut self, inputs: &[Tensor2], rng: Option<&mut NnRng>) -> Result<Tensor2> {
        let (out, tape) = self.net.forward_train(inputs, rng)?;
        self.tape = Some(tape);
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor2, grad: &mut N) -> Result<()> {
        let tape = self.tape.take().ok_or(Error::NoForward)?;
        self.net.backward(&tape, d_out, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub val_crps: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("epoch,train_loss,val_rmse_mw,val_crps_mw,wall_seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{:.3}", e.epoch, e.train_loss, e.val_rmse, e.val_crps, e.wall_seconds);
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// Issue rows and channel masking for one training run.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub ds: &'a Dataset,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Channels held at zero in every batch.
    pub zeroed: Option<Vec<bool>>,
}

/// Validation RMSE and CRPS in MW.
pub fn validation_metrics<N: Network>(net: &N, ds: &Dataset, rows: &[usize], zeroed: Option<&[bool]>) -> Result<(f64, f64)> {
    let set = predict(net, ds, rows, zeroed)?;
    let crps = eval::crps_rows(&set)?;
    let truth = set.truth.as_ref().expect("predict fills truth");
    let rmse = eval::rmse(set.medians().data(), truth.data())?;
    Ok((rmse, crps.iter().sum::<f64>() / crps.len() as f64))
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    // (crps, rmse), lower is better, rmse breaks ties
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

const SHUFFLE_STREAM: u64 = 1 << 62;

/// Train with Adam and early stopping on validation CRPS. `trainable` flags
/// parameter tensors in `named_params` order; `None` trains everything.
pub fn train<N: Network>(net: &mut N, data: &TrainData, cfg: &TrainConfig, trainable: Option<&[bool]>) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let n_tensors = net.named_params().len();
    let all = vec![true; n_tensors];
    let trainable = trainable.unwrap_or(&all);
    if trainable.len() != n_tensors {
        return Err(Error::shape("train trainable flags", n_tensors, trainable.len()));
    }
    let zeroed = data.zeroed.as_deref();
    let target = net.target();
    let levels = net.quantiles().to_vec();
    let width = net.n_o() * levels.len();

    let mut adam = Adam::new(cfg.learning_rate);
    let mut order = data.train.clone();
    let mut history = TrainHistory::default();
    let mut best: Option<((f64, f64), N)> = None;
    let mut since_best = 0;
    let mut chunk_counter = 0u64;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut shuffle = NnRng::seed_from_u64(cfg.seed);
        shuffle.set_stream(SHUFFLE_STREAM + epoch as u64);
        order.shuffle(&mut shuffle);

        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0usize;
        for batch_rows in order.chunks(cfg.batch_size) {
            let chunks: Vec<(u64, &[usize])> = batch_rows
                .chunks(cfg.chunk_size)
                .map(|c| {
                    chunk_counter += 1;
                    (chunk_counter, c)
                })
                .collect();
            let scale = 1.0 / (batch_rows.len() * width) as f64;
            let net_ref: &N = net;
            let parts = par::map_slice(&chunks, |&(stream, rows)| -> Result<(N, f64, usize)> {
                let batch = data.ds.batch(rows, target, zeroed);
                let mut rng = NnRng::seed_from_u64(cfg.seed);
                rng.set_stream(stream);
                let mut session = Session::new(net_ref);
                let out = session.forward(&batch.inputs, Some(&mut rng))?;
                let mut d_out = Tensor2::zeros(out.rows(), out.cols());
                let (sum, n) = loss_sum(&out, &batch.labels, &levels, cfg.loss_weight, Some((&mut d_out, scale)))?;
                let mut grad = net_ref.zeroed();
                session.backward(&d_out, &mut grad)?;
                Ok((grad, sum, n))
            });
            let mut total: Option<N> = None;
            for p in parts {
                let (g, sum, n) = p?;
                epoch_loss += sum;
                epoch_terms += n;
                match total.as_mut() {
                    None => total = Some(g),
                    Some(t) => t.accumulate(&g),
                }
            }
            let total = total.expect("non-empty batch");
            if !epoch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads: Vec<&Tensor2> = total.named_params().into_iter().map(|(_, t)| t).collect();
            let mut params: Vec<&mut Tensor2> = net.named_params_mut().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut params, &grads, trainable)?;
        }
        let train_loss = epoch_loss / epoch_terms as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let (val_rmse, val_crps) = if data.validation.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            validation_metrics(net, data.ds, &data.validation, zeroed)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
            val_crps,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if data.validation.is_empty() {
            history.best_epoch = epoch;
            continue;
        }
        if !val_crps.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let score = (val_crps, val_rmse);
        if best.as_ref().is_none_or(|(b, _)| better(score, *b)) {
            best = Some((score, net.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    if let Some((_, b)) = best {
        *net = b;
    }
    Ok(history)
}

/// Flags every parameter tensor whose name satisfies `pred`.
pub fn flags_where<N: Parameters>(net: &N, pred: impl Fn(&str) -> bool) -> Vec<bool> {
    net.named_params().iter().map(|(n, _)| pred(n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Features whose history is limited.
    pub new_features: Vec<String>,
    /// Length of the recent window in days, counted back from the end of
    /// the train split.
    pub recent_days: f64,
    pub epochs: usize,
    pub reinit: bool,
    pub freeze: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            new_features: Vec::new(),
            recent_days: 120.0,
            epochs: 1,
            reinit: true,
            freeze: true,
        }
    }
}

/// Fine-tune a model that was trained with `new_features` held at zero:
/// reinitialize their GRNs, freeze the head, embeddings and all other
/// feature GRNs, and train for `cfg.epochs` on the recent rows with every
/// feature live. The selection network stays trainable.
pub fn finetune(model: &mut CvsnModel, data: &TrainData, train: &TrainConfig, cfg: &FinetuneConfig) -> Result<TrainHistory> {
    if data.train.is_empty() {
        return Err(Error::Training("recent window holds no samples".into()));
    }
    let mask = data.ds.channel_mask(&cfg.new_features)?;
    let channels: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let columns = model.columns_of_channels(&channels);
    if cfg.reinit {
        model.reinit_features(&columns, train.seed ^ 0x5eed_f17e);
    }
    let trainable = if cfg.freeze {
        let live: Vec<String> = columns.iter().map(|j| format!("feature.{j}.")).collect();
        flags_where(model, |name| name.starts_with("selection.") || live.iter().any(|p| name.starts_with(p)))
    } else {
        vec![true; model.named_params().len()]
    };
    let tc = TrainConfig {
        epochs: cfg.epochs,
        ..train.clone()
    };
    let live = TrainData {
        zeroed: None,
        ..data.clone()
    };
    train_with(model, &live, &tc, &trainable)
}

fn train_with(model: &mut CvsnModel, data: &TrainData, cfg: &TrainConfig, trainable: &[bool]) -> Result<TrainHistory> {
    train(model, data, cfg, Some(trainable))
}
