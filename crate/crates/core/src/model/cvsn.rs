//! Constant variable selection network.
//!
//! Every expanded input column gets its own GRN over the whole window, one
//! selection GRN turns the flattened window into a single softmax weight per
//! column, and a two-layer head maps the weighted sum to all quantiles of
//! all horizons at once.

use std::ops::Range;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::forecast::QUANTILES;
use super::Network;
use crate::data::{Dataset, TargetMode};
use crate::error::{Error, Result};
use crate::nn::{
    dot, join, relu, relu_backward, softmax_rows, softmax_rows_backward, Dense, Embedding, Grn, GrnTape, InputGrad,
    NnRng, Parameters, Tensor2,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VsnVariant {
    /// One weight vector per sample.
    Constant,
    /// One weight vector per timestep; GRNs see a single value at a time and
    /// the head sees the flattened N_c·h representation.
    PerTimestep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvsnConfig {
    pub n_c: usize,
    pub n_o: usize,
    /// h: GRN output width.
    pub hidden: usize,
    /// h': GRN internal width and head width.
    pub inner: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub target: TargetMode,
    pub variant: VsnVariant,
    pub quantiles: Vec<f64>,
    /// Vocabulary of each input channel; `None` for numeric channels.
    pub vocabs: Vec<Option<usize>>,
}

impl CvsnConfig {
    pub fn new(n_c: usize, n_o: usize, vocabs: Vec<Option<usize>>, target: TargetMode) -> Self {
        CvsnConfig {
            n_c,
            n_o,
            hidden: 10,
            inner: 32,
            embed_dim: 5,
            dropout: 0.1,
            target,
            variant: VsnVariant::Constant,
            quantiles: QUANTILES.to_vec(),
            vocabs,
        }
    }

    pub fn for_dataset(ds: &Dataset, target: TargetMode) -> Self {
        Self::new(ds.n_c(), ds.n_o(), ds.channels().iter().map(|c| c.vocab).collect(), target)
    }

    pub fn n_f(&self) -> usize {
        self.vocabs.len()
    }

    pub fn n_q(&self) -> usize {
        self.quantiles.len()
    }

    pub fn embedded(&self) -> usize {
        self.vocabs.iter().filter(|v| v.is_some()).count()
    }

    /// N'_f.
    pub fn expanded(&self) -> usize {
        self.n_f() - self.embedded() + self.embedded() * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_c == 0 || self.n_o == 0 || self.hidden == 0 || self.inner == 0 || self.n_f() == 0 {
            return bad("model sizes must be positive");
        }
        if self.embedded() > 0 && self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("quantiles must be strictly increasing inside (0, 1)");
        }
        Ok(())
    }

    /// Expanded columns: numeric channels in order, then every embedding
    /// dimension of every categorical channel.
    fn columns(&self) -> Vec<Column> {
        let mut cols: Vec<Column> = (0..self.n_f())
            .filter(|&c| self.vocabs[c].is_none())
            .map(Column::Channel)
            .collect();
        let mut e = 0;
        for c in 0..self.n_f() {
            if self.vocabs[c].is_some() {
                cols.extend((0..self.embed_dim).map(|dim| Column::Embedding { channel: c, table: e, dim }));
                e += 1;
            }
        }
        cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    Channel(usize),
    Embedding { channel: usize, table: usize, dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvsnModel {
    config: CvsnConfig,
    columns: Vec<Column>,
    pub embeddings: Vec<Embedding>,
    pub features: Vec<Grn>,
    pub selection: Grn,
    pub head_hidden: Dense,
    pub head_out: Dense,
}

/// GRN evaluation counts of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub grn_calls: usize,
    pub grn_rows: usize,
}

#[derive(Debug)]
pub struct CvsnTape {
    batch: usize,
    codes: Vec<Vec<usize>>,
    feature_out: Vec<Tensor2>,
    feature_tapes: Vec<GrnTape>,
    selection: GrnTape,
    weights: Tensor2,
    combined: Tensor2,
    head_pre: Tensor2,
    head_act: Tensor2,
    pub stats: ForwardStats,
}

impl CvsnTape {
    /// Softmax feature weights: B × N'_f (constant variant) or
    /// (B·N_c) × N'_f (per-timestep variant).
    pub fn weights(&self) -> &Tensor2 {
        &self.weights
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl CvsnModel {
    pub fn new(config: CvsnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = NnRng::seed_from_u64(seed);
        let columns = config.columns();
        let embeddings = config
            .vocabs
            .iter()
            .flatten()
            .map(|&v| Embedding::new(v, config.embed_dim, &mut rng))
            .collect();
        let (feat_in, sel_in, head_in) = match config.variant {
            VsnVariant::Constant => (config.n_c, config.n_c * columns.len(), config.hidden),
            VsnVariant::PerTimestep => (1, columns.len(), config.n_c * config.hidden),
        };
        let features = (0..columns.len())
            .map(|_| Grn::new(feat_in, config.inner, config.hidden, config.dropout, &mut rng))
            .collect();
        let selection = Grn::new(sel_in, config.inner, columns.len(), config.dropout, &mut rng);
        let head_hidden = Dense::new(head_in, config.inner, &mut rng);
        let head_out = Dense::new(config.inner, config.n_o * config.n_q(), &mut rng);
        Ok(CvsnModel {
            config,
            columns,
            embeddings,
            features,
            selection,
            head_hidden,
            head_out,
        })
    }

    pub fn config(&self) -> &CvsnConfig {
        &self.config
    }

    fn n_numeric(&self) -> usize {
        self.config.n_f() - self.config.embedded()
    }

    /// Expanded column indices belonging to the given input channels.
    pub fn columns_of_channels(&self, channels: &[usize]) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| match c {
                Column::Channel(ch) | Column::Embedding { channel: ch, .. } => channels.contains(ch),
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Input channel of every expanded column.
    pub fn column_channels(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|c| match c {
                Column::Channel(ch) | Column::Embedding { channel: ch, .. } => *ch,
            })
            .collect()
    }

    /// Draw fresh parameters for the GRNs of the given expanded columns.
    pub fn reinit_features(&mut self, columns: &[usize], seed: u64) {
        let mut rng = NnRng::seed_from_u64(seed);
        for &j in columns {
            let g = &self.features[j];
            self.features[j] = Grn::new(
                g.input_width(),
                self.config.inner,
                self.config.hidden,
                self.config.dropout,
                &mut rng,
            );
        }
    }

    fn check_inputs(&self, inputs: &[Tensor2]) -> Result<usize> {
        if inputs.len() != self.config.n_f() {
            return Err(Error::shape("cvsn_forward channels", self.config.n_f(), inputs.len()));
        }
        let b = inputs[0].rows();
        for x in inputs {
            if x.shape() != (b, self.config.n_c) {
                return Err(Error::shape(
                    "cvsn_forward input",
                    format!("{b}x{}", self.config.n_c),
                    format!("{}x{}", x.rows(), x.cols()),
                ));
            }
        }
        Ok(b)
    }

    /// Replace categorical channels by their embedding columns. Returns the
    /// N'_f expanded B × N_c matrices and the looked-up row of every cell.
    pub fn embed_time(&self, inputs: &[Tensor2]) -> Result<(Vec<Tensor2>, Vec<Vec<usize>>)> {
        let b = self.check_inputs(inputs)?;
        let cells = b * self.config.n_c;
        let mut codes = Vec::with_capacity(self.embeddings.len());
        for (c, v) in self.config.vocabs.iter().enumerate() {
            if v.is_some() {
                let table = &self.embeddings[codes.len()];
                let idx = inputs[c]
                    .data()
                    .iter()
                    .map(|&code| table.index(code))
                    .collect::<Result<Vec<_>>>()?;
                codes.push(idx);
            }
        }
        let expanded = self
            .columns
            .iter()
            .map(|col| match *col {
                Column::Channel(c) => inputs[c].clone(),
                Column::Embedding { table, dim, .. } => {
                    let e = &self.embeddings[table];
                    let data = codes[table].iter().map(|&i| e.table.get(i, dim)).collect();
                    Tensor2::from_vec(b, self.config.n_c, data).expect("cells")
                }
            })
            .collect();
        debug_assert!(codes.iter().all(|c| c.len() == cells));
        Ok((expanded, codes))
    }

    fn selection_input(&self, expanded: &[Tensor2], b: usize) -> Tensor2 {
        let n_c = self.config.n_c;
        let nf = expanded.len();
        match self.config.variant {
            VsnVariant::Constant => {
                let mut x = Tensor2::zeros(b, nf * n_c);
                for r in 0..b {
                    let row = x.row_mut(r);
                    for (j, col) in expanded.iter().enumerate() {
                        row[j * n_c..(j + 1) * n_c].copy_from_slice(col.row(r));
                    }
                }
                x
            }
            VsnVariant::PerTimestep => {
                let mut x = Tensor2::zeros(b * n_c, nf);
                let d = x.data_mut();
                for (j, col) in expanded.iter().enumerate() {
                    for (cell, &v) in col.data().iter().enumerate() {
                        d[cell * nf + j] = v;
                    }
                }
                x
            }
        }
    }

    fn embedding_range(&self) -> Range<usize> {
        let (start, end) = (self.n_numeric(), self.columns.len());
        match self.config.variant {
            VsnVariant::Constant => start * self.config.n_c..end * self.config.n_c,
            VsnVariant::PerTimestep => start..end,
        }
    }

    pub fn forward(&self, inputs: &[Tensor2], mut rng: Option<&mut NnRng>) -> Result<(Tensor2, CvsnTape)> {
        let (expanded, codes) = self.embed_time(inputs)?;
        let b = inputs[0].rows();
        let n_c = self.config.n_c;
        let rows = match self.config.variant {
            VsnVariant::Constant => b,
            VsnVariant::PerTimestep => b * n_c,
        };
        let sel_in = self.selection_input(&expanded, b);

        let mut stats = ForwardStats::default();
        let mut feature_out = Vec::with_capacity(expanded.len());
        let mut feature_tapes = Vec::with_capacity(expanded.len());
        for (grn, x) in self.features.iter().zip(expanded) {
            let x = match self.config.variant {
                VsnVariant::Constant => x,
                VsnVariant::PerTimestep => x.reshape(rows, 1)?,
            };
            let (y, tape) = grn.forward(x, rng.as_deref_mut())?;
            stats.grn_calls += 1;
            stats.grn_rows += rows;
            feature_out.push(y);
            feature_tapes.push(tape);
        }
        let (logits, selection) = self.selection.forward(sel_in, rng.as_deref_mut())?;
        stats.grn_calls += 1;
        stats.grn_rows += rows;
        let weights = softmax_rows(&logits);

        let h = self.config.hidden;
        let mut combined = Tensor2::zeros(rows, h);
        for (j, y) in feature_out.iter().enumerate() {
            for r in 0..rows {
                let w = weights.get(r, j);
                for (acc, &v) in combined.row_mut(r).iter_mut().zip(y.row(r)) {
                    *acc += w * v;
                }
            }
        }
        let combined = combined.reshape(b, rows / b.max(1) * h)?;
        let head_pre = self.head_hidden.forward(&combined)?;
        let head_act = relu(&head_pre);
        let out = self.head_out.forward(&head_act)?;
        Ok((
            out,
            CvsnTape {
                batch: b,
                codes,
                feature_out,
                feature_tapes,
                selection,
                weights,
                combined,
                head_pre,
                head_act,
                stats,
            },
        ))
    }

    pub fn backward(&self, tape: &CvsnTape, d_out: &Tensor2, grad: &mut CvsnModel) -> Result<()> {
        let b = tape.batch;
        let n_c = self.config.n_c;
        let h = self.config.hidden;
        let rows = tape.weights.rows();

        let mut d_act = self
            .head_out
            .backward(&tape.head_act, d_out, &mut grad.head_out, InputGrad::All)?
            .expect("requested");
        relu_backward(&tape.head_pre, &mut d_act);
        let d_comb = self
            .head_hidden
            .backward(&tape.combined, &d_act, &mut grad.head_hidden, InputGrad::All)?
            .expect("requested")
            .reshape(rows, h)?;

        let nf = self.columns.len();
        let mut d_w = Tensor2::zeros(rows, nf);
        let mut d_ys = Vec::with_capacity(nf);
        for (j, y) in tape.feature_out.iter().enumerate() {
            let mut d_y = Tensor2::zeros(rows, h);
            for r in 0..rows {
                let w = tape.weights.get(r, j);
                let g = d_comb.row(r);
                d_w.set(r, j, dot(g, y.row(r)));
                for (dst, &v) in d_y.row_mut(r).iter_mut().zip(g) {
                    *dst = w * v;
                }
            }
            d_ys.push(d_y);
        }
        let d_logits = softmax_rows_backward(&tape.weights, &d_w);
        let emb_range = self.embedding_range();
        let want_sel = if self.embeddings.is_empty() {
            InputGrad::None
        } else {
            InputGrad::Columns(emb_range.clone())
        };
        let d_sel = self
            .selection
            .backward(&tape.selection, &d_logits, &mut grad.selection, want_sel)?;

        let n_num = self.n_numeric();
        for (j, ((grn, t), d_y)) in self.features.iter().zip(&tape.feature_tapes).zip(&d_ys).enumerate() {
            let Column::Embedding { table, dim, .. } = self.columns[j] else {
                grn.backward(t, d_y, &mut grad.features[j], InputGrad::None)?;
                continue;
            };
            let mut d_x = grn
                .backward(t, d_y, &mut grad.features[j], InputGrad::All)?
                .expect("requested")
                .reshape(b, n_c)?;
            if let Some(ds) = &d_sel {
                let k = j - n_num;
                for r in 0..b {
                    for tau in 0..n_c {
                        let v = match self.config.variant {
                            VsnVariant::Constant => ds.get(r, k * n_c + tau),
                            VsnVariant::PerTimestep => ds.get(r * n_c + tau, k),
                        };
                        d_x.data_mut()[r * n_c + tau] += v;
                    }
                }
            }
            let g = &mut grad.embeddings[table];
            for (cell, &v) in d_x.data().iter().enumerate() {
                Embedding::accumulate(g, tape.codes[table][cell], dim, v);
            }
        }
        Ok(())
    }

    /// Softmax feature weights for a batch (no dropout).
    pub fn feature_weights(&self, inputs: &[Tensor2]) -> Result<Tensor2> {
        Ok(self.forward(inputs, None)?.1.weights)
    }
}

impl Parameters for CvsnModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        for (i, e) in self.embeddings.iter().enumerate() {
            e.collect_params(&join(prefix, &format!("embedding.{i}")), out);
        }
        for (i, g) in self.features.iter().enumerate() {
            g.collect_params(&join(prefix, &format!("feature.{i}")), out);
        }
        self.selection.collect_params(&join(prefix, "selection"), out);
        self.head_hidden.collect_params(&join(prefix, "head.hidden"), out);
        self.head_out.collect_params(&join(prefix, "head.output"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        for (i, e) in self.embeddings.iter_mut().enumerate() {
            e.collect_params_mut(&join(prefix, &format!("embedding.{i}")), out);
        }
        for (i, g) in self.features.iter_mut().enumerate() {
            g.collect_params_mut(&join(prefix, &format!("feature.{i}")), out);
        }
        self.selection.collect_params_mut(&join(prefix, "selection"), out);
        self.head_hidden.collect_params_mut(&join(prefix, "head.hidden"), out);
        self.head_out.collect_params_mut(&join(prefix, "head.output"), out);
    }
}

impl Network for CvsnModel {
    type Tape = CvsnTape;

    fn forward_train(&self, inputs: &[Tensor2], rng: Option<&mut NnRng>) -> Result<(Tensor2, CvsnTape)> {
        self.forward(inputs, rng)
    }

    fn backward(&self, tape: &CvsnTape, d_out: &Tensor2, grad: &mut Self) -> Result<()> {
        CvsnModel::backward(self, tape, d_out, grad)
    }

    fn infer(&self, inputs: &[Tensor2]) -> Result<Tensor2> {
        Ok(self.forward(inputs, None)?.0)
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
        "cvsn"
    }
}
