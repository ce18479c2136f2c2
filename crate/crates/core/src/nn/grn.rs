use rand::Rng;

use super::activation::{elu, elu_backward, sigmoid};
use super::dense::{Dense, InputGrad};
use super::dropout::{apply_mask, dropout_mask};
use super::norm::{LayerNorm, LayerNormCache};
use super::params::{join, Parameters};
use super::Tensor2;
use crate::error::{Error, Result};

/// Gated residual network:
///
/// ```text
/// η   = Dropout(W2 · ELU(W1 · x))
/// out = LayerNorm(skip(x) + σ(Wg · η) ⊙ η)
/// ```
///
/// `skip` is a learned linear map when input and output widths differ and
/// the identity otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Grn {
    pub skip: Option<Dense>,
    pub hidden: Dense,
    pub output: Dense,
    pub gate: Dense,
    pub norm: LayerNorm,
    pub dropout: f64,
}

/// Intermediates recorded by [`Grn::forward`].
#[derive(Clone, Debug)]
pub struct GrnTape {
    input: Tensor2,
    hidden_pre: Tensor2,
    hidden_act: Tensor2,
    mask: Option<Tensor2>,
    eta: Tensor2,
    gate: Tensor2,
    norm: LayerNormCache,
}

impl GrnTape {
    pub fn rows(&self) -> usize {
        self.input.rows()
    }
}

impl Grn {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, dropout: f64, rng: &mut R) -> Self {
        let skip = (input != output).then(|| Dense::new(input, output, rng));
        Grn {
            skip,
            hidden: Dense::new(input, hidden, rng),
            output: Dense::new(hidden, output, rng),
            gate: Dense::new(output, output, rng),
            norm: LayerNorm::new(output),
            dropout,
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.output.output_width()
    }

    /// Runs the block. Dropout is active only when `dropout_rng` is given.
    pub fn forward<R: Rng + ?Sized>(&self, x: Tensor2, dropout_rng: Option<&mut R>) -> Result<(Tensor2, GrnTape)> {
        if x.cols() != self.input_width() {
            return Err(Error::shape("grn_forward", self.input_width(), x.cols()));
        }
        let hidden_pre = self.hidden.forward(&x)?;
        let hidden_act = elu(&hidden_pre);
        let mut eta = self.output.forward(&hidden_act)?;
        let mask = match dropout_rng {
            Some(rng) => dropout_mask(eta.rows(), eta.cols(), self.dropout, rng),
            None => None,
        };
        if let Some(m) = &mask {
            apply_mask(&mut eta, m);
        }
        let gate = sigmoid(&self.gate.forward(&eta)?);
        let mut z = match &self.skip {
            Some(s) => s.forward(&x)?,
            None => x.clone(),
        };
        for ((zv, g), e) in z.data_mut().iter_mut().zip(gate.data()).zip(eta.data()) {
            *zv += g * e;
        }
        let (y, norm) = self.norm.forward(&z);
        Ok((
            y,
            GrnTape {
                input: x,
                hidden_pre,
                hidden_act,
                mask,
                eta,
                gate,
                norm,
            },
        ))
    }

    pub fn backward(
        &self,
        tape: &GrnTape,
        dy: &Tensor2,
        grad: &mut Grn,
        input_grad: InputGrad,
    ) -> Result<Option<Tensor2>> {
        let dz = self.norm.backward(&tape.norm, dy, &mut grad.norm);

        // linear branch
        let mut dx = match (&self.skip, grad.skip.as_mut()) {
            (Some(s), Some(gs)) => s.backward(&tape.input, &dz, gs, input_grad.clone())?,
            (None, _) => match &input_grad {
                InputGrad::None => None,
                InputGrad::All => Some(dz.clone()),
                InputGrad::Columns(c) => Some(column_slice(&dz, c.clone())),
            },
            (Some(_), None) => return Err(Error::shape("grn_backward", "skip gradient", "none")),
        };

        // gated branch
        let mut d_eta = dz.clone();
        let mut d_gate_pre = dz;
        for i in 0..d_eta.len() {
            let g = tape.gate.data()[i];
            let e = tape.eta.data()[i];
            let upstream = d_eta.data()[i];
            d_eta.data_mut()[i] = upstream * g;
            d_gate_pre.data_mut()[i] = upstream * e * g * (1.0 - g);
        }
        let from_gate = self
            .gate
            .backward(&tape.eta, &d_gate_pre, &mut grad.gate, InputGrad::All)?
            .expect("requested");
        d_eta.add_assign(&from_gate);
        if let Some(m) = &tape.mask {
            apply_mask(&mut d_eta, m);
        }
        let mut d_hidden = self
            .output
            .backward(&tape.hidden_act, &d_eta, &mut grad.output, InputGrad::All)?
            .expect("requested");
        elu_backward(&tape.hidden_pre, &mut d_hidden);
        let from_hidden = self
            .hidden
            .backward(&tape.input, &d_hidden, &mut grad.hidden, input_grad)?;
        if let (Some(a), Some(b)) = (dx.as_mut(), from_hidden) {
            a.add_assign(&b);
        }
        Ok(dx)
    }
}

fn column_slice(t: &Tensor2, cols: std::ops::Range<usize>) -> Tensor2 {
    let mut out = Tensor2::zeros(t.rows(), cols.len());
    for r in 0..t.rows() {
        out.row_mut(r).copy_from_slice(&t.row(r)[cols.clone()]);
    }
    out
}

impl Parameters for Grn {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        if let Some(s) = &self.skip {
            s.collect_params(&join(prefix, "skip"), out);
        }
        self.hidden.collect_params(&join(prefix, "hidden"), out);
        self.output.collect_params(&join(prefix, "output"), out);
        self.gate.collect_params(&join(prefix, "gate"), out);
        self.norm.collect_params(&join(prefix, "norm"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        if let Some(s) = &mut self.skip {
            s.collect_params_mut(&join(prefix, "skip"), out);
        }
        self.hidden.collect_params_mut(&join(prefix, "hidden"), out);
        self.output.collect_params_mut(&join(prefix, "output"), out);
        self.gate.collect_params_mut(&join(prefix, "gate"), out);
        self.norm.collect_params_mut(&join(prefix, "norm"), out);
    }
}
