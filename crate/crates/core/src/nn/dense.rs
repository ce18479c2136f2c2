use std::ops::Range;

use rand::Rng;

use super::params::{join, Parameters};
use super::tensor::{axpy, dot};
use super::Tensor2;
use crate::error::{Error, Result};

/// Which part of the input gradient a backward pass should produce.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputGrad {
    None,
    All,
    Columns(Range<usize>),
}

/// Fully-connected layer `y = x·Wᵀ + b` with `W` stored out × in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Dense {
    /// Uniform fan-in/fan-out initialization in ±√(6/(in+out)), zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            weight: Tensor2::from_vec(output, input, data).expect("sized above"),
            bias: Tensor2::zeros(1, output),
        }
    }

    pub fn from_parts(weight: Tensor2, bias: &[f64]) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("Dense::from_parts", weight.rows(), bias.len()));
        }
        Ok(Dense {
            weight,
            bias: Tensor2::row_vector(bias),
        })
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let (n, k) = x.shape();
        let m = self.output_width();
        if k != self.input_width() {
            return Err(Error::shape("dense_forward", self.input_width(), k));
        }
        let w = self.weight.data();
        let b = self.bias.data();
        let mut y = Tensor2::zeros(n, m);
        for r in 0..n {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = b[o] + dot(xr, &w[o * k..(o + 1) * k]);
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the requested
    /// slice of the input gradient.
    pub fn backward(
        &self,
        x: &Tensor2,
        dy: &Tensor2,
        grad: &mut Dense,
        input_grad: InputGrad,
    ) -> Result<Option<Tensor2>> {
        let (n, k) = x.shape();
        let m = self.output_width();
        if dy.shape() != (n, m) {
            return Err(Error::shape(
                "dense_backward",
                format!("{n}x{m}"),
                format!("{}x{}", dy.rows(), dy.cols()),
            ));
        }
        {
            let gw = grad.weight.data_mut();
            for r in 0..n {
                let xr = x.row(r);
                for (o, &g) in dy.row(r).iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, xr, &mut gw[o * k..(o + 1) * k]);
                    }
                }
            }
            let gb = grad.bias.data_mut();
            for r in 0..n {
                for (acc, g) in gb.iter_mut().zip(dy.row(r)) {
                    *acc += g;
                }
            }
        }
        let cols = match input_grad {
            InputGrad::None => return Ok(None),
            InputGrad::All => 0..k,
            InputGrad::Columns(c) => c,
        };
        if cols.end > k {
            return Err(Error::shape("dense_backward input columns", k, cols.end));
        }
        let width = cols.len();
        let w = self.weight.data();
        let mut dx = Tensor2::zeros(n, width);
        for r in 0..n {
            let dxr = dx.row_mut(r);
            for (o, &g) in dy.row(r).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * k + cols.start..o * k + cols.end], dxr);
                }
            }
        }
        Ok(Some(dx))
    }
}

impl Parameters for Dense {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
