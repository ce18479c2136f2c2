use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{join, Parameters};
use super::Tensor2;
use crate::error::{Error, Result};

/// Lookup table mapping a category code to a learned vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: Tensor2,
}

impl Embedding {
    /// Entries drawn from N(0, 0.05²).
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.05).expect("valid sigma");
        let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
        Embedding {
            table: Tensor2::from_vec(vocab, dim, data).expect("sized above"),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    /// Validates a code stored as `f64` and returns it as a row index.
    pub fn index(&self, code: f64) -> Result<usize> {
        if code.fract() != 0.0 || code < 0.0 || code >= self.vocab() as f64 {
            return Err(Error::Input(format!(
                "category code {code} outside vocabulary of size {}",
                self.vocab()
            )));
        }
        Ok(code as usize)
    }

    pub fn lookup(&self, code: f64) -> Result<&[f64]> {
        Ok(self.table.row(self.index(code)?))
    }

    /// Adds `grad_row` to the gradient row of `index`.
    pub fn accumulate(grad: &mut Embedding, index: usize, dim: usize, value: f64) {
        let cols = grad.table.cols();
        grad.table.data_mut()[index * cols + dim] += value;
    }
}

impl Parameters for Embedding {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        out.push((join(prefix, "table"), &self.table));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        out.push((join(prefix, "table"), &mut self.table));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_returns_row_and_rejects_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Embedding::new(96, 5, &mut rng);
        assert_eq!(e.lookup(7.0).unwrap(), e.table.row(7));
        assert!(e.lookup(96.0).is_err());
        assert!(e.lookup(-1.0).is_err());
        assert!(e.lookup(2.5).is_err());
    }
}
