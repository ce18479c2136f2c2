use super::params::{join, Parameters};
use super::Tensor2;

const LN_EPS: f64 = 1e-8;

/// Layer normalization over the last axis with learnable gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor2,
    pub shift: Tensor2,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gain: Tensor2::filled(1, width, 1.0),
            shift: Tensor2::zeros(1, width),
        }
    }

    pub fn width(&self) -> usize {
        self.gain.cols()
    }

    /// Per-row standardization without the affine part.
    pub fn normalize(x: &Tensor2) -> (Tensor2, Vec<f64>) {
        let n = x.cols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        (out, inv_std)
    }

    pub fn forward(&self, x: &Tensor2) -> (Tensor2, LayerNormCache) {
        let (normalized, inv_std) = Self::normalize(x);
        let mut y = normalized.clone();
        let (g, s) = (self.gain.data(), self.shift.data());
        for r in 0..y.rows() {
            for ((v, gi), si) in y.row_mut(r).iter_mut().zip(g).zip(s) {
                *v = *v * gi + si;
            }
        }
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor2, grad: &mut LayerNorm) -> Tensor2 {
        let n = self.width();
        let nf = n as f64;
        let g = self.gain.data();
        let mut dx = Tensor2::zeros(dy.rows(), n);
        let mut dxhat = vec![0.0; n];
        for r in 0..dy.rows() {
            let (xh, gr) = (cache.normalized.row(r), dy.row(r));
            {
                let gg = grad.gain.data_mut();
                for i in 0..n {
                    gg[i] += gr[i] * xh[i];
                }
            }
            {
                let gs = grad.shift.data_mut();
                for i in 0..n {
                    gs[i] += gr[i];
                }
            }
            for i in 0..n {
                dxhat[i] = gr[i] * g[i];
            }
            let sum_d: f64 = dxhat.iter().sum();
            let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
            let is = cache.inv_std[r];
            for (i, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = is / nf * (nf * dxhat[i] - sum_d - xh[i] * sum_dx);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>) {
        out.push((join(prefix, "gain"), &self.gain));
        out.push((join(prefix, "shift"), &self.shift));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>) {
        out.push((join(prefix, "gain"), &mut self.gain));
        out.push((join(prefix, "shift"), &mut self.shift));
    }
}
