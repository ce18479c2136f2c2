use super::Tensor2;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Zeroes the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }

    /// Updates every parameter whose `trainable` flag is set. Frozen entries
    /// keep their moments at zero and are never touched.
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2], trainable: &[bool]) -> Result<()> {
        if params.len() != grads.len() || params.len() != trainable.len() {
            return Err(Error::shape("adam_step", params.len(), grads.len()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::shape("adam_step moments", self.first.len(), params.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !trainable[i] {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(adam: &mut Adam, p: &mut Tensor2, grads: &[f64]) -> Vec<f64> {
        let mut traj = Vec::new();
        for g in grads {
            let gt = Tensor2::row_vector(&[*g]);
            adam.step(&mut [p], &[&gt], &[true]).unwrap();
            traj.push(p.data()[0]);
        }
        traj
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(0.001);
        let mut p = Tensor2::row_vector(&[1.25]);
        run(&mut adam, &mut p, &[0.0; 20]);
        assert_eq!(p.data()[0], 1.25);
    }

    #[test]
    fn first_step_is_learning_rate() {
        // m̂ = g, v̂ = g² after bias correction, so the step is lr·g/(|g|+ε)
        let mut adam = Adam::new(0.001);
        let mut p = Tensor2::row_vector(&[0.0]);
        run(&mut adam, &mut p, &[1.0]);
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn reset_reproduces_trajectory() {
        let grads = [0.3, -1.0, 2.0, 0.1, -0.4];
        let mut adam = Adam::new(0.01);
        let mut p = Tensor2::row_vector(&[0.5]);
        let a = run(&mut adam, &mut p, &grads);
        adam.reset();
        assert_eq!(adam.steps(), 0);
        let mut p = Tensor2::row_vector(&[0.5]);
        let b = run(&mut adam, &mut p, &grads);
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_tensor_is_untouched() {
        let mut adam = Adam::new(0.1);
        let mut a = Tensor2::row_vector(&[1.0]);
        let mut b = Tensor2::row_vector(&[1.0]);
        let g = Tensor2::row_vector(&[1.0]);
        adam.step(&mut [&mut a, &mut b], &[&g, &g], &[true, false]).unwrap();
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
