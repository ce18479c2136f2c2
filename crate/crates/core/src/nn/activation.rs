//! Element-wise activations and the row softmax.

use super::Tensor2;

pub fn elu(x: &Tensor2) -> Tensor2 {
    map(x, |v| if v > 0.0 { v } else { v.exp_m1() })
}

/// Multiplies `dy` by ELU'(x) in place.
pub fn elu_backward(x: &Tensor2, dy: &mut Tensor2) {
    for (g, &v) in dy.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g *= v.exp();
        }
    }
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    map(x, sigmoid_scalar)
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    map(x, |v| v.max(0.0))
}

/// Zeroes `dy` wherever the pre-activation was not positive.
pub fn relu_backward(x: &Tensor2, dy: &mut Tensor2) {
    for (g, &v) in dy.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Softmax over each row.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Gradient w.r.t. the logits given softmax output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), dy.row(r));
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - inner);
        }
    }
    dx
}

fn map(x: &Tensor2, f: impl Fn(f64) -> f64) -> Tensor2 {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor2::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(values in prop::collection::vec(-30.0f64..30.0, 1..40)) {
            let x = Tensor2::row_vector(&values);
            let y = softmax_rows(&x);
            prop_assert!(y.data().iter().all(|v| *v >= 0.0));
            let s: f64 = y.data().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid_scalar(-1e6), 0.0);
        assert_eq!(sigmoid_scalar(1e6), 1.0);
        assert!((sigmoid_scalar(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        let x = Tensor2::row_vector(&[-1e-12, 0.0, 1e-12]);
        let y = elu(&x);
        assert!(y.data().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let coef = [0.5, -0.7, 1.3, 0.2];
        let f = |l: &[f64]| -> f64 {
            let y = softmax_rows(&Tensor2::row_vector(l));
            y.data().iter().zip(coef).map(|(a, b)| a * b).sum()
        };
        let y = softmax_rows(&Tensor2::row_vector(&logits));
        let dx = softmax_rows_backward(&y, &Tensor2::row_vector(&coef));
        for i in 0..4 {
            let mut p = logits;
            let mut m = logits;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - dx.get(0, i)).abs() < 1e-8);
        }
    }
}
