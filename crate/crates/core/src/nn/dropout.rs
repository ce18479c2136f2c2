use rand::Rng;

use super::Tensor2;

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1/(1-rate)`. Returns `None` when the rate is zero.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Option<Tensor2> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Some(Tensor2::from_vec(rows, cols, data).expect("sized above"))
}

pub fn apply_mask(x: &mut Tensor2, mask: &Tensor2) {
    for (v, m) in x.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drop_fraction_and_rescale() {
        for &p in &[0.1, 0.3, 0.5] {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mask = dropout_mask(1, 100_000, p, &mut rng).unwrap();
            let zeros = mask.data().iter().filter(|v| **v == 0.0).count() as f64 / 1e5;
            assert!((zeros - p).abs() < 0.02, "p={p} observed {zeros}");
            assert!(mask
                .data()
                .iter()
                .all(|v| *v == 0.0 || (*v - 1.0 / (1.0 - p)).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_rate_has_no_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(dropout_mask(3, 3, 0.0, &mut rng).is_none());
    }
}
