use rand::Rng;

use super::tensor::Tensor;

/// Half-width of the Glorot uniform interval for an `rows × cols` matrix.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Samples an `rows × cols` matrix uniformly from `[-b, b]`, `b = √(6/(rows+cols))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    assert!(rows >= 1 && cols >= 1, "glorot_uniform needs a non-empty matrix");
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn bound_formula() {
        assert_eq!(glorot_bound(3, 3), 1.0);
        assert_eq!(glorot_bound(1, 5), 1.0);
    }

    #[test]
    fn samples_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, c) in [(3, 3), (1, 5), (16, 40), (200, 8)] {
            let t = glorot_uniform(r, c, &mut rng);
            let b = glorot_bound(r, c);
            assert_eq!(t.shape(), [r, c]);
            assert!(t.data().iter().all(|v| v.abs() <= b));
        }
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = glorot_uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(11));
        let b = glorot_uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let c = glorot_uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(12));
        assert_ne!(a, c);
    }
}
