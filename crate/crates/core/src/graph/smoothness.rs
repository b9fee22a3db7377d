use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Mean pairwise cosine distance between rows.
///
/// `D_avg = 2 / (N (N - 1)) · Σ_{i<j} (1 - cos(h_i, h_j))`. A zero-norm row has
/// cosine similarity 0 with every other row.
pub fn smoothness_davg(h: &Matrix) -> Result<f64> {
    let n = h.rows();
    if n < 2 {
        return Err(Error::Argument(format!(
            "smoothness needs at least two rows, got {n}"
        )));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    // Σ_{i<j} cos = (‖Σ u_i‖² - Σ ‖u_i‖²) / 2 over unit rows u_i, which is O(N d).
    let mut unit_sum = vec![0.0; h.cols()];
    let mut nonzero = 0usize;
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        nonzero += 1;
        for (s, v) in unit_sum.iter_mut().zip(h.row(i)) {
            *s += v / norm;
        }
    }
    let sum_sq: f64 = unit_sum.iter().map(|v| v * v).sum();
    let cos_pairs = (sum_sq - nonzero as f64) / 2.0;
    let pairs = (n * (n - 1) / 2) as f64;
    let davg = 1.0 - cos_pairs / pairs;
    Ok(davg.clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn brute_force(h: &Matrix) -> f64 {
        let n = h.rows();
        let mut acc = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (h.row(i), h.row(j));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                let cos = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
                acc += 1.0 - cos;
            }
        }
        2.0 * acc / (n * (n - 1)) as f64
    }

    #[test]
    fn identical_rows_have_zero_distance() {
        let h = Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!(smoothness_davg(&h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_has_unit_distance() {
        let h = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 3.0]]);
        assert!((smoothness_davg(&h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rows_count_as_distance_one() {
        let h = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        // pairs: (0,1)=1, (0,2)=1, (1,2)=0
        assert!((smoothness_davg(&h).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((brute_force(&h) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_fewer_than_two_rows() {
        assert!(smoothness_davg(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn matches_brute_force_and_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let data = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = Matrix::from_vec(8, 5, data).unwrap();
            let d = smoothness_davg(&h).unwrap();
            assert!((d - brute_force(&h)).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&d));

            let mut scaled = h.clone();
            for r in 0..8 {
                let c = rng.gen_range(0.1..10.0);
                scaled.row_mut(r).iter_mut().for_each(|v| *v *= c);
            }
            assert!((smoothness_davg(&scaled).unwrap() - d).abs() < 1e-12);
        }
    }
}
