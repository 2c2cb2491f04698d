use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use core_elements::matrix::{
    cholesky, condition_number, frobenius_norm, gram_solve, singular_values, sparse_gram, spectral_norm,
    spectral_norm_default, DenseMatrix, DesignMatrix, MatrixError, SparseColumnMatrix, DEFAULT_POWER_TOL,
};

fn random_dense(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
    let data = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
    DenseMatrix::from_col_major(n, p, data).unwrap()
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.nrows(), m.ncols(), m.as_slice())
}

/// Textbook Gaussian elimination with partial pivoting on an augmented copy.
fn elimination_oracle(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).chain([b[i]]).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for j in c..=n {
                m[i][j] -= f * m[c][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

#[test]
fn frobenius_examples() {
    assert_relative_eq!(frobenius_norm(&DenseMatrix::identity(2)), 2f64.sqrt());
    assert_eq!(frobenius_norm(&DenseMatrix::zeros(3, 2)), 0.0);
    let m = DenseMatrix::from_rows(&[[3.0, 0.0], [4.0, 0.0]]).unwrap();
    assert_eq!(frobenius_norm(&m), 5.0);
    let s = SparseColumnMatrix::from_dense(&m);
    assert_eq!(frobenius_norm(&s), 5.0);
}

#[test]
fn spectral_examples() {
    let d = DenseMatrix::diagonal(&[3.0, 1.0]);
    assert_relative_eq!(spectral_norm_default(&d).unwrap(), 3.0, max_relative = 1e-8);
    assert_relative_eq!(spectral_norm_default(&DenseMatrix::identity(4)).unwrap(), 1.0, max_relative = 1e-8);
    let golden = DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
    assert_relative_eq!(
        spectral_norm_default(&golden).unwrap(),
        (1.0 + 5f64.sqrt()) / 2.0,
        max_relative = 1e-8
    );
}

#[test]
fn spectral_norm_matches_svd_oracle_and_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_dense(&mut rng, 30, 6);
        let oracle = to_na(&m).singular_values().max();
        let ours = spectral_norm(&m, 1e-12, 10_000).unwrap();
        assert_relative_eq!(ours, oracle, max_relative = 1e-6);
        let ours_t = spectral_norm(&m.transpose(), 1e-12, 10_000).unwrap();
        assert_relative_eq!(ours, ours_t, max_relative = 1e-6);
        assert!(ours <= frobenius_norm(&m) * (1.0 + 1e-12));
        assert_relative_eq!(singular_values(&m)[0], oracle, max_relative = 1e-10);
    }
}

#[test]
fn spectral_norm_reports_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_dense(&mut rng, 20, 8);
    assert!(matches!(spectral_norm(&m, 1e-300, 1), Err(MatrixError::NonConvergence { .. })));
    assert!(spectral_norm(&m, DEFAULT_POWER_TOL, 1000).is_ok());
}

#[test]
fn condition_number_examples_and_oracle() {
    let q = DesignMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
    assert_relative_eq!(condition_number(&q).unwrap(), 1.0, max_relative = 1e-12);
    let d = DesignMatrix::from_rows(&[[4.0, 0.0], [0.0, 2.0]]).unwrap();
    assert_relative_eq!(condition_number(&d).unwrap(), 2.0, max_relative = 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..10 {
        let m = random_dense(&mut rng, 50, 5);
        let sv = to_na(&m).singular_values();
        let oracle = sv.max() / sv.min();
        let x = DesignMatrix::from_dense(m).unwrap();
        assert_relative_eq!(condition_number(&x).unwrap(), oracle, max_relative = 1e-8);
    }
    let rank1 = DesignMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
    assert!(matches!(condition_number(&rank1), Err(MatrixError::RankDeficient { .. })));
}

#[test]
fn gram_solve_examples_and_oracle() {
    assert_eq!(gram_solve(&DenseMatrix::identity(3), &[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    let d = DenseMatrix::diagonal(&[2.0, 4.0]);
    assert_eq!(gram_solve(&d, &[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut a = random_dense(&mut rng, 5, 5);
        for i in 0..5 {
            a.set(i, i, a.get(i, i) + 6.0);
        }
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ours = gram_solve(&a, &b).unwrap();
        let oracle = elimination_oracle(&a, &b);
        for (u, v) in ours.iter().zip(&oracle) {
            assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
        let back = a.matvec(&ours);
        let res: f64 = back.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res <= 1e-8 * bn);
    }
    let singular = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
    assert!(matches!(gram_solve(&singular, &[1.0, 1.0]), Err(MatrixError::SingularSystem { .. })));
    assert!(matches!(gram_solve(&DenseMatrix::identity(2), &[1.0]), Err(MatrixError::DimensionMismatch { .. })));
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize, p: usize, density: f64) -> SparseColumnMatrix {
    let mut cols = Vec::with_capacity(p);
    for _ in 0..p {
        let mut col = Vec::new();
        for i in 0..n {
            if rng.random_bool(density) {
                col.push((i, rng.random_range(-3.0..3.0)));
            }
        }
        cols.push(col);
    }
    SparseColumnMatrix::from_columns(n, cols).unwrap()
}

#[test]
fn sparse_gram_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dense = random_dense(&mut rng, 6, 2);
    let x = DesignMatrix::from_dense(dense.clone()).unwrap();
    let full = SparseColumnMatrix::from_dense(&dense);
    let g = sparse_gram(&full, &x).unwrap();
    let oracle = to_na(&dense).transpose() * to_na(&dense);
    for i in 0..2 {
        for j in 0..2 {
            assert!((g.get(i, j) - oracle[(i, j)]).abs() <= 1e-12);
        }
    }
    let empty = SparseColumnMatrix::empty(6, 2);
    assert_eq!(sparse_gram(&empty, &x).unwrap(), DenseMatrix::zeros(2, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_gram_equals_densified_product(seed in any::<u64>(), n in 4usize..30, p in 1usize..5, density in 0.05f64..0.9) {
        prop_assume!(n >= p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = random_sparse(&mut rng, n, p, density);
        let x = DesignMatrix::from_dense(random_dense(&mut rng, n, p)).unwrap();
        let ours = sparse_gram(&xs, &x).unwrap();
        let oracle = to_na(&xs.to_dense()).transpose() * to_na(x.as_dense());
        for i in 0..p {
            for j in 0..p {
                prop_assert!((ours.get(i, j) - oracle[(i, j)]).abs() <= 1e-12);
            }
        }
        let g = xs.self_gram();
        let go = to_na(&xs.to_dense()).transpose() * to_na(&xs.to_dense());
        for i in 0..p {
            for j in 0..p {
                prop_assert!((g.get(i, j) - go[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn spectral_at_most_frobenius(seed in any::<u64>(), n in 1usize..20, p in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_dense(&mut rng, n, p);
        let s = spectral_norm(&m, 1e-10, 100_000).unwrap();
        prop_assert!(s <= frobenius_norm(&m) * (1.0 + 1e-9));
    }

    #[test]
    fn tmatvec_agrees_with_oracle(seed in any::<u64>(), n in 1usize..20, p in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_dense(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ours = m.tmatvec(&y);
        let oracle = to_na(&m).transpose() * DVector::from_vec(y);
        for j in 0..p {
            prop_assert!((ours[j] - oracle[j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn cholesky_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = random_dense(&mut rng, 20, 4);
    let g = m.gram();
    let l = cholesky(&g).unwrap();
    let back = l.matmul(&l.transpose()).unwrap();
    assert!(back.sub(&g).unwrap().max_abs() < 1e-12);
    let neg = DenseMatrix::diagonal(&[1.0, -1.0]);
    assert!(matches!(cholesky(&neg), Err(MatrixError::NotPositiveDefinite)));
}

#[test]
fn design_matrix_validation_and_centering() {
    assert!(matches!(DesignMatrix::new(1, 2, vec![1.0, 2.0]), Err(MatrixError::InvalidShape { .. })));
    assert!(matches!(DesignMatrix::new(2, 1, vec![1.0, f64::NAN]), Err(MatrixError::NonFinite { .. })));
    let mut x = DesignMatrix::from_rows(&[[1.0, 10.0], [2.0, 20.0], [6.0, 0.0]]).unwrap();
    assert!(!x.is_centered());
    x.center();
    assert!(x.is_centered());
    for (j, m) in x.column_means().iter().enumerate() {
        let max = x.col(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(m.abs() <= 1e-10 * max);
    }
}

#[test]
fn sparse_rejects_bad_columns() {
    assert!(SparseColumnMatrix::from_columns(3, vec![vec![(0, 1.0), (0, 2.0)]]).is_err());
    assert!(SparseColumnMatrix::from_columns(3, vec![vec![(3, 1.0)]]).is_err());
    assert!(SparseColumnMatrix::from_columns(3, vec![vec![(1, 0.0)]]).is_err());
}
