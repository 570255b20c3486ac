//! Cross-checks of the in-house dense solvers against nalgebra.

use mplab_core::{linalg, rng, DenseMatrix};
use nalgebra::DMatrix;
use rand::Rng;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn symmetric_eigenvalues_agree() {
    for seed in 0..40 {
        let mut r = rng::stream(seed, "oracle_eig");
        let n = r.random_range(1..12);
        let b = rng::normal_matrix(&mut r, n, n, 1.0);
        let m = b.add(&b.transpose()).unwrap();
        let (vals, vecs) = linalg::symmetric_eigen(&m).unwrap();
        let expect = sorted_desc(to_na(&m).symmetric_eigen().eigenvalues.iter().copied().collect());
        for (a, e) in vals.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10, "seed {seed}: {a} vs {e}");
        }
        // A v = λ v column by column.
        let av = m.matmul(&vecs).unwrap();
        for j in 0..n {
            for i in 0..n {
                assert!((av[(i, j)] - vals[j] * vecs[(i, j)]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn singular_values_agree() {
    for seed in 0..40 {
        let mut r = rng::stream(seed, "oracle_svd");
        let (rows, cols) = (r.random_range(1..10), r.random_range(1..10));
        let m = rng::normal_matrix(&mut r, rows, cols, 1.0);
        let ours = linalg::singular_values(&m).unwrap();
        let expect = sorted_desc(to_na(&m).singular_values().iter().copied().collect());
        assert_eq!(ours.len(), expect.len());
        for (a, e) in ours.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10, "seed {seed}: {a} vs {e}");
        }
        assert!((linalg::spectral_norm(&m).unwrap() - expect[0]).abs() < 1e-10);
    }
}

#[test]
fn solve_and_inverse_agree() {
    for seed in 0..40 {
        let mut r = rng::stream(seed, "oracle_solve");
        let n = r.random_range(1..10);
        let a = rng::normal_matrix(&mut r, n, n, 1.0).add(&DenseMatrix::identity(n).scale(3.0)).unwrap();
        let b = rng::normal_matrix(&mut r, n, 2, 1.0);
        let lu = to_na(&a).lu();
        let x = linalg::solve(&a, &b).unwrap();
        let expect = lu.solve(&to_na(&b)).unwrap();
        assert!((to_na(&x) - expect).amax() < 1e-10, "seed {seed}");
        let inv = linalg::inverse(&a).unwrap();
        assert!((to_na(&inv) - lu.try_inverse().unwrap()).amax() < 1e-10, "seed {seed}");
    }
}

#[test]
fn singular_matrix_is_rejected() {
    let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
    assert!(to_na(&a).try_inverse().is_none());
    assert!(linalg::inverse(&a).is_err());
}
