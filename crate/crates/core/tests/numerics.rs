use peftlab_core::numerics::{orthonormalize, pinv, rank_truncate, svd, Matrix};
use peftlab_core::rng;
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1.0)
}

fn gram_defect(m: &Matrix) -> f64 {
    m.t_matmul(m).unwrap().sub(&Matrix::identity(m.cols())).unwrap().frobenius_norm()
}

fn check_svd(m: &Matrix) {
    let s = svd(m).unwrap();
    assert!(rel(&s.reconstruct(), m) < 1e-9);
    assert!(gram_defect(&s.u) < 1e-9);
    assert!(gram_defect(&s.vt.transpose()) < 1e-9);
    assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.sigma.iter().all(|&x| x >= 0.0));
}

#[test]
fn svd_invariants_on_thousand_seeded_matrices() {
    let mut r = rng::from_seed(2024);
    for _ in 0..1000 {
        let rows = rng::uniform_usize(&mut r, 1, 32);
        let cols = rng::uniform_usize(&mut r, 1, 32);
        check_svd(&Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols)).unwrap());
    }
}

#[test]
fn svd_of_low_rank_products() {
    let mut r = rng::from_seed(5);
    for rank in 1..4 {
        let a = Matrix::from_vec(9, rank, rng::gaussian_vec(&mut r, 9 * rank)).unwrap();
        let b = Matrix::from_vec(rank, 7, rng::gaussian_vec(&mut r, 7 * rank)).unwrap();
        let m = a.matmul(&b).unwrap();
        check_svd(&m);
        assert_eq!(svd(&m).unwrap().rank(1e-12), rank);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn svd_reconstructs(m in matrix(12)) {
        check_svd(&m);
    }

    #[test]
    fn penrose_identities(m in matrix(8)) {
        let p = pinv(&m, 1e-12).unwrap();
        let mp = m.matmul(&p).unwrap();
        let pm = p.matmul(&m).unwrap();
        prop_assert!(rel(&mp.matmul(&m).unwrap(), &m) < 1e-9);
        prop_assert!(rel(&pm.matmul(&p).unwrap(), &p) < 1e-9);
        prop_assert!(rel(&mp.transpose(), &mp) < 1e-9);
        prop_assert!(rel(&pm.transpose(), &pm) < 1e-9);
    }

    #[test]
    fn eckart_young_tail(m in matrix(10)) {
        let full = m.rows().min(m.cols());
        let scale = 1.0 + m.frobenius_norm().powi(2);
        let mut prev = f64::INFINITY;
        for r in 0..=full {
            let (mr, tail) = rank_truncate(&m, r).unwrap();
            let e = m.sub(&mr).unwrap().frobenius_norm().powi(2);
            prop_assert!((e - tail).abs() / scale < 1e-9);
            prop_assert!(e <= prev + 1e-9 * scale);
            prev = e;
        }
        prop_assert!(rank_truncate(&m, full + 1).is_err());
    }

    #[test]
    fn orthonormalize_preserves_span(cols in 1usize..5, seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let m = Matrix::from_vec(8, cols, rng::gaussian_vec(&mut r, 8 * cols)).unwrap();
        let q = orthonormalize(&m).unwrap();
        prop_assert!(gram_defect(&q) < 1e-12);
        let proj = q.matmul(&q.t_matmul(&m).unwrap()).unwrap();
        prop_assert!(m.sub(&proj).unwrap().frobenius_norm() < 1e-10);
    }
}

#[test]
fn pinv_examples() {
    let p = pinv(&Matrix::diag(&[2.0, 0.0]), 1e-12).unwrap();
    approx::assert_abs_diff_eq!(p.as_slice(), Matrix::diag(&[0.5, 0.0]).as_slice(), epsilon = 1e-15);
    let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
    let inv = Matrix::from_rows(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]]).unwrap();
    approx::assert_abs_diff_eq!(pinv(&a, 1e-12).unwrap().as_slice(), inv.as_slice(), epsilon = 1e-12);
}

#[test]
fn non_finite_input_rejected() {
    let m = Matrix::from_rows(&[&[1.0, f64::NAN]]);
    assert!(m.is_err() || svd(&m.unwrap()).is_err());
}
