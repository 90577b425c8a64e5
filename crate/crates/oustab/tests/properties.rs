//! Randomized invariants over the algebraic layer: rank profiles, dilations,
//! the intrinsic distance, matrix square roots and exponentials.

use nalgebra::{DMatrix, DVector};
use oustab::linalg::{expm, pairwise_sum, psd_sqrt_sym, spectral_norm};
use oustab::norms::{holder_seminorm_aniso, FnSpatial, NormGrid};
use oustab::structure::{
    check_kalman, dilation_apply, kalman_rank_profile, kinetic_spec, parabolic_distance,
    KalmanStructure,
};
use proptest::prelude::*;

fn int_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2i32..=2, n * n)
        .prop_map(move |v| DMatrix::from_fn(n, n, |r, c| f64::from(v[r * n + c])))
}

fn real_matrix(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, n * n)
        .prop_map(move |v| DMatrix::from_fn(n, n, |r, c| v[r * n + c]))
}

fn real_vector(n: usize, scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-scale..scale, n).prop_map(DVector::from_vec)
}

fn kinetic_structure() -> KalmanStructure {
    check_kalman(&kinetic_spec(2.0, 1.0, None)).unwrap()
}

/// Orthogonal factor of a random matrix, with a fallback for the degenerate
/// draw.
fn orthogonalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let q = m.clone().qr().q();
    if q.ncols() == n {
        q
    } else {
        DMatrix::identity(n, n)
    }
}

proptest! {
    // Rank increments of [B, AB, A^2 B, ...] are a basis-free quantity: the
    // profile must survive an orthogonal change of frame, the increments
    // must not grow, and their sum must equal the rank of the full stacked
    // matrix computed in one shot.
    #[test]
    fn rank_profile_is_frame_free(
        (n, a, b, q_seed) in (2usize..=5).prop_flat_map(|n| {
            (Just(n), int_matrix(n), int_matrix(n), real_matrix(n, 1.0))
        })
    ) {
        let (satisfied, dims, k) = kalman_rank_profile(&a, &b);
        prop_assert_eq!(k + 1, dims.len());
        for w in dims.windows(2) {
            prop_assert!(w[1] <= w[0], "increments grew: {:?}", &dims);
        }

        let mut stacked = b.clone();
        let mut power = b.clone();
        for _ in 1..n {
            power = &a * &power;
            let old = stacked.ncols();
            stacked = stacked.insert_columns(old, n, 0.0);
            stacked.view_mut((0, old), (n, n)).copy_from(&power);
        }
        let full = stacked.rank(1e-9 * (1.0 + spectral_norm(&stacked)));
        prop_assert_eq!(dims.iter().sum::<usize>(), full);
        prop_assert_eq!(satisfied, full == n);

        let q = orthogonalize(&q_seed);
        let (sat_q, dims_q, k_q) =
            kalman_rank_profile(&(&q * &a * q.transpose()), &(&q * &b));
        prop_assert_eq!(sat_q, satisfied);
        prop_assert_eq!(dims_q, dims);
        prop_assert_eq!(k_q, k);
    }

    // The scalings form a group: applying lambda after mu is applying
    // lambda * mu.
    #[test]
    fn dilations_compose(
        lambda in 0.2f64..5.0,
        mu in 0.2f64..5.0,
        t in 0.0f64..2.0,
        x in real_vector(2, 3.0),
    ) {
        let st = kinetic_structure();
        let (t1, x1) = dilation_apply(mu, t, &x, &st);
        let (t2, x2) = dilation_apply(lambda, t1, &x1, &st);
        let (t3, x3) = dilation_apply(lambda * mu, t, &x, &st);
        prop_assert!((t2 - t3).abs() <= 1e-10 * (1.0 + t3.abs()));
        for i in 0..2 {
            prop_assert!((x2[i] - x3[i]).abs() <= 1e-10 * (1.0 + x3[i].abs()));
        }
    }

    // Block exponents are all <= 1, so the intrinsic distance obeys the
    // plain triangle inequality, not just a quasi one.
    #[test]
    fn intrinsic_distance_is_a_metric(
        x in real_vector(2, 3.0),
        y in real_vector(2, 3.0),
        z in real_vector(2, 3.0),
    ) {
        let st = kinetic_structure();
        let dxy = parabolic_distance(&x, &y, &st);
        let dyx = parabolic_distance(&y, &x, &st);
        let dxz = parabolic_distance(&x, &z, &st);
        let dyz = parabolic_distance(&y, &z, &st);
        prop_assert!((dxy - dyx).abs() <= 1e-14 * (1.0 + dxy));
        prop_assert_eq!(parabolic_distance(&x, &x, &st), 0.0);
        prop_assert!(dxz <= dxy + dyz + 1e-12);
        if (&x - &y).amax() > 1e-6 {
            prop_assert!(dxy > 0.0);
        }
    }

    // S = sqrt(G G^T) reproduces the product and stays symmetric PSD.
    #[test]
    fn psd_sqrt_squares_back(
        (_n, g) in (1usize..=5).prop_flat_map(|n| (Just(n), real_matrix(n, 2.0)))
    ) {
        let a = &g * g.transpose();
        let s = psd_sqrt_sym(&a, 1e-9).unwrap();
        let scale = 1.0 + spectral_norm(&a);
        prop_assert!(spectral_norm(&(&s - s.transpose())) <= 1e-10 * scale);
        prop_assert!(spectral_norm(&(&s * &s - &a)) <= 1e-8 * scale);
        prop_assert!(s.symmetric_eigenvalues().min() >= -1e-8 * scale);
    }

    // One-parameter semigroup: exp((s+t)A) = exp(sA) exp(tA).
    #[test]
    fn expm_is_a_semigroup(
        (n, a) in (1usize..=4).prop_flat_map(|n| (Just(n), real_matrix(n, 1.5))),
        s in 0.0f64..1.5,
        t in 0.0f64..1.5,
    ) {
        let whole = expm(&(&a * (s + t)));
        let split = expm(&(&a * s)) * expm(&(&a * t));
        let scale = 1.0 + spectral_norm(&whole);
        prop_assert!(spectral_norm(&(&whole - &split)) <= 1e-9 * scale);
        let zero = expm(&DMatrix::zeros(n, n));
        prop_assert!(spectral_norm(&(&zero - DMatrix::identity(n, n))) <= 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..300)) {
        let naive: f64 = xs.iter().sum();
        let tol = 1e-9 * (1.0 + xs.iter().map(|x| x.abs()).sum::<f64>());
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Seminorms scale with the field: |c f| = |c| |f|.
    #[test]
    fn holder_seminorm_is_homogeneous(c in -4.0f64..4.0) {
        let st = kinetic_structure();
        let grid = NormGrid {
            span: 1.0,
            centers: 3,
            h_min: 0.1,
            h_max: 0.5,
            h_count: 4,
        };
        let base = |x: &DVector<f64>| (x[0] - 0.3 * x[1]).powi(2) + (1.2 * x[1]).sin();
        let f = FnSpatial::new(2, base, 10.0);
        let cf = FnSpatial::new(2, move |x: &DVector<f64>| c * base(x), 10.0 * c.abs());
        let n1 = holder_seminorm_aniso(&f, 0.7, &st, &grid).unwrap();
        let n2 = holder_seminorm_aniso(&cf, 0.7, &st, &grid).unwrap();
        prop_assert!((n2 - c.abs() * n1).abs() <= 1e-11 * (1.0 + n1));
    }
}
