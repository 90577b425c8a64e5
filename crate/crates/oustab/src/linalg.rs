//! Dense linear algebra helpers shared across the crate: matrix exponential,
//! symmetric PSD square roots, numerical rank, deterministic summation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Padé(13) coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// 1-norm threshold below which a single degree-13 Padé evaluation is accurate
/// to double precision.
const PADE13_THETA: f64 = 5.371920351148152;

/// Matrix exponential by scaling-and-squaring with a degree-13 Padé
/// approximant. Exact to machine precision for the matrix sizes used here
/// (N is the state dimension, typically < 10).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a * 2f64.powi(-s);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let b = &PADE13;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &a_scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;

    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is singular; input matrix is pathological");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Numerical rank via singular values with a relative threshold.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Checks symmetry up to a relative tolerance.
pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = 1.0 + a.amax();
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues in
/// `[-neg_tol * scale, 0)` are clamped to zero; anything more negative is an
/// error. The result is re-symmetrized so downstream code can rely on exact
/// symmetry.
pub fn psd_sqrt_sym(a: &DMatrix<f64>, neg_tol: f64) -> Result<DMatrix<f64>> {
    if !is_symmetric(a, 1e-10) {
        return Err(Error::validation(format!(
            "matrix square root needs a symmetric input, got asymmetry {:.3e}",
            asymmetry(a)
        )));
    }
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let scale = 1.0 + eig.eigenvalues.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -neg_tol * scale {
            return Err(Error::validation(format!(
                "matrix is not positive semidefinite: eigenvalue {:.3e}",
                *v
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(symmetrize(&root))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    symmetrize(a)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Pairwise summation in a fixed tree order. Used everywhere Monte Carlo
/// statistics are accumulated so that results do not depend on thread count
/// or reduction timing.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and standard error of a sample, with pairwise accumulation.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "variance needs at least two samples");
    let sum = pairwise_sum(xs);
    let mean = sum / n as f64;
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Euclidean norm of a slice of a vector.
pub fn block_norm(x: &DVector<f64>, range: std::ops::Range<usize>) -> f64 {
    let mut s = 0.0;
    for i in range {
        s += x[i] * x[i];
    }
    s.sqrt()
}
