//! Structural analysis of the operator pair (A, B): Kalman rank condition,
//! block decomposition, intrinsic anisotropic exponents, dilations and the
//! parabolic quasi-distance they induce.
//!
//! Inputs are required to be already in the canonical frame: B = diag(B0, 0)
//! with B0 positive definite, and A with arbitrary blocks on and above the
//! diagonal, full-rank blocks on the first subdiagonal, zeros below it.
//! Inputs that satisfy the rank condition but sit in some other frame are
//! refused rather than silently transformed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::levy::SpectralMeasure;
use crate::linalg;

/// Relative SVD threshold for every rank decision in this module.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Smallest admissible eigenvalue of B0.
pub const KAPPA2_FLOOR: f64 = 1e-12;

/// Entries smaller than this (relative to the largest entry) count as
/// structural zeros when checking block shapes.
const SHAPE_ZERO_TOL: f64 = 1e-12;

/// The operator data everything else consumes.
///
/// `alpha = 2` selects the Gaussian (local) regime driven by `Tr(B D^2)`;
/// `alpha` in (0, 2) selects the stable regime, in which case `measure`
/// supplies the spectral measure on the sphere of the diffusive block.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub alpha: f64,
    pub horizon: f64,
    pub measure: Option<SpectralMeasure>,
}

impl OperatorSpec {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_gaussian(&self) -> bool {
        self.alpha == 2.0
    }
}

/// Result of the Kalman analysis.
#[derive(Debug, Clone)]
pub struct KalmanStructure {
    pub satisfied: bool,
    /// Smallest k with rank [B, AB, ..., A^k B] = N (meaningful when satisfied).
    pub k: usize,
    /// Rank increments d_0, ..., d_k; block i has width dims[i].
    pub dims: Vec<usize>,
    /// Width of the diffusive block, = dims[0] = rank B.
    pub d0: usize,
    /// Smallest eigenvalue of B0.
    pub kappa2: f64,
    /// N x d0 factor [sqrt(B0); 0], so sigma sigma^T = B.
    pub sigma: DMatrix<f64>,
    /// Intrinsic exponents alpha_i = (alpha/2) / (1 + alpha i).
    pub exponents: Vec<f64>,
    /// True when A has exactly the canonical dilation-invariant shape.
    pub dilation_invariant: bool,
    /// Stability index of the originating operator (the distance depends
    /// on it).
    pub alpha: f64,
}

impl KalmanStructure {
    /// Index range of block i inside a state vector.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let lo: usize = self.dims[..i].iter().sum();
        lo..lo + self.dims[i]
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }
}

/// Raw controllability analysis: rank increments of [B, AB, ..., A^i B].
///
/// Total on any square pair of matching dimension; performs no frame
/// validation. Returns (satisfied, increments, k) where `increments` stops at
/// the first stall or at full rank.
pub fn kalman_rank_profile(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (bool, Vec<usize>, usize) {
    let n = a.nrows();
    let mut stacked = b.clone();
    let mut power = b.clone();
    let mut prev_rank = linalg::numerical_rank(&stacked, RANK_REL_TOL);
    let mut dims = vec![prev_rank];
    let mut k = 0usize;
    while prev_rank < n && k + 1 < n {
        power = a * &power;
        stacked = stack_columns(&stacked, &power);
        let r = linalg::numerical_rank(&stacked, RANK_REL_TOL);
        if r == prev_rank {
            // Controllability ranks are monotone and stall permanently.
            break;
        }
        dims.push(r - prev_rank);
        prev_rank = r;
        k += 1;
    }
    (prev_rank == n, dims, k)
}

fn stack_columns(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let n = left.nrows();
    let mut out = DMatrix::zeros(n, left.ncols() + right.ncols());
    out.view_mut((0, 0), (n, left.ncols())).copy_from(left);
    out.view_mut((0, left.ncols()), (n, right.ncols()))
        .copy_from(right);
    out
}

/// Full structural check: validates the canonical frame of (A, B), runs the
/// rank analysis, and derives block data, exponents and the diffusion factor.
pub fn check_kalman(spec: &OperatorSpec) -> Result<KalmanStructure> {
    let n = spec.a.nrows();
    if spec.a.ncols() != n {
        return Err(Error::validation("drift matrix A must be square"));
    }
    if spec.b.nrows() != n || spec.b.ncols() != n {
        return Err(Error::validation(format!(
            "diffusion matrix B must be {n}x{n} to match A"
        )));
    }
    if n == 0 {
        return Err(Error::validation("state dimension must be positive"));
    }
    if !(spec.alpha > 0.0 && spec.alpha <= 2.0) {
        return Err(Error::validation(format!(
            "stability index alpha must lie in (0, 2], got {}",
            spec.alpha
        )));
    }
    if !(spec.horizon > 0.0) {
        return Err(Error::validation("time horizon must be positive"));
    }
    if !linalg::is_symmetric(&spec.b, 1e-10) {
        return Err(Error::validation("diffusion matrix B must be symmetric"));
    }

    let d0 = detect_diffusive_block(&spec.b)?;
    let b0 = spec.b.view((0, 0), (d0, d0)).into_owned();
    let kappa2 = linalg::min_eigenvalue_sym(&b0);
    if kappa2 <= KAPPA2_FLOOR {
        return Err(Error::validation(format!(
            "B0 must be positive definite; smallest eigenvalue {kappa2:.3e}"
        )));
    }

    let (satisfied, dims, k) = kalman_rank_profile(&spec.a, &spec.b);

    if satisfied {
        for w in dims.windows(2) {
            if w[1] > w[0] {
                return Err(Error::numerical(
                    "rank increments increased along the Kalman sequence; \
                     the rank thresholds are unreliable for this input",
                ));
            }
        }
        validate_canonical_drift(&spec.a, &dims)?;
    }

    if let Some(measure) = &spec.measure {
        if measure.dim() != d0 {
            return Err(Error::validation(format!(
                "spectral measure lives in dimension {}, diffusive block has width {}",
                measure.dim(),
                d0
            )));
        }
    }
    if spec.alpha < 2.0 && spec.measure.is_none() {
        return Err(Error::validation(
            "alpha < 2 requires a spectral measure for the driving noise",
        ));
    }

    let sqrt_b0 = linalg::psd_sqrt_sym(&b0, 1e-10)?;
    let mut sigma = DMatrix::zeros(n, d0);
    sigma.view_mut((0, 0), (d0, d0)).copy_from(&sqrt_b0);

    let exponents = intrinsic_exponents(spec.alpha, &dims);
    let dilation_invariant = satisfied && drift_is_canonical_nilpotent(&spec.a, &dims);

    Ok(KalmanStructure {
        satisfied,
        k,
        dims,
        d0,
        kappa2,
        sigma,
        exponents,
        dilation_invariant,
        alpha: spec.alpha,
    })
}

/// B must equal diag(B0, 0) with B0 occupying the leading d0 indices.
fn detect_diffusive_block(b: &DMatrix<f64>) -> Result<usize> {
    let n = b.nrows();
    let scale = 1.0 + b.amax();
    let row_nonzero: Vec<bool> = (0..n)
        .map(|i| (0..n).any(|j| b[(i, j)].abs() > SHAPE_ZERO_TOL * scale))
        .collect();
    let d0 = row_nonzero.iter().take_while(|&&nz| nz).count();
    if d0 == 0 {
        return Err(Error::validation("diffusion matrix B is identically zero"));
    }
    if row_nonzero[d0..].iter().any(|&nz| nz) {
        return Err(Error::validation(
            "B must be diag(B0, 0) with B0 in the leading block; \
             found nonzero entries outside it",
        ));
    }
    Ok(d0)
}

/// In the canonical frame, blocks strictly below the first subdiagonal vanish
/// and each subdiagonal block has full row rank. Blocks on and above the
/// diagonal are unconstrained.
fn validate_canonical_drift(a: &DMatrix<f64>, dims: &[usize]) -> Result<()> {
    let offsets = block_offsets(dims);
    let scale = 1.0 + a.amax();
    for i in 0..dims.len() {
        for j in 0..dims.len() {
            if i >= j + 2 {
                let blk = a.view((offsets[i], offsets[j]), (dims[i], dims[j]));
                if blk.amax() > SHAPE_ZERO_TOL * scale {
                    return Err(Error::validation(format!(
                        "drift matrix is not in canonical form: block ({i},{j}) \
                         below the subdiagonal is nonzero; inputs in a rotated \
                         frame are refused"
                    )));
                }
            }
        }
        if i >= 1 {
            let blk = a
                .view((offsets[i], offsets[i - 1]), (dims[i], dims[i - 1]))
                .into_owned();
            if linalg::numerical_rank(&blk, RANK_REL_TOL) != dims[i] {
                return Err(Error::validation(format!(
                    "drift matrix is not in canonical form: subdiagonal block \
                     ({i},{}) must have rank {}",
                    i - 1,
                    dims[i]
                )));
            }
        }
    }
    Ok(())
}

/// The dilation-invariant shape: zero everywhere except full-rank subdiagonal
/// blocks.
fn drift_is_canonical_nilpotent(a: &DMatrix<f64>, dims: &[usize]) -> bool {
    let offsets = block_offsets(dims);
    let scale = 1.0 + a.amax();
    for i in 0..dims.len() {
        for j in 0..dims.len() {
            let blk = a.view((offsets[i], offsets[j]), (dims[i], dims[j]));
            if i == j + 1 {
                if linalg::numerical_rank(&blk.into_owned(), RANK_REL_TOL) != dims[i] {
                    return false;
                }
            } else if blk.amax() > SHAPE_ZERO_TOL * scale {
                return false;
            }
        }
    }
    true
}

fn block_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in dims {
        offsets.push(acc);
        acc += d;
    }
    offsets
}

/// Intrinsic regularity exponents alpha_i = (alpha/2) / (1 + alpha i),
/// one per block.
pub fn intrinsic_exponents(alpha: f64, dims: &[usize]) -> Vec<f64> {
    (0..dims.len())
        .map(|i| (alpha / 2.0) / (1.0 + alpha * i as f64))
        .collect()
}

/// Anisotropic dilation delta_lambda(t, x): time scales by lambda^{1/alpha},
/// block i by lambda^{1/(1+alpha i)}.
pub fn dilation_apply(
    lambda: f64,
    t: f64,
    x: &DVector<f64>,
    structure: &KalmanStructure,
) -> (f64, DVector<f64>) {
    assert!(lambda > 0.0, "dilation parameter must be positive");
    let alpha = structure.alpha;
    let mut y = x.clone();
    for i in 0..structure.dims.len() {
        let e = 1.0 / (1.0 + alpha * i as f64);
        let factor = lambda.powf(e);
        for idx in structure.block_range(i) {
            y[idx] *= factor;
        }
    }
    (lambda.powf(1.0 / alpha) * t, y)
}

/// Parabolic quasi-distance d(x, y) = sum_i |x_i - y_i|^{1/(1+alpha i)}.
/// Each exponent is <= 1, so d actually satisfies the plain triangle
/// inequality; callers may still use the constant 2 safely.
pub fn parabolic_distance(x: &DVector<f64>, y: &DVector<f64>, structure: &KalmanStructure) -> f64 {
    assert_eq!(x.len(), structure.dim());
    assert_eq!(y.len(), structure.dim());
    let alpha = structure.alpha;
    let mut d = 0.0;
    for i in 0..structure.dims.len() {
        let range = structure.block_range(i);
        let mut s = 0.0;
        for idx in range {
            let diff = x[idx] - y[idx];
            s += diff * diff;
        }
        d += s.sqrt().powf(1.0 / (1.0 + alpha * i as f64));
    }
    d
}

/// Shape check for the dilation-invariant class, usable on drifts that did
/// not come out of `check_kalman`.
pub fn is_dilation_invariant(a: &DMatrix<f64>, structure: &KalmanStructure) -> bool {
    a.nrows() == structure.dim()
        && a.ncols() == structure.dim()
        && drift_is_canonical_nilpotent(a, &structure.dims)
}

/// Convenience constructor for the kinetic benchmark pair
/// A = [[0, 0], [1, 0]], B = diag(1, 0).
pub fn kinetic_spec(alpha: f64, horizon: f64, measure: Option<SpectralMeasure>) -> OperatorSpec {
    OperatorSpec {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        b: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        alpha,
        horizon,
        measure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kinetic() -> OperatorSpec {
        kinetic_spec(2.0, 1.0, None)
    }

    #[test]
    fn kinetic_structure() {
        let s = check_kalman(&kinetic()).unwrap();
        assert!(s.satisfied);
        assert_eq!(s.k, 1);
        assert_eq!(s.dims, vec![1, 1]);
        assert_eq!(s.d0, 1);
        assert_relative_eq!(s.kappa2, 1.0, epsilon = 1e-12);
        assert!(s.dilation_invariant);
        assert_eq!(s.sigma.nrows(), 2);
        assert_eq!(s.sigma.ncols(), 1);
        assert_relative_eq!(s.sigma[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.sigma[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.exponents[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.exponents[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn full_diffusion_needs_no_drift() {
        let spec = OperatorSpec {
            a: DMatrix::from_row_slice(3, 3, &[0.4, -1.0, 2.0, 0.0, 0.1, 0.0, 5.0, 1.0, -2.0]),
            b: DMatrix::identity(3, 3),
            alpha: 2.0,
            horizon: 1.0,
            measure: None,
        };
        let s = check_kalman(&spec).unwrap();
        assert!(s.satisfied);
        assert_eq!(s.k, 0);
        assert_eq!(s.dims, vec![3]);
        assert!(!s.dilation_invariant); // A != 0
    }

    #[test]
    fn zero_drift_with_degenerate_diffusion_fails() {
        let spec = OperatorSpec {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            alpha: 2.0,
            horizon: 1.0,
            measure: None,
        };
        let s = check_kalman(&spec).unwrap();
        assert!(!s.satisfied);
        assert_eq!(s.dims, vec![1]);
    }

    #[test]
    fn rotated_frames_are_refused() {
        // Satisfies the rank condition but has a nonzero block below the
        // subdiagonal, i.e. it sits in a non-canonical frame.
        let spec = OperatorSpec {
            a: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 0.0]),
            b: DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            alpha: 2.0,
            horizon: 1.0,
            measure: None,
        };
        let err = check_kalman(&spec).unwrap_err();
        assert!(err.to_string().contains("canonical"));
    }

    #[test]
    fn misplaced_diffusion_block_is_refused() {
        let spec = OperatorSpec {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            alpha: 2.0,
            horizon: 1.0,
            measure: None,
        };
        assert!(check_kalman(&spec).is_err());
    }

    #[test]
    fn exponent_table() {
        let e2 = intrinsic_exponents(2.0, &[1, 1]);
        assert_relative_eq!(e2[0], 1.0);
        assert_relative_eq!(e2[1], 1.0 / 3.0);
        let e1 = intrinsic_exponents(1.0, &[1, 1]);
        assert_relative_eq!(e1[0], 0.5);
        assert_relative_eq!(e1[1], 0.25);
    }

    #[test]
    fn parabolic_distance_kinetic_example() {
        let s = check_kalman(&kinetic()).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 8.0]);
        // |1|^1 + |8|^{1/3} = 3.
        assert_relative_eq!(parabolic_distance(&x, &y, &s), 3.0, epsilon = 1e-12);
        assert_relative_eq!(parabolic_distance(&y, &x, &s), 3.0, epsilon = 1e-12);
        assert_eq!(parabolic_distance(&x, &x, &s), 0.0);
    }

    #[test]
    fn dilation_kinetic_example() {
        let s = check_kalman(&kinetic()).unwrap();
        let (t, x) = dilation_apply(8.0, 1.0, &DVector::from_vec(vec![1.0, 1.0]), &s);
        assert_relative_eq!(t, 8f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(x[0], 8.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dilation_invariance_examples() {
        let s = check_kalman(&kinetic()).unwrap();
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(is_dilation_invariant(&a0, &s));
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(!is_dilation_invariant(&a1, &s));
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(!is_dilation_invariant(&a2, &s));
    }

    #[test]
    fn quasi_triangle_holds_on_a_grid() {
        let s = check_kalman(&kinetic()).unwrap();
        let pts: Vec<DVector<f64>> = (-2..=2)
            .flat_map(|i| (-2..=2).map(move |j| DVector::from_vec(vec![i as f64, j as f64 * 1.7])))
            .collect();
        for x in &pts {
            for y in &pts {
                for z in &pts {
                    let lhs = parabolic_distance(x, z, &s);
                    let rhs = parabolic_distance(x, y, &s) + parabolic_distance(y, z, &s);
                    assert!(lhs <= 2.0 * rhs + 1e-12, "quasi-triangle violated");
                }
            }
        }
    }
}
