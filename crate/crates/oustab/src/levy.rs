//! Spectral measures on the sphere of the diffusive block, the non-degeneracy
//! constant kappa_alpha, Levy exponents, and exact sampling of the driving
//! alpha-stable increments.
//!
//! A measure is a finite list of unit atoms theta_j with positive weights
//! m_j. The associated Levy measure is the polar lift r^{-1-alpha} dr x mu,
//! and its exponent is
//!
//! ```text
//!   psi(lambda) = -m(alpha) * sum_j m_j |<lambda, theta_j>|^alpha,
//! ```
//!
//! with m(alpha) the truncated cosine moment from [`crate::quad`].

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::quad::one_minus_cos_moment;

/// Directions scanned when minimizing the spectral form on the sphere.
const SPHERE_GRID: usize = 1 << 12;

/// Atoms count as a symmetric pair when directions and weights agree to this
/// tolerance.
const PAIR_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralMeasure {
    atoms: Vec<DVector<f64>>,
    weights: Vec<f64>,
    dim: usize,
    /// (atom index, combined +/- weight) per symmetric pair; None when the
    /// measure is not symmetric, in which case sampling is refused.
    pairs: Option<Vec<(usize, f64)>>,
    /// Largest deviation from unit length seen among the input atoms.
    renormalization: f64,
}

#[derive(Debug, Clone)]
pub struct NonDegeneracyReport {
    pub kappa_alpha: f64,
    pub satisfied: bool,
    /// Direction achieving the minimum of the spectral form.
    pub argmin: DVector<f64>,
}

impl SpectralMeasure {
    /// The symmetric measure on S^0 = {+1, -1} with total mass one.
    pub fn isotropic_1d() -> Self {
        SpectralMeasure::discrete(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
            vec![0.5, 0.5],
        )
        .expect("static construction")
    }

    /// Discrete measure from atoms and weights. Atoms are renormalized onto
    /// the sphere; the largest correction applied is recorded so callers can
    /// warn when inputs were visibly off the sphere.
    pub fn discrete(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::validation("spectral measure needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::validation(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(Error::validation("spectral atoms must be nonempty vectors"));
        }
        let mut renorm = 0.0f64;
        let mut unit_atoms = Vec::with_capacity(atoms.len());
        for (j, atom) in atoms.into_iter().enumerate() {
            if atom.len() != dim {
                return Err(Error::validation("spectral atoms have mixed dimensions"));
            }
            let norm = atom.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::validation(format!("atom {j} is zero or not finite")));
            }
            renorm = renorm.max((norm - 1.0).abs());
            unit_atoms.push(atom / norm);
        }
        for (j, &w) in weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::validation(format!(
                    "weight {j} must be positive and finite, got {w}"
                )));
            }
        }
        let pairs = find_symmetric_pairs(&unit_atoms, &weights);
        Ok(SpectralMeasure {
            atoms: unit_atoms,
            weights,
            dim,
            pairs,
            renormalization: renorm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// How far input atoms were from unit length (0 for exact inputs).
    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs.is_some()
    }

    /// Antipodal pairing (atom index, combined weight of both antipodes),
    /// when the measure is symmetric.
    pub fn symmetric_pairs(&self) -> Option<&[(usize, f64)]> {
        self.pairs.as_deref()
    }

    /// The spectral form sum_j m_j |<lambda, theta_j>|^alpha.
    pub fn spectral_form(&self, alpha: f64, lambda: &DVector<f64>) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(theta, m)| m * lambda.dot(theta).abs().powf(alpha))
            .sum()
    }
}

/// Pair each atom with its antipode of equal weight; None if impossible.
fn find_symmetric_pairs(atoms: &[DVector<f64>], weights: &[f64]) -> Option<Vec<(usize, f64)>> {
    let n = atoms.len();
    let mut matched = vec![false; n];
    let mut pairs = Vec::with_capacity(n / 2);
    for i in 0..n {
        if matched[i] {
            continue;
        }
        let mut found = None;
        for j in (i + 1)..n {
            if matched[j] {
                continue;
            }
            let dir_close = (&atoms[i] + &atoms[j]).amax() < PAIR_TOL;
            let w_close = (weights[i] - weights[j]).abs() < PAIR_TOL * (weights[i] + weights[j]);
            if dir_close && w_close {
                found = Some(j);
                break;
            }
        }
        match found {
            Some(j) => {
                matched[i] = true;
                matched[j] = true;
                pairs.push((i, weights[i] + weights[j]));
            }
            None => return None,
        }
    }
    Some(pairs)
}

/// Minimize the spectral form over the unit sphere on a deterministic grid
/// and compare against zero. Supports diffusive blocks of width 1, 2, 3.
pub fn check_nondegeneracy(measure: &SpectralMeasure, alpha: f64) -> Result<NonDegeneracyReport> {
    validate_alpha(alpha)?;
    let dirs = sphere_grid(measure.dim())?;
    let mut best = f64::INFINITY;
    let mut argmin = dirs[0].clone();
    for dir in &dirs {
        let v = measure.spectral_form(alpha, dir);
        if v < best {
            best = v;
            argmin = dir.clone();
        }
    }
    let satisfied = best > 1e-10 * measure.total_mass();
    Ok(NonDegeneracyReport {
        kappa_alpha: best,
        satisfied,
        argmin,
    })
}

fn sphere_grid(dim: usize) -> Result<Vec<DVector<f64>>> {
    match dim {
        1 => Ok(vec![DVector::from_vec(vec![1.0])]),
        2 => {
            let n = SPHERE_GRID;
            Ok((0..n)
                .map(|i| {
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    DVector::from_vec(vec![phi.cos(), phi.sin()])
                })
                .collect())
        }
        3 => {
            // Fibonacci lattice on S^2.
            let n = SPHERE_GRID;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            Ok((0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
                })
                .collect())
        }
        d => Err(Error::unsupported(format!(
            "non-degeneracy scan supports diffusive blocks of width <= 3, got {d}"
        ))),
    }
}

/// Levy exponent psi(lambda) of the polar-lift stable measure; psi <= 0, with
/// psi(lambda) = -|lambda|^alpha * kappa-type constants in the isotropic case.
pub fn levy_exponent(measure: &SpectralMeasure, alpha: f64, lambda: &DVector<f64>) -> Result<f64> {
    validate_alpha(alpha)?;
    if lambda.len() != measure.dim() {
        return Err(Error::validation(format!(
            "frequency has dimension {}, measure lives in dimension {}",
            lambda.len(),
            measure.dim()
        )));
    }
    if alpha == 2.0 {
        // Gaussian convention: generator Tr(D^2), exponent -|lambda|^2.
        return Ok(-lambda.norm_squared());
    }
    Ok(-one_minus_cos_moment(alpha) * measure.spectral_form(alpha, lambda))
}

/// One increment of the driving noise over a step `dt`, exact in law:
/// characteristic function exp(dt * psi(lambda)).
///
/// alpha = 2 draws the Gaussian with covariance 2 dt I (generator Tr(D^2)).
/// alpha < 2 requires a symmetric measure and sums, over each antipodal atom
/// pair, an independent one-dimensional symmetric stable variate scaled by
/// (pair weight * m(alpha) * dt)^{1/alpha} along the atom direction.
pub fn sample_stable_increment<R: Rng + ?Sized>(
    measure: &SpectralMeasure,
    alpha: f64,
    dt: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    validate_alpha(alpha)?;
    if !(dt >= 0.0) {
        return Err(Error::validation("time step must be nonnegative"));
    }
    let d = measure.dim();
    if alpha == 2.0 {
        let scale = (2.0 * dt).sqrt();
        let mut out = DVector::zeros(d);
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            out[i] = scale * z;
        }
        return Ok(out);
    }
    let pairs = measure.pairs.as_ref().ok_or_else(|| {
        Error::validation(
            "stable sampling requires a symmetric spectral measure \
             (every atom paired with its antipode at equal weight)",
        )
    })?;
    let c = one_minus_cos_moment(alpha);
    let mut out = DVector::zeros(d);
    if dt == 0.0 {
        return Ok(out);
    }
    for &(idx, pair_weight) in pairs {
        let scale = (pair_weight * c * dt).powf(1.0 / alpha);
        let x = standard_symmetric_stable(alpha, rng);
        out.axpy(scale * x, &measure.atoms[idx], 1.0);
    }
    Ok(out)
}

/// Chambers-Mallows-Stuck draw of a standard symmetric alpha-stable variate,
/// characteristic function exp(-|t|^alpha).
fn standard_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
    if alpha == 1.0 {
        return u.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let au = alpha * u;
    (au.sin() / u.cos().powf(1.0 / alpha))
        * (((u - au).cos() / w).powf((1.0 - alpha) / alpha))
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "stability index alpha must lie in (0, 2], got {alpha}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn axes_2d() -> SpectralMeasure {
        let e = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
        SpectralMeasure::discrete(
            vec![e(1.0, 0.0), e(-1.0, 0.0), e(0.0, 1.0), e(0.0, -1.0)],
            vec![0.25; 4],
        )
        .unwrap()
    }

    #[test]
    fn isotropic_1d_has_unit_kappa_for_every_alpha() {
        let m = SpectralMeasure::isotropic_1d();
        for &alpha in &[0.5, 1.0, 1.5, 2.0] {
            let rep = check_nondegeneracy(&m, alpha).unwrap();
            assert!(rep.satisfied);
            assert_relative_eq!(rep.kappa_alpha, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn axes_measure_kappa_half_at_alpha_two() {
        let rep = check_nondegeneracy(&axes_2d(), 2.0).unwrap();
        assert!(rep.satisfied);
        assert_relative_eq!(rep.kappa_alpha, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn single_direction_pair_in_two_dims_is_degenerate() {
        let m = SpectralMeasure::discrete(
            vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![-1.0, 0.0]),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let rep = check_nondegeneracy(&m, 1.0).unwrap();
        assert!(!rep.satisfied);
        assert!(rep.kappa_alpha < 1e-6);
        // The minimizing direction is (up to grid resolution) orthogonal to
        // the only atom direction.
        assert!(rep.argmin[0].abs() < 2e-3);
    }

    #[test]
    fn levy_exponent_isotropic_reference_values() {
        let m = SpectralMeasure::isotropic_1d();
        let lam = DVector::from_vec(vec![1.0]);
        // total mass 1, so psi(1) = -m(alpha).
        assert_relative_eq!(
            levy_exponent(&m, 1.0, &lam).unwrap(),
            -std::f64::consts::FRAC_PI_2,
            epsilon = 1e-6
        );
        assert_relative_eq!(
            levy_exponent(&m, 0.5, &lam).unwrap(),
            -(2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-6
        );
        // Scaling in lambda.
        let lam3 = DVector::from_vec(vec![3.0]);
        let a = 1.5;
        assert_relative_eq!(
            levy_exponent(&m, a, &lam3).unwrap(),
            3f64.powf(a) * levy_exponent(&m, a, &lam).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn renormalization_is_recorded() {
        let m = SpectralMeasure::discrete(
            vec![
                DVector::from_vec(vec![2.0, 0.0]),
                DVector::from_vec(vec![-2.0, 0.0]),
            ],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(m.renormalization() > 0.5);
        assert_relative_eq!(m.atoms()[0].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn asymmetric_measure_refuses_to_sample() {
        let m = SpectralMeasure::discrete(
            vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0]),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(!m.is_symmetric());
        let mut rng = crate::rng::substream(1, 0, 0);
        assert!(sample_stable_increment(&m, 1.0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn gaussian_increment_variance() {
        let m = SpectralMeasure::isotropic_1d();
        let mut rng = crate::rng::substream(11, 0, 0);
        let dt = 0.7;
        let n = 200_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = sample_stable_increment(&m, 2.0, dt, &mut rng).unwrap();
            sum_sq += x[0] * x[0];
        }
        // Var = 2 dt under the Tr(D^2) convention.
        assert_relative_eq!(sum_sq / n as f64, 2.0 * dt, max_relative = 0.02);
    }

    #[test]
    fn stable_increment_empirical_cf_matches_exponent() {
        // alpha = 1, isotropic: mean of cos(lambda X) ~ exp(dt psi(lambda)).
        let m = SpectralMeasure::isotropic_1d();
        let alpha = 1.0;
        let dt = 1.0;
        let n = 100_000usize;
        let lambdas = [0.5f64, 1.0, 2.0];
        let mut rng = crate::rng::substream(42, 0, 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_stable_increment(&m, alpha, dt, &mut rng).unwrap()[0])
            .collect();
        for &lam in &lambdas {
            let cos_vals: Vec<f64> = draws.iter().map(|&x| (lam * x).cos()).collect();
            let (mean, se) = crate::linalg::mean_and_stderr(&cos_vals);
            let lv = DVector::from_vec(vec![lam]);
            let target = (dt * levy_exponent(&m, alpha, &lv).unwrap()).exp();
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "CF mismatch at lambda={lam}: empirical {mean:.5} vs {target:.5} (se {se:.2e})"
            );
        }
    }

    #[test]
    fn stable_increments_scale_like_dt_pow_inv_alpha() {
        // Medians of |X| under dt and 16 dt differ by 16^{1/alpha}.
        let m = SpectralMeasure::isotropic_1d();
        let alpha = 1.0;
        let n = 60_000usize;
        let mut rng = crate::rng::substream(7, 0, 0);
        let med = |dt: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut v: Vec<f64> = (0..n)
                .map(|_| sample_stable_increment(&m, alpha, dt, rng).unwrap()[0].abs())
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[n / 2]
        };
        let m1 = med(0.1, &mut rng);
        let m16 = med(1.6, &mut rng);
        assert_relative_eq!(m16 / m1, 16.0, max_relative = 0.08);
    }
}
