//! The rough-in-time perturbation Tr(S(t) D^2) and its compound-Poisson
//! randomization.
//!
//! S(t) is piecewise constant, positive semidefinite on the diffusive block,
//! and nothing more: no continuity is assumed anywhere, and none of the
//! derived bounds may depend on the switch pattern. The randomization
//! replaces Tr(S(t) D^2) by jumps of size proportional to a small parameter
//! eps, arriving at rate 1/eps^2, arranged so that the averaged generator is
//! a symmetric second difference converging to the original operator as
//! eps -> 0 while the maximum principle is preserved exactly at every eps.

mod embed;
mod jumps;
mod solve;
mod transform;

pub use embed::{elliptic_embed_check, EllipticEmbedConfig, EllipticEmbedReport};
pub use jumps::{apply_j, build_jump_system, sample_compound_shift, JumpSystem, PoissonPath};
pub use solve::{epsilon_sweep, solve_perturbed, EpsilonSweep, EpsilonSweepPoint};
pub use transform::{transform_t_solve, TimeTransform};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quad;

/// Principal square root of a symmetric positive-semidefinite matrix by
/// spectral decomposition. Eigenvalues slightly negative from rounding are
/// clamped to zero; genuinely indefinite inputs are refused.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::psd_sqrt_sym(m, 1e-10)
}

/// Independent reference for [`psd_sqrt`]: the Balakrishnan-type integral
///
/// ```text
///   sqrt(M) = 1/(2 sqrt(pi)) int_0^inf tau^{-3/2} (I - e^{-tau M}) dtau,
/// ```
///
/// evaluated by quadrature on the spectrally normalized matrix: the inner
/// part [0, 1] under tau = rho^2 (the integrand becomes smooth), the middle
/// on logarithmic panels, and the tail approximated by freezing
/// I - e^{-tau M} at the cutoff. Accuracy is set by the smallest nonzero
/// eigenvalue of M / |M|; intended as a test oracle for well-separated
/// spectra, not as the production route.
pub fn psd_sqrt_integral(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::validation("psd_sqrt_integral needs a square matrix"));
    }
    if !linalg::is_symmetric(m, 1e-10) {
        return Err(Error::validation("psd_sqrt_integral needs a symmetric matrix"));
    }
    let scale = linalg::spectral_norm(m);
    if scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if linalg::min_eigenvalue_sym(m) < -1e-10 * scale {
        return Err(Error::validation(
            "psd_sqrt_integral needs a positive semidefinite matrix",
        ));
    }
    let mh = m / scale;
    let id = DMatrix::<f64>::identity(n, n);

    // Inner [0, 1], tau = rho^2: 2 int_0^1 rho^{-2} (I - e^{-rho^2 M}) drho,
    // smooth at rho = 0 where it tends to M.
    let inner = quad::integrate_matrix(
        |rho| {
            if rho < 1e-8 {
                mh.clone()
            } else {
                (&id - linalg::expm(&(&mh * (-rho * rho)))) * rho.powi(-2)
            }
        },
        0.0,
        1.0,
        1e-12,
    ) * 2.0;

    // Middle [1, THETA] on log panels: tau = e^u.
    const THETA: f64 = 64.0;
    let middle = quad::integrate_matrix(
        |u| {
            let tau = u.exp();
            (&id - linalg::expm(&(&mh * (-tau)))) * tau.powf(-0.5)
        },
        0.0,
        THETA.ln(),
        1e-12,
    );

    // Tail: freeze the bracket at THETA; int_THETA^inf tau^{-3/2} = 2/sqrt(THETA).
    let tail = (&id - linalg::expm(&(&mh * (-THETA)))) * (2.0 / THETA.sqrt());

    let c = 0.5 / std::f64::consts::PI.sqrt();
    Ok((inner + middle + tail) * c * scale.sqrt())
}

/// Piecewise-constant S(t) on the diffusive block over [0, horizon].
#[derive(Debug, Clone)]
pub struct PerturbationSchedule {
    /// t_0 = 0 < t_1 < ... < t_m = horizon.
    cuts: Vec<f64>,
    /// S on [t_i, t_{i+1}); m entries, each d0 x d0 symmetric PSD.
    values: Vec<DMatrix<f64>>,
}

impl PerturbationSchedule {
    pub fn new(cuts: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if cuts.len() < 2 || values.len() + 1 != cuts.len() {
            return Err(Error::validation(format!(
                "schedule needs n+1 cuts for n cells, got {} cuts and {} values",
                cuts.len(),
                values.len()
            )));
        }
        if cuts[0] != 0.0 {
            return Err(Error::validation("schedule must start at t = 0"));
        }
        for w in cuts.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation("schedule cuts must increase strictly"));
            }
        }
        let d0 = values[0].nrows();
        let mut sym = Vec::with_capacity(values.len());
        for (i, v) in values.iter().enumerate() {
            if v.nrows() != d0 || v.ncols() != d0 {
                return Err(Error::validation("schedule cells have mixed dimensions"));
            }
            if !linalg::is_symmetric(v, 1e-10) {
                return Err(Error::validation(format!("schedule cell {i} is not symmetric")));
            }
            let s = linalg::symmetrize(v);
            let lo = linalg::min_eigenvalue_sym(&s);
            if lo < -1e-12 * (1.0 + s.amax()) {
                return Err(Error::validation(format!(
                    "schedule cell {i} is not positive semidefinite (min eig {lo:.3e})"
                )));
            }
            sym.push(s);
        }
        Ok(PerturbationSchedule { cuts, values: sym })
    }

    /// Constant S over [0, horizon].
    pub fn constant(s: DMatrix<f64>, horizon: f64) -> Result<Self> {
        PerturbationSchedule::new(vec![0.0, horizon], vec![s])
    }

    /// `n_cells` equal cells alternating base + delta, base - delta,
    /// base + delta, ... With an even cell count the time average is exactly
    /// `base`; a single cell gives the homogenized limit itself. This is the
    /// switching family driving the estimate-invariance experiments.
    pub fn alternating(
        base: &DMatrix<f64>,
        delta: &DMatrix<f64>,
        n_cells: usize,
        horizon: f64,
    ) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::validation("need at least one cell"));
        }
        if !(horizon > 0.0) {
            return Err(Error::validation("horizon must be positive"));
        }
        let cuts: Vec<f64> = (0..=n_cells)
            .map(|i| horizon * i as f64 / n_cells as f64)
            .collect();
        let values: Vec<DMatrix<f64>> = (0..n_cells)
            .map(|i| {
                if n_cells == 1 {
                    base.clone()
                } else if i % 2 == 0 {
                    base + delta
                } else {
                    base - delta
                }
            })
            .collect();
        PerturbationSchedule::new(cuts, values)
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn horizon(&self) -> f64 {
        *self.cuts.last().unwrap()
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// S at time t; t >= horizon returns the last cell.
    pub fn value_at(&self, t: f64) -> &DMatrix<f64> {
        let idx = self.cuts[1..self.cuts.len() - 1].partition_point(|&c| c <= t);
        &self.values[idx]
    }

    /// Largest spectral norm over the cells: the only size information any
    /// estimate is allowed to use.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_integral_matches_spectral_sqrt() {
        // Well-conditioned SPD matrix.
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s1 = psd_sqrt(&m).unwrap();
        let s2 = psd_sqrt_integral(&m).unwrap();
        assert!(
            (&s1 - &s2).norm() < 1e-6 * s1.norm(),
            "disagreement {:.3e}",
            (&s1 - &s2).norm()
        );
        assert!((&s2 * &s2 - &m).norm() < 1e-5);
    }

    #[test]
    fn sqrt_integral_handles_rank_deficiency() {
        // diag(4, 1, 0): kernel directions contribute nothing.
        let m = DMatrix::from_partial_diagonal(3, 3, &[4.0, 1.0]);
        let s = psd_sqrt_integral(&m).unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-6);
        assert_relative_eq!(s[(1, 1)], 1.0, epsilon = 1e-6);
        assert!(s[(2, 2)].abs() < 1e-8);
        assert!(s[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn sqrt_integral_refuses_indefinite() {
        let m = DMatrix::from_partial_diagonal(2, 2, &[1.0, -1.0]);
        assert!(psd_sqrt_integral(&m).is_err());
    }

    #[test]
    fn schedule_lookup_and_sup() {
        let s0 = DMatrix::from_element(1, 1, 0.5);
        let s1 = DMatrix::from_element(1, 1, 2.0);
        let sched =
            PerturbationSchedule::new(vec![0.0, 0.3, 1.0], vec![s0, s1]).unwrap();
        assert_eq!(sched.value_at(0.0)[(0, 0)], 0.5);
        assert_eq!(sched.value_at(0.29)[(0, 0)], 0.5);
        assert_eq!(sched.value_at(0.3)[(0, 0)], 2.0);
        assert_eq!(sched.value_at(1.0)[(0, 0)], 2.0);
        assert_relative_eq!(sched.sup_norm(), 2.0);
        assert_eq!(sched.dim(), 1);
    }

    #[test]
    fn alternating_family_averages_to_base() {
        let base = DMatrix::from_element(1, 1, 1.0);
        let delta = DMatrix::from_element(1, 1, 0.6);
        for &n in &[2usize, 4, 16] {
            let sched = PerturbationSchedule::alternating(&base, &delta, n, 1.0).unwrap();
            let mean: f64 = sched
                .values()
                .iter()
                .zip(sched.cuts().windows(2))
                .map(|(v, w)| v[(0, 0)] * (w[1] - w[0]))
                .sum();
            assert_relative_eq!(mean, 1.0, epsilon = 1e-12);
        }
        let single = PerturbationSchedule::alternating(&base, &delta, 1, 1.0).unwrap();
        assert_eq!(single.values()[0][(0, 0)], 1.0);
    }

    #[test]
    fn schedule_rejects_indefinite_cells() {
        let bad = DMatrix::from_element(1, 1, -0.1);
        assert!(PerturbationSchedule::new(vec![0.0, 1.0], vec![bad]).is_err());
    }
}
