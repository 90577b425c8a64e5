//! The unperturbed Ornstein-Uhlenbeck layer: covariance of the stochastic
//! convolution, exact or Riemann sampling of its increments, and the
//! Monte Carlo solve of the clean Cauchy problem.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::levy::sample_stable_increment;
use crate::linalg;
use crate::mc::{self, Estimate};
use crate::quad;
use crate::source::Source;
use crate::structure::{check_kalman, KalmanStructure, OperatorSpec};

/// Discretization and sampling parameters shared by every Monte Carlo solve.
#[derive(Debug, Clone)]
pub struct OuKernelParams {
    /// Uniform panels of the Duhamel time quadrature (data breakpoints are
    /// always added on top).
    pub n_time: usize,
    /// Riemann steps for the stable stochastic convolution; unused at
    /// alpha = 2 where sampling is exact.
    pub nsteps: usize,
    /// Monte Carlo sample count.
    pub samples: usize,
    pub seed: u64,
}

impl Default for OuKernelParams {
    fn default() -> Self {
        OuKernelParams {
            n_time: 4,
            nsteps: 64,
            samples: 20_000,
            seed: 0,
        }
    }
}

/// M(s, t) = int_s^t e^{rA} B e^{rA*} dr, the half-covariance of the
/// stochastic convolution int_s^t e^{rA} sigma dW_r (its covariance is 2M
/// under the Tr(B D^2) generator convention).
pub fn ou_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>, s: f64, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::validation(
            "ou_covariance needs square A and B of matching dimension",
        ));
    }
    if !(t >= s) || !s.is_finite() || !t.is_finite() {
        return Err(Error::validation(format!(
            "ou_covariance needs s <= t, got s = {s}, t = {t}"
        )));
    }
    let m = quad::integrate_matrix(
        |r| {
            let er = linalg::expm(&(a * r));
            &er * b * er.transpose()
        },
        s,
        t,
        1e-13,
    );
    Ok(linalg::symmetrize(&m))
}

/// One draw of the stochastic convolution increment int_s^t e^{rA} sigma dZ_r.
///
/// alpha = 2: exact, Gaussian with covariance 2 M(s, t). alpha < 2: the
/// integrand e^{rA} sigma is frozen at the left endpoint of each of `nsteps`
/// uniform subintervals and the exact stable increment is drawn on each, so
/// the law converges at first order in the step.
pub fn sample_ou_integral<R: Rng + ?Sized>(
    spec: &OperatorSpec,
    structure: &KalmanStructure,
    s: f64,
    t: f64,
    nsteps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(t >= s) {
        return Err(Error::validation(format!(
            "need s <= t, got s = {s}, t = {t}"
        )));
    }
    let d = spec.dim();
    if structure.dim() != d {
        return Err(Error::validation("structure does not match the operator"));
    }
    if spec.is_gaussian() {
        let m = ou_covariance(&spec.a, &spec.b, s, t)?;
        let factor = linalg::psd_sqrt_sym(&(2.0 * m), 1e-8)?;
        let z = DVector::from_fn(d, |_, _| {
            rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
        });
        return Ok(factor * z);
    }
    let measure = spec
        .measure
        .as_ref()
        .ok_or_else(|| Error::validation("alpha < 2 requires a spectral measure"))?;
    if nsteps == 0 {
        return Err(Error::validation("nsteps must be positive for alpha < 2"));
    }
    let dt = (t - s) / nsteps as f64;
    let mut acc = DVector::zeros(d);
    for j in 0..nsteps {
        let r = s + j as f64 * dt;
        let dz = sample_stable_increment(measure, spec.alpha, dt, rng)?;
        let es = linalg::expm(&(&spec.a * r)) * &structure.sigma;
        acc.gemv(1.0, &es, &dz, 1.0);
    }
    Ok(acc)
}

/// Monte Carlo solution of du/dt = L u + <Ax, Du> + f, u(0) = 0, evaluated
/// at (t, x). The estimate carries its maximum-principle certificate.
pub fn solve_unperturbed(
    spec: &OperatorSpec,
    source: &dyn Source,
    params: &OuKernelParams,
    t: f64,
    x: &DVector<f64>,
) -> Result<Estimate> {
    let structure = check_kalman(spec)?;
    let engine = mc::Engine {
        spec,
        structure: &structure,
        source,
        jumps: None,
        params,
    };
    mc::solve_at(&engine, t, x)
}
