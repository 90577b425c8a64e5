//! Anisotropic regularity functionals used by the estimate-constant
//! experiments.
//!
//! Everything here is a deterministic quadrature or grid maximum, so that
//! ratios of these quantities across operator instances carry no Monte Carlo
//! noise. Grid maxima are lower bounds of the true suprema; ratio
//! experiments always compare the same functional on the same grid, which is
//! what makes the comparison meaningful.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::quad;
use crate::structure::KalmanStructure;

/// A time-frozen scalar field on R^d.
pub trait SpatialFunction: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> f64;
    /// Any valid bound for sup |phi|; used for rigorous quadrature tails.
    fn sup_bound(&self) -> f64;
    /// Radius R with phi = 0 outside |x| <= R, when one is known.
    fn support_radius(&self) -> Option<f64> {
        None
    }
}

/// Closure-backed field.
pub struct FnSpatial<F: Fn(&DVector<f64>) -> f64 + Sync> {
    dim: usize,
    f: F,
    sup: f64,
    support: Option<f64>,
}

impl<F: Fn(&DVector<f64>) -> f64 + Sync> FnSpatial<F> {
    pub fn new(dim: usize, f: F, sup: f64) -> Self {
        FnSpatial {
            dim,
            f,
            sup,
            support: None,
        }
    }

    pub fn with_support(mut self, radius: f64) -> Self {
        self.support = Some(radius);
        self
    }
}

impl<F: Fn(&DVector<f64>) -> f64 + Sync> SpatialFunction for FnSpatial<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }

    fn sup_bound(&self) -> f64 {
        self.sup
    }

    fn support_radius(&self) -> Option<f64> {
        self.support
    }
}

/// Memoizes evaluations by the bit pattern of the point. Worth it when the
/// field itself is a quadrature (numerically applied generators) and the
/// caller revisits grid points.
pub struct CachedSpatial<'a> {
    inner: &'a dyn SpatialFunction,
    cache: Mutex<HashMap<Vec<u64>, f64>>,
}

impl<'a> CachedSpatial<'a> {
    pub fn new(inner: &'a dyn SpatialFunction) -> Self {
        CachedSpatial {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<'a> SpatialFunction for CachedSpatial<'a> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&hit) = self.cache.lock().unwrap().get(&key) {
            return hit;
        }
        let v = self.inner.eval(x);
        self.cache.lock().unwrap().insert(key, v);
        v
    }

    fn sup_bound(&self) -> f64 {
        self.inner.sup_bound()
    }

    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius()
    }
}

/// Central difference along axis j.
pub fn axis_derivative(phi: &dyn SpatialFunction, x: &DVector<f64>, j: usize, h: f64) -> f64 {
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[j] += h;
    xm[j] -= h;
    (phi.eval(&xp) - phi.eval(&xm)) / (2.0 * h)
}

/// Quadrature layout for the one-dimensional principal-value integral
/// int_0^inf [phi(x + r e) + phi(x - r e) - 2 phi(x)] r^{-1-2 beta} dr.
#[derive(Debug, Clone, Copy)]
pub struct FracQuad {
    /// Below r_min the second difference is replaced by its parabolic model.
    pub r_min: f64,
    /// Truncation radius when the support gives no earlier cutoff.
    pub r_max: f64,
    /// Linear panel length on [1, r_max]; keep below half the shortest
    /// oscillation wavelength of phi.
    pub panel: f64,
    /// Gauss-Legendre points per panel.
    pub order: usize,
}

impl Default for FracQuad {
    fn default() -> Self {
        FracQuad {
            r_min: 1e-4,
            r_max: 1e4,
            panel: 0.5,
            order: 8,
        }
    }
}

/// Directional fractional second-difference integral along `dir` (not
/// normalized: the length of `dir` is part of the operator). Returns
/// (value, rigorous bound on the truncated remainder). The bound is zero
/// when the support of phi puts the entire tail in closed form.
pub fn frac_laplacian_dir(
    phi: &dyn SpatialFunction,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    beta: f64,
    fq: &FracQuad,
) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::validation(format!(
            "fractional order beta must lie in (0, 1), got {beta}"
        )));
    }
    if x.len() != phi.dim() || dir.len() != phi.dim() {
        return Err(Error::validation("dimension mismatch in the fractional integral"));
    }
    let dn = dir.norm();
    if !(dn > 0.0) {
        return Err(Error::validation("direction must be nonzero"));
    }
    if !(fq.r_min > 0.0 && fq.r_min < 1.0 && fq.r_max > 1.0 && fq.panel > 0.0) {
        return Err(Error::validation("bad fractional quadrature layout"));
    }

    let phi0 = phi.eval(x);
    let d2 = |r: f64| {
        let xp = x + dir * r;
        let xm = x - dir * r;
        phi.eval(&xp) + phi.eval(&xm) - 2.0 * phi0
    };

    // Where does the support stop contributing anything but -2 phi(x)?
    let reach = phi
        .support_radius()
        .map(|rs| ((rs + x.norm()) / dn + fq.r_min).max(4.0 * fq.r_min));
    let r_eff = match reach {
        Some(rr) if rr < fq.r_max => rr,
        _ => fq.r_max,
    };

    let tb = 2.0 * beta;
    // [0, r_min]: parabolic model D2(r) ~ D2(r_min) (r / r_min)^2.
    let mut value = d2(fq.r_min) * fq.r_min.powf(-tb) / (2.0 - tb);

    // [r_min, min(1, r_eff)]: log substitution r = e^u.
    let u_hi = r_eff.min(1.0).ln();
    let u_lo = fq.r_min.ln();
    if u_hi > u_lo {
        let n_log = ((u_hi - u_lo).ceil() as usize).max(1);
        let (nodes, weights) = quad::gauss_legendre(fq.order);
        for p in 0..n_log {
            let a = u_lo + (u_hi - u_lo) * p as f64 / n_log as f64;
            let b = u_lo + (u_hi - u_lo) * (p + 1) as f64 / n_log as f64;
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (z, w) in nodes.iter().zip(weights) {
                let u = mid + half * z;
                value += w * half * d2(u.exp()) * (-tb * u).exp();
            }
        }
    }

    // [1, r_eff]: linear panels short enough for oscillations.
    if r_eff > 1.0 {
        let n_lin = ((r_eff - 1.0) / fq.panel).ceil() as usize;
        if n_lin > 4_000_000 {
            return Err(Error::validation(
                "fractional quadrature would need too many panels; \
                 shrink r_max or enlarge panel",
            ));
        }
        let (nodes, weights) = quad::gauss_legendre(fq.order);
        for p in 0..n_lin {
            let a = 1.0 + (r_eff - 1.0) * p as f64 / n_lin as f64;
            let b = 1.0 + (r_eff - 1.0) * (p + 1) as f64 / n_lin as f64;
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (z, w) in nodes.iter().zip(weights) {
                let r = mid + half * z;
                value += w * half * d2(r) * r.powf(-1.0 - tb);
            }
        }
    }

    // Tail beyond r_eff: the -2 phi(x) part in closed form.
    value -= 2.0 * phi0 * r_eff.powf(-tb) / tb;
    // What remains unaccounted: the phi(x +- r dir) terms, unless the
    // support says they vanish.
    let err = if reach.is_some_and(|rr| rr <= r_eff) {
        0.0
    } else {
        2.0 * phi.sup_bound() * r_eff.powf(-tb) / tb
    };
    Ok((value, err))
}

/// Search grid for difference-quotient seminorms.
#[derive(Debug, Clone, Copy)]
pub struct NormGrid {
    /// Centers fill [-span, span]^d.
    pub span: f64,
    /// Centers per axis (odd keeps the origin on the grid).
    pub centers: usize,
    pub h_min: f64,
    pub h_max: f64,
    /// Steps geometrically spaced between h_min and h_max.
    pub h_count: usize,
}

impl Default for NormGrid {
    fn default() -> Self {
        NormGrid {
            span: 1.5,
            centers: 7,
            h_min: 0.05,
            h_max: 0.8,
            h_count: 10,
        }
    }
}

pub(crate) fn for_each_multi_index(dims: usize, side: usize, mut f: impl FnMut(&[usize])) {
    if dims == 0 {
        f(&[]);
        return;
    }
    let mut idx = vec![0usize; dims];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < side {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dims {
                return;
            }
        }
    }
}

/// Grid lower bound for the anisotropic Hoelder seminorm of order
/// `exponent` in the intrinsic distance: along an axis of block i a
/// displacement h costs h^{1/(1+alpha i)} of distance, so the effective
/// one-dimensional order is theta_i = exponent / (1 + alpha i), probed by
/// forward differences of order floor(theta_i) + 1.
pub fn holder_seminorm_aniso(
    phi: &dyn SpatialFunction,
    exponent: f64,
    structure: &KalmanStructure,
    grid: &NormGrid,
) -> Result<f64> {
    if !(exponent > 0.0) {
        return Err(Error::validation("seminorm exponent must be positive"));
    }
    if phi.dim() != structure.dim() {
        return Err(Error::validation("field dimension does not match the structure"));
    }
    if grid.centers < 1 || grid.h_count < 1 || !(grid.h_min > 0.0 && grid.h_max >= grid.h_min) {
        return Err(Error::validation("bad seminorm grid"));
    }
    let d = structure.dim();
    let alpha = structure.alpha;

    let mut best = 0.0f64;
    for i in 0..structure.dims.len() {
        let theta = exponent / (1.0 + alpha * i as f64);
        let m = theta.floor() as usize + 1;
        // Pascal row with alternating signs: Delta^m u(x) =
        // sum_k (-1)^{m-k} C(m, k) u(x + k h e).
        let mut coef = vec![0.0f64; m + 1];
        coef[0] = 1.0;
        for row in 1..=m {
            for k in (1..=row).rev() {
                coef[k] += coef[k - 1];
            }
        }
        for (k, c) in coef.iter_mut().enumerate() {
            if (m - k) % 2 == 1 {
                *c = -*c;
            }
        }

        for axis in structure.block_range(i) {
            for hi in 0..grid.h_count {
                let h = if grid.h_count == 1 {
                    grid.h_min
                } else {
                    grid.h_min
                        * (grid.h_max / grid.h_min).powf(hi as f64 / (grid.h_count - 1) as f64)
                };
                let scale = h.powf(theta);
                for_each_multi_index(d, grid.centers, |idx| {
                    let mut x = DVector::zeros(d);
                    for (j, &ij) in idx.iter().enumerate() {
                        x[j] = if grid.centers == 1 {
                            0.0
                        } else {
                            -grid.span
                                + 2.0 * grid.span * ij as f64 / (grid.centers - 1) as f64
                        };
                    }
                    let mut acc = 0.0;
                    let mut xk = x.clone();
                    for (k, &c) in coef.iter().enumerate() {
                        xk[axis] = x[axis] + k as f64 * h;
                        acc += c * phi.eval(&xk);
                    }
                    best = best.max(acc.abs() / scale);
                });
            }
        }
    }
    Ok(best)
}

/// Lattice for the L^2 energies.
#[derive(Debug, Clone, Copy)]
pub struct LatticeGrid {
    /// The L^2 sum runs over [-box_radius, box_radius]^d.
    pub box_radius: f64,
    pub spacing: f64,
    /// One-dimensional tabulation reach for the fractional kernels.
    pub line_extent: f64,
}

impl Default for LatticeGrid {
    fn default() -> Self {
        LatticeGrid {
            box_radius: 2.5,
            spacing: 0.25,
            line_extent: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SobolevReport {
    /// L^2 lattice norm of the block operator (-Delta_i)^{s_i} u, with
    /// s_i = (alpha/2) / (1 + alpha i). Fractional blocks use the plain
    /// principal-value kernel without the classical normalizing constant.
    pub per_block: Vec<f64>,
    /// Sum of the block contributions.
    pub total: f64,
}

/// Principal-value energy along one tabulated line. `v` holds samples with
/// spacing h, `j0` indexes the center, `kr` lattice steps of reach are
/// integrated before the tail is folded in closed form.
fn pv_line(v: &[f64], j0: usize, kr: usize, h: f64, s: f64) -> f64 {
    let ts = 2.0 * s;
    let center = 2.0 * v[j0];
    let d2 = |k: usize| v[j0 + k] + v[j0 - k] - center;
    // [0, h]: parabolic model.
    let mut acc = d2(1) * h.powf(-ts) / (2.0 - ts);
    // [k h, (k+1) h]: trapezoid in the second difference, exact panel
    // weight for the kernel.
    for k in 1..kr {
        let w = ((k as f64 * h).powf(-ts) - ((k + 1) as f64 * h).powf(-ts)) / ts;
        acc += 0.5 * (d2(k) + d2(k + 1)) * w;
    }
    // Tail: only the -2 u(x) term survives a decaying field.
    acc - center * (kr as f64 * h).powf(-ts) / ts
}

/// L^2 lattice norms of the blockwise operators matching the anisotropy:
/// the local Laplacian where the order is 1, the one-dimensional fractional
/// kernel where it is below 1. Fractional blocks of width above one are not
/// supported.
pub fn sobolev_seminorm_aniso(
    phi: &dyn SpatialFunction,
    structure: &KalmanStructure,
    grid: &LatticeGrid,
) -> Result<SobolevReport> {
    if phi.dim() != structure.dim() {
        return Err(Error::validation("field dimension does not match the structure"));
    }
    if !(grid.spacing > 0.0 && grid.box_radius > grid.spacing && grid.line_extent > grid.box_radius)
    {
        return Err(Error::validation("bad lattice layout"));
    }
    let d = structure.dim();
    let alpha = structure.alpha;
    let h = grid.spacing;
    let n_half = (grid.box_radius / h).floor() as usize;
    let side = 2 * n_half + 1;
    let coord = |j: usize| (j as f64 - n_half as f64) * h;

    let mut per_block = Vec::with_capacity(structure.dims.len());
    for i in 0..structure.dims.len() {
        let s = (alpha / 2.0) / (1.0 + alpha * i as f64);
        let range = structure.block_range(i);
        let mut sum_sq = 0.0f64;

        if (s - 1.0).abs() < 1e-14 {
            // Local Laplacian over the block axes.
            for_each_multi_index(d, side, |idx| {
                let mut x = DVector::zeros(d);
                for (j, &ij) in idx.iter().enumerate() {
                    x[j] = coord(ij);
                }
                let center = phi.eval(&x);
                let mut lap = 0.0;
                let mut xs = x.clone();
                for axis in range.clone() {
                    xs[axis] = x[axis] + h;
                    let up = phi.eval(&xs);
                    xs[axis] = x[axis] - h;
                    let dn = phi.eval(&xs);
                    xs[axis] = x[axis];
                    lap += (up + dn - 2.0 * center) / (h * h);
                }
                sum_sq += lap * lap;
            });
        } else {
            if range.len() != 1 {
                return Err(Error::unsupported(
                    "fractional block of width above one; only width-one blocks \
                     carry the one-dimensional kernel",
                ));
            }
            let axis = range.start;
            let k_ext = (grid.line_extent / h).ceil() as usize;
            let kr = k_ext - n_half;
            // One line per combination of the other coordinates.
            for_each_multi_index(d - 1, side, |other| {
                let mut x = DVector::zeros(d);
                let mut oi = 0;
                for j in 0..d {
                    if j != axis {
                        x[j] = coord(other[oi]);
                        oi += 1;
                    }
                }
                let mut line = Vec::with_capacity(2 * k_ext + 1);
                for k in 0..=2 * k_ext {
                    x[axis] = (k as f64 - k_ext as f64) * h;
                    line.push(phi.eval(&x));
                }
                for j in 0..side {
                    let j0 = k_ext - n_half + j;
                    let val = pv_line(&line, j0, kr, h, s);
                    sum_sq += val * val;
                }
            });
        }
        per_block.push((sum_sq * h.powi(d as i32)).sqrt());
    }

    Ok(SobolevReport {
        total: per_block.iter().sum(),
        per_block,
    })
}

/// One numerator / denominator pair in an invariance experiment.
#[derive(Debug, Clone)]
pub struct RatioCase {
    pub label: String,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

impl RatioCase {
    pub fn new(label: impl Into<String>, numerator: f64, denominator: f64) -> Self {
        RatioCase {
            label: label.into(),
            numerator,
            denominator,
            ratio: numerator / denominator,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RatioReport {
    pub cases: Vec<RatioCase>,
    /// max |ratio - median| / median.
    pub max_spread: f64,
}

impl RatioReport {
    pub fn from_cases(cases: Vec<RatioCase>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::validation("no ratio cases"));
        }
        if cases.iter().any(|c| !c.ratio.is_finite()) {
            return Err(Error::numerical("non-finite ratio in an invariance report"));
        }
        let mut sorted: Vec<f64> = cases.iter().map(|c| c.ratio).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let max_spread = cases
            .iter()
            .map(|c| (c.ratio - median).abs() / median.abs())
            .fold(0.0, f64::max);
        Ok(RatioReport { cases, max_spread })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{check_kalman, kinetic_spec};
    use approx::assert_relative_eq;

    #[test]
    fn fractional_integral_reproduces_the_cosine_symbol() {
        // int_0^inf [cos(k(x+r)) + cos(k(x-r)) - 2 cos(kx)] r^{-1-2b} dr
        //   = -2 m(2b) k^{2b} cos(kx),  m the one-minus-cosine moment.
        let fq = FracQuad::default();
        for &k in &[1.0f64, 2.0] {
            let phi = FnSpatial::new(1, move |x: &DVector<f64>| (k * x[0]).cos(), 1.0);
            let (val, err) =
                frac_laplacian_dir(&phi, &DVector::zeros(1), &DVector::from_vec(vec![1.0]), 0.25, &fq)
                    .unwrap();
            let want = -2.0 * quad::one_minus_cos_moment(0.5) * k.powf(0.5);
            assert_relative_eq!(val, want, max_relative = 3e-3);
            // The rigorous bound for an unbounded-support field is loose.
            assert!(err > 0.0);
        }
    }

    #[test]
    fn compact_support_makes_the_tail_exact() {
        // Quartic window (1 - x^2)_+^2: compact support, smooth enough.
        let phi = FnSpatial::new(
            1,
            |x: &DVector<f64>| {
                let q = 1.0 - x[0] * x[0];
                if q > 0.0 {
                    q * q
                } else {
                    0.0
                }
            },
            1.0,
        )
        .with_support(1.0);
        let x = DVector::from_vec(vec![0.3]);
        let dir = DVector::from_vec(vec![1.0]);
        let beta = 0.35;
        let (val, err) = frac_laplacian_dir(&phi, &x, &dir, beta, &FracQuad::default()).unwrap();
        assert_eq!(err, 0.0);

        // Midpoint Riemann reference on [0, reach], plus the same closed
        // tail.
        let f = |r: f64| {
            let e = |y: f64| {
                let q = 1.0 - y * y;
                if q > 0.0 {
                    q * q
                } else {
                    0.0
                }
            };
            e(0.3 + r) + e(0.3 - r) - 2.0 * e(0.3)
        };
        let reach = 1.4;
        let n = 140_000;
        let hstep = reach / n as f64;
        let mut reference = 0.0;
        for k in 0..n {
            let r = (k as f64 + 0.5) * hstep;
            reference += f(r) * r.powf(-1.0 - 2.0 * beta) * hstep;
        }
        reference -= 2.0 * phi.eval(&x) * reach.powf(-2.0 * beta) / (2.0 * beta);
        assert_relative_eq!(val, reference, max_relative = 1e-4);
    }

    #[test]
    fn holder_grid_bound_is_exact_on_linear_fields() {
        // u = x_1 on the kinetic structure, exponent 2.5: the diffusive
        // block probes with third differences (zero on linear fields), the
        // drift block with first differences of order theta = 2.5 / 3.
        let structure = check_kalman(&kinetic_spec(2.0, 1.0, None)).unwrap();
        let grid = NormGrid::default();
        let phi = FnSpatial::new(2, |x: &DVector<f64>| x[1], 10.0);
        let got = holder_seminorm_aniso(&phi, 2.5, &structure, &grid).unwrap();
        let theta = 2.5 / 3.0;
        let want = grid.h_max.powf(1.0 - theta);
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn holder_seminorm_is_homogeneous() {
        let structure = check_kalman(&kinetic_spec(2.0, 1.0, None)).unwrap();
        let grid = NormGrid::default();
        let phi1 = FnSpatial::new(2, |x: &DVector<f64>| (x[0] + 0.3 * x[1]).sin(), 1.0);
        let phi3 = FnSpatial::new(2, |x: &DVector<f64>| 3.0 * (x[0] + 0.3 * x[1]).sin(), 3.0);
        let a = holder_seminorm_aniso(&phi1, 1.3, &structure, &grid).unwrap();
        let b = holder_seminorm_aniso(&phi3, 1.3, &structure, &grid).unwrap();
        assert_relative_eq!(b, 3.0 * a, max_relative = 1e-13);
        assert!(a > 0.0);
    }

    #[test]
    fn line_kernel_matches_the_cosine_symbol() {
        let h = 0.05;
        let s = 1.0 / 3.0;
        let k_wave = 1.3;
        let k_ext = 1200usize;
        let v: Vec<f64> = (0..=2 * k_ext)
            .map(|j| (k_wave * (j as f64 - k_ext as f64) * h).cos())
            .collect();
        let got = pv_line(&v, k_ext, k_ext, h, s);
        let want = -2.0 * quad::one_minus_cos_moment(2.0 * s) * k_wave.powf(2.0 * s);
        assert_relative_eq!(got, want, max_relative = 1e-2);
    }

    #[test]
    fn sobolev_report_is_linear_in_the_field() {
        let structure = check_kalman(&kinetic_spec(2.0, 1.0, None)).unwrap();
        let grid = LatticeGrid {
            box_radius: 1.5,
            spacing: 0.25,
            line_extent: 10.0,
        };
        let phi = FnSpatial::new(
            2,
            |x: &DVector<f64>| (-0.5 * x.norm_squared()).exp(),
            1.0,
        );
        let phi2 = FnSpatial::new(
            2,
            |x: &DVector<f64>| 2.0 * (-0.5 * x.norm_squared()).exp(),
            2.0,
        );
        let r1 = sobolev_seminorm_aniso(&phi, &structure, &grid).unwrap();
        let r2 = sobolev_seminorm_aniso(&phi2, &structure, &grid).unwrap();
        assert_eq!(r1.per_block.len(), 2);
        assert!(r1.per_block.iter().all(|&v| v > 0.0));
        assert_relative_eq!(r2.total, 2.0 * r1.total, max_relative = 1e-12);
    }

    #[test]
    fn ratio_report_measures_spread_against_the_median() {
        let report = RatioReport::from_cases(vec![
            RatioCase::new("a", 1.0, 1.0),
            RatioCase::new("b", 1.1, 1.0),
            RatioCase::new("c", 0.95, 1.0),
        ])
        .unwrap();
        assert_relative_eq!(report.max_spread, 0.1, max_relative = 1e-12);
        assert!(RatioReport::from_cases(vec![]).is_err());
    }
}
