//! Stationary fields as long-horizon limits of the evolution estimates.
//!
//! Feed the evolution problem the data f_T(t, x) = (t/T) u(x) -
//! (t^2 / 2T) (L u)(x), where L is the full spatial generator. The exact
//! solution is v_T(t, x) = (t^2 / 2T) u(x): both sides are quadratic in t
//! and the t-derivative matches L v_T + f_T term by term. The seminorm
//! quotient
//!
//! ```text
//!   ratio(T) = [v_T(T, .)] / max_t [f_T(t, .)]
//! ```
//!
//! is then a Schauder-type constant probe, and as T grows it converges to
//! the stationary quotient [u] / [L u]: the time-dependent estimate
//! constants embed the elliptic ones.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::norms::{
    axis_derivative, frac_laplacian_dir, holder_seminorm_aniso, CachedSpatial, FnSpatial,
    FracQuad, NormGrid, SpatialFunction,
};
use crate::structure::{check_kalman, OperatorSpec};

#[derive(Debug, Clone)]
pub struct EllipticEmbedConfig {
    /// Horizons T, strictly increasing.
    pub horizons: Vec<f64>,
    /// Hoelder order measured on the sources; the solution is measured at
    /// exponent_f + alpha.
    pub exponent_f: f64,
    /// Time grid points per horizon for the source-side supremum.
    pub time_points: usize,
    pub grid: NormGrid,
    pub frac: FracQuad,
    /// Step for the finite differences inside the numeric generator.
    pub fd_step: f64,
}

impl Default for EllipticEmbedConfig {
    fn default() -> Self {
        EllipticEmbedConfig {
            horizons: vec![2.0, 4.0, 8.0, 16.0],
            exponent_f: 0.5,
            time_points: 8,
            grid: NormGrid::default(),
            frac: FracQuad::default(),
            fd_step: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EllipticEmbedReport {
    /// (T, ratio) per horizon.
    pub ratios: Vec<(f64, f64)>,
    /// The stationary quotient [u] / [L u].
    pub elliptic_ratio: f64,
    pub monotone_increasing: bool,
    /// |ratio at the largest T - elliptic_ratio| / elliptic_ratio.
    pub final_gap: f64,
}

/// Apply the full spatial generator to `u` numerically at one point.
fn generator_at(
    spec: &OperatorSpec,
    sigma: &nalgebra::DMatrix<f64>,
    u: &dyn SpatialFunction,
    x: &DVector<f64>,
    d0: usize,
    fd_step: f64,
    frac: &FracQuad,
) -> Result<f64> {
    let d = u.dim();
    let mut acc = 0.0;

    if spec.is_gaussian() {
        // Tr(B D^2 u) over the diffusive block.
        let h = fd_step;
        let u0 = u.eval(x);
        let mut xs = x.clone();
        for i in 0..d0 {
            for j in 0..d0 {
                let bij = spec.b[(i, j)];
                if bij == 0.0 {
                    continue;
                }
                let dij = if i == j {
                    xs.copy_from(x);
                    xs[i] = x[i] + h;
                    let up = u.eval(&xs);
                    xs[i] = x[i] - h;
                    let dn = u.eval(&xs);
                    (up + dn - 2.0 * u0) / (h * h)
                } else {
                    xs.copy_from(x);
                    xs[i] = x[i] + h;
                    xs[j] = x[j] + h;
                    let pp = u.eval(&xs);
                    xs[j] = x[j] - h;
                    let pm = u.eval(&xs);
                    xs[i] = x[i] - h;
                    let mm = u.eval(&xs);
                    xs[j] = x[j] + h;
                    let mp = u.eval(&xs);
                    (pp - pm - mp + mm) / (4.0 * h * h)
                };
                acc += bij * dij;
            }
        }
    } else {
        let measure = spec.measure.as_ref().ok_or_else(|| {
            Error::validation("stable operator needs a spectral measure for the generator")
        })?;
        let pairs = measure.symmetric_pairs().ok_or_else(|| {
            Error::unsupported("generator quadrature needs a symmetric spectral measure")
        })?;
        for &(atom, weight) in pairs {
            let dir = sigma * &measure.atoms()[atom];
            let (val, _) = frac_laplacian_dir(u, x, &dir, spec.alpha / 2.0, frac)?;
            acc += 0.5 * weight * val;
        }
    }

    // Drift <Ax, Du>.
    let ax = &spec.a * x;
    for j in 0..d {
        if ax[j] != 0.0 {
            acc += ax[j] * axis_derivative(u, x, j, fd_step);
        }
    }
    Ok(acc)
}

/// Compare the evolution seminorm quotient at growing horizons against the
/// stationary one. All quantities are deterministic grid functionals.
pub fn elliptic_embed_check(
    spec: &OperatorSpec,
    u: &dyn SpatialFunction,
    config: &EllipticEmbedConfig,
) -> Result<EllipticEmbedReport> {
    let structure = check_kalman(spec)?;
    if u.dim() != spec.dim() {
        return Err(Error::validation("field dimension does not match the operator"));
    }
    if config.horizons.len() < 2 || config.horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("need at least two strictly increasing horizons"));
    }
    if !(config.horizons[0] > 0.0) || !(config.exponent_f > 0.0) || config.time_points == 0 {
        return Err(Error::validation("bad embed configuration"));
    }

    let exponent_u = config.exponent_f + spec.alpha;
    let seminorm_u = holder_seminorm_aniso(u, exponent_u, &structure, &config.grid)?;

    let g_raw = {
        let spec_ref = spec;
        let sigma = structure.sigma.clone();
        let d0 = structure.d0;
        let fd = config.fd_step;
        let frac = config.frac;
        FnSpatial::new(
            u.dim(),
            move |x: &DVector<f64>| {
                generator_at(spec_ref, &sigma, u, x, d0, fd, &frac)
                    .expect("generator inputs validated before the sweep")
            },
            f64::INFINITY,
        )
    };
    let g = CachedSpatial::new(&g_raw);

    let seminorm_g = holder_seminorm_aniso(&g, config.exponent_f, &structure, &config.grid)?;
    if !(seminorm_g > 0.0) {
        return Err(Error::numerical(
            "generator seminorm vanished; the embed ratio is undefined",
        ));
    }
    let elliptic_ratio = seminorm_u / seminorm_g;

    let mut ratios = Vec::with_capacity(config.horizons.len());
    for &t_cap in &config.horizons {
        let mut source_max = 0.0f64;
        for k in 1..=config.time_points {
            let t = t_cap * k as f64 / config.time_points as f64;
            let cu = t / t_cap;
            let cg = -t * t / (2.0 * t_cap);
            let combined = FnSpatial::new(
                u.dim(),
                |x: &DVector<f64>| cu * u.eval(x) + cg * g.eval(x),
                f64::INFINITY,
            );
            let sn = holder_seminorm_aniso(&combined, config.exponent_f, &structure, &config.grid)?;
            source_max = source_max.max(sn);
        }
        if !(source_max > 0.0) {
            return Err(Error::numerical("source seminorm vanished in the embed sweep"));
        }
        ratios.push((t_cap, (t_cap / 2.0) * seminorm_u / source_max));
    }

    let monotone = ratios
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-12));
    let last = ratios.last().unwrap().1;
    Ok(EllipticEmbedReport {
        ratios,
        elliptic_ratio,
        monotone_increasing: monotone,
        final_gap: (last - elliptic_ratio).abs() / elliptic_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::kinetic_spec;
    use approx::assert_relative_eq;

    fn window_field() -> FnSpatial<impl Fn(&DVector<f64>) -> f64 + Sync> {
        // Smooth compact bump on |x| < 2, scaled kinetically inside.
        FnSpatial::new(
            2,
            |x: &DVector<f64>| {
                let q = 1.0 - (x[0] * x[0] + x[1] * x[1]) / 4.0;
                if q > 0.0 {
                    q * q * q * (0.9 * x[0] + 0.4 * x[1]).cos()
                } else {
                    0.0
                }
            },
            1.0,
        )
        .with_support(2.0)
    }

    #[test]
    fn generator_reduces_to_heat_plus_drift_on_quadratics() {
        // u = x0^2 + x0 x1: Tr(B D^2 u) = 2 B00, <Ax, Du> = x0 (2 x0 + x1)
        // component along the kinetic drift (A x = (0, x0)).
        let spec = kinetic_spec(2.0, 1.0, None);
        let structure = check_kalman(&spec).unwrap();
        let u = FnSpatial::new(2, |x: &DVector<f64>| x[0] * x[0] + x[0] * x[1], 100.0);
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let got = generator_at(
            &spec,
            &structure.sigma,
            &u,
            &x,
            structure.d0,
            5e-4,
            &FracQuad::default(),
        )
        .unwrap();
        // d/dx1 u = x0, drift contributes x0 * x0.
        let want = 2.0 * 1.0 + 0.7 * 0.7;
        assert_relative_eq!(got, want, max_relative = 1e-6);
    }

    #[test]
    fn embed_ratio_rises_toward_the_stationary_quotient() {
        let spec = kinetic_spec(2.0, 1.0, None);
        let u = window_field();
        let config = EllipticEmbedConfig {
            horizons: vec![4.0, 16.0, 64.0],
            time_points: 6,
            grid: NormGrid {
                span: 1.2,
                centers: 5,
                h_min: 0.1,
                h_max: 0.6,
                h_count: 6,
            },
            ..EllipticEmbedConfig::default()
        };
        let report = elliptic_embed_check(&spec, &u, &config).unwrap();
        assert!(report.monotone_increasing, "ratios {:?}", report.ratios);
        assert!(
            report.final_gap < 0.2,
            "gap {} with ratios {:?} vs {}",
            report.final_gap,
            report.ratios,
            report.elliptic_ratio
        );
        // Earlier horizons must sit further from the stationary quotient.
        let first_gap =
            (report.ratios[0].1 - report.elliptic_ratio).abs() / report.elliptic_ratio;
        assert!(first_gap > report.final_gap);
    }
}
