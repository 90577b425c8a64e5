//! Forcing terms f(t, x).
//!
//! The solver only needs pointwise evaluation, a certified bound on sup |f|,
//! the time breakpoints where the description changes, and (optionally) a
//! spatial support radius. Everything else about a source stays private to
//! the family that defines it.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub trait Source: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &DVector<f64>) -> f64;

    /// Upper bound for sup_{t,x} |f|. Must hold; need not be tight, though
    /// the bundled families make it exact where stated.
    fn sup_bound(&self) -> f64;

    /// Times where the source changes description. Quadrature panels never
    /// straddle these.
    fn breakpoints(&self) -> Vec<f64>;

    /// Radius R with f(t, x) = 0 for |x| > R, when one exists.
    fn support_radius(&self) -> Option<f64>;
}

/// C_c^infinity cutoff profile: w(r) = exp(1 - 1/(1 - r^2)) on |r| < 1,
/// zero outside. w(0) = 1, 0 <= w <= 1.
pub fn bump_window(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// One spatial summand of a source piece.
#[derive(Debug, Clone)]
pub enum SpaceTerm {
    /// amplitude * exp(-|x - center|^2 / (2 width^2)). sup = |amplitude|.
    GaussianBump {
        amplitude: f64,
        center: DVector<f64>,
        width: f64,
    },
    /// amplitude * cos(<wave, x - center> + phase) * w(|x - center| / radius).
    /// Compactly supported, smooth; sup <= |amplitude|, attained when
    /// phase = 0.
    CosWindow {
        amplitude: f64,
        wave: DVector<f64>,
        phase: f64,
        center: DVector<f64>,
        radius: f64,
    },
    /// (constant + <linear, y> + sum_i quad_i y_i^2) * w(|y| / radius) with
    /// y = x - center. sup bound is the crude triangle estimate.
    QuadraticWindow {
        constant: f64,
        linear: DVector<f64>,
        quad: DVector<f64>,
        center: DVector<f64>,
        radius: f64,
    },
}

impl SpaceTerm {
    pub fn dim(&self) -> usize {
        match self {
            SpaceTerm::GaussianBump { center, .. } => center.len(),
            SpaceTerm::CosWindow { center, .. } => center.len(),
            SpaceTerm::QuadraticWindow { center, .. } => center.len(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            SpaceTerm::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let d2 = (x - center).norm_squared();
                amplitude * (-0.5 * d2 / (width * width)).exp()
            }
            SpaceTerm::CosWindow {
                amplitude,
                wave,
                phase,
                center,
                radius,
            } => {
                let y = x - center;
                amplitude * (wave.dot(&y) + phase).cos() * bump_window(y.norm() / radius)
            }
            SpaceTerm::QuadraticWindow {
                constant,
                linear,
                quad,
                center,
                radius,
            } => {
                let y = x - center;
                let mut p = constant + linear.dot(&y);
                for i in 0..y.len() {
                    p += quad[i] * y[i] * y[i];
                }
                p * bump_window(y.norm() / radius)
            }
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            SpaceTerm::GaussianBump { amplitude, .. } => amplitude.abs(),
            SpaceTerm::CosWindow { amplitude, .. } => amplitude.abs(),
            SpaceTerm::QuadraticWindow {
                constant,
                linear,
                quad,
                radius,
                ..
            } => constant.abs() + linear.norm() * radius + quad.amax() * radius * radius,
        }
    }

    /// Ball around the origin containing the support, if compact.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            SpaceTerm::GaussianBump { .. } => None,
            SpaceTerm::CosWindow { center, radius, .. } => Some(center.norm() + radius),
            SpaceTerm::QuadraticWindow { center, radius, .. } => Some(center.norm() + radius),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::validation(format!(
                "source term has dimension {}, expected {dim}",
                self.dim()
            )));
        }
        let ok = match self {
            SpaceTerm::GaussianBump { width, .. } => *width > 0.0,
            SpaceTerm::CosWindow { radius, wave, center, .. } => {
                *radius > 0.0 && wave.len() == center.len()
            }
            SpaceTerm::QuadraticWindow {
                radius,
                linear,
                quad,
                center,
                ..
            } => *radius > 0.0 && linear.len() == center.len() && quad.len() == center.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation("source term has a nonpositive scale or mixed dimensions"))
        }
    }
}

/// A source piece: active on [t_start, t_end), value
/// (sum_k tpoly[k] t^k) * (sum of its terms).
#[derive(Debug, Clone)]
pub struct SourcePiece {
    pub t_start: f64,
    pub t_end: f64,
    /// Polynomial coefficients in absolute time, constant first.
    pub tpoly: Vec<f64>,
    pub terms: Vec<SpaceTerm>,
}

impl SourcePiece {
    pub fn tpoly_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.tpoly.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    /// Upper bound of |tpoly| on the active interval.
    fn tpoly_bound(&self) -> f64 {
        let tm = self.t_start.abs().max(self.t_end.abs());
        let mut acc = 0.0;
        let mut p = 1.0;
        for &c in &self.tpoly {
            acc += c.abs() * p;
            p *= tm;
        }
        acc
    }
}

/// Sum of pieces; overlapping activity intervals superpose.
#[derive(Debug, Clone)]
pub struct SourceFunction {
    dim: usize,
    pieces: Vec<SourcePiece>,
}

impl SourceFunction {
    pub fn new(dim: usize, pieces: Vec<SourcePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::validation("source needs at least one piece"));
        }
        for piece in &pieces {
            if !(piece.t_end > piece.t_start) {
                return Err(Error::validation(format!(
                    "source piece interval [{}, {}) is empty",
                    piece.t_start, piece.t_end
                )));
            }
            if piece.tpoly.is_empty() || piece.terms.is_empty() {
                return Err(Error::validation(
                    "source piece needs a time polynomial and at least one term",
                ));
            }
            for term in &piece.terms {
                term.validate(dim)?;
            }
        }
        Ok(SourceFunction { dim, pieces })
    }

    /// A single term active on [0, horizon) with constant unit time factor.
    pub fn stationary(horizon: f64, term: SpaceTerm) -> Result<Self> {
        let dim = term.dim();
        SourceFunction::new(
            dim,
            vec![SourcePiece {
                t_start: 0.0,
                t_end: horizon,
                tpoly: vec![1.0],
                terms: vec![term],
            }],
        )
    }

    pub fn pieces(&self) -> &[SourcePiece] {
        &self.pieces
    }
}

impl Source for SourceFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for piece in &self.pieces {
            if t >= piece.t_start && t < piece.t_end {
                let mut s = 0.0;
                for term in &piece.terms {
                    s += term.eval(x);
                }
                acc += piece.tpoly_at(t) * s;
            }
        }
        acc
    }

    fn sup_bound(&self) -> f64 {
        // Max over elementary time cells of the summed bounds of the pieces
        // active there.
        let mut cuts = self.breakpoints();
        cuts.dedup();
        let mut best = 0.0f64;
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let mut cell = 0.0;
            for piece in &self.pieces {
                if mid >= piece.t_start && mid < piece.t_end {
                    let terms: f64 = piece.terms.iter().map(|t| t.sup_bound()).sum();
                    cell += piece.tpoly_bound() * terms;
                }
            }
            best = best.max(cell);
        }
        best
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut cuts: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.t_start, p.t_end])
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        cuts
    }

    fn support_radius(&self) -> Option<f64> {
        let mut r = 0.0f64;
        for piece in &self.pieces {
            for term in &piece.terms {
                r = r.max(term.support_radius()?);
            }
        }
        Some(r)
    }
}

/// Closure-backed source for tests and one-off experiments.
pub struct FnSource<F: Fn(f64, &DVector<f64>) -> f64 + Sync> {
    pub dim: usize,
    pub f: F,
    pub sup: f64,
    pub cuts: Vec<f64>,
    pub support: Option<f64>,
}

impl<F: Fn(f64, &DVector<f64>) -> f64 + Sync> FnSource<F> {
    pub fn new(dim: usize, f: F, sup: f64) -> Self {
        FnSource {
            dim,
            f,
            sup,
            cuts: Vec::new(),
            support: None,
        }
    }
}

impl<F: Fn(f64, &DVector<f64>) -> f64 + Sync> Source for FnSource<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.f)(t, x)
    }
    fn sup_bound(&self) -> f64 {
        self.sup
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.cuts.clone()
    }
    fn support_radius(&self) -> Option<f64> {
        self.support
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn window_profile_endpoints() {
        assert_relative_eq!(bump_window(0.0), 1.0);
        assert_eq!(bump_window(1.0), 0.0);
        assert_eq!(bump_window(-1.5), 0.0);
        assert!(bump_window(0.999) > 0.0);
        assert!(bump_window(0.5) < 1.0);
    }

    #[test]
    fn gaussian_bump_values_and_bound() {
        let term = SpaceTerm::GaussianBump {
            amplitude: 2.0,
            center: DVector::from_vec(vec![1.0, 0.0]),
            width: 0.5,
        };
        let f = SourceFunction::stationary(1.0, term).unwrap();
        let at = |x: Vec<f64>| f.eval(0.3, &DVector::from_vec(x));
        assert_relative_eq!(at(vec![1.0, 0.0]), 2.0);
        assert_relative_eq!(at(vec![1.5, 0.0]), 2.0 * (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(f.sup_bound(), 2.0);
        assert!(f.support_radius().is_none());
    }

    #[test]
    fn pieces_superpose_and_cut() {
        let bump = |amp: f64| SpaceTerm::GaussianBump {
            amplitude: amp,
            center: DVector::from_vec(vec![0.0]),
            width: 1.0,
        };
        let f = SourceFunction::new(
            1,
            vec![
                SourcePiece {
                    t_start: 0.0,
                    t_end: 2.0,
                    tpoly: vec![1.0],
                    terms: vec![bump(1.0)],
                },
                SourcePiece {
                    t_start: 1.0,
                    t_end: 2.0,
                    tpoly: vec![0.0, 3.0], // 3 t
                    terms: vec![bump(1.0)],
                },
            ],
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.0]);
        assert_relative_eq!(f.eval(0.5, &x0), 1.0);
        assert_relative_eq!(f.eval(1.5, &x0), 1.0 + 4.5);
        assert_relative_eq!(f.eval(2.5, &x0), 0.0);
        assert_eq!(f.breakpoints(), vec![0.0, 1.0, 2.0]);
        // Bound: on [1,2) both pieces active, |1| + 3*2*1 = 7.
        assert_relative_eq!(f.sup_bound(), 7.0);
    }

    #[test]
    fn cos_window_sup_attained_at_center() {
        let term = SpaceTerm::CosWindow {
            amplitude: 1.5,
            wave: DVector::from_vec(vec![3.0, 0.0]),
            phase: 0.0,
            center: DVector::from_vec(vec![0.0, 2.0]),
            radius: 1.0,
        };
        let f = SourceFunction::stationary(1.0, term).unwrap();
        let center = DVector::from_vec(vec![0.0, 2.0]);
        assert_relative_eq!(f.eval(0.0, &center), 1.5);
        assert_relative_eq!(f.sup_bound(), 1.5);
        assert_relative_eq!(f.support_radius().unwrap(), 3.0);
        // Vanishes outside the window.
        let far = DVector::from_vec(vec![1.1, 2.0]);
        assert_eq!(f.eval(0.0, &far), 0.0);
    }

    #[test]
    fn quadratic_window_bound_is_valid() {
        let term = SpaceTerm::QuadraticWindow {
            constant: 1.0,
            linear: DVector::from_vec(vec![2.0]),
            quad: DVector::from_vec(vec![-1.0]),
            center: DVector::from_vec(vec![0.0]),
            radius: 2.0,
        };
        let f = SourceFunction::stationary(1.0, term.clone()).unwrap();
        let bound = f.sup_bound();
        for i in -40..=40 {
            let x = DVector::from_vec(vec![i as f64 * 0.05]);
            assert!(f.eval(0.0, &x).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn mixed_dimension_terms_rejected() {
        let term = SpaceTerm::GaussianBump {
            amplitude: 1.0,
            center: DVector::from_vec(vec![0.0, 0.0]),
            width: 1.0,
        };
        assert!(SourceFunction::new(1, vec![SourcePiece {
            t_start: 0.0,
            t_end: 1.0,
            tpoly: vec![1.0],
            terms: vec![term],
        }])
        .is_err());
    }
}
