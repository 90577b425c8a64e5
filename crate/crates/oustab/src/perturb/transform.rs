//! Removal of bounded lower-order terms by a change of unknown.
//!
//! For the operator augmented with <a(t), Du> + c(t) u, set
//! ctil(t) = int_0^t c and b(t) = int_0^t e^{(t-r)A} a(r) dr, so that b
//! solves b' = A b + a(t), b(0) = 0. Then
//!
//! ```text
//!   u(t, x) = e^{ctil(t)} w(t, x + b(t)),
//! ```
//!
//! where w solves the problem without lower-order terms and with source
//! ftil(s, z) = e^{-ctil(s)} f(s, z - b(s)). Both sup bounds and estimate
//! constants transport through this map by the explicit factors, which is
//! what the invariance experiments rely on.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mc::{self, Estimate};
use crate::quad;
use crate::semigroup::OuKernelParams;
use crate::source::Source;
use crate::structure::{check_kalman, OperatorSpec};

use super::jumps::build_jump_system;
use super::PerturbationSchedule;

/// Piecewise-constant lower-order data: on [cuts[i], cuts[i+1]) the drift
/// vector is drift[i] and the potential is potential[i].
#[derive(Debug, Clone)]
pub struct TimeTransform {
    cuts: Vec<f64>,
    drift: Vec<DVector<f64>>,
    potential: Vec<f64>,
    /// ctil at the cuts; linear in between.
    cum_c: Vec<f64>,
}

impl TimeTransform {
    pub fn new(cuts: Vec<f64>, drift: Vec<DVector<f64>>, potential: Vec<f64>) -> Result<Self> {
        if cuts.len() < 2 || cuts[0] != 0.0 {
            return Err(Error::validation("transform cuts must start at 0"));
        }
        if cuts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("transform cuts must increase strictly"));
        }
        let cells = cuts.len() - 1;
        if drift.len() != cells || potential.len() != cells {
            return Err(Error::validation(format!(
                "{cells} cells need {cells} drift vectors and potentials, got {} and {}",
                drift.len(),
                potential.len()
            )));
        }
        let d = drift[0].len();
        if drift.iter().any(|a| a.len() != d) {
            return Err(Error::validation("drift vectors must share one dimension"));
        }
        if potential.iter().any(|c| !c.is_finite())
            || drift.iter().any(|a| a.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::validation("lower-order data must be finite"));
        }
        let mut cum_c = Vec::with_capacity(cuts.len());
        cum_c.push(0.0);
        for i in 0..cells {
            cum_c.push(cum_c[i] + potential[i] * (cuts[i + 1] - cuts[i]));
        }
        Ok(TimeTransform {
            cuts,
            drift,
            potential,
            cum_c,
        })
    }

    pub fn constant(a: DVector<f64>, c: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![a], vec![c])
    }

    pub fn dim(&self) -> usize {
        self.drift[0].len()
    }

    pub fn horizon(&self) -> f64 {
        *self.cuts.last().unwrap()
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn is_trivial(&self) -> bool {
        self.potential.iter().all(|&c| c == 0.0)
            && self.drift.iter().all(|a| a.iter().all(|&v| v == 0.0))
    }

    fn cell_of(&self, t: f64) -> usize {
        self.cuts[1..self.cuts.len() - 1].partition_point(|&c| c <= t)
    }

    /// ctil(t) = int_0^t c.
    pub fn c_cumulative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon());
        let i = self.cell_of(t);
        self.cum_c[i] + self.potential[i] * (t - self.cuts[i])
    }

    /// min over [0, horizon] of ctil; attained at a cut since ctil is
    /// piecewise linear.
    pub fn min_c_cumulative(&self) -> f64 {
        self.cum_c.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// b(t) = int_0^t e^{(t-r)A} a(r) dr, stepped cell by cell through
    /// b <- e^{tau A} b + (int_0^tau e^{vA} dv) a_i.
    pub fn drift_shift(&self, a_mat: &DMatrix<f64>, t: f64) -> Result<DVector<f64>> {
        let d = self.dim();
        if a_mat.nrows() != d || a_mat.ncols() != d {
            return Err(Error::validation(
                "drift matrix dimension does not match the transform",
            ));
        }
        let t = t.clamp(0.0, self.horizon());
        let mut b = DVector::zeros(d);
        for i in 0..self.drift.len() {
            let lo = self.cuts[i];
            if lo >= t {
                break;
            }
            let hi = self.cuts[i + 1].min(t);
            let tau = hi - lo;
            let green = quad::integrate_matrix(|v| crate::linalg::expm(&(a_mat * v)), 0.0, tau, 1e-13);
            b = crate::linalg::expm(&(a_mat * tau)) * b + green * &self.drift[i];
        }
        Ok(b)
    }
}

/// Source seen by the clean problem: damped by e^{-ctil(s)} and shifted by
/// -b(s). The engine only ever evaluates at its quadrature nodes, so the
/// per-time factors are memoized by the bit pattern of s.
struct WrappedSource<'a> {
    inner: &'a dyn Source,
    transform: &'a TimeTransform,
    a_mat: &'a DMatrix<f64>,
    sup: f64,
    cuts: Vec<f64>,
    cache: Mutex<HashMap<u64, (f64, DVector<f64>)>>,
}

impl<'a> WrappedSource<'a> {
    fn factors(&self, s: f64) -> Result<(f64, DVector<f64>)> {
        let key = s.to_bits();
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let damp = (-self.transform.c_cumulative(s)).exp();
        let shift = self.transform.drift_shift(self.a_mat, s)?;
        let out = (damp, shift);
        self.cache.lock().unwrap().insert(key, out.clone());
        Ok(out)
    }
}

impl<'a> Source for WrappedSource<'a> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, s: f64, x: &DVector<f64>) -> f64 {
        let (damp, shift) = self
            .factors(s)
            .expect("transform factors validated at construction");
        damp * self.inner.eval(s, &(x - &shift))
    }

    fn sup_bound(&self) -> f64 {
        self.sup
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.cuts.clone()
    }

    fn support_radius(&self) -> Option<f64> {
        // The shift moves the support around in time; do not claim one.
        None
    }
}

/// Solve the problem with lower-order terms <a(t), Du> + c(t) u by
/// transforming them away, running the clean solver, and mapping back.
/// `schedule` optionally adds the randomized Tr(S(t) D^2) perturbation with
/// jump size `epsilon`.
pub fn transform_t_solve(
    spec: &OperatorSpec,
    transform: &TimeTransform,
    schedule: Option<(&PerturbationSchedule, f64)>,
    source: &dyn Source,
    params: &OuKernelParams,
    t: f64,
    x: &DVector<f64>,
) -> Result<Estimate> {
    let structure = check_kalman(spec)?;
    if transform.dim() != spec.dim() {
        return Err(Error::validation(
            "transform dimension does not match the operator",
        ));
    }
    if (transform.horizon() - spec.horizon).abs() > 1e-9 * (1.0 + spec.horizon) {
        return Err(Error::validation(format!(
            "transform horizon {} does not cover the operator horizon {}",
            transform.horizon(),
            spec.horizon
        )));
    }
    let built;
    let jumps = match schedule {
        Some((sched, eps)) => {
            built = build_jump_system(&structure, &spec.a, sched, eps)?;
            Some(&built)
        }
        None => None,
    };

    if transform.is_trivial() {
        let engine = mc::Engine {
            spec,
            structure: &structure,
            source,
            jumps,
            params,
        };
        return mc::solve_at(&engine, t, x);
    }

    let mut cuts = source.breakpoints();
    cuts.extend_from_slice(transform.cuts());
    let wrapped = WrappedSource {
        inner: source,
        transform,
        a_mat: &spec.a,
        sup: (-transform.min_c_cumulative()).exp() * source.sup_bound(),
        cuts,
        cache: Mutex::new(HashMap::new()),
    };
    let engine = mc::Engine {
        spec,
        structure: &structure,
        source: &wrapped,
        jumps,
        params,
    };
    let clean = mc::solve_at(&engine, t, &(x + transform.drift_shift(&spec.a, t)?))?;
    let scale = transform.c_cumulative(t).exp();
    Ok(Estimate {
        value: scale * clean.value,
        std_error: scale * clean.std_error,
        samples: clean.samples,
        sup_bound: scale * clean.sup_bound,
    })
}
