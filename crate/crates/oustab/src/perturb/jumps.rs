//! Compound-Poisson randomization of Tr(S(t) D^2).
//!
//! Work in the drift-free frame (see the solver engine): there the
//! perturbation at time r is Tr(S~(r) D^2) with S~(r) = e^{rA} S(r) e^{rA*}
//! embedded through the diffusive block. On each cell where S is constant
//! and e^{rA} nearly so, pick the columns l_1 .. l_{d0} of
//! eps * e^{t_mid A} [sqrt(S); 0] and attach to every column two independent
//! Poisson clocks of rate 1/eps^2, one jumping by +l_i, one by -l_i. The
//! averaged generator is then exactly the symmetric second difference
//!
//! ```text
//!   J phi(x) = eps^{-2} sum_i [phi(x + l_i) + phi(x - l_i) - 2 phi(x)],
//! ```
//!
//! which reproduces Tr(S~ D^2) on quadratics for every eps and converges to
//! it like eps^2 on smooth functions. Each jump pair is symmetric, so the
//! randomized solution keeps the maximum principle at every eps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::linalg;
use crate::structure::KalmanStructure;

use super::PerturbationSchedule;

/// Relative variation of e^{rA} tolerated within one frozen cell. Midpoint
/// freezing makes the covariance error second order in the cell length, so
/// this keeps the systematic error well below the eps^2 effects the sweeps
/// measure.
const CELL_REL_TOL: f64 = 2e-3;

/// Hard cap on refinement per schedule cell.
const MAX_REFINE: usize = 4096;

#[derive(Debug, Clone)]
pub struct JumpSystem {
    /// Schedule cuts: real discontinuities of S, hence quadrature panel cuts.
    schedule_cuts: Vec<f64>,
    /// Refined cell boundaries r_0 = 0 < ... < r_m = horizon.
    cuts: Vec<f64>,
    /// Per refined cell: d x d0 matrix of jump columns, eps already folded in.
    ell: Vec<DMatrix<f64>>,
    /// Intensity of each (column, sign) clock: 1/eps^2.
    rate: f64,
    epsilon: f64,
    d0: usize,
    dim: usize,
}

/// One sampled jump path: times ascending, each with its jump vector.
#[derive(Debug, Clone)]
pub struct PoissonPath {
    pub jumps: Vec<(f64, DVector<f64>)>,
}

impl PoissonPath {
    pub fn total(&self) -> DVector<f64> {
        let d = self.jumps.first().map_or(0, |(_, v)| v.len());
        let mut acc = DVector::zeros(d);
        for (_, v) in &self.jumps {
            acc += v;
        }
        acc
    }

    /// Sum of the jumps strictly after time s.
    pub fn shift_after(&self, s: f64, dim: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(dim);
        for (tau, v) in &self.jumps {
            if *tau > s {
                acc += v;
            }
        }
        acc
    }
}

/// Freeze the schedule into jump columns. Cells are the schedule cells,
/// subdivided until e^{rA} varies by less than [`CELL_REL_TOL`] on each.
pub fn build_jump_system(
    structure: &KalmanStructure,
    a: &DMatrix<f64>,
    schedule: &PerturbationSchedule,
    epsilon: f64,
) -> Result<JumpSystem> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::validation(format!(
            "jump size epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let dim = structure.dim();
    let d0 = structure.d0;
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::validation("drift matrix does not match the structure"));
    }
    if schedule.dim() != d0 {
        return Err(Error::validation(format!(
            "schedule acts on dimension {}, diffusive block has width {d0}",
            schedule.dim()
        )));
    }

    let mut cuts = vec![0.0];
    let mut ell = Vec::new();
    for (cell, s_cell) in schedule.cuts().windows(2).zip(schedule.values()) {
        let (lo, hi) = (cell[0], cell[1]);
        let parts = refine_cell(a, lo, hi)?;
        let sqrt_s = linalg::psd_sqrt_sym(s_cell, 1e-10)?;
        let mut padded = DMatrix::zeros(dim, d0);
        padded.view_mut((0, 0), (d0, d0)).copy_from(&sqrt_s);
        for k in 0..parts {
            let a_sub = lo + (hi - lo) * k as f64 / parts as f64;
            let b_sub = lo + (hi - lo) * (k + 1) as f64 / parts as f64;
            let mid = 0.5 * (a_sub + b_sub);
            ell.push(linalg::expm(&(a * mid)) * &padded * epsilon);
            cuts.push(b_sub);
        }
    }

    Ok(JumpSystem {
        schedule_cuts: schedule.cuts().to_vec(),
        cuts,
        ell,
        rate: epsilon.powi(-2),
        epsilon,
        d0,
        dim,
    })
}

/// Smallest part count with e^{rA} variation below tolerance on each part.
fn refine_cell(a: &DMatrix<f64>, lo: f64, hi: f64) -> Result<usize> {
    let mut parts = 1usize;
    loop {
        let mut worst = 0.0f64;
        for k in 0..parts {
            let a_sub = lo + (hi - lo) * k as f64 / parts as f64;
            let b_sub = lo + (hi - lo) * (k + 1) as f64 / parts as f64;
            let e_lo = linalg::expm(&(a * a_sub));
            let e_hi = linalg::expm(&(a * b_sub));
            let var = linalg::spectral_norm(&(&e_hi - &e_lo)) / (1.0 + linalg::spectral_norm(&e_lo));
            worst = worst.max(var);
        }
        if worst <= CELL_REL_TOL {
            return Ok(parts);
        }
        if parts >= MAX_REFINE {
            return Err(Error::numerical(
                "cell refinement for the jump system did not converge; \
                 is |A| * horizon unreasonably large?",
            ));
        }
        // Variation is roughly linear in the part length.
        let grow = (worst / CELL_REL_TOL).ceil() as usize;
        parts = (parts * grow.max(2)).min(MAX_REFINE);
    }
}

impl JumpSystem {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn horizon(&self) -> f64 {
        *self.cuts.last().unwrap()
    }

    /// Where the quadrature must cut: the genuine discontinuities of S.
    /// Refinement boundaries are not included; across them the integrand
    /// kinks only at O(CELL_REL_TOL).
    pub fn cell_boundaries(&self) -> Vec<f64> {
        self.schedule_cuts.clone()
    }

    /// Refined cell index covering time t.
    pub fn cell_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) || t > self.horizon() * (1.0 + 1e-9) {
            return Err(Error::validation(format!(
                "time {t} outside the schedule window [0, {}]",
                self.horizon()
            )));
        }
        let idx = self.cuts[1..self.cuts.len() - 1].partition_point(|&c| c <= t);
        Ok(idx)
    }

    /// (lo, hi, midpoint) of the refined cell covering t. The midpoint is
    /// where e^{rA} was frozen, so exact identities hold there.
    pub fn cell_window(&self, t: f64) -> Result<(f64, f64, f64)> {
        let idx = self.cell_index(t)?;
        let (lo, hi) = (self.cuts[idx], self.cuts[idx + 1]);
        Ok((lo, hi, 0.5 * (lo + hi)))
    }

    /// Jump columns (eps folded in) of the refined cell covering t.
    pub fn jump_columns(&self, t: f64) -> Result<&DMatrix<f64>> {
        Ok(&self.ell[self.cell_index(t)?])
    }

    /// Suffix jump shifts for the solver: entry q is the sum of all jumps in
    /// (nodes[q], t_end]. `nodes` must be ascending. Jumps are drawn cell by
    /// cell and bucketed by binary search, so no global sort is needed.
    pub(crate) fn node_shifts<R: Rng + ?Sized>(
        &self,
        nodes: &[f64],
        t_end: f64,
        rng: &mut R,
    ) -> Vec<DVector<f64>> {
        let q = nodes.len();
        let mut buckets = vec![DVector::<f64>::zeros(self.dim); q + 1];
        for (cell, ell) in self.cuts.windows(2).zip(&self.ell) {
            let lo = cell[0];
            let hi = cell[1].min(t_end);
            if hi <= lo {
                continue;
            }
            let len = hi - lo;
            let pois = rand_distr::Poisson::new(self.rate * len).expect("positive rate");
            for i in 0..self.d0 {
                for sign in [1.0f64, -1.0] {
                    let count = pois.sample(rng) as usize;
                    for _ in 0..count {
                        let tau = lo + len * rng.random::<f64>();
                        let k = nodes.partition_point(|&s| s < tau);
                        buckets[k].axpy(sign, &ell.column(i), 1.0);
                    }
                }
            }
        }
        let mut shifts = vec![DVector::<f64>::zeros(self.dim); q];
        let mut acc = DVector::<f64>::zeros(self.dim);
        for qi in (0..q).rev() {
            acc += &buckets[qi + 1];
            shifts[qi].copy_from(&acc);
        }
        shifts
    }
}

/// The averaged jump generator at (t, x):
/// eps^{-2} sum_i [phi(x + l_i) + phi(x - l_i) - 2 phi(x)].
///
/// Exact equal to Tr(S~(t_mid) D^2 phi) on quadratic phi, where t_mid is the
/// frozen midpoint of the cell covering t; O(eps^2) close on C^4 functions.
pub fn apply_j<F: Fn(&DVector<f64>) -> f64>(
    system: &JumpSystem,
    phi: F,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    let ell = system.jump_columns(t)?;
    if x.len() != system.dim {
        return Err(Error::validation("point dimension does not match the system"));
    }
    let center = 2.0 * phi(x);
    let mut xp = x.clone();
    let mut xm = x.clone();
    let mut acc = 0.0;
    for i in 0..system.d0 {
        for r in 0..system.dim {
            xp[r] = x[r] + ell[(r, i)];
            xm[r] = x[r] - ell[(r, i)];
        }
        acc += phi(&xp) + phi(&xm) - center;
    }
    Ok(acc * system.rate)
}

/// One compound-Poisson path on [t0, t1], jumps sorted by time.
pub fn sample_compound_shift<R: Rng + ?Sized>(
    system: &JumpSystem,
    t0: f64,
    t1: f64,
    rng: &mut R,
) -> Result<PoissonPath> {
    if !(0.0 <= t0 && t0 <= t1) || t1 > system.horizon() * (1.0 + 1e-9) {
        return Err(Error::validation(format!(
            "window [{t0}, {t1}] outside the schedule range [0, {}]",
            system.horizon()
        )));
    }
    let mut jumps: Vec<(f64, DVector<f64>)> = Vec::new();
    for (cell, ell) in system.cuts.windows(2).zip(&system.ell) {
        let lo = cell[0].max(t0);
        let hi = cell[1].min(t1);
        if hi <= lo {
            continue;
        }
        let len = hi - lo;
        let pois = rand_distr::Poisson::new(system.rate * len).expect("positive rate");
        for i in 0..system.d0 {
            for sign in [1.0f64, -1.0] {
                let count = pois.sample(rng) as usize;
                for _ in 0..count {
                    let tau = lo + len * rng.random::<f64>();
                    jumps.push((tau, ell.column(i) * sign));
                }
            }
        }
    }
    jumps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(PoissonPath { jumps })
}
