//! Independent reference values for the Gaussian (alpha = 2) problems.
//!
//! The Duhamel functional in the drift-free frame reads
//!
//! ```text
//!   u(t, x) = e^{ctil(t)} int_0^t e^{-ctil(s)}
//!             E[ f(s, e^{-sA}(y + Theta(s, t)) - b(s)) ] ds,
//! ```
//!
//! with y = e^{tA}(x + b(t)) and Theta(s, t) centered Gaussian of covariance
//! 2 int_s^t e^{rA} (B + S(r)) e^{rA*} dr. The integrand argument is then
//! Gaussian with explicit mean and covariance, so Gaussian-bump sources
//! integrate in closed form and windowed sources reduce to low-dimensional
//! Gauss-Hermite sums. Nothing here shares code with the Monte Carlo path:
//! this module is the yardstick the sampler is tested against.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::norms::SpatialFunction;
use crate::perturb::{PerturbationSchedule, TimeTransform};
use crate::quad;
use crate::source::{Source, SourceFunction, SpaceTerm};
use crate::structure::OperatorSpec;

#[derive(Debug, Clone, Copy)]
pub struct OracleQuad {
    /// Gauss-Legendre order per time panel.
    pub panel_order: usize,
    /// Gauss-Hermite order per axis for windowed terms.
    pub hermite_order: usize,
}

impl Default for OracleQuad {
    fn default() -> Self {
        OracleQuad {
            panel_order: 24,
            hermite_order: 40,
        }
    }
}

/// Time panels: [0, t] split at every breakpoint of the data, long panels
/// subdivided for safety.
fn time_panels(
    t: f64,
    source: &SourceFunction,
    schedule: Option<&PerturbationSchedule>,
    transform: Option<&TimeTransform>,
) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0, t];
    cuts.extend(source.breakpoints());
    if let Some(s) = schedule {
        cuts.extend_from_slice(s.cuts());
    }
    if let Some(tr) = transform {
        cuts.extend_from_slice(tr.cuts());
    }
    cuts.retain(|&c| c > 0.0 && c < t);
    cuts.push(0.0);
    cuts.push(t);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-12 * (1.0 + t);
    let mut merged = vec![cuts[0]];
    for &c in &cuts[1..] {
        if c - merged.last().unwrap() > tol {
            merged.push(c);
        }
    }
    let mut panels = Vec::new();
    for w in merged.windows(2) {
        let len = w[1] - w[0];
        let parts = (len / 0.5).ceil().max(1.0) as usize;
        for p in 0..parts {
            panels.push((
                w[0] + len * p as f64 / parts as f64,
                w[0] + len * (p + 1) as f64 / parts as f64,
            ));
        }
    }
    panels
}

/// Prefix integrals of e^{rA} (B + S(r)) e^{rA*} over the schedule cells, so
/// each node covariance costs two smooth segment integrals no matter how many
/// cells the schedule has.
struct CovTable {
    cuts: Vec<f64>,
    /// prefix[j] = integral over [0, cuts[j]].
    prefix: Vec<DMatrix<f64>>,
    /// B with the padded schedule value added, one matrix per cell.
    fused: Vec<DMatrix<f64>>,
    a: DMatrix<f64>,
}

impl CovTable {
    fn new(spec: &OperatorSpec, schedule: Option<&PerturbationSchedule>, t: f64) -> Self {
        let d = spec.dim();
        let (mut cuts, fused) = match schedule {
            Some(sched) => {
                let mut cuts = Vec::new();
                let mut fused = Vec::new();
                for (cell, s_cell) in sched.cuts().windows(2).zip(sched.values()) {
                    if cell[0] >= t {
                        break;
                    }
                    let mut m = spec.b.clone();
                    let mut head = m.view_mut((0, 0), (sched.dim(), sched.dim()));
                    head += s_cell;
                    cuts.push(cell[0]);
                    fused.push(m);
                }
                (cuts, fused)
            }
            None => (vec![0.0], vec![spec.b.clone()]),
        };
        // Clip the last cell at t.
        cuts.push(t);
        let mut prefix = vec![DMatrix::zeros(d, d)];
        for j in 0..fused.len() {
            let seg = segment(&spec.a, &fused[j], cuts[j], cuts[j + 1]);
            prefix.push(&prefix[j] + seg);
        }
        CovTable {
            cuts,
            prefix,
            fused,
            a: spec.a.clone(),
        }
    }

    fn cell_of(&self, u: f64) -> usize {
        self.cuts[1..self.cuts.len() - 1]
            .partition_point(|&c| c <= u)
            .min(self.fused.len() - 1)
    }

    /// int_s^t e^{rA} (B + S(r)) e^{rA*} dr for 0 <= s <= t.
    fn between(&self, s: f64, t: f64) -> DMatrix<f64> {
        let js = self.cell_of(s);
        let jt = self.cell_of(t);
        if js == jt {
            return segment(&self.a, &self.fused[js], s, t);
        }
        let mut m = segment(&self.a, &self.fused[js], s, self.cuts[js + 1]);
        m += &self.prefix[jt] - &self.prefix[js + 1];
        m += segment(&self.a, &self.fused[jt], self.cuts[jt], t);
        m
    }
}

fn segment(a: &DMatrix<f64>, coef: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    quad::integrate_matrix(
        |r| {
            let e = linalg::expm(&(a * r));
            &e * coef * e.transpose()
        },
        lo,
        hi,
        1e-13,
    )
}

struct OracleNode {
    s: f64,
    /// Panel weight with the potential damping folded in.
    weight: f64,
    back: DMatrix<f64>,
    b_s: DVector<f64>,
    sigma: DMatrix<f64>,
}

fn build_nodes(
    spec: &OperatorSpec,
    schedule: Option<&PerturbationSchedule>,
    transform: Option<&TimeTransform>,
    source: &SourceFunction,
    oq: &OracleQuad,
    t: f64,
) -> Result<Vec<OracleNode>> {
    let (gl_nodes, gl_weights) = quad::gauss_legendre(oq.panel_order);
    let table = CovTable::new(spec, schedule, t);
    let mut nodes = Vec::new();
    for (lo, hi) in time_panels(t, source, schedule, transform) {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (lo + hi);
        for (z, w) in gl_nodes.iter().zip(gl_weights) {
            let s = mid + half * z;
            let back = linalg::expm(&(-(&spec.a) * s));
            let m = table.between(s, t);
            let sigma = linalg::symmetrize(&(&back * (2.0 * m) * back.transpose()));
            let (damp, b_s) = match transform {
                Some(tr) => (
                    (-tr.c_cumulative(s)).exp(),
                    tr.drift_shift(&spec.a, s)?,
                ),
                None => (1.0, DVector::zeros(spec.dim())),
            };
            nodes.push(OracleNode {
                s,
                weight: w * half * damp,
                back,
                b_s,
                sigma,
            });
        }
    }
    Ok(nodes)
}

/// E[term(X)] for X ~ N(m, sigma).
fn term_expectation(
    term: &SpaceTerm,
    m: &DVector<f64>,
    sigma: &DMatrix<f64>,
    oq: &OracleQuad,
) -> Result<f64> {
    match term {
        SpaceTerm::GaussianBump {
            amplitude,
            center,
            width,
        } => {
            let d = m.len();
            let w2 = width * width;
            let shifted = sigma + DMatrix::identity(d, d) * w2;
            let chol = Cholesky::new(shifted.clone())
                .ok_or_else(|| Error::numerical("bump covariance lost positivity"))?;
            let det_ratio = w2.powi(d as i32) / shifted.determinant();
            let diff = m - center;
            let q = diff.dot(&chol.solve(&diff));
            Ok(amplitude * det_ratio.sqrt() * (-0.5 * q).exp())
        }
        SpaceTerm::CosWindow { .. } | SpaceTerm::QuadraticWindow { .. } => {
            let d = m.len();
            if d > 2 {
                return Err(Error::unsupported(
                    "windowed oracle terms are tensorized only up to dimension two",
                ));
            }
            let l = linalg::psd_sqrt_sym(sigma, 1e-9)?;
            let (zs, ws) = quad::gauss_hermite(oq.hermite_order);
            let mut acc = 0.0;
            if d == 1 {
                for (z, w) in zs.iter().zip(ws) {
                    let x = m + &l * DVector::from_vec(vec![*z]);
                    acc += w * term.eval(&x);
                }
            } else {
                for (z1, w1) in zs.iter().zip(ws) {
                    for (z2, w2) in zs.iter().zip(ws) {
                        let x = m + &l * DVector::from_vec(vec![*z1, *z2]);
                        acc += w1 * w2 * term.eval(&x);
                    }
                }
            }
            Ok(acc)
        }
    }
}

fn validate_inputs(
    spec: &OperatorSpec,
    schedule: Option<&PerturbationSchedule>,
    transform: Option<&TimeTransform>,
    source: &SourceFunction,
    t: f64,
) -> Result<()> {
    if !spec.is_gaussian() {
        return Err(Error::unsupported(
            "closed-form references exist only for the Gaussian operator",
        ));
    }
    if source.dim() != spec.dim() {
        return Err(Error::validation("source dimension does not match the operator"));
    }
    if !(t >= 0.0) || t > spec.horizon * (1.0 + 1e-9) {
        return Err(Error::validation(format!(
            "time {t} outside [0, {}]",
            spec.horizon
        )));
    }
    if let Some(sched) = schedule {
        if sched.dim() > spec.dim() {
            return Err(Error::validation("schedule wider than the operator"));
        }
        if (sched.horizon() - spec.horizon).abs() > 1e-9 * (1.0 + spec.horizon) {
            return Err(Error::validation("schedule horizon does not match the operator"));
        }
    }
    if let Some(tr) = transform {
        if tr.dim() != spec.dim() {
            return Err(Error::validation("transform dimension does not match the operator"));
        }
        if (tr.horizon() - spec.horizon).abs() > 1e-9 * (1.0 + spec.horizon) {
            return Err(Error::validation("transform horizon does not match the operator"));
        }
    }
    Ok(())
}

/// Reference value of the perturbed, lower-order-augmented problem by
/// quadrature over the exact Gaussian representation. Bump terms are exact;
/// windowed terms go through Gauss-Hermite.
pub fn gaussian_closed_form(
    spec: &OperatorSpec,
    schedule: Option<&PerturbationSchedule>,
    transform: Option<&TimeTransform>,
    source: &SourceFunction,
    oq: &OracleQuad,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    validate_inputs(spec, schedule, transform, source, t)?;
    if x.len() != spec.dim() {
        return Err(Error::validation("probe dimension does not match the operator"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }

    let (b_t, scale) = match transform {
        Some(tr) => (
            tr.drift_shift(&spec.a, t)?,
            tr.c_cumulative(t).exp(),
        ),
        None => (DVector::zeros(spec.dim()), 1.0),
    };
    let y = linalg::expm(&(&spec.a * t)) * (x + b_t);

    let nodes = build_nodes(spec, schedule, transform, source, oq, t)?;
    let mut value = 0.0;
    for node in &nodes {
        let m = &node.back * &y - &node.b_s;
        let mut e_node = 0.0;
        for piece in source.pieces() {
            if node.s >= piece.t_start && node.s < piece.t_end {
                let tp = piece.tpoly_at(node.s);
                for term in &piece.terms {
                    e_node += tp * term_expectation(term, &m, &node.sigma, oq)?;
                }
            }
        }
        value += node.weight * e_node;
    }
    Ok(scale * value)
}

/// The closed-form solution at a fixed time, packaged as a spatial field
/// with per-node data precomputed so that seminorm grids can afford it.
/// Restricted to pure Gaussian-bump sources, where the node expectation is
/// a closed form of the probe.
pub struct OracleField {
    dim: usize,
    forward: DMatrix<f64>,
    b_t: DVector<f64>,
    scale: f64,
    nodes: Vec<FieldNode>,
    sup: f64,
}

struct FieldNode {
    back: DMatrix<f64>,
    b_s: DVector<f64>,
    bumps: Vec<FieldBump>,
}

struct FieldBump {
    /// Amplitude with the time polynomial, panel weight, potential damping
    /// and determinant factor folded in.
    amp: f64,
    center: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl OracleField {
    pub fn new(
        spec: &OperatorSpec,
        schedule: Option<&PerturbationSchedule>,
        transform: Option<&TimeTransform>,
        source: &SourceFunction,
        oq: &OracleQuad,
        t: f64,
    ) -> Result<Self> {
        validate_inputs(spec, schedule, transform, source, t)?;
        if !(t > 0.0) {
            return Err(Error::validation("the oracle field needs a positive time"));
        }
        let d = spec.dim();
        let raw = build_nodes(spec, schedule, transform, source, oq, t)?;
        let mut nodes = Vec::with_capacity(raw.len());
        for node in raw {
            let mut bumps = Vec::new();
            for piece in source.pieces() {
                if node.s >= piece.t_start && node.s < piece.t_end {
                    let tp = piece.tpoly_at(node.s);
                    for term in &piece.terms {
                        let SpaceTerm::GaussianBump {
                            amplitude,
                            center,
                            width,
                        } = term
                        else {
                            return Err(Error::unsupported(
                                "oracle fields need pure Gaussian-bump sources",
                            ));
                        };
                        let w2 = width * width;
                        let shifted = &node.sigma + DMatrix::identity(d, d) * w2;
                        let det_ratio = w2.powi(d as i32) / shifted.determinant();
                        let chol = Cholesky::new(shifted).ok_or_else(|| {
                            Error::numerical("bump covariance lost positivity")
                        })?;
                        bumps.push(FieldBump {
                            amp: amplitude * tp * node.weight * det_ratio.sqrt(),
                            center: center.clone(),
                            chol,
                        });
                    }
                }
            }
            nodes.push(FieldNode {
                back: node.back,
                b_s: node.b_s,
                bumps,
            });
        }
        let (b_t, scale, damp_span) = match transform {
            Some(tr) => (
                tr.drift_shift(&spec.a, t)?,
                tr.c_cumulative(t).exp(),
                (tr.c_cumulative(t) - tr.min_c_cumulative()).exp(),
            ),
            None => (DVector::zeros(d), 1.0, 1.0),
        };
        Ok(OracleField {
            dim: d,
            forward: linalg::expm(&(&spec.a * t)),
            b_t,
            scale,
            nodes,
            sup: t * source.sup_bound() * damp_span,
        })
    }
}

impl SpatialFunction for OracleField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        let y = &self.forward * (x + &self.b_t);
        let mut value = 0.0;
        for node in &self.nodes {
            let m = &node.back * &y - &node.b_s;
            for bump in &node.bumps {
                let diff = &m - &bump.center;
                let q = diff.dot(&bump.chol.solve(&diff));
                value += bump.amp * (-0.5 * q).exp();
            }
        }
        self.scale * value
    }

    fn sup_bound(&self) -> f64 {
        self.sup
    }
}

/// Mesh for the kinetic finite-difference reference.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub v_radius: f64,
    pub x_radius: f64,
    pub nv: usize,
    pub nx: usize,
    /// Fraction of the stability limit used as the time step.
    pub cfl: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            v_radius: 4.0,
            x_radius: 4.0,
            nv: 160,
            nx: 320,
            cfl: 0.8,
        }
    }
}

/// Snapshots of the explicit finite-difference solution.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub ts: Vec<f64>,
    pub v_axis: Vec<f64>,
    pub x_axis: Vec<f64>,
    /// One (nv x nx) matrix per snapshot, rows indexed by v.
    pub grids: Vec<DMatrix<f64>>,
}

impl GridSolution {
    /// Bilinear interpolation inside snapshot k.
    pub fn eval(&self, k: usize, v: f64, x: f64) -> f64 {
        let hv = self.v_axis[1] - self.v_axis[0];
        let hx = self.x_axis[1] - self.x_axis[0];
        let fv = ((v - self.v_axis[0]) / hv)
            .clamp(0.0, (self.v_axis.len() - 1) as f64 - 1e-9);
        let fx = ((x - self.x_axis[0]) / hx)
            .clamp(0.0, (self.x_axis.len() - 1) as f64 - 1e-9);
        let (iv, ix) = (fv.floor() as usize, fx.floor() as usize);
        let (av, ax) = (fv - iv as f64, fx - ix as f64);
        let g = &self.grids[k];
        (1.0 - av) * ((1.0 - ax) * g[(iv, ix)] + ax * g[(iv, ix + 1)])
            + av * ((1.0 - ax) * g[(iv + 1, ix)] + ax * g[(iv + 1, ix + 1)])
    }

    /// Long-format CSV: t, v, x, u.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "t,v,x,u")?;
        for (k, t) in self.ts.iter().enumerate() {
            let g = &self.grids[k];
            for (iv, v) in self.v_axis.iter().enumerate() {
                for (ix, x) in self.x_axis.iter().enumerate() {
                    writeln!(out, "{t:.16e},{v:.16e},{x:.16e},{:.16e}", g[(iv, ix)])?;
                }
            }
        }
        Ok(())
    }
}

/// Explicit upwind/central finite differences for the kinetic problem
/// du/dt = (b0 + S(t)) d^2_v u + v d_x u + f on a Dirichlet box. First
/// order in time, so a reference rather than a race entry; all the jump
/// times of the data are hit exactly.
pub fn grid_solve_kinetic(
    b0: f64,
    schedule: Option<&PerturbationSchedule>,
    source: &SourceFunction,
    grid: &GridSpec,
    t_out: &[f64],
) -> Result<GridSolution> {
    if !(b0 >= 0.0) {
        return Err(Error::validation("diffusion coefficient must be nonnegative"));
    }
    if source.dim() != 2 {
        return Err(Error::validation("the kinetic grid works in dimension two"));
    }
    if grid.nv < 8 || grid.nx < 8 || !(grid.cfl > 0.0 && grid.cfl <= 1.0) {
        return Err(Error::validation("bad grid layout"));
    }
    if t_out.is_empty() || t_out.windows(2).any(|w| w[1] <= w[0]) || !(t_out[0] > 0.0) {
        return Err(Error::validation("output times must be positive and increasing"));
    }
    if let Some(sched) = schedule {
        if sched.dim() != 1 {
            return Err(Error::validation("kinetic schedules act on the velocity axis"));
        }
        if *t_out.last().unwrap() > sched.horizon() * (1.0 + 1e-9) {
            return Err(Error::validation("output time beyond the schedule horizon"));
        }
    }

    let (nv, nx) = (grid.nv, grid.nx);
    let hv = 2.0 * grid.v_radius / (nv - 1) as f64;
    let hx = 2.0 * grid.x_radius / (nx - 1) as f64;
    let v_axis: Vec<f64> = (0..nv).map(|i| -grid.v_radius + i as f64 * hv).collect();
    let x_axis: Vec<f64> = (0..nx).map(|j| -grid.x_radius + j as f64 * hx).collect();

    let coef_at = |t: f64| -> f64 {
        b0 + schedule.map_or(0.0, |s| s.value_at(t)[(0, 0)])
    };
    let coef_max = b0
        + schedule.map_or(0.0, |s| {
            s.values()
                .iter()
                .map(|m| m[(0, 0)])
                .fold(0.0f64, f64::max)
        });
    let dt_max = grid.cfl / (2.0 * coef_max.max(1e-12) / (hv * hv) + grid.v_radius / hx);

    // Spatial profiles per piece, so the marching loop only scales them.
    let piece_grids: Vec<DMatrix<f64>> = source
        .pieces()
        .iter()
        .map(|piece| {
            let mut g = DMatrix::zeros(nv, nx);
            let mut point = DVector::zeros(2);
            for (iv, &v) in v_axis.iter().enumerate() {
                for (ix, &x) in x_axis.iter().enumerate() {
                    point[0] = v;
                    point[1] = x;
                    g[(iv, ix)] = piece.terms.iter().map(|term| term.eval(&point)).sum();
                }
            }
            g
        })
        .collect();

    // Event times: all data jumps and every requested output.
    let mut events: Vec<f64> = t_out.to_vec();
    events.extend(source.breakpoints());
    if let Some(sched) = schedule {
        events.extend_from_slice(sched.cuts());
    }
    let t_final = *t_out.last().unwrap();
    events.retain(|&e| e > 0.0 && e <= t_final);
    events.push(t_final);
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut u = DMatrix::<f64>::zeros(nv, nx);
    let mut unew = DMatrix::<f64>::zeros(nv, nx);
    let mut out = Vec::with_capacity(t_out.len());
    let mut next_out = 0usize;
    let mut t = 0.0f64;

    for &event in &events {
        let span = event - t;
        if span <= 0.0 {
            continue;
        }
        let steps = (span / dt_max).ceil().max(1.0) as usize;
        let ht = span / steps as f64;
        for _ in 0..steps {
            let coef = coef_at(t);
            // Source profile at the current time.
            let mut tp = vec![0.0f64; piece_grids.len()];
            for (p, piece) in source.pieces().iter().enumerate() {
                if t >= piece.t_start && t < piece.t_end {
                    tp[p] = piece.tpoly_at(t);
                }
            }
            for iv in 1..nv - 1 {
                let v = v_axis[iv];
                for ix in 1..nx - 1 {
                    let diff = coef * (u[(iv + 1, ix)] + u[(iv - 1, ix)] - 2.0 * u[(iv, ix)])
                        / (hv * hv);
                    let adv = if v >= 0.0 {
                        v * (u[(iv, ix + 1)] - u[(iv, ix)]) / hx
                    } else {
                        v * (u[(iv, ix)] - u[(iv, ix - 1)]) / hx
                    };
                    let mut f = 0.0;
                    for (p, &w) in tp.iter().enumerate() {
                        if w != 0.0 {
                            f += w * piece_grids[p][(iv, ix)];
                        }
                    }
                    unew[(iv, ix)] = u[(iv, ix)] + ht * (diff + adv + f);
                }
            }
            std::mem::swap(&mut u, &mut unew);
            t += ht;
        }
        t = event;
        while next_out < t_out.len() && (t_out[next_out] - event).abs() < 1e-12 {
            out.push(u.clone());
            next_out += 1;
        }
    }
    if out.len() != t_out.len() {
        return Err(Error::numerical("grid march missed an output time"));
    }

    Ok(GridSolution {
        ts: t_out.to_vec(),
        v_axis,
        x_axis,
        grids: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::{solve_unperturbed, OuKernelParams};
    use crate::structure::kinetic_spec;
    use approx::assert_relative_eq;

    fn flat_spec_1d(horizon: f64) -> OperatorSpec {
        OperatorSpec {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::identity(1, 1),
            alpha: 2.0,
            horizon,
            measure: None,
        }
    }

    #[test]
    fn closed_form_reduces_to_heat_smoothing_without_drift() {
        // A = 0: u(t, x) = int_0^t E[f(x + sqrt(2(t-s)) Z)] ds with the
        // one-dimensional bump expectation in closed form.
        let spec = flat_spec_1d(1.0);
        let source = SourceFunction::stationary(
            1.0,
            SpaceTerm::GaussianBump {
                amplitude: 1.3,
                center: DVector::from_vec(vec![0.4]),
                width: 0.6,
            },
        )
        .unwrap();
        let t = 0.8;
        let x = DVector::from_vec(vec![-0.2]);
        let got = gaussian_closed_form(
            &spec,
            None,
            None,
            &source,
            &OracleQuad::default(),
            t,
            &x,
        )
        .unwrap();
        let want = quad::integrate_scalar(
            |s| {
                let var = 2.0 * (t - s) + 0.36;
                1.3 * (0.36 / var).sqrt() * (-0.5 * (0.6f64).powi(2) / var).exp()
            },
            0.0,
            t,
            48,
        );
        assert_relative_eq!(got, want, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_agrees_with_monte_carlo_on_the_kinetic_problem() {
        let spec = kinetic_spec(2.0, 0.5, None);
        let source = SourceFunction::stationary(
            0.5,
            SpaceTerm::GaussianBump {
                amplitude: 1.0,
                center: DVector::from_vec(vec![0.0, 0.0]),
                width: 0.9,
            },
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.2, -0.1]);
        let reference = gaussian_closed_form(
            &spec,
            None,
            None,
            &source,
            &OracleQuad::default(),
            0.5,
            &x,
        )
        .unwrap();
        let params = OuKernelParams {
            n_time: 4,
            nsteps: 8,
            samples: 40_000,
            seed: 21,
        };
        let mc = solve_unperturbed(&spec, &source, &params, 0.5, &x).unwrap();
        assert!(mc.std_error > 0.0);
        assert!(
            (mc.value - reference).abs() < 4.0 * mc.std_error + 1e-6,
            "mc {} +- {} vs oracle {}",
            mc.value,
            mc.std_error,
            reference
        );
    }

    #[test]
    fn closed_form_tracks_the_perturbed_solver_at_small_epsilon() {
        let spec = kinetic_spec(2.0, 0.4, None);
        let schedule = PerturbationSchedule::alternating(
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::from_element(1, 1, 0.3),
            4,
            0.4,
        )
        .unwrap();
        let source = SourceFunction::stationary(
            0.4,
            SpaceTerm::GaussianBump {
                amplitude: 1.0,
                center: DVector::from_vec(vec![0.0, 0.0]),
                width: 0.8,
            },
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let reference = gaussian_closed_form(
            &spec,
            Some(&schedule),
            None,
            &source,
            &OracleQuad::default(),
            0.4,
            &x,
        )
        .unwrap();
        let params = OuKernelParams {
            n_time: 3,
            nsteps: 8,
            samples: 20_000,
            seed: 5,
        };
        let mc = crate::perturb::solve_perturbed(
            &spec, &schedule, 0.08, &source, &params, 0.4, &x,
        )
        .unwrap();
        // Jump-size bias is O(eps^2); the tolerance leaves room for it.
        assert!(
            (mc.value - reference).abs() < 4.0 * mc.std_error + 0.01 * reference.abs(),
            "mc {} +- {} vs oracle {}",
            mc.value,
            mc.std_error,
            reference
        );
    }

    #[test]
    fn windowed_terms_match_a_brute_force_expectation() {
        let spec = flat_spec_1d(0.5);
        let term = SpaceTerm::CosWindow {
            amplitude: 1.0,
            wave: DVector::from_vec(vec![2.0]),
            phase: 0.3,
            center: DVector::from_vec(vec![0.1]),
            radius: 2.0,
        };
        let source = SourceFunction::stationary(0.5, term.clone()).unwrap();
        let t = 0.3;
        let x = DVector::from_vec(vec![0.25]);
        let got = gaussian_closed_form(
            &spec,
            None,
            None,
            &source,
            &OracleQuad::default(),
            t,
            &x,
        )
        .unwrap();
        // Brute force: nested quadrature over s and the support of the term.
        let want = quad::integrate_scalar(
            |s| {
                let var = 2.0 * (t - s);
                quad::integrate_scalar(
                    |y| {
                        let density =
                            (-0.5 * (y - 0.25) * (y - 0.25) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                        density * term.eval(&DVector::from_vec(vec![y]))
                    },
                    -1.9,
                    2.1,
                    96,
                )
            },
            0.0,
            t,
            32,
        );
        assert_relative_eq!(got, want, max_relative = 2e-4);
    }

    #[test]
    fn oracle_field_matches_the_pointwise_oracle() {
        let spec = kinetic_spec(2.0, 0.6, None);
        let source = SourceFunction::stationary(
            0.6,
            SpaceTerm::GaussianBump {
                amplitude: 2.0,
                center: DVector::from_vec(vec![0.3, -0.2]),
                width: 0.7,
            },
        )
        .unwrap();
        let field = OracleField::new(
            &spec,
            None,
            None,
            &source,
            &OracleQuad::default(),
            0.6,
        )
        .unwrap();
        for probe in [[0.0, 0.0], [0.5, 0.3], [-0.8, 1.1]] {
            let x = DVector::from_vec(probe.to_vec());
            let direct = gaussian_closed_form(
                &spec,
                None,
                None,
                &source,
                &OracleQuad::default(),
                0.6,
                &x,
            )
            .unwrap();
            assert_relative_eq!(field.eval(&x), direct, max_relative = 1e-12);
        }
        assert!(field.sup_bound() >= field.eval(&DVector::from_vec(vec![0.3, -0.2])));
    }

    #[test]
    fn grid_reference_agrees_with_the_closed_form() {
        let spec = kinetic_spec(2.0, 0.4, None);
        let schedule =
            PerturbationSchedule::constant(DMatrix::from_element(1, 1, 0.5), 0.4).unwrap();
        let source = SourceFunction::stationary(
            0.4,
            SpaceTerm::GaussianBump {
                amplitude: 1.0,
                center: DVector::from_vec(vec![0.0, 0.0]),
                width: 0.8,
            },
        )
        .unwrap();
        let grid = GridSpec {
            v_radius: 4.0,
            x_radius: 4.0,
            nv: 200,
            nx: 480,
            cfl: 0.8,
        };
        let sol = grid_solve_kinetic(1.0, Some(&schedule), &source, &grid, &[0.2, 0.4]).unwrap();
        for (k, &t) in [0.2f64, 0.4].iter().enumerate() {
            for probe in [[0.0, 0.0], [0.4, -0.3], [-0.6, 0.5]] {
                let x = DVector::from_vec(probe.to_vec());
                let reference = gaussian_closed_form(
                    &spec,
                    Some(&schedule),
                    None,
                    &source,
                    &OracleQuad::default(),
                    t,
                    &x,
                )
                .unwrap();
                let got = sol.eval(k, probe[0], probe[1]);
                assert!(
                    (got - reference).abs() < 0.04 * reference.abs().max(0.05),
                    "t {t} probe {probe:?}: grid {got} vs oracle {reference}"
                );
            }
        }
    }

    #[test]
    fn oracle_rejects_stable_operators_and_bad_probes() {
        let measure = crate::levy::SpectralMeasure::discrete(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let spec = kinetic_spec(1.5, 1.0, Some(measure));
        let source = SourceFunction::stationary(
            1.0,
            SpaceTerm::GaussianBump {
                amplitude: 1.0,
                center: DVector::from_vec(vec![0.0, 0.0]),
                width: 1.0,
            },
        )
        .unwrap();
        let err = gaussian_closed_form(
            &spec,
            None,
            None,
            &source,
            &OracleQuad::default(),
            0.5,
            &DVector::from_vec(vec![0.0, 0.0]),
        );
        assert!(err.is_err());
    }
}
