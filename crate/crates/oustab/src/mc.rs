//! Shared Duhamel-quadrature Monte Carlo engine behind the unperturbed and
//! perturbed solvers.
//!
//! In the frame y = e^{tA} x the drift drops out: v(t, y) = u(t, e^{-tA} y)
//! satisfies a drift-free equation whose noise is the original one pushed
//! through e^{rA}, so by variation of constants
//!
//! ```text
//!   v(t, y) = int_0^t E[ f(s, e^{-sA} (y + Theta(s, t))) ] ds,
//! ```
//!
//! where Theta(s, t) is the driving-noise increment over (s, t] in that
//! frame: Gaussian with covariance 2 M(s, t) = 2 int_s^t e^{rA} B e^{rA*} dr
//! when alpha = 2, a stable stochastic convolution otherwise, plus the
//! compound-Poisson jump shift on perturbed solves. The s-integral is
//! Gauss-Legendre on panels split at every breakpoint of the data; the
//! expectation is plain Monte Carlo with one RNG substream per sample.
//!
//! Each sampled Duhamel sum V obeys |V| <= sum of weights * sup |f| =
//! t sup |f| outright, because the weights are positive; the maximum
//! principle is inherited by construction, not by accident of tuning, and
//! every [`Estimate`] carries the certificate.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::{sample_stable_increment, SpectralMeasure};
use crate::linalg;
use crate::perturb::JumpSystem;
use crate::quad;
use crate::rng;
use crate::semigroup::OuKernelParams;
use crate::source::Source;
use crate::structure::{KalmanStructure, OperatorSpec};

/// RNG lane for Poisson clocks and jump times.
pub(crate) const LANE_POISSON: u64 = 0;
/// RNG lane for Gaussian and stable draws.
pub(crate) const LANE_GAUSS: u64 = 1;

const GL_ORDER: usize = 8;
const CHUNK: usize = 1024;
/// Relative tolerance for merging nearly identical time cuts.
const CUT_TOL_REL: f64 = 1e-12;

/// Monte Carlo estimate of u(t, x) together with its pathwise
/// maximum-principle certificate.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    /// t times the certified bound on sup |f|. Holds for every sample path,
    /// hence for the estimate, up to quadrature-weight rounding.
    pub sup_bound: f64,
}

impl Estimate {
    /// The bound is pathwise; only rounding slack is allowed.
    pub fn satisfies_max_principle(&self) -> bool {
        self.value.abs() <= self.sup_bound * (1.0 + 1e-9) + 1e-300
    }
}

pub(crate) struct Engine<'a> {
    pub spec: &'a OperatorSpec,
    pub structure: &'a KalmanStructure,
    pub source: &'a dyn Source,
    pub jumps: Option<&'a JumpSystem>,
    pub params: &'a OuKernelParams,
}

/// One Duhamel quadrature node, with everything precomputable per (t, x).
struct Node {
    s: f64,
    weight: f64,
    /// e^{-sA}, pulling the argument back to the original frame.
    back: DMatrix<f64>,
    /// sqrt(2 M(s, t)) when alpha = 2; None in the stable regime.
    gauss_factor: Option<DMatrix<f64>>,
    /// Index of s in the stable-path grid (alpha < 2 only).
    grid_idx: usize,
}

/// Left-endpoint Riemann data for the stable stochastic convolution
/// int e^{rA} sigma dZ_r on a grid containing every quadrature node.
struct StablePath<'m> {
    measure: &'m SpectralMeasure,
    alpha: f64,
    /// Interval lengths between consecutive grid points.
    dts: Vec<f64>,
    /// e^{r_j A} sigma frozen at each left endpoint.
    es: Vec<DMatrix<f64>>,
}

impl StablePath<'_> {
    /// Draw one path of increments into the columns of `buf`, then turn them
    /// into suffix sums so column j holds the convolution increment over
    /// (r_j, t].
    fn fill_suffix<R: rand::Rng + ?Sized>(&self, buf: &mut DMatrix<f64>, rng: &mut R) {
        let m = self.dts.len();
        for j in 0..m {
            let dz = sample_stable_increment(self.measure, self.alpha, self.dts[j], rng)
                .expect("measure and alpha validated before sampling");
            buf.column_mut(j).gemv(1.0, &self.es[j], &dz, 0.0);
        }
        for j in (0..m.saturating_sub(1)).rev() {
            let next = buf.column(j + 1).into_owned();
            buf.column_mut(j).axpy(1.0, &next, 1.0);
        }
    }
}

pub(crate) fn solve_at(e: &Engine, t: f64, x: &DVector<f64>) -> Result<Estimate> {
    let d = e.spec.dim();
    if !e.structure.satisfied {
        return Err(Error::validation(
            "the pair (A, B) fails the Kalman rank condition; refusing to solve",
        ));
    }
    if x.len() != d {
        return Err(Error::validation(format!(
            "evaluation point has dimension {}, operator has dimension {d}",
            x.len()
        )));
    }
    if e.source.dim() != d {
        return Err(Error::validation(format!(
            "source has dimension {}, operator has dimension {d}",
            e.source.dim()
        )));
    }
    if !(t >= 0.0) || t > e.spec.horizon * (1.0 + 1e-9) {
        return Err(Error::validation(format!(
            "evaluation time {t} outside [0, {}]",
            e.spec.horizon
        )));
    }
    if e.params.samples < 2 {
        return Err(Error::validation("need at least 2 Monte Carlo samples"));
    }
    if e.params.n_time == 0 {
        return Err(Error::validation("n_time must be positive"));
    }
    let sup_bound = t * e.source.sup_bound();
    if t == 0.0 {
        return Ok(Estimate {
            value: 0.0,
            std_error: 0.0,
            samples: 0,
            sup_bound,
        });
    }

    let stable_measure = if e.spec.is_gaussian() {
        None
    } else {
        let m = e
            .spec
            .measure
            .as_ref()
            .ok_or_else(|| Error::validation("alpha < 2 requires a spectral measure"))?;
        if !m.is_symmetric() {
            return Err(Error::validation(
                "stable solves require a symmetric spectral measure",
            ));
        }
        if e.params.nsteps == 0 {
            return Err(Error::validation("nsteps must be positive for alpha < 2"));
        }
        Some(m)
    };

    // Quadrature panels: uniform subdivision refined by every data breakpoint.
    let mut extra = e.source.breakpoints();
    if let Some(js) = e.jumps {
        extra.extend(js.cell_boundaries());
    }
    let cuts = build_cuts(t, e.params.n_time, &extra);
    let cut_tol = CUT_TOL_REL * t.max(1.0);

    let (gl_x, gl_w) = gauss_legendre_pair();
    let mut nodes: Vec<Node> = Vec::with_capacity(GL_ORDER * (cuts.len() - 1));
    for w in cuts.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let mid = 0.5 * (w[0] + w[1]);
        for i in 0..GL_ORDER {
            nodes.push(Node {
                s: mid + half * gl_x[i],
                weight: half * gl_w[i],
                back: DMatrix::zeros(0, 0),
                gauss_factor: None,
                grid_idx: 0,
            });
        }
    }
    nodes.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());

    // Stable grid: uniform nsteps refined by the node times, so every node is
    // a grid point and suffix sums land exactly on it.
    let stable = match stable_measure {
        Some(measure) => {
            let mut grid: Vec<f64> = (0..=e.params.nsteps)
                .map(|k| t * k as f64 / e.params.nsteps as f64)
                .collect();
            grid.extend(nodes.iter().map(|n| n.s));
            grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            grid.dedup_by(|a, b| (*a - *b).abs() <= cut_tol);
            for node in &mut nodes {
                let j = grid.partition_point(|&g| g < node.s - cut_tol);
                if j >= grid.len() || (grid[j] - node.s).abs() > 2.0 * cut_tol {
                    return Err(Error::numerical("stable grid lost a quadrature node"));
                }
                node.grid_idx = j;
            }
            let dts: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
            let es: Vec<DMatrix<f64>> = grid[..grid.len() - 1]
                .iter()
                .map(|&r| linalg::expm(&(&e.spec.a * r)) * &e.structure.sigma)
                .collect();
            Some(StablePath {
                measure,
                alpha: e.spec.alpha,
                dts,
                es,
            })
        }
        None => None,
    };

    // Per-node pullbacks and Gaussian factors.
    for node in &mut nodes {
        node.back = linalg::expm(&(&e.spec.a * (-node.s)));
        if e.spec.is_gaussian() {
            let a = &e.spec.a;
            let b = &e.spec.b;
            let cov = quad::integrate_matrix(
                |r| {
                    let er = linalg::expm(&(a * r));
                    &er * b * er.transpose()
                },
                node.s,
                t,
                1e-12,
            );
            let factor = linalg::psd_sqrt_sym(&linalg::symmetrize(&(2.0 * cov)), 1e-8)?;
            node.gauss_factor = Some(factor);
        }
    }

    let node_times: Vec<f64> = nodes.iter().map(|n| n.s).collect();
    let y = linalg::expm(&(&e.spec.a * t)) * x;

    let n = e.params.samples;
    let seed = e.params.seed;
    let n_chunks = n.div_ceil(CHUNK);
    let n_incs = stable.as_ref().map_or(0, |st| st.dts.len());

    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut vals = Vec::with_capacity(hi - lo);
            let mut z = DVector::<f64>::zeros(d);
            let mut arg = DVector::<f64>::zeros(d);
            let mut xx = DVector::<f64>::zeros(d);
            let mut path = DMatrix::<f64>::zeros(d, n_incs);
            for sample in lo..hi {
                let shifts = e.jumps.map(|js| {
                    let mut rp = rng::substream(seed, sample as u64, LANE_POISSON);
                    js.node_shifts(&node_times, t, &mut rp)
                });
                let mut rg = rng::substream(seed, sample as u64, LANE_GAUSS);
                if let Some(st) = &stable {
                    st.fill_suffix(&mut path, &mut rg);
                }
                let mut v = 0.0;
                for (q, node) in nodes.iter().enumerate() {
                    arg.copy_from(&y);
                    match &node.gauss_factor {
                        Some(factor) => {
                            for zi in z.iter_mut() {
                                *zi = StandardNormal.sample(&mut rg);
                            }
                            arg.gemv(1.0, factor, &z, 1.0);
                        }
                        None => {
                            for i in 0..d {
                                arg[i] += path[(i, node.grid_idx)];
                            }
                        }
                    }
                    if let Some(sh) = &shifts {
                        arg += &sh[q];
                    }
                    xx.gemv(1.0, &node.back, &arg, 0.0);
                    v += node.weight * e.source.eval(node.s, &xx);
                }
                vals.push(v);
            }
            vals
        })
        .collect();

    let all: Vec<f64> = chunks.into_iter().flatten().collect();
    let (value, std_error) = linalg::mean_and_stderr(&all);
    Ok(Estimate {
        value,
        std_error,
        samples: n,
        sup_bound,
    })
}

fn gauss_legendre_pair() -> (&'static [f64], &'static [f64]) {
    let rule = quad::gauss_legendre(GL_ORDER);
    (&rule.0, &rule.1)
}

/// Sorted cut times over [0, t]: uniform n_time subdivision plus every extra
/// cut strictly inside, merged at relative tolerance.
fn build_cuts(t: f64, n_time: usize, extra: &[f64]) -> Vec<f64> {
    let tol = CUT_TOL_REL * t.max(1.0);
    let mut cuts: Vec<f64> = (0..=n_time)
        .map(|k| t * k as f64 / n_time as f64)
        .collect();
    for &c in extra {
        if c > tol && c < t - tol {
            cuts.push(c);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    cuts
}
