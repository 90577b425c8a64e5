//! TOML problem descriptions and their conversion into solver inputs.
//!
//! A config names one Cauchy problem (operator, source, optional schedule
//! and lower-order transform), the Monte Carlo budget, the probe points, and
//! the knobs of the estimate-invariance experiments. Unknown keys are
//! rejected; every matrix is given row by row.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::levy::SpectralMeasure;
use crate::perturb::{PerturbationSchedule, TimeTransform};
use crate::semigroup::OuKernelParams;
use crate::source::{SourceFunction, SourcePiece, SpaceTerm};
use crate::structure::OperatorSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub operator: OperatorConfig,
    pub source: SourceConfig,
    pub schedule: Option<ScheduleConfig>,
    pub transform: Option<TransformConfig>,
    pub mc: McConfig,
    pub probes: ProbesConfig,
    pub epsilon: Option<EpsilonConfig>,
    pub invariance: Option<InvarianceConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub alpha: f64,
    pub horizon: f64,
    /// Spectral atoms of the stable driver; required when alpha < 2.
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub direction: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub pieces: Vec<PieceConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// Polynomial in absolute time, constant coefficient first.
    #[serde(default = "default_tpoly")]
    pub tpoly: Vec<f64>,
    pub terms: Vec<TermConfig>,
}

fn default_tpoly() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermConfig {
    GaussianBump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    CosWindow {
        amplitude: f64,
        wave: Vec<f64>,
        phase: f64,
        center: Vec<f64>,
        radius: f64,
    },
    QuadraticWindow {
        constant: f64,
        linear: Vec<f64>,
        /// Diagonal quadratic coefficients.
        quad: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// n + 1 cut times starting at 0 and ending at the horizon.
    pub cuts: Vec<f64>,
    /// n positive-semidefinite matrices, one per cell.
    pub values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub cuts: Vec<f64>,
    /// Piecewise-constant first-order coefficient, one vector per cell.
    pub drift: Vec<Vec<f64>>,
    /// Piecewise-constant zero-order coefficient, one value per cell.
    pub potential: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_time: usize,
    pub nsteps: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbesConfig {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonConfig {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceConfig {
    #[serde(default = "default_switch_counts")]
    pub switch_counts: Vec<usize>,
    /// Mean schedule value; defaults to 0.5 I on the diffusive block.
    pub base: Option<Vec<Vec<f64>>>,
    /// Alternation amplitude; defaults to 0.3 I.
    pub delta: Option<Vec<Vec<f64>>>,
    /// Source-side regularity order for the Schauder ratio.
    #[serde(default = "default_exponent_f")]
    pub exponent_f: f64,
}

fn default_switch_counts() -> Vec<usize> {
    vec![1, 4, 16, 64, 256]
}

fn default_exponent_f() -> f64 {
    0.5
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("cannot parse config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read {}: {e}", path.display()))
        })?;
        Config::from_toml_str(&text)
    }

    pub fn dim(&self) -> usize {
        self.operator.a.len()
    }

    pub fn build_spec(&self) -> Result<OperatorSpec> {
        let a = to_matrix(&self.operator.a, "operator.a")?;
        let b = to_matrix(&self.operator.b, "operator.b")?;
        if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
            return Err(Error::config("operator.a and operator.b must be square and matching"));
        }
        let measure = if self.operator.atoms.is_empty() {
            None
        } else {
            let atoms: Vec<DVector<f64>> = self
                .operator
                .atoms
                .iter()
                .map(|at| DVector::from_vec(at.direction.clone()))
                .collect();
            let weights: Vec<f64> = self.operator.atoms.iter().map(|at| at.weight).collect();
            Some(SpectralMeasure::discrete(atoms, weights)?)
        };
        Ok(OperatorSpec {
            a,
            b,
            alpha: self.operator.alpha,
            horizon: self.operator.horizon,
            measure,
        })
    }

    pub fn build_source(&self) -> Result<SourceFunction> {
        let dim = self.dim();
        let pieces = self
            .source
            .pieces
            .iter()
            .map(|p| {
                Ok(SourcePiece {
                    t_start: p.t_start,
                    t_end: p.t_end,
                    tpoly: p.tpoly.clone(),
                    terms: p.terms.iter().map(build_term).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SourceFunction::new(dim, pieces)
    }

    pub fn build_schedule(&self) -> Result<Option<PerturbationSchedule>> {
        match &self.schedule {
            None => Ok(None),
            Some(sc) => {
                let values = sc
                    .values
                    .iter()
                    .map(|v| to_matrix(v, "schedule.values"))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(PerturbationSchedule::new(sc.cuts.clone(), values)?))
            }
        }
    }

    pub fn build_transform(&self) -> Result<Option<TimeTransform>> {
        match &self.transform {
            None => Ok(None),
            Some(tc) => {
                let drift = tc
                    .drift
                    .iter()
                    .map(|v| DVector::from_vec(v.clone()))
                    .collect();
                Ok(Some(TimeTransform::new(
                    tc.cuts.clone(),
                    drift,
                    tc.potential.clone(),
                )?))
            }
        }
    }

    pub fn kernel_params(&self, seed_override: Option<u64>) -> OuKernelParams {
        OuKernelParams {
            n_time: self.mc.n_time,
            nsteps: self.mc.nsteps,
            samples: self.mc.samples,
            seed: seed_override.unwrap_or(self.mc.seed),
        }
    }

    /// Jump sizes for the randomized solves, largest first.
    pub fn epsilons(&self) -> Vec<f64> {
        let mut eps = match &self.epsilon {
            Some(e) => e.values.clone(),
            None => vec![0.4, 0.2, 0.1, 0.05],
        };
        eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eps
    }

    /// Cartesian product of probe times and points.
    pub fn probe_points(&self) -> Result<Vec<(f64, DVector<f64>)>> {
        let d = self.dim();
        let mut out = Vec::new();
        for &t in &self.probes.t {
            for x in &self.probes.x {
                if x.len() != d {
                    return Err(Error::config(format!(
                        "probe point of dimension {}, operator of dimension {d}",
                        x.len()
                    )));
                }
                out.push((t, DVector::from_vec(x.clone())));
            }
        }
        if out.is_empty() {
            return Err(Error::config("need at least one probe time and point"));
        }
        Ok(out)
    }
}

fn build_term(tc: &TermConfig) -> Result<SpaceTerm> {
    Ok(match tc {
        TermConfig::GaussianBump {
            amplitude,
            center,
            width,
        } => SpaceTerm::GaussianBump {
            amplitude: *amplitude,
            center: DVector::from_vec(center.clone()),
            width: *width,
        },
        TermConfig::CosWindow {
            amplitude,
            wave,
            phase,
            center,
            radius,
        } => SpaceTerm::CosWindow {
            amplitude: *amplitude,
            wave: DVector::from_vec(wave.clone()),
            phase: *phase,
            center: DVector::from_vec(center.clone()),
            radius: *radius,
        },
        TermConfig::QuadraticWindow {
            constant,
            linear,
            quad,
            center,
            radius,
        } => SpaceTerm::QuadraticWindow {
            constant: *constant,
            linear: DVector::from_vec(linear.clone()),
            quad: DVector::from_vec(quad.clone()),
            center: DVector::from_vec(center.clone()),
            radius: *radius,
        },
    })
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::config(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("{what}: ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
