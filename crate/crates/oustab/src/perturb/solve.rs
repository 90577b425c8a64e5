//! Solutions of the randomized-perturbation problem and the eps -> 0 sweep.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mc::{self, Estimate};
use crate::semigroup::OuKernelParams;
use crate::source::Source;
use crate::structure::{check_kalman, OperatorSpec};

use super::jumps::build_jump_system;
use super::PerturbationSchedule;

/// Expectation of the Duhamel functional for the operator perturbed by the
/// compound-Poisson randomization of Tr(S(t) D^2) at jump size `epsilon`.
pub fn solve_perturbed(
    spec: &OperatorSpec,
    schedule: &PerturbationSchedule,
    epsilon: f64,
    source: &dyn Source,
    params: &OuKernelParams,
    t: f64,
    x: &DVector<f64>,
) -> Result<Estimate> {
    let structure = check_kalman(spec)?;
    if (schedule.horizon() - spec.horizon).abs() > 1e-9 * (1.0 + spec.horizon) {
        return Err(Error::validation(format!(
            "schedule horizon {} does not cover the operator horizon {}",
            schedule.horizon(),
            spec.horizon
        )));
    }
    let jumps = build_jump_system(&structure, &spec.a, schedule, epsilon)?;
    let engine = mc::Engine {
        spec,
        structure: &structure,
        source,
        jumps: Some(&jumps),
        params,
    };
    mc::solve_at(&engine, t, x)
}

#[derive(Debug, Clone)]
pub struct EpsilonSweepPoint {
    pub epsilon: f64,
    pub estimate: Estimate,
    /// |estimate - reference|.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct EpsilonSweep {
    /// Points ordered by decreasing epsilon.
    pub points: Vec<EpsilonSweepPoint>,
    pub reference: f64,
    /// Every consecutive gap drop exceeds twice its combined standard error.
    pub decreasing_significantly: bool,
    /// Every point obeys |value| <= t * sup|f| up to noise-free slack.
    pub max_principle_holds: bool,
}

/// Solve at a fixed probe for each epsilon and compare against `reference`,
/// the value of the limiting (Gaussian) problem computed by an independent
/// method. Common random numbers across epsilons: the Gaussian lane of each
/// sample is identical, only the jump lane changes, so gap differences are
/// measured with strongly correlated noise.
pub fn epsilon_sweep(
    spec: &OperatorSpec,
    schedule: &PerturbationSchedule,
    source: &dyn Source,
    params: &OuKernelParams,
    t: f64,
    x: &DVector<f64>,
    epsilons: &[f64],
    reference: f64,
) -> Result<EpsilonSweep> {
    if epsilons.len() < 2 {
        return Err(Error::validation("need at least two epsilons to see a trend"));
    }
    let mut eps = epsilons.to_vec();
    for &e in &eps {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::validation(format!("bad epsilon {e}")));
        }
    }
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eps.dedup();

    let mut points = Vec::with_capacity(eps.len());
    for &e in &eps {
        let estimate = solve_perturbed(spec, schedule, e, source, params, t, x)?;
        let gap = (estimate.value - reference).abs();
        points.push(EpsilonSweepPoint {
            epsilon: e,
            estimate,
            gap,
        });
    }

    let mut decreasing = true;
    for w in points.windows(2) {
        let se = (w[0].estimate.std_error.powi(2) + w[1].estimate.std_error.powi(2)).sqrt();
        if !(w[0].gap - w[1].gap > 2.0 * se) {
            decreasing = false;
        }
    }
    let max_principle = points
        .iter()
        .all(|p| p.estimate.satisfies_max_principle());

    Ok(EpsilonSweep {
        points,
        reference,
        decreasing_significantly: decreasing,
        max_principle_holds: max_principle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{SourceFunction, SpaceTerm};
    use crate::structure::kinetic_spec;
    use nalgebra::DMatrix;

    fn bump_source(horizon: f64) -> SourceFunction {
        SourceFunction::stationary(
            horizon,
            SpaceTerm::GaussianBump {
                amplitude: 1.0,
                center: DVector::from_vec(vec![0.0, 0.0]),
                width: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn perturbed_solution_responds_to_the_schedule() {
        let spec = kinetic_spec(2.0, 0.5, None);
        let source = bump_source(0.5);
        let params = OuKernelParams {
            n_time: 3,
            nsteps: 16,
            samples: 4_000,
            seed: 11,
        };
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let quiet =
            PerturbationSchedule::constant(DMatrix::from_element(1, 1, 0.0), 0.5).unwrap();
        let loud =
            PerturbationSchedule::constant(DMatrix::from_element(1, 1, 4.0), 0.5).unwrap();
        let u0 = solve_perturbed(&spec, &quiet, 0.3, &source, &params, 0.5, &x).unwrap();
        let u1 = solve_perturbed(&spec, &loud, 0.3, &source, &params, 0.5, &x).unwrap();
        // Extra diffusion spreads mass away from the bump peak.
        assert!(
            u1.value < u0.value - 3.0 * (u0.std_error + u1.std_error),
            "{} vs {}",
            u1.value,
            u0.value
        );
        assert!(u0.satisfies_max_principle());
        assert!(u1.satisfies_max_principle());
    }

    #[test]
    fn zero_schedule_matches_unperturbed_statistics() {
        // With S = 0 the jump columns vanish: identical samples, identical
        // estimate, bit for bit.
        let spec = kinetic_spec(2.0, 0.4, None);
        let source = bump_source(0.4);
        let params = OuKernelParams {
            n_time: 3,
            nsteps: 8,
            samples: 500,
            seed: 3,
        };
        let x = DVector::from_vec(vec![0.1, -0.2]);
        let zero =
            PerturbationSchedule::constant(DMatrix::from_element(1, 1, 0.0), 0.4).unwrap();
        let pert = solve_perturbed(&spec, &zero, 0.5, &source, &params, 0.4, &x).unwrap();
        let clean =
            crate::semigroup::solve_unperturbed(&spec, &source, &params, 0.4, &x).unwrap();
        assert_eq!(pert.value.to_bits(), clean.value.to_bits());
        assert_eq!(pert.std_error.to_bits(), clean.std_error.to_bits());
    }

    #[test]
    fn sweep_orders_epsilons_and_reports_gaps() {
        let spec = kinetic_spec(2.0, 0.3, None);
        let source = bump_source(0.3);
        let params = OuKernelParams {
            n_time: 2,
            nsteps: 8,
            samples: 1_500,
            seed: 7,
        };
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let schedule =
            PerturbationSchedule::constant(DMatrix::from_element(1, 1, 1.0), 0.3).unwrap();
        let sweep = epsilon_sweep(
            &spec,
            &schedule,
            &source,
            &params,
            0.3,
            &x,
            &[0.2, 0.8, 0.4],
            0.25,
        )
        .unwrap();
        let eps: Vec<f64> = sweep.points.iter().map(|p| p.epsilon).collect();
        assert_eq!(eps, vec![0.8, 0.4, 0.2]);
        for p in &sweep.points {
            assert!((p.gap - (p.estimate.value - 0.25).abs()).abs() < 1e-15);
        }
        assert!(sweep.max_principle_holds);
    }
}
