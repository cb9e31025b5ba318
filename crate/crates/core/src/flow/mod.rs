//! The discrete reduction cascade `N -> k_min` and its continuum extension.

mod continuum;
pub mod spline;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::lowest_eigenpair;
use crate::error::{Error, Result};
use crate::feshbach::{solve_reduction_step, ReductionStep, StepConfig};
use crate::model::HamiltonianModel;

pub use continuum::{
    continuum_rhs, detect_fixed_points, integrate_flow_ode, integrate_rhs, CoefficientInterpolant, FixedPoint,
    FixedPointKind, OdeConfig, OdeTrack,
};

/// Which eigenvalue each step must preserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The lowest eigenvalue of the full `N`-dimensional model.
    #[default]
    Fixed,
    /// The lowest eigenvalue of the current `k`-dimensional model.
    Rolling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub k_min: usize,
    pub target: Target,
    pub step: StepConfig,
}

impl FlowConfig {
    pub fn new(k_min: usize) -> Self {
        Self {
            k_min,
            target: Target::Fixed,
            step: StepConfig::default(),
        }
    }
}

/// Coefficients of the quadratic that fixes the coupling at dimension `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSample {
    pub x: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub dimension: usize,
    pub k_min: usize,
    pub steps: Vec<ReductionStep>,
    pub g_of_k: BTreeMap<usize, f64>,
    pub lambda1_target: f64,
    /// `|lambda1(k, g^(k)) - lambda1_target|`, from a fresh diagonalization.
    pub drift_of_k: BTreeMap<usize, f64>,
    /// Same quantity with the coupling left at its initial value.
    pub naive_drift_of_k: BTreeMap<usize, f64>,
    pub breakdown_at: Option<usize>,
    pub breakdown_reason: Option<String>,
    /// Knots for the continuum coefficients, descending in `x`.
    ///
    /// Step `k -> k-1` is placed at `x = k-1`, the dimension whose coupling
    /// it determines. The first step is also placed at `x = N`: it preserves
    /// the eigenvalue of its own eigenpair, so its quadratic vanishes at
    /// `g^(N)` as well.
    pub coefficient_track: Vec<CoefficientSample>,
}

impl FlowTrajectory {
    pub fn initial_coupling(&self) -> f64 {
        self.g_of_k[&self.dimension]
    }

    /// Smallest dimension reached.
    pub fn last_k(&self) -> usize {
        self.steps.last().map_or(self.dimension, |s| s.k_to)
    }
}

pub fn run_discrete_flow(model: &HamiltonianModel, config: &FlowConfig) -> Result<FlowTrajectory> {
    let n = model.dim();
    let k_min = config.k_min;
    if k_min < 2 || k_min >= n {
        return Err(Error::DimensionMismatch(format!(
            "k_min = {k_min} must satisfy 2 <= k_min < N = {n}"
        )));
    }
    let eigen = &config.step.eigen;
    let g0 = model.g();
    let top = lowest_eigenpair(&model.hamiltonian_matrix(None), eigen)?;
    let target0 = top.lambda1;

    let mut g_of_k = BTreeMap::from([(n, g0)]);
    let mut drift_of_k = BTreeMap::from([(n, 0.0)]);
    let mut naive_drift_of_k = BTreeMap::from([(n, 0.0)]);
    for k in k_min..n {
        let naive = model.truncate(k)?;
        let lam = lowest_eigenpair(&naive.hamiltonian_matrix(None), eigen)?.lambda1;
        naive_drift_of_k.insert(k, (lam - target0).abs());
    }

    let mut steps: Vec<ReductionStep> = Vec::new();
    let mut coefficient_track = Vec::new();
    let mut breakdown_at = None;
    let mut breakdown_reason = None;
    let mut current = model.clone();
    let mut eig = top;
    for k in ((k_min + 1)..=n).rev() {
        let target = match config.target {
            Target::Fixed => target0,
            Target::Rolling => eig.lambda1,
        };
        let step = match solve_reduction_step(&current, &eig, Some(target), &config.step) {
            Ok(step) => step,
            Err(e) => {
                log::info!("flow stopped at k = {k}: {e}");
                breakdown_at = Some(k);
                breakdown_reason = Some(e.to_string());
                break;
            }
        };
        let co = step.coefficients;
        if steps.is_empty() {
            coefficient_track.push(CoefficientSample {
                x: k as f64,
                a: co.a,
                b: co.b,
                c: co.c,
            });
        }
        coefficient_track.push(CoefficientSample {
            x: (k - 1) as f64,
            a: co.a,
            b: co.b,
            c: co.c,
        });
        current = current.truncate(k - 1)?.with_coupling(step.g_out);
        g_of_k.insert(k - 1, step.g_out);
        eig = lowest_eigenpair(&current.hamiltonian_matrix(None), eigen)?;
        drift_of_k.insert(k - 1, (eig.lambda1 - target0).abs());
        steps.push(step);
    }

    Ok(FlowTrajectory {
        dimension: n,
        k_min,
        steps,
        g_of_k,
        lambda1_target: target0,
        drift_of_k,
        naive_drift_of_k,
        breakdown_at,
        breakdown_reason,
        coefficient_track,
    })
}

/// Independent trajectories for a batch of models, computed in parallel.
pub fn run_sweep(models: &[HamiltonianModel], config: &FlowConfig) -> Vec<Result<FlowTrajectory>> {
    models.par_iter().map(|m| run_discrete_flow(m, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::dense_spectrum;
    use crate::feshbach::RootSelection;
    use crate::model::{build_model, ModelSpec};

    fn lambda1(model: &HamiltonianModel) -> f64 {
        dense_spectrum(&model.hamiltonian_matrix(None)).unwrap().eigenvalues[0]
    }

    #[test]
    fn model_a_single_step() {
        let m = HamiltonianModel::model_a(0.5);
        let t = run_discrete_flow(&m, &FlowConfig::new(2)).unwrap();
        assert_eq!(t.steps.len(), 1);
        let g2 = t.g_of_k[&2];
        let expected = (lambda1(&m.truncate(2).unwrap().with_coupling(g2)) - lambda1(&m)).abs();
        assert_eq!(t.drift_of_k[&2], expected);
        assert_eq!(t.drift_of_k[&3], 0.0);
    }

    #[test]
    fn free_theory_stays_free() {
        let m = HamiltonianModel::model_a(0.0);
        let t = run_discrete_flow(&m, &FlowConfig::new(2)).unwrap();
        assert_eq!(t.steps[0].root_selection, RootSelection::Degenerate);
        for seed in [1, 2, 3] {
            let m = build_model(&ModelSpec::ladder_random(12, 0.3, 0.0, seed)).unwrap();
            let t = run_discrete_flow(&m, &FlowConfig::new(2)).unwrap();
            assert!(t.breakdown_at.is_none());
            assert!(t.g_of_k.values().all(|&g| g == 0.0));
            assert!(t.drift_of_k.values().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn chaining_is_bit_exact() {
        let m = build_model(&ModelSpec::ladder_random(20, 0.2, 0.7, 8)).unwrap();
        let t = run_discrete_flow(&m, &FlowConfig::new(3)).unwrap();
        assert_eq!(t.steps[0].g_in, 0.7);
        for w in t.steps.windows(2) {
            assert_eq!(w[0].g_out, w[1].g_in);
            assert_eq!(w[0].k_to, w[1].k_from);
        }
    }

    #[test]
    fn rolling_target_leaves_coupling_unchanged() {
        let m = build_model(&ModelSpec::ladder_random(15, 0.1, 0.5, 42)).unwrap();
        let cfg = FlowConfig {
            target: Target::Rolling,
            ..FlowConfig::new(4)
        };
        let t = run_discrete_flow(&m, &cfg).unwrap();
        for s in &t.steps {
            assert!((s.g_out - 0.5).abs() < 1e-12);
        }
        for k in 4..15 {
            assert!((t.drift_of_k[&k] - t.naive_drift_of_k[&k]).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_k_min() {
        let m = HamiltonianModel::model_a(0.5);
        assert!(run_discrete_flow(&m, &FlowConfig::new(3)).is_err());
        assert!(run_discrete_flow(&m, &FlowConfig::new(1)).is_err());
    }

    #[test]
    fn sweep_matches_sequential() {
        let models: Vec<_> = (0..4)
            .map(|s| build_model(&ModelSpec::ladder_random(10, 0.2, 0.4, s)).unwrap())
            .collect();
        let cfg = FlowConfig::new(3);
        let par = run_sweep(&models, &cfg);
        for (m, r) in models.iter().zip(par) {
            assert_eq!(r.unwrap(), run_discrete_flow(m, &cfg).unwrap());
        }
    }
}
