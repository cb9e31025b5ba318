//! One truncation step `k -> k-1` with a renormalized coupling.
//!
//! The eliminated space `Q` is the single highest unperturbed state
//! `Phi_k`. With `P Psi` the retained part of the current lowest eigenvector
//! and `lambda` the eigenvalue to preserve, the new coupling `g'` must satisfy
//!
//! ```text
//! <Phi_1| H_eff(lambda; g') |P Psi> = lambda * a_1
//! H_eff(E; g') = P H(g') P + P H(g') Q (E - Q H(g') Q)^-1 Q H(g') P
//! ```
//!
//! Clearing the scalar denominator turns this into a quadratic in `g'`.
//! When `lambda` is the eigenvalue belonging to `P Psi` and the model sits at
//! `g_in`, the current coupling is itself a root; the constraint becomes
//! informative once `lambda` is held at a target from a larger space.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{lowest_eigenpair, EigenConfig, EigenPair};
use crate::error::{Error, Result};
use crate::model::HamiltonianModel;

/// Which closed form of the quadratic coefficients (and of the continuum
/// flow equation built from them) to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// The closed forms taken literally, with matrix elements read as
    /// elements of `V`. Kept for comparison.
    Literal,
    /// Coefficients obtained by clearing the denominator of the constraint.
    /// Reproduces [`constraint_residual`] identically.
    #[default]
    Derived,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Literal => "literal",
            Variant::Derived => "derived",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub variant: Variant,
    /// `sum_{i<k} a_i v_ki`
    pub f1n: f64,
}

impl QuadraticCoefficients {
    pub fn eval(&self, g: f64) -> f64 {
        (self.a * g + self.b) * g + self.c
    }

    /// Both roots, complex when the discriminant is negative. A vanishing
    /// leading coefficient yields one finite root and one infinite root.
    pub fn roots(&self) -> (Complex64, Complex64) {
        let (a, b, c) = (self.a, self.b, self.c);
        let inf = Complex64::new(f64::INFINITY, 0.0);
        if a == 0.0 {
            if b == 0.0 {
                return (inf, inf);
            }
            return (Complex64::new(-c / b, 0.0), inf);
        }
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q == 0.0 {
                return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            }
            let (r1, r2) = (q / a, c / q);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            (Complex64::new(lo, 0.0), Complex64::new(hi, 0.0))
        } else {
            let re = -b / (2.0 * a);
            let im = (-disc).sqrt() / (2.0 * a).abs();
            (Complex64::new(re, -im), Complex64::new(re, im))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootSelection {
    CloserRoot,
    /// Both roots equidistant from `g_in`; the smaller magnitude was taken.
    CloserRootTie,
    FallbackBisection,
    /// All coefficients vanish; `g_out = g_in`.
    Degenerate,
}

impl RootSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            RootSelection::CloserRoot => "closer_root",
            RootSelection::CloserRootTie => "closer_root_tie",
            RootSelection::FallbackBisection => "fallback_bisection",
            RootSelection::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionStep {
    pub k_from: usize,
    pub k_to: usize,
    pub g_in: f64,
    pub roots: (Complex64, Complex64),
    pub g_out: f64,
    pub root_selection: RootSelection,
    pub constraint_residual: f64,
    pub lambda_target: f64,
    pub lambda_after: f64,
    pub drift: f64,
    pub coefficients: QuadraticCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub variant: Variant,
    /// Residual accepted for a selected root, relative to `max(1, |lambda a1|)`.
    pub residual_tol: f64,
    pub a1_floor: f64,
    /// Minimum `|E - H_kk|`, relative to the energy scale of the model.
    pub singular_floor: f64,
    /// Half-width of the fallback scan; `None` means `4 |g_in| + 1`.
    pub fallback_radius: Option<f64>,
    pub fallback_points: usize,
    pub eigen: EigenConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Derived,
            residual_tol: 1e-10,
            a1_floor: 1e-8,
            singular_floor: 1e-10,
            fallback_radius: None,
            fallback_points: 2001,
            eigen: EigenConfig::default(),
        }
    }
}

fn singular_check(model: &HamiltonianModel, energy: f64, g: f64, floor: f64) -> Result<f64> {
    let k = model.dim();
    let h_kk = model.diagonal_element(k - 1, g);
    let denom = energy - h_kk;
    if denom.abs() <= floor * model.energy_scale(model.g()) {
        return Err(Error::SingularDenominator { energy, h_kk });
    }
    Ok(denom)
}

/// `P H P + P H Q (E - Q H Q)^-1 Q H P` at the model's coupling, with `Q`
/// projecting on the last basis state.
pub fn effective_hamiltonian(model: &HamiltonianModel, energy: f64, singular_floor: f64) -> Result<DMatrix<f64>> {
    let k = model.dim();
    let denom = singular_check(model, energy, model.g(), singular_floor)?;
    let h = model.hamiltonian_matrix(None);
    let p = k - 1;
    let php = h.view((0, 0), (p, p)).into_owned();
    let u: DVector<f64> = h.view((0, p), (p, 1)).column(0).into_owned();
    Ok(php + (&u * u.transpose()) / denom)
}

fn check_a1(eig: &EigenPair, floor: f64) -> Result<f64> {
    let a1 = eig.vector[0];
    if a1.abs() <= floor {
        return Err(Error::TinyA1 { a1 });
    }
    Ok(a1)
}

/// `<Phi_1| H_eff(lambda_target; g') |P Psi> - lambda_target * a_1`, evaluated
/// directly from the effective Hamiltonian of the model at coupling `g'`.
pub fn constraint_residual(
    model: &HamiltonianModel,
    eig: &EigenPair,
    lambda_target: f64,
    g_prime: f64,
    config: &StepConfig,
) -> Result<f64> {
    let k = model.dim();
    if eig.vector.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "eigenvector has {} components, model has {k}",
            eig.vector.len()
        )));
    }
    let a1 = check_a1(eig, config.a1_floor)?;
    let shifted = model.with_coupling(g_prime);
    let h_eff = effective_hamiltonian(&shifted, lambda_target, config.singular_floor)?;
    let p_psi = eig.vector.rows(0, k - 1);
    let projected = h_eff.row(0).dot(&p_psi.transpose());
    Ok(projected - lambda_target * a1)
}

pub fn quadratic_coefficients(
    model: &HamiltonianModel,
    eig: &EigenPair,
    lambda_target: f64,
    variant: Variant,
    a1_floor: f64,
) -> Result<QuadraticCoefficients> {
    let k = model.dim();
    if eig.vector.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "eigenvector has {} components, model has {k}",
            eig.vector.len()
        )));
    }
    let a1 = eig.vector[0];
    if a1.abs() <= a1_floor {
        return Err(Error::TinyA1 { a1 });
    }
    let last = k - 1;
    let v = model.v();
    let eps = model.epsilon();
    let amp = eig.vector.rows(0, last);
    let s1 = v.view((0, 0), (1, last)).row(0).dot(&amp.transpose());
    let t = v.view((last, 0), (1, last)).row(0).dot(&amp.transpose());
    let lam = lambda_target;
    let v_1k = v[(0, last)];
    let v_kk = v[(last, last)];
    let gap_1 = lam - eps[0];
    let gap_k = lam - eps[last];
    let c = -a1 * gap_1 * gap_k;
    let (a, b) = match variant {
        Variant::Derived => (v_1k * t - s1 * v_kk, s1 * gap_k + a1 * gap_1 * v_kk),
        Variant::Literal => ((v_1k - a1 * v_kk) * t, a1 * (v_kk * gap_1 + t * gap_k)),
    };
    Ok(QuadraticCoefficients {
        a,
        b,
        c,
        variant,
        f1n: t,
    })
}

fn fallback_scan(model: &HamiltonianModel, eig: &EigenPair, lambda_target: f64, config: &StepConfig) -> Option<f64> {
    let g_in = model.g();
    let radius = config.fallback_radius.unwrap_or(4.0 * g_in.abs() + 1.0);
    let n = config.fallback_points.max(3);
    let k = model.dim();
    let v_kk = model.v()[(k - 1, k - 1)];
    let eps_k = model.epsilon()[k - 1];
    let denom = |g: f64| lambda_target - eps_k - g * v_kk;
    let f = |g: f64| constraint_residual(model, eig, lambda_target, g, config).ok();

    let grid: Vec<f64> = (0..n)
        .map(|i| g_in - radius + 2.0 * radius * i as f64 / (n - 1) as f64)
        .collect();
    let values: Vec<Option<f64>> = grid.iter().map(|&g| f(g)).collect();
    let mut best: Option<f64> = None;
    for i in 0..n - 1 {
        let (Some(fa), Some(fb)) = (values[i], values[i + 1]) else {
            continue;
        };
        // a sign change across the pole of the residual is not a root
        if fa.signum() == fb.signum() || denom(grid[i]).signum() != denom(grid[i + 1]).signum() {
            continue;
        }
        let (mut lo, mut hi, mut flo) = (grid[i], grid[i + 1], fa);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let Some(fm) = f(mid) else { break };
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
        }
        let root = 0.5 * (lo + hi);
        if best.is_none_or(|b| (root - g_in).abs() < (b - g_in).abs()) {
            best = Some(root);
        }
    }
    best
}

/// Solves for the renormalized coupling of the `(k-1)`-dimensional model.
///
/// `eig` must be the lowest eigenpair of `model` at `model.g()`;
/// `lambda_target` defaults to `eig.lambda1`.
pub fn solve_reduction_step(
    model: &HamiltonianModel,
    eig: &EigenPair,
    lambda_target: Option<f64>,
    config: &StepConfig,
) -> Result<ReductionStep> {
    let k = model.dim();
    if k < 3 {
        return Err(Error::DimensionMismatch(format!(
            "a reduction step needs k >= 3, got {k}"
        )));
    }
    let target = lambda_target.unwrap_or(eig.lambda1);
    let g_in = model.g();
    // the Q-space denominator at the incoming coupling must be usable
    singular_check(model, target, g_in, config.singular_floor)?;
    let coefficients = quadratic_coefficients(model, eig, target, config.variant, config.a1_floor)?;
    let roots = coefficients.roots();

    let scale = model.energy_scale(g_in);
    let coeff_max = coefficients.a.abs().max(coefficients.b.abs()).max(coefficients.c.abs());

    let (g_out, root_selection) = if coeff_max <= 1e-14 * scale * scale {
        (g_in, RootSelection::Degenerate)
    } else if roots.0.im == 0.0 && roots.0.re.is_finite() {
        let (r1, r2) = (roots.0.re, roots.1.re);
        let (d1, d2) = ((r1 - g_in).abs(), (r2 - g_in).abs());
        if d1 == d2 {
            let pick = if r1.abs() <= r2.abs() { r1 } else { r2 };
            (pick, RootSelection::CloserRootTie)
        } else if d1 < d2 {
            (r1, RootSelection::CloserRoot)
        } else {
            (r2, RootSelection::CloserRoot)
        }
    } else {
        match fallback_scan(model, eig, target, config) {
            Some(g) => (g, RootSelection::FallbackBisection),
            None => {
                return Err(Error::FlowBreakdown {
                    k,
                    root1: roots.0,
                    root2: roots.1,
                })
            }
        }
    };

    let residual = constraint_residual(model, eig, target, g_out, config)?;
    let truncated = model.truncate(k - 1)?.with_coupling(g_out);
    let after = lowest_eigenpair(&truncated.hamiltonian_matrix(None), &config.eigen)?;
    Ok(ReductionStep {
        k_from: k,
        k_to: k - 1,
        g_in,
        roots,
        g_out,
        root_selection,
        constraint_residual: residual,
        lambda_target: target,
        lambda_after: after.lambda1,
        drift: (after.lambda1 - target).abs(),
        coefficients,
    })
}

impl ReductionStep {
    /// Whether the residual at the selected root is within
    /// `config.residual_tol * max(1, |lambda a1|)`.
    pub fn residual_ok(&self, a1: f64, config: &StepConfig) -> bool {
        self.constraint_residual.abs() <= config.residual_tol * (self.lambda_target * a1).abs().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::dense_spectrum;
    use crate::model::{build_model, ModelSpec};
    use approx::assert_abs_diff_eq;

    fn lowest(model: &HamiltonianModel) -> EigenPair {
        let h = model.hamiltonian_matrix(None);
        dense_spectrum(&h).unwrap().lowest(&h)
    }

    #[test]
    fn free_effective_hamiltonian() {
        let m = HamiltonianModel::model_a(0.0);
        for e in [-1.0, 0.5, 3.0] {
            let h = effective_hamiltonian(&m, e, 1e-10).unwrap();
            assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        }
        assert!(matches!(
            effective_hamiltonian(&m, 2.0, 1e-10),
            Err(Error::SingularDenominator { .. })
        ));
    }

    #[test]
    fn model_a_effective_hamiltonian() {
        let m = HamiltonianModel::model_a(0.5);
        let eig = lowest(&m);
        let lam = eig.lambda1;
        let h = effective_hamiltonian(&m, lam, 1e-10).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 1.0 + 0.25 / (lam - 2.0)]);
        assert_abs_diff_eq!(h, expected, epsilon = 1e-15);
        let p = eig.vector.rows(0, 2).into_owned();
        assert!((&h * &p - &p * lam).norm() <= 1e-10);
    }

    #[test]
    fn residual_free_theory() {
        let m = HamiltonianModel::model_a(0.0);
        let eig = lowest(&m);
        assert_eq!(eig.lambda1, 0.0);
        let r = constraint_residual(&m, &eig, eig.lambda1, 0.0, &StepConfig::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn residual_at_zero_coupling() {
        let m = HamiltonianModel::model_a(0.5);
        let eig = lowest(&m);
        let r = constraint_residual(&m, &eig, eig.lambda1, 0.0, &StepConfig::default()).unwrap();
        assert_abs_diff_eq!(r, (0.0 - eig.lambda1) * eig.vector[0], epsilon = 1e-15);
    }

    #[test]
    fn coefficients_model_a() {
        let m = HamiltonianModel::model_a(0.5);
        let eig = lowest(&m);
        let (lam, a1) = (eig.lambda1, eig.vector[0]);
        let expected_c = -a1 * (lam - 0.0) * (lam - 2.0);
        for variant in [Variant::Literal, Variant::Derived] {
            let q = quadratic_coefficients(&m, &eig, lam, variant, 1e-8).unwrap();
            assert_abs_diff_eq!(q.c, expected_c, epsilon = 1e-15);
        }
        let q = quadratic_coefficients(&m, &eig, lam, Variant::Derived, 1e-8).unwrap();
        let cfg = StepConfig::default();
        for g in [-1.0, 0.3, 0.7] {
            let r = constraint_residual(&m, &eig, lam, g, &cfg).unwrap();
            let lhs = q.eval(g);
            let rhs = (lam - 2.0 - g * m.v()[(2, 2)]) * r;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-300));
        }
    }

    #[test]
    fn free_model_is_degenerate() {
        let m = HamiltonianModel::model_a(0.0);
        let eig = lowest(&m);
        let q = quadratic_coefficients(&m, &eig, eig.lambda1, Variant::Derived, 1e-8).unwrap();
        assert_eq!((q.a, q.b, q.c), (0.0, 0.0, 0.0));
        let step = solve_reduction_step(&m, &eig, None, &StepConfig::default()).unwrap();
        assert_eq!(step.root_selection, RootSelection::Degenerate);
        assert_eq!(step.g_out, 0.0);
        assert_eq!(step.drift, 0.0);
    }

    #[test]
    fn model_a_step() {
        let m = HamiltonianModel::model_a(0.5);
        let eig = lowest(&m);
        let cfg = StepConfig::default();
        let step = solve_reduction_step(&m, &eig, None, &cfg).unwrap();
        assert_eq!((step.k_from, step.k_to), (3, 2));
        assert!(step.constraint_residual.abs() <= 1e-10);
        assert!(step.residual_ok(eig.vector[0], &cfg));
        // with the eigenpair's own eigenvalue the incoming coupling solves the constraint
        assert!((step.g_out - 0.5).abs() <= 1e-12);
        let r1 = step.roots.0.re;
        let r2 = step.roots.1.re;
        let other = if (r1 - step.g_out).abs() < (r2 - step.g_out).abs() {
            r2
        } else {
            r1
        };
        assert!((step.g_out - 0.5).abs() <= (other - 0.5).abs());
    }

    #[test]
    fn held_target_moves_coupling() {
        // preserve the 3-state ground energy in the 2-state space
        let m = HamiltonianModel::model_a(0.5);
        let eig = lowest(&m);
        let target = eig.lambda1 - 0.01;
        let step = solve_reduction_step(&m, &eig, Some(target), &StepConfig::default()).unwrap();
        assert!(step.g_out != 0.5);
        assert!(step.constraint_residual.abs() <= 1e-10);
    }

    #[test]
    fn random_model_step() {
        let m = build_model(&ModelSpec::ladder_random(50, 0.1, 0.5, 42)).unwrap();
        let eig = lowest(&m);
        let step = solve_reduction_step(&m, &eig, None, &StepConfig::default()).unwrap();
        assert!((step.g_out - 0.5).abs() <= 0.2);
        assert!(step.constraint_residual.abs() <= 1e-9);
        assert_eq!(step.k_to, 49);
    }

    #[test]
    fn tiny_a1_rejected() {
        let m = HamiltonianModel::model_a(0.5);
        let mut eig = lowest(&m);
        eig.vector[0] = 1e-9;
        let cfg = StepConfig::default();
        assert!(matches!(
            constraint_residual(&m, &eig, eig.lambda1, 0.1, &cfg),
            Err(Error::TinyA1 { .. })
        ));
        assert!(matches!(
            solve_reduction_step(&m, &eig, None, &cfg),
            Err(Error::TinyA1 { .. })
        ));
    }

    #[test]
    fn too_small_for_a_step() {
        let m = HamiltonianModel::two_level(0.5);
        let eig = lowest(&m);
        assert!(matches!(
            solve_reduction_step(&m, &eig, None, &StepConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn quadratic_roots_forms() {
        let q = |a, b, c| QuadraticCoefficients {
            a,
            b,
            c,
            variant: Variant::Derived,
            f1n: 0.0,
        };
        let (r1, r2) = q(1.0, -3.0, 2.0).roots();
        assert_eq!((r1.re, r2.re), (1.0, 2.0));
        let (r1, r2) = q(1.0, 0.0, 1.0).roots();
        assert_eq!((r1, r2), (Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)));
        let (r1, r2) = q(0.0, 2.0, -1.0).roots();
        assert_eq!(r1.re, 0.5);
        assert!(r2.re.is_infinite());
    }

    #[test]
    fn complex_roots_break_down() {
        // targets well below the spectrum cannot be met by any real coupling
        let cfg = StepConfig::default();
        let mut found = false;
        'search: for seed in 0..50 {
            let m = build_model(&ModelSpec::ladder_random(4, 1.0, 0.8, seed)).unwrap();
            let eig = lowest(&m);
            for shift in [0.5, 1.0, 2.0, 5.0] {
                let target = eig.lambda1 - shift;
                let Ok(q) = quadratic_coefficients(&m, &eig, target, Variant::Derived, 1e-8) else {
                    continue;
                };
                if q.roots().0.im != 0.0 {
                    let err = solve_reduction_step(&m, &eig, Some(target), &cfg).unwrap_err();
                    assert!(matches!(err, Error::FlowBreakdown { k: 4, .. }));
                    found = true;
                    break 'search;
                }
            }
        }
        assert!(found, "no complex-root configuration in the search set");
    }
}
