use serde::{Deserialize, Serialize};

use super::spline::CubicSpline;
use super::{CoefficientSample, FlowTrajectory};
use crate::eigen::dense_spectrum;
use crate::error::{Error, Result};
use crate::feshbach::Variant;
use crate::model::HamiltonianModel;

/// Spline interpolants `a(x)`, `b(x)`, `c(x)` over the coefficient knots.
#[derive(Debug, Clone)]
pub struct CoefficientInterpolant {
    a: CubicSpline,
    b: CubicSpline,
    c: CubicSpline,
    scale: f64,
}

impl CoefficientInterpolant {
    pub fn from_samples(samples: &[CoefficientSample]) -> Result<Self> {
        let pick =
            |f: fn(&CoefficientSample) -> f64| -> Vec<(f64, f64)> { samples.iter().map(|s| (s.x, f(s))).collect() };
        let scale = samples
            .iter()
            .map(|s| s.a.abs().max(s.b.abs()).max(s.c.abs()))
            .fold(0.0, f64::max);
        Ok(Self {
            a: CubicSpline::new(&pick(|s| s.a))?,
            b: CubicSpline::new(&pick(|s| s.b))?,
            c: CubicSpline::new(&pick(|s| s.c))?,
            scale,
        })
    }

    pub fn values(&self, x: f64) -> (f64, f64, f64) {
        (self.a.eval(x), self.b.eval(x), self.c.eval(x))
    }

    pub fn derivatives(&self, x: f64) -> (f64, f64, f64) {
        (self.a.derivative(x), self.b.derivative(x), self.c.derivative(x))
    }
}

/// Right-hand side of the coupling flow `dg/dx`.
///
/// `Variant::Derived` differentiates `a(x) g^2 + b(x) g + c(x) = 0` along
/// the flow: `dg/dx = -(c' + b' g + a' g^2) / (2 a g + b)`.
/// `Variant::Literal` evaluates the form with the `a'` sign flipped,
/// `(c' + b' g - a' g^2) / (2 a g + b)`.
pub fn continuum_rhs(
    x: f64,
    g: f64,
    interp: &CoefficientInterpolant,
    variant: Variant,
    singular_floor: f64,
) -> Result<f64> {
    let (a, b, _) = interp.values(x);
    let (da, db, dc) = interp.derivatives(x);
    let denominator = 2.0 * a * g + b;
    if !(denominator.abs() > singular_floor * interp.scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::FlowSingularity { x, denominator });
    }
    Ok(match variant {
        Variant::Derived => -(dc + db * g + da * g * g) / denominator,
        Variant::Literal => (dc + db * g - da * g * g) / denominator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    /// RK4 step in units of dimension.
    pub h: f64,
    pub variant: Variant,
    pub singular_floor: f64,
    /// Relative threshold handed to [`detect_fixed_points`].
    pub fixed_point_tol: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            h: 0.25,
            variant: Variant::Derived,
            singular_floor: 1e-12,
            fixed_point_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPointKind {
    /// Isolated zero of `dg/dx` (sign change or a single vanishing sample).
    Crossing,
    /// `dg/dx` vanishes on the whole interval `[x_end, x]`.
    SustainedZero { x_end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub x: f64,
    pub g: f64,
    pub kind: FixedPointKind,
    /// Finite-difference `d lambda_1 / dg` of the model truncated to
    /// `round(x)` states, when a model was supplied.
    pub dlambda_dg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrack {
    /// Descending.
    pub x_grid: Vec<f64>,
    pub g_ode: Vec<f64>,
    pub rhs_values: Vec<f64>,
    pub fixed_points: Vec<FixedPoint>,
    /// Where integration stopped on a vanishing denominator.
    pub singular_at: Option<f64>,
}

impl OdeTrack {
    /// `g` at a grid point within `1e-9` of `x`.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.x_grid
            .iter()
            .position(|&xi| (xi - x).abs() <= 1e-9)
            .map(|i| self.g_ode[i])
    }
}

/// Fixed-step RK4 from `x_start` down (or up) to `x_end`. The step is
/// shrunk slightly so the grid lands on `x_end` exactly.
pub fn integrate_rhs<F>(x_start: f64, x_end: f64, g_start: f64, h: f64, rhs: F) -> OdeTrack
where
    F: Fn(f64, f64) -> Result<f64>,
{
    let span = x_end - x_start;
    let n = ((span.abs() / h.abs()).ceil() as usize).max(1);
    let step = span / n as f64;
    let mut x_grid = vec![x_start];
    let mut g_ode = vec![g_start];
    let mut rhs_values = Vec::new();
    let mut singular_at = None;
    let mut g = g_start;
    for i in 0..n {
        let x = x_start + step * i as f64;
        let stages = (|| -> Result<(f64, f64)> {
            let k1 = rhs(x, g)?;
            let k2 = rhs(x + 0.5 * step, g + 0.5 * step * k1)?;
            let k3 = rhs(x + 0.5 * step, g + 0.5 * step * k2)?;
            let k4 = rhs(x + step, g + step * k3)?;
            Ok((k1, g + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))
        })();
        match stages {
            Ok((k1, next)) => {
                rhs_values.push(k1);
                g = next;
                x_grid.push(x_start + step * (i + 1) as f64);
                g_ode.push(g);
            }
            Err(Error::FlowSingularity { x: xs, .. }) => {
                singular_at = Some(xs);
                break;
            }
            Err(_) => {
                singular_at = Some(x);
                break;
            }
        }
    }
    if rhs_values.len() < x_grid.len() {
        let x_last = *x_grid.last().unwrap();
        match rhs(x_last, g) {
            Ok(r) => rhs_values.push(r),
            Err(_) => {
                x_grid.pop();
                g_ode.pop();
                if singular_at.is_none() {
                    singular_at = Some(x_last);
                }
            }
        }
    }
    OdeTrack {
        x_grid,
        g_ode,
        rhs_values,
        fixed_points: Vec::new(),
        singular_at,
    }
}

/// Integrates the continuum flow from `x = N` (with `g(N) = g^(N)`) down to
/// the last dimension the discrete flow reached.
pub fn integrate_flow_ode(trajectory: &FlowTrajectory, config: &OdeConfig) -> Result<OdeTrack> {
    if trajectory.steps.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "the continuum flow needs at least 4 reduction steps, got {}",
            trajectory.steps.len()
        )));
    }
    let interp = CoefficientInterpolant::from_samples(&trajectory.coefficient_track)?;
    let x_start = trajectory.dimension as f64;
    let x_end = trajectory.last_k() as f64;
    let mut track = integrate_rhs(x_start, x_end, trajectory.initial_coupling(), config.h, |x, g| {
        continuum_rhs(x, g, &interp, config.variant, config.singular_floor)
    });
    track.fixed_points = detect_fixed_points(&track, config.fixed_point_tol, None);
    Ok(track)
}

fn dlambda_dg(model: &HamiltonianModel, x: f64, g: f64) -> Option<f64> {
    let k = (x.round() as usize).clamp(2, model.dim());
    let m = model.truncate(k).ok()?;
    let delta = 1e-5 * g.abs().max(1.0);
    let lam = |gg: f64| {
        dense_spectrum(&m.hamiltonian_matrix(Some(gg)))
            .ok()
            .map(|s| s.eigenvalues[0])
    };
    Some((lam(g + delta)? - lam(g - delta)?) / (2.0 * delta))
}

/// Points where `|dg/dx| <= tol * max|dg/dx|`. Runs of two or more such
/// samples are reported as one sustained interval; single samples and sign
/// changes between neighbouring samples as isolated crossings.
pub fn detect_fixed_points(track: &OdeTrack, tol: f64, model: Option<&HamiltonianModel>) -> Vec<FixedPoint> {
    let n = track.rhs_values.len().min(track.x_grid.len());
    if n == 0 {
        return Vec::new();
    }
    let rhs = &track.rhs_values[..n];
    let scale = rhs.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let threshold = tol * scale;
    let small: Vec<bool> = rhs.iter().map(|r| r.abs() <= threshold).collect();
    let annotate = |x: f64, g: f64| model.and_then(|m| dlambda_dg(m, x, g));

    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if small[i] {
            let start = i;
            while i + 1 < n && small[i + 1] {
                i += 1;
            }
            let (x, g) = (track.x_grid[start], track.g_ode[start]);
            let kind = if i > start {
                FixedPointKind::SustainedZero { x_end: track.x_grid[i] }
            } else {
                FixedPointKind::Crossing
            };
            out.push(FixedPoint {
                x,
                g,
                kind,
                dlambda_dg: annotate(x, g),
            });
        } else if i + 1 < n && !small[i + 1] && rhs[i].signum() != rhs[i + 1].signum() {
            let t = rhs[i] / (rhs[i] - rhs[i + 1]);
            let x = track.x_grid[i] + t * (track.x_grid[i + 1] - track.x_grid[i]);
            let g = track.g_ode[i] + t * (track.g_ode[i + 1] - track.g_ode[i]);
            out.push(FixedPoint {
                x,
                g,
                kind: FixedPointKind::Crossing,
                dlambda_dg: annotate(x, g),
            });
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(f: impl Fn(f64) -> (f64, f64, f64)) -> Vec<CoefficientSample> {
        (5..=50)
            .map(|k| {
                let x = k as f64;
                let (a, b, c) = f(x);
                CoefficientSample { x, a, b, c }
            })
            .collect()
    }

    #[test]
    fn constant_coefficients_have_zero_rhs() {
        let interp = CoefficientInterpolant::from_samples(&samples(|_| (0.3, -1.0, 0.2))).unwrap();
        for variant in [Variant::Literal, Variant::Derived] {
            for g in [-1.0, 0.0, 0.5, 2.0] {
                assert_eq!(continuum_rhs(17.3, g, &interp, variant, 1e-12).unwrap(), 0.0);
            }
        }
        let track = integrate_rhs(50.0, 5.0, 0.5, 0.25, |x, g| {
            continuum_rhs(x, g, &interp, Variant::Derived, 1e-12)
        });
        assert!(track.g_ode.iter().all(|&g| g == 0.5));
        let fps = detect_fixed_points(&track, 1e-6, None);
        assert_eq!(fps.len(), 1);
        assert_eq!(fps[0].x, 50.0);
        assert_eq!(fps[0].kind, FixedPointKind::SustainedZero { x_end: 5.0 });
    }

    #[test]
    fn linear_synthetic_literal_form() {
        let interp = CoefficientInterpolant::from_samples(&samples(|x| (0.0, 1.0, x))).unwrap();
        let r = continuum_rhs(20.0, 0.3, &interp, Variant::Literal, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let track = integrate_rhs(50.0, 5.0, 0.5, 0.25, |x, g| {
            continuum_rhs(x, g, &interp, Variant::Literal, 1e-12)
        });
        for (x, g) in track.x_grid.iter().zip(&track.g_ode) {
            assert!((g - (0.5 + (x - 50.0))).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_synthetic_derived_form_follows_root() {
        // g + x = 0 is the root curve, so dg/dx = -1
        let interp = CoefficientInterpolant::from_samples(&samples(|x| (0.0, 1.0, x))).unwrap();
        let r = continuum_rhs(20.0, -20.0, &interp, Variant::Derived, 1e-12).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        let track = integrate_rhs(50.0, 5.0, -50.0, 0.25, |x, g| {
            continuum_rhs(x, g, &interp, Variant::Derived, 1e-12)
        });
        for (x, g) in track.x_grid.iter().zip(&track.g_ode) {
            assert!((g + x).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_denominator_stops_integration() {
        // 2 a g + b with a = 1, b = -1 vanishes at g = 1/2
        let interp = CoefficientInterpolant::from_samples(&samples(|x| (1.0, -1.0, 0.01 * x))).unwrap();
        assert!(matches!(
            continuum_rhs(10.0, 0.5, &interp, Variant::Derived, 1e-12),
            Err(Error::FlowSingularity { .. })
        ));
        let track = integrate_rhs(50.0, 5.0, 0.5, 0.25, |x, g| {
            continuum_rhs(x, g, &interp, Variant::Derived, 1e-12)
        });
        assert_eq!(track.singular_at, Some(50.0));
        assert_eq!(track.x_grid.len(), track.rhs_values.len());
    }

    #[test]
    fn single_fixed_point() {
        let track = integrate_rhs(50.0, 5.0, 0.0, 0.25, |x, _| Ok(x - 25.0));
        let fps = detect_fixed_points(&track, 1e-6, None);
        assert_eq!(fps.len(), 1);
        assert!((fps[0].x - 25.0).abs() < 1e-12);
        assert_eq!(fps[0].kind, FixedPointKind::Crossing);

        // grid that straddles the zero
        let track = integrate_rhs(50.0, 5.0, 0.0, 0.3, |x, _| Ok(x - 25.0));
        let fps = detect_fixed_points(&track, 1e-6, None);
        assert_eq!(fps.len(), 1);
        assert!((fps[0].x - 25.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_point_annotation() {
        let m = HamiltonianModel::model_a(0.0);
        let track = integrate_rhs(3.0, 2.0, 0.0, 0.25, |_, _| Ok(0.0));
        let fps = detect_fixed_points(&track, 1e-6, Some(&m));
        assert_eq!(fps.len(), 1);
        // lambda_1 is stationary at g = 0 for MODEL-A (second-order shift only)
        assert!(fps[0].dlambda_dg.unwrap().abs() < 1e-8);
    }

    #[test]
    fn empty_track() {
        let track = OdeTrack {
            x_grid: vec![],
            g_ode: vec![],
            rhs_values: vec![],
            fixed_points: vec![],
            singular_at: None,
        };
        assert!(detect_fixed_points(&track, 1e-6, None).is_empty());
    }
}
