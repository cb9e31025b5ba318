//! Finite temperature: Trotter partition functions, their polynomial
//! structure in `g`, partition-function matching under truncation, and the
//! thermal flow equation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen::dense_spectrum;
use crate::error::{Error, Result};
use crate::flow::spline::CubicSpline;
use crate::model::HamiltonianModel;

/// Largest Trotter order for which the coefficients `h_i` are extracted.
pub const EXPLICIT_ORDER_CAP: usize = 12;

/// Gershgorin bound on the spectral radius of a symmetric matrix.
pub fn gershgorin_radius(h: &DMatrix<f64>) -> f64 {
    h.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_safety(h: &DMatrix<f64>, beta: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("Trotter order must be at least 1".into()));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let rho = gershgorin_radius(h);
    let bound = beta * rho / n as f64;
    if !(bound < 1.0) {
        return Err(Error::TrotterUnstable { beta, rho, n, bound });
    }
    Ok(())
}

fn matrix_power(m: &DMatrix<f64>, mut e: usize) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// `Tr(M^n)` and `Tr(M^{n-1} D)` with `M = I - beta H / n`, without the
/// safety check. With `D = V` the second value times `-beta` is `dZ/dg`.
fn trotter_trace_unchecked(h: &DMatrix<f64>, d: Option<&DMatrix<f64>>, beta: f64, n: usize) -> (f64, f64) {
    let k = h.nrows();
    let m = DMatrix::identity(k, k) - h * (beta / n as f64);
    let p = matrix_power(&m, n - 1);
    let z = p.component_mul(&m).sum();
    let dz = d.map_or(0.0, |d| p.component_mul(d).sum());
    (z, dz)
}

/// `Tr(I - beta H / n)^n` for an arbitrary symmetric matrix.
pub fn trotter_trace(h: &DMatrix<f64>, beta: f64, n: usize) -> Result<f64> {
    check_safety(h, beta, n)?;
    Ok(trotter_trace_unchecked(h, None, beta, n).0)
}

/// `Tr exp(-beta H)` for an arbitrary symmetric matrix.
pub fn exact_trace(h: &DMatrix<f64>, beta: f64) -> Result<f64> {
    Ok(log_exact_trace(h, beta)?.exp())
}

/// `ln Tr exp(-beta H)`, with `exp(-beta lambda_1)` factored out.
pub fn log_exact_trace(h: &DMatrix<f64>, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let ev = dense_spectrum(h)?.eigenvalues;
    let l1 = ev[0];
    let s: f64 = ev.iter().map(|&l| (-beta * (l - l1)).exp()).sum();
    Ok(-beta * l1 + s.ln())
}

pub fn exact_partition(model: &HamiltonianModel, beta: f64) -> Result<f64> {
    exact_trace(&model.hamiltonian_matrix(None), beta)
}

pub fn log_exact_partition(model: &HamiltonianModel, beta: f64) -> Result<f64> {
    log_exact_trace(&model.hamiltonian_matrix(None), beta)
}

pub fn trotter_partition(model: &HamiltonianModel, beta: f64, n: usize, g_override: Option<f64>) -> Result<f64> {
    trotter_trace(&model.hamiltonian_matrix(g_override), beta, n)
}

/// `Z` and `dZ/dg = -beta Tr[(I - beta H/n)^{n-1} V]` at coupling `g`.
pub fn trotter_partition_with_derivative(model: &HamiltonianModel, beta: f64, n: usize, g: f64) -> Result<(f64, f64)> {
    let h = model.hamiltonian_matrix(Some(g));
    check_safety(&h, beta, n)?;
    let (z, t) = trotter_trace_unchecked(&h, Some(model.v()), beta, n);
    Ok((z, -beta * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    Explicit,
    Implicit,
}

/// `Z(g) = sum_i h_i g^i` for the order-`n` Trotter kernel of one model.
///
/// In implicit mode `h` is empty and evaluation goes through the matrix
/// power directly. Neither mode applies the safety bound: the polynomial is
/// defined for every `g`, only its use as an approximation to `Tr e^{-beta H}`
/// needs it.
#[derive(Debug, Clone)]
pub struct PartitionPoly {
    pub beta: f64,
    pub n: usize,
    pub k: usize,
    pub h: Vec<f64>,
    pub extraction: Extraction,
    model: HamiltonianModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Fit nodes are Chebyshev points on `[-half_width, half_width]`.
    pub half_width: f64,
    /// Allowed change of `h_i |g|^i` under a node shift, relative to
    /// `sum_j |h_j| half_width^j`.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            tolerance: 1e-8,
        }
    }
}

fn chebyshev_nodes(count: usize, half_width: f64, shift: f64) -> Vec<f64> {
    (0..count)
        .map(|j| {
            let t = std::f64::consts::PI * (j as f64 + 0.5 + shift) / count as f64;
            half_width * t.cos()
        })
        .collect()
}

fn fit_coefficients(model: &HamiltonianModel, beta: f64, n: usize, nodes: &[f64]) -> Option<Vec<f64>> {
    let m = nodes.len();
    let vander = DMatrix::from_fn(m, m, |r, c| nodes[r].powi(c as i32));
    let rhs = DVector::from_iterator(
        m,
        nodes
            .iter()
            .map(|&g| trotter_trace_unchecked(&model.hamiltonian_matrix(Some(g)), None, beta, n).0),
    );
    vander.lu().solve(&rhs).map(|s| s.iter().copied().collect())
}

impl PartitionPoly {
    /// Explicit coefficients for `n <= EXPLICIT_ORDER_CAP` when the fit is
    /// stable under a shift of the nodes, implicit evaluation otherwise.
    pub fn extract(model: &HamiltonianModel, beta: f64, n: usize, fit: &FitConfig) -> Result<Self> {
        match Self::explicit(model, beta, n, fit) {
            Ok(p) => Ok(p),
            Err(Error::IllConditioned { residual }) => {
                log::debug!("coefficient fit rejected (residual {residual:e}), using implicit mode");
                Self::implicit(model, beta, n)
            }
            Err(Error::InvalidArgument(_)) if n > EXPLICIT_ORDER_CAP => Self::implicit(model, beta, n),
            Err(e) => Err(e),
        }
    }

    pub fn implicit(model: &HamiltonianModel, beta: f64, n: usize) -> Result<Self> {
        if n == 0 || !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need n >= 1 and beta > 0 (n = {n}, beta = {beta})"
            )));
        }
        Ok(Self {
            beta,
            n,
            k: model.dim(),
            h: Vec::new(),
            extraction: Extraction::Implicit,
            model: model.clone(),
        })
    }

    pub fn explicit(model: &HamiltonianModel, beta: f64, n: usize, fit: &FitConfig) -> Result<Self> {
        if n == 0 || n > EXPLICIT_ORDER_CAP || !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "explicit coefficients need 1 <= n <= {EXPLICIT_ORDER_CAP} and beta > 0 (n = {n}, beta = {beta})"
            )));
        }
        let w = fit.half_width;
        let h = fit_coefficients(model, beta, n, &chebyshev_nodes(n + 1, w, 0.0)).ok_or(Error::IllConditioned {
            residual: f64::INFINITY,
        })?;
        let shifted =
            fit_coefficients(model, beta, n, &chebyshev_nodes(n + 1, w, 0.37)).ok_or(Error::IllConditioned {
                residual: f64::INFINITY,
            })?;
        let scale: f64 = h.iter().enumerate().map(|(i, c)| c.abs() * w.powi(i as i32)).sum();
        let residual = h
            .iter()
            .zip(&shifted)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * w.powi(i as i32))
            .fold(0.0, f64::max)
            / scale.max(f64::MIN_POSITIVE);
        if !(residual <= fit.tolerance) {
            return Err(Error::IllConditioned { residual });
        }
        Ok(Self {
            beta,
            n,
            k: model.dim(),
            h,
            extraction: Extraction::Explicit,
            model: model.clone(),
        })
    }

    pub fn evaluate(&self, g: f64) -> f64 {
        match self.extraction {
            Extraction::Explicit => self.h.iter().rev().fold(0.0, |acc, c| acc * g + c),
            Extraction::Implicit => {
                trotter_trace_unchecked(&self.model.hamiltonian_matrix(Some(g)), None, self.beta, self.n).0
            }
        }
    }

    pub fn derivative(&self, g: f64) -> f64 {
        match self.extraction {
            Extraction::Explicit => self
                .h
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, c)| acc * g + i as f64 * c),
            Extraction::Implicit => {
                let h = self.model.hamiltonian_matrix(Some(g));
                -self.beta * trotter_trace_unchecked(&h, Some(self.model.v()), self.beta, self.n).1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalConfig {
    pub beta: f64,
    pub n: usize,
    /// Half-width of the root scan around `g_k`; `None` means `|g_k| + 2`.
    pub scan_radius: Option<f64>,
    pub scan_points: usize,
    /// Accepted `|Z^(k-1)(g') - Z_t| / Z_t`.
    pub residual_tol: f64,
    pub newton_max_iter: usize,
}

impl ThermalConfig {
    pub fn new(beta: f64, n: usize) -> Self {
        Self {
            beta,
            n,
            scan_radius: None,
            scan_points: 512,
            residual_tol: 1e-10,
            newton_max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalStep {
    pub k_from: usize,
    pub k_to: usize,
    pub beta: f64,
    pub n: usize,
    pub g_in: f64,
    pub g_out: f64,
    pub z_target: f64,
    pub z_matched: f64,
    /// `|z_matched - z_target|`.
    pub residual: f64,
}

/// Newton on `f(g) = Z(g) - target` from `g0`, each step clipped to `max_step`.
fn newton(
    f: &dyn Fn(f64) -> Result<(f64, f64)>,
    g0: f64,
    target: f64,
    tol: f64,
    max_step: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut g = g0;
    for _ in 0..max_iter {
        let (z, dz) = f(g).ok()?;
        let r = z - target;
        if r.abs() <= tol {
            return Some(g);
        }
        if dz == 0.0 || !dz.is_finite() {
            return None;
        }
        let step = (r / dz).clamp(-max_step, max_step);
        if step.abs() <= 4.0 * f64::EPSILON * g.abs().max(1.0) {
            return (r.abs() <= 1e3 * tol).then_some(g);
        }
        g -= step;
    }
    None
}

/// Solves `Z^(k-1)(g') = Z^(k)(g_k)` for the coupling of the truncated model.
pub fn thermal_reduction_step(model: &HamiltonianModel, config: &ThermalConfig) -> Result<ThermalStep> {
    let k = model.dim();
    if k < 3 {
        return Err(Error::DimensionMismatch(format!(
            "a thermal step needs k >= 3 so that the reduced space keeps two states, got k = {k}"
        )));
    }
    let (beta, n) = (config.beta, config.n);
    let g_k = model.g();
    let z_target = trotter_partition(model, beta, n, None)?;
    let small = model.truncate(k - 1)?;
    trotter_partition(&small, beta, n, Some(g_k))?;
    let tol = config.residual_tol * z_target;
    let radius = config.scan_radius.unwrap_or(g_k.abs() + 2.0);
    let eval = |g: f64| trotter_partition_with_derivative(&small, beta, n, g);

    // tighter than the acceptance tolerance so roundoff cannot push it over
    let polish_tol = 1e-3 * tol;
    let mut g_out = newton(&eval, g_k, z_target, polish_tol, 0.25 * radius, config.newton_max_iter)
        .filter(|g| (g - g_k).abs() <= radius);

    if g_out.is_none() {
        let m = config.scan_points.max(2);
        let grid: Vec<f64> = (0..m)
            .map(|i| g_k - radius + 2.0 * radius * i as f64 / (m - 1) as f64)
            .collect();
        let vals: Vec<Option<f64>> = grid
            .iter()
            .map(|&g| trotter_partition(&small, beta, n, Some(g)).ok().map(|z| z - z_target))
            .collect();
        let mut roots = Vec::new();
        for i in 0..m - 1 {
            let (Some(fa), Some(fb)) = (vals[i], vals[i + 1]) else {
                continue;
            };
            if fa == 0.0 {
                roots.push(grid[i]);
            } else if fa.signum() != fb.signum() {
                let (mut lo, mut hi, mut flo) = (grid[i], grid[i + 1], fa);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let Ok(fm) = trotter_partition(&small, beta, n, Some(mid)).map(|z| z - z_target) else {
                        break;
                    };
                    if fm.abs() <= polish_tol {
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
                }
                roots.push(0.5 * (lo + hi));
            }
        }
        g_out = roots
            .into_iter()
            .min_by(|a, b| (a - g_k).abs().total_cmp(&(b - g_k).abs()));
    }

    let g_out = g_out.ok_or(Error::NoThermalRoot {
        lo: g_k - radius,
        hi: g_k + radius,
        target: z_target,
    })?;
    let z_matched = trotter_partition(&small, beta, n, Some(g_out))?;
    Ok(ThermalStep {
        k_from: k,
        k_to: k - 1,
        beta,
        n,
        g_in: g_k,
        g_out,
        z_target,
        z_matched,
        residual: (z_matched - z_target).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalTrajectory {
    pub dimension: usize,
    pub k_min: usize,
    pub beta: f64,
    pub n: usize,
    pub steps: Vec<ThermalStep>,
    pub g_of_k: BTreeMap<usize, f64>,
    pub breakdown_at: Option<usize>,
    pub breakdown_reason: Option<String>,
}

pub fn run_thermal_flow(model: &HamiltonianModel, k_min: usize, config: &ThermalConfig) -> Result<ThermalTrajectory> {
    let n_dim = model.dim();
    if k_min < 2 || k_min >= n_dim {
        return Err(Error::DimensionMismatch(format!(
            "k_min = {k_min} must satisfy 2 <= k_min < N = {n_dim}"
        )));
    }
    trotter_partition(model, config.beta, config.n, None)?;
    let mut g_of_k = BTreeMap::from([(n_dim, model.g())]);
    let mut steps = Vec::new();
    let mut breakdown_at = None;
    let mut breakdown_reason = None;
    let mut current = model.clone();
    for k in ((k_min + 1)..=n_dim).rev() {
        match thermal_reduction_step(&current, config) {
            Ok(step) => {
                current = current.truncate(k - 1)?.with_coupling(step.g_out);
                g_of_k.insert(k - 1, step.g_out);
                steps.push(step);
            }
            Err(e) => {
                log::info!("thermal flow stopped at k = {k}: {e}");
                breakdown_at = Some(k);
                breakdown_reason = Some(e.to_string());
                break;
            }
        }
    }
    Ok(ThermalTrajectory {
        dimension: n_dim,
        k_min,
        beta: config.beta,
        n: config.n,
        steps,
        g_of_k,
        breakdown_at,
        breakdown_reason,
    })
}

/// Splines of the coefficients `h_i(x)` through the explicit polynomials
/// of consecutive truncations.
#[derive(Debug, Clone)]
pub struct ThermalInterpolant {
    h: Vec<CubicSpline>,
}

impl ThermalInterpolant {
    pub fn from_polys(polys: &[PartitionPoly]) -> Result<Self> {
        let order = polys.first().map(|p| p.h.len()).unwrap_or(0);
        if order == 0
            || polys
                .iter()
                .any(|p| p.extraction != Extraction::Explicit || p.h.len() != order)
        {
            return Err(Error::InvalidArgument(
                "thermal interpolant needs explicit coefficients of a common order".into(),
            ));
        }
        let h = (0..order)
            .map(|i| {
                let pts: Vec<(f64, f64)> = polys.iter().map(|p| (p.k as f64, p.h[i])).collect();
                CubicSpline::new(&pts)
            })
            .collect::<Result<_>>()?;
        Ok(Self { h })
    }

    /// Explicit polynomials of every truncation `k_min..=N`.
    pub fn for_model(model: &HamiltonianModel, k_min: usize, beta: f64, n: usize, fit: &FitConfig) -> Result<Self> {
        let polys = (k_min.max(2)..=model.dim())
            .map(|k| PartitionPoly::explicit(&model.truncate(k)?, beta, n, fit))
            .collect::<Result<Vec<_>>>()?;
        Self::from_polys(&polys)
    }

    /// Coefficients `h_i(x) = f(i, x)` sampled at `knots`.
    pub fn from_fn(order: usize, knots: &[f64], f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let h = (0..order)
            .map(|i| CubicSpline::new(&knots.iter().map(|&x| (x, f(i, x))).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(Self { h })
    }
}

/// `dg/dx = -(sum_i h_i'(x) g^i) / (sum_i i h_i(x) g^{i-1})`.
pub fn thermal_flow_rhs(x: f64, g: f64, interp: &ThermalInterpolant, singular_floor: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut den_scale = 0.0;
    for (i, s) in interp.h.iter().enumerate().rev() {
        num = num * g + s.derivative(x);
        if i > 0 {
            let term = i as f64 * s.eval(x);
            den = den * g + term;
            den_scale = den_scale * g.abs() + term.abs();
        }
    }
    if !(den.abs() > singular_floor * den_scale) {
        return Err(Error::FlowSingularity { x, denominator: den });
    }
    Ok(-num / den)
}

/// `-dZ/dx / dZ/dg` with `Z(x, g)` and `dZ/dg` splined over the truncations
/// `k_min..=N` at fixed `g`. Works for any Trotter order; each call evaluates
/// every truncation once. Agrees with [`thermal_flow_rhs`] when both apply.
pub fn thermal_flow_rhs_implicit(
    model: &HamiltonianModel,
    k_min: usize,
    beta: f64,
    n: usize,
    x: f64,
    g: f64,
    singular_floor: f64,
) -> Result<f64> {
    let ks = k_min.max(2)..=model.dim();
    let mut z = Vec::new();
    let mut dz = Vec::new();
    for k in ks {
        let (a, b) = trotter_partition_with_derivative(&model.truncate(k)?, beta, n, g)?;
        z.push((k as f64, a));
        dz.push((k as f64, b));
    }
    let z_x = CubicSpline::new(&z)?.derivative(x);
    let z_g = CubicSpline::new(&dz)?.eval(x);
    let scale = dz.iter().fold(0.0_f64, |m, v| m.max(v.1.abs()));
    if !(z_g.abs() > singular_floor * scale) {
        return Err(Error::FlowSingularity { x, denominator: z_g });
    }
    Ok(-z_x / z_g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub beta: f64,
    /// `-(1/beta) ln Z`.
    pub free_energy: f64,
    pub lambda1: f64,
    /// `lambda1 - free_energy`, which is non-negative.
    pub gap: f64,
}

/// Free energy against the ground-state energy for increasing `beta`.
pub fn beta_limit_check(model: &HamiltonianModel, betas: &[f64]) -> Result<Vec<GapRow>> {
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("beta list must be strictly ascending".into()));
    }
    let ev = dense_spectrum(&model.hamiltonian_matrix(None))?.eigenvalues;
    let l1 = ev[0];
    betas
        .iter()
        .map(|&beta| {
            if !(beta > 0.0) {
                return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
            }
            // ln sum exp(-beta (lambda_i - lambda_1)), all terms <= 1
            let s: f64 = ev.iter().skip(1).map(|&l| (-beta * (l - l1)).exp()).sum();
            let gap = s.ln_1p() / beta;
            Ok(GapRow {
                beta,
                free_energy: l1 - gap,
                lambda1: l1,
                gap,
            })
        })
        .collect()
}
