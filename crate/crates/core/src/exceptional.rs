//! Exceptional points of `H(g)` in the complex coupling plane, real-axis
//! level crossings, and their relation to fixed points of the flow.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddouble::{aberth, char_poly, taylor_shift, Cdd, Dd};
use crate::eigen::dense_spectrum;
use crate::error::{Error, Result};
use crate::flow::{FixedPoint, OdeTrack};
use crate::model::HamiltonianModel;

type C = Complex64;

fn complex_hamiltonian(model: &HamiltonianModel, g: C) -> DMatrix<C> {
    let n = model.dim();
    let v = model.v();
    let eps = model.epsilon();
    DMatrix::from_fn(n, n, |i, j| {
        let h0 = if i == j { eps[i] } else { 0.0 };
        C::new(h0, 0.0) + g * v[(i, j)]
    })
}

/// Eigenvalues of the complex symmetric `H(g)`, sorted by real then
/// imaginary part.
pub fn complex_eigenvalues(model: &HamiltonianModel, g: C) -> Result<Vec<C>> {
    let h = complex_hamiltonian(model, g);
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite coupling {g}")));
    }
    let schur = Schur::try_new(h, f64::EPSILON, 10_000).ok_or(Error::NoConvergence {
        iterations: 10_000,
        best_residual: f64::NAN,
    })?;
    let (_, t) = schur.unpack();
    let mut ev: Vec<C> = t.diagonal().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecularValue {
    /// `det(H(g) - lambda I)` by LU with partial pivoting.
    pub f: C,
    /// `df/dlambda = -sum_j prod_{i != j} (lambda_i - lambda)`.
    pub dfdl: C,
}

pub fn secular_value(model: &HamiltonianModel, g: C, lambda: C) -> Result<SecularValue> {
    let n = model.dim();
    let m = complex_hamiltonian(model, g) - DMatrix::<C>::identity(n, n) * lambda;
    let f = m.lu().determinant();
    let ev = complex_eigenvalues(model, g)?;
    let dfdl = lambda_derivatives(&ev, lambda)[1];
    Ok(SecularValue { f, dfdl })
}

/// `f` and its first three `lambda` derivatives from the eigenvalues.
fn lambda_derivatives(ev: &[C], lambda: C) -> [C; 4] {
    // Taylor coefficients of prod_i (d_i - t) in t, truncated after t^3
    let zero = C::new(0.0, 0.0);
    let mut p = [C::new(1.0, 0.0), zero, zero, zero];
    for &mu in ev {
        let d = mu - lambda;
        p = [p[0] * d, p[1] * d - p[0], p[2] * d - p[1], p[3] * d - p[2]];
    }
    [p[0], p[1], 2.0 * p[2], 6.0 * p[3]]
}

/// `df/dg = f Tr[(H - lambda I)^{-1} V]` (Jacobi's formula); `None` when
/// `H - lambda I` is numerically singular.
pub fn secular_dg(model: &HamiltonianModel, g: C, lambda: C) -> Option<C> {
    let n = model.dim();
    let m = complex_hamiltonian(model, g) - DMatrix::<C>::identity(n, n) * lambda;
    let lu = m.lu();
    let f = lu.determinant();
    let inv = lu.try_inverse()?;
    let v = model.v().map(|x| C::new(x, 0.0));
    let t = (inv * v).trace();
    let r = f * t;
    (r.re.is_finite() && r.im.is_finite()).then_some(r)
}

/// Eigenvalues of `H(g)` as roots of its characteristic polynomial in
/// double-double arithmetic, sorted by distance from `center`.
///
/// `f64` eigensolvers resolve a cluster of `m` merging levels only to about
/// `eps^(1/m)`; here the polynomial is formed without divisions and
/// shifted to `center` before the roots are polished.
pub fn precise_eigenvalues(model: &HamiltonianModel, g: C, center: C) -> Result<Vec<C>> {
    let n = model.dim();
    let (gr, gi) = (Dd::from_f64(g.re), Dd::from_f64(g.im));
    let a: Vec<Vec<Cdd>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = Dd::from_f64(model.v()[(i, j)]);
                    let h0 = if i == j { model.epsilon()[i] } else { 0.0 };
                    Cdd {
                        re: Dd::from_f64(h0) + gr * v,
                        im: gi * v,
                    }
                })
                .collect()
        })
        .collect();
    let c = Cdd::from_c64(center);
    let q = taylor_shift(&char_poly(&a), c);
    let guesses: Vec<C> = complex_eigenvalues(model, g)?.iter().map(|&mu| mu - center).collect();
    let mut roots: Vec<Cdd> = aberth(&q, &guesses, 500);
    roots.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    Ok(roots.into_iter().map(|t| (t + c).to_c64()).collect())
}

/// Distance between the two eigenvalues of `H(g)` nearest to `lambda`,
/// resolved in double-double arithmetic.
pub fn pair_gap(model: &HamiltonianModel, g: C, lambda: C) -> Result<f64> {
    let ev = precise_eigenvalues(model, g, lambda)?;
    Ok((ev[0] - ev[1]).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl SearchBox {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let b = Self {
            re_min,
            re_max,
            im_min,
            im_max,
        };
        let ok = [re_min, re_max, im_min, im_max].iter().all(|x| x.is_finite()) && re_min <= re_max && im_min <= im_max;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid search box {b:?}")));
        }
        Ok(b)
    }

    fn contains(&self, g: C, slack: f64) -> bool {
        g.re >= self.re_min - slack
            && g.re <= self.re_max + slack
            && g.im >= self.im_min - slack
            && g.im <= self.im_max + slack
    }

    fn size(&self) -> f64 {
        (self.re_max - self.re_min).max(self.im_max - self.im_min).max(1e-3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    /// Seeds per axis (`[re, im]`).
    pub grid: [usize; 2],
    /// Acceptance bound on `|f|` and `|df/dlambda|`.
    pub residual_tol: f64,
    /// Acceptance bound on the gap between the two merging eigenvalues.
    pub pair_tol: f64,
    pub cluster_radius: f64,
    pub max_iter: usize,
    /// Seed only between adjacent pairs among this many lowest levels
    /// (by real part); `None` seeds every adjacent pair.
    pub seed_levels: Option<usize>,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            grid: [9, 9],
            residual_tol: 1e-9,
            pair_tol: 1e-6,
            cluster_radius: 1e-6,
            max_iter: 80,
            seed_levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalPoint {
    pub g_e: C,
    pub lambda_e: C,
    pub f_residual: f64,
    pub dfdl_residual: f64,
    /// Positions of the merging pair in the sorted eigenvalues of `H(g_e)`.
    pub pair_indices: (usize, usize),
    /// Index of the complex-conjugate partner in the same list.
    pub conjugate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpSearch {
    pub points: Vec<ExceptionalPoint>,
    pub seeds: usize,
    pub converged: usize,
    /// Converged seeds dropped as outside the box or failing validation.
    pub rejected: usize,
}

fn solve2(j: [[C; 2]; 2], r: [C; 2]) -> Option<[C; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det.norm() == 0.0 || !det.re.is_finite() {
        return None;
    }
    Some([
        (r[0] * j[1][1] - j[0][1] * r[1]) / det,
        (j[0][0] * r[1] - j[1][0] * r[0]) / det,
    ])
}

/// Derivatives `(d^order f, d^{order+1} f)` in `lambda` and their Jacobian
/// in `(g, lambda)`. The `lambda` column is analytic; the `g` column is a
/// central difference, which only affects the convergence rate.
fn system(model: &HamiltonianModel, g: C, lambda: C, order: usize) -> Result<([C; 2], [[C; 2]; 2])> {
    let at = |g: C| -> Result<[C; 4]> { Ok(lambda_derivatives(&complex_eigenvalues(model, g)?, lambda)) };
    let d0 = at(g)?;
    let h = 1e-6 * g.norm().max(1.0);
    let (dp, dm) = (at(g + h)?, at(g - h)?);
    let dg = |i: usize| (dp[i] - dm[i]) / (2.0 * h);
    let (o, p) = (order, order + 1);
    Ok(([d0[o], d0[p]], [[dg(o), d0[p]], [dg(p), d0[p + 1]]]))
}

/// Damped Newton on `system(order)`; `None` unless the residual drops
/// below `target`.
fn newton(
    model: &HamiltonianModel,
    mut g: C,
    mut lambda: C,
    order: usize,
    max_step: f64,
    target: f64,
    max_iter: usize,
) -> Option<(C, C)> {
    // once below target, a few more steps while the residual keeps falling
    let mut best: Option<(f64, C, C)> = None;
    let mut polish = 0;
    // abandon seeds whose residual stops shrinking
    let (mut lowest, mut since) = (f64::INFINITY, 0);
    for _ in 0..max_iter {
        let (r, j) = system(model, g, lambda, order).ok()?;
        let res = r[0].norm().max(r[1].norm());
        if res < 0.5 * lowest {
            (lowest, since) = (res, 0);
        } else {
            since += 1;
            if since >= 12 {
                break;
            }
        }
        if res <= target {
            match best {
                Some((b, ..)) if res >= b => break,
                _ => best = Some((res, g, lambda)),
            }
            polish += 1;
            if polish > 3 || res == 0.0 {
                break;
            }
        }
        let Some(mut step) = solve2(j, r) else { break };
        let len = step[0].norm().max(step[1].norm());
        if !len.is_finite() {
            break;
        }
        if len > max_step {
            let s = max_step / len;
            step = [step[0] * s, step[1] * s];
        }
        g -= step[0];
        lambda -= step[1];
    }
    best.map(|(_, g, l)| (g, l))
}

/// Newton on `f = f_lambda = 0`. Where three or more levels merge that
/// system has a singular Jacobian and converges only linearly, so points
/// with a small `f_lambda_lambda` (and seeds that fail outright) are
/// refined on `f_lambda = f_lambda_lambda = 0`, which stays regular there.
/// Refined points are kept only if `f` still vanishes.
fn locate(model: &HamiltonianModel, g: C, lambda: C, max_step: f64, cfg: &EpConfig) -> Option<(C, C)> {
    let target = 1e-3 * cfg.residual_tol;
    let higher = |g: C, l: C| -> Option<(C, C)> {
        let (g, l) = newton(model, g, l, 1, max_step, target, cfg.max_iter)?;
        let f = lambda_derivatives(&complex_eigenvalues(model, g).ok()?, l)[0];
        (f.norm() <= target).then_some((g, l))
    };
    match newton(model, g, lambda, 0, max_step, target, cfg.max_iter) {
        Some((g1, l1)) => {
            let d = lambda_derivatives(&complex_eigenvalues(model, g1).ok()?, l1);
            if d[2].norm() <= 1e-3 * d[3].norm().max(1.0) {
                higher(g1, l1).or(Some((g1, l1)))
            } else {
                Some((g1, l1))
            }
        }
        None => higher(g, lambda),
    }
}

fn validate(model: &HamiltonianModel, g: C, lambda: C, cfg: &EpConfig) -> Option<ExceptionalPoint> {
    let sv = secular_value(model, g, lambda).ok()?;
    let (f_res, dfdl_res) = (sv.f.norm(), sv.dfdl.norm());
    if !(f_res <= cfg.residual_tol && dfdl_res <= cfg.residual_tol) {
        return None;
    }
    let ev = complex_eigenvalues(model, g).ok()?;
    let mut order: Vec<usize> = (0..ev.len()).collect();
    order.sort_by(|&a, &b| (ev[a] - lambda).norm().total_cmp(&(ev[b] - lambda).norm()));
    let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));
    if !(pair_gap(model, g, lambda).ok()? <= cfg.pair_tol) {
        return None;
    }
    Some(ExceptionalPoint {
        g_e: g,
        lambda_e: lambda,
        f_residual: f_res,
        dfdl_residual: dfdl_res,
        pair_indices: (i, j),
        conjugate_of: None,
    })
}

fn seeds(model: &HamiltonianModel, b: &SearchBox, grid: [usize; 2], levels: Option<usize>) -> Vec<(C, C)> {
    let pairs = levels.map_or(usize::MAX, |l| l.saturating_sub(1));
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        if n <= 1 || lo == hi {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let mut out = Vec::new();
    for im in axis(b.im_min, b.im_max, grid[1]) {
        for re in axis(b.re_min, b.re_max, grid[0]) {
            let g = C::new(re, im);
            let Ok(ev) = complex_eigenvalues(model, g) else {
                continue;
            };
            for w in ev.windows(2).take(pairs) {
                out.push((g, 0.5 * (w[0] + w[1])));
            }
        }
    }
    out
}

/// Grid-seeded damped Newton on `f = df/dlambda = 0` over the box. The
/// result is sorted by real then imaginary part of `g_e`, and closed under
/// conjugation where the partner lies in the box.
pub fn find_exceptional_points(model: &HamiltonianModel, search_box: &SearchBox, cfg: &EpConfig) -> EpSearch {
    let seeds = seeds(model, search_box, cfg.grid, cfg.seed_levels);
    let max_step = 0.25 * search_box.size();
    let slack = cfg.cluster_radius;
    let results: Vec<Option<(C, C)>> = seeds
        .par_iter()
        .map(|&(g, l)| locate(model, g, l, max_step, cfg))
        .collect();
    let converged = results.iter().filter(|r| r.is_some()).count();
    let mut found: Vec<ExceptionalPoint> = Vec::new();
    let mut rejected = 0;
    for (g, l) in results.into_iter().flatten() {
        if !search_box.contains(g, slack) {
            rejected += 1;
            continue;
        }
        match validate(model, g, l, cfg) {
            Some(ep) => found.push(ep),
            None => rejected += 1,
        }
    }
    // conjugate partners: f(conj g, conj lambda) = conj f(g, lambda) for real H0, V
    let partners: Vec<ExceptionalPoint> = found
        .iter()
        .filter(|ep| ep.g_e.im.abs() > slack && search_box.contains(ep.g_e.conj(), slack))
        .filter_map(|ep| validate(model, ep.g_e.conj(), ep.lambda_e.conj(), cfg))
        .collect();
    found.extend(partners);
    found.sort_by(|a, b| {
        a.g_e
            .re
            .total_cmp(&b.g_e.re)
            .then(a.g_e.im.total_cmp(&b.g_e.im))
            .then(a.lambda_e.re.total_cmp(&b.lambda_e.re))
            .then(a.lambda_e.im.total_cmp(&b.lambda_e.im))
    });
    let mut points: Vec<ExceptionalPoint> = Vec::new();
    for ep in found {
        let dup = points.iter_mut().find(|p| {
            (p.g_e - ep.g_e).norm() <= cfg.cluster_radius * p.g_e.norm().max(1.0)
                && (p.lambda_e - ep.lambda_e).norm() <= 1e3 * cfg.cluster_radius * p.lambda_e.norm().max(1.0)
        });
        match dup {
            Some(p) if ep.f_residual + ep.dfdl_residual < p.f_residual + p.dfdl_residual => *p = ep,
            Some(_) => {}
            None => points.push(ep),
        }
    }
    for i in 0..points.len() {
        if points[i].g_e.im.abs() <= slack {
            continue;
        }
        let target = points[i].g_e.conj();
        points[i].conjugate_of = points
            .iter()
            .position(|p| (p.g_e - target).norm() <= cfg.cluster_radius * target.norm().max(1.0));
    }
    EpSearch {
        points,
        seeds: seeds.len(),
        converged,
        rejected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMinimum {
    pub g: f64,
    pub gap: f64,
    /// Index `i` of the pair `(lambda_i, lambda_{i+1})` realising the gap.
    pub lower_level: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub scan_grid: Vec<f64>,
    /// Smallest adjacent eigenvalue gap at each grid point.
    pub gap_of_g: Vec<f64>,
    /// Local minima of the gap, refined by golden-section search.
    pub avoided_minima: Vec<GapMinimum>,
    /// Refined minima whose gap is below the degeneracy tolerance.
    pub degenerate_hits: Vec<f64>,
    /// `|lambda_1(g) - H_kk(g)|`, the Feshbach denominator gap.
    pub feshbach_gap: Vec<f64>,
    /// Degeneracy tolerance used, `1e-10` times the energy scale.
    pub degeneracy_tol: f64,
}

impl CrossingReport {
    /// Grid rows merged with refined minima, ascending in `g`:
    /// `(g, min_gap, is_avoided_min, is_degenerate)`.
    pub fn rows(&self) -> Vec<(f64, f64, bool, bool)> {
        let mut rows: Vec<(f64, f64, bool, bool)> = self
            .scan_grid
            .iter()
            .zip(&self.gap_of_g)
            .map(|(&g, &gap)| (g, gap, false, gap < self.degeneracy_tol))
            .collect();
        rows.extend(self.avoided_minima.iter().map(|m| (m.g, m.gap, true, m.degenerate)));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.cmp(&a.2)));
        rows
    }
}

fn level_gap(model: &HamiltonianModel, g: f64, level: usize) -> f64 {
    dense_spectrum(&model.hamiltonian_matrix(Some(g)))
        .map(|s| s.eigenvalues[level + 1] - s.eigenvalues[level])
        .unwrap_or(f64::INFINITY)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

pub fn scan_real_axis(model: &HamiltonianModel, g_min: f64, g_max: f64, steps: usize) -> Result<CrossingReport> {
    if !(g_min < g_max) || steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "real-axis scan needs g_min < g_max and steps >= 2 (got [{g_min}, {g_max}], {steps})"
        )));
    }
    let k = model.dim();
    let grid: Vec<f64> = (0..steps)
        .map(|i| g_min + (g_max - g_min) * i as f64 / (steps - 1) as f64)
        .collect();
    let rows: Vec<(f64, usize, f64)> = grid
        .par_iter()
        .map(|&g| -> Result<(f64, usize, f64)> {
            let ev = dense_spectrum(&model.hamiltonian_matrix(Some(g)))?.eigenvalues;
            let (lvl, gap) = ev
                .as_slice()
                .windows(2)
                .enumerate()
                .map(|(i, w)| (i, w[1] - w[0]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            Ok((gap, lvl, (ev[0] - model.diagonal_element(k - 1, g)).abs()))
        })
        .collect::<Result<_>>()?;
    let gap_of_g: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let scale = model.energy_scale(g_min).max(model.energy_scale(g_max));
    let degeneracy_tol = 1e-10 * scale;

    let mut avoided_minima = Vec::new();
    for i in 1..steps - 1 {
        if gap_of_g[i] <= gap_of_g[i - 1] && gap_of_g[i] < gap_of_g[i + 1] {
            let level = rows[i].1;
            let (g, gap) = golden_section(|g| level_gap(model, g, level), grid[i - 1], grid[i + 1]);
            avoided_minima.push(GapMinimum {
                g,
                gap,
                lower_level: level,
                degenerate: gap < degeneracy_tol,
            });
        }
    }
    let degenerate_hits: Vec<f64> = avoided_minima.iter().filter(|m| m.degenerate).map(|m| m.g).collect();
    Ok(CrossingReport {
        scan_grid: grid,
        gap_of_g,
        avoided_minima,
        degenerate_hits,
        feshbach_gap: rows.iter().map(|r| r.2).collect(),
        degeneracy_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub x: f64,
    pub g_fixed: f64,
    pub nearest_degeneracy: Option<f64>,
    pub degeneracy_distance: Option<f64>,
    pub nearest_avoided_min: Option<f64>,
    pub avoided_min_distance: Option<f64>,
    /// Real part of the exceptional point closest in real part.
    pub nearest_ep_re: Option<f64>,
    pub ep_distance: Option<f64>,
    pub dlambda_dg: Option<f64>,
}

fn nearest(g: f64, candidates: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    candidates
        .map(|c| (c, (c - g).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
}

/// One row per fixed point of the flow: distances in `g` to the nearest
/// real-axis degeneracy, avoided-crossing minimum, and exceptional point.
pub fn fixed_vs_exceptional_report(
    track: &OdeTrack,
    eps: &[ExceptionalPoint],
    crossings: &CrossingReport,
) -> Vec<CorrelationRow> {
    correlate(&track.fixed_points, eps, crossings)
}

pub fn correlate(fixed: &[FixedPoint], eps: &[ExceptionalPoint], crossings: &CrossingReport) -> Vec<CorrelationRow> {
    fixed
        .iter()
        .map(|fp| {
            let deg = nearest(fp.g, crossings.degenerate_hits.iter().copied());
            let avoided = nearest(fp.g, crossings.avoided_minima.iter().map(|m| m.g));
            let ep = nearest(fp.g, eps.iter().map(|e| e.g_e.re));
            CorrelationRow {
                x: fp.x,
                g_fixed: fp.g,
                nearest_degeneracy: deg.map(|d| d.0),
                degeneracy_distance: deg.map(|d| d.1),
                nearest_avoided_min: avoided.map(|d| d.0),
                avoided_min_distance: avoided.map(|d| d.1),
                nearest_ep_re: ep.map(|d| d.0),
                ep_distance: ep.map(|d| d.1),
                dlambda_dg: fp.dlambda_dg,
            }
        })
        .collect()
}
