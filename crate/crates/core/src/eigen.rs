//! Dense and Lanczos eigensolvers for real symmetric operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Lowest eigenpair of a symmetric operator.
///
/// The vector has unit 2-norm and its component of largest magnitude is
/// positive, which fixes the global sign.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda1: f64,
    pub vector: DVector<f64>,
    pub k: usize,
    /// `|| H a - lambda1 a ||_2`
    pub residual_norm: f64,
}

/// Full decomposition with eigenvalues ascending and eigenvector `j` in
/// column `j`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn lowest(&self, h: &DMatrix<f64>) -> EigenPair {
        let mut vector = self.eigenvectors.column(0).into_owned();
        fix_sign(&mut vector);
        let lambda1 = self.eigenvalues[0];
        let residual_norm = (h * &vector - &vector * lambda1).norm();
        EigenPair {
            lambda1,
            k: vector.len(),
            vector,
            residual_norm,
        }
    }
}

pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

fn check_finite(h: &DMatrix<f64>) -> Result<()> {
    for j in 0..h.ncols() {
        for i in 0..h.nrows() {
            if !h[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn dense_spectrum(h: &DMatrix<f64>) -> Result<Spectrum> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    check_finite(h)?;
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Matrix-free access to a symmetric operator.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

/// Wraps a matvec closure.
pub struct MatVec<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&DVector<f64>) -> DVector<f64>> MatVec<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&DVector<f64>) -> DVector<f64>> SymmetricOperator for MatVec<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanczosOptions {
    /// Residual target, relative to `max(1, ||H||_2)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosReport {
    pub pair: EigenPair,
    pub iterations: usize,
    /// Lowest Ritz value after each iteration.
    pub ritz_history: Vec<f64>,
    /// Largest `|q_i . q_j|`, `i != j`, over the final Krylov basis.
    pub max_basis_overlap: f64,
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

fn random_unit(stream: &mut Stream, n: usize, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    for _ in 0..8 {
        let mut v = DVector::from_fn(n, |_, _| stream.symmetric(1.0));
        orthogonalize(&mut v, basis);
        let norm = v.norm();
        if norm > 1e-8 {
            return Some(v / norm);
        }
    }
    None
}

pub fn lanczos_lowest<O: SymmetricOperator + ?Sized>(op: &O, opts: &LanczosOptions) -> Result<EigenPair> {
    lanczos_lowest_report(op, opts).map(|r| r.pair)
}

/// Lanczos iteration with full reorthogonalization. When the Krylov space
/// becomes invariant before convergence the iteration restarts from a fresh
/// random vector orthogonal to the current basis.
pub fn lanczos_lowest_report<O: SymmetricOperator + ?Sized>(op: &O, opts: &LanczosOptions) -> Result<LanczosReport> {
    let n = op.dim();
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "Lanczos needs dimension >= 2, got {n}"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lanczos tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let mut stream = Stream::new(opts.seed);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut best_residual = f64::INFINITY;
    let limit = opts.max_iter.max(1);

    let mut q = random_unit(&mut stream, n, &[]).expect("fresh random vector");
    loop {
        basis.push(q.clone());
        let j = basis.len() - 1;
        let mut w = op.apply(&q);
        let a = q.dot(&w);
        alpha.push(a);
        w.axpy(-a, &q, 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &basis[j - 1], 1.0);
        }
        orthogonalize(&mut w, &basis);
        let b = w.norm();

        let m = alpha.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let teig = dense_spectrum(&t)?;
        let theta = teig.eigenvalues[0];
        let s = teig.eigenvectors.column(0);
        history.push(theta);
        let norm_est = teig.eigenvalues.amax().max(1.0);
        let estimate = b * s[m - 1].abs();
        let full = m == n;

        if estimate <= opts.tol * norm_est || full || m >= limit {
            let mut x = DVector::zeros(n);
            for (i, qi) in basis.iter().enumerate() {
                x.axpy(s[i], qi, 1.0);
            }
            x /= x.norm();
            fix_sign(&mut x);
            let residual = (op.apply(&x) - &x * theta).norm();
            best_residual = best_residual.min(residual);
            if residual <= opts.tol * norm_est || full {
                let overlap = max_overlap(&basis);
                return Ok(LanczosReport {
                    pair: EigenPair {
                        lambda1: theta,
                        k: n,
                        vector: x,
                        residual_norm: residual,
                    },
                    iterations: m,
                    ritz_history: history,
                    max_basis_overlap: overlap,
                });
            }
            if m >= limit {
                return Err(Error::NoConvergence {
                    iterations: m,
                    best_residual,
                });
            }
        }

        if b > 1e-12 * norm_est {
            beta.push(b);
            q = w / b;
        } else {
            // invariant subspace: restart in the orthogonal complement
            beta.push(0.0);
            q = match random_unit(&mut stream, n, &basis) {
                Some(q) => q,
                None => {
                    return Err(Error::NoConvergence {
                        iterations: m,
                        best_residual,
                    })
                }
            };
        }
    }
}

fn max_overlap(basis: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..basis.len() {
        for j in (i + 1)..basis.len() {
            worst = worst.max(basis[i].dot(&basis[j]).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Dense diagonalization is used up to this dimension, Lanczos above.
    pub dense_threshold: usize,
    pub lanczos: LanczosOptions,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            dense_threshold: 64,
            lanczos: LanczosOptions::default(),
        }
    }
}

/// Lowest eigenpair, dense or Lanczos depending on `config.dense_threshold`.
pub fn lowest_eigenpair(h: &DMatrix<f64>, config: &EigenConfig) -> Result<EigenPair> {
    if h.nrows() <= config.dense_threshold {
        Ok(dense_spectrum(h)?.lowest(h))
    } else {
        check_finite(h)?;
        lanczos_lowest(h, &config.lanczos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, HamiltonianModel, ModelSpec};
    use approx::assert_abs_diff_eq;

    /// Real roots of the monic cubic `x^3 + a x^2 + b x + c` with three real
    /// roots, via the trigonometric formula. Independent of any
    /// eigen-decomposition.
    fn cubic_real_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = (3.0 * q / (p * r)).acos() / 3.0;
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            *root = r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - a / 3.0;
        }
        roots.sort_by(f64::total_cmp);
        roots
    }

    #[test]
    fn diagonal_spectrum() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]));
        let s = dense_spectrum(&h).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[0.0, 1.0, 2.0]);
        assert_abs_diff_eq!(s.eigenvectors.map(f64::abs), DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn two_by_two_closed_form() {
        let h = HamiltonianModel::two_level(0.5).hamiltonian_matrix(None);
        let s = dense_spectrum(&h).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 0.5 - 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1], 0.5 + 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[0], -0.20710678118654752, epsilon = 1e-14);
    }

    #[test]
    fn model_a_against_cubic_oracle() {
        // det(H - x I) for [[0,g,0],[g,1,g],[0,g,2]]:
        // x^3 - 3 x^2 + (2 - 2 g^2) x + 2 g^2 = 0
        let g = 0.5_f64;
        let roots = cubic_real_roots(-3.0, 2.0 - 2.0 * g * g, 2.0 * g * g);
        let h = HamiltonianModel::model_a(g).hamiltonian_matrix(None);
        let s = dense_spectrum(&h).unwrap();
        for (ev, root) in s.eigenvalues.iter().zip(roots) {
            assert_abs_diff_eq!(*ev, root, epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let m = build_model(&ModelSpec::ladder_random(30, 0.3, 0.8, 5)).unwrap();
        let h = m.hamiltonian_matrix(None);
        let s = dense_spectrum(&h).unwrap();
        let rec = &s.eigenvectors * DMatrix::from_diagonal(&s.eigenvalues) * s.eigenvectors.transpose();
        assert!((&h - rec).norm() <= 1e-10 * h.norm());
        let gram = s.eigenvectors.transpose() * &s.eigenvectors;
        assert!((gram - DMatrix::identity(30, 30)).amax() <= 1e-10);
        assert!(s.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn non_finite_rejected() {
        let mut h = DMatrix::identity(3, 3);
        h[(1, 2)] = f64::NAN;
        assert!(matches!(dense_spectrum(&h), Err(Error::NonFinite { row: 1, col: 2 })));
    }

    #[test]
    fn lanczos_diagonal() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]));
        let opts = LanczosOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let p = lanczos_lowest(&h, &opts).unwrap();
        assert_abs_diff_eq!(p.lambda1, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p.vector, DVector::from_vec(vec![1.0, 0.0, 0.0]), epsilon = 1e-8);
    }

    #[test]
    fn lanczos_matches_dense_on_model_a() {
        let h = HamiltonianModel::model_a(0.5).hamiltonian_matrix(None);
        let dense = dense_spectrum(&h).unwrap().lowest(&h);
        let p = lanczos_lowest(&h, &LanczosOptions::default()).unwrap();
        assert!((p.lambda1 - dense.lambda1).abs() <= 1e-9);
        assert!((&p.vector - &dense.vector).amax() <= 1e-7);
    }

    #[test]
    fn lanczos_large_random_model() {
        let m = build_model(&ModelSpec::ladder_random(200, 0.1, 0.5, 42)).unwrap();
        let h = m.hamiltonian_matrix(None);
        let dense = dense_spectrum(&h).unwrap().lowest(&h);
        let opts = LanczosOptions {
            tol: 1e-10,
            max_iter: 200,
            seed: 3,
        };
        let r = lanczos_lowest_report(&h, &opts).unwrap();
        assert!((r.pair.lambda1 - dense.lambda1).abs() <= 1e-8);
        assert!(r.pair.residual_norm <= opts.tol * h.norm().max(1.0));
        assert!(r.max_basis_overlap <= 1e-8);
        assert!(r.ritz_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!((r.pair.vector.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn lanczos_matrix_free_is_deterministic() {
        let m = build_model(&ModelSpec::ladder_random(80, 0.2, 0.5, 9)).unwrap();
        let h = m.hamiltonian_matrix(None);
        let op = MatVec::new(80, |x: &DVector<f64>| &h * x);
        let opts = LanczosOptions {
            tol: 1e-10,
            max_iter: 80,
            seed: 11,
        };
        let a = lanczos_lowest(&op, &opts).unwrap();
        let b = lanczos_lowest(&op, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lanczos_reports_no_convergence() {
        let m = build_model(&ModelSpec::ladder_random(100, 0.5, 1.0, 1)).unwrap();
        let h = m.hamiltonian_matrix(None);
        let opts = LanczosOptions {
            tol: 1e-14,
            max_iter: 3,
            seed: 0,
        };
        assert!(matches!(
            lanczos_lowest(&h, &opts),
            Err(Error::NoConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn sign_convention() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        fix_sign(&mut v);
        assert_eq!(v.as_slice(), &[-0.1, 0.9, -0.3]);
    }
}
