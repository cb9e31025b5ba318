//! One-parameter Hamiltonian families `H(g) = H0 + g * V` in the eigenbasis
//! of `H0`.
//!
//! The basis is the coordinate basis: `H0 = diag(epsilon)` with `epsilon`
//! sorted non-decreasing, so the last basis state is always the highest
//! unperturbed level and truncation to `k` states keeps the leading `k x k`
//! block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative tolerance for accepting an explicit matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum H0Spectrum {
    Explicit {
        values: Vec<f64>,
    },
    /// `epsilon_i = min + i * step` for `i = 0..N`.
    Ladder {
        min: f64,
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedModel {
    /// Tridiagonal nearest-neighbour hopping `[[0,1,0],[1,0,1],[0,1,0]]`.
    ModelA,
    /// `[[0,1],[1,0]]`.
    TwoLevel,
    /// Six states, `V` block-diagonal in the even/odd index split. The two
    /// lowest states are uncoupled so their levels are straight lines that
    /// cross at `g = 1`.
    BlockParity,
}

impl NamedModel {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "model-a" => Some(Self::ModelA),
            "two-level" => Some(Self::TwoLevel),
            "block-parity" => Some(Self::BlockParity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ModelA => "model-a",
            Self::TwoLevel => "two-level",
            Self::BlockParity => "block-parity",
        }
    }

    pub fn perturbation(self) -> DMatrix<f64> {
        match self {
            Self::ModelA => DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
            Self::TwoLevel => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            Self::BlockParity => {
                let mut v = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, -0.8, 0.1, -0.1, 0.3, 0.05]));
                // even block {2, 4}, odd block {3, 5}
                v[(2, 4)] = 0.4;
                v[(4, 2)] = 0.4;
                v[(3, 5)] = 0.4;
                v[(5, 3)] = 0.4;
                v
            }
        }
    }

    /// Unperturbed spectrum the named fixture is designed around.
    pub fn default_spectrum(self) -> Vec<f64> {
        let n = self.perturbation().nrows();
        (0..n).map(|i| i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum H1Source {
    /// Dense symmetric matrix, row-major nested rows.
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
    /// Entries `v_ij = v_ji = sigma * (2u - 1)` drawn row-major over the upper
    /// triangle (diagonal included) from [`Stream`].
    Random {
        sigma: f64,
    },
    Named {
        name: NamedModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    pub h0: H0Spectrum,
    pub h1: H1Source,
    pub g: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelWarning {
    /// `epsilon[index] == epsilon[index + 1]`.
    DegenerateSpectrum { index: usize, value: f64 },
}

impl ModelSpec {
    pub fn ladder_random(dimension: usize, sigma: f64, g: f64, seed: u64) -> Self {
        Self {
            dimension,
            h0: H0Spectrum::Ladder { min: 0.0, step: 1.0 },
            h1: H1Source::Random { sigma },
            g,
            seed,
        }
    }

    pub fn named(name: NamedModel, g: f64) -> Self {
        Self {
            dimension: name.perturbation().nrows(),
            h0: H0Spectrum::Explicit {
                values: name.default_spectrum(),
            },
            h1: H1Source::Named { name },
            g,
            seed: 0,
        }
    }

    pub fn spectrum(&self) -> Vec<f64> {
        match &self.h0 {
            H0Spectrum::Explicit { values } => values.clone(),
            H0Spectrum::Ladder { min, step } => (0..self.dimension).map(|i| min + i as f64 * step).collect(),
        }
    }

    pub fn warnings(&self) -> Vec<ModelWarning> {
        self.spectrum()
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] == w[1])
            .map(|(index, w)| ModelWarning::DegenerateSpectrum { index, value: w[0] })
            .collect()
    }
}

/// `H(g) = diag(epsilon) + g * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    epsilon: DVector<f64>,
    v: DMatrix<f64>,
    g: f64,
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

impl HamiltonianModel {
    /// Validates sizes, ordering and symmetry. A matrix that is symmetric to
    /// within [`SYMMETRY_TOL`] (relative to its largest entry) is stored
    /// exactly symmetrized.
    pub fn new(epsilon: Vec<f64>, v: DMatrix<f64>, g: f64) -> Result<Self> {
        let n = epsilon.len();
        if n < 2 {
            return Err(Error::DimensionMismatch(format!(
                "model dimension must be at least 2, got {n}"
            )));
        }
        if v.nrows() != n || v.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "H0 has {n} levels but V is {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        if epsilon.iter().any(|e| !e.is_finite()) || !g.is_finite() {
            return Err(Error::InvalidArgument("non-finite epsilon or g".into()));
        }
        if epsilon.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "H0 spectrum must be sorted non-decreasing".into(),
            ));
        }
        check_finite(&v)?;
        let scale = v.amax().max(f64::MIN_POSITIVE);
        let asym = max_asymmetry(&v);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NonSymmetricInput {
                max_asym: asym,
                tol: SYMMETRY_TOL * scale,
            });
        }
        let v = if asym > 0.0 { (&v + v.transpose()) * 0.5 } else { v };
        Ok(Self {
            epsilon: DVector::from_vec(epsilon),
            v,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.epsilon.len()
    }

    pub fn epsilon(&self) -> &DVector<f64> {
        &self.epsilon
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn with_coupling(&self, g: f64) -> Self {
        Self {
            epsilon: self.epsilon.clone(),
            v: self.v.clone(),
            g,
        }
    }

    /// `diag(epsilon) + g * v` with `g = g_override.unwrap_or(self.g)`.
    pub fn hamiltonian_matrix(&self, g_override: Option<f64>) -> DMatrix<f64> {
        let g = g_override.unwrap_or(self.g);
        let mut h = &self.v * g;
        for i in 0..self.dim() {
            h[(i, i)] += self.epsilon[i];
        }
        h
    }

    /// Diagonal element `H_ii(g)` (0-based index).
    pub fn diagonal_element(&self, i: usize, g: f64) -> f64 {
        self.epsilon[i] + g * self.v[(i, i)]
    }

    /// Keeps the first `k` basis states. The coupling is copied unchanged.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k < 2 || k > self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "truncation to k = {k} outside [2, {}]",
                self.dim()
            )));
        }
        Ok(Self {
            epsilon: self.epsilon.rows(0, k).into_owned(),
            v: self.v.view((0, 0), (k, k)).into_owned(),
            g: self.g,
        })
    }

    /// Frobenius norm of `H(g)`, floored at 1. Used to scale absolute
    /// tolerances.
    pub fn energy_scale(&self, g: f64) -> f64 {
        self.hamiltonian_matrix(Some(g)).norm().max(1.0)
    }

    /// SHA-256 of a canonical text rendering of the model (17 significant
    /// digits per entry), hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut text = format!("dim={};g={:.16e};eps=", self.dim(), self.g);
        for e in self.epsilon.iter() {
            text.push_str(&format!("{e:.16e},"));
        }
        text.push_str(";v=");
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                text.push_str(&format!("{:.16e},", self.v[(i, j)]));
            }
        }
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `diag(0, 1, 2)` plus nearest-neighbour hopping.
    pub fn model_a(g: f64) -> Self {
        build_model(&ModelSpec::named(NamedModel::ModelA, g)).expect("fixture is valid")
    }

    /// `diag(0, 1)` plus off-diagonal coupling.
    pub fn two_level(g: f64) -> Self {
        build_model(&ModelSpec::named(NamedModel::TwoLevel, g)).expect("fixture is valid")
    }

    pub fn block_parity(g: f64) -> Self {
        build_model(&ModelSpec::named(NamedModel::BlockParity, g)).expect("fixture is valid")
    }
}

fn random_symmetric(n: usize, sigma: f64, seed: u64) -> DMatrix<f64> {
    let mut stream = Stream::new(seed);
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x = stream.symmetric(sigma);
            v[(i, j)] = x;
            v[(j, i)] = x;
        }
    }
    v
}

pub fn build_model(spec: &ModelSpec) -> Result<HamiltonianModel> {
    let n = spec.dimension;
    let epsilon = spec.spectrum();
    if epsilon.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "dimension = {n} but h0 lists {} values",
            epsilon.len()
        )));
    }
    for w in spec.warnings() {
        log::warn!("{w:?}");
    }
    let v = match &spec.h1 {
        H1Source::Explicit { matrix } => {
            if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                return Err(Error::DimensionMismatch(format!("h1.matrix must be {n}x{n}")));
            }
            DMatrix::from_fn(n, n, |i, j| matrix[i][j])
        }
        H1Source::Random { sigma } => {
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "h1.sigma must be finite and non-negative, got {sigma}"
                )));
            }
            random_symmetric(n, *sigma, spec.seed)
        }
        H1Source::Named { name } => name.perturbation(),
    };
    HamiltonianModel::new(epsilon, v, spec.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_level_construction() {
        let spec = ModelSpec {
            dimension: 2,
            h0: H0Spectrum::Ladder { min: 0.0, step: 1.0 },
            h1: H1Source::Explicit {
                matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            },
            g: 0.5,
            seed: 0,
        };
        let m = build_model(&spec).unwrap();
        assert_eq!(m.epsilon().as_slice(), &[0.0, 1.0]);
        assert_eq!(m.g(), 0.5);
    }

    #[test]
    fn model_a_matrices() {
        let m = HamiltonianModel::model_a(0.5);
        assert_eq!(
            m.hamiltonian_matrix(Some(0.0)),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]))
        );
        let h = m.hamiltonian_matrix(None);
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 2.0]);
        assert_eq!(h, expected);
        let two = HamiltonianModel::two_level(1.0).hamiltonian_matrix(None);
        assert_eq!(two, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn random_model_reproducible_and_symmetric() {
        let spec = ModelSpec::ladder_random(50, 0.1, 0.5, 42);
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        assert_eq!(a.v(), b.v());
        assert_eq!(max_asymmetry(a.v()), 0.0);
        assert!(a.v().amax() <= 0.1);
        let other = build_model(&ModelSpec::ladder_random(50, 0.1, 0.5, 43)).unwrap();
        assert_ne!(a.v(), other.v());
    }

    #[test]
    fn random_model_first_entry_follows_stream() {
        let m = build_model(&ModelSpec::ladder_random(3, 1.0, 0.0, 42)).unwrap();
        let mut s = Stream::new(42);
        assert_eq!(m.v()[(0, 0)], s.symmetric(1.0));
        assert_eq!(m.v()[(0, 1)], s.symmetric(1.0));
        assert_eq!(m.v()[(1, 0)], m.v()[(0, 1)]);
    }

    #[test]
    fn truncation() {
        let m = HamiltonianModel::model_a(0.5);
        let t = m.truncate(2).unwrap();
        assert_eq!(t.epsilon().as_slice(), &[0.0, 1.0]);
        assert_eq!(*t.v(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(m.truncate(3).unwrap(), m);
        assert!(matches!(m.truncate(1), Err(Error::DimensionMismatch(_))));
        assert!(matches!(m.truncate(4), Err(Error::DimensionMismatch(_))));

        let big = build_model(&ModelSpec::ladder_random(50, 0.1, 0.5, 42)).unwrap();
        let t = big.truncate(49).unwrap();
        assert_eq!(t.dim(), 49);
        assert_eq!(*t.v(), big.v().view((0, 0), (49, 49)).into_owned());
    }

    #[test]
    fn rejects_asymmetric_and_mismatched() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.1, 0.0]);
        assert!(matches!(
            HamiltonianModel::new(vec![0.0, 1.0], v, 0.1),
            Err(Error::NonSymmetricInput { .. })
        ));
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0 + 1e-14, 0.0]);
        let m = HamiltonianModel::new(vec![0.0, 1.0], v, 0.1).unwrap();
        assert_eq!(m.v()[(0, 1)], m.v()[(1, 0)]);
        let v = DMatrix::zeros(3, 3);
        assert!(matches!(
            HamiltonianModel::new(vec![0.0, 1.0], v, 0.1),
            Err(Error::DimensionMismatch(_))
        ));
        let spec = ModelSpec {
            dimension: 3,
            h0: H0Spectrum::Explicit { values: vec![0.0, 1.0] },
            h1: H1Source::Random { sigma: 0.1 },
            g: 0.0,
            seed: 1,
        };
        assert!(matches!(build_model(&spec), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn degenerate_spectrum_is_flagged_not_rejected() {
        let spec = ModelSpec {
            dimension: 3,
            h0: H0Spectrum::Explicit {
                values: vec![0.0, 1.0, 1.0],
            },
            h1: H1Source::Random { sigma: 0.1 },
            g: 0.3,
            seed: 1,
        };
        assert_eq!(
            spec.warnings(),
            vec![ModelWarning::DegenerateSpectrum { index: 1, value: 1.0 }]
        );
        assert!(build_model(&spec).is_ok());
    }

    #[test]
    fn diagonal_perturbation_allowed() {
        let v = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, -0.2]);
        let m = HamiltonianModel::new(vec![0.0, 1.0], v, 1.0).unwrap();
        assert_eq!(m.diagonal_element(0, 1.0), 0.3);
    }

    proptest! {
        #[test]
        fn linear_in_coupling(seed in 0u64..1000, g1 in -3.0f64..3.0, g2 in -3.0f64..3.0) {
            let m = build_model(&ModelSpec::ladder_random(6, 0.5, 0.0, seed)).unwrap();
            let diff = m.hamiltonian_matrix(Some(g1)) - m.hamiltonian_matrix(Some(g2));
            let expected = m.v() * (g1 - g2);
            prop_assert!((diff - expected).amax() <= 1e-14);
        }

        #[test]
        fn truncation_composes(seed in 0u64..1000, k in 2usize..=8, j in 2usize..=8) {
            prop_assume!(j <= k);
            let m = build_model(&ModelSpec::ladder_random(8, 0.5, 0.7, seed)).unwrap();
            let twice = m.truncate(k).unwrap().truncate(j).unwrap();
            prop_assert_eq!(twice, m.truncate(j).unwrap());
        }
    }
}
