//! Source models and sampling sets.
//!
//! A [`CovarianceModel`] is the law `N(0, Σ)` of one time slot of a Gaussian
//! memoryless multiple source. A [`SamplingSet`] picks the `k` components the
//! encoder observes; [`partition`] splits `Σ` into the sampled block, the
//! cross block and the unsampled block.
//!
//! Component indices are 0-based inside the library. The command-line driver
//! converts from the 1-based labels users write.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative symmetry tolerance, scaled by the largest absolute entry.
pub const SYM_TOL: f64 = 1e-9;
/// Cholesky pivot floor, scaled by `trace / m`.
pub const PD_TOL: f64 = 1e-12;

/// A validated positive-definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    labels: Vec<String>,
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower-triangular Cholesky factor `L` with `Σ = L Lᵀ`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Replaces the default `X1..Xm` component labels.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }
}

/// Symmetrizes `raw` and verifies positive definiteness.
pub fn validate_covariance(raw: &DMatrix<f64>) -> Result<CovarianceModel> {
    let (rows, cols) = raw.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(Error::EmptyMatrix);
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("covariance has non-finite entries".into()));
    }
    let scale = raw.amax();
    let tolerance = SYM_TOL * scale;
    let mut asymmetry: f64 = 0.0;
    for i in 0..rows {
        for j in 0..i {
            asymmetry = asymmetry.max((raw[(i, j)] - raw[(j, i)]).abs());
        }
    }
    if asymmetry > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry,
            tolerance,
        });
    }
    let sigma = symmetrize(raw);
    let chol = cholesky_checked(&sigma)?;
    let labels = (1..=rows).map(|i| format!("X{i}")).collect();
    Ok(CovarianceModel {
        sigma,
        chol,
        labels,
    })
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factorization that rejects pivots at or below `PD_TOL · trace / m`.
pub(crate) fn cholesky_checked(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let tolerance = PD_TOL * a.trace() / n as f64;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > tolerance) {
            return Err(Error::NotPositiveDefinite {
                row: j,
                pivot,
                tolerance,
            });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` given the lower factor `L`.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("Cholesky factor has a positive diagonal")
}

/// An ordered set of sampled component indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SamplingSet {
    indices: Vec<usize>,
}

impl SamplingSet {
    /// Builds a sampling set for an `dim`-component source from 0-based indices.
    ///
    /// Indices are sorted; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSamplingSet("at least one component must be sampled".into()));
        }
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSamplingSet(format!(
                "component {} listed twice",
                w[0] + 1
            )));
        }
        if let Some(&index) = indices.last().filter(|&&i| i >= dim) {
            return Err(Error::IndexOutOfRange { index, dim });
        }
        Ok(Self { indices })
    }

    /// Builds a sampling set from 1-based component labels `1..=dim`.
    pub fn from_one_based(labels: &[usize], dim: usize) -> Result<Self> {
        let mut indices = Vec::with_capacity(labels.len());
        for &label in labels {
            if label == 0 || label > dim {
                return Err(Error::IndexOutOfRange { index: label, dim });
            }
            indices.push(label - 1);
        }
        Self::new(indices, dim)
    }

    /// The full set `M`.
    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indices of `M \ A`, increasing.
    pub fn complement(&self, dim: usize) -> Vec<usize> {
        let mut it = self.indices.iter().peekable();
        (0..dim)
            .filter(|i| {
                if it.peek() == Some(&i) {
                    it.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }
}

impl std::fmt::Display for SamplingSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let labels: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", labels.join(" "))
    }
}

/// `Σ` split along `(A, Aᶜ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub sampled: Vec<usize>,
    pub unsampled: Vec<usize>,
    /// `Σ_A`, k×k.
    pub sigma_a: DMatrix<f64>,
    /// `Σ_{AAᶜ} = E[X_A X_{Aᶜ}ᵀ]`, k×(m−k).
    pub sigma_a_ac: DMatrix<f64>,
    /// `Σ_{Aᶜ}`, (m−k)×(m−k).
    pub sigma_ac: DMatrix<f64>,
}

impl BlockPartition {
    pub fn k(&self) -> usize {
        self.sampled.len()
    }

    pub fn dim(&self) -> usize {
        self.sampled.len() + self.unsampled.len()
    }

    /// Scatters the blocks back into an m×m matrix in the original order.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        for (a, &i) in self.sampled.iter().enumerate() {
            for (b, &j) in self.sampled.iter().enumerate() {
                out[(i, j)] = self.sigma_a[(a, b)];
            }
            for (b, &j) in self.unsampled.iter().enumerate() {
                out[(i, j)] = self.sigma_a_ac[(a, b)];
                out[(j, i)] = self.sigma_a_ac[(a, b)];
            }
        }
        for (a, &i) in self.unsampled.iter().enumerate() {
            for (b, &j) in self.unsampled.iter().enumerate() {
                out[(i, j)] = self.sigma_ac[(a, b)];
            }
        }
        out
    }

    /// Gathers the sampled entries of a full-length vector.
    pub fn gather_sampled(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.sampled.iter().map(|&i| x[i]))
    }
}

/// Extracts `Σ_A`, `Σ_{AAᶜ}` and `Σ_{Aᶜ}` by index gather.
pub fn partition(model: &CovarianceModel, set: &SamplingSet) -> Result<BlockPartition> {
    let m = model.dim();
    if let Some(&index) = set.indices().iter().find(|&&i| i >= m) {
        return Err(Error::IndexOutOfRange { index, dim: m });
    }
    let sampled = set.indices().to_vec();
    let unsampled = set.complement(m);
    let s = model.sigma();
    let gather = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| s[(rows[a], cols[b])])
    };
    Ok(BlockPartition {
        sigma_a: gather(&sampled, &sampled),
        sigma_a_ac: gather(&sampled, &unsampled),
        sigma_ac: gather(&unsampled, &unsampled),
        sampled,
        unsampled,
    })
}
