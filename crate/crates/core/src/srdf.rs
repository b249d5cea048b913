//! Fixed-set sampling rate distortion function of a Gaussian memoryless
//! multiple source.
//!
//! Sampling `X_A` and reconstructing all of `X_M` under total MSE `Δ` reduces
//! to coding `X_A` under the weighted distortion
//! `d_A(x, y) = (x − y)ᵀ G_A (x − y)` with the reduced budget `Δ − Δ_min,A`,
//! where `Δ_min,A` is the MMSE of `X_{Aᶜ}` given `X_A`. The rate is then the
//! reverse water-filling solution over the eigenvalues of `G_A Σ_A`.
//!
//! All rates are in bits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    cholesky_checked, cholesky_solve, partition, symmetrize, BlockPartition, CovarianceModel,
    SamplingSet,
};

/// Cap on the rate accepted by the distortion-rate inversion.
pub const RATE_CAP_BITS: f64 = 64.0;

const BISECTION_ITERS: usize = 200;

/// The weight matrix `G_A = I + Σ_A⁻¹ Σ_{AAᶜ} Σ_{AAᶜ}ᵀ Σ_A⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub(crate) fn from_matrix_unchecked(g: DMatrix<f64>) -> Self {
        Self(g)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// The weighted squared error `(x − y)ᵀ G (x − y)`.
    pub fn eval_d_a(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let k = self.dim();
        for len in [x.len(), y.len()] {
            if len != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: len,
                });
            }
        }
        let e = x - y;
        Ok(e.dot(&(&self.0 * &e)).max(0.0))
    }
}

/// Builds `I + Σ_A⁻¹ C Cᵀ Σ_A⁻¹` for an arbitrary cross block `C`.
///
/// Shared by the known-law case and the atom-averaged universal case.
pub fn weight_from_blocks(sigma_a: &DMatrix<f64>, cross: &DMatrix<f64>) -> Result<WeightMatrix> {
    let k = sigma_a.nrows();
    let l = cholesky_checked(sigma_a).map_err(|_| Error::SingularSigmaA)?;
    let mut g = DMatrix::identity(k, k);
    if cross.ncols() > 0 {
        let b = cholesky_solve(&l, cross);
        g += &b * b.transpose();
    }
    Ok(WeightMatrix(symmetrize(&g)))
}

/// MMSE of the unsampled block: `Σ var_Aᶜ − trace(Cᵀ Σ_A⁻¹ C)`, clamped at 0.
pub fn min_distortion_from_blocks(
    sigma_a: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    unsampled_variance: f64,
) -> Result<f64> {
    if cross.ncols() == 0 {
        return Ok(0.0);
    }
    let l = cholesky_checked(sigma_a).map_err(|_| Error::SingularSigmaA)?;
    let w = l
        .solve_lower_triangular(cross)
        .ok_or(Error::SingularSigmaA)?;
    Ok((unsampled_variance - w.norm_squared()).max(0.0))
}

pub fn weight_matrix(bp: &BlockPartition) -> Result<WeightMatrix> {
    weight_from_blocks(&bp.sigma_a, &bp.sigma_a_ac)
}

/// `Δ_min,A`, the distortion floor of reconstructing `X_{Aᶜ}` from `X_A`.
pub fn min_distortion(bp: &BlockPartition) -> Result<f64> {
    min_distortion_from_blocks(&bp.sigma_a, &bp.sigma_a_ac, bp.sigma_ac.trace())
}

/// `Δ_max = trace(Σ)`, reached at rate zero.
pub fn max_distortion(model: &CovarianceModel) -> f64 {
    model.trace()
}

/// Symmetric square root of a positive-definite matrix.
pub(crate) fn spd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::EigenFailure("matrix is not positive definite".into()));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(symmetrize(&(&eig.eigenvectors * root * eig.eigenvectors.transpose())))
}

/// Eigenvalues of `G Σ_A`, computed through the similar symmetric matrix
/// `Σ_A^{1/2} G Σ_A^{1/2}`, sorted descending.
pub fn product_eigenvalues(sigma_a: &DMatrix<f64>, g: &WeightMatrix) -> Result<Vec<f64>> {
    if g.dim() != sigma_a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sigma_a.nrows(),
            got: g.dim(),
        });
    }
    let root = spd_sqrt(sigma_a)?;
    let s = symmetrize(&(&root * g.matrix() * &root));
    let mut lambdas: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    if lambdas.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::EigenFailure(format!(
            "non-positive eigenvalue in {lambdas:?}"
        )));
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok(lambdas)
}

pub fn srdf_eigenvalues(bp: &BlockPartition) -> Result<Vec<f64>> {
    product_eigenvalues(&bp.sigma_a, &weight_matrix(bp)?)
}

/// Reverse water-filling allocation for one distortion budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaterfillSolution {
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    pub per_mode_distortion: Vec<f64>,
    pub rate_bits: f64,
}

fn rate_for_level(lambdas: &[f64], alpha: f64) -> f64 {
    lambdas
        .iter()
        .map(|&l| 0.5 * (l / alpha).log2().max(0.0))
        .sum()
}

fn solution(lambdas: &[f64], alpha: f64) -> WaterfillSolution {
    WaterfillSolution {
        lambdas: lambdas.to_vec(),
        alpha,
        per_mode_distortion: lambdas.iter().map(|&l| l.min(alpha)).collect(),
        rate_bits: rate_for_level(lambdas, alpha),
    }
}

fn validate_lambdas(lambdas: &[f64]) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(Error::Domain("no eigenvalues".into()));
    }
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::Domain(format!(
            "eigenvalues must be positive and finite, got {lambdas:?}"
        )));
    }
    Ok(lambdas.iter().copied().fold(f64::MIN, f64::max))
}

/// Finds the water level `α` with `Σ min(α, λ_i) = budget`.
///
/// Bisection locates the set of modes above the water line; `α` is then
/// solved exactly on that set.
pub fn waterfill(lambdas: &[f64], budget: f64) -> Result<WaterfillSolution> {
    let max_lambda = validate_lambdas(lambdas)?;
    let total: f64 = lambdas.iter().sum();
    if !(budget > 0.0) || budget > total * (1.0 + 1e-12) {
        return Err(Error::BudgetOutOfRange { budget, total });
    }
    if budget >= total {
        return Ok(solution(lambdas, max_lambda));
    }
    let filled = |alpha: f64| -> f64 { lambdas.iter().map(|&l| l.min(alpha)).sum() };
    let k = lambdas.len() as f64;
    let (mut lo, mut hi) = (budget / k * 1e-6, max_lambda);
    for _ in 0..BISECTION_ITERS {
        if hi - lo < 1e-14 * max_lambda {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if filled(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    let (submerged, active): (Vec<f64>, Vec<f64>) = lambdas.iter().partition(|&&l| l <= alpha);
    if !active.is_empty() {
        let exact = (budget - submerged.iter().sum::<f64>()) / active.len() as f64;
        let floor = submerged.iter().copied().fold(0.0, f64::max);
        let ceiling = active.iter().copied().fold(f64::MAX, f64::min);
        if exact > 0.0 && exact >= floor * (1.0 - 1e-12) && exact <= ceiling * (1.0 + 1e-12) {
            alpha = exact;
        }
    }
    Ok(solution(lambdas, alpha))
}

/// Water level reached at `rate_bits`, i.e. the inverse of the rate equation.
fn level_for_rate(lambdas: &[f64], max_lambda: f64, rate_bits: f64) -> f64 {
    // R(α) ≥ ½ log2(λ_max/α), so this α overshoots the target rate.
    let mut lo = (max_lambda.log2() - 2.0 * rate_bits - 1.0).exp2();
    let mut hi = max_lambda;
    for _ in 0..BISECTION_ITERS {
        if hi - lo < 1e-15 * hi {
            break;
        }
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if rate_for_level(lambdas, mid) > rate_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut alpha = (0.5 * (lo.ln() + hi.ln())).exp();
    let active: Vec<f64> = lambdas.iter().copied().filter(|&l| l > alpha).collect();
    if !active.is_empty() {
        let log_sum: f64 = active.iter().map(|l| l.log2()).sum();
        let exact = ((log_sum - 2.0 * rate_bits) / active.len() as f64).exp2();
        let floor = lambdas
            .iter()
            .copied()
            .filter(|&l| l <= alpha)
            .fold(0.0, f64::max);
        let ceiling = active.iter().copied().fold(f64::MAX, f64::min);
        if exact >= floor * (1.0 - 1e-12) && exact <= ceiling * (1.0 + 1e-12) {
            alpha = exact;
        }
    }
    alpha
}

/// One point of a rate distortion curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrdfPoint {
    pub delta: f64,
    pub rate_bits: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Set when `delta ≥ delta_max`; rate zero achieves the target.
    pub trivial: bool,
    /// Water level; absent for trivial points.
    pub alpha: Option<f64>,
}

/// A spectrum and distortion floor: everything needed to evaluate a
/// water-filling rate distortion curve and its inverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrdfCurve {
    pub lambdas: Vec<f64>,
    pub delta_min: f64,
}

impl SrdfCurve {
    pub fn new(lambdas: Vec<f64>, delta_min: f64) -> Result<Self> {
        validate_lambdas(&lambdas)?;
        if !(delta_min >= 0.0) {
            return Err(Error::Domain(format!("negative distortion floor {delta_min}")));
        }
        Ok(Self { lambdas, delta_min })
    }

    /// `Δ_min + Σ λ_i`, which equals the source's total variance.
    pub fn delta_max(&self) -> f64 {
        self.delta_min + self.lambdas.iter().sum::<f64>()
    }

    pub fn rate(&self, delta: f64) -> Result<SrdfPoint> {
        if !(delta > self.delta_min) {
            return Err(Error::InfeasibleDistortion {
                delta,
                delta_min: self.delta_min,
            });
        }
        let delta_max = self.delta_max();
        if delta >= delta_max {
            return Ok(SrdfPoint {
                delta,
                rate_bits: 0.0,
                delta_min: self.delta_min,
                delta_max,
                trivial: true,
                alpha: None,
            });
        }
        let sol = waterfill(&self.lambdas, delta - self.delta_min)?;
        Ok(SrdfPoint {
            delta,
            rate_bits: sol.rate_bits,
            delta_min: self.delta_min,
            delta_max,
            trivial: false,
            alpha: Some(sol.alpha),
        })
    }

    /// Distortion-rate function `D(R)`; rates at or beyond 64 bits return the floor.
    pub fn distortion(&self, rate_bits: f64) -> Result<f64> {
        if rate_bits.is_nan() || rate_bits < 0.0 {
            return Err(Error::Domain(format!("rate must be nonnegative, got {rate_bits}")));
        }
        if rate_bits == 0.0 {
            return Ok(self.delta_max());
        }
        if rate_bits >= RATE_CAP_BITS {
            return Ok(self.delta_min);
        }
        let max_lambda = validate_lambdas(&self.lambdas)?;
        let alpha = level_for_rate(&self.lambdas, max_lambda, rate_bits);
        Ok(self.delta_min + self.lambdas.iter().map(|&l| l.min(alpha)).sum::<f64>())
    }
}

/// The curve `ρ_A(·)` of a known-law source.
pub fn srdf_curve(model: &CovarianceModel, set: &SamplingSet) -> Result<SrdfCurve> {
    let bp = partition(model, set)?;
    SrdfCurve::new(srdf_eigenvalues(&bp)?, min_distortion(&bp)?)
}

/// `ρ_A(Δ)` in bits.
pub fn srdf(model: &CovarianceModel, set: &SamplingSet, delta: f64) -> Result<SrdfPoint> {
    let mut point = srdf_curve(model, set)?.rate(delta)?;
    // Report the exact trace rather than Δ_min + Σλ.
    point.delta_max = max_distortion(model);
    Ok(point)
}

/// `D_A(R)`, the inverse of `ρ_A` on its decreasing branch.
pub fn distortion_rate(model: &CovarianceModel, set: &SamplingSet, rate_bits: f64) -> Result<f64> {
    srdf_curve(model, set)?.distortion(rate_bits)
}

/// Closed-form single-component SRDf of a source given by standard deviations
/// `σ_i` and correlations `r_ij`, sampled at component `j` (0-based):
///
/// `ρ_{j}(Δ) = ½ log2((σ_j² + Σ_{i≠j} r_ij² σ_i²) / (Δ − Σ_{i≠j} σ_i²(1 − r_ij²)))`.
pub fn example1_closed_form(
    std_devs: &[f64],
    corr: &DMatrix<f64>,
    j: usize,
    delta: f64,
) -> Result<f64> {
    let m = std_devs.len();
    if corr.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: corr.nrows(),
        });
    }
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, dim: m });
    }
    let var = |i: usize| std_devs[i] * std_devs[i];
    let (mut lambda, mut delta_min) = (var(j), 0.0);
    for i in (0..m).filter(|&i| i != j) {
        let r2 = corr[(i, j)] * corr[(i, j)];
        if r2 >= 1.0 {
            return Err(Error::Domain(format!("|r_{}{}| must be below 1", i + 1, j + 1)));
        }
        lambda += r2 * var(i);
        delta_min += var(i) * (1.0 - r2);
    }
    if !(delta > delta_min) {
        return Err(Error::InfeasibleDistortion { delta, delta_min });
    }
    Ok(0.5 * (lambda / (delta - delta_min)).log2().max(0.0))
}

/// Covariance `Σ_ij = r_ij σ_i σ_j`.
pub fn covariance_from_correlation(std_devs: &[f64], corr: &DMatrix<f64>) -> DMatrix<f64> {
    let m = std_devs.len();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            std_devs[i] * std_devs[i]
        } else {
            corr[(i, j)] * std_devs[i] * std_devs[j]
        }
    })
}
