//! Universal sampling rate distortion functions over a family of laws.
//!
//! The source covariance is known only to lie in a compact family
//! `{Σ_τ : τ ∈ Θ}`. The encoder sees `X_A` alone, so members with the same
//! sampled block `Σ_{Aτ}` are indistinguishable to it; those members form
//! one ambiguity atom. Families are discretized on a uniform parameter grid.
//!
//! In the Bayesian setting a prior weights the grid and each atom behaves
//! like a known source whose cross block is the atom average; the universal
//! SRDf is the min-max over per-atom distortion allocations, solved by
//! equalizing per-atom rates. The nonBayesian (worst-case) SRDf is
//! supported for families whose atoms are all singletons and for the
//! symmetric two-component correlation family.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{partition, validate_covariance, CovarianceModel, SamplingSet};
use crate::srdf::{
    min_distortion_from_blocks, product_eigenvalues, srdf, weight_from_blocks, SrdfCurve,
    SrdfPoint, WeightMatrix, RATE_CAP_BITS,
};

pub const DEFAULT_GRID_RES: usize = 33;
pub const NODE_CAP: usize = 1_000_000;
/// Max-norm distance under which two sampled blocks count as identical.
pub const ATOM_TOL: f64 = 1e-8;
pub const USRDF_TOL: f64 = 1e-7;

/// How a parameter vector maps to a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum CovTemplate {
    /// `σ² [[1, r], [r, 1]]` with the single parameter `r`.
    Example3 { sigma2: f64 },
    /// `Σ(τ) = base + Σ_d τ_d · terms[d]`, entry-wise affine in the parameters.
    GeneralCorr {
        base: DMatrix<f64>,
        terms: Vec<DMatrix<f64>>,
    },
}

impl CovTemplate {
    fn param_dim(&self) -> usize {
        match self {
            CovTemplate::Example3 { .. } => 1,
            CovTemplate::GeneralCorr { terms, .. } => terms.len(),
        }
    }

    fn cov_at(&self, tau: &[f64]) -> DMatrix<f64> {
        match self {
            CovTemplate::Example3 { sigma2 } => {
                let c = sigma2 * tau[0];
                DMatrix::from_row_slice(2, 2, &[*sigma2, c, c, *sigma2])
            }
            CovTemplate::GeneralCorr { base, terms } => {
                terms
                    .iter()
                    .zip(tau)
                    .fold(base.clone(), |acc, (t, &x)| acc + t * x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Constant density on the parameter box.
    Uniform,
    /// Density values at the grid nodes, in node order (last parameter fastest).
    Density(Vec<f64>),
}

/// A compact parameter box, a covariance template and an optional prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFamily {
    boxes: Vec<(f64, f64)>,
    template: CovTemplate,
    prior: Option<Prior>,
    grid_res: usize,
}

/// One materialized grid point of a family.
#[derive(Debug, Clone)]
pub struct FamilyNode {
    pub params: Vec<f64>,
    pub model: CovarianceModel,
    /// Normalized prior mass (0 when the family has no prior).
    pub weight: f64,
}

impl ParamFamily {
    pub fn new(
        boxes: Vec<(f64, f64)>,
        template: CovTemplate,
        prior: Option<Prior>,
        grid_res: usize,
    ) -> Result<Self> {
        if boxes.len() != template.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: template.param_dim(),
                got: boxes.len(),
            });
        }
        if let Some(&(lo, hi)) = boxes.iter().find(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Domain(format!("invalid parameter interval [{lo}, {hi}]")));
        }
        if grid_res == 0 {
            return Err(Error::Domain("grid resolution must be positive".into()));
        }
        match &template {
            CovTemplate::Example3 { sigma2 } => {
                if !(*sigma2 > 0.0) {
                    return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
                }
                if boxes[0].0 <= -1.0 || boxes[0].1 >= 1.0 {
                    return Err(Error::Domain("correlation interval must lie inside (-1, 1)".into()));
                }
            }
            CovTemplate::GeneralCorr { base, terms } => {
                if !base.is_square() || terms.iter().any(|t| t.shape() != base.shape()) {
                    return Err(Error::Domain("template matrices must be square and equally sized".into()));
                }
            }
        }
        Ok(Self {
            boxes,
            template,
            prior,
            grid_res,
        })
    }

    /// The two-component family `σ² [[1, r], [r, 1]]`, `r ∈ [r_min, r_max]`.
    pub fn example3(sigma2: f64, r_min: f64, r_max: f64, prior: Option<Prior>, grid_res: usize) -> Result<Self> {
        Self::new(vec![(r_min, r_max)], CovTemplate::Example3 { sigma2 }, prior, grid_res)
    }

    pub fn param_dim(&self) -> usize {
        self.boxes.len()
    }

    pub fn dim(&self) -> usize {
        match &self.template {
            CovTemplate::Example3 { .. } => 2,
            CovTemplate::GeneralCorr { base, .. } => base.nrows(),
        }
    }

    pub fn template(&self) -> &CovTemplate {
        &self.template
    }

    pub fn has_prior(&self) -> bool {
        self.prior.is_some()
    }

    pub fn cov_at(&self, tau: &[f64]) -> Result<DMatrix<f64>> {
        if tau.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: tau.len(),
            });
        }
        Ok(self.template.cov_at(tau))
    }

    fn axis(&self, d: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.boxes[d];
        let n = if lo == hi { 1 } else { self.grid_res };
        if n == 1 {
            return vec![(lo, 1.0)];
        }
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                // Trapezoid weights.
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                (x, w)
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        (0..self.param_dim())
            .map(|d| self.axis(d).len())
            .try_fold(1usize, |acc, n| acc.checked_mul(n))
            .unwrap_or(usize::MAX)
    }

    /// Materializes the grid, validating every member covariance.
    pub fn nodes(&self) -> Result<Vec<FamilyNode>> {
        self.nodes_capped(NODE_CAP)
    }

    pub fn nodes_capped(&self, cap: usize) -> Result<Vec<FamilyNode>> {
        let count = self.node_count();
        if count > cap {
            return Err(Error::GridTooLarge { nodes: count, cap });
        }
        let axes: Vec<Vec<(f64, f64)>> = (0..self.param_dim()).map(|d| self.axis(d)).collect();
        let mut points: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|(p, w)| {
                    axis.iter().map(move |&(x, wx)| {
                        let mut q = p.clone();
                        q.push(x);
                        (q, w * wx)
                    })
                })
                .collect();
        }
        let masses: Vec<f64> = match &self.prior {
            None => vec![0.0; points.len()],
            Some(Prior::Uniform) => points.iter().map(|(_, w)| *w).collect(),
            Some(Prior::Density(d)) => {
                if d.len() != points.len() {
                    return Err(Error::DimensionMismatch {
                        expected: points.len(),
                        got: d.len(),
                    });
                }
                if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Domain("prior density must be nonnegative".into()));
                }
                points.iter().zip(d).map(|((_, w), v)| w * v).collect()
            }
        };
        let total: f64 = masses.iter().sum();
        if self.prior.is_some() && !(total > 0.0) {
            return Err(Error::Domain("prior has zero total mass on the grid".into()));
        }
        points
            .into_iter()
            .zip(masses)
            .map(|((params, _), mass)| {
                let model = validate_covariance(&self.template.cov_at(&params))?;
                let weight = if self.prior.is_some() { mass / total } else { 0.0 };
                Ok(FamilyNode {
                    params,
                    model,
                    weight,
                })
            })
            .collect()
    }
}

/// Grid members sharing one sampled-block covariance.
#[derive(Debug, Clone, Serialize)]
pub struct Atom {
    /// Representative `Σ_{Aτ1}` (the block of the lowest-index member).
    #[serde(skip)]
    pub sigma_a: DMatrix<f64>,
    pub members: Vec<usize>,
    /// Prior mass of the atom; `None` without a prior.
    pub weight: Option<f64>,
}

/// The grid of a family split into ambiguity atoms for one sampling set.
#[derive(Debug, Clone)]
pub struct AmbiguityPartition {
    pub set: SamplingSet,
    pub nodes: Vec<FamilyNode>,
    pub atoms: Vec<Atom>,
    pub template: CovTemplate,
    has_prior: bool,
}

impl AmbiguityPartition {
    pub fn has_prior(&self) -> bool {
        self.has_prior
    }

    pub fn all_singletons(&self) -> bool {
        self.atoms.iter().all(|a| a.members.len() == 1)
    }

    /// Atom containing grid node `node`.
    pub fn atom_of(&self, node: usize) -> Option<usize> {
        self.atoms.iter().position(|a| a.members.contains(&node))
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Clusters grid nodes whose sampled blocks agree within [`ATOM_TOL`].
pub fn project_family(family: &ParamFamily, set: &SamplingSet) -> Result<AmbiguityPartition> {
    project_family_with_tol(family, set, ATOM_TOL)
}

pub fn project_family_with_tol(
    family: &ParamFamily,
    set: &SamplingSet,
    atom_tol: f64,
) -> Result<AmbiguityPartition> {
    let nodes = family.nodes()?;
    let blocks: Vec<DMatrix<f64>> = nodes
        .iter()
        .map(|n| partition(&n.model, set).map(|bp| bp.sigma_a))
        .collect::<Result<_>>()?;
    let n = nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    // Sweep in order of the first entry; only nearby blocks can be close.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| blocks[a][(0, 0)].total_cmp(&blocks[b][(0, 0)]).then(a.cmp(&b)));
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if blocks[j][(0, 0)] - blocks[i][(0, 0)] >= atom_tol {
                break;
            }
            if (&blocks[i] - &blocks[j]).amax() < atom_tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut atoms: Vec<Atom> = Vec::new();
    let mut root_atom = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if root_atom[root] == usize::MAX {
            root_atom[root] = atoms.len();
            atoms.push(Atom {
                sigma_a: blocks[i].clone(),
                members: Vec::new(),
                weight: family.has_prior().then_some(0.0),
            });
        }
        let atom = &mut atoms[root_atom[root]];
        atom.members.push(i);
        if let Some(w) = atom.weight.as_mut() {
            *w += nodes[i].weight;
        }
    }
    Ok(AmbiguityPartition {
        set: set.clone(),
        nodes,
        atoms,
        template: family.template.clone(),
        has_prior: family.has_prior(),
    })
}

/// Atom-level quantities of the Bayesian setting.
#[derive(Debug, Clone)]
pub struct BayesAtomData {
    pub sigma_a: DMatrix<f64>,
    /// Prior-averaged cross block `E[Σ_{AAᶜ,τ} | atom]`.
    pub cross_bar: DMatrix<f64>,
    /// Prior-averaged unsampled variances.
    pub var_ac_bar: Vec<f64>,
    pub g: WeightMatrix,
    pub delta_min: f64,
    pub lambdas: Vec<f64>,
    /// Prior-averaged total variance, the atom's rate-zero distortion.
    pub delta_max: f64,
}

impl BayesAtomData {
    pub fn curve(&self) -> Result<SrdfCurve> {
        SrdfCurve::new(self.lambdas.clone(), self.delta_min)
    }

    /// Linear map `E[X_{Aᶜ} | X_A = y, atom] = cross_barᵀ Σ_A⁻¹ y`.
    pub fn lift_matrix(&self) -> Result<DMatrix<f64>> {
        let inv = self
            .sigma_a
            .clone()
            .cholesky()
            .ok_or(Error::SingularSigmaA)?
            .inverse();
        Ok(self.cross_bar.transpose() * inv)
    }
}

/// Averages the atom's members under the prior (uniformly if the atom has no mass).
///
/// Within an atom `X_A` has one Gaussian law, so the conditional mean of
/// `X_{Aᶜ}` given `X_A` is linear with the averaged cross block and the
/// atom's distortion floor has the same closed form as the known-law case.
pub fn bayes_atom_data(part: &AmbiguityPartition, atom: usize) -> Result<BayesAtomData> {
    if !part.has_prior() {
        return Err(Error::NoPrior);
    }
    let atom = part.atoms.get(atom).ok_or(Error::EmptyAtom)?;
    if atom.members.is_empty() {
        return Err(Error::EmptyAtom);
    }
    let mass: f64 = atom.members.iter().map(|&i| part.nodes[i].weight).sum();
    let weight_of = |i: usize| {
        if mass > 0.0 {
            part.nodes[i].weight / mass
        } else {
            1.0 / atom.members.len() as f64
        }
    };
    let first = partition(&part.nodes[atom.members[0]].model, &part.set)?;
    let mut cross_bar = DMatrix::zeros(first.sigma_a_ac.nrows(), first.sigma_a_ac.ncols());
    let mut var_ac_bar = vec![0.0; first.unsampled.len()];
    let mut delta_max = 0.0;
    for &i in &atom.members {
        let w = weight_of(i);
        let bp = partition(&part.nodes[i].model, &part.set)?;
        cross_bar += &bp.sigma_a_ac * w;
        for (acc, v) in var_ac_bar.iter_mut().zip(bp.sigma_ac.diagonal().iter()) {
            *acc += w * v;
        }
        delta_max += w * part.nodes[i].model.trace();
    }
    let sigma_a = atom.sigma_a.clone();
    let g = weight_from_blocks(&sigma_a, &cross_bar)?;
    let delta_min = min_distortion_from_blocks(&sigma_a, &cross_bar, var_ac_bar.iter().sum())?;
    let lambdas = product_eigenvalues(&sigma_a, &g)?;
    Ok(BayesAtomData {
        sigma_a,
        cross_bar,
        var_ac_bar,
        g,
        delta_min,
        lambdas,
        delta_max,
    })
}

/// `ρ^B_A(δ, τ1)`: water-filling on the atom's spectrum with budget `δ − Δ_min,A,τ1`.
pub fn rho_bayes(data: &BayesAtomData, delta: f64) -> Result<SrdfPoint> {
    data.curve()?.rate(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesUsrdf {
    pub delta: f64,
    pub rate_bits: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Equalizing allocation `Δ*_{τ1} = D^B(r, τ1)`, one entry per atom.
    pub allocation: Vec<f64>,
    pub atom_weights: Vec<f64>,
}

/// Precomputed atom curves for repeated Bayesian evaluations.
#[derive(Debug, Clone)]
pub struct BayesProblem {
    pub atoms: Vec<BayesAtomData>,
    pub weights: Vec<f64>,
    curves: Vec<SrdfCurve>,
}

impl BayesProblem {
    pub fn new(part: &AmbiguityPartition) -> Result<Self> {
        if !part.has_prior() {
            return Err(Error::NoPrior);
        }
        let atoms: Vec<BayesAtomData> = (0..part.atoms.len())
            .into_par_iter()
            .map(|i| bayes_atom_data(part, i))
            .collect::<Result<_>>()?;
        let curves = atoms.iter().map(|a| a.curve()).collect::<Result<_>>()?;
        let weights = part.atoms.iter().map(|a| a.weight.unwrap_or(0.0)).collect();
        Ok(Self {
            atoms,
            weights,
            curves,
        })
    }

    /// `E[Δ_min,A,θ1]`.
    pub fn delta_min(&self) -> f64 {
        self.weights.iter().zip(&self.atoms).map(|(w, a)| w * a.delta_min).sum()
    }

    /// Prior-averaged total variance.
    pub fn delta_max(&self) -> f64 {
        self.weights.iter().zip(&self.atoms).map(|(w, a)| w * a.delta_max).sum()
    }

    fn expected_distortion(&self, rate: f64) -> Result<f64> {
        let mut total = 0.0;
        for (w, c) in self.weights.iter().zip(&self.curves) {
            if *w > 0.0 {
                total += w * c.distortion(rate)?;
            }
        }
        Ok(total)
    }

    /// Min-max Bayesian USRDf: bisection on the common per-atom rate `r` until
    /// the prior-averaged distortion-rate values meet `delta`.
    pub fn solve(&self, delta: f64) -> Result<BayesUsrdf> {
        let (delta_min, delta_max) = (self.delta_min(), self.delta_max());
        if !(delta > delta_min) {
            return Err(Error::InfeasibleDistortion { delta, delta_min });
        }
        let rate = if delta >= delta_max {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, RATE_CAP_BITS);
            for _ in 0..200 {
                if hi - lo < 1e-13 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if self.expected_distortion(mid)? > delta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let allocation = self
            .curves
            .iter()
            .map(|c| c.distortion(rate))
            .collect::<Result<_>>()?;
        Ok(BayesUsrdf {
            delta,
            rate_bits: rate,
            delta_min,
            delta_max,
            allocation,
            atom_weights: self.weights.clone(),
        })
    }
}

/// Bayesian USRDf `R_A(Δ)` of a projected family.
pub fn bayes_usrdf(part: &AmbiguityPartition, delta: f64) -> Result<BayesUsrdf> {
    BayesProblem::new(part)?.solve(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonBayesMethod {
    /// Every atom is one member: the worst known-law SRDf.
    SingletonAtoms,
    /// Symmetric correlated pair, closed form in the smallest `r²`.
    SymmetricPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonBayesUsrdf {
    pub delta: f64,
    pub rate_bits: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub method: NonBayesMethod,
}

/// Evaluation plan for the nonBayesian USRDf of one projected family.
#[derive(Debug, Clone)]
pub enum NonBayesProblem {
    Singletons { curves: Vec<(SrdfCurve, f64)> },
    SymmetricPair { sigma2: f64, r2_min: f64 },
}

impl NonBayesProblem {
    pub fn new(part: &AmbiguityPartition) -> Result<Self> {
        if part.all_singletons() {
            let curves = part
                .nodes
                .iter()
                .map(|n| {
                    crate::srdf::srdf_curve(&n.model, &part.set).map(|c| (c, n.model.trace()))
                })
                .collect::<Result<_>>()?;
            return Ok(NonBayesProblem::Singletons { curves });
        }
        match part.template {
            CovTemplate::Example3 { sigma2 } if part.set.len() == 1 => {
                let r2_min = part
                    .nodes
                    .iter()
                    .map(|n| n.params[0] * n.params[0])
                    .fold(f64::INFINITY, f64::min);
                Ok(NonBayesProblem::SymmetricPair { sigma2, r2_min })
            }
            _ => Err(Error::UnsupportedFamily(
                "worst-case rate for ambiguity atoms with several members is only available \
                 for the symmetric correlated-pair family"
                    .into(),
            )),
        }
    }

    pub fn delta_min(&self) -> f64 {
        match self {
            NonBayesProblem::Singletons { curves } => curves
                .iter()
                .map(|(c, _)| c.delta_min)
                .fold(f64::MIN, f64::max),
            NonBayesProblem::SymmetricPair { sigma2, r2_min } => sigma2 * (1.0 - r2_min),
        }
    }

    pub fn delta_max(&self) -> f64 {
        match self {
            NonBayesProblem::Singletons { curves } => {
                curves.iter().map(|(_, t)| *t).fold(f64::MIN, f64::max)
            }
            NonBayesProblem::SymmetricPair { sigma2, .. } => 2.0 * sigma2,
        }
    }

    pub fn solve(&self, delta: f64) -> Result<NonBayesUsrdf> {
        let (delta_min, delta_max) = (self.delta_min(), self.delta_max());
        if !(delta > delta_min) {
            return Err(Error::InfeasibleDistortion { delta, delta_min });
        }
        let (rate_bits, method) = match self {
            NonBayesProblem::Singletons { curves } => {
                let mut worst: f64 = 0.0;
                for (c, trace) in curves {
                    if delta < *trace {
                        worst = worst.max(c.rate(delta)?.rate_bits);
                    }
                }
                (worst, NonBayesMethod::SingletonAtoms)
            }
            NonBayesProblem::SymmetricPair { sigma2, r2_min } => {
                let r = if delta >= delta_max {
                    0.0
                } else {
                    0.5 * (sigma2 * (1.0 + r2_min) / (delta - delta_min)).log2().max(0.0)
                };
                (r, NonBayesMethod::SymmetricPair)
            }
        };
        Ok(NonBayesUsrdf {
            delta,
            rate_bits,
            delta_min,
            delta_max,
            method,
        })
    }
}

/// NonBayesian USRDf `max_{τ1} ρ^{nB}_A(Δ, τ1)` where supported.
pub fn nonbayes_usrdf(part: &AmbiguityPartition, delta: f64) -> Result<NonBayesUsrdf> {
    NonBayesProblem::new(part)?.solve(delta)
}

/// Known-law SRDf of one grid member, used as the singleton-atom building block.
pub fn member_srdf(part: &AmbiguityPartition, node: usize, delta: f64) -> Result<SrdfPoint> {
    let n = part
        .nodes
        .get(node)
        .ok_or(Error::IndexOutOfRange { index: node, dim: part.nodes.len() })?;
    srdf(&n.model, &part.set, delta)
}
