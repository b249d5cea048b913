//! Gaussian memoryless fields on `I = [0, 1]`.
//!
//! A field is sampled at finitely many points `A = {a_1 < … < a_k}` and
//! reconstructed everywhere on `I` under integrated squared error. The
//! sampling rate distortion function has the same water-filling form as the
//! finite case with
//!
//! * `G_{A,I} = Σ_A⁻¹ (∫ r(u, A) r(u, A)ᵀ du) Σ_A⁻¹`,
//! * `Δ_min,A = ∫ (r(u, u) − r(u, A)ᵀ Σ_A⁻¹ r(u, A)) du`,
//! * `Δ_max = ∫ r(u, u) du`.
//!
//! Integrals use composite Simpson on segments split at the sampling points
//! (and at the mesh lines of tabulated kernels), where the kernel has kinks.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{cholesky_checked, cholesky_solve, symmetrize, validate_covariance};
use crate::srdf::{product_eigenvalues, SrdfCurve, SrdfPoint, WeightMatrix};

pub const DEFAULT_QUAD_PANELS: usize = 2048;
/// Relative change allowed between full- and half-resolution quadrature.
pub const QUAD_CONSISTENCY_TOL: f64 = 1e-7;
/// Minimum spacing between sampling points kept by the placement optimizer.
pub const SEP_TOL: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 16;
/// Evaluations of the coarse scan preceding each line search; tabulated
/// kernels use at least two per mesh cell.
const LINE_SCAN_POINTS: usize = 32;

/// Covariance kernel sampled on a uniform `N×N` mesh over `[0,1]²`,
/// bilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    values: DMatrix<f64>,
}

impl TabulatedKernel {
    /// `values[(i, j)] = r(i/(N−1), j/(N−1))`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, cols) = values.shape();
        if n != cols || n < 2 {
            return Err(Error::Domain(format!(
                "kernel mesh must be square with N >= 2, got {n}x{cols}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("kernel mesh has non-finite entries".into()));
        }
        let tol = 1e-9 * values.amax();
        for i in 0..n {
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > tol {
                    return Err(Error::Domain(format!(
                        "kernel mesh is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            values: symmetrize(&values),
        })
    }

    /// Parses the mesh format: a first line holding `N`, then `N²` rows `i,j,value`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("kernel mesh file is empty".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("expected mesh size N, got {header:?}")))?;
        if n < 2 {
            return Err(Error::Parse(format!("mesh size must be >= 2, got {n}")));
        }
        let mut values = DMatrix::from_element(n, n, f64::NAN);
        let mut seen = 0usize;
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("malformed mesh row {}: {line:?}", lineno + 2));
            if fields.len() != 3 {
                return Err(bad());
            }
            let i: usize = fields[0].parse().map_err(|_| bad())?;
            let j: usize = fields[1].parse().map_err(|_| bad())?;
            let v: f64 = fields[2].parse().map_err(|_| bad())?;
            if i >= n || j >= n {
                return Err(Error::Parse(format!("mesh index ({i}, {j}) out of range for N={n}")));
            }
            if !values[(i, j)].is_nan() {
                return Err(Error::Parse(format!("mesh entry ({i}, {j}) repeated")));
            }
            values[(i, j)] = v;
            seen += 1;
        }
        if seen != n * n {
            return Err(Error::Parse(format!("expected {} mesh rows, got {seen}", n * n)));
        }
        Self::new(values)
    }

    pub fn mesh_size(&self) -> usize {
        self.values.nrows()
    }

    fn eval(&self, s: f64, u: f64) -> f64 {
        let last = self.mesh_size() - 1;
        let locate = |x: f64| {
            let t = x.clamp(0.0, 1.0) * last as f64;
            let i = (t.floor() as usize).min(last - 1);
            (i, t - i as f64)
        };
        let (i, fs) = locate(s);
        let (j, fu) = locate(u);
        let v = &self.values;
        (1.0 - fs) * ((1.0 - fu) * v[(i, j)] + fu * v[(i, j + 1)])
            + fs * ((1.0 - fu) * v[(i + 1, j)] + fu * v[(i + 1, j + 1)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Stationary Gauss–Markov kernel `r(s, u) = p^{|s−u|}`, `0 < p < 1`.
    GaussMarkov { p: f64 },
    Tabulated(TabulatedKernel),
}

impl Kernel {
    pub fn gauss_markov(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("Gauss-Markov parameter p must lie in (0,1), got {p}")));
        }
        Ok(Kernel::GaussMarkov { p })
    }

    pub fn eval(&self, s: f64, u: f64) -> f64 {
        match self {
            Kernel::GaussMarkov { p } => p.powf((s - u).abs()),
            Kernel::Tabulated(t) => t.eval(s, u),
        }
    }

    /// Points where the kernel is not smooth, apart from the sampling points.
    fn kinks(&self) -> Vec<f64> {
        match self {
            Kernel::GaussMarkov { .. } => Vec::new(),
            Kernel::Tabulated(t) => {
                let last = (t.mesh_size() - 1) as f64;
                (1..t.mesh_size() - 1).map(|i| i as f64 / last).collect()
            }
        }
    }
}

/// A field law together with its quadrature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub kernel: Kernel,
    /// Total Simpson subintervals over `[0,1]`.
    pub quad_panels: usize,
}

impl FieldModel {
    pub fn new(kernel: Kernel, quad_panels: usize) -> Result<Self> {
        if quad_panels < 4 || quad_panels % 2 != 0 {
            return Err(Error::Domain(format!(
                "quadrature panel count must be even and at least 4, got {quad_panels}"
            )));
        }
        Ok(Self {
            kernel,
            quad_panels,
        })
    }

    pub fn gauss_markov(p: f64) -> Result<Self> {
        Self::new(Kernel::gauss_markov(p)?, DEFAULT_QUAD_PANELS)
    }
}

/// Sampling points `a_1 < … < a_k` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSamplingSet {
    points: Vec<f64>,
}

impl FieldSamplingSet {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSamplingSet("at least one sampling point is required".into()));
        }
        if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidSamplingSet(format!("point {p} outside [0, 1]")));
        }
        points.sort_by(f64::total_cmp);
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSamplingSet("sampling points must be distinct".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Composite Simpson nodes and weights on `[0,1]`, split at `breaks`.
struct QuadRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadRule {
    /// Rule with about `panels` Simpson subintervals over `[0,1]`, at least
    /// four per segment.
    fn new(panels: usize, breaks: &[f64]) -> Self {
        Self::build(panels, breaks, false)
    }

    /// The rule from [`QuadRule::new`] with every segment at half resolution,
    /// so the two always differ and can be compared.
    fn coarse(panels: usize, breaks: &[f64]) -> Self {
        Self::build(panels, breaks, true)
    }

    fn build(panels: usize, breaks: &[f64], coarse: bool) -> Self {
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|b| *b > 0.0 && *b < 1.0)
            .chain([0.0, 1.0])
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let quarter = ((panels as f64 * len / 4.0).ceil() as usize).max(1);
            let n = if coarse { 2 * quarter } else { 4 * quarter };
            let h = len / n as f64;
            for i in 0..=n {
                let coef = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let x = if i == n { b } else { a + i as f64 * h };
                // Segment endpoints are shared; merge their weights.
                if i == 0 && nodes.last() == Some(&a) {
                    *weights.last_mut().unwrap() += coef * h / 3.0;
                } else {
                    nodes.push(x);
                    weights.push(coef * h / 3.0);
                }
            }
        }
        Self { nodes, weights }
    }
}

/// Everything the field engines integrate, from one pass over the nodes.
#[derive(Debug, Clone)]
struct FieldIntegrals {
    inner: DMatrix<f64>,
    delta_min: f64,
    delta_max: f64,
    min_raw_mmse: f64,
}

fn integrate(
    field: &FieldModel,
    set: &FieldSamplingSet,
    chol: &DMatrix<f64>,
    coarse: bool,
    want_inner: bool,
) -> FieldIntegrals {
    let a = set.points();
    let k = a.len();
    let mut breaks = field.kernel.kinks();
    breaks.extend_from_slice(a);
    let rule = if coarse {
        QuadRule::coarse(field.quad_panels, &breaks)
    } else {
        QuadRule::new(field.quad_panels, &breaks)
    };
    let mut inner = DMatrix::zeros(k, k);
    let (mut delta_min, mut delta_max) = (0.0, 0.0);
    let mut min_raw_mmse = f64::INFINITY;
    let mut c = vec![0.0; k];
    let mut w = vec![0.0; k];
    for (&u, &wt) in rule.nodes.iter().zip(&rule.weights) {
        for (ci, &ai) in c.iter_mut().zip(a) {
            *ci = field.kernel.eval(u, ai);
        }
        // Forward substitution L w = c.
        let mut explained = 0.0;
        for i in 0..k {
            let mut s = c[i];
            for j in 0..i {
                s -= chol[(i, j)] * w[j];
            }
            w[i] = s / chol[(i, i)];
            explained += w[i] * w[i];
        }
        let var = field.kernel.eval(u, u);
        let raw = var - explained;
        min_raw_mmse = min_raw_mmse.min(raw);
        delta_min += wt * raw.max(0.0);
        delta_max += wt * var;
        if want_inner {
            for i in 0..k {
                for j in 0..=i {
                    inner[(i, j)] += wt * c[i] * c[j];
                }
            }
        }
    }
    if want_inner {
        for i in 0..k {
            for j in 0..i {
                inner[(j, i)] = inner[(i, j)];
            }
        }
    }
    FieldIntegrals {
        inner,
        delta_min,
        delta_max,
        min_raw_mmse,
    }
}

fn relative_change(full: f64, half: f64, scale: f64) -> f64 {
    (full - half).abs() / full.abs().max(scale).max(1e-300)
}

/// `Σ_A = [r(a_i, a_j)]`, validated positive definite.
pub fn field_gram(field: &FieldModel, set: &FieldSamplingSet) -> Result<DMatrix<f64>> {
    let a = set.points();
    let gram = DMatrix::from_fn(a.len(), a.len(), |i, j| field.kernel.eval(a[i], a[j]));
    Ok(validate_covariance(&gram)?.sigma().clone())
}

/// Field functionals at one sampling set, with the half-resolution check applied.
#[derive(Debug, Clone, Serialize)]
pub struct FieldAnalysis {
    #[serde(skip)]
    pub gram: DMatrix<f64>,
    #[serde(skip)]
    pub weight: DMatrix<f64>,
    pub delta_min: f64,
    pub delta_max: f64,
    pub lambdas: Vec<f64>,
    /// Smallest MMSE integrand value before clamping at zero.
    pub min_raw_mmse: f64,
}

impl FieldAnalysis {
    pub fn curve(&self) -> Result<SrdfCurve> {
        SrdfCurve::new(self.lambdas.clone(), self.delta_min)
    }
}

/// Computes `Σ_A`, `G_{A,I}`, `Δ_min,A`, `Δ_max` and the spectrum of `G_{A,I} Σ_A`.
pub fn analyze_field(field: &FieldModel, set: &FieldSamplingSet) -> Result<FieldAnalysis> {
    let gram = field_gram(field, set)?;
    let chol = cholesky_checked(&gram)?;
    let full = integrate(field, set, &chol, false, true);
    let half = integrate(field, set, &chol, true, true);
    let inner_scale = full.inner.amax();
    let mut worst = relative_change(full.delta_min, half.delta_min, 1e-6 * full.delta_max);
    worst = worst.max(relative_change(full.delta_max, half.delta_max, 0.0));
    for (f, h) in full.inner.iter().zip(half.inner.iter()) {
        worst = worst.max(relative_change(*f, *h, inner_scale));
    }
    if worst > QUAD_CONSISTENCY_TOL {
        return Err(Error::QuadratureUnderResolved {
            relative_change: worst,
        });
    }
    let left = cholesky_solve(&chol, &full.inner);
    let weight = symmetrize(&cholesky_solve(&chol, &left.transpose()));
    let lambdas = product_eigenvalues(&gram, &weight_matrix_unchecked(weight.clone()))?;
    Ok(FieldAnalysis {
        gram,
        weight,
        delta_min: full.delta_min,
        delta_max: full.delta_max,
        lambdas,
        min_raw_mmse: full.min_raw_mmse,
    })
}

fn weight_matrix_unchecked(g: DMatrix<f64>) -> WeightMatrix {
    WeightMatrix::from_matrix_unchecked(g)
}

/// `G_{A,I}`.
pub fn field_weight_matrix(field: &FieldModel, set: &FieldSamplingSet) -> Result<WeightMatrix> {
    Ok(weight_matrix_unchecked(analyze_field(field, set)?.weight))
}

/// `Δ_min,A` for the field.
pub fn field_min_distortion(field: &FieldModel, set: &FieldSamplingSet) -> Result<f64> {
    Ok(analyze_field(field, set)?.delta_min)
}

/// `Δ_max = ∫ r(u, u) du`.
pub fn field_max_distortion(field: &FieldModel) -> f64 {
    let rule = QuadRule::new(field.quad_panels, &field.kernel.kinks());
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&u, &w)| w * field.kernel.eval(u, u))
        .sum()
}

/// Pointwise MMSE `r(u,u) − r(u,A)ᵀ Σ_A⁻¹ r(u,A)` at the quadrature nodes, unclamped.
pub fn field_mmse_profile(field: &FieldModel, set: &FieldSamplingSet) -> Result<Vec<(f64, f64)>> {
    let gram = field_gram(field, set)?;
    let a = set.points();
    let mut breaks = field.kernel.kinks();
    breaks.extend_from_slice(a);
    let rule = QuadRule::new(field.quad_panels, &breaks);
    let c = DMatrix::from_fn(a.len(), rule.nodes.len(), |i, n| {
        field.kernel.eval(rule.nodes[n], a[i])
    });
    let chol = cholesky_checked(&gram)?;
    let w = cholesky_solve(&chol, &c);
    Ok(rule
        .nodes
        .iter()
        .enumerate()
        .map(|(n, &u)| (u, field.kernel.eval(u, u) - c.column(n).dot(&w.column(n))))
        .collect())
}

/// `ρ_A(Δ)` for the field.
pub fn field_srdf(field: &FieldModel, set: &FieldSamplingSet, delta: f64) -> Result<SrdfPoint> {
    let analysis = analyze_field(field, set)?;
    let mut point = analysis.curve()?.rate(delta)?;
    point.delta_max = analysis.delta_max;
    if delta >= analysis.delta_max {
        point.rate_bits = 0.0;
        point.trivial = true;
        point.alpha = None;
    }
    Ok(point)
}

/// `Δ_min,{a}` of the unit-variance Gauss–Markov field sampled at one point:
/// `1 − (p^{2a} + p^{2(1−a)} − 2) / (2 ln p)`.
pub fn gauss_markov_single_min_distortion(p: f64, a: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(0.0..=1.0).contains(&a) {
        return Err(Error::Domain(format!("need 0 < p < 1 and 0 <= a <= 1, got p={p}, a={a}")));
    }
    Ok(1.0 - (p.powf(2.0 * a) + p.powf(2.0 * (1.0 - a)) - 2.0) / (2.0 * p.ln()))
}

/// `γ(a) = (p^{2a}(1 − 2a ln p) − 1) / (ln p · (1 − p^{2a}))`: the part of a
/// segment of length `a` between two samples explained by its endpoints.
///
/// The segment's reconstruction error is `a − γ(a)`. Logarithms are natural.
pub fn gauss_markov_gamma(p: f64, a: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(a > 0.0 && a <= 1.0) {
        return Err(Error::Domain(format!("need 0 < p < 1 and 0 < a <= 1, got p={p}, a={a}")));
    }
    let ln_p = p.ln();
    let q = p.powf(2.0 * a);
    Ok((q * (1.0 - 2.0 * a * ln_p) - 1.0) / ln_p / (1.0 - q))
}

/// `Δ_min,A = 1 − Σ γ(a_{i+1} − a_i)` for sampling sets containing both endpoints.
pub fn gauss_markov_pinned_min_distortion(p: f64, set: &FieldSamplingSet) -> Result<f64> {
    let a = set.points();
    if a.len() < 2 || a[0] != 0.0 || a[a.len() - 1] != 1.0 {
        return Err(Error::Domain("sampling set must contain both endpoints 0 and 1".into()));
    }
    let mut explained = 0.0;
    for w in a.windows(2) {
        explained += gauss_markov_gamma(p, w[1] - w[0])?;
    }
    Ok(1.0 - explained)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PlacementObjective {
    MinDelta,
    MinRateAt { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementOptions {
    pub restarts: usize,
    /// Fix the first and last points at 0 and 1.
    pub pin_endpoints: bool,
    pub seed: u64,
    pub max_sweeps: usize,
    /// Coordinate tolerance of each golden-section search.
    pub tolerance: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            pin_endpoints: false,
            seed: 0,
            max_sweeps: 100,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementResult {
    pub points: FieldSamplingSet,
    pub objective: f64,
    pub restart: usize,
}

/// Objective value without the resolution check; `+∞` where undefined.
fn placement_value(field: &FieldModel, points: &[f64], objective: PlacementObjective) -> f64 {
    let Ok(set) = FieldSamplingSet::new(points.to_vec()) else {
        return f64::INFINITY;
    };
    let Ok(gram) = field_gram(field, &set) else {
        return f64::INFINITY;
    };
    let Ok(chol) = cholesky_checked(&gram) else {
        return f64::INFINITY;
    };
    let want_inner = matches!(objective, PlacementObjective::MinRateAt { .. });
    let ints = integrate(field, &set, &chol, false, want_inner);
    match objective {
        PlacementObjective::MinDelta => ints.delta_min,
        PlacementObjective::MinRateAt { delta } => {
            if delta >= ints.delta_max {
                return 0.0;
            }
            let left = cholesky_solve(&chol, &ints.inner);
            let weight = symmetrize(&cholesky_solve(&chol, &left.transpose()));
            product_eigenvalues(&gram, &weight_matrix_unchecked(weight))
                .and_then(|l| SrdfCurve::new(l, ints.delta_min))
                .and_then(|c| c.rate(delta))
                .map(|p| p.rate_bits)
                .unwrap_or(f64::INFINITY)
        }
    }
}

fn golden_section(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn descend(
    field: &FieldModel,
    mut points: Vec<f64>,
    objective: PlacementObjective,
    opts: &PlacementOptions,
) -> (Vec<f64>, f64) {
    let k = points.len();
    let free: Vec<usize> = if opts.pin_endpoints {
        (1..k - 1).collect()
    } else {
        (0..k).collect()
    };
    let mut best = placement_value(field, &points, objective);
    let scan = match &field.kernel {
        Kernel::Tabulated(t) => (2 * (t.mesh_size() - 1)).max(LINE_SCAN_POINTS),
        Kernel::GaussMarkov { .. } => LINE_SCAN_POINTS,
    };
    for sweep in 0..opts.max_sweeps {
        let start = best;
        let mut moved: f64 = 0.0;
        for &i in &free {
            let lo = if i == 0 { 0.0 } else { points[i - 1] + SEP_TOL };
            let hi = if i + 1 == k { 1.0 } else { points[i + 1] - SEP_TOL };
            if hi <= lo {
                continue;
            }
            let mut trial = points.clone();
            let mut eval = |x: f64| {
                trial[i] = x;
                placement_value(field, &trial, objective)
            };
            let step = (hi - lo) / scan as f64;
            let (mut x, mut fx) = if sweep == 0 {
                // A coarse scan brackets the best basin before the
                // golden-section refinement, which only finds local minima.
                let (mut at, mut fat) = (0, f64::INFINITY);
                for j in 0..=scan {
                    let v = eval(lo + step * j as f64);
                    if v < fat {
                        (at, fat) = (j, v);
                    }
                }
                let a = lo + step * at.saturating_sub(1) as f64;
                let b = (lo + step * (at + 1) as f64).min(hi);
                let (x, fx) = golden_section(a, b, opts.tolerance, &mut eval);
                if fat < fx {
                    (lo + step * at as f64, fat)
                } else {
                    (x, fx)
                }
            } else {
                // Later sweeps stay in the basin found by the first one.
                let x0 = points[i];
                golden_section((x0 - step).max(lo), (x0 + step).min(hi), opts.tolerance, &mut eval)
            };
            if fx >= best {
                (x, fx) = (points[i], best);
            }
            moved = moved.max((x - points[i]).abs());
            points[i] = x;
            best = fx;
        }
        let improved = start - best > 1e-15 * start.abs().max(1e-300);
        if !improved || moved <= opts.tolerance {
            break;
        }
    }
    (points, best)
}

fn initial_points(k: usize, restart: usize, opts: &PlacementOptions) -> Vec<f64> {
    if restart == 0 {
        return if opts.pin_endpoints {
            (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
        } else {
            (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect()
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(restart as u64);
    loop {
        let mut pts: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        if opts.pin_endpoints {
            pts[0] = 0.0;
            pts[k - 1] = 1.0;
        }
        pts.sort_by(f64::total_cmp);
        if pts.windows(2).all(|w| w[1] - w[0] > 2.0 * SEP_TOL) {
            return pts;
        }
    }
}

/// Multi-start coordinate descent over sampling points in `[0, 1]`.
///
/// Each restart sweeps the free coordinates with golden-section line
/// searches, keeping the points ordered and at least [`SEP_TOL`] apart.
/// Restart 0 starts from a uniform layout; the others from seeded random
/// layouts. Heuristic: the result is the best local optimum found.
pub fn optimize_placement(
    field: &FieldModel,
    k: usize,
    objective: PlacementObjective,
    opts: &PlacementOptions,
) -> Result<PlacementResult> {
    if k == 0 {
        return Err(Error::Domain("placement needs k >= 1".into()));
    }
    if opts.pin_endpoints && k < 2 {
        return Err(Error::Domain("pinned endpoints need k >= 2".into()));
    }
    let runs: Vec<(usize, Vec<f64>, f64)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|restart| {
            let start = initial_points(k, restart, opts);
            let (pts, value) = descend(field, start, objective, opts);
            (restart, pts, value)
        })
        .collect();
    let (restart, points, objective) = runs
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    Ok(PlacementResult {
        points: FieldSamplingSet::new(points)?,
        objective,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gm(p: f64) -> FieldModel {
        FieldModel::gauss_markov(p).unwrap()
    }

    fn pts(v: &[f64]) -> FieldSamplingSet {
        FieldSamplingSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn gram_entries() {
        let g = field_gram(&gm(0.5), &pts(&[0.0, 1.0])).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let g = field_gram(&gm(0.5), &pts(&[0.3])).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        let g = field_gram(&gm(0.25), &pts(&[0.0, 0.5, 1.0])).unwrap();
        assert!((g[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((g[(1, 2)] - 0.5).abs() < 1e-15);
        assert!((g[(0, 2)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sampling_set_validation() {
        assert!(FieldSamplingSet::new(vec![]).is_err());
        assert!(FieldSamplingSet::new(vec![0.2, 0.2]).is_err());
        assert!(FieldSamplingSet::new(vec![1.2]).is_err());
        assert_eq!(pts(&[0.7, 0.1]).points(), &[0.1, 0.7]);
    }

    #[test]
    fn quad_rule_integrates_cubics_exactly() {
        let rule = QuadRule::new(8, &[0.3, 0.71]);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        let cubic: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x * x * x)
            .sum();
        assert!((cubic - 0.25).abs() < 1e-15);
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coarse_rule_halves_every_segment() {
        for panels in [4, 8, 64] {
            let fine = QuadRule::new(panels, &[0.3, 0.71]);
            let coarse = QuadRule::coarse(panels, &[0.3, 0.71]);
            // Three segments: fine has 4q subintervals each, coarse 2q.
            assert_eq!(fine.nodes.len() - 1, 2 * (coarse.nodes.len() - 1));
            assert!((coarse.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_kernel_weight() {
        let c = 0.8;
        let kernel = Kernel::Tabulated(TabulatedKernel::new(DMatrix::from_element(5, 5, c)).unwrap());
        let field = FieldModel::new(kernel, 64).unwrap();
        let g = field_weight_matrix(&field, &pts(&[0.4])).unwrap();
        // Σ_A = [c], M = [c²] → G = c² / c² = 1.
        assert!((g.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(field_min_distortion(&field, &pts(&[0.4])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_point_weight_matches_antiderivative() {
        for (p, a) in [(0.5, 0.5), (0.3, 0.1), (0.8, 0.9)] {
            let g = field_weight_matrix(&gm(p), &pts(&[a])).unwrap().matrix()[(0, 0)];
            let exact = (2.0 - p.powf(2.0 * a) - p.powf(2.0 * (1.0 - a))) / (2.0 * (1.0 / p).ln());
            assert!((g - exact).abs() < 1e-12, "p={p} a={a}: {g} vs {exact}");
        }
    }

    #[test]
    fn doubling_resolution_is_stable() {
        let set = pts(&[0.13, 0.5, 0.77]);
        let coarse = analyze_field(&gm(0.4), &set).unwrap();
        let fine = analyze_field(&FieldModel::new(Kernel::gauss_markov(0.4).unwrap(), 4096).unwrap(), &set)
            .unwrap();
        assert!((&coarse.weight - &fine.weight).amax() < 1e-9);
        assert!((coarse.delta_min - fine.delta_min).abs() < 1e-9);
    }

    #[test]
    fn min_distortion_closed_forms() {
        let d = field_min_distortion(&gm(0.5), &pts(&[0.5])).unwrap();
        assert!((d - 0.278_652_479_555_5).abs() < 1e-9, "{d}");
        let d = field_min_distortion(&gm(0.5), &pts(&[0.0])).unwrap();
        assert!((d - 0.458_989_359_666_6).abs() < 1e-9, "{d}");
        assert!((gauss_markov_single_min_distortion(0.5, 0.0).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn dense_sampling_leaves_no_residual() {
        let field = gm(0.5);
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let set = pts(&grid);
        let d = field_min_distortion(&field, &set).unwrap();
        let exact = gauss_markov_pinned_min_distortion(0.5, &set).unwrap();
        assert!((d - exact).abs() < 1e-9);
        assert!(d < 4e-3, "{d}");
    }

    #[test]
    fn field_srdf_single_point() {
        let field = gm(0.5);
        let dmin = gauss_markov_single_min_distortion(0.5, 0.5).unwrap();
        for delta in [0.3, 0.5, 0.9] {
            let r = field_srdf(&field, &pts(&[0.5]), delta).unwrap().rate_bits;
            let exact = 0.5 * ((1.0 - dmin) / (delta - dmin)).log2();
            assert!((r - exact).abs() < 1e-9);
        }
        let top = field_srdf(&field, &pts(&[0.5]), 1.0).unwrap();
        assert!(top.trivial && top.rate_bits == 0.0);
        assert!(matches!(
            field_srdf(&field, &pts(&[0.5]), 0.2),
            Err(Error::InfeasibleDistortion { .. })
        ));
    }

    #[test]
    fn reflected_sets_have_equal_rate() {
        let field = gm(0.6);
        let a = field_srdf(&field, &pts(&[0.1, 0.35]), 0.4).unwrap().rate_bits;
        let b = field_srdf(&field, &pts(&[0.65, 0.9]), 0.4).unwrap().rate_bits;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn gamma_domain() {
        assert!(gauss_markov_gamma(0.5, 0.0).is_err());
        assert!(gauss_markov_gamma(1.0, 0.5).is_err());
        assert!(gauss_markov_gamma(0.5, 1.0).is_ok());
        assert!(gauss_markov_pinned_min_distortion(0.5, &pts(&[0.1, 1.0])).is_err());
    }

    #[test]
    fn tabulated_csv_round_trip() {
        let text = "2\n0,0,1\n0,1,0.5\n1,0,0.5\n1,1,1\n";
        let t = TabulatedKernel::from_csv_str(text).unwrap();
        assert_eq!(t.mesh_size(), 2);
        assert!((t.eval(0.5, 0.5) - 0.75).abs() < 1e-15);
        assert!(TabulatedKernel::from_csv_str("2\n0,0,1\n").is_err());
        assert!(TabulatedKernel::from_csv_str("2\n0,0,1\n0,1,0.5\n1,0,0.4\n1,1,1\n").is_err());
        assert!(TabulatedKernel::from_csv_str("x\n").is_err());
    }

    #[test]
    fn under_resolved_quadrature_is_reported() {
        let field = FieldModel::new(Kernel::gauss_markov(0.01).unwrap(), 8).unwrap();
        assert!(matches!(
            analyze_field(&field, &pts(&[0.5])),
            Err(Error::QuadratureUnderResolved { .. })
        ));
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(0.0, 1.0, 1e-10, |x| (x - 0.3) * (x - 0.3));
        assert!((x - 0.3).abs() < 1e-8 && fx < 1e-15);
    }
}
