//! Monte Carlo validation of the quantize-then-lift construction.
//!
//! The sampled block `X_A^n` is vector quantized under the block-extended
//! weighted distortion `Σ_t d_A(x_t, y_t)` by a codebook trained with the
//! generalized Lloyd algorithm; each slot of the reproduction is then lifted
//! to the unsampled components by the linear MMSE map `Σ_{AᶜA} Σ_A⁻¹`.
//! Because the lift residual is orthogonal to `X_A`, the total MSE splits as
//! weighted MSE plus `Δ_min,A`; reports carry the pieces separately.
//!
//! The universal variant first estimates the sampled-block covariance from
//! a long observation, snaps it to a finite net over the atom
//! representatives and encodes with that net point's codebook.
//!
//! Randomness is ChaCha8 keyed by the config seed, with one stream per
//! trial or training set, so parallel runs are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{cholesky_checked, partition, BlockPartition, CovarianceModel, SamplingSet};
use crate::srdf::{min_distortion, srdf_curve, weight_matrix, WeightMatrix};
use crate::universal::{bayes_atom_data, project_family, AmbiguityPartition, BayesProblem, ParamFamily};

/// Largest codebook, in bits of index.
pub const CODEBOOK_CAP_BITS: u32 = 18;
/// Training blocks required per codeword.
pub const MIN_TRAIN_PER_CODEWORD: usize = 20;
pub const DEFAULT_LBG_ITERS: usize = 60;
/// LBG stops once the relative distortion improvement falls below this.
pub const LBG_REL_IMPROVEMENT: f64 = 1e-6;
const Z95: f64 = 1.959_963_984_540_054;

const TRAIN_STREAM_BASE: u64 = 1 << 40;
const TRIAL_STREAM_BASE: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Coding block length (time slots per codeword).
    pub n: usize,
    /// Target rate in bits per slot; codebooks hold `2^⌈n·R⌉` words.
    pub rate_bits: f64,
    pub train_blocks: usize,
    pub eval_blocks: usize,
    pub seed: u64,
    pub lbg_iters: usize,
    /// Spacing of the estimation net over sampled-block covariances.
    pub grid_delta: f64,
    /// Slots observed per universal trial; a multiple of `n`. Zero means `n`.
    pub estimation_len: usize,
    /// Keep per-block distortions in the report.
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1,
            rate_bits: 2.0,
            train_blocks: 20_000,
            eval_blocks: 10_000,
            seed: 0,
            lbg_iters: DEFAULT_LBG_ITERS,
            grid_delta: 0.05,
            estimation_len: 0,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn codebook_bits(&self) -> u32 {
        (self.n as f64 * self.rate_bits - 1e-9).ceil().max(0.0) as u32
    }

    pub fn codeword_count(&self) -> usize {
        1usize << self.codebook_bits()
    }

    /// Rate actually spent: `⌈n·R⌉ / n`.
    pub fn actual_rate(&self) -> f64 {
        self.codebook_bits() as f64 / self.n as f64
    }

    fn estimation_slots(&self) -> usize {
        if self.estimation_len == 0 {
            self.n
        } else {
            self.estimation_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSimConfig("block length n must be positive".into()));
        }
        if !(self.rate_bits >= 0.0) || !self.rate_bits.is_finite() {
            return Err(Error::InvalidSimConfig(format!("invalid rate {}", self.rate_bits)));
        }
        let bits = self.codebook_bits();
        if bits > CODEBOOK_CAP_BITS {
            return Err(Error::CodebookTooLarge {
                bits,
                cap_bits: CODEBOOK_CAP_BITS,
            });
        }
        let need = MIN_TRAIN_PER_CODEWORD * self.codeword_count();
        if self.train_blocks < need {
            return Err(Error::InvalidSimConfig(format!(
                "{} training blocks for {} codewords; at least {need} required",
                self.train_blocks,
                self.codeword_count()
            )));
        }
        if self.eval_blocks < 2 {
            return Err(Error::InvalidSimConfig("need at least 2 evaluation blocks".into()));
        }
        if self.lbg_iters == 0 {
            return Err(Error::InvalidSimConfig("lbg_iters must be positive".into()));
        }
        let est = self.estimation_slots();
        if est % self.n != 0 {
            return Err(Error::InvalidSimConfig(format!(
                "estimation length {est} is not a multiple of n = {}",
                self.n
            )));
        }
        if !(self.grid_delta > 0.0) {
            return Err(Error::InvalidSimConfig("grid_delta must be positive".into()));
        }
        Ok(())
    }
}

/// RNG for one independent stream of a seeded experiment.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_block(chol: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = chol.nrows();
    let z = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * z
}

/// `blocks` independent m×n blocks with i.i.d. `N(0, Σ)` columns; block `b`
/// draws from stream `b` of `seed`.
pub fn sample_gmms(model: &CovarianceModel, n: usize, blocks: usize, seed: u64) -> Vec<DMatrix<f64>> {
    (0..blocks)
        .into_par_iter()
        .map(|b| gaussian_block(model.cholesky(), n, &mut stream_rng(seed, b as u64)))
        .collect()
}

/// Linear MMSE map from the sampled to the unsampled components.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftMap {
    /// `Σ_{AᶜA} Σ_A⁻¹`, (m−k)×k.
    pub matrix: DMatrix<f64>,
}

impl LiftMap {
    pub fn new(bp: &BlockPartition) -> Result<Self> {
        let l = cholesky_checked(&bp.sigma_a).map_err(|_| Error::SingularSigmaA)?;
        let b = crate::model::cholesky_solve(&l, &bp.sigma_a_ac);
        Ok(Self {
            matrix: b.transpose(),
        })
    }

    pub fn apply(&self, y_a: &DVector<f64>) -> Result<DVector<f64>> {
        if y_a.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.ncols(),
                got: y_a.len(),
            });
        }
        Ok(&self.matrix * y_a)
    }
}

/// `E[X_{Aᶜ} | X_A = y_A] = Σ_{AᶜA} Σ_A⁻¹ y_A`.
pub fn mmse_lift(bp: &BlockPartition, y_a: &DVector<f64>) -> Result<DVector<f64>> {
    LiftMap::new(bp)?.apply(y_a)
}

/// `(1/n) Σ_t x_t x_tᵀ` over the columns of a k×n block.
pub fn ml_cov_estimate(x_a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x_a.ncols().max(1) as f64;
    let s = x_a * x_a.transpose() / n;
    (&s + s.transpose()) * 0.5
}

/// A codebook over n·k-dimensional blocks, searched under the block-extended
/// weighted metric. Codewords are stored in whitened coordinates
/// `w = Lᵀ x` (with `G = L Lᵀ`), where the metric is Euclidean.
#[derive(Debug, Clone)]
pub struct WeightedQuantizer {
    k: usize,
    n: usize,
    whiten: DMatrix<f64>,
    unwhiten: DMatrix<f64>,
    words: Vec<f64>,
    pub training_distortion: f64,
    pub iterations: usize,
}

impl WeightedQuantizer {
    fn dim(&self) -> usize {
        self.k * self.n
    }

    pub fn len(&self) -> usize {
        self.words.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn whiten_block(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let w = &self.whiten * x;
        // Column-major: slot t occupies [t·k, (t+1)·k).
        w.as_slice().to_vec()
    }

    /// Index of the nearest codeword and its weighted distortion (summed over slots).
    pub fn encode(&self, x: &DMatrix<f64>) -> (usize, f64) {
        nearest(&self.words, self.dim(), &self.whiten_block(x))
    }

    /// Codeword `j` as a k×n block in original coordinates.
    pub fn decode(&self, j: usize) -> DMatrix<f64> {
        let d = self.dim();
        let w = DMatrix::from_column_slice(self.k, self.n, &self.words[j * d..(j + 1) * d]);
        &self.unwhiten * w
    }

    /// Trains a codebook of `size` words by the generalized Lloyd algorithm.
    pub fn train(
        g: &WeightMatrix,
        training: &[DMatrix<f64>],
        size: usize,
        max_iters: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let k = g.dim();
        let n = training.first().map(|b| b.ncols()).unwrap_or(1);
        let chol = cholesky_checked(g.matrix())?;
        let whiten = chol.transpose();
        let unwhiten = whiten
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::EigenFailure("weight matrix factor not invertible".into()))?;
        let mut q = Self {
            k,
            n,
            whiten,
            unwhiten,
            words: Vec::new(),
            training_distortion: f64::NAN,
            iterations: 0,
        };
        if training.len() < size {
            return Err(Error::InvalidSimConfig(format!(
                "{} training vectors for {size} codewords",
                training.len()
            )));
        }
        let dim = q.dim();
        let data: Vec<f64> = training.iter().flat_map(|b| q.whiten_block(b)).collect();
        let count = training.len();
        let mut words: Vec<f64> = index::sample(rng, count, size)
            .into_iter()
            .flat_map(|i| data[i * dim..(i + 1) * dim].to_vec())
            .collect();
        let mut prev = f64::INFINITY;
        let mut iterations = 0;
        for _ in 0..max_iters {
            iterations += 1;
            let assign: Vec<(usize, f64)> = data
                .par_chunks(dim)
                .map(|x| nearest(&words, dim, x))
                .collect();
            let distortion = assign.iter().map(|a| a.1).sum::<f64>() / count as f64;
            if distortion > prev * (1.0 + 1e-9) {
                return Err(Error::TrainingDiverged {
                    before: prev,
                    after: distortion,
                });
            }
            let converged = prev.is_finite() && (prev - distortion) <= LBG_REL_IMPROVEMENT * distortion;
            prev = distortion;
            if converged {
                break;
            }
            let mut sums = vec![0.0; size * dim];
            let mut counts = vec![0usize; size];
            for (i, &(j, _)) in assign.iter().enumerate() {
                counts[j] += 1;
                for (s, x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                    *s += x;
                }
            }
            // Empty cells restart at the worst-served training vectors.
            let mut worst: Vec<usize> = Vec::new();
            if counts.contains(&0) {
                worst = (0..count).collect();
                worst.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
            }
            let mut next_worst = worst.into_iter();
            for j in 0..size {
                let word = &mut words[j * dim..(j + 1) * dim];
                if counts[j] == 0 {
                    let i = next_worst.next().expect("more training vectors than codewords");
                    word.copy_from_slice(&data[i * dim..(i + 1) * dim]);
                } else {
                    let c = counts[j] as f64;
                    for (w, s) in word.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                        *w = s / c;
                    }
                }
            }
        }
        q.words = words;
        q.training_distortion = prev / n as f64;
        q.iterations = iterations;
        Ok(q)
    }
}

fn nearest(words: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, w) in words.chunks_exact(dim).enumerate() {
        let mut d = 0.0;
        for (a, b) in w.iter().zip(x) {
            let e = a - b;
            d += e * e;
        }
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sample mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            half_width: Z95 * (var / n).sqrt(),
        }
    }
}

/// Per-block distortions, each normalized per time slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockTrace {
    pub block: usize,
    pub total: f64,
    pub weighted: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub empirical_total_mse: Estimate,
    pub empirical_weighted_mse: Estimate,
    pub empirical_lift_mse: Estimate,
    /// Per-block `total − weighted`, whose mean estimates `Δ_min,A`.
    pub decomposition: Estimate,
    pub delta_min: f64,
    /// Analytic distortion-rate value at the spent rate; no code beats it.
    pub distortion_rate_bound: f64,
    pub codeword_count: usize,
    pub rate_bits: f64,
    pub block_length: usize,
    pub eval_blocks: usize,
    pub seed: u64,
    pub training_distortion: f64,
    pub lbg_iterations: usize,
    /// Universal runs: fraction of trials with `‖θ̃ − θ1‖ ≤ 2δ`.
    pub estimator_hit_rate: Option<f64>,
    /// Universal runs: fraction of trials with `‖θ̂ − θ1‖ ≤ δ` for the raw estimate.
    pub raw_estimate_hit_rate: Option<f64>,
    pub grid_points: Option<usize>,
    /// Universal runs: `(1/N) log2 |Θ_{1,δ}|`, included in `rate_bits`.
    pub overhead_bits: Option<f64>,
    pub bad_event_mass: Option<f64>,
    /// `(1/T) Σ 1(bad) · D_t`.
    pub bad_event_contribution: Option<f64>,
    /// Cauchy–Schwarz cap `sqrt(mass · mean(D_t²))` on the contribution.
    pub bad_event_cap: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<BlockTrace>,
}

struct SlotCoder<'a> {
    quantizer: &'a WeightedQuantizer,
    g: &'a WeightMatrix,
    lift: &'a DMatrix<f64>,
}

impl SlotCoder<'_> {
    /// Codes an m×n block; returns (total, weighted, lift) per-slot averages.
    fn code(&self, x: &DMatrix<f64>, bp: &BlockPartition) -> (f64, f64, f64) {
        let n = x.ncols();
        let x_a = x.select_rows(bp.sampled.iter());
        let (j, _) = self.quantizer.encode(&x_a);
        let y_a = self.quantizer.decode(j);
        let err_a = &x_a - &y_a;
        let weighted: f64 = (0..n)
            .map(|t| {
                let e = err_a.column(t);
                e.dot(&(self.g.matrix() * e))
            })
            .sum();
        let sampled_sq = err_a.norm_squared();
        let lift_sq = if bp.unsampled.is_empty() {
            0.0
        } else {
            let x_ac = x.select_rows(bp.unsampled.iter());
            (x_ac - self.lift * &y_a).norm_squared()
        };
        let nf = n as f64;
        ((sampled_sq + lift_sq) / nf, weighted / nf, lift_sq / nf)
    }
}

fn training_set(
    chol: &DMatrix<f64>,
    n: usize,
    blocks: usize,
    seed: u64,
    stream: u64,
) -> Vec<DMatrix<f64>> {
    let mut rng = stream_rng(seed, stream);
    (0..blocks).map(|_| gaussian_block(chol, n, &mut rng)).collect()
}

/// Trains the two-step code on fresh data and evaluates it on `eval_blocks`
/// independent blocks.
pub fn two_step_code(model: &CovarianceModel, set: &SamplingSet, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let bp = partition(model, set)?;
    let g = weight_matrix(&bp)?;
    let lift = LiftMap::new(&bp)?;
    let delta_min = min_distortion(&bp)?;
    let chol_a = cholesky_checked(&bp.sigma_a)?;
    let training = training_set(&chol_a, cfg.n, cfg.train_blocks, cfg.seed, TRAIN_STREAM_BASE);
    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM_BASE - 1);
    let quantizer = WeightedQuantizer::train(&g, &training, cfg.codeword_count(), cfg.lbg_iters, &mut rng)?;
    drop(training);
    let coder = SlotCoder {
        quantizer: &quantizer,
        g: &g,
        lift: &lift.matrix,
    };
    let rows: Vec<(f64, f64, f64)> = (0..cfg.eval_blocks)
        .into_par_iter()
        .map(|b| {
            let x = gaussian_block(model.cholesky(), cfg.n, &mut stream_rng(cfg.seed, b as u64));
            coder.code(&x, &bp)
        })
        .collect();
    let bound = srdf_curve(model, set)?.distortion(cfg.actual_rate())?;
    Ok(report_from_rows(&rows, cfg, delta_min, bound, &quantizer))
}

fn report_from_rows(
    rows: &[(f64, f64, f64)],
    cfg: &SimConfig,
    delta_min: f64,
    bound: f64,
    quantizer: &WeightedQuantizer,
) -> SimReport {
    let col = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let totals = col(|r| r.0);
    let weighted = col(|r| r.1);
    let lifts = col(|r| r.2);
    let diffs: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let trace = if cfg.trace {
        rows.iter()
            .enumerate()
            .map(|(block, r)| BlockTrace {
                block,
                total: r.0,
                weighted: r.1,
                lift: r.2,
            })
            .collect()
    } else {
        Vec::new()
    };
    SimReport {
        empirical_total_mse: Estimate::from_samples(&totals),
        empirical_weighted_mse: Estimate::from_samples(&weighted),
        empirical_lift_mse: Estimate::from_samples(&lifts),
        decomposition: Estimate::from_samples(&diffs),
        delta_min,
        distortion_rate_bound: bound,
        codeword_count: quantizer.len(),
        rate_bits: cfg.actual_rate(),
        block_length: cfg.n,
        eval_blocks: rows.len(),
        seed: cfg.seed,
        training_distortion: quantizer.training_distortion,
        lbg_iterations: quantizer.iterations,
        estimator_hit_rate: None,
        raw_estimate_hit_rate: None,
        grid_points: None,
        overhead_bits: None,
        bad_event_mass: None,
        bad_event_contribution: None,
        bad_event_cap: None,
        trace,
    }
}

/// Finite net `Θ_{1,δ}` over the atom representatives: every atom lies within
/// `delta` (Frobenius) of some net point.
#[derive(Debug, Clone)]
pub struct EstimationGrid {
    pub reps: Vec<DMatrix<f64>>,
    /// Atom whose representative each net point is.
    pub atoms: Vec<usize>,
}

impl EstimationGrid {
    pub fn new(part: &AmbiguityPartition, delta: f64) -> Self {
        let mut reps: Vec<DMatrix<f64>> = Vec::new();
        let mut atoms = Vec::new();
        for (i, atom) in part.atoms.iter().enumerate() {
            if reps.iter().all(|r| (r - &atom.sigma_a).norm() > delta) {
                reps.push(atom.sigma_a.clone());
                atoms.push(i);
            }
        }
        Self { reps, atoms }
    }

    /// Nearest net point in Frobenius norm; ties go to the lowest index.
    pub fn nearest(&self, estimate: &DMatrix<f64>) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.reps.iter().enumerate() {
            if r.shape() != estimate.shape() {
                return Err(Error::DimensionMismatch {
                    expected: r.nrows(),
                    got: estimate.nrows(),
                });
            }
            let d = (r - estimate).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|b| b.0).ok_or(Error::EmptyGrid)
    }
}

/// Output of the universal encoder for one observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniversalIndex {
    pub grid_index: usize,
    /// One codeword index per n-slot sub-block.
    pub codewords: Vec<usize>,
}

/// Estimates the sampled-block covariance, snaps it to the net and encodes
/// each n-slot sub-block with that net point's codebook.
pub fn universal_encode(
    grid: &EstimationGrid,
    codebooks: &[WeightedQuantizer],
    x_a: &DMatrix<f64>,
) -> Result<UniversalIndex> {
    if grid.reps.is_empty() || codebooks.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if codebooks.len() != grid.reps.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.reps.len(),
            got: codebooks.len(),
        });
    }
    let grid_index = grid.nearest(&ml_cov_estimate(x_a))?;
    let q = &codebooks[grid_index];
    if x_a.ncols() % q.n != 0 || x_a.nrows() != q.k {
        return Err(Error::DimensionMismatch {
            expected: q.n,
            got: x_a.ncols(),
        });
    }
    let codewords = (0..x_a.ncols() / q.n)
        .map(|b| q.encode(&x_a.columns(b * q.n, q.n).into_owned()).0)
        .collect();
    Ok(UniversalIndex {
        grid_index,
        codewords,
    })
}

fn draw_node(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Universal two-step code on a Bayesian family.
///
/// Each of the `eval_blocks` trials draws `θ` from the prior, observes
/// `estimation_len` slots, and codes them with the codebook chosen by the
/// estimate. Decoding lifts with the chosen atom's averaged cross block.
pub fn universal_two_step(family: &ParamFamily, set: &SamplingSet, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let part = project_family(family, set)?;
    if !part.has_prior() {
        return Err(Error::NoPrior);
    }
    let grid = EstimationGrid::new(&part, cfg.grid_delta);
    if grid.reps.is_empty() {
        return Err(Error::EmptyGrid);
    }
    struct NetCode {
        g: WeightMatrix,
        lift: DMatrix<f64>,
        quantizer: WeightedQuantizer,
    }
    let codes: Vec<NetCode> = grid
        .atoms
        .par_iter()
        .enumerate()
        .map(|(i, &atom)| {
            let data = bayes_atom_data(&part, atom)?;
            let chol = cholesky_checked(&data.sigma_a)?;
            let training = training_set(&chol, cfg.n, cfg.train_blocks, cfg.seed, TRAIN_STREAM_BASE + i as u64);
            let mut rng = stream_rng(cfg.seed, TRAIN_STREAM_BASE - 1 - i as u64);
            let quantizer =
                WeightedQuantizer::train(&data.g, &training, cfg.codeword_count(), cfg.lbg_iters, &mut rng)?;
            Ok(NetCode {
                lift: data.lift_matrix()?,
                g: data.g,
                quantizer,
            })
        })
        .collect::<Result<_>>()?;
    let quantizers: Vec<WeightedQuantizer> = codes.iter().map(|c| c.quantizer.clone()).collect();
    let weights: Vec<f64> = part.nodes.iter().map(|n| n.weight).collect();
    let slots = cfg.estimation_slots();
    let n = cfg.n;
    let sampled = &part.set.indices().to_vec();
    let unsampled = part.set.complement(family.dim());

    struct Trial {
        total: f64,
        weighted: f64,
        lift: f64,
        hit: bool,
        raw_hit: bool,
    }
    let trials: Vec<Trial> = (0..cfg.eval_blocks)
        .into_par_iter()
        .map(|t| -> Result<Trial> {
            let mut rng = stream_rng(cfg.seed, TRIAL_STREAM_BASE + t as u64);
            let node = &part.nodes[draw_node(&weights, &mut rng)];
            let x = gaussian_block(node.model.cholesky(), slots, &mut rng);
            let x_a = x.select_rows(sampled.iter());
            let index = universal_encode(&grid, &quantizers, &x_a)?;
            let code = &codes[index.grid_index];
            let theta1 = partition(&node.model, &part.set)?.sigma_a;
            let hit = (&grid.reps[index.grid_index] - &theta1).norm() <= 2.0 * cfg.grid_delta;
            let raw_hit = (ml_cov_estimate(&x_a) - &theta1).norm() <= cfg.grid_delta;
            let (mut total, mut weighted, mut lift) = (0.0, 0.0, 0.0);
            for (b, &j) in index.codewords.iter().enumerate() {
                let cols = b * n..(b + 1) * n;
                let y_a = code.quantizer.decode(j);
                let xa = x_a.columns(cols.start, n);
                let err = xa - &y_a;
                for s in 0..n {
                    let e = err.column(s);
                    weighted += e.dot(&(code.g.matrix() * e));
                }
                total += err.norm_squared();
                if !unsampled.is_empty() {
                    let x_ac = x.columns(cols.start, n).select_rows(unsampled.iter());
                    let l = (x_ac - &code.lift * &y_a).norm_squared();
                    lift += l;
                    total += l;
                }
            }
            let s = slots as f64;
            Ok(Trial {
                total: total / s,
                weighted: weighted / s,
                lift: lift / s,
                hit,
                raw_hit,
            })
        })
        .collect::<Result<_>>()?;

    let problem = BayesProblem::new(&part)?;
    let rows: Vec<(f64, f64, f64)> = trials.iter().map(|t| (t.total, t.weighted, t.lift)).collect();
    let overhead = (grid.reps.len() as f64).log2() / slots as f64;
    let mut bound = 0.0;
    for (w, a) in problem.weights.iter().zip(&problem.atoms) {
        bound += w * a.curve()?.distortion(cfg.actual_rate())?;
    }
    let mut report = report_from_rows(&rows, cfg, problem.delta_min(), bound, &codes[0].quantizer);
    let count = trials.len() as f64;
    let bad: Vec<&Trial> = trials.iter().filter(|t| !t.hit).collect();
    let mass = bad.len() as f64 / count;
    let contribution = bad.iter().map(|t| t.total).sum::<f64>() / count;
    let second_moment = trials.iter().map(|t| t.total * t.total).sum::<f64>() / count;
    report.rate_bits = cfg.actual_rate() + overhead;
    report.training_distortion = codes.iter().map(|c| c.quantizer.training_distortion).sum::<f64>() / codes.len() as f64;
    report.estimator_hit_rate = Some(1.0 - mass);
    report.raw_estimate_hit_rate = Some(trials.iter().filter(|t| t.raw_hit).count() as f64 / count);
    report.grid_points = Some(grid.reps.len());
    report.overhead_bits = Some(overhead);
    report.bad_event_mass = Some(mass);
    report.bad_event_contribution = Some(contribution);
    report.bad_event_cap = Some((mass * second_moment).sqrt());
    Ok(report)
}
