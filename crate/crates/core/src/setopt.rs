//! Exhaustive search for the best fixed sampling set of a finite source.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{partition, CovarianceModel, SamplingSet};
use crate::srdf::{min_distortion, srdf_curve};

pub const SUBSET_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SetObjective {
    MinDeltaMin,
    MinRateAt { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    pub set: SamplingSet,
    pub delta_min: f64,
    /// `ρ_A(Δ)` for rate objectives; `+∞` where `Δ ≤ Δ_min,A`.
    pub rate_bits: Option<f64>,
}

impl SubsetRow {
    fn objective(&self) -> f64 {
        self.rate_bits.unwrap_or(self.delta_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSearchResult {
    pub best: SamplingSet,
    pub objective: f64,
    /// All k-subsets in lexicographic order.
    pub table: Vec<SubsetRow>,
}

/// `C(n, k)` without overflow for the sizes that matter here.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Lexicographic k-subsets of `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Evaluates every k-subset and returns the minimizer.
///
/// Ties go to the lexicographically first subset.
pub fn best_fixed_set(
    model: &CovarianceModel,
    k: usize,
    objective: SetObjective,
) -> Result<SetSearchResult> {
    best_fixed_set_capped(model, k, objective, SUBSET_CAP)
}

pub fn best_fixed_set_capped(
    model: &CovarianceModel,
    k: usize,
    objective: SetObjective,
    cap: u128,
) -> Result<SetSearchResult> {
    let m = model.dim();
    if k == 0 || k > m {
        return Err(Error::InvalidSamplingSet(format!("need 1 <= k <= {m}, got {k}")));
    }
    let count = binomial(m, k);
    if count > cap {
        return Err(Error::TooManySubsets { count, cap });
    }
    let table: Vec<SubsetRow> = combinations(m, k)
        .into_par_iter()
        .map(|idx| {
            let set = SamplingSet::new(idx, m)?;
            let delta_min = min_distortion(&partition(model, &set)?)?;
            let rate_bits = match objective {
                SetObjective::MinDeltaMin => None,
                SetObjective::MinRateAt { delta } => Some(if delta <= delta_min {
                    f64::INFINITY
                } else {
                    srdf_curve(model, &set)?.rate(delta)?.rate_bits
                }),
            };
            Ok(SubsetRow {
                set,
                delta_min,
                rate_bits,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.objective() < table[best].objective() {
            best = i;
        }
    }
    Ok(SetSearchResult {
        best: table[best].set.clone(),
        objective: table[best].objective(),
        table,
    })
}
