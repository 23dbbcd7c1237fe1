//! Soft-output multiuser detection for `y = H s + n` on one resource
//! element, with `y` of length `n_rx`, `H` an `n_rx × K` row-major matrix
//! and `s` the joint symbol vector of all K users.
//!
//! LLR convention: `L = log P(b=0)/P(b=1)`, positive favours 0. Per-RE LLR
//! vectors are laid out user-major, `K · bits_per_symbol` entries.
//!
//! Every detector tallies its arithmetic in [`ComplexityCounters`]. Costs
//! are counted in real multiplications: complex×complex = 4, `|z|²` = 2,
//! real×complex = 2, real×real, real division and square root = 1.
//! Additions and comparisons are free.

mod demap;
mod exhaustive;
mod linalg;
mod sic;
mod sphere;

use thiserror::Error;

pub use demap::{demap_gaussian, single_user_demap, single_user_demap_into};
pub use exhaustive::{exhaustive_maxlog, exhaustive_maxlog_augmented, ExhaustiveMetric};
pub use sic::{mmse_sic, mmse_sic_into, noma2_amplitudes, noma2_sic, noma2_sic_into, SicOrder};
pub use sphere::{AugmentedQr, SphereDetector, SphereOutput};

pub(crate) const CMUL: u64 = 4;
pub(crate) const NORM: u64 = 2;
pub(crate) const RCMUL: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("exhaustive search over {hypotheses} hypotheses exceeds the guard of {limit}")]
    TooManyHypotheses { hypotheses: f64, limit: usize },
    #[error("detector requires {expected} users, got {got}")]
    UserCount { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reference counters are zero")]
    ZeroReference,
}

/// Per-bit log-likelihood ratios.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlrVector(pub Vec<f64>);

impl LlrVector {
    pub fn clip(mut self, limit: f64) -> Self {
        clip_llrs(&mut self.0, limit);
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Hard decisions (`1` where the LLR is negative).
    pub fn hard_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&l| (l < 0.0) as u8).collect()
    }
}

impl std::ops::Index<usize> for LlrVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn clip_llrs(llrs: &mut [f64], limit: f64) {
    for l in llrs {
        *l = l.clamp(-limit, limit);
    }
}

/// Work tallies of one detector over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComplexityCounters {
    pub real_mults: u64,
    pub nodes_visited: u64,
    /// Single-RE detector invocations.
    pub detector_runs: u64,
    /// Distinct resource elements detected (set by the caller).
    pub resource_elements: u64,
}

impl ComplexityCounters {
    /// Complex-multiplication equivalents (four real multiplications each).
    pub fn complex_mults(&self) -> f64 {
        self.real_mults as f64 / 4.0
    }

    pub fn mults_per_re(&self) -> f64 {
        if self.resource_elements == 0 {
            0.0
        } else {
            self.complex_mults() / self.resource_elements as f64
        }
    }

    pub fn nodes_per_re(&self) -> f64 {
        if self.resource_elements == 0 {
            0.0
        } else {
            self.nodes_visited as f64 / self.resource_elements as f64
        }
    }

    pub fn merge(&mut self, other: &ComplexityCounters) {
        self.real_mults += other.real_mults;
        self.nodes_visited += other.nodes_visited;
        self.detector_runs += other.detector_runs;
        self.resource_elements += other.resource_elements;
    }
}

/// Ratio of complex multiplications per detected resource element.
pub fn complexity_ratio(a: &ComplexityCounters, b: &ComplexityCounters) -> Result<f64, DetectError> {
    let denom = b.mults_per_re();
    if denom == 0.0 {
        return Err(DetectError::ZeroReference);
    }
    Ok(a.mults_per_re() / denom)
}

/// Max-log prior cost of a symbol label: `|La|` for every bit that
/// disagrees with the sign of its a-priori LLR. Equals `−Σ log P(b)` up to
/// a label-independent constant.
#[inline]
pub(crate) fn prior_cost(label: usize, bits_per_symbol: usize, priors: &[f64]) -> f64 {
    let mut cost = 0.0;
    for (i, &la) in priors.iter().enumerate().take(bits_per_symbol) {
        let bit = (label >> (bits_per_symbol - 1 - i)) & 1;
        if (bit == 1 && la > 0.0) || (bit == 0 && la < 0.0) {
            cost += la.abs();
        }
    }
    cost
}
