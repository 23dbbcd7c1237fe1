use super::{ComplexityCounters, DetectError, LlrVector, CMUL, NORM};
use crate::config::EXHAUSTIVE_MAX_HYPOTHESES;
use crate::tx::Constellation;
use crate::C64;

/// Which distance the brute-force search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExhaustiveMetric {
    /// `‖y − Hs‖²/σ²`
    True,
    /// `(‖y − Hs‖² + σ²‖s‖²)/σ²`, the metric of the MMSE-extended channel `[H; σI]`.
    Augmented,
}

/// Joint max-log LLRs by enumerating all `M^K` symbol vectors.
pub fn exhaustive_maxlog(
    y: &[C64],
    h: &[C64],
    n_users: usize,
    sigma2: f64,
    constellation: &Constellation,
    priors: Option<&[f64]>,
    counters: &mut ComplexityCounters,
) -> Result<LlrVector, DetectError> {
    search(y, h, n_users, sigma2, constellation, priors, ExhaustiveMetric::True, counters)
}

/// Brute-force reference for the sphere detector, which searches the
/// augmented metric.
pub fn exhaustive_maxlog_augmented(
    y: &[C64],
    h: &[C64],
    n_users: usize,
    sigma2: f64,
    constellation: &Constellation,
    priors: Option<&[f64]>,
    counters: &mut ComplexityCounters,
) -> Result<LlrVector, DetectError> {
    search(y, h, n_users, sigma2, constellation, priors, ExhaustiveMetric::Augmented, counters)
}

#[allow(clippy::too_many_arguments)]
fn search(
    y: &[C64],
    h: &[C64],
    n_users: usize,
    sigma2: f64,
    constellation: &Constellation,
    priors: Option<&[f64]>,
    metric: ExhaustiveMetric,
    counters: &mut ComplexityCounters,
) -> Result<LlrVector, DetectError> {
    let order = constellation.order();
    let m = constellation.bits_per_symbol();
    let hyps = (order as f64).powi(n_users as i32);
    if hyps > EXHAUSTIVE_MAX_HYPOTHESES as f64 {
        return Err(DetectError::TooManyHypotheses {
            hypotheses: hyps,
            limit: EXHAUSTIVE_MAX_HYPOTHESES,
        });
    }
    let n_rx = y.len();
    if h.len() != n_rx * n_users {
        return Err(DetectError::Dimension(format!(
            "H has {} entries, expected {}×{}",
            h.len(),
            n_rx,
            n_users
        )));
    }
    if let Some(p) = priors {
        if p.len() != n_users * m {
            return Err(DetectError::Dimension(format!("{} priors for {} bits", p.len(), n_users * m)));
        }
    }
    counters.detector_runs += 1;
    let sigma2 = sigma2.max(1e-12);
    let nbits = n_users * m;
    let mut min0 = vec![f64::INFINITY; nbits];
    let mut min1 = vec![f64::INFINITY; nbits];
    let mut labels = vec![0usize; n_users];
    for _ in 0..hyps as usize {
        let mut dist = 0.0;
        for r in 0..n_rx {
            let mut e = y[r];
            for (k, &l) in labels.iter().enumerate() {
                e -= h[r * n_users + k] * constellation.point(l);
            }
            dist += e.norm_sqr();
        }
        if metric == ExhaustiveMetric::Augmented {
            dist += sigma2 * labels.iter().map(|&l| constellation.point(l).norm_sqr()).sum::<f64>();
        }
        let mut mu = dist / sigma2;
        if let Some(p) = priors {
            for (k, &l) in labels.iter().enumerate() {
                for b in 0..m {
                    let bit = constellation.bit(l, b) as f64;
                    mu -= (1.0 - 2.0 * bit) * p[k * m + b] / 2.0;
                }
            }
        }
        for (k, &l) in labels.iter().enumerate() {
            for b in 0..m {
                let slot = if constellation.bit(l, b) == 0 { &mut min0 } else { &mut min1 };
                let v = &mut slot[k * m + b];
                *v = v.min(mu);
            }
        }
        counters.real_mults += (CMUL * n_users as u64 + NORM) * n_rx as u64 + 1;
        // odometer
        for l in labels.iter_mut() {
            *l += 1;
            if *l < order {
                break;
            }
            *l = 0;
        }
    }
    Ok(LlrVector(min1.iter().zip(&min0).map(|(a, b)| a - b).collect()))
}
