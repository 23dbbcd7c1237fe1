//! Sum capacity of K single-antenna users received on one antenna.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::config::derive_seed;

/// Linear SNR `P_t/σ²` and per-user channel power gains `|h_k|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityInput {
    pub snr_linear: f64,
    pub gains: Vec<f64>,
}

/// `log2(1 + ρ Σ_k |h_k|²)` in bits/s/Hz.
pub fn sum_capacity(input: &CapacityInput) -> f64 {
    sum_capacity_of(input.snr_linear, input.gains.iter().sum())
}

pub fn sum_capacity_of(snr_linear: f64, total_gain: f64) -> f64 {
    (snr_linear * total_gain).ln_1p() / std::f64::consts::LN_2
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicCapacity {
    pub mean: f64,
    pub std_error: f64,
}

/// Per-user Rayleigh power gains for `n_draws` channel uses. User `k`'s
/// draws come from its own stream, so results for different `n_users` and
/// SNRs are paired on the same realizations.
fn rayleigh_gains(n_users: usize, n_draws: usize, seed: u64) -> Vec<f64> {
    let mut totals = vec![0.0; n_draws];
    for k in 0..n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("capacity/ue{k}"), 0));
        for total in totals.iter_mut() {
            let g: f64 = Exp1.sample(&mut rng);
            *total += g;
        }
    }
    totals
}

/// Monte Carlo mean and standard error of the sum capacity with i.i.d.
/// unit-power Rayleigh users.
pub fn ergodic_sum_capacity(snr_db: f64, n_users: usize, n_draws: usize, seed: u64) -> ErgodicCapacity {
    assert!(n_draws >= 1, "n_draws must be ≥ 1");
    let rho = db_to_linear(snr_db);
    let totals = rayleigh_gains(n_users, n_draws, seed);
    mean_and_stderr(totals.iter().map(|&g| sum_capacity_of(rho, g)), n_draws)
}

/// Ergodic capacity over an SNR × user-count grid, sharing the gain draws.
pub fn capacity_sweep(snr_db: &[f64], users: &[usize], n_draws: usize, seed: u64) -> Vec<(f64, usize, ErgodicCapacity)> {
    let mut out = Vec::with_capacity(snr_db.len() * users.len());
    for &k in users {
        let totals = rayleigh_gains(k, n_draws, seed);
        for &snr in snr_db {
            let rho = db_to_linear(snr);
            let c = mean_and_stderr(totals.iter().map(|&g| sum_capacity_of(rho, g)), n_draws);
            out.push((snr, k, c));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

fn mean_and_stderr(values: impl Iterator<Item = f64>, n: usize) -> ErgodicCapacity {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for v in values {
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    ErgodicCapacity {
        mean,
        std_error: (var / n as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_points() {
        let c = |rho: f64, g: &[f64]| sum_capacity(&CapacityInput { snr_linear: rho, gains: g.to_vec() });
        assert!((c(1.0, &[1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(c(3.0, &[]), 0.0);
        assert_eq!(c(0.0, &[1.0, 2.0]), 0.0);
        let rho = 10f64.powf(0.4);
        assert!((c(rho, &[1.0; 4]) - (1.0 + 4.0 * rho).log2()).abs() < 1e-12);
        // log2(11.047546), independent arithmetic
        assert!((c(rho, &[1.0; 4]) - 3.465_654).abs() < 1e-6);
    }

    #[test]
    fn high_snr_slope() {
        // the log2(10) per decade asymptote is only reached well above 20 dB
        let lo = ergodic_sum_capacity(30.0, 1, 200_000, 5).mean;
        let hi = ergodic_sum_capacity(40.0, 1, 200_000, 5).mean;
        assert!((hi - lo - 10f64.log2()).abs() < 0.05, "{}", hi - lo);
        let lo = ergodic_sum_capacity(10.0, 1, 200_000, 5).mean;
        let hi = ergodic_sum_capacity(20.0, 1, 200_000, 5).mean;
        let want = crate::oracle::gamma_capacity(100.0, 1) - crate::oracle::gamma_capacity(10.0, 1);
        assert!((hi - lo - want).abs() < 0.02, "{} vs {want}", hi - lo);
    }

    #[test]
    fn paired_monotone_in_users() {
        for snr in [-10.0, 0.0, 4.0, 20.0] {
            let one = ergodic_sum_capacity(snr, 1, 10_000, 9).mean;
            let two = ergodic_sum_capacity(snr, 2, 10_000, 9).mean;
            assert!(two >= one);
        }
    }

    #[test]
    fn jensen() {
        // C at the mean gain dominates the mean of C
        for snr in [-5.0, 4.0, 15.0] {
            let e = ergodic_sum_capacity(snr, 3, 20_000, 2);
            assert!(sum_capacity_of(db_to_linear(snr), 3.0) >= e.mean);
        }
    }
}
