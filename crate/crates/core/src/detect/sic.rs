use super::demap::demap_gaussian;
use super::linalg::{cholesky_upper, solve_upper, solve_upper_h};
use super::{ComplexityCounters, DetectError, LlrVector, CMUL, NORM, RCMUL};
use crate::tx::Constellation;
use crate::C64;

/// Detection order of the successive canceller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SicOrder {
    /// Strongest remaining user first, by post-MMSE SINR.
    Sinr,
    /// Users in the given order.
    Fixed(Vec<usize>),
}

/// Soft MMSE successive interference cancellation. Returns the
/// user-major LLRs of all `n_users` users.
pub fn mmse_sic(
    y: &[C64],
    h: &[C64],
    n_users: usize,
    sigma2: f64,
    constellation: &Constellation,
    order: &SicOrder,
    counters: &mut ComplexityCounters,
) -> Result<LlrVector, DetectError> {
    let mut out = vec![0.0; n_users * constellation.bits_per_symbol()];
    mmse_sic_into(y, h, n_users, sigma2, constellation, order, &mut out, counters)?;
    Ok(LlrVector(out))
}

#[allow(clippy::too_many_arguments)]
pub fn mmse_sic_into(
    y: &[C64],
    h: &[C64],
    n_users: usize,
    sigma2: f64,
    constellation: &Constellation,
    order: &SicOrder,
    out: &mut [f64],
    counters: &mut ComplexityCounters,
) -> Result<(), DetectError> {
    let n = y.len();
    let m = constellation.bits_per_symbol();
    if h.len() != n * n_users {
        return Err(DetectError::Dimension(format!("H has {} entries, expected {}×{}", h.len(), n, n_users)));
    }
    if out.len() != n_users * m {
        return Err(DetectError::Dimension(format!("{} output slots for {} bits", out.len(), n_users * m)));
    }
    if let SicOrder::Fixed(o) = order {
        let mut seen = vec![false; n_users];
        if o.len() != n_users || o.iter().any(|&u| u >= n_users || std::mem::replace(&mut seen[u], true)) {
            return Err(DetectError::Dimension(format!("order {o:?} is not a permutation of {n_users} users")));
        }
    }
    counters.detector_runs += 1;
    let sigma2 = sigma2.max(1e-12);
    let mults = &mut counters.real_mults;

    let mut resid = y.to_vec();
    let mut remaining: Vec<usize> = (0..n_users).collect();
    let mut a = vec![C64::new(0.0, 0.0); n * n];
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut best_w = vec![C64::new(0.0, 0.0); n];

    for step in 0..n_users {
        // A = Σ h hᴴ + σ²I over the users not yet cancelled
        for i in 0..n {
            for j in i..n {
                let mut v = if i == j { C64::new(sigma2, 0.0) } else { C64::new(0.0, 0.0) };
                for &k in &remaining {
                    v += h[i * n_users + k] * h[j * n_users + k].conj();
                }
                a[i * n + j] = v;
                a[j * n + i] = v.conj();
                *mults += remaining.len() as u64 * if i == j { NORM } else { CMUL };
            }
        }
        if !cholesky_upper(&mut a, n, mults) {
            return Err(DetectError::Dimension("MMSE covariance is not positive definite".into()));
        }

        let candidates: Vec<usize> = match order {
            SicOrder::Sinr => remaining.clone(),
            SicOrder::Fixed(o) => vec![o[step]],
        };
        let mut best = (f64::NEG_INFINITY, candidates[0]);
        for &k in &candidates {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = h[i * n_users + k];
            }
            solve_upper_h(&a, n, &mut x, mults);
            solve_upper(&a, n, &mut x, mults);
            let mu: f64 = (0..n).map(|i| (h[i * n_users + k].conj() * x[i]).re).sum();
            *mults += 2 * n as u64;
            if mu > best.0 {
                best = (mu, k);
                best_w.copy_from_slice(&x);
            }
        }
        let (mu, k) = best;
        let mu = mu.max(1e-300);
        let wy: C64 = best_w.iter().zip(&resid).map(|(w, r)| w.conj() * r).sum();
        let z = wy / mu;
        let nu = ((1.0 - mu) / mu).max(1e-12);
        *mults += CMUL * n as u64 + RCMUL + 3;
        let label = demap_gaussian(z, 1.0 / nu, constellation, &mut out[k * m..(k + 1) * m], mults);

        remaining.retain(|&u| u != k);
        if !remaining.is_empty() {
            let s = constellation.point(label);
            for i in 0..n {
                resid[i] -= h[i * n_users + k] * s;
            }
            *mults += CMUL * n as u64;
        }
    }
    Ok(())
}

/// Amplitudes of the two power-domain NOMA users: a fraction `alpha` of
/// a total power of 2 to user 0, the rest to user 1.
pub fn noma2_amplitudes(alpha: f64) -> [f64; 2] {
    [(2.0 * alpha).sqrt(), (2.0 * (1.0 - alpha)).sqrt()]
}

/// Two-user power-domain NOMA receiver. `h` is the `n_rx × 2` unit-power
/// channel; the power split is applied here. The stronger user is detected
/// first with the weaker one as interference, then cancelled.
pub fn noma2_sic(
    y: &[C64],
    h: &[C64],
    sigma2: f64,
    alpha: f64,
    constellation: &Constellation,
    counters: &mut ComplexityCounters,
) -> Result<LlrVector, DetectError> {
    let mut out = vec![0.0; 2 * constellation.bits_per_symbol()];
    noma2_sic_into(y, h, sigma2, alpha, constellation, &mut out, counters)?;
    Ok(LlrVector(out))
}

pub fn noma2_sic_into(
    y: &[C64],
    h: &[C64],
    sigma2: f64,
    alpha: f64,
    constellation: &Constellation,
    out: &mut [f64],
    counters: &mut ComplexityCounters,
) -> Result<(), DetectError> {
    if h.len() != 2 * y.len() {
        return Err(DetectError::UserCount { expected: 2, got: h.len() / y.len().max(1) });
    }
    let amp = noma2_amplitudes(alpha);
    let eff: Vec<C64> = h.chunks(2).flat_map(|row| [row[0] * amp[0], row[1] * amp[1]]).collect();
    counters.real_mults += RCMUL * h.len() as u64;
    let order = if amp[0] >= amp[1] { vec![0, 1] } else { vec![1, 0] };
    mmse_sic_into(y, &eff, 2, sigma2, constellation, &SicOrder::Fixed(order), out, counters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Modulation;
    use crate::detect::single_user_demap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cn(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 1.4
    }

    #[test]
    fn single_user_matches_demap() {
        let c = Constellation::new(Modulation::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h = [cn(&mut rng), cn(&mut rng)];
            let y = [cn(&mut rng), cn(&mut rng)];
            let s2 = rng.gen_range(0.05..2.0);
            let a = mmse_sic(&y, &h, 1, s2, &c, &SicOrder::Sinr, &mut ComplexityCounters::default()).unwrap();
            let b = single_user_demap(&y, &h, s2, &c, &mut ComplexityCounters::default());
            for (x, z) in a.0.iter().zip(&b.0) {
                assert!((x - z).abs() < 1e-9 * x.abs().max(1.0), "{x} vs {z}");
            }
        }
    }

    #[test]
    fn unitary_channel_decouples_users() {
        let c = Constellation::new(Modulation::Qpsk);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ph = C64::from_polar(1.0, 0.4);
        // 2×2 unitary
        let h = [C64::new(s, 0.0), ph * s, C64::new(0.0, s), -ph * C64::new(0.0, s)];
        let y = [C64::new(0.3, -0.9), C64::new(-0.2, 0.5)];
        let l = mmse_sic(&y, &h, 2, 0.3, &c, &SicOrder::Sinr, &mut ComplexityCounters::default()).unwrap();
        for k in 0..2 {
            let col = [h[k], h[2 + k]];
            let su = single_user_demap(&y, &col, 0.3, &c, &mut ComplexityCounters::default());
            for b in 0..2 {
                assert!((l[2 * k + b] - su[b]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noma2_noise_free_decodes_both() {
        let c = Constellation::new(Modulation::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let amp = noma2_amplitudes(0.8);
        let mut errors = 0;
        for _ in 0..2000 {
            let h0 = C64::from_polar(1.0, rng.gen::<f64>() * 6.3);
            let l0 = rng.gen_range(0..4);
            let l1 = rng.gen_range(0..4);
            let noise = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.02;
            let y = [h0 * (c.point(l0) * amp[0] + c.point(l1) * amp[1]) + noise];
            let l = noma2_sic(&y, &[h0, h0], 1e-4, 0.8, &c, &mut ComplexityCounters::default()).unwrap();
            let bits = l.hard_bits();
            for b in 0..2 {
                errors += (bits[b] != c.bit(l0, b)) as usize + (bits[2 + b] != c.bit(l1, b)) as usize;
            }
        }
        assert_eq!(errors, 0);
    }

    #[test]
    fn noma2_label_swap_symmetry() {
        let c = Constellation::new(Modulation::Qpsk);
        let h = [C64::new(0.7, 0.2), C64::new(-0.4, 0.9)];
        let y = [C64::new(0.5, -0.6)];
        let a = noma2_sic(&y, &h, 0.2, 0.75, &c, &mut ComplexityCounters::default()).unwrap();
        let b = noma2_sic(&y, &[h[1], h[0]], 0.2, 0.25, &c, &mut ComplexityCounters::default()).unwrap();
        for i in 0..2 {
            assert!((a[i] - b[2 + i]).abs() < 1e-12);
            assert!((a[2 + i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_user_first_is_reliable() {
        let c = Constellation::new(Modulation::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut errors = 0;
        for _ in 0..2000 {
            // power ratio 4
            let h = [C64::from_polar(2.0, rng.gen::<f64>() * 6.3), C64::from_polar(1.0, rng.gen::<f64>() * 6.3)];
            let l0 = rng.gen_range(0..4);
            let l1 = rng.gen_range(0..4);
            let y = [h[0] * c.point(l0) + h[1] * c.point(l1) + C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.02];
            let l = mmse_sic(&y, &h, 2, 1e-4, &c, &SicOrder::Sinr, &mut ComplexityCounters::default()).unwrap();
            let bits = l.hard_bits();
            errors += (0..2).filter(|&b| bits[b] != c.bit(l0, b)).count();
        }
        assert_eq!(errors, 0);
    }

    #[test]
    fn cost_is_data_independent() {
        let c = Constellation::new(Modulation::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut prev = None;
        for _ in 0..20 {
            let h: Vec<C64> = (0..4).map(|_| cn(&mut rng)).collect();
            let mut cnt = ComplexityCounters::default();
            mmse_sic(&[cn(&mut rng)], &h, 4, 0.4, &c, &SicOrder::Sinr, &mut cnt).unwrap();
            if let Some(p) = prev {
                assert_eq!(p, cnt.real_mults);
            }
            prev = Some(cnt.real_mults);
        }
    }
}
