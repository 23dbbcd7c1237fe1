//! Built-in consistency checks against the slow references in
//! [`crate::oracle`]. Used by the `selftest` subcommand and the acceptance
//! suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{generate_fading, tdla_pdp, PowerDelayProfile};
use crate::config::{nr_symbol_duration, Modulation};
use crate::decoder::bcjr_decode;
use crate::detect::{exhaustive_maxlog_augmented, ComplexityCounters, SphereDetector};
use crate::oracle::{bessel_j0, codeword_map};
use crate::tx::{Constellation, TAIL_BITS};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn cn(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Sphere detector against the augmented-metric brute force over random
/// instances cycling through K ∈ {2,3,4}, M ∈ {4,16}, N_rx ∈ {1,2}.
/// A fifth of the instances carry random priors.
pub fn sphere_vs_oracle(n_instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let mut shapes = 0u32;
    for i in 0..n_instances {
        let k = 2 + i % 3;
        let modulation = if (i / 3) % 2 == 0 { Modulation::Qpsk } else { Modulation::Qam16 };
        let n_rx = 1 + (i / 6) % 2;
        shapes |= 1 << ((k - 2) * 4 + ((i / 3) % 2) * 2 + (n_rx - 1));
        let c = Constellation::new(modulation);
        let h: Vec<C64> = (0..n_rx * k).map(|_| cn(&mut rng)).collect();
        let sigma2 = 10f64.powf(rng.gen_range(-1.5..0.5));
        let x: Vec<C64> = (0..k).map(|_| c.point(rng.gen_range(0..c.order()))).collect();
        let y: Vec<C64> = (0..n_rx)
            .map(|r| (0..k).map(|u| h[r * k + u] * x[u]).sum::<C64>() + cn(&mut rng) * sigma2.sqrt())
            .collect();
        let priors: Option<Vec<f64>> =
            (i % 5 == 4).then(|| (0..k * c.bits_per_symbol()).map(|_| rng.gen_range(-4.0..4.0)).collect());
        let mut det = SphereDetector::new(k, c.clone(), None);
        let got = match det.detect(&y, &h, sigma2, priors.as_deref(), &mut ComplexityCounters::default()) {
            Ok(o) => o,
            Err(e) => return fail("sphere = exhaustive oracle", format!("instance {i}: {e}")),
        };
        let want = exhaustive_maxlog_augmented(&y, &h, k, sigma2, &c, priors.as_deref(), &mut ComplexityCounters::default())
            .expect("within guard");
        for (a, b) in got.llr.0.iter().zip(&want.0) {
            let d = (a - b).abs();
            worst = worst.max(d);
            if d > 1e-9 {
                mismatches += 1;
            }
        }
    }
    CheckResult {
        name: "sphere = exhaustive oracle".into(),
        passed: mismatches == 0,
        detail: format!(
            "{n_instances} instances, {} shapes, max |ΔLLR| = {worst:.2e}, {mismatches} LLRs above 1e-9",
            shapes.count_ones()
        ),
    }
}

/// BCJR against codeword enumeration for random LLR vectors and info
/// lengths 1..=`max_info`.
pub fn bcjr_vs_oracle(n_vectors: usize, max_info: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut sign_errors = 0;
    for i in 0..n_vectors {
        let k = 1 + i % max_info;
        let scale = rng.gen_range(0.5..6.0);
        let coded: Vec<f64> = (0..2 * (k + TAIL_BITS)).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        let dec = match bcjr_decode(&coded, None, None) {
            Ok(d) => d,
            Err(e) => return fail("bcjr = codeword enumeration", e.to_string()),
        };
        let (info, _) = codeword_map(&coded, k);
        for (j, (a, b)) in dec.info_llr.iter().zip(&info).enumerate() {
            worst = worst.max((a - b).abs());
            if (*b < 0.0) != (dec.hard_bits[j] == 1) && *b != 0.0 {
                sign_errors += 1;
            }
        }
    }
    CheckResult {
        name: "bcjr = codeword enumeration".into(),
        passed: sign_errors == 0 && worst <= 1e-9,
        detail: format!("{n_vectors} vectors, k ≤ {max_info}, max |ΔLLR| = {worst:.2e}, {sign_errors} sign disagreements"),
    }
}

/// Empirical autocorrelation of a unit-power fading tap at lags up to
/// `max_lag_s`, against `J0(2π f_d τ)`. Returns the largest deviation.
pub fn fading_autocorrelation(doppler_hz: f64, scs_hz: f64, max_lag_s: f64, realizations: usize, seed: u64) -> f64 {
    let ts = nr_symbol_duration(scs_hz);
    let max_lag = (max_lag_s / ts).floor() as usize;
    let window = max_lag + 1;
    let n_symbols = 2 * window;
    let pdp = PowerDelayProfile::flat();
    let mut acc = vec![C64::new(0.0, 0.0); window];
    let mut count = 0usize;
    for r in 0..realizations {
        let f = generate_fading(&pdp, doppler_hz, n_symbols, ts, seed.wrapping_add(r as u64));
        let g = f.tap(0);
        for start in 0..n_symbols - max_lag {
            for (lag, a) in acc.iter_mut().enumerate() {
                *a += g[start + lag] * g[start].conj();
            }
        }
        count += n_symbols - max_lag;
    }
    acc.iter()
        .enumerate()
        .map(|(lag, a)| {
            let tau = lag as f64 * ts;
            let want = bessel_j0(2.0 * std::f64::consts::PI * doppler_hz * tau);
            (a.re / count as f64 - want).abs().max((a.im / count as f64).abs())
        })
        .fold(0.0, f64::max)
}

/// Mean total power of the TDL-A taps relative to one.
pub fn tap_power_error(realizations: usize, seed: u64) -> f64 {
    let pdp = tdla_pdp(100e-9).expect("valid delay spread");
    let mut total = 0.0;
    let n_symbols = 14;
    for r in 0..realizations {
        let f = generate_fading(&pdp, 926.6, n_symbols, nr_symbol_duration(30e3), seed.wrapping_add(r as u64));
        for tap in 0..f.n_taps() {
            total += f.tap(tap).iter().map(|g| g.norm_sqr()).sum::<f64>();
        }
    }
    (total / (realizations * n_symbols) as f64 - 1.0).abs()
}

pub fn fading_check(realizations: usize, seed: u64) -> CheckResult {
    let dev: Vec<f64> = [9.27, 926.6]
        .iter()
        .map(|&fd| fading_autocorrelation(fd, 30e3, 5e-3, realizations, seed))
        .collect();
    let power = tap_power_error(realizations, seed ^ 0x5eed);
    CheckResult {
        name: "fading autocorrelation = J0".into(),
        passed: dev.iter().all(|&d| d <= 0.05) && power <= 0.02,
        detail: format!(
            "max deviation {:.4} at 9.27 Hz, {:.4} at 926.6 Hz; tap power error {:.4}",
            dev[0], dev[1], power
        ),
    }
}

fn fail(name: &str, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: false,
        detail,
    }
}

/// The quick suite run by `selftest`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        sphere_vs_oracle(600, seed),
        bcjr_vs_oracle(200, 12, seed),
        fading_check(2000, seed),
    ]
}
