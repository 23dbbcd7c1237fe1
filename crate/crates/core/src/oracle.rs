//! Slow independent references used by tests and `selftest`.

use crate::tx::encode_mother;

/// `J0(x) = (1/π) ∫₀^π cos(x sin θ) dθ` by composite Simpson.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 4000;
    let h = std::f64::consts::PI / n as f64;
    let f = |i: usize| (x * (i as f64 * h).sin()).cos();
    let mut s = f(0) + f(n);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
    }
    s * h / 3.0 / std::f64::consts::PI
}

/// `E[log2(1 + ρG)]` with `G ~ Gamma(K, 1)`, by Simpson quadrature in `g`.
pub fn gamma_capacity(snr_linear: f64, n_users: usize) -> f64 {
    if n_users == 0 {
        return 0.0;
    }
    let k = n_users as f64;
    let ln_norm: f64 = (1..n_users).map(|i| (i as f64).ln()).sum();
    let upper = k + 40.0 * k.sqrt() + 40.0;
    let n = 200_000;
    let h = upper / n as f64;
    let f = |i: usize| {
        let g = i as f64 * h;
        if g == 0.0 {
            return 0.0;
        }
        let density = ((k - 1.0) * g.ln() - g - ln_norm).exp();
        (snr_linear * g).ln_1p() / std::f64::consts::LN_2 * density
    };
    let mut s = f(0) + f(n);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
    }
    s * h / 3.0
}

/// Max-log bit MAP of the zero-tail code by scoring every one of the
/// `2^k` codewords. Returns info-bit LLRs and coded-bit posterior LLRs.
pub fn codeword_map(coded_llr: &[f64], info_len: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(info_len <= 20, "codeword enumeration is exponential");
    let mut best0 = vec![f64::NEG_INFINITY; info_len];
    let mut best1 = vec![f64::NEG_INFINITY; info_len];
    let mut c0 = vec![f64::NEG_INFINITY; coded_llr.len()];
    let mut c1 = vec![f64::NEG_INFINITY; coded_llr.len()];
    for word in 0..1u32 << info_len {
        let info: Vec<u8> = (0..info_len).map(|i| ((word >> i) & 1) as u8).collect();
        let cw = encode_mother(&info);
        // log-likelihood up to a constant: Σ ±L/2
        let score: f64 = cw.iter().zip(coded_llr).map(|(&c, &l)| if c == 0 { l / 2.0 } else { -l / 2.0 }).sum();
        for (i, &b) in info.iter().enumerate() {
            let slot = if b == 0 { &mut best0[i] } else { &mut best1[i] };
            *slot = slot.max(score);
        }
        for (i, &c) in cw.iter().enumerate() {
            let slot = if c == 0 { &mut c0[i] } else { &mut c1[i] };
            *slot = slot.max(score);
        }
    }
    let info = best0.iter().zip(&best1).map(|(a, b)| a - b).collect();
    let coded = c0.iter().zip(&c1).map(|(a, b)| a - b).collect();
    (info, coded)
}
