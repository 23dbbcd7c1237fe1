//! Time-varying frequency-selective channels and additive noise.
//!
//! Every user/receive-antenna link is an independent tapped delay line with
//! the TDL-A power delay profile. Each tap fades as a sum of sinusoids with
//! randomized arrival angles, which reproduces the Jakes (Clarke) Doppler
//! spectrum. Gains are sampled once per OFDM symbol; inter-carrier
//! interference is not modeled.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sinusoids per fading tap.
pub const SINUSOIDS_PER_TAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("rms delay spread must be ≥ 0 (got {0} s)")]
    NegativeDelaySpread(f64),
    #[error("noise variance must be ≥ 0 (got {0})")]
    NegativeNoiseVariance(f64),
}

/// TDL-A from 3GPP TR 38.901 (Table 7.7.2-1): normalized delay, power in dB.
const TDL_A: [(f64, f64); 23] = [
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1718, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
];

/// Largest normalized delay in the TDL-A table.
pub const TDL_A_MAX_NORMALIZED_DELAY: f64 = 9.6586;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_s: f64,
    pub power: f64,
}

/// Taps sorted by delay, powers summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    taps: Vec<Tap>,
}

impl PowerDelayProfile {
    /// Builds a profile from arbitrary taps: sorts by delay and renormalizes power.
    pub fn new(mut taps: Vec<Tap>) -> Self {
        taps.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        let total: f64 = taps.iter().map(|t| t.power).sum();
        for t in &mut taps {
            t.power /= total;
        }
        Self { taps }
    }

    /// A single unit-power tap at zero delay.
    pub fn flat() -> Self {
        Self::new(vec![Tap { delay_s: 0.0, power: 1.0 }])
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn max_delay_s(&self) -> f64 {
        self.taps.last().map_or(0.0, |t| t.delay_s)
    }
}

/// TDL-A profile scaled to the given RMS delay spread.
pub fn tdla_pdp(rms_delay_spread_s: f64) -> Result<PowerDelayProfile, ChannelError> {
    if !(rms_delay_spread_s >= 0.0) {
        return Err(ChannelError::NegativeDelaySpread(rms_delay_spread_s));
    }
    Ok(PowerDelayProfile::new(
        TDL_A
            .iter()
            .map(|&(d, p_db)| Tap {
                delay_s: d * rms_delay_spread_s,
                power: 10f64.powf(p_db / 10.0),
            })
            .collect(),
    ))
}

/// Maximum Doppler frequency for a radial speed.
pub fn doppler_from_speed(speed_kmh: f64, carrier_hz: f64) -> f64 {
    speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

/// Per-tap complex gains sampled once per OFDM symbol. Tap gains already
/// carry their profile power.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    n_taps: usize,
    n_symbols: usize,
    gains: Vec<C64>,
    pub doppler_hz: f64,
}

impl FadingProcess {
    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn gain(&self, tap: usize, t: usize) -> C64 {
        self.gains[tap * self.n_symbols + t]
    }

    /// Gain sequence of one tap over the slot.
    pub fn tap(&self, tap: usize) -> &[C64] {
        &self.gains[tap * self.n_symbols..(tap + 1) * self.n_symbols]
    }
}

/// Sum-of-sinusoids Rayleigh fading for every tap of `pdp`.
///
/// Tap gain: `sqrt(p/N) Σ_n exp(j(2π f_d cos(α_n) t + φ_n))` with
/// `α_n = (2πn − π + θ)/N`. The angle offset `θ` and phases `φ_n` are drawn
/// uniformly per tap, so the ensemble autocorrelation is exactly
/// `p·J0(2π f_d τ)`.
pub fn generate_fading(
    pdp: &PowerDelayProfile,
    doppler_hz: f64,
    n_symbols: usize,
    symbol_duration_s: f64,
    seed: u64,
) -> FadingProcess {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = SINUSOIDS_PER_TAP;
    let mut gains = vec![C64::new(0.0, 0.0); pdp.len() * n_symbols];
    for (tap_idx, tap) in pdp.taps().iter().enumerate() {
        let theta = rng.gen_range(-PI..PI);
        let out = &mut gains[tap_idx * n_symbols..(tap_idx + 1) * n_symbols];
        for k in 1..=n {
            let alpha = (2.0 * PI * k as f64 - PI + theta) / n as f64;
            let phi = rng.gen_range(-PI..PI);
            let step = C64::from_polar(1.0, 2.0 * PI * doppler_hz * alpha.cos() * symbol_duration_s);
            let mut phasor = C64::from_polar(1.0, phi);
            for g in out.iter_mut() {
                *g += phasor;
                phasor *= step;
            }
        }
        let scale = (tap.power / n as f64).sqrt();
        for g in out.iter_mut() {
            *g *= scale;
        }
    }
    FadingProcess {
        n_taps: pdp.len(),
        n_symbols,
        gains,
        doppler_hz,
    }
}

/// Frequency response of one link over a slot, indexed `[t * n_subcarriers + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkResponse {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub h: Vec<C64>,
}

impl LinkResponse {
    pub fn at(&self, t: usize, f: usize) -> C64 {
        self.h[t * self.n_subcarriers + f]
    }
}

/// `H(t, f) = Σ_taps g_tap(t) · exp(−j 2π f·scs · delay_tap)`; subcarrier 0
/// sits at baseband DC.
pub fn freq_response(
    fading: &FadingProcess,
    pdp: &PowerDelayProfile,
    n_subcarriers: usize,
    scs_hz: f64,
) -> LinkResponse {
    let n_taps = pdp.len();
    let mut phasors = Vec::with_capacity(n_taps * n_subcarriers);
    for tap in pdp.taps() {
        for f in 0..n_subcarriers {
            phasors.push(C64::from_polar(1.0, -2.0 * PI * f as f64 * scs_hz * tap.delay_s));
        }
    }
    let n_symbols = fading.n_symbols();
    let mut h = vec![C64::new(0.0, 0.0); n_symbols * n_subcarriers];
    for t in 0..n_symbols {
        let row = &mut h[t * n_subcarriers..(t + 1) * n_subcarriers];
        for tap in 0..n_taps {
            let g = fading.gain(tap, t);
            let ph = &phasors[tap * n_subcarriers..(tap + 1) * n_subcarriers];
            for (out, p) in row.iter_mut().zip(ph) {
                *out += g * p;
            }
        }
    }
    LinkResponse {
        n_symbols,
        n_subcarriers,
        h,
    }
}

/// Channel matrices of all links: an `n_rx × n_users` matrix (row-major)
/// for every resource element.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub n_rx: usize,
    pub n_users: usize,
    h: Vec<C64>,
}

impl ChannelRealization {
    pub fn zeros(n_symbols: usize, n_subcarriers: usize, n_rx: usize, n_users: usize) -> Self {
        Self {
            n_symbols,
            n_subcarriers,
            n_rx,
            n_users,
            h: vec![C64::new(0.0, 0.0); n_symbols * n_subcarriers * n_rx * n_users],
        }
    }

    /// Assembles links given as `links[user][rx]`.
    pub fn from_links(links: &[Vec<LinkResponse>]) -> Self {
        let n_users = links.len();
        let n_rx = links[0].len();
        let first = &links[0][0];
        let mut out = Self::zeros(first.n_symbols, first.n_subcarriers, n_rx, n_users);
        for (k, per_rx) in links.iter().enumerate() {
            for (r, link) in per_rx.iter().enumerate() {
                for t in 0..out.n_symbols {
                    for f in 0..out.n_subcarriers {
                        out.set(t, f, r, k, link.at(t, f));
                    }
                }
            }
        }
        out
    }

    fn offset(&self, t: usize, f: usize) -> usize {
        (t * self.n_subcarriers + f) * self.n_rx * self.n_users
    }

    /// Row-major `n_rx × n_users` matrix at resource element `(t, f)`.
    pub fn at(&self, t: usize, f: usize) -> &[C64] {
        let o = self.offset(t, f);
        &self.h[o..o + self.n_rx * self.n_users]
    }

    pub fn get(&self, t: usize, f: usize, rx: usize, user: usize) -> C64 {
        self.h[self.offset(t, f) + rx * self.n_users + user]
    }

    pub fn set(&mut self, t: usize, f: usize, rx: usize, user: usize, v: C64) {
        let o = self.offset(t, f) + rx * self.n_users + user;
        self.h[o] = v;
    }

    pub fn entries(&self) -> &[C64] {
        &self.h
    }

    /// Writes `drop,t,f,user,rx,re,im` rows.
    pub fn write_csv<W: Write>(&self, drop: usize, mut w: W) -> io::Result<()> {
        for t in 0..self.n_symbols {
            for f in 0..self.n_subcarriers {
                for k in 0..self.n_users {
                    for r in 0..self.n_rx {
                        let v = self.get(t, f, r, k);
                        writeln!(w, "{drop},{t},{f},{k},{r},{:e},{:e}", v.re, v.im)?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub const CHANNEL_DUMP_HEADER: &str = "drop,t,f,user,rx,re_part,im_part";

/// Adds circularly symmetric complex Gaussian noise of variance `noise_var`
/// per sample.
pub fn add_awgn(signal: &[C64], noise_var: f64, seed: u64) -> Result<Vec<C64>, ChannelError> {
    let mut out = signal.to_vec();
    add_awgn_in_place(&mut out, noise_var, seed)?;
    Ok(out)
}

pub fn add_awgn_in_place(signal: &mut [C64], noise_var: f64, seed: u64) -> Result<(), ChannelError> {
    if !(noise_var >= 0.0) {
        return Err(ChannelError::NegativeNoiseVariance(noise_var));
    }
    if noise_var == 0.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (noise_var / 2.0).sqrt();
    for s in signal.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += C64::new(re * sd, im * sd);
    }
    Ok(())
}
