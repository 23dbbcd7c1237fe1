//! Pilot-based least-squares channel estimation.
//!
//! Raw estimates `y/p` on each user's pilot comb are interpolated linearly
//! across frequency (nearest-neighbour outside the comb) and then linearly
//! across time between pilot symbols. The noise variance comes from the
//! residual between the raw comb estimates and a short frequency smoother.

use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::C64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("pilot symbol at (t={t}, f={f}) is zero")]
    ZeroPilot { t: usize, f: usize },
    #[error("no pilot cells for user {0}")]
    NoPilots(usize),
}

/// Received signal, indexed `[(t * n_subcarriers + f) * n_rx + r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RxGrid {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub n_rx: usize,
    pub y: Vec<C64>,
}

impl RxGrid {
    pub fn zeros(n_symbols: usize, n_subcarriers: usize, n_rx: usize) -> Self {
        Self {
            n_symbols,
            n_subcarriers,
            n_rx,
            y: vec![C64::new(0.0, 0.0); n_symbols * n_subcarriers * n_rx],
        }
    }

    pub fn at(&self, t: usize, f: usize) -> &[C64] {
        let o = (t * self.n_subcarriers + f) * self.n_rx;
        &self.y[o..o + self.n_rx]
    }

    pub fn at_mut(&mut self, t: usize, f: usize) -> &mut [C64] {
        let o = (t * self.n_subcarriers + f) * self.n_rx;
        &mut self.y[o..o + self.n_rx]
    }
}

/// Raw LS estimates of one user's comb on one pilot symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct CombEstimate {
    pub t: usize,
    pub subcarriers: Vec<usize>,
    /// `[rx][comb position]`
    pub values: Vec<Vec<C64>>,
}

/// Raw estimates of all users, `[user][pilot symbol]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPilotEstimates {
    pub n_rx: usize,
    pub per_user: Vec<Vec<CombEstimate>>,
}

/// `ĥ = y / p` on every pilot cell. `pilots[user]` lists `(t, f, p)` as
/// produced by [`crate::tx::pilot_cells`].
pub fn ls_estimate(rx: &RxGrid, pilots: &[Vec<(usize, usize, C64)>]) -> Result<RawPilotEstimates, EstimationError> {
    let mut per_user = Vec::with_capacity(pilots.len());
    for (user, cells) in pilots.iter().enumerate() {
        if cells.is_empty() {
            return Err(EstimationError::NoPilots(user));
        }
        let mut combs: Vec<CombEstimate> = Vec::new();
        for &(t, f, p) in cells {
            if p.norm_sqr() == 0.0 {
                return Err(EstimationError::ZeroPilot { t, f });
            }
            if combs.last().map_or(true, |c| c.t != t) {
                combs.push(CombEstimate {
                    t,
                    subcarriers: Vec::new(),
                    values: vec![Vec::new(); rx.n_rx],
                });
            }
            let comb = combs.last_mut().expect("pushed above");
            comb.subcarriers.push(f);
            for (r, y) in rx.at(t, f).iter().enumerate() {
                comb.values[r].push(y / p);
            }
        }
        per_user.push(combs);
    }
    Ok(RawPilotEstimates { n_rx: rx.n_rx, per_user })
}

/// Interpolation weights `(source index, weight)` for every target position.
fn linear_weights(sources: &[usize], n_targets: usize, extrapolate: bool) -> Vec<Vec<(usize, f64)>> {
    (0..n_targets)
        .map(|x| {
            if sources.len() == 1 {
                return vec![(0, 1.0)];
            }
            let last = sources.len() - 1;
            if !extrapolate {
                if x <= sources[0] {
                    return vec![(0, 1.0)];
                }
                if x >= sources[last] {
                    return vec![(last, 1.0)];
                }
            }
            let seg = match sources.iter().position(|&s| s > x) {
                Some(0) => 0,
                Some(i) => (i - 1).min(last - 1),
                None => last - 1,
            };
            let (a, b) = (sources[seg] as f64, sources[seg + 1] as f64);
            let w = (x as f64 - a) / (b - a);
            vec![(seg, 1.0 - w), (seg + 1, w)]
        })
        .collect()
}

/// Interpolated channel plus noise statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: ChannelRealization,
    pub sigma2_hat: f64,
    /// Mean ratio of interpolated-estimate noise variance to the per-cell
    /// LS noise variance, averaged over users and the whole grid.
    pub noise_gain: f64,
}

impl ChannelEstimate {
    /// Noise variance seen by a detector when `n_active` users transmit on
    /// a resource element: thermal noise plus each user's estimation error.
    pub fn effective_noise_var(&self, n_active: usize) -> f64 {
        self.sigma2_hat * (1.0 + n_active as f64 * self.noise_gain)
    }

    /// Mean `|ĥ − h|²` over all entries.
    pub fn mse_true(&self, truth: &ChannelRealization) -> f64 {
        let a = self.h_hat.entries();
        let b = truth.entries();
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
    }
}

/// Frequency-then-time linear interpolation of the raw comb estimates.
pub fn interpolate(raw: &RawPilotEstimates, n_symbols: usize, n_subcarriers: usize) -> ChannelEstimate {
    let n_users = raw.per_user.len();
    let mut h_hat = ChannelRealization::zeros(n_symbols, n_subcarriers, raw.n_rx, n_users);
    let mut gain_sum = 0.0;
    for (user, combs) in raw.per_user.iter().enumerate() {
        let pilot_times: Vec<usize> = combs.iter().map(|c| c.t).collect();
        let tw = linear_weights(&pilot_times, n_symbols, true);
        let fws: Vec<_> = combs
            .iter()
            .map(|c| linear_weights(&c.subcarriers, n_subcarriers, false))
            .collect();
        for r in 0..raw.n_rx {
            // frequency interpolation on each pilot symbol
            let rows: Vec<Vec<C64>> = combs
                .iter()
                .zip(&fws)
                .map(|(c, fw)| {
                    fw.iter()
                        .map(|ws| ws.iter().map(|&(i, w)| c.values[r][i] * w).sum())
                        .collect()
                })
                .collect();
            for (t, ws) in tw.iter().enumerate() {
                for f in 0..n_subcarriers {
                    let v: C64 = ws.iter().map(|&(p, w)| rows[p][f] * w).sum();
                    h_hat.set(t, f, r, user, v);
                }
            }
        }
        // noise gain (Σa²)(Σb²) when all pilot symbols share one comb layout
        let mut g = 0.0;
        for ws in &tw {
            let ta: f64 = ws.iter().map(|(_, w)| w * w).sum();
            let fb: f64 = fws[0].iter().map(|v| v.iter().map(|(_, w)| w * w).sum::<f64>()).sum::<f64>()
                / n_subcarriers as f64;
            g += ta * fb;
        }
        gain_sum += g / n_symbols as f64;
    }
    let sigma2_hat = estimate_noise_var(raw);
    ChannelEstimate {
        h_hat,
        sigma2_hat,
        noise_gain: if n_users > 0 { gain_sum / n_users as f64 } else { 0.0 },
    }
}

/// Three-tap moving average along a comb (two taps at the edges), together
/// with the residual noise factor `E|raw − smooth|² / σ²` at each position.
pub fn smooth_comb(values: &[C64]) -> (Vec<C64>, Vec<f64>) {
    let n = values.len();
    let mut smooth = Vec::with_capacity(n);
    let mut factor = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        let width = (hi - lo + 1) as f64;
        let w = 1.0 / width;
        smooth.push(values[lo..=hi].iter().sum::<C64>() * w);
        // self weight (1 − w), each of the other (width − 1) cells weight w
        factor.push((1.0 - w).powi(2) + (width - 1.0) * w * w);
    }
    (smooth, factor)
}

/// Bias-corrected mean squared residual between raw comb estimates and
/// their smoothed version, pooled over users, antennas and pilot symbols.
pub fn estimate_noise_var(raw: &RawPilotEstimates) -> f64 {
    let mut residual = 0.0;
    let mut expected = 0.0;
    for combs in &raw.per_user {
        for comb in combs {
            for values in &comb.values {
                if values.len() < 2 {
                    continue;
                }
                let (smooth, factor) = smooth_comb(values);
                for ((v, s), k) in values.iter().zip(&smooth).zip(&factor) {
                    residual += (v - s).norm_sqr();
                    expected += k;
                }
            }
        }
    }
    if expected == 0.0 {
        return 1e-12;
    }
    (residual / expected).max(1e-12)
}
