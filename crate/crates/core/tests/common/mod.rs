#![allow(dead_code)]

use overload_sim::config::Modulation;
use overload_sim::tx::Constellation;
use overload_sim::C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn cn(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Random Rayleigh `n_rx × k` channel, transmitted labels and received vector.
pub struct Instance {
    pub h: Vec<C64>,
    pub y: Vec<C64>,
    pub labels: Vec<usize>,
    pub sigma2: f64,
}

pub fn instance(rng: &mut ChaCha8Rng, k: usize, n_rx: usize, c: &Constellation, sigma2: f64) -> Instance {
    let h: Vec<C64> = (0..n_rx * k).map(|_| cn(rng)).collect();
    let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c.order())).collect();
    let y = (0..n_rx)
        .map(|r| (0..k).map(|u| h[r * k + u] * c.point(labels[u])).sum::<C64>() + cn(rng) * sigma2.sqrt())
        .collect();
    Instance { h, y, labels, sigma2 }
}

pub fn constellations() -> Vec<Constellation> {
    vec![Constellation::new(Modulation::Qpsk), Constellation::new(Modulation::Qam16)]
}

use overload_sim::channel::{add_awgn_in_place, tdla_pdp, ChannelRealization};
use overload_sim::estimation::RxGrid;
use overload_sim::sim::drop_channel;
use overload_sim::tx::pilot_cells;
use overload_sim::{validate, SimConfig, ValidatedConfig};

pub type Pilots = Vec<Vec<(usize, usize, C64)>>;

pub fn pilots_for(cfg: &SimConfig) -> Pilots {
    (0..cfg.n_users).map(|k| pilot_cells(k, cfg.n_users, &cfg.pilot, cfg.n_subcarriers)).collect()
}

/// Received grid carrying only the pilots of every user through `truth`.
pub fn pilot_reception(truth: &ChannelRealization, pilots: &Pilots, sigma2: f64, seed: u64) -> RxGrid {
    let mut rx = RxGrid::zeros(truth.n_symbols, truth.n_subcarriers, truth.n_rx);
    for (k, cells) in pilots.iter().enumerate() {
        for &(t, f, p) in cells {
            for r in 0..truth.n_rx {
                rx.at_mut(t, f)[r] += truth.get(t, f, r, k) * p;
            }
        }
    }
    add_awgn_in_place(&mut rx.y, sigma2, seed).unwrap();
    rx
}

pub fn config_at(speed_kmh: f64, n_users: usize, seed: u64) -> ValidatedConfig {
    validate(SimConfig { speed_kmh, n_users, master_seed: seed, ..SimConfig::default() }).unwrap()
}

pub fn true_channel(cfg: &ValidatedConfig, drop: u64) -> ChannelRealization {
    drop_channel(cfg, &tdla_pdp(cfg.delay_spread_ns * 1e-9).unwrap(), drop)
}
