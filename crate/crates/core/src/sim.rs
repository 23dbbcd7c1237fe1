//! Monte Carlo link simulation: one slot per drop, aggregated into block
//! error rates, goodput spectral efficiency and complexity figures.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{freq_response, generate_fading, tdla_pdp, ChannelError, ChannelRealization, PowerDelayProfile};
use crate::config::{derive_seed, validate, ConfigError, CsiMode, DetectorKind, McsConfig, SimConfig, ValidatedConfig};
use crate::decoder::{bcjr_decode, idd_decode, DataObservations, DecodeError, UserCode};
use crate::detect::{
    clip_llrs, exhaustive_maxlog, mmse_sic_into, noma2_amplitudes, noma2_sic_into, single_user_demap_into,
    ComplexityCounters, DetectError, SicOrder, SphereDetector,
};
use crate::estimation::{interpolate, ls_estimate, EstimationError, RxGrid};
use crate::tx::{build_grid, pilot_cells, CodewordLayout, Constellation, Interleaver, TxError};
use crate::C64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("{0}")]
    Sweep(String),
}

struct UserChain {
    layout: CodewordLayout,
    interleaver: Interleaver,
    data_symbols: Vec<usize>,
}

/// Everything about a link that does not change between drops.
pub struct LinkSetup {
    cfg: ValidatedConfig,
    mcs: McsConfig,
    constellation: Constellation,
    pdp: PowerDelayProfile,
    users: Vec<UserChain>,
    pilots: Vec<Vec<(usize, usize, C64)>>,
    amplitudes: Vec<f64>,
}

impl LinkSetup {
    pub fn new(cfg: &ValidatedConfig, mcs: McsConfig) -> Result<Self, SimError> {
        let users = (0..cfg.n_users)
            .map(|k| {
                let capacity = cfg.coded_bits_available(k, mcs);
                UserChain {
                    layout: CodewordLayout::new(capacity, mcs.code_rate),
                    interleaver: Interleaver::new(capacity),
                    data_symbols: cfg.user_data_symbols(k),
                }
            })
            .collect();
        let amplitudes = if cfg.detector == DetectorKind::Noma2Sic {
            noma2_amplitudes(cfg.noma_power_split).to_vec()
        } else {
            vec![1.0; cfg.n_users]
        };
        Ok(Self {
            cfg: cfg.clone(),
            mcs,
            constellation: Constellation::new(mcs.modulation),
            pdp: tdla_pdp(cfg.delay_spread_ns * 1e-9)?,
            users,
            pilots: (0..cfg.n_users)
                .map(|k| pilot_cells(k, cfg.n_users, &cfg.pilot, cfg.n_subcarriers))
                .collect(),
            amplitudes,
        })
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }

    pub fn mcs(&self) -> McsConfig {
        self.mcs
    }

    pub fn info_bits(&self, user: usize) -> usize {
        self.users[user].layout.info_len
    }

    /// Info bits per slot summed over users.
    pub fn total_info_bits(&self) -> usize {
        self.users.iter().map(|u| u.layout.info_len).sum()
    }
}

/// True channel of every link in one drop. User `k`'s links depend only on
/// `(master_seed, k, rx, drop_index)`.
pub fn drop_channel(cfg: &ValidatedConfig, pdp: &PowerDelayProfile, drop_index: u64) -> ChannelRealization {
    let links: Vec<Vec<_>> = (0..cfg.n_users)
        .map(|k| {
            (0..cfg.n_rx)
                .map(|r| {
                    let seed = derive_seed(cfg.master_seed, &format!("fading/ue{k}/rx{r}"), drop_index);
                    let fading = generate_fading(pdp, cfg.doppler_hz, cfg.n_symbols, cfg.symbol_duration_s, seed);
                    freq_response(&fading, pdp, cfg.n_subcarriers, cfg.scs_hz)
                })
                .collect()
        })
        .collect();
    ChannelRealization::from_links(&links)
}

/// Outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DropOutcome {
    pub drop_index: u64,
    /// Final block decoding success per user.
    pub success: Vec<bool>,
    /// Success after each detection-decoding iteration, `[iteration][user]`.
    pub success_per_iteration: Vec<Vec<bool>>,
    pub info_bits: Vec<usize>,
    pub counters: ComplexityCounters,
    pub truncated: u64,
    /// Mean `|ĥ − h|²` of the channel the detector used.
    pub channel_mse: f64,
}

impl DropOutcome {
    pub fn decoded_bits(&self) -> usize {
        self.success.iter().zip(&self.info_bits).filter(|(s, _)| **s).map(|(_, b)| b).sum()
    }
}

fn count_errors(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Simulates one slot at `snr_db`.
pub fn run_drop(setup: &LinkSetup, snr_db: f64, drop_index: u64) -> Result<DropOutcome, SimError> {
    let cfg = &setup.cfg;
    let (n_sym, n_sub, n_rx, k_users) = (cfg.n_symbols, cfg.n_subcarriers, cfg.n_rx, cfg.n_users);
    let m = setup.constellation.bits_per_symbol();
    let truth = drop_channel(cfg, &setup.pdp, drop_index);

    // transmit
    let mut info = Vec::with_capacity(k_users);
    let mut rx = RxGrid::zeros(n_sym, n_sub, n_rx);
    for (k, chain) in setup.users.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &format!("bits/ue{k}"), drop_index));
        let bits: Vec<u8> = (0..chain.layout.info_len).map(|_| rng.gen_range(0..2u8)).collect();
        let channel_bits = chain.layout.to_channel_bits(&bits, &chain.interleaver)?;
        let amp = setup.amplitudes[k];
        let symbols: Vec<C64> = setup.constellation.map(&channel_bits)?.into_iter().map(|s| s * amp).collect();
        let grid = build_grid(&symbols, &cfg.pilot, k, k_users, n_sym, n_sub, &chain.data_symbols)?;
        for t in 0..n_sym {
            for f in 0..n_sub {
                let x = grid.cell(t, f);
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                for (r, y) in rx.at_mut(t, f).iter_mut().enumerate() {
                    *y += truth.get(t, f, r, k) * x;
                }
            }
        }
        info.push(bits);
    }
    let sigma2 = ValidatedConfig::noise_var(snr_db);
    for r in 0..n_rx {
        let mut noise = vec![C64::new(0.0, 0.0); n_sym * n_sub];
        crate::channel::add_awgn_in_place(&mut noise, sigma2, derive_seed(cfg.master_seed, &format!("noise/rx{r}"), drop_index))?;
        for (i, w) in noise.into_iter().enumerate() {
            rx.y[i * n_rx + r] += w;
        }
    }

    // estimate
    let n_active = if cfg.detector == DetectorKind::Oma { 1 } else { k_users };
    let (h_hat, noise_var) = match cfg.csi {
        CsiMode::Genie => (truth.clone(), sigma2),
        CsiMode::Ls => {
            let est = interpolate(&ls_estimate(&rx, &setup.pilots)?, n_sym, n_sub);
            let nv = est.effective_noise_var(n_active);
            (est.h_hat, nv)
        }
    };
    let channel_mse = {
        let a = h_hat.entries();
        a.iter().zip(truth.entries()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
    };

    let mut counters = ComplexityCounters::default();
    let mut truncated = 0;
    let clip = cfg.llr_clip;
    let c = &setup.constellation;

    // every user's channel LLRs, or the IDD result directly
    let hard_per_iteration: Vec<Vec<Vec<u8>>> = if cfg.detector == DetectorKind::Oma {
        let mut hard = Vec::with_capacity(k_users);
        for (k, chain) in setup.users.iter().enumerate() {
            let mut llr = vec![0.0; chain.layout.capacity];
            let mut col = vec![C64::new(0.0, 0.0); n_rx];
            let mut re = 0;
            for &t in &chain.data_symbols {
                for f in 0..n_sub {
                    for (r, v) in col.iter_mut().enumerate() {
                        *v = h_hat.get(t, f, r, k);
                    }
                    single_user_demap_into(rx.at(t, f), &col, noise_var, c, &mut llr[re * m..(re + 1) * m], &mut counters);
                    re += 1;
                }
            }
            counters.resource_elements += re as u64;
            clip_llrs(&mut llr, clip);
            let mother = chain.layout.to_mother_llrs(&llr, &chain.interleaver)?;
            hard.push(bcjr_decode(&mother, None, Some(clip))?.hard_bits);
        }
        vec![hard]
    } else {
        let data_symbols = &setup.users[0].data_symbols;
        let n_re = data_symbols.len() * n_sub;
        counters.resource_elements += n_re as u64;
        if cfg.detector == DetectorKind::Idd {
            let mut y = Vec::with_capacity(n_re * n_rx);
            let mut h = Vec::with_capacity(n_re * n_rx * k_users);
            for &t in data_symbols {
                for f in 0..n_sub {
                    y.extend_from_slice(rx.at(t, f));
                    h.extend_from_slice(h_hat.at(t, f));
                }
            }
            let obs = DataObservations { y: &y, h: &h, n_rx, noise_var };
            let codes: Vec<UserCode> = setup
                .users
                .iter()
                .map(|u| UserCode { layout: &u.layout, interleaver: &u.interleaver })
                .collect();
            let mut det = SphereDetector::new(k_users, c.clone(), cfg.node_budget);
            let out = idd_decode(&obs, &codes, &mut det, cfg.idd_iterations, clip, &mut counters)?;
            truncated += out.truncated;
            out.hard_per_iteration
        } else {
            let mut llr: Vec<Vec<f64>> = vec![vec![0.0; n_re * m]; k_users];
            let mut re_out = vec![0.0; k_users * m];
            let mut sphere = (cfg.detector == DetectorKind::Sphere)
                .then(|| SphereDetector::new(k_users, c.clone(), cfg.node_budget).with_clip(clip));
            let mut re = 0;
            for &t in data_symbols {
                for f in 0..n_sub {
                    let (y, h) = (rx.at(t, f), h_hat.at(t, f));
                    match cfg.detector {
                        DetectorKind::Sphere => {
                            let det = sphere.as_mut().expect("constructed for sphere");
                            truncated += det.detect_into(y, h, noise_var, None, &mut re_out, &mut counters)? as u64;
                        }
                        DetectorKind::MmseSic => {
                            mmse_sic_into(y, h, k_users, noise_var, c, &SicOrder::Sinr, &mut re_out, &mut counters)?;
                        }
                        DetectorKind::Noma2Sic => {
                            noma2_sic_into(y, h, noise_var, cfg.noma_power_split, c, &mut re_out, &mut counters)?;
                        }
                        DetectorKind::Exhaustive => {
                            let l = exhaustive_maxlog(y, h, k_users, noise_var, c, None, &mut counters)?;
                            re_out.copy_from_slice(&l.0);
                        }
                        DetectorKind::Oma | DetectorKind::Idd => unreachable!("handled above"),
                    }
                    for (k, user_llr) in llr.iter_mut().enumerate() {
                        user_llr[re * m..(re + 1) * m].copy_from_slice(&re_out[k * m..(k + 1) * m]);
                    }
                    re += 1;
                }
            }
            let mut hard = Vec::with_capacity(k_users);
            for (chain, mut l) in setup.users.iter().zip(llr) {
                clip_llrs(&mut l, clip);
                let mother = chain.layout.to_mother_llrs(&l, &chain.interleaver)?;
                hard.push(bcjr_decode(&mother, None, Some(clip))?.hard_bits);
            }
            vec![hard]
        }
    };

    let success_per_iteration: Vec<Vec<bool>> = hard_per_iteration
        .iter()
        .map(|it| it.iter().zip(&info).map(|(h, b)| count_errors(h, b) == 0).collect())
        .collect();
    Ok(DropOutcome {
        drop_index,
        success: success_per_iteration.last().expect("at least one iteration").clone(),
        success_per_iteration,
        info_bits: info.iter().map(|b| b.len()).collect(),
        counters,
        truncated,
        channel_mse,
    })
}

/// `Σ decoded info bits / (n_drops · n_subcarriers · n_symbols)`; pilot
/// symbols sit in the denominator, so their overhead is charged.
pub fn goodput_se(outcomes: &[DropOutcome], cfg: &SimConfig) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let bits: usize = outcomes.iter().map(|o| o.decoded_bits()).sum();
    bits as f64 / (outcomes.len() * cfg.n_subcarriers * cfg.n_symbols) as f64
}

/// Complex multiplications per resource element of MMSE-SIC for `n_users`
/// users on `n_rx` antennas. Its cost does not depend on the data, so one
/// dummy detection measures it.
pub fn sic_reference_mults(n_users: usize, n_rx: usize, constellation: &Constellation) -> f64 {
    let h: Vec<C64> = (0..n_rx * n_users).map(|i| C64::new(1.0 + i as f64, 0.5)).collect();
    let y = vec![C64::new(0.3, -0.2); n_rx];
    let mut out = vec![0.0; n_users * constellation.bits_per_symbol()];
    let mut cnt = ComplexityCounters::default();
    mmse_sic_into(&y, &h, n_users, 1.0, constellation, &SicOrder::Sinr, &mut out, &mut cnt)
        .expect("dimensions are consistent");
    cnt.resource_elements = 1;
    cnt.mults_per_re()
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub snr_db: f64,
    pub n_users: usize,
    pub n_rx: usize,
    pub speed_kmh: f64,
    pub detector: DetectorKind,
    pub mcs: McsConfig,
    pub n_drops: usize,
    pub bler: Vec<f64>,
    /// Mean over users of the block error rate after each iteration.
    pub bler_per_iteration: Vec<f64>,
    pub goodput_se: f64,
    pub se_std_error: f64,
    pub overhead_fraction: f64,
    pub mults_per_re: f64,
    pub nodes_per_re: f64,
    pub ratio_vs_sic: f64,
    pub truncation_rate: f64,
    pub master_seed: u64,
    pub mean_channel_mse: f64,
    pub wall_time_s: f64,
}

pub fn csv_header(max_users: usize) -> String {
    let mut cols: Vec<String> = ["snr_db", "n_users", "n_rx", "speed_kmh", "detector", "modulation", "code_rate", "n_drops"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..max_users).map(|k| format!("bler_user_{k}")));
    cols.extend(
        ["goodput_se", "overhead_fraction", "mults_per_re", "ratio_vs_sic", "truncation_rate", "master_seed"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

impl MetricsRecord {
    /// CSV row with `max_users` BLER columns; missing users stay blank.
    pub fn csv_row(&self, max_users: usize) -> String {
        let mut cols = vec![
            self.snr_db.to_string(),
            self.n_users.to_string(),
            self.n_rx.to_string(),
            self.speed_kmh.to_string(),
            self.detector.to_string(),
            self.mcs.modulation.order().to_string(),
            self.mcs.code_rate.label().to_string(),
            self.n_drops.to_string(),
        ];
        for k in 0..max_users {
            cols.push(self.bler.get(k).map(|b| b.to_string()).unwrap_or_default());
        }
        cols.push(self.goodput_se.to_string());
        cols.push(self.overhead_fraction.to_string());
        cols.push(self.mults_per_re.to_string());
        cols.push(self.ratio_vs_sic.to_string());
        cols.push(self.truncation_rate.to_string());
        cols.push(self.master_seed.to_string());
        cols.join(",")
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> std::io::Result<()> {
    let kmax = records.iter().map(|r| r.n_users).max().unwrap_or(0);
    writeln!(w, "{}", csv_header(kmax))?;
    for r in records {
        writeln!(w, "{}", r.csv_row(kmax))?;
    }
    Ok(())
}

/// Runs `n_drops` slots of one MCS at one SNR and aggregates them. Drops
/// run on the current rayon pool; results are reduced in drop order.
pub fn run_point(cfg: &ValidatedConfig, snr_db: f64, mcs: McsConfig) -> Result<MetricsRecord, SimError> {
    let start = std::time::Instant::now();
    let setup = LinkSetup::new(cfg, mcs)?;
    let outcomes: Vec<DropOutcome> = (0..cfg.n_drops as u64)
        .into_par_iter()
        .map(|d| run_drop(&setup, snr_db, d))
        .collect::<Result<_, _>>()?;
    let mut rec = aggregate(cfg, snr_db, mcs, &outcomes);
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

pub fn aggregate(cfg: &ValidatedConfig, snr_db: f64, mcs: McsConfig, outcomes: &[DropOutcome]) -> MetricsRecord {
    let k = cfg.n_users;
    let n = outcomes.len().max(1) as f64;
    let mut counters = ComplexityCounters::default();
    let mut truncated = 0u64;
    let mut fails = vec![0usize; k];
    let n_iter = outcomes.first().map_or(1, |o| o.success_per_iteration.len());
    let mut iter_fails = vec![0usize; n_iter];
    let grid = (cfg.n_subcarriers * cfg.n_symbols) as f64;
    let (mut se_sum, mut se_sq, mut mse) = (0.0, 0.0, 0.0);
    for o in outcomes {
        counters.merge(&o.counters);
        truncated += o.truncated;
        for (u, s) in o.success.iter().enumerate() {
            fails[u] += !s as usize;
        }
        for (i, it) in o.success_per_iteration.iter().enumerate() {
            iter_fails[i] += it.iter().filter(|s| !**s).count();
        }
        let se = o.decoded_bits() as f64 / grid;
        se_sum += se;
        se_sq += se * se;
        mse += o.channel_mse;
    }
    let mean = se_sum / n;
    let var = if outcomes.len() > 1 {
        ((se_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let sic = sic_reference_mults(k, cfg.n_rx, &Constellation::new(mcs.modulation));
    let mults = counters.mults_per_re();
    MetricsRecord {
        snr_db,
        n_users: k,
        n_rx: cfg.n_rx,
        speed_kmh: cfg.speed_kmh,
        detector: cfg.detector,
        mcs,
        n_drops: outcomes.len(),
        bler: fails.iter().map(|&f| f as f64 / n).collect(),
        bler_per_iteration: iter_fails.iter().map(|&f| f as f64 / (n * k as f64)).collect(),
        goodput_se: mean,
        se_std_error: (var / n).sqrt(),
        overhead_fraction: cfg.overhead_fraction,
        mults_per_re: mults,
        nodes_per_re: counters.nodes_per_re(),
        ratio_vs_sic: mults / sic,
        truncation_rate: if counters.detector_runs == 0 {
            0.0
        } else {
            truncated as f64 / counters.detector_runs as f64
        },
        master_seed: cfg.master_seed,
        mean_channel_mse: mse / n,
        wall_time_s: 0.0,
    }
}

/// Genie link adaptation: the MCS in `cfg.mcs_set` with the highest
/// goodput at this SNR. Ties keep the earlier MCS.
pub fn run_genie(cfg: &ValidatedConfig, snr_db: f64) -> Result<MetricsRecord, SimError> {
    let mut best: Option<MetricsRecord> = None;
    for &mcs in &cfg.mcs_set {
        let rec = run_point(cfg, snr_db, mcs)?;
        if best.as_ref().map_or(true, |b| rec.goodput_se > b.goodput_se) {
            best = Some(rec);
        }
    }
    Ok(best.expect("mcs_set is non-empty after validation"))
}

/// Axes of a sweep; empty axes fall back to the base configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepAxes {
    pub snr_db: Vec<f64>,
    pub n_users: Vec<usize>,
    pub speed_kmh: Vec<f64>,
    pub detectors: Vec<DetectorKind>,
}

/// A sweep point that could not run, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub n_users: usize,
    pub detector: DetectorKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub records: Vec<MetricsRecord>,
    pub skipped: Vec<SkippedPoint>,
}

/// Cartesian product of the axes, genie MCS at every point. Detector and
/// user-count combinations that fail validation (noma2_sic with K ≠ 2,
/// exhaustive search beyond its guard) are skipped and reported.
pub fn run_sweep(base: &SimConfig, axes: &SweepAxes) -> Result<SweepResult, SimError> {
    let snrs = if axes.snr_db.is_empty() { base.snr_db_list.clone() } else { axes.snr_db.clone() };
    let users = if axes.n_users.is_empty() { vec![base.n_users] } else { axes.n_users.clone() };
    let speeds = if axes.speed_kmh.is_empty() { vec![base.speed_kmh] } else { axes.speed_kmh.clone() };
    let dets = if axes.detectors.is_empty() { vec![base.detector] } else { axes.detectors.clone() };
    let mut out = SweepResult::default();
    for &speed in &speeds {
        for &k in &users {
            for &det in &dets {
                let mut c = base.clone();
                c.speed_kmh = speed;
                c.n_users = k;
                c.detector = det;
                c.snr_db_list = snrs.clone();
                let v = match validate(c) {
                    Ok(v) => v,
                    Err(e @ ConfigError::Invalid { field: "n_users" | "detector", .. })
                        if matches!(det, DetectorKind::Noma2Sic | DetectorKind::Exhaustive) =>
                    {
                        out.skipped.push(SkippedPoint { n_users: k, detector: det, reason: e.to_string() });
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                for &snr in &snrs {
                    out.records.push(run_genie(&v, snr)?);
                }
            }
        }
    }
    if out.records.is_empty() {
        return Err(SimError::Sweep("no valid sweep point".into()));
    }
    Ok(out)
}
