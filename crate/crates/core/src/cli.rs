//! Command-line front end.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::capacity::capacity_sweep;
use crate::channel::{tdla_pdp, CHANNEL_DUMP_HEADER};
use crate::config::{validate, ConfigError, ConfigFile, DetectorKind, SimConfig};
use crate::selftest;
use crate::sim::{drop_channel, run_point, run_sweep, write_csv, SweepAxes};

#[derive(Debug, Parser)]
#[command(name = "overload-sim", version, about = "Overloaded multiuser uplink link-level simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ergodic sum capacity of K Rayleigh users on one antenna.
    Capacity {
        /// Monte Carlo draws per point.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Fixed-MCS link simulation at each SNR for the configured point.
    Link,
    /// Cartesian sweep over SNR, users, speed and detector with genie MCS selection.
    Sweep,
    /// Oracle-equivalence and fading-autocorrelation checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for CSVs and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    pub out: PathBuf,
    /// Master seed of every random stream.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Monte Carlo drops per point.
    #[arg(long, global = true, value_name = "N")]
    pub drops: Option<usize>,
    /// SNRs in dB: comma list and/or ranges `a..b` or `a..b:step`.
    #[arg(long, global = true, value_name = "LIST", allow_hyphen_values = true)]
    pub snr: Option<String>,
    /// User counts, comma list and/or ranges.
    #[arg(long, global = true, value_name = "LIST")]
    pub ues: Option<String>,
    /// User speeds in km/h.
    #[arg(long = "speed-kmh", global = true, value_name = "LIST")]
    pub speed_kmh: Option<String>,
    /// Detectors: oma, noma2_sic, mmse_sic, exhaustive, sphere, idd.
    #[arg(long, global = true, value_name = "LIST")]
    pub detector: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Also write the true channel of every drop to channels.csv.
    #[arg(long = "dump-channel", global = true)]
    pub dump_channel: bool,
    /// Override one configuration key, e.g. `--set csi=genie`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Parses `"-2,0,2"`, `"-10..20"` and `"0..6:2"` (inclusive ranges).
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, rest)) = split_range(part) {
            let (b, step) = match rest.split_once(':') {
                Some((b, s)) => (b, s.parse::<f64>().map_err(|e| format!("{part}: {e}"))?),
                None => (rest, 1.0),
            };
            let a: f64 = a.parse().map_err(|e| format!("{part}: {e}"))?;
            let b: f64 = b.parse().map_err(|e| format!("{part}: {e}"))?;
            if !(step > 0.0) || b < a {
                return Err(format!("{part}: need a ≤ b and a positive step"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            out.extend((0..=n).map(|i| a + i as f64 * step));
        } else {
            out.push(part.parse().map_err(|e| format!("{part}: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn split_range(part: &str) -> Option<(&str, &str)> {
    // skip a leading sign so "-10..20" splits after the first number
    let idx = part.get(1..)?.find("..")? + 1;
    Some((&part[..idx], &part[idx + 2..]))
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>, String> {
    parse_list(text)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format!("{v} is not a non-negative integer"))
            }
        })
        .collect()
}

/// Config errors map to exit code 2, everything else to 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<E: std::fmt::Display>(e: E) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// Run configuration assembled from defaults, file, overrides and flags,
/// plus the sweep axes named on the command line.
pub fn build_config(args: &CommonArgs) -> Result<(SimConfig, SweepAxes)> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?,
        None => String::new(),
    };
    let file = ConfigFile::parse_with_overrides(&text, &args.overrides).map_err(usage)?;
    let mut cfg = file.apply_to(SimConfig::default()).map_err(usage)?;
    let mut axes = SweepAxes::default();
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = args.drops {
        cfg.n_drops = d;
    }
    if let Some(s) = &args.snr {
        axes.snr_db = parse_list(s).map_err(|e| usage(format!("--snr {e}")))?;
        cfg.snr_db_list = axes.snr_db.clone();
    }
    if let Some(s) = &args.ues {
        axes.n_users = parse_usize_list(s).map_err(|e| usage(format!("--ues {e}")))?;
        cfg.n_users = axes.n_users[0];
    }
    if let Some(s) = &args.speed_kmh {
        axes.speed_kmh = parse_list(s).map_err(|e| usage(format!("--speed-kmh {e}")))?;
        cfg.speed_kmh = axes.speed_kmh[0];
    }
    if let Some(s) = &args.detector {
        axes.detectors = s
            .split(',')
            .map(|d| d.trim().parse::<DetectorKind>())
            .collect::<Result<_, ConfigError>>()
            .map_err(usage)?;
        cfg.detector = axes.detectors[0];
    }
    Ok((cfg, axes))
}

/// Provenance of one invocation, written before any result and rewritten
/// with the end time once the run finishes.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: String,
    pub master_seed: u64,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &SimConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            command: command.to_string(),
            config_snapshot: ConfigFile::from_config(cfg).to_toml(),
            master_seed: cfg.master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            outputs,
            notes: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "command = {}", self.command)?;
        writeln!(w, "version = {}", self.version)?;
        writeln!(w, "master_seed = {}", self.master_seed)?;
        writeln!(w, "started = {}", self.started)?;
        writeln!(w, "finished = {}", self.finished.as_deref().unwrap_or("running"))?;
        for o in &self.outputs {
            writeln!(w, "output = {}", o.display())?;
        }
        for n in &self.notes {
            writeln!(w, "note = {n}")?;
        }
        writeln!(w, "\n[config]\n{}", self.config_snapshot)?;
        w.flush()
    }

    pub fn finish(&mut self, path: &Path) -> std::io::Result<()> {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.write(path)
    }
}

/// Runs the parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let (cfg, axes) = build_config(&cli.common)?;
    let workers = cli.common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(usage("--workers must be ≥ 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let out = &cli.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join("manifest.txt");

    match cli.command {
        Command::Capacity { draws } => {
            if draws == 0 {
                return Err(usage("--draws must be ≥ 1"));
            }
            let snrs = if axes.snr_db.is_empty() { cfg.snr_db_list.clone() } else { axes.snr_db };
            let users = if axes.n_users.is_empty() { vec![cfg.n_users] } else { axes.n_users };
            let csv = out.join("capacity.csv");
            let mut manifest = RunManifest::new("capacity", &cfg, vec![csv.clone()]);
            manifest.notes.push(format!("draws = {draws}"));
            manifest.write(&manifest_path)?;
            let rows = capacity_sweep(&snrs, &users, draws, cfg.master_seed);
            let mut w = BufWriter::new(File::create(&csv)?);
            writeln!(w, "snr_db,K,mean_capacity,stderr")?;
            for (snr, k, c) in rows {
                writeln!(w, "{snr},{k},{},{}", c.mean, c.std_error)?;
            }
            w.flush()?;
            manifest.finish(&manifest_path)?;
            eprintln!("wrote {}", csv.display());
        }
        Command::Link => {
            let v = validate(cfg.clone()).map_err(usage)?;
            let csv = out.join("link.csv");
            let mut outputs = vec![csv.clone()];
            if cli.common.dump_channel {
                outputs.push(out.join("channels.csv"));
            }
            let mut manifest = RunManifest::new("link", &cfg, outputs);
            manifest.write(&manifest_path)?;
            if cli.common.dump_channel {
                dump_channels(&v, &out.join("channels.csv"))?;
            }
            let mut records = Vec::new();
            for &snr in &v.snr_db_list {
                let r = pool.install(|| run_point(&v, snr, v.mcs))?;
                eprintln!(
                    "snr {snr} dB: goodput {:.4} b/s/Hz, {:.1} mults/RE, {:.2} nodes/RE, {:.2} s",
                    r.goodput_se, r.mults_per_re, r.nodes_per_re, r.wall_time_s
                );
                records.push(r);
            }
            write_csv(&records, BufWriter::new(File::create(&csv)?))?;
            manifest.finish(&manifest_path)?;
            eprintln!("wrote {}", csv.display());
        }
        Command::Sweep => {
            let csv = out.join("sweep.csv");
            let mut outputs = vec![csv.clone()];
            if cli.common.dump_channel {
                outputs.push(out.join("channels.csv"));
            }
            let mut manifest = RunManifest::new("sweep", &cfg, outputs);
            manifest.notes.push(format!("axes = {axes:?}"));
            manifest.write(&manifest_path)?;
            if cli.common.dump_channel {
                let v = validate(cfg.clone()).map_err(usage)?;
                dump_channels(&v, &out.join("channels.csv"))?;
            }
            let result = pool.install(|| run_sweep(&cfg, &axes)).map_err(|e| match e {
                crate::sim::SimError::Config(c) => usage(c),
                other => other.into(),
            })?;
            for s in &result.skipped {
                let note = format!("skipped {} with K={}: {}", s.detector, s.n_users, s.reason);
                eprintln!("{note}");
                manifest.notes.push(note);
            }
            for r in &result.records {
                eprintln!(
                    "{} K={} {} km/h {} dB: goodput {:.4} b/s/Hz at {}, {:.1} mults/RE, {:.2} s",
                    r.detector, r.n_users, r.speed_kmh, r.snr_db, r.goodput_se, r.mcs, r.mults_per_re, r.wall_time_s
                );
            }
            write_csv(&result.records, BufWriter::new(File::create(&csv)?))?;
            manifest.finish(&manifest_path)?;
            eprintln!("wrote {}", csv.display());
        }
        Command::Selftest => {
            let results = pool.install(|| selftest::run_all(cfg.master_seed));
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                failed += !r.passed as usize;
            }
            if failed > 0 {
                bail!("{failed} self-test(s) failed");
            }
        }
    }
    Ok(())
}

fn dump_channels(cfg: &crate::config::ValidatedConfig, path: &Path) -> Result<()> {
    let pdp = tdla_pdp(cfg.delay_spread_ns * 1e-9)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHANNEL_DUMP_HEADER}")?;
    for d in 0..cfg.n_drops {
        drop_channel(cfg, &pdp, d as u64).write_csv(d, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}
