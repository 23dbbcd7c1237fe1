//! Max-log BCJR decoding of the terminated convolutional code, and the
//! iterative detection-and-decoding loop around the sphere detector.
//!
//! The trellis recursions use additions and maxima only, so the decoder
//! contributes nothing to the multiplication counts.

use crate::detect::{clip_llrs, ComplexityCounters, DetectError, SphereDetector};
use crate::tx::{encoder_step, CodewordLayout, Interleaver, TxError, NUM_STATES, TAIL_BITS};
use crate::C64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("coded LLR length {0} is not 2·(k + {TAIL_BITS}) for any k ≥ 0")]
    CodedLength(usize),
    #[error("a-priori length {got} does not match {expected} info bits")]
    PriorLength { expected: usize, got: usize },
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderOutput {
    /// Posterior LLRs of the info bits.
    pub info_llr: Vec<f64>,
    /// Posterior minus input LLR on every mother-code bit.
    pub coded_extrinsic: Vec<f64>,
    pub hard_bits: Vec<u8>,
}

#[derive(Clone, Copy)]
struct Branch {
    next: usize,
    /// Index into the four `(c0, c1)` branch metrics.
    out: usize,
}

fn trellis() -> [[Branch; 2]; NUM_STATES] {
    let mut t = [[Branch { next: 0, out: 0 }; 2]; NUM_STATES];
    for (s, row) in t.iter_mut().enumerate() {
        for u in 0..2 {
            let (c, next) = encoder_step(s, u as u8);
            row[u] = Branch {
                next,
                out: ((c[0] as usize) << 1) | c[1] as usize,
            };
        }
    }
    t
}

/// Max-log BCJR over the 64-state zero-tail trellis. `coded_llr` holds the
/// depunctured mother-code LLRs (`L = log P0/P1`, zeros at punctured
/// positions); `apriori_info` optionally adds info-bit priors. Outputs are
/// clipped to `±clip` when given.
pub fn bcjr_decode(coded_llr: &[f64], apriori_info: Option<&[f64]>, clip: Option<f64>) -> Result<DecoderOutput, DecodeError> {
    let n = coded_llr.len();
    if n % 2 != 0 || n < 2 * TAIL_BITS {
        return Err(DecodeError::CodedLength(n));
    }
    let steps = n / 2;
    let k = steps - TAIL_BITS;
    if let Some(a) = apriori_info {
        if a.len() != k {
            return Err(DecodeError::PriorLength { expected: k, got: a.len() });
        }
    }
    let tr = trellis();
    let neg = f64::NEG_INFINITY;

    // gamma[t][c0c1] for the coded part, plus ±La/2 on the info bit
    let gamma: Vec<[f64; 4]> = coded_llr
        .chunks_exact(2)
        .map(|l| {
            let (a, b) = (l[0] / 2.0, l[1] / 2.0);
            [a + b, a - b, -a + b, -a - b]
        })
        .collect();
    let prior = |t: usize, u: usize| -> f64 {
        match apriori_info {
            Some(a) if t < k => {
                if u == 0 {
                    a[t] / 2.0
                } else {
                    -a[t] / 2.0
                }
            }
            _ => 0.0,
        }
    };
    let inputs = |t: usize| if t < k { 2 } else { 1 };

    let mut alpha = vec![neg; (steps + 1) * NUM_STATES];
    alpha[0] = 0.0;
    for t in 0..steps {
        let (cur, nxt) = alpha.split_at_mut((t + 1) * NUM_STATES);
        let cur = &cur[t * NUM_STATES..];
        for s in 0..NUM_STATES {
            if cur[s] == neg {
                continue;
            }
            for u in 0..inputs(t) {
                let b = tr[s][u];
                let v = cur[s] + gamma[t][b.out] + prior(t, u);
                if v > nxt[b.next] {
                    nxt[b.next] = v;
                }
            }
        }
    }
    let mut beta = vec![neg; (steps + 1) * NUM_STATES];
    beta[steps * NUM_STATES] = 0.0;
    for t in (0..steps).rev() {
        for s in 0..NUM_STATES {
            let mut best = neg;
            for u in 0..inputs(t) {
                let b = tr[s][u];
                let v = beta[(t + 1) * NUM_STATES + b.next] + gamma[t][b.out] + prior(t, u);
                if v > best {
                    best = v;
                }
            }
            beta[t * NUM_STATES + s] = best;
        }
    }

    let mut info_llr = Vec::with_capacity(k);
    let mut coded_post = vec![0.0; n];
    for t in 0..steps {
        let mut info = [neg; 2];
        let mut c0 = [neg; 2];
        let mut c1 = [neg; 2];
        for s in 0..NUM_STATES {
            let a = alpha[t * NUM_STATES + s];
            if a == neg {
                continue;
            }
            for u in 0..inputs(t) {
                let b = tr[s][u];
                let v = a + gamma[t][b.out] + prior(t, u) + beta[(t + 1) * NUM_STATES + b.next];
                info[u] = info[u].max(v);
                let (x0, x1) = (b.out >> 1, b.out & 1);
                c0[x0] = c0[x0].max(v);
                c1[x1] = c1[x1].max(v);
            }
        }
        if t < k {
            info_llr.push(info[0] - info[1]);
        }
        coded_post[2 * t] = c0[0] - c0[1];
        coded_post[2 * t + 1] = c1[0] - c1[1];
    }

    let hard_bits = info_llr.iter().map(|&l| (l < 0.0) as u8).collect();
    let mut coded_extrinsic: Vec<f64> = coded_post.iter().zip(coded_llr).map(|(p, l)| p - l).collect();
    if let Some(c) = clip {
        clip_llrs(&mut info_llr, c);
        clip_llrs(&mut coded_extrinsic, c);
    }
    Ok(DecoderOutput {
        info_llr,
        coded_extrinsic,
        hard_bits,
    })
}

/// Per-user coding chain shared by the IDD loop.
#[derive(Debug, Clone)]
pub struct UserCode<'a> {
    pub layout: &'a CodewordLayout,
    pub interleaver: &'a Interleaver,
}

/// Observations of one slot's data resource elements, all users
/// superimposed on every element.
#[derive(Debug, Clone, Copy)]
pub struct DataObservations<'a> {
    /// `n_re × n_rx`
    pub y: &'a [C64],
    /// `n_re × n_rx × K`, row-major per element.
    pub h: &'a [C64],
    pub n_rx: usize,
    pub noise_var: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IddOutput {
    /// Final decoder outputs per user.
    pub users: Vec<DecoderOutput>,
    /// Info-bit hard decisions after each iteration, `[iteration][user]`.
    pub hard_per_iteration: Vec<Vec<Vec<u8>>>,
    /// Detector calls cut short by the node budget, over all iterations.
    pub truncated: u64,
}

/// Iterative detection and decoding with extrinsic exchange: the sphere
/// detector sees the decoder extrinsics as priors, and every decoder sees
/// only the detector extrinsics. One iteration is plain detection followed
/// by decoding.
pub fn idd_decode(
    obs: &DataObservations,
    codes: &[UserCode],
    detector: &mut SphereDetector,
    iterations: usize,
    clip: f64,
    counters: &mut ComplexityCounters,
) -> Result<IddOutput, DecodeError> {
    let k = codes.len();
    let m = detector.bits_per_symbol();
    let n_rx = obs.n_rx;
    let n_re = obs.y.len() / n_rx.max(1);
    if detector.n_users() != k || obs.h.len() != n_re * n_rx * k {
        return Err(DetectError::Dimension(format!("{} users, {} resource elements", k, n_re)).into());
    }
    for c in codes {
        if c.layout.capacity != n_re * m {
            return Err(TxError::Length {
                expected: n_re * m,
                got: c.layout.capacity,
            }
            .into());
        }
    }

    let mut priors: Vec<Vec<f64>> = vec![vec![0.0; n_re * m]; k];
    let mut det_ext: Vec<Vec<f64>> = vec![vec![0.0; n_re * m]; k];
    let mut re_prior = vec![0.0; k * m];
    let mut re_post = vec![0.0; k * m];
    let mut out = IddOutput::default();

    for it in 0..iterations.max(1) {
        for re in 0..n_re {
            for u in 0..k {
                re_prior[u * m..(u + 1) * m].copy_from_slice(&priors[u][re * m..(re + 1) * m]);
            }
            let truncated = detector.detect_into(
                &obs.y[re * n_rx..(re + 1) * n_rx],
                &obs.h[re * n_rx * k..(re + 1) * n_rx * k],
                obs.noise_var,
                (it > 0).then_some(&re_prior[..]),
                &mut re_post,
                counters,
            )?;
            out.truncated += truncated as u64;
            for u in 0..k {
                for b in 0..m {
                    let e = re_post[u * m + b] - re_prior[u * m + b];
                    det_ext[u][re * m + b] = e.clamp(-clip, clip);
                }
            }
        }
        let last = it + 1 == iterations.max(1);
        let mut hard = Vec::with_capacity(k);
        let mut finals = Vec::with_capacity(k);
        for (u, code) in codes.iter().enumerate() {
            let mother = code.layout.to_mother_llrs(&det_ext[u], code.interleaver)?;
            let dec = bcjr_decode(&mother, None, Some(clip))?;
            hard.push(dec.hard_bits.clone());
            if last {
                finals.push(dec);
            } else {
                priors[u] = code.layout.to_channel_llrs(&dec.coded_extrinsic, code.interleaver)?;
            }
        }
        out.hard_per_iteration.push(hard);
        if last {
            out.users = finals;
        }
    }
    Ok(out)
}
