use super::{ComplexityCounters, LlrVector, CMUL, NORM, RCMUL};
use crate::tx::Constellation;
use crate::C64;

/// Max-log LLRs for `z = s + w`, `w ~ CN(0, ν)`, given `1/ν`. Writes one
/// LLR per bit into `out` and returns the label of the nearest point.
pub fn demap_gaussian(z: C64, inv_nu: f64, constellation: &Constellation, out: &mut [f64], mults: &mut u64) -> usize {
    let m = constellation.bits_per_symbol();
    let mut min0 = [f64::INFINITY; 6];
    let mut min1 = [f64::INFINITY; 6];
    let mut best = (f64::INFINITY, 0);
    for (label, p) in constellation.points().iter().enumerate() {
        let d = (z - p).norm_sqr() * inv_nu;
        if d < best.0 {
            best = (d, label);
        }
        for b in 0..m {
            if (label >> (m - 1 - b)) & 1 == 0 {
                min0[b] = min0[b].min(d);
            } else {
                min1[b] = min1[b].min(d);
            }
        }
    }
    *mults += (NORM + 1) * constellation.order() as u64;
    for b in 0..m {
        out[b] = min1[b] - min0[b];
    }
    best.1
}

/// Exact max-log LLRs of one user alone on the resource element: matched
/// filter `z = hᴴy/‖h‖²` followed by enumeration of the constellation.
pub fn single_user_demap(
    y: &[C64],
    h: &[C64],
    sigma2: f64,
    constellation: &Constellation,
    counters: &mut ComplexityCounters,
) -> LlrVector {
    let mut out = vec![0.0; constellation.bits_per_symbol()];
    single_user_demap_into(y, h, sigma2, constellation, &mut out, counters);
    LlrVector(out)
}

pub fn single_user_demap_into(
    y: &[C64],
    h: &[C64],
    sigma2: f64,
    constellation: &Constellation,
    out: &mut [f64],
    counters: &mut ComplexityCounters,
) -> usize {
    counters.detector_runs += 1;
    let n = y.len() as u64;
    let g: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    counters.real_mults += NORM * n;
    if g == 0.0 {
        out.iter_mut().for_each(|l| *l = 0.0);
        return 0;
    }
    let mf: C64 = h.iter().zip(y).map(|(hr, yr)| hr.conj() * yr).sum();
    let z = mf / g;
    let inv_nu = g / sigma2.max(1e-12);
    counters.real_mults += CMUL * n + RCMUL + 2;
    demap_gaussian(z, inv_nu, constellation, out, &mut counters.real_mults)
}
