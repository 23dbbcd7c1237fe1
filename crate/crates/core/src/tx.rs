//! Per-user transmit chain: convolutional encoding, puncturing, bit
//! interleaving, Gray QAM mapping and resource-grid assembly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{CodeRate, Modulation, PilotConfig};
use crate::C64;

/// Encoder memory; the code has constraint length 7.
pub const MEMORY: usize = 6;
pub const TAIL_BITS: usize = MEMORY;
pub const NUM_STATES: usize = 1 << MEMORY;
/// Generator polynomials (133, 171) octal. The MSB taps the current input.
pub const GENERATORS: [u32; 2] = [0o133, 0o171];

const INTERLEAVER_SEED: u64 = 0x4249_4C56_0000_0000;
const PILOT_SEED: u64 = 0x5049_4C4F_5400_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("bit count {len} is not a multiple of {bits_per_symbol} bits per symbol")]
    IndivisibleBits { len: usize, bits_per_symbol: usize },
    #[error("grid needs {expected} data symbols, got {got}")]
    SymbolCount { expected: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("info block is empty")]
    EmptyInfo,
}

#[inline]
fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Output pair of the encoder for input `bit` from `state` (previous six
/// inputs, most recent in bit 5), and the next state.
#[inline]
pub fn encoder_step(state: usize, bit: u8) -> ([u8; 2], usize) {
    let reg = ((bit as u32) << MEMORY) | state as u32;
    (
        [parity(reg & GENERATORS[0]), parity(reg & GENERATORS[1])],
        (reg >> 1) as usize,
    )
}

/// Rate-1/2 zero-tail encoding: `2·(len + 6)` bits ordered `c0, c1` per step.
pub fn encode_mother(info: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * (info.len() + TAIL_BITS));
    let mut state = 0;
    for &b in info.iter().chain(std::iter::repeat(&0).take(TAIL_BITS)) {
        let (c, next) = encoder_step(state, b);
        out.extend_from_slice(&c);
        state = next;
    }
    debug_assert_eq!(state, 0);
    out
}

/// Convolutional code with its puncturing rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeConfig {
    pub rate: CodeRate,
}

impl CodeConfig {
    pub fn new(rate: CodeRate) -> Self {
        Self { rate }
    }

    /// Encodes and punctures.
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>, TxError> {
        if info.is_empty() {
            return Err(TxError::EmptyInfo);
        }
        Ok(puncture(&encode_mother(info), self.rate))
    }
}

/// Keeps the mother-code positions selected by the rate's pattern.
pub fn puncture<T: Copy>(mother: &[T], rate: CodeRate) -> Vec<T> {
    let pattern = rate.puncture_pattern();
    mother
        .iter()
        .zip(pattern.iter().cycle())
        .filter(|(_, &keep)| keep)
        .map(|(&v, _)| v)
        .collect()
}

/// Re-inserts punctured positions as zero LLRs.
pub fn depuncture(punctured: &[f64], rate: CodeRate, mother_len: usize) -> Result<Vec<f64>, TxError> {
    let expected = rate.punctured_len(mother_len);
    if punctured.len() != expected {
        return Err(TxError::Length {
            expected,
            got: punctured.len(),
        });
    }
    let pattern = rate.puncture_pattern();
    let mut it = punctured.iter();
    Ok((0..mother_len)
        .map(|i| {
            if pattern[i % pattern.len()] {
                *it.next().expect("length checked")
            } else {
                0.0
            }
        })
        .collect())
}

/// Fixed pseudo-random bit permutation that depends on the block length only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(INTERLEAVER_SEED ^ len as u64);
        perm.shuffle(&mut rng);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `out[i] = input[perm[i]]`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, input: &[T]) -> Result<Vec<T>, TxError> {
        self.check(input.len())?;
        Ok(self.perm.iter().map(|&p| input[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, input: &[T]) -> Result<Vec<T>, TxError> {
        self.check(input.len())?;
        let mut out = vec![T::default(); input.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = input[i];
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<(), TxError> {
        if len != self.perm.len() {
            return Err(TxError::Length {
                expected: self.perm.len(),
                got: len,
            });
        }
        Ok(())
    }
}

/// How one codeword fills a user's coded-bit capacity. Capacity beyond the
/// punctured codeword carries zero filler bits that the receiver discards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodewordLayout {
    pub rate: CodeRate,
    pub info_len: usize,
    pub mother_len: usize,
    pub punctured_len: usize,
    pub capacity: usize,
}

impl CodewordLayout {
    /// Largest codeword whose punctured length fits `capacity` bits.
    pub fn new(capacity: usize, rate: CodeRate) -> Self {
        // punctured length is monotone in the info length
        let fits = |k: usize| rate.punctured_len(2 * (k + TAIL_BITS)) <= capacity;
        let mut info_len = ((capacity as f64 * rate.as_f64()) as usize).saturating_sub(TAIL_BITS) + 2;
        while info_len > 0 && !fits(info_len) {
            info_len -= 1;
        }
        let mother_len = 2 * (info_len + TAIL_BITS);
        Self {
            rate,
            info_len,
            mother_len,
            punctured_len: rate.punctured_len(mother_len),
            capacity,
        }
    }

    /// info bits → channel bits (encode, puncture, pad, interleave).
    pub fn to_channel_bits(&self, info: &[u8], interleaver: &Interleaver) -> Result<Vec<u8>, TxError> {
        if info.len() != self.info_len {
            return Err(TxError::Length {
                expected: self.info_len,
                got: info.len(),
            });
        }
        let mut bits = CodeConfig::new(self.rate).encode(info)?;
        bits.resize(self.capacity, 0);
        interleaver.interleave(&bits)
    }

    /// Channel-ordered LLRs → mother-code LLRs (deinterleave, drop filler, depuncture).
    pub fn to_mother_llrs(&self, channel: &[f64], interleaver: &Interleaver) -> Result<Vec<f64>, TxError> {
        let deint = interleaver.deinterleave(channel)?;
        depuncture(&deint[..self.punctured_len], self.rate, self.mother_len)
    }

    /// Mother-code LLRs → channel-ordered LLRs; filler positions get zero.
    pub fn to_channel_llrs(&self, mother: &[f64], interleaver: &Interleaver) -> Result<Vec<f64>, TxError> {
        if mother.len() != self.mother_len {
            return Err(TxError::Length {
                expected: self.mother_len,
                got: mother.len(),
            });
        }
        let mut p = puncture(mother, self.rate);
        p.resize(self.capacity, 0.0);
        interleaver.interleave(&p)
    }
}

/// Gray-mapped square QAM with unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub modulation: Modulation,
    points: Vec<C64>,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let m = modulation.bits_per_symbol();
        let per_axis = m / 2;
        let norm = match modulation {
            Modulation::Qpsk => 2f64.sqrt(),
            Modulation::Qam16 => 10f64.sqrt(),
            Modulation::Qam64 => 42f64.sqrt(),
        };
        let pam = |bits: &[u8]| -> f64 {
            // (1−2b0)·(2^(n−1) − (1−2b1)·(2^(n−2) − ...))
            let sign = |b: u8| 1.0 - 2.0 * b as f64;
            let mut level = 1.0;
            for (i, &b) in bits.iter().enumerate().skip(1).rev() {
                level = (1u32 << (per_axis - i)) as f64 - sign(b) * level;
            }
            sign(bits[0]) * level
        };
        let points = (0..modulation.order())
            .map(|label| {
                let bits: Vec<u8> = (0..m).map(|i| ((label >> (m - 1 - i)) & 1) as u8).collect();
                let i_bits: Vec<u8> = bits.iter().step_by(2).copied().collect();
                let q_bits: Vec<u8> = bits.iter().skip(1).step_by(2).copied().collect();
                C64::new(pam(&i_bits), pam(&q_bits)) / norm
            })
            .collect();
        Self { modulation, points }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.modulation.bits_per_symbol()
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Points indexed by label; bit `i` of the label (MSB first) is the
    /// `i`-th bit of the symbol.
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> C64 {
        self.points[label]
    }

    #[inline]
    pub fn bit(&self, label: usize, i: usize) -> u8 {
        ((label >> (self.bits_per_symbol() - 1 - i)) & 1) as u8
    }

    pub fn label_of(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn map(&self, bits: &[u8]) -> Result<Vec<C64>, TxError> {
        let m = self.bits_per_symbol();
        if bits.len() % m != 0 {
            return Err(TxError::IndivisibleBits {
                len: bits.len(),
                bits_per_symbol: m,
            });
        }
        Ok(bits.chunks(m).map(|c| self.points[self.label_of(c)]).collect())
    }

    /// Nearest point label.
    pub fn slice(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

pub fn map_qam(bits: &[u8], modulation: Modulation) -> Result<Vec<C64>, TxError> {
    Constellation::new(modulation).map(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Data,
    Pilot { owner: usize },
    Null,
}

/// One user's slot of transmit symbols, indexed `[t * n_subcarriers + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub cells: Vec<C64>,
    pub kinds: Vec<CellKind>,
}

impl ResourceGrid {
    pub fn cell(&self, t: usize, f: usize) -> C64 {
        self.cells[t * self.n_subcarriers + f]
    }

    pub fn kind(&self, t: usize, f: usize) -> CellKind {
        self.kinds[t * self.n_subcarriers + f]
    }

    pub fn data_cells(&self) -> usize {
        self.kinds.iter().filter(|k| **k == CellKind::Data).count()
    }
}

/// Known QPSK pilot symbols of `user` on its comb, in pilot-symbol-major
/// then subcarrier order: a ChaCha8 stream seeded with a fixed constant
/// XOR the user index picks each label uniformly.
pub fn pilot_cells(
    user: usize,
    n_users: usize,
    pilots: &PilotConfig,
    n_subcarriers: usize,
) -> Vec<(usize, usize, C64)> {
    let qpsk = Constellation::new(Modulation::Qpsk);
    let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED ^ user as u64);
    let mut out = Vec::new();
    for &t in &pilots.symbol_indices {
        for f in pilots.comb(user, n_users, n_subcarriers) {
            out.push((t, f, qpsk.point(rng.gen_range(0..4))));
        }
    }
    out
}

/// Places pilots on `user`'s comb, zeros on other users' pilot cells, and
/// `symbols` on the data cells of `data_symbols` in time-major order.
pub fn build_grid(
    symbols: &[C64],
    pilots: &PilotConfig,
    user: usize,
    n_users: usize,
    n_symbols: usize,
    n_subcarriers: usize,
    data_symbols: &[usize],
) -> Result<ResourceGrid, TxError> {
    let expected = data_symbols.len() * n_subcarriers;
    if symbols.len() != expected {
        return Err(TxError::SymbolCount {
            expected,
            got: symbols.len(),
        });
    }
    let zero = C64::new(0.0, 0.0);
    let mut cells = vec![zero; n_symbols * n_subcarriers];
    let mut kinds = vec![CellKind::Null; n_symbols * n_subcarriers];
    for t in 0..n_symbols {
        if pilots.is_pilot_symbol(t) {
            for f in 0..n_subcarriers {
                kinds[t * n_subcarriers + f] = CellKind::Pilot {
                    owner: pilots.owner(f, n_users),
                };
            }
        }
    }
    for (t, f, p) in pilot_cells(user, n_users, pilots, n_subcarriers) {
        cells[t * n_subcarriers + f] = p;
    }
    let mut data = symbols.iter();
    for t in 0..n_symbols {
        if !data_symbols.contains(&t) {
            continue;
        }
        for f in 0..n_subcarriers {
            let idx = t * n_subcarriers + f;
            kinds[idx] = CellKind::Data;
            cells[idx] = *data.next().expect("count checked");
        }
    }
    Ok(ResourceGrid {
        n_symbols,
        n_subcarriers,
        cells,
        kinds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_in_zero_out() {
        let out = encode_mother(&[0; 20]);
        assert_eq!(out.len(), 2 * 26);
        assert!(out.iter().all(|&b| b == 0));
    }

    #[test]
    fn impulse_response() {
        // shift register by hand: 133 = 1011011, 171 = 1111001 read from the MSB
        let out = encode_mother(&[1, 0, 0, 0, 0, 0, 0]);
        let expect: [u8; 14] = [1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1];
        assert_eq!(&out[..14], &expect);
        assert!(out[14..].iter().all(|&b| b == 0));
    }

    #[test]
    fn punctured_rate() {
        for (rate, expected) in [(CodeRate::R1_2, 0.5), (CodeRate::R2_3, 2.0 / 3.0), (CodeRate::R3_4, 0.75)] {
            let info = vec![1u8; 6000];
            let out = CodeConfig::new(rate).encode(&info).unwrap();
            let r = info.len() as f64 / out.len() as f64;
            assert!((r - expected).abs() < 2e-3, "{rate:?} {r}");
        }
        assert_eq!(CodeConfig::new(CodeRate::R1_2).encode(&[]), Err(TxError::EmptyInfo));
    }

    #[test]
    fn depuncture_keeps_survivors() {
        let mother: Vec<f64> = (0..60).map(|i| i as f64 + 1.0).collect();
        for rate in [CodeRate::R1_2, CodeRate::R2_3, CodeRate::R3_4] {
            let p = puncture(&mother, rate);
            let d = depuncture(&p, rate, mother.len()).unwrap();
            for (a, b) in mother.iter().zip(&d) {
                assert!(*b == 0.0 || a == b);
            }
            assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), p.len());
        }
        assert!(depuncture(&[1.0; 3], CodeRate::R1_2, 60).is_err());
    }

    #[test]
    fn interleaver_golden_len8() {
        let il = Interleaver::new(8);
        assert_eq!(il.permutation(), &[4, 7, 2, 0, 5, 6, 1, 3]);
        assert_eq!(il, Interleaver::new(8));
        assert!(il.deinterleave(&[0u8; 7]).is_err());
    }

    #[test]
    fn qpsk_convention() {
        let c = Constellation::new(Modulation::Qpsk);
        let s = c.map(&[0, 0, 1, 0, 0, 1, 1, 1]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0] - C64::new(r, r)).norm() < 1e-15);
        assert!((s[1] - C64::new(-r, r)).norm() < 1e-15);
        assert!((s[2] - C64::new(r, -r)).norm() < 1e-15);
        assert!((s[3] - C64::new(-r, -r)).norm() < 1e-15);
        assert!(c.map(&[0, 1, 1]).is_err());
    }

    #[test]
    fn unit_energy_and_gray_neighbors() {
        for m in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            let c = Constellation::new(m);
            let e = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / c.order() as f64;
            assert!((e - 1.0).abs() < 1e-12);
            let mut dmin = f64::INFINITY;
            for a in 0..c.order() {
                for b in 0..a {
                    dmin = dmin.min((c.point(a) - c.point(b)).norm());
                }
            }
            let mut pairs = 0;
            for a in 0..c.order() {
                for b in 0..a {
                    if ((c.point(a) - c.point(b)).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((a ^ b).count_ones(), 1, "{m:?} {a} {b}");
                        pairs += 1;
                    }
                }
            }
            let side = (c.order() as f64).sqrt() as usize;
            assert_eq!(pairs, 2 * side * (side - 1));
        }
    }

    #[test]
    fn grid_layout() {
        let pilots = PilotConfig::default();
        let data: Vec<usize> = (0..14).filter(|t| !pilots.is_pilot_symbol(*t)).collect();
        let syms = vec![C64::new(1.0, 0.0); 576];
        let grids: Vec<_> = (0..4)
            .map(|u| build_grid(&syms, &pilots, u, 4, 14, 48, &data).unwrap())
            .collect();
        let own: Vec<usize> = (0..48).filter(|&f| grids[0].cell(2, f).norm() > 0.0).collect();
        assert_eq!(own.len(), 12);
        assert_eq!(own[..3], [0, 4, 8]);
        for t in [2, 11] {
            let nonzero: usize = grids
                .iter()
                .map(|g| (0..48).filter(|&f| g.cell(t, f).norm() > 0.0).count())
                .sum();
            assert_eq!(nonzero, 48);
        }
        assert_eq!(grids[0].data_cells(), 576);
        for g in &grids {
            for (c, k) in g.cells.iter().zip(&g.kinds) {
                if let CellKind::Pilot { .. } = k {
                    assert!(c.norm() == 0.0 || (c.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(build_grid(&syms[..10], &pilots, 0, 4, 14, 48, &data).is_err());
    }

    #[test]
    fn codeword_layout_fills_capacity() {
        let l = CodewordLayout::new(1152, CodeRate::R1_2);
        assert_eq!((l.info_len, l.punctured_len), (570, 1152));
        let l = CodewordLayout::new(1152, CodeRate::R2_3);
        assert_eq!((l.info_len, l.punctured_len), (762, 1152));
        let l = CodewordLayout::new(1152, CodeRate::R3_4);
        assert_eq!((l.info_len, l.punctured_len), (858, 1152));
        let l = CodewordLayout::new(1001, CodeRate::R3_4);
        assert!(l.punctured_len <= 1001);
        assert!(CodeRate::R3_4.punctured_len(2 * (l.info_len + 1 + TAIL_BITS)) > 1001);
    }

    #[test]
    fn channel_llr_mapping_round_trip() {
        let l = CodewordLayout::new(300, CodeRate::R2_3);
        let il = Interleaver::new(300);
        let mother: Vec<f64> = (0..l.mother_len).map(|i| (i as f64 * 0.37).sin()).collect();
        let ch = l.to_channel_llrs(&mother, &il).unwrap();
        let back = l.to_mother_llrs(&ch, &il).unwrap();
        let kept = CodeRate::R2_3.puncture_pattern();
        for (i, (a, b)) in mother.iter().zip(&back).enumerate() {
            if kept[i % kept.len()] {
                assert_eq!(a, b);
            } else {
                assert_eq!(*b, 0.0);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn interleaver_round_trip(bits in proptest::collection::vec(0u8..2, 1..500)) {
            let il = Interleaver::new(bits.len());
            let x = il.interleave(&bits).unwrap();
            proptest::prop_assert_eq!(il.deinterleave(&x).unwrap(), bits);
        }
    }
}
