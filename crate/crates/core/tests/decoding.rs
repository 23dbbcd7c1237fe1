mod common;

use common::cn;
use overload_sim::config::{CodeRate, CsiMode, Modulation};
use overload_sim::decoder::{bcjr_decode, idd_decode, DataObservations, UserCode};
use overload_sim::detect::{clip_llrs, ComplexityCounters, SphereDetector};
use overload_sim::oracle::codeword_map;
use overload_sim::sim::run_point;
use overload_sim::tx::{CodewordLayout, Constellation, Interleaver, TAIL_BITS};
use overload_sim::{validate, DetectorKind, McsConfig, SimConfig, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Slot {
    y: Vec<C64>,
    h: Vec<C64>,
    bits: Vec<Vec<u8>>,
    layouts: Vec<CodewordLayout>,
    interleavers: Vec<Interleaver>,
}

/// `k` users sharing `n_re` single-antenna resource elements.
fn slot(rng: &mut ChaCha8Rng, k: usize, n_re: usize, rate: CodeRate, c: &Constellation, sigma2: f64) -> Slot {
    let m = c.bits_per_symbol();
    let layouts: Vec<CodewordLayout> = (0..k).map(|_| CodewordLayout::new(n_re * m, rate)).collect();
    let interleavers: Vec<Interleaver> = (0..k).map(|_| Interleaver::new(n_re * m)).collect();
    let mut symbols = Vec::new();
    let mut bits = Vec::new();
    for u in 0..k {
        let b: Vec<u8> = (0..layouts[u].info_len).map(|_| rng.gen_range(0..2u8)).collect();
        symbols.push(c.map(&layouts[u].to_channel_bits(&b, &interleavers[u]).unwrap()).unwrap());
        bits.push(b);
    }
    let h: Vec<C64> = (0..n_re * k).map(|_| cn(rng)).collect();
    let y = (0..n_re)
        .map(|re| (0..k).map(|u| h[re * k + u] * symbols[u][re]).sum::<C64>() + cn(rng) * sigma2.sqrt())
        .collect();
    Slot { y, h, bits, layouts, interleavers }
}

#[test]
fn one_iteration_equals_detect_then_decode() {
    let c = Constellation::new(Modulation::Qpsk);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (k, rate) in [(2, CodeRate::R1_2), (3, CodeRate::R2_3), (4, CodeRate::R3_4)] {
        let n_re = 96;
        let sigma2 = 0.2;
        let s = slot(&mut rng, k, n_re, rate, &c, sigma2);
        let codes: Vec<UserCode> =
            s.layouts.iter().zip(&s.interleavers).map(|(l, i)| UserCode { layout: l, interleaver: i }).collect();
        let obs = DataObservations { y: &s.y, h: &s.h, n_rx: 1, noise_var: sigma2 };
        let mut det = SphereDetector::new(k, c.clone(), None);
        let idd = idd_decode(&obs, &codes, &mut det, 1, 16.0, &mut ComplexityCounters::default()).unwrap();

        let mut plain = SphereDetector::new(k, c.clone(), None).with_clip(16.0);
        let mut llr = vec![Vec::new(); k];
        for re in 0..n_re {
            let out = plain
                .detect(&s.y[re..re + 1], &s.h[re * k..(re + 1) * k], sigma2, None, &mut ComplexityCounters::default())
                .unwrap();
            for (u, l) in llr.iter_mut().enumerate() {
                l.extend_from_slice(&out.llr.0[u * 2..u * 2 + 2]);
            }
        }
        for u in 0..k {
            clip_llrs(&mut llr[u], 16.0);
            let mother = s.layouts[u].to_mother_llrs(&llr[u], &s.interleavers[u]).unwrap();
            let dec = bcjr_decode(&mother, None, Some(16.0)).unwrap();
            assert_eq!(dec, idd.users[u]);
            assert_eq!(idd.hard_per_iteration[0][u], dec.hard_bits);
        }
    }
}

#[test]
fn noise_free_idd_decodes_at_first_iteration() {
    let c = Constellation::new(Modulation::Qpsk);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = slot(&mut rng, 4, 240, CodeRate::R1_2, &c, 1e-8);
    let codes: Vec<UserCode> =
        s.layouts.iter().zip(&s.interleavers).map(|(l, i)| UserCode { layout: l, interleaver: i }).collect();
    let obs = DataObservations { y: &s.y, h: &s.h, n_rx: 1, noise_var: 1e-8 };
    let mut det = SphereDetector::new(4, c, None);
    let out = idd_decode(&obs, &codes, &mut det, 3, 16.0, &mut ComplexityCounters::default()).unwrap();
    for it in &out.hard_per_iteration {
        assert_eq!(it, &s.bits);
    }
}

#[test]
fn bcjr_negation_checked_against_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut symmetric, mut total) = (0, 0);
    for trial in 0..100 {
        let k = 1 + trial % 10;
        let coded: Vec<f64> = (0..2 * (k + TAIL_BITS)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let neg: Vec<f64> = coded.iter().map(|l| -l).collect();
        let a = bcjr_decode(&coded, None, None).unwrap();
        let b = bcjr_decode(&neg, None, None).unwrap();
        let (oa, _) = codeword_map(&coded, k);
        let (ob, _) = codeword_map(&neg, k);
        for j in 0..k {
            assert!((a.info_llr[j] - oa[j]).abs() < 1e-9);
            assert!((b.info_llr[j] - ob[j]).abs() < 1e-9);
            symmetric += (a.hard_bits[j] != b.hard_bits[j]) as usize;
            total += 1;
        }
    }
    // zero-tail termination is not closed under complement, so only a
    // fraction of decisions flip
    println!("complemented decisions: {symmetric}/{total}");
    assert!(symmetric < total);
}

/// Mean BLER per IDD iteration must not rise by more than 0.5 % from one
/// iteration to the next.
#[test]
fn idd_bler_is_nearly_monotone() {
    let cfg = validate(SimConfig {
        n_users: 4,
        detector: DetectorKind::Idd,
        csi: CsiMode::Genie,
        n_drops: 2000,
        master_seed: 7,
        ..SimConfig::default()
    })
    .unwrap();
    let rec = run_point(&cfg, 4.0, McsConfig::new(Modulation::Qpsk, CodeRate::R1_2)).unwrap();
    println!("BLER per iteration: {:?}", rec.bler_per_iteration);
    assert_eq!(rec.bler_per_iteration.len(), 3);
    for w in rec.bler_per_iteration.windows(2) {
        assert!(w[1] <= w[0] + 0.005, "{:?}", rec.bler_per_iteration);
    }
}
