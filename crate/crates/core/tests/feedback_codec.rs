use std::collections::BTreeSet;

use goalsim::feedback_codec::{
    bounds, empirical_fa, encode, rank_subset, sweep, unrank_subset, AckSet, FeedbackDecoder, FeedbackScheme,
    SweepConfig, DEFAULT_K_MAX, DEFAULT_POPULATION,
};
use goalsim::simkernel::RngStream;
use num_bigint::BigUint;
use proptest::prelude::*;

const N: u64 = DEFAULT_POPULATION;

// log2 C(n, k) from Stirling's series for ln n!
fn stirling_log2_binomial(n: f64, k: f64) -> f64 {
    let ln_fact = |x: f64| {
        if x < 1.0 {
            0.0
        } else {
            x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        }
    };
    (ln_fact(n) - ln_fact(k) - ln_fact(n - k)) / std::f64::consts::LN_2
}

fn random_set(k: usize, seed: u64) -> AckSet {
    AckSet::random(N, DEFAULT_K_MAX, k, &mut RngStream::new(seed, "set")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn rank_and_unrank_are_inverse(ids in prop::collection::btree_set(0u64..N, 0..40)) {
        let ids: Vec<u64> = ids.into_iter().collect();
        let r = rank_subset(&ids);
        prop_assert_eq!(unrank_subset(&r, ids.len(), N).unwrap(), ids);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoded_length_matches_the_formula(k in 0usize..400, seed in 0u64..1000) {
        let ack = random_set(k, seed);
        for scheme in [
            FeedbackScheme::Concat,
            FeedbackScheme::Enumerative,
            FeedbackScheme::HashSig { eps: 1e-2 },
            FeedbackScheme::Bloom { eps: 1e-2 },
        ] {
            let fb = encode(&scheme, &ack, seed).unwrap();
            prop_assert_eq!(fb.len_bits(), scheme.payload_bits(N, k).unwrap());
        }
    }

    #[test]
    fn small_population_subsets_round_trip(ids in prop::collection::btree_set(0u64..64, 0..64)) {
        let ids: Vec<u64> = ids.into_iter().collect();
        let r = rank_subset(&ids);
        prop_assert_eq!(unrank_subset(&r, ids.len(), 64).unwrap(), ids);
    }
}

#[test]
fn large_sets_round_trip_through_the_enumerative_codec() {
    for (k, seed) in [(500, 1), (1000, 2)] {
        let ack = random_set(k, seed);
        let fb = encode(&FeedbackScheme::Enumerative, &ack, 0).unwrap();
        let dec = FeedbackDecoder::new(&FeedbackScheme::Enumerative, &fb, DEFAULT_K_MAX, k, 0).unwrap();
        assert!(matches!(dec, FeedbackDecoder::Exact(ref ids) if ids == ack.ids()));
    }
}

#[test]
fn errorfree_length_agrees_with_stirling() {
    let b = bounds(N, 500, 1e-2).unwrap().errorfree;
    let est = stirling_log2_binomial(N as f64, 500.0);
    assert!((b as f64 - est).abs() <= 10.0, "{b} vs {est}");
    assert!((b as f64 - 1.223e4).abs() < 10.0);
}

#[test]
fn errorfree_is_shorter_than_concatenation() {
    // C(N, k) built incrementally as an independent big-integer oracle
    let mut c = BigUint::from(1u32);
    for k in 1..=1000u64 {
        c = c * (N - k + 1) / k;
        let exact_bits = if k == 0 { 0 } else { (&c - 1u32).bits() as usize };
        let b = bounds(N, k as usize, 1e-2).unwrap();
        assert_eq!(b.errorfree, exact_bits, "k={k}");
        if k >= 2 {
            assert!(b.errorfree < b.concat, "k={k}");
        }
    }
}

#[test]
fn no_acknowledged_user_is_ever_missed() {
    let schemes = [
        FeedbackScheme::Concat,
        FeedbackScheme::Enumerative,
        FeedbackScheme::HashSig { eps: 1e-2 },
        FeedbackScheme::Bloom { eps: 1e-2 },
        FeedbackScheme::HashSig { eps: 1e-4 },
        FeedbackScheme::Bloom { eps: 1e-4 },
    ];
    let mut probes = 0;
    for (s, scheme) in schemes.iter().enumerate() {
        for rep in 0..40u64 {
            let ack = random_set(420, 100 * s as u64 + rep);
            let fb = encode(scheme, &ack, rep).unwrap();
            let dec = FeedbackDecoder::new(scheme, &fb, DEFAULT_K_MAX, ack.len(), rep).unwrap();
            for &id in ack.ids() {
                assert!(dec.contains(id));
                probes += 1;
            }
        }
    }
    assert!(probes >= 100_000);
}

#[test]
fn exact_schemes_have_no_false_alarms() {
    for scheme in [FeedbackScheme::Concat, FeedbackScheme::Enumerative] {
        let fa = empirical_fa(&scheme, N, 100, 2, 5000, &RngStream::new(1, "fa")).unwrap();
        assert_eq!(fa.false_alarms, 0);
    }
}

#[test]
fn bloom_false_alarms_match_the_design_rate() {
    let eps = 1e-2;
    let fa = empirical_fa(&FeedbackScheme::Bloom { eps }, N, 500, 1000, 1000, &RngStream::new(3, "bloom")).unwrap();
    assert_eq!(fa.probes, 1_000_000);
    let rate = fa.rate();
    assert!((0.5 * eps..=1.25 * eps).contains(&rate), "{rate}");
    let (lo, hi) = fa.wilson(3.29);
    assert!(lo <= eps && eps <= hi, "{lo} {hi}");
}

#[test]
fn single_bloom_filter_tracks_its_fill() {
    // given the fill fraction f, a non-member passes with probability f^k
    let eps = 1e-2;
    let scheme = FeedbackScheme::Bloom { eps };
    let ack = random_set(500, 9);
    let fb = encode(&scheme, &ack, 4).unwrap();
    let dec = FeedbackDecoder::new(&scheme, &fb, DEFAULT_K_MAX, 500, 4).unwrap();
    let p = dec.fill().unwrap().powi(7);
    let mut rng = RngStream::new(9, "probe");
    let (mut hits, mut n) = (0u64, 0u64);
    while n < 1_000_000 {
        let id = rng.below(N);
        if ack.contains(id) {
            continue;
        }
        n += 1;
        hits += dec.contains(id) as u64;
    }
    let rate = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((rate - p).abs() < 4.0 * se, "{rate} vs {p}");
}

#[test]
fn xor_fingerprints_meet_their_rate() {
    let eps = 1e-2;
    let fa = empirical_fa(&FeedbackScheme::HashSig { eps }, N, 300, 20, 20_000, &RngStream::new(5, "x")).unwrap();
    // seven-bit fingerprints give 2^-7
    let p = 2f64.powi(-7);
    let se = (p * (1.0 - p) / fa.probes as f64).sqrt();
    assert!((fa.rate() - p).abs() < 4.0 * se);
    assert!(fa.rate() <= eps);
}

fn sweep_rows() -> Vec<goalsim::feedback_codec::SweepRow> {
    let cfg = SweepConfig {
        population: N,
        k_values: SweepConfig::range(20, 500, 20).unwrap(),
        eps: vec![1e-2, 1e-4],
        sets: 1,
        probes_per_set: 1000,
        seed: 11,
    };
    sweep(&cfg).unwrap()
}

#[test]
fn sweep_reproduces_the_curve_ordering() {
    let rows = sweep_rows();
    let get = |k: usize, name: &str| rows.iter().find(|r| r.k == k && r.scheme == name).unwrap().b_bits;
    let names: BTreeSet<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
    for name in &names {
        assert_eq!(rows.iter().filter(|r| r.scheme == *name).count(), 25);
    }
    for k in (20..=500).step_by(20) {
        assert_eq!(get(k, "concat"), 32 * k);
        assert!(get(k, "fa_bound:0.01") < get(k, "fa_bound:0.0001"));
        assert!(get(k, "fa_bound:0.0001") < get(k, "enumerative"));
        assert!(get(k, "enumerative") < get(k, "concat"));
    }
    for name in ["concat", "enumerative", "fa_bound:0.01", "fa_bound:0.0001"] {
        let col: Vec<usize> = (20..=500).step_by(20).map(|k| get(k, name)).collect();
        assert!(col.windows(2).all(|w| w[0] < w[1]), "{name}");
    }
}

#[test]
fn sweep_is_deterministic() {
    assert_eq!(sweep_rows(), sweep_rows());
}
