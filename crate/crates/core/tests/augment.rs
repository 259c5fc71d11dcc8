mod common;

use proptest::prelude::*;
use rand::Rng;
use robustcm::augment::*;
use robustcm::signal::Waveform;

const SR: u32 = 16000;

fn random_wave(len: usize, amp: f64, seed: u64) -> Waveform {
    let mut r = common::rng(seed);
    Waveform::new((0..len).map(|_| r.random_range(-amp..amp)).collect(), SR).unwrap()
}

fn inventory(seed: u64) -> NoiseInventory {
    let mut clips = Vec::new();
    for (cat, n) in [(NoiseCategory::Speech, 10), (NoiseCategory::Music, 3), (NoiseCategory::Noise, 3)] {
        for j in 0..n {
            clips.push(NoiseClip {
                id: format!("{cat}_{j}"),
                category: cat,
                waveform: random_wave(8000 + 1000 * j, 0.3, seed * 100 + j as u64),
            });
        }
    }
    NoiseInventory::new(clips).unwrap()
}

/// SNR of a mix after undoing the clipping scale.
fn remeasure(clean: &Waveform, mixed: &Waveform, scale: f64) -> f64 {
    let unscaled: Vec<f64> = mixed.samples().iter().map(|v| v / scale).collect();
    common::measured_snr_db(clean.samples(), &unscaled)
}

#[test]
fn mixing_hits_the_requested_snr() {
    let mut r = common::rng(1);
    for i in 0..200 {
        let clean = random_wave(r.random_range(2000..6000), r.random_range(0.05..0.9), 1000 + i);
        let noise = random_wave(r.random_range(500..9000), r.random_range(0.01..1.0), 2000 + i);
        let snr = r.random_range(0.0..20.0);
        let (mixed, mix) = add_noise_recorded(&clean, &noise, snr, &mut r).unwrap();
        let got = remeasure(&clean, &mixed, mix.scale);
        assert!((got - snr).abs() <= 0.1, "case {i}: asked {snr}, got {got}");
    }
}

#[test]
fn gain_matches_closed_form() {
    let clean = random_wave(1000, 0.5, 3);
    let noise = random_wave(1000, 0.2, 4);
    let g = noise_gain(&clean, &noise, 10.0).unwrap();
    let pc = common::mean_square(clean.samples());
    let pn = common::mean_square(noise.samples());
    assert!((g - (pc / pn / 10.0).sqrt()).abs() < 1e-12);
}

#[test]
fn silent_noise_and_nonfinite_snr_are_rejected() {
    let clean = random_wave(100, 0.5, 5);
    let silent = Waveform::zeros(100, SR).unwrap();
    assert!(noise_gain(&clean, &silent, 5.0).is_err());
    assert!(noise_gain(&clean, &random_wave(100, 0.5, 6), f64::NAN).is_err());
}

#[test]
fn infinite_snr_returns_clean_signal() {
    let clean = random_wave(300, 0.5, 7);
    let (out, mix) = mix_at_offset(&clean, &random_wave(50, 0.5, 8), f64::INFINITY, 3).unwrap();
    assert_eq!(out.samples(), clean.samples());
    assert_eq!(mix.scale, 1.0);
}

#[test]
fn clipping_mix_is_renormalised() {
    let clean = random_wave(1000, 0.95, 9);
    let noise = random_wave(1000, 0.95, 10);
    let (out, mix) = mix_at_offset(&clean, &noise, 0.0, 0).unwrap();
    assert!(mix.scale < 1.0);
    assert!((out.peak() - RENORM_PEAK).abs() < 1e-12);
}

#[test]
fn mismatched_rates_are_rejected() {
    let clean = random_wave(100, 0.5, 11);
    let noise = Waveform::new(vec![0.1; 100], 8000).unwrap();
    assert!(mix_at_offset(&clean, &noise, 5.0, 0).is_err());
}

#[test]
fn babble_is_sum_of_distinct_offset_clips() {
    let speech: Vec<Waveform> = (0..6).map(|i| random_wave(700 + 50 * i, 0.3, 20 + i as u64)).collect();
    let refs: Vec<&Waveform> = speech.iter().collect();
    let mut r = common::rng(12);
    let b = make_babble(&refs, 4, 1000, &mut r).unwrap();
    let mut ids = b.clip_indices.clone();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4);
    for t in [0usize, 17, 999] {
        let want: f64 = b
            .clip_indices
            .iter()
            .zip(&b.offsets)
            .map(|(&i, &o)| speech[i].samples()[(o + t) % speech[i].len()])
            .sum();
        assert!((b.waveform.samples()[t] - want).abs() < 1e-12);
    }
}

#[test]
fn babble_talker_count_is_bounded() {
    let speech: Vec<Waveform> = (0..10).map(|i| random_wave(100, 0.3, i)).collect();
    let refs: Vec<&Waveform> = speech.iter().collect();
    let mut r = common::rng(13);
    assert!(make_babble(&refs, 2, 50, &mut r).is_err());
    assert!(make_babble(&refs, 9, 50, &mut r).is_err());
    assert!(make_babble(&refs[..4], 5, 50, &mut r).is_err());
}

#[test]
fn simulated_rt60_matches_target() {
    let mut r = common::rng(14);
    let mut ok = 0;
    let mut n = 0;
    for &rt in &TEST_RT60S {
        for _ in 0..3 {
            let room = sample_room(TEST_ROOM_MIN, TEST_ROOM_MAX, rt, &mut r).unwrap();
            let h = simulate_rir(&room, SR).unwrap();
            let est = common::t20_oracle(h.samples(), SR);
            n += 1;
            if (est / rt - 1.0).abs() <= 0.2 {
                ok += 1;
            }
        }
    }
    assert!(ok as f64 >= 0.9 * n as f64, "{ok}/{n} within 20%");
}

#[test]
fn library_rt60_estimate_agrees_with_oracle() {
    let mut r = common::rng(15);
    let room = sample_room([4.0, 4.0, 2.8], [6.0, 5.0, 3.0], 0.5, &mut r).unwrap();
    let h = simulate_rir(&room, SR).unwrap();
    let a = estimate_rt60(&h).unwrap();
    let b = common::t20_oracle(h.samples(), SR);
    assert!((a - b).abs() / b < 0.01, "library {a}, oracle {b}");
}

#[test]
fn direct_path_arrives_at_propagation_delay() {
    let room = RoomSpec::new([6.0, 5.0, 3.0], [1.0, 1.0, 1.5], [4.0, 3.0, 1.5], 0.3).unwrap();
    let h = simulate_rir(&room, SR).unwrap();
    let delay = room.source_mic_distance() / SPEED_OF_SOUND * SR as f64;
    let first = h.samples().iter().position(|v| v.abs() > 0.5).unwrap();
    assert!((first as f64 - delay).abs() <= 2.0, "first arrival {first}, delay {delay}");
}

#[test]
fn room_outside_walls_is_rejected() {
    assert!(RoomSpec::new([3.0, 3.0, 3.0], [3.5, 1.0, 1.0], [1.0, 1.0, 1.0], 0.5).is_err());
    assert!(RoomSpec::new([3.0, 3.0, 3.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 0.0).is_err());
}

#[test]
fn online_augmentation_replays_from_its_record() {
    let inv = inventory(1);
    let clean = random_wave(6000, 0.4, 16);
    let policy = AugmentationPolicy { p_augment: 1.0, ..Default::default() };
    let mut kinds = std::collections::HashSet::new();
    for s in 0..30 {
        let (a, rec) = augment_online("utt", &clean, &policy, &inv, s).unwrap();
        let (b, rec2) = augment_online("utt", &clean, &policy, &inv, s).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(rec, rec2);
        let parsed = CorruptionRecord::from_json(&rec.to_json()).unwrap();
        assert_eq!(parsed, rec);
        assert_eq!(replay(&clean, &parsed, &inv).unwrap().samples(), a.samples());
        kinds.insert(std::mem::discriminant(&rec.corruption));
    }
    assert_eq!(kinds.len(), 2, "mixed mode should draw both noise and reverb");
}

#[test]
fn zero_probability_never_corrupts() {
    let inv = inventory(2);
    let clean = random_wave(2000, 0.4, 17);
    let policy = AugmentationPolicy { p_augment: 0.0, ..Default::default() };
    for s in 0..10 {
        let (w, rec) = augment_online("u", &clean, &policy, &inv, s).unwrap();
        assert_eq!(rec.corruption, Corruption::None);
        assert_eq!(w.samples(), clean.samples());
    }
}

#[test]
fn noise_only_policy_never_reverberates() {
    let inv = inventory(3);
    let clean = random_wave(2000, 0.4, 18);
    let policy = AugmentationPolicy { p_augment: 1.0, ..AugmentationPolicy::noise_only() };
    for s in 0..20 {
        let (_, rec) = augment_online("u", &clean, &policy, &inv, s).unwrap();
        assert!(matches!(rec.corruption, Corruption::Noise { .. }));
    }
}

#[test]
fn invalid_policies_are_rejected() {
    let bad = [
        AugmentationPolicy { p_augment: 1.5, ..Default::default() },
        AugmentationPolicy { snr_range_db: [10.0, 5.0], ..Default::default() },
        AugmentationPolicy { babble_k_range: [2, 8], ..Default::default() },
        AugmentationPolicy {
            noise_type_probs: NoiseTypeProbs { babble: 0.5, music: 0.5, noise: 0.5 },
            ..Default::default()
        },
    ];
    for p in bad {
        assert!(p.validate().is_err(), "{p:?}");
    }
    assert!(AugmentationPolicy::default().validate().is_ok());
}

#[test]
fn inventories_reject_duplicates_and_detect_overlap() {
    let w = random_wave(10, 0.1, 19);
    let clip = |id: &str| NoiseClip { id: id.into(), category: NoiseCategory::Noise, waveform: w.clone() };
    assert!(NoiseInventory::new(vec![clip("a"), clip("a")]).is_err());
    let a = NoiseInventory::new(vec![clip("a"), clip("b")]).unwrap();
    let b = NoiseInventory::new(vec![clip("c")]).unwrap();
    let c = NoiseInventory::new(vec![clip("b")]).unwrap();
    assert!(a.ensure_disjoint(&b).is_ok());
    assert!(a.ensure_disjoint(&c).is_err());
}

#[test]
fn nineteen_standard_conditions() {
    let c = standard_conditions();
    assert_eq!(c.len(), TEST_SNRS_DB.len() * 3 + TEST_RT60S.len());
    let mut names: Vec<&str> = c.iter().map(|c| c.name.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 19);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snr_holds_at_every_offset(seed in 0u64..10_000, snr in 0.0f64..20.0, len in 100usize..3000, nlen in 10usize..4000) {
        let clean = random_wave(len, 0.5, seed);
        let noise = random_wave(nlen, 0.5, seed + 1);
        let mut r = common::rng(seed);
        let offset = draw_offset(nlen, len, &mut r);
        prop_assert!(offset < nlen);
        let (mixed, mix) = mix_at_offset(&clean, &noise, snr, offset).unwrap();
        prop_assert_eq!(mix.offset, offset);
        prop_assert!((remeasure(&clean, &mixed, mix.scale) - snr).abs() < 1e-6);
        prop_assert!(mixed.peak() <= 1.0);
    }

    #[test]
    fn derived_seeds_are_deterministic_and_spread(g in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assert_eq!(derive_seed(g, a, b), derive_seed(g, a, b));
        prop_assert_ne!(derive_seed(g, a, b), derive_seed(g, a, b + 1));
        prop_assert_ne!(derive_seed(g, a, b), derive_seed(g, a + 1, b));
    }
}
