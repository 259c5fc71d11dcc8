//! Corrupted-audio production: additive noise at a target SNR, babble,
//! image-source room impulse responses, the online augmentation policy and
//! offline test-set generation.

mod noise;
mod policy;
mod rir;
mod testsets;

pub use noise::{
    add_noise, add_noise_recorded, babble_from, draw_offset, make_babble, mix_at_offset, noise_gain, Babble,
    NoiseCategory, NoiseClip, NoiseInventory, NoiseMix, BABBLE_K_MAX, BABBLE_K_MIN, RENORM_PEAK,
};
pub use policy::{
    apply_corruption, augment_online, derive_seed, draw_corruption, draw_noise, replay, rng_from_seed, AugmentMode,
    AugmentationPolicy, Corruption, CorruptionRecord, NoiseType, NoiseTypeProbs,
};
pub use rir::{
    add_reverb, add_reverb_recorded, estimate_rt60, eyring_absorption, solve_absorption, required_image_order, sample_room,
    schroeder_curve, simulate_rir, RoomSpec, SPEED_OF_SOUND, WALL_CLEARANCE,
};
pub use testsets::{
    generate_test_sets, read_condition_records, read_rir, standard_conditions, write_rir, ConditionKind,
    TestCondition, TestSetSummary, CONDITION_MANIFEST, TEST_ROOM_MAX, TEST_ROOM_MIN, TEST_RT60S, TEST_SNRS_DB,
};
