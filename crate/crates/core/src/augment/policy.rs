use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{babble_from, draw_offset, mix_at_offset, NoiseCategory, NoiseInventory};
use super::rir::{add_reverb_recorded, sample_room, simulate_rir, RoomSpec};
use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    Babble,
    Music,
    Noise,
}

impl NoiseType {
    pub const ALL: [NoiseType; 3] = [NoiseType::Babble, NoiseType::Music, NoiseType::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseType::Babble => "babble",
            NoiseType::Music => "music",
            NoiseType::Noise => "noise",
        }
    }

    /// Inventory category the corruption draws its clips from.
    pub fn source_category(self) -> NoiseCategory {
        match self {
            NoiseType::Babble => NoiseCategory::Speech,
            NoiseType::Music => NoiseCategory::Music,
            NoiseType::Noise => NoiseCategory::Noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    NoiseOnly,
    ReverbOnly,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseTypeProbs {
    pub babble: f64,
    pub music: f64,
    pub noise: f64,
}

impl Default for NoiseTypeProbs {
    fn default() -> Self {
        Self {
            babble: 1.0 / 3.0,
            music: 1.0 / 3.0,
            noise: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub p_augment: f64,
    pub noise_type_probs: NoiseTypeProbs,
    pub snr_range_db: [f64; 2],
    pub babble_k_range: [usize; 2],
    pub room_dims_min: [f64; 3],
    pub room_dims_max: [f64; 3],
    pub rt60_range_s: [f64; 2],
    pub mode: AugmentMode,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            p_augment: 0.7,
            noise_type_probs: NoiseTypeProbs::default(),
            snr_range_db: [0.0, 20.0],
            babble_k_range: [3, 8],
            room_dims_min: [3.0, 3.0, 2.5],
            room_dims_max: [10.0, 6.0, 4.0],
            rt60_range_s: [0.2, 1.0],
            mode: AugmentMode::Mixed,
        }
    }
}

impl AugmentationPolicy {
    pub fn noise_only() -> Self {
        Self {
            mode: AugmentMode::NoiseOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_augment) {
            return Err(Error::config(format!("p_augment {} outside [0, 1]", self.p_augment)));
        }
        let p = &self.noise_type_probs;
        if [p.babble, p.music, p.noise].iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::config("noise type probabilities must be non-negative"));
        }
        if ((p.babble + p.music + p.noise) - 1.0).abs() > 1e-9 {
            return Err(Error::config("noise type probabilities must sum to 1"));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!("snr range [{lo}, {hi}] is degenerate")));
        }
        let [klo, khi] = self.babble_k_range;
        if !(3 <= klo && klo <= khi && khi <= 8) {
            return Err(Error::config(format!("babble k range [{klo}, {khi}] must lie within [3, 8]")));
        }
        for axis in 0..3 {
            if !(0.3 < self.room_dims_min[axis] && self.room_dims_min[axis] <= self.room_dims_max[axis]) {
                return Err(Error::config("room dimension range is degenerate"));
            }
        }
        let [rlo, rhi] = self.rt60_range_s;
        if !(0.0 < rlo && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::config(format!("rt60 range [{rlo}, {rhi}] is degenerate")));
        }
        Ok(())
    }

    fn draw_noise_type<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseType {
        let u: f64 = rng.random();
        let p = &self.noise_type_probs;
        if u < p.babble {
            NoiseType::Babble
        } else if u < p.babble + p.music {
            NoiseType::Music
        } else {
            NoiseType::Noise
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    None,
    Noise {
        noise_type: NoiseType,
        /// One clip for music/noise, the k talkers for babble.
        clip_ids: Vec<String>,
        offsets: Vec<usize>,
        snr_db: f64,
    },
    Reverb {
        room: RoomSpec,
        rt60_s: f64,
    },
}

/// Everything needed to regenerate a corrupted utterance from its clean
/// source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub utt_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub corruption: Corruption,
    /// Factor applied by clipping protection (1 when the mix did not clip).
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl CorruptionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("corruption record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("bad corruption record: {e}")))
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream seed for `(global, a, b)`, e.g. (seed, worker, epoch)
/// or (seed, epoch, utterance).
pub fn derive_seed(global: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(global) ^ a) ^ b.rotate_left(17))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a corruption for `clean` without applying it.
pub fn draw_corruption<R: Rng + ?Sized>(
    utt_id: &str,
    clean_len: usize,
    policy: &AugmentationPolicy,
    inventory: &NoiseInventory,
    rng: &mut R,
) -> Result<Corruption> {
    if rng.random::<f64>() >= policy.p_augment {
        return Ok(Corruption::None);
    }
    let reverb = match policy.mode {
        AugmentMode::NoiseOnly => false,
        AugmentMode::ReverbOnly => true,
        AugmentMode::Mixed => rng.random_bool(0.5),
    };
    if reverb {
        let [lo, hi] = policy.rt60_range_s;
        let rt60 = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let room = sample_room(policy.room_dims_min, policy.room_dims_max, rt60, rng)?;
        return Ok(Corruption::Reverb { room, rt60_s: rt60 });
    }
    let noise_type = policy.draw_noise_type(rng);
    let [lo, hi] = policy.snr_range_db;
    let snr_db = rng.random_range(lo..hi);
    draw_noise(utt_id, clean_len, noise_type, snr_db, policy.babble_k_range, inventory, rng)
}

/// Picks clips and offsets for a noise corruption at a fixed SNR.
pub fn draw_noise<R: Rng + ?Sized>(
    utt_id: &str,
    clean_len: usize,
    noise_type: NoiseType,
    snr_db: f64,
    babble_k_range: [usize; 2],
    inventory: &NoiseInventory,
    rng: &mut R,
) -> Result<Corruption> {
    let pool = inventory.category(noise_type.source_category());
    if pool.is_empty() {
        return Err(Error::config(format!(
            "noise inventory has no `{}` clips (needed for {} on {utt_id})",
            noise_type.source_category(),
            noise_type.as_str()
        )));
    }
    let chosen: Vec<usize> = match noise_type {
        NoiseType::Babble => {
            let k = rng.random_range(babble_k_range[0]..=babble_k_range[1]);
            if pool.len() < k {
                return Err(Error::config(format!(
                    "babble with {k} talkers needs {k} speech clips, inventory has {}",
                    pool.len()
                )));
            }
            rand::seq::index::sample(rng, pool.len(), k).into_vec()
        }
        _ => vec![rng.random_range(0..pool.len())],
    };
    let offsets = chosen
        .iter()
        .map(|&i| draw_offset(pool[i].waveform.len(), clean_len, rng))
        .collect();
    Ok(Corruption::Noise {
        noise_type,
        clip_ids: chosen.iter().map(|&i| pool[i].id.clone()).collect(),
        offsets,
        snr_db,
    })
}

/// Applies a recorded corruption; returns the output and its clipping scale.
pub fn apply_corruption(clean: &Waveform, corruption: &Corruption, inventory: &NoiseInventory) -> Result<(Waveform, f64)> {
    match corruption {
        Corruption::None => Ok((clean.clone(), 1.0)),
        Corruption::Noise {
            noise_type,
            clip_ids,
            offsets,
            snr_db,
        } => {
            let clips = clip_ids
                .iter()
                .map(|id| {
                    inventory
                        .get(id)
                        .map(|c| &c.waveform)
                        .ok_or_else(|| Error::config(format!("noise clip `{id}` is not in the inventory")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (noise, offset) = match noise_type {
                NoiseType::Babble => {
                    let idx: Vec<usize> = (0..clips.len()).collect();
                    (babble_from(&clips, &idx, offsets, clean.len())?, 0)
                }
                _ => {
                    if clips.len() != 1 || offsets.len() != 1 {
                        return Err(Error::invalid("music/noise corruption uses exactly one clip"));
                    }
                    (clips[0].clone(), offsets[0])
                }
            };
            let (w, mix) = mix_at_offset(clean, &noise, *snr_db, offset)?;
            Ok((w, mix.scale))
        }
        Corruption::Reverb { room, .. } => {
            let rir = simulate_rir(room, clean.sample_rate())?;
            add_reverb_recorded(clean, &rir)
        }
    }
}

/// Regenerates the corrupted waveform described by `record`.
pub fn replay(clean: &Waveform, record: &CorruptionRecord, inventory: &NoiseInventory) -> Result<Waveform> {
    apply_corruption(clean, &record.corruption, inventory).map(|(w, _)| w)
}

/// One online augmentation draw using a stream seeded by `seed`.
pub fn augment_online(
    utt_id: &str,
    clean: &Waveform,
    policy: &AugmentationPolicy,
    inventory: &NoiseInventory,
    seed: u64,
) -> Result<(Waveform, CorruptionRecord)> {
    let mut rng = rng_from_seed(seed);
    let corruption = draw_corruption(utt_id, clean.len(), policy, inventory, &mut rng)?;
    let (w, scale) = apply_corruption(clean, &corruption, inventory)?;
    Ok((
        w,
        CorruptionRecord {
            utt_id: utt_id.to_string(),
            seed,
            corruption,
            scale,
        },
    ))
}
