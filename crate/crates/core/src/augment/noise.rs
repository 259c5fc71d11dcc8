use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{mean_square, read_wav, Waveform};

/// Peak level used when a mixture would otherwise clip.
pub const RENORM_PEAK: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCategory {
    /// Speech clips, the babble source.
    Speech,
    Music,
    #[serde(alias = "environmental")]
    Noise,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 3] = [NoiseCategory::Speech, NoiseCategory::Music, NoiseCategory::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCategory::Speech => "speech",
            NoiseCategory::Music => "music",
            NoiseCategory::Noise => "noise",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(NoiseCategory::Speech),
            "music" => Ok(NoiseCategory::Music),
            "noise" | "environmental" => Ok(NoiseCategory::Noise),
            other => Err(Error::invalid(format!("unknown noise category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseClip {
    pub id: String,
    pub category: NoiseCategory,
    pub waveform: Waveform,
}

impl NoiseClip {
    pub fn duration_secs(&self) -> f64 {
        self.waveform.duration_secs()
    }
}

/// Noise clips grouped by category.
#[derive(Debug, Clone, Default)]
pub struct NoiseInventory {
    clips: Vec<NoiseClip>,
}

impl NoiseInventory {
    pub fn new(clips: Vec<NoiseClip>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &clips {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("duplicate noise clip id `{}`", c.id)));
            }
        }
        Ok(Self { clips })
    }

    /// Reads a `clip_id<TAB>category<TAB>path` listing; relative paths are
    /// resolved against the listing's directory.
    pub fn load(listing: impl AsRef<Path>) -> Result<Self> {
        let listing = listing.as_ref();
        let text = std::fs::read_to_string(listing).map_err(|e| Error::io(listing, e))?;
        let base = listing.parent().unwrap_or(Path::new("."));
        let mut clips = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            let category = cols[1].parse().map_err(|e: Error| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
            clips.push(NoiseClip {
                id: cols[0].to_string(),
                category,
                waveform: read_wav(base.join(cols[2]))?,
            });
        }
        Self::new(clips)
    }

    pub fn clips(&self) -> &[NoiseClip] {
        &self.clips
    }

    pub fn category(&self, cat: NoiseCategory) -> Vec<&NoiseClip> {
        self.clips.iter().filter(|c| c.category == cat).collect()
    }

    pub fn get(&self, id: &str) -> Option<&NoiseClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    /// Fails if any clip id appears in both inventories.
    pub fn ensure_disjoint(&self, other: &NoiseInventory) -> Result<()> {
        let ids: HashSet<&str> = self.clips.iter().map(|c| c.id.as_str()).collect();
        let shared: Vec<&str> = other
            .clips
            .iter()
            .map(|c| c.id.as_str())
            .filter(|id| ids.contains(id))
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "training and evaluation noise inventories share clips: {}",
                shared.join(", ")
            )))
        }
    }
}

/// Gain `g` with `10·log10(P_clean / (g²·P_noise)) = snr_db`.
pub fn noise_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    gain_for(clean.samples(), noise.samples(), snr_db)
}

fn gain_for(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("snr must be finite, got {snr_db}")));
    }
    let pc = mean_square(clean);
    let pn = mean_square(noise);
    if pc <= 0.0 {
        return Err(Error::invalid("clean signal is silent"));
    }
    if pn <= 0.0 {
        return Err(Error::invalid("noise signal is silent"));
    }
    Ok((pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Realized parameters of one additive mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMix {
    pub offset: usize,
    pub gain: f64,
    /// Factor applied to the whole mixture to avoid clipping (1 if none).
    pub scale: f64,
}

/// Random start offset into a noise clip: a crop position when the clip is
/// longer than `len`, a loop phase otherwise.
pub fn draw_offset<R: Rng + ?Sized>(noise_len: usize, len: usize, rng: &mut R) -> usize {
    if noise_len > len {
        rng.random_range(0..=noise_len - len)
    } else {
        rng.random_range(0..noise_len)
    }
}

/// `clean + g·noise[offset..]` with the gain measured on the segment
/// actually used; `snr_db = +∞` returns the clean signal untouched.
pub fn mix_at_offset(clean: &Waveform, noise: &Waveform, snr_db: f64, offset: usize) -> Result<(Waveform, NoiseMix)> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rates differ: clean {} Hz, noise {} Hz",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), NoiseMix { offset, gain: 0.0, scale: 1.0 }));
    }
    let segment = noise.looped_segment(offset, clean.len());
    let gain = gain_for(clean.samples(), &segment, snr_db)?;
    let mixed: Vec<f64> = clean.samples().iter().zip(&segment).map(|(s, n)| s + gain * n).collect();
    let (mixed, scale) = renormalize(mixed);
    Ok((clean.with_samples(mixed)?, NoiseMix { offset, gain, scale }))
}

pub fn add_noise<R: Rng + ?Sized>(clean: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    add_noise_recorded(clean, noise, snr_db, rng).map(|(w, _)| w)
}

pub fn add_noise_recorded<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform, NoiseMix)> {
    let offset = draw_offset(noise.len(), clean.len(), rng);
    mix_at_offset(clean, noise, snr_db, offset)
}

/// Scales to [`RENORM_PEAK`] when any sample exceeds full scale.
pub(crate) fn renormalize(mut x: Vec<f64>) -> (Vec<f64>, f64) {
    let peak = x.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        let scale = RENORM_PEAK / peak;
        for s in &mut x {
            *s *= scale;
        }
        (x, scale)
    } else {
        (x, 1.0)
    }
}

pub const BABBLE_K_MIN: usize = 3;
pub const BABBLE_K_MAX: usize = 8;

/// A babble mixture and the clips that went into it.
#[derive(Debug, Clone)]
pub struct Babble {
    pub waveform: Waveform,
    pub clip_indices: Vec<usize>,
    pub offsets: Vec<usize>,
}

/// Sum of `k` distinct speech clips, each looped or cropped to `len`.
pub fn make_babble<R: Rng + ?Sized>(speech: &[&Waveform], k: usize, len: usize, rng: &mut R) -> Result<Babble> {
    if !(BABBLE_K_MIN..=BABBLE_K_MAX).contains(&k) {
        return Err(Error::invalid(format!(
            "babble needs between {BABBLE_K_MIN} and {BABBLE_K_MAX} talkers, got {k}"
        )));
    }
    if speech.len() < k {
        return Err(Error::invalid(format!(
            "babble with {k} talkers needs at least {k} speech clips, inventory has {}",
            speech.len()
        )));
    }
    let clip_indices = rand::seq::index::sample(rng, speech.len(), k).into_vec();
    let offsets: Vec<usize> = clip_indices.iter().map(|&i| draw_offset(speech[i].len(), len, rng)).collect();
    let waveform = babble_from(speech, &clip_indices, &offsets, len)?;
    Ok(Babble { waveform, clip_indices, offsets })
}

/// Deterministic babble reconstruction from recorded clip choices.
pub fn babble_from(speech: &[&Waveform], indices: &[usize], offsets: &[usize], len: usize) -> Result<Waveform> {
    if indices.len() != offsets.len() || indices.is_empty() {
        return Err(Error::invalid("babble needs one offset per clip"));
    }
    let rate = speech[indices[0]].sample_rate();
    let mut out = vec![0.0; len];
    for (&i, &off) in indices.iter().zip(offsets) {
        let clip = speech
            .get(i)
            .ok_or_else(|| Error::invalid(format!("babble clip index {i} out of range")))?;
        if clip.sample_rate() != rate {
            return Err(Error::invalid("babble clips have different sample rates"));
        }
        for (o, s) in out.iter_mut().zip(clip.looped_segment(off, len)) {
            *o += s;
        }
    }
    Waveform::new(out, rate)
}
