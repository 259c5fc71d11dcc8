//! Synthetic stand-in corpus: harmonic "speech", a spoof class with a
//! resynthesis artifact, and noise inventories for training and evaluation.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{derive_seed, rng_from_seed, NoiseCategory};
use crate::data::{prepare_output_dir, write_manifest, write_protocol, Label, ManifestEntry, ProtocolEntry};
use crate::error::{Error, Result};
use crate::signal::{write_wav, Waveform};

pub const PROTOCOL_FILE: &str = "protocol.txt";
pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const DEV_MANIFEST: &str = "dev.tsv";
pub const EVAL_MANIFEST: &str = "eval.tsv";
pub const TRAIN_NOISE: &str = "noise_train.tsv";
pub const EVAL_NOISE: &str = "noise_eval.tsv";
pub const SPOOF_SYSTEM: &str = "S01";

const PEAK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    /// Utterances per class.
    pub n_per_class: usize,
    pub n_speakers: usize,
    pub sample_rate: u32,
    pub duration_range_s: [f64; 2],
    /// Share of the spoof signal taken from the phase-scrambled resynthesis.
    pub artifact_strength: f64,
    /// Resynthesis frame length of the spoof path.
    pub artifact_frame_ms: f64,
    /// Clips per noise category in each of the train and eval inventories.
    pub noise_clips_per_category: usize,
    pub noise_clip_s: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            n_speakers: 20,
            sample_rate: 16_000,
            duration_range_s: [0.9, 1.2],
            artifact_strength: 0.5,
            artifact_frame_ms: 20.0,
            noise_clips_per_category: 10,
            noise_clip_s: 3.0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.n_speakers < 10 {
            return Err(Error::config("fixture needs n_per_class > 0 and at least 10 speakers"));
        }
        let [lo, hi] = self.duration_range_s;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("bad duration range [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.artifact_strength) {
            return Err(Error::config("artifact_strength must lie in [0, 1]"));
        }
        if !(self.artifact_frame_ms >= 2.0) {
            return Err(Error::config("artifact_frame_ms must be at least 2"));
        }
        if self.noise_clips_per_category < 8 {
            return Err(Error::config("need at least 8 clips per noise category (babble uses up to 8 talkers)"));
        }
        if !(self.noise_clip_s > 0.0) || self.sample_rate < 8000 {
            return Err(Error::config("noise clips need a positive length and a sample rate of at least 8 kHz"));
        }
        Ok(())
    }
}

/// Voice parameters shared by all utterances of one synthetic speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    pub formants_hz: [f64; 3],
    pub bandwidths_hz: [f64; 3],
    pub tilt: f64,
}

impl SpeakerProfile {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            f0_hz: rng.random_range(95.0..240.0),
            formants_hz: [
                rng.random_range(450.0..850.0),
                rng.random_range(1000.0..2100.0),
                rng.random_range(2300.0..3200.0),
            ],
            bandwidths_hz: [
                rng.random_range(80.0..160.0),
                rng.random_range(100.0..220.0),
                rng.random_range(150.0..300.0),
            ],
            tilt: rng.random_range(0.5..0.9),
        }
    }

    fn envelope(&self, f: f64) -> f64 {
        let mut e = 0.15;
        for (i, (&fc, &bw)) in self.formants_hz.iter().zip(&self.bandwidths_hz).enumerate() {
            let g = [1.0, 0.7, 0.45][i];
            e += g * (-(f - fc).powi(2) / (2.0 * bw * bw)).exp();
        }
        e
    }
}

/// Per-utterance prosody drawn for a speaker.
struct Prosody {
    f0: Vec<f64>,
    amp: Vec<f64>,
}

fn draw_prosody<R: Rng + ?Sized>(p: &SpeakerProfile, n: usize, sr: f64, rng: &mut R) -> Prosody {
    let base = p.f0_hz * rng.random_range(0.9..1.1);
    let (va, vf, vp) = (rng.random_range(0.01..0.04), rng.random_range(4.0..7.0), rng.random_range(0.0..2.0 * PI));
    let (da, df, dp) = (rng.random_range(0.03..0.12), rng.random_range(0.3..1.2), rng.random_range(0.0..2.0 * PI));
    let mut f0 = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        f0.push(base * (1.0 + va * (2.0 * PI * vf * t + vp).sin() + da * (2.0 * PI * df * t + dp).sin()));
    }
    // Syllables: raised-cosine bumps separated by short pauses.
    let mut amp = vec![0.03f64; n];
    let mut pos = (rng.random_range(0.01..0.06) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.3) * sr) as usize;
        let level = rng.random_range(0.5..1.0);
        for k in 0..len.min(n - pos) {
            let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos();
            amp[pos + k] = amp[pos + k].max(level * w);
        }
        pos += len + (rng.random_range(0.02..0.08) * sr) as usize;
    }
    Prosody { f0, amp }
}

fn harmonic_count(f0_max: f64, sr: f64) -> usize {
    ((0.45 * sr / f0_max).floor() as usize).clamp(1, 60)
}

// Harmonic amplitudes change slowly; they are refreshed once per block.
const GAIN_BLOCK: usize = 32;

/// `table[b][k-1]`: amplitude of harmonic k in block b (zero above 0.45·sr).
fn gain_table(p: &SpeakerProfile, pr: &Prosody, sr: f64, k_max: usize) -> Vec<Vec<f64>> {
    let tilt: Vec<f64> = (1..=k_max).map(|k| (k as f64).powf(-p.tilt)).collect();
    (0..pr.f0.len().div_ceil(GAIN_BLOCK))
        .map(|b| {
            let f0 = pr.f0[b * GAIN_BLOCK];
            (1..=k_max)
                .map(|k| {
                    let f = k as f64 * f0;
                    if f < 0.45 * sr {
                        p.envelope(f) * tilt[k - 1]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn phase_track(pr: &Prosody, sr: f64) -> Vec<f64> {
    let mut acc = 0.0;
    pr.f0
        .iter()
        .map(|f| {
            acc = (acc + 2.0 * PI * f / sr) % (2.0 * PI);
            acc
        })
        .collect()
}

/// Σ_k g_k·sin(kθ + φ_k), stepping e^{ikθ} by complex multiplication.
fn harmonic_sum(theta: f64, gains: &[f64], phases: &[(f64, f64)]) -> f64 {
    let (c1, s1) = (theta.cos(), theta.sin());
    let (mut c, mut s) = (c1, s1);
    let mut acc = 0.0;
    for (g, (cp, sp)) in gains.iter().zip(phases) {
        if *g == 0.0 {
            break;
        }
        acc += g * (s * cp + c * sp);
        (c, s) = (c * c1 - s * s1, s * c1 + c * s1);
    }
    acc
}

fn draw_phases<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..k)
        .map(|_| {
            let ph: f64 = rng.random_range(0.0..2.0 * PI);
            (ph.cos(), ph.sin())
        })
        .collect()
}

/// Phase-continuous harmonic complex following the prosody contours.
fn render_coherent(pr: &Prosody, gains: &[Vec<f64>], theta: &[f64], phases: &[(f64, f64)]) -> Vec<f64> {
    (0..pr.f0.len())
        .map(|i| pr.amp[i] * harmonic_sum(theta[i], &gains[i / GAIN_BLOCK], phases))
        .collect()
}

/// The same complex rebuilt from short Hann-windowed frames, each with fresh
/// random harmonic phases, overlap-added at 50%. Phase jumps between frames
/// smear energy into the gaps between harmonics.
fn render_scrambled<R: Rng + ?Sized>(
    pr: &Prosody,
    gains: &[Vec<f64>],
    theta: &[f64],
    frame: usize,
    rng: &mut R,
) -> Vec<f64> {
    let n = pr.f0.len();
    let hop = (frame / 2).max(1);
    let k_max = gains.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    // Frame j covers samples [j·hop − hop, j·hop − hop + frame).
    let mut start = 0usize;
    while start < n + hop {
        let phases = draw_phases(k_max, rng);
        for j in 0..frame {
            let idx = match (start + j).checked_sub(hop) {
                Some(i) if i < n => i,
                _ => continue,
            };
            // periodic Hann sums to one at 50% overlap
            let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / frame as f64).cos();
            out[idx] += w * pr.amp[idx] * harmonic_sum(theta[idx], &gains[idx / GAIN_BLOCK], &phases);
        }
        start += hop;
    }
    out
}

fn normalise(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// One synthetic utterance. `artifact` is `Some((strength, frame_len))` for
/// the spoof class.
pub fn synth_utterance<R: Rng + ?Sized>(
    p: &SpeakerProfile,
    n: usize,
    sample_rate: u32,
    artifact: Option<(f64, usize)>,
    rng: &mut R,
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let pr = draw_prosody(p, n, sr, rng);
    let f0_max = pr.f0.iter().cloned().fold(0.0, f64::max);
    let k_max = harmonic_count(f0_max, sr);
    let gains = gain_table(p, &pr, sr, k_max);
    let theta = phase_track(&pr, sr);
    let phases = draw_phases(k_max, rng);
    let coherent = render_coherent(&pr, &gains, &theta, &phases);
    let mut x = match artifact {
        None => coherent,
        Some((strength, frame)) => {
            let scrambled = render_scrambled(&pr, &gains, &theta, frame, rng);
            coherent
                .iter()
                .zip(&scrambled)
                .map(|(c, s)| (1.0 - strength) * c + strength * s)
                .collect()
        }
    };
    // faint breath noise so silences are not digital zero
    for v in x.iter_mut() {
        *v += 2e-4 * rng.random_range(-1.0..1.0);
    }
    normalise(x, PEAK)
}

fn synth_music<R: Rng + ?Sized>(n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let root = rng.random_range(110.0..220.0);
    let scale = [0, 2, 3, 5, 7, 8, 10, 12, 14, 15];
    let mut out = vec![0.0; n];
    let mut pos = 0usize;
    let plucked = rng.random_bool(0.5);
    while pos < n {
        let len = (rng.random_range(0.15..0.5) * sr) as usize;
        let voices = rng.random_range(1..=3);
        for _ in 0..voices {
            let f = root * 2f64.powf(scale[rng.random_range(0..scale.len())] as f64 / 12.0);
            let decay = if plucked { rng.random_range(3.0..9.0) } else { 0.5 };
            for k in 0..len.min(n - pos) {
                let t = k as f64 / sr;
                let env = (-decay * t).exp() * (1.0 - (-t * 200.0).exp());
                let mut s = 0.0;
                for h in 1..=5 {
                    if h as f64 * f < 0.45 * sr {
                        s += (2.0 * PI * h as f64 * f * t).sin() / h as f64;
                    }
                }
                out[pos + k] += env * s;
            }
        }
        // soft percussive click on each note onset
        for k in 0..((0.01 * sr) as usize).min(n - pos) {
            out[pos + k] += 0.3 * rng.random_range(-1.0..1.0) * (-(k as f64) / (0.002 * sr)).exp();
        }
        pos += len;
    }
    normalise(out, PEAK)
}

fn synth_noise<R: Rng + ?Sized>(n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let kind = rng.random_range(0..4);
    let mut out = Vec::with_capacity(n);
    let (mut b0, mut b1, mut b2, mut brown, mut lp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let hum = rng.random_range(50.0..120.0);
    let am_f = rng.random_range(0.2..2.0);
    let cutoff = rng.random_range(0.05..0.3);
    for i in 0..n {
        let w: f64 = rng.random_range(-1.0..1.0);
        let v = match kind {
            0 => w,
            1 => {
                // pink (Kellet's economy filter)
                b0 = 0.99765 * b0 + w * 0.0990460;
                b1 = 0.96300 * b1 + w * 0.2965164;
                b2 = 0.57000 * b2 + w * 1.0526913;
                b0 + b1 + b2 + w * 0.1848
            }
            2 => {
                brown = 0.995 * brown + 0.1 * w;
                brown
            }
            _ => {
                // low-passed hiss with mains-like hum
                lp += cutoff * (w - lp);
                lp + 0.3 * (2.0 * PI * hum * i as f64 / sr).sin()
            }
        };
        let am = 1.0 + 0.3 * (2.0 * PI * am_f * i as f64 / sr).sin();
        out.push(v * am);
    }
    normalise(out, PEAK)
}

/// A clip of the given category, e.g. for babble sources or test noise.
pub fn synth_noise_clip<R: Rng + ?Sized>(category: NoiseCategory, n: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let sr = sample_rate as f64;
    match category {
        NoiseCategory::Speech => {
            let p = SpeakerProfile::random(rng);
            synth_utterance(&p, n, sample_rate, None, rng)
        }
        NoiseCategory::Music => synth_music(n, sr, rng),
        NoiseCategory::Noise => synth_noise(n, sr, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    /// Speaker-disjoint 60/20/20 partition.
    pub fn of_speaker(spk: usize) -> Split {
        match spk % 10 {
            0..=5 => Split::Train,
            6 | 7 => Split::Dev,
            _ => Split::Eval,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSummary {
    pub root: PathBuf,
    pub wavs: usize,
    pub train: usize,
    pub dev: usize,
    pub eval: usize,
    pub noise_clips: usize,
}

fn rng_for(seed: u64, stream: u64, idx: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(seed, stream, idx))
}

/// Writes the fixture corpus under `out_dir`.
pub fn make_fixture(spec: &FixtureSpec, seed: u64, out_dir: &Path, force: bool) -> Result<FixtureSummary> {
    spec.validate()?;
    prepare_output_dir(out_dir, force)?;
    let sr = spec.sample_rate;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut spk_rng = rng_for(seed, 1, 0);
    let speakers: Vec<SpeakerProfile> = (0..spec.n_speakers).map(|_| SpeakerProfile::random(&mut spk_rng)).collect();
    let frame = ((spec.artifact_frame_ms * 1e-3 * sr as f64).round() as usize).max(2);

    let mut protocol = Vec::with_capacity(2 * spec.n_per_class);
    let mut splits: [Vec<ManifestEntry>; 3] = Default::default();
    for (ci, label) in [Label::Bonafide, Label::Spoof].into_iter().enumerate() {
        for i in 0..spec.n_per_class {
            let spk = i % spec.n_speakers;
            let mut rng = rng_for(seed, 2 + ci as u64, i as u64);
            let [lo, hi] = spec.duration_range_s;
            let secs = if lo == hi { lo } else { rng.random_range(lo..hi) };
            let n = (secs * sr as f64).round() as usize;
            let artifact = (label == Label::Spoof).then_some((spec.artifact_strength, frame));
            let x = synth_utterance(&speakers[spk], n, sr, artifact, &mut rng);
            let tag = if label == Label::Bonafide { 'B' } else { 'S' };
            let utt = format!("FX_{tag}_{i:05}");
            let rel = PathBuf::from("wav").join(format!("{utt}.wav"));
            write_wav(out_dir.join(&rel), &Waveform::new(x, sr)?)?;
            protocol.push(ProtocolEntry {
                speaker_id: format!("SPK{spk:03}"),
                utt_id: utt.clone(),
                system_id: if label == Label::Bonafide { "-".into() } else { SPOOF_SYSTEM.into() },
                key: label,
            });
            let split = Split::of_speaker(spk) as usize;
            splits[split].push(ManifestEntry {
                utt_id: utt,
                path: rel,
                label,
            });
        }
    }
    write_protocol(out_dir.join(PROTOCOL_FILE), &protocol)?;
    for (entries, name) in splits.iter().zip([TRAIN_MANIFEST, DEV_MANIFEST, EVAL_MANIFEST]) {
        write_manifest(out_dir.join(name), entries)?;
    }

    let clip_len = (spec.noise_clip_s * sr as f64).round() as usize;
    let mut noise_clips = 0;
    for (si, (split, listing)) in [("train", TRAIN_NOISE), ("eval", EVAL_NOISE)].into_iter().enumerate() {
        let dir = out_dir.join("noise").join(split);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut text = String::new();
        for (ki, cat) in NoiseCategory::ALL.into_iter().enumerate() {
            for j in 0..spec.noise_clips_per_category {
                let mut rng = rng_for(seed, 10 + si as u64 * 8 + ki as u64, j as u64);
                let x = synth_noise_clip(cat, clip_len, sr, &mut rng);
                let id = format!("{split}_{}_{j:02}", cat.as_str());
                let rel = PathBuf::from("noise").join(split).join(format!("{id}.wav"));
                write_wav(out_dir.join(&rel), &Waveform::new(x, sr)?)?;
                writeln!(text, "{id}\t{}\t{}", cat.as_str(), rel.display()).unwrap();
                noise_clips += 1;
            }
        }
        let path = out_dir.join(listing);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(FixtureSummary {
        root: out_dir.to_path_buf(),
        wavs: protocol.len(),
        train: splits[0].len(),
        dev: splits[1].len(),
        eval: splits[2].len(),
        noise_clips,
    })
}
