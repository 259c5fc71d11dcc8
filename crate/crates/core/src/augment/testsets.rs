//! Offline generation of the 15 additive-noise and 4 reverberation
//! evaluation conditions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::noise::NoiseInventory;
use super::policy::{apply_corruption, derive_seed, draw_noise, rng_from_seed, Corruption, CorruptionRecord, NoiseType};
use super::rir::{sample_room, simulate_rir};
use crate::data::{prepare_output_dir, Manifest};
use crate::error::{Error, Result};
use crate::signal::{read_wav, write_wav};

pub const TEST_SNRS_DB: [u32; 5] = [20, 15, 10, 5, 0];
pub const TEST_RT60S: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const TEST_ROOM_MIN: [f64; 3] = [10.0, 8.0, 2.8];
pub const TEST_ROOM_MAX: [f64; 3] = [15.0, 10.0, 4.0];
pub const CONDITION_MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionKind {
    Noise { noise_type: NoiseType, snr_db: u32 },
    Reverb { rt60_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestCondition {
    /// Directory / tag name, e.g. `music_10db` or `rt60_050`.
    pub name: String,
    pub kind: ConditionKind,
}

impl TestCondition {
    pub fn noise(noise_type: NoiseType, snr_db: u32) -> Self {
        Self {
            name: format!("{}_{}db", noise_type.as_str(), snr_db),
            kind: ConditionKind::Noise { noise_type, snr_db },
        }
    }

    pub fn reverb(rt60_s: f64) -> Self {
        Self {
            name: format!("rt60_{:03}", (rt60_s * 100.0).round() as u32),
            kind: ConditionKind::Reverb { rt60_s },
        }
    }

    /// Table row label, e.g. `Babble 20dB` or `RT60 0.25 s`.
    pub fn label(&self) -> String {
        match self.kind {
            ConditionKind::Noise { noise_type, snr_db } => {
                let t = noise_type.as_str();
                format!("{}{} {}dB", t[..1].to_uppercase(), &t[1..], snr_db)
            }
            ConditionKind::Reverb { rt60_s } => format!("RT60 {} s", rt60_s),
        }
    }
}

/// The 19 evaluation conditions in report order.
pub fn standard_conditions() -> Vec<TestCondition> {
    let mut out = Vec::with_capacity(19);
    for t in NoiseType::ALL {
        for snr in TEST_SNRS_DB {
            out.push(TestCondition::noise(t, snr));
        }
    }
    for rt in TEST_RT60S {
        out.push(TestCondition::reverb(rt));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TestSetSummary {
    pub conditions: Vec<(TestCondition, PathBuf)>,
    pub utterances: usize,
}

/// Raw little-endian f64 impulse response stored next to reverberated files.
pub fn write_rir(path: &Path, rir: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = rir.iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rir(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid(format!("{}: length is not a multiple of 8", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes one directory per standard condition, each with a corrupted WAV
/// per manifest utterance and a `manifest.tsv` of corruption records.
pub fn generate_test_sets(
    manifest: &Manifest,
    inventory: &NoiseInventory,
    out_dir: &Path,
    seed: u64,
    force: bool,
) -> Result<TestSetSummary> {
    if manifest.is_empty() {
        return Err(Error::config("evaluation manifest is empty"));
    }
    prepare_output_dir(out_dir, force)?;
    let clean = manifest
        .entries
        .iter()
        .map(|e| read_wav(manifest.resolve(e)))
        .collect::<Result<Vec<_>>>()?;

    let mut conditions = Vec::new();
    for (ci, cond) in standard_conditions().into_iter().enumerate() {
        let dir = out_dir.join(&cond.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut lines = String::new();
        for (ui, (entry, wav)) in manifest.entries.iter().zip(&clean).enumerate() {
            let utt_seed = derive_seed(seed, ci as u64, ui as u64);
            let mut rng = rng_from_seed(utt_seed);
            let corruption = match cond.kind {
                ConditionKind::Noise { noise_type, snr_db } => {
                    draw_noise(&entry.utt_id, wav.len(), noise_type, snr_db as f64, [3, 8], inventory, &mut rng)?
                }
                ConditionKind::Reverb { rt60_s } => {
                    let room = sample_room(TEST_ROOM_MIN, TEST_ROOM_MAX, rt60_s, &mut rng)?;
                    write_rir(&dir.join(format!("{}.rir", entry.utt_id)), simulate_rir(&room, wav.sample_rate())?.samples())?;
                    Corruption::Reverb { room, rt60_s }
                }
            };
            let (noisy, scale) = apply_corruption(wav, &corruption, inventory)?;
            let file = format!("{}.wav", entry.utt_id);
            write_wav(dir.join(&file), &noisy)?;
            let record = CorruptionRecord {
                utt_id: entry.utt_id.clone(),
                seed: utt_seed,
                corruption,
                scale,
            };
            writeln!(lines, "{}\t{}\t{}\t{}", entry.utt_id, file, entry.label, record.to_json()).unwrap();
        }
        let mpath = dir.join(CONDITION_MANIFEST);
        std::fs::write(&mpath, lines).map_err(|e| Error::io(&mpath, e))?;
        conditions.push((cond, dir));
    }
    Ok(TestSetSummary {
        conditions,
        utterances: manifest.len(),
    })
}

/// Reads the corruption records of a generated condition directory.
pub fn read_condition_records(dir: &Path) -> Result<Vec<(String, String, CorruptionRecord)>> {
    let path = dir.join(CONDITION_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(4, '\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                detail: "expected 4 tab-separated columns".into(),
            });
        }
        out.push((cols[0].to_string(), cols[1].to_string(), CorruptionRecord::from_json(cols[3])?));
    }
    Ok(out)
}
