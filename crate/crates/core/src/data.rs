//! Protocol files and utterance manifests.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{read_wav, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }

    /// 1 for bona fide, 0 for spoof.
    pub fn target(self) -> u32 {
        match self {
            Label::Bonafide => 1,
            Label::Spoof => 0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown key `{other}` (expected bonafide or spoof)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub speaker_id: String,
    pub utt_id: String,
    /// Attack tag, or "-" for bona fide.
    pub system_id: String,
    pub key: Label,
}

impl ProtocolEntry {
    pub fn to_line(&self) -> String {
        format!("{} {} - {} {}", self.speaker_id, self.utt_id, self.system_id, self.key)
    }
}

/// Parses `SPK UTT - SYS KEY` lines, preserving order.
pub fn parse_protocol_str(text: &str) -> Result<Vec<ProtocolEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let key = cols[4].parse().map_err(|detail| Error::Parse { line: lineno, detail })?;
        if !seen.insert(cols[1].to_string()) {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("duplicate utterance id `{}`", cols[1]),
            });
        }
        out.push(ProtocolEntry {
            speaker_id: cols[0].to_string(),
            utt_id: cols[1].to_string(),
            system_id: cols[3].to_string(),
            key,
        });
    }
    Ok(out)
}

pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<ProtocolEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_protocol_str(&text)
}

pub fn write_protocol(path: impl AsRef<Path>, entries: &[ProtocolEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_line());
        text.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One line of an utterance manifest: `utt_id<TAB>path<TAB>label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: PathBuf,
    pub label: Label,
}

/// Manifest entries with paths resolved against the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            entries: parse_manifest_str(&text)?,
            base_dir,
        })
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.base_dir.join(&e.path)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn parse_manifest_str(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("expected at least 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let label = cols[2].parse().map_err(|detail| Error::Parse { line: lineno, detail })?;
        if !seen.insert(cols[0].to_string()) {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("duplicate utterance id `{}`", cols[0]),
            });
        }
        out.push(ManifestEntry {
            utt_id: cols[0].to_string(),
            path: PathBuf::from(cols[1]),
            label,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!("{}\t{}\t{}\n", e.utt_id, e.path.display(), e.label));
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A labelled waveform held in memory.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub label: Label,
    pub waveform: Waveform,
}

/// Reads every WAV listed in `manifest`.
pub fn load_utterances(manifest: &Manifest) -> Result<Vec<Utterance>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(Utterance {
                utt_id: e.utt_id.clone(),
                label: e.label,
                waveform: read_wav(manifest.resolve(e))?,
            })
        })
        .collect()
}

/// Refuses to write into a non-empty directory unless `force` is set, then
/// makes sure it exists.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
