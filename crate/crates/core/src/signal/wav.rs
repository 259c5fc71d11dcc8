//! 16-bit PCM mono RIFF/WAVE reading and writing.
//!
//! Only the canonical layout is accepted: `fmt ` with format tag 1, one
//! channel, 16 bits per sample. Anything else is rejected with the name of
//! the offending header field rather than converted.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;
const FULL_SCALE: f64 = 32768.0;

fn format_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        field,
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav_bytes(&bytes)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(format_err("riff", format!("file is {} bytes, too short for a RIFF header", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(format_err("riff", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_err("wave", "missing WAVE form type"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                format_err(
                    "chunk_size",
                    format!("chunk `{}` overruns the file", String::from_utf8_lossy(id)),
                )
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format_err("fmt", "fmt chunk shorter than 16 bytes"));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {}
        }
        // chunks are word aligned
        off = body_end + (size & 1);
    }

    let (format_tag, channels, sample_rate, bits) =
        fmt.ok_or_else(|| format_err("fmt", "no fmt chunk"))?;
    if format_tag != PCM_FORMAT {
        return Err(format_err("audio_format", format!("expected PCM (1), found {format_tag}")));
    }
    if channels != 1 {
        return Err(format_err("channels", format!("expected mono, found {channels} channels")));
    }
    if bits != 16 {
        return Err(format_err("bits_per_sample", format!("expected 16, found {bits}")));
    }
    if sample_rate == 0 {
        return Err(format_err("sample_rate", "sample rate is zero"));
    }
    let data = data.ok_or_else(|| format_err("data", "no data chunk"))?;
    if data.len() < 2 {
        return Err(format_err("data", "data chunk holds no samples"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / FULL_SCALE)
        .collect();
    Waveform::new(samples, sample_rate)
}

fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav_bytes(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// Writes 16-bit PCM. Samples outside [-1, 1) saturate.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_wav_bytes(w)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_with(channels: u16, bits: u16, rate: u32) -> Vec<u8> {
        let w = Waveform::new(vec![0.25, -0.5, 0.125, 0.0], rate).unwrap();
        let mut b = write_wav_bytes(&w);
        b[22..24].copy_from_slice(&channels.to_le_bytes());
        b[34..36].copy_from_slice(&bits.to_le_bytes());
        b
    }

    #[test]
    fn round_trip_within_one_step() {
        let samples: Vec<f64> = (0..500).map(|i| ((i * 7919) % 2000) as f64 / 1000.0 - 1.0).collect();
        let w = Waveform::new(samples, 16000).unwrap();
        let back = read_wav_bytes(&write_wav_bytes(&w)).unwrap();
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(read_wav_bytes(&[]), Err(Error::Format { field: "riff", .. })));
    }

    #[test]
    fn sample_rate_passes_through() {
        let b = header_with(1, 16, 8000);
        assert_eq!(read_wav_bytes(&b).unwrap().sample_rate(), 8000);
    }

    #[test]
    fn stereo_and_bit_depth_rejected_by_field() {
        assert!(matches!(
            read_wav_bytes(&header_with(2, 16, 16000)),
            Err(Error::Format { field: "channels", .. })
        ));
        assert!(matches!(
            read_wav_bytes(&header_with(1, 24, 16000)),
            Err(Error::Format { field: "bits_per_sample", .. })
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::new(vec![0.5; 10], 16000).unwrap();
        let b = write_wav_bytes(&w);
        let mut with_list = b[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&b[36..]);
        let back = read_wav_bytes(&with_list).unwrap();
        assert_eq!(back.len(), 10);
    }
}
