use ndarray::{Array2, Axis};

use super::stft::{stft, StftParams};
use super::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters `[n_mels × bins]`, equally spaced on the mel scale
/// from 0 Hz to Nyquist, unit peak height.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Log-mel filterbank matrix `[frames × n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankFeatures {
    pub values: Array2<f64>,
    pub params: StftParams,
    pub log_floor: f64,
}

impl FbankFeatures {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Total linear mel energy of each frame.
    pub fn frame_energy(&self) -> Vec<f64> {
        self.values
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v.exp()).sum())
            .collect()
    }
}

pub fn fbank(w: &Waveform, n_mels: usize, p: &StftParams) -> Result<FbankFeatures> {
    fbank_with_floor(w, n_mels, p, DEFAULT_LOG_FLOOR)
}

pub fn fbank_with_floor(
    w: &Waveform,
    n_mels: usize,
    p: &StftParams,
    log_floor: f64,
) -> Result<FbankFeatures> {
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be positive"));
    }
    if !(log_floor > 0.0) {
        return Err(Error::invalid("log floor must be positive"));
    }
    let spec = stft(w, p)?;
    let nfft = p.fft_length(w.sample_rate())?;
    let fb = mel_filterbank(n_mels, nfft, w.sample_rate());
    let mel = spec.power().dot(&fb.t());
    Ok(FbankFeatures {
        values: mel.mapv(|e| (e + log_floor).ln()),
        params: *p,
        log_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn every_filter_has_support() {
        let fb = mel_filterbank(80, 1024, 16000);
        for row in fb.axis_iter(Axis(0)) {
            assert!(row.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_mels_rejected() {
        let w = Waveform::zeros(2048, 16000).unwrap();
        assert!(fbank(&w, 0, &StftParams::default()).is_err());
    }
}
