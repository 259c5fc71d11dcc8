use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let tau = 2.0 * std::f64::consts::PI;
        (0..n)
            .map(|i| {
                let phase = tau * i as f64 / n as f64;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Framing parameters. Lengths are given in milliseconds and resolved
/// against the waveform's sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window_kind: WindowKind,
    /// Explicit FFT length; defaults to the window length rounded up to a
    /// power of two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_ms: 64.0,
            hop_ms: 8.0,
            window_kind: WindowKind::Hamming,
            fft_size: None,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::invalid("window and hop must be positive"));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::invalid("hop must not exceed the window length"));
        }
        Ok(())
    }

    pub fn win_length(&self, sample_rate: u32) -> usize {
        ((self.window_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn hop_length(&self, sample_rate: u32) -> usize {
        ((self.hop_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn fft_length(&self, sample_rate: u32) -> Result<usize> {
        let win = self.win_length(sample_rate);
        match self.fft_size {
            Some(n) if n < win => Err(Error::invalid(format!(
                "fft size {n} is shorter than the {win}-sample window"
            ))),
            Some(n) => Ok(n),
            None => Ok(win.next_power_of_two()),
        }
    }

    /// Frames produced for `len` samples (no padding, trailing partial
    /// frame dropped).
    pub fn num_frames(&self, len: usize, sample_rate: u32) -> usize {
        let win = self.win_length(sample_rate);
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop_length(sample_rate)
        }
    }
}

/// Magnitude/phase decomposition, `[frames × bins]`, bins = fft/2 + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub magnitude: Array2<f64>,
    pub phase: Array2<f64>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.magnitude.nrows()
    }

    pub fn bins(&self) -> usize {
        self.magnitude.ncols()
    }

    pub fn power(&self) -> Array2<f64> {
        self.magnitude.mapv(|m| m * m)
    }
}

pub fn stft(w: &Waveform, p: &StftParams) -> Result<ComplexSpectrogram> {
    p.validate()?;
    let sr = w.sample_rate();
    let win = p.win_length(sr);
    let hop = p.hop_length(sr);
    let nfft = p.fft_length(sr)?;
    if w.len() < win {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            w.len()
        )));
    }
    let frames = p.num_frames(w.len(), sr);
    let bins = nfft / 2 + 1;
    let window = p.window_kind.coefficients(win);
    let fft = FftPlanner::new().plan_fft_forward(nfft);

    let mut magnitude = Array2::zeros((frames, bins));
    let mut phase = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let x = w.samples();
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex64::new(x[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..bins {
            magnitude[[f, k]] = buf[k].norm();
            phase[[f, k]] = buf[k].arg();
        }
    }
    Ok(ComplexSpectrogram {
        magnitude,
        phase,
        params: *p,
        sample_rate: sr,
    })
}

/// Weighted overlap-add inverse (least-squares frame combination), so an
/// unmodified spectrogram reconstructs the covered samples exactly.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    if s.magnitude.dim() != s.phase.dim() {
        return Err(Error::invalid(format!(
            "magnitude {:?} and phase {:?} shapes differ",
            s.magnitude.dim(),
            s.phase.dim()
        )));
    }
    let sr = s.sample_rate;
    let win = s.params.win_length(sr);
    let hop = s.params.hop_length(sr);
    let nfft = s.params.fft_length(sr)?;
    let bins = nfft / 2 + 1;
    if s.bins() != bins {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, parameters imply {bins}",
            s.bins()
        )));
    }
    let frames = s.frames();
    if frames == 0 {
        return Err(Error::invalid("spectrogram has no frames"));
    }
    let len = (frames - 1) * hop + win;
    let window = s.params.window_kind.coefficients(win);
    let ifft = FftPlanner::new().plan_fft_inverse(nfft);

    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for f in 0..frames {
        for k in 0..bins {
            let c = Complex64::from_polar(s.magnitude[[f, k]], s.phase[[f, k]]);
            buf[k] = c;
            if k > 0 && k < nfft - k {
                buf[nfft - k] = c.conj();
            }
        }
        ifft.process(&mut buf);
        let start = f * hop;
        for i in 0..win {
            let sample = buf[i].re / nfft as f64;
            out[start + i] += sample * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-12 {
            *o /= n;
        } else {
            *o = 0.0;
        }
    }
    Waveform::new(out, sr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize, sr: u32) -> Waveform {
        let s = (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn default_frame_geometry() {
        let p = StftParams::default();
        assert_eq!(p.win_length(16000), 1024);
        assert_eq!(p.hop_length(16000), 128);
        assert_eq!(p.fft_length(16000).unwrap(), 1024);
        assert_eq!(p.num_frames(16000, 16000), 118);
    }

    #[test]
    fn too_short_is_rejected() {
        let w = Waveform::zeros(1000, 16000).unwrap();
        assert!(matches!(stft(&w, &StftParams::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bin_center_sine_peaks_at_its_bin() {
        let sr = 16000;
        let bin = 37;
        let w = tone(bin as f64 * sr as f64 / 1024.0, 4096, sr);
        let s = stft(&w, &StftParams::default()).unwrap();
        for f in 0..s.frames() {
            let row = s.magnitude.row(f);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, bin);
        }
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let p = StftParams::default();
        let s = ComplexSpectrogram {
            magnitude: Array2::zeros((5, 513)),
            phase: Array2::zeros((5, 513)),
            params: p,
            sample_rate: 16000,
        };
        let w = istft(&s).unwrap();
        assert_eq!(w.len(), 4 * 128 + 1024);
        assert!(w.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = ComplexSpectrogram {
            magnitude: Array2::zeros((5, 513)),
            phase: Array2::zeros((4, 513)),
            params: StftParams::default(),
            sample_rate: 16000,
        };
        assert!(istft(&s).is_err());
    }
}
