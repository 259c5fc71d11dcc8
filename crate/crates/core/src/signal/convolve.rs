use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};

/// Full linear convolution of two sample sequences via FFT,
/// length `a.len() + b.len() - 1`.
pub fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    // short kernels are cheaper to do directly
    if a.len().min(b.len()) <= 32 {
        return direct_convolve(a, b);
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Reference double-loop convolution.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &h) in b.iter().enumerate() {
            out[i + j] += x * h;
        }
    }
    out
}

/// Convolution truncated to the signal's length.
pub fn convolve(signal: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if signal.sample_rate() != rir.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rates differ: signal {} Hz, rir {} Hz",
            signal.sample_rate(),
            rir.sample_rate()
        )));
    }
    let mut y = convolve_full(signal.samples(), rir.samples());
    y.truncate(signal.len());
    signal.with_samples(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_impulse_is_identity() {
        let s = Waveform::new((0..300).map(|i| (i as f64 * 0.37).sin()).collect(), 16000).unwrap();
        let h = Waveform::new(vec![1.0], 16000).unwrap();
        assert_eq!(convolve(&s, &h).unwrap(), s);
    }

    #[test]
    fn fft_path_matches_direct() {
        let a: Vec<f64> = (0..500).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let b: Vec<f64> = (0..90).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let f = convolve_full(&a, &b);
        let d = direct_convolve(&a, &b);
        for (x, y) in f.iter().zip(&d) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rate_mismatch_rejected() {
        let s = Waveform::zeros(10, 16000).unwrap();
        let h = Waveform::zeros(3, 8000).unwrap();
        assert!(convolve(&s, &h).is_err());
    }
}
