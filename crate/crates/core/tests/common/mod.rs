#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustcm::nn::ParamStore;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, dtype: DType, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.checked as f64
    }
}

/// Central differences on `samples` random coordinates of the given
/// variables, compared against the autograd gradient of `loss`.
pub fn grad_check(
    vars: &[(String, Var)],
    loss: &dyn Fn() -> Tensor,
    samples: usize,
    eps: f64,
    tol: f64,
    seed: u64,
) -> GradCheck {
    let l = loss();
    let grads = l.backward().unwrap();
    let mut r = rng(seed);
    let sizes: Vec<usize> = vars.iter().map(|(_, v)| v.elem_count()).collect();
    let total: usize = sizes.iter().sum();
    let mut out = GradCheck { checked: 0, passed: 0, worst: 0.0 };
    for _ in 0..samples {
        let mut k = r.random_range(0..total);
        let mut vi = 0;
        while k >= sizes[vi] {
            k -= sizes[vi];
            vi += 1;
        }
        let (_, var) = &vars[vi];
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| to_f64(g)[k])
            .unwrap_or(0.0);
        let base = to_f64(var.as_tensor());
        let shape = var.dims().to_vec();
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[k] += delta;
            var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
            loss().to_scalar::<f64>().unwrap()
        };
        let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
        var.set(&Tensor::from_vec(base, shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
        let denom = analytic.abs().max(numeric.abs()).max(1e-7);
        let rel = (analytic - numeric).abs() / denom;
        out.checked += 1;
        if rel <= tol {
            out.passed += 1;
        }
        out.worst = out.worst.max(rel);
    }
    out
}

/// Trainable variables of a store, optionally with an extra input variable.
pub fn store_vars(store: &ParamStore) -> Vec<(String, Var)> {
    store.trainable()
}

/// Fixed random readout weights so that the checked scalar mixes every output.
pub fn readout(y: &Tensor, seed: u64) -> Tensor {
    let r = uniform_tensor(y.dims(), -1.0, 1.0, y.dtype(), seed);
    (y * r).unwrap().sum_all().unwrap()
}

/// Direct DFT of one windowed frame, bins 0..=nfft/2, as (re, im) pairs.
pub fn dft_frame(x: &[f64], window: &[f64], nfft: usize) -> Vec<(f64, f64)> {
    let tau = 2.0 * std::f64::consts::PI;
    (0..=nfft / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, (&s, &w)) in x.iter().zip(window).enumerate() {
                // reduce k·n mod nfft before scaling to keep the angle accurate
                let ang = -tau * ((k * n) % nfft) as f64 / nfft as f64;
                re += s * w * ang.cos();
                im += s * w * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Periodic windows written out from their textbook formulas.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Convolution as the textbook double sum over output indices.
pub fn conv_oracle(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len() + b.len() - 1;
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(b.len() - 1);
            let hi = k.min(a.len() - 1);
            (lo..=hi).map(|i| a[i] * b[k - i]).sum()
        })
        .collect()
}

/// EER by brute force: every candidate threshold (midpoints of adjacent
/// distinct scores, min − 1, max + 1) is scored by counting each trial,
/// then the first sign change of P_miss − P_fa is interpolated linearly.
pub fn eer_oracle(bona: &[f64], spoof: &[f64]) -> f64 {
    let mut all: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut thresholds = vec![all[0] - 1.0];
    for w in all.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(all[all.len() - 1] + 1.0);
    let point = |t: f64| {
        let fa = spoof.iter().filter(|&&s| s > t).count() as f64 / spoof.len() as f64;
        let miss = bona.iter().filter(|&&s| s <= t).count() as f64 / bona.len() as f64;
        (fa, miss)
    };
    let pts: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    if pts[0].1 >= pts[0].0 {
        return pts[0].0;
    }
    for j in 1..pts.len() {
        let (fa_b, miss_b) = pts[j];
        if miss_b >= fa_b {
            if miss_b == fa_b {
                return fa_b;
            }
            let (fa_a, miss_a) = pts[j - 1];
            let t = (fa_a - miss_a) / ((miss_b - miss_a) - (fa_b - fa_a));
            return fa_a + t * (fa_b - fa_a);
        }
    }
    unreachable!("P_miss = 1 and P_fa = 0 above the maximum score")
}

pub fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// SNR of a mixture re-measured against its clean source:
/// 10·log10(P_clean / P_(mix − clean)).
pub fn measured_snr_db(clean: &[f64], mix: &[f64]) -> f64 {
    let resid: Vec<f64> = mix.iter().zip(clean).map(|(m, c)| m - c).collect();
    10.0 * (mean_square(clean) / mean_square(&resid)).log10()
}

/// RT60 from an impulse response: backward-integrated energy in dB, a
/// least-squares line through the −5…−25 dB span, extrapolated to −60 dB.
pub fn t20_oracle(h: &[f64], sample_rate: u32) -> f64 {
    let mut tail = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        tail[i] = acc;
    }
    let db: Vec<f64> = tail.iter().map(|&e| 10.0 * (e / tail[0]).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= -5.0 && d >= -25.0)
        .map(|(i, &d)| (i as f64 / sample_rate as f64, d))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

/// Alternating bona fide / spoof utterances from the fixture synthesiser.
pub fn toy_utterances(n: usize, secs: f64, seed: u64) -> Vec<robustcm::data::Utterance> {
    use robustcm::data::{Label, Utterance};
    use robustcm::fixture::{synth_utterance, SpeakerProfile};
    let mut r = rng(seed);
    let len = (secs * 16000.0) as usize;
    (0..n)
        .map(|i| {
            let spk = SpeakerProfile::random(&mut r);
            let bona = i % 2 == 0;
            let artifact = if bona { None } else { Some((0.8, 320)) };
            let samples = synth_utterance(&spk, len, 16000, artifact, &mut r);
            Utterance {
                utt_id: format!("u{i:03}"),
                label: if bona { Label::Bonafide } else { Label::Spoof },
                waveform: robustcm::signal::Waveform::new(samples, 16000).unwrap(),
            }
        })
        .collect()
}

/// Two clips of each category, 1.5 s long.
pub fn toy_inventory(seed: u64) -> robustcm::augment::NoiseInventory {
    use robustcm::augment::{NoiseCategory, NoiseClip, NoiseInventory};
    let mut r = rng(seed);
    let mut clips = Vec::new();
    for cat in NoiseCategory::ALL {
        for j in 0..if cat == NoiseCategory::Speech { 8 } else { 2 } {
            let s = robustcm::fixture::synth_noise_clip(cat, 24000, 16000, &mut r);
            clips.push(NoiseClip {
                id: format!("{cat}_{j}"),
                category: cat,
                waveform: robustcm::signal::Waveform::new(s, 16000).unwrap(),
            });
        }
    }
    NoiseInventory::new(clips).unwrap()
}
