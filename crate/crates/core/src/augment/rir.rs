//! Shoebox room impulse responses by the image-source method, plus
//! Schroeder-integration RT60 measurement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::renormalize;
use crate::error::{Error, Result};
use crate::signal::{convolve, Waveform};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Minimum clearance between a source/microphone and any wall, meters.
pub const WALL_CLEARANCE: f64 = 0.1;
/// Sabine constant 24·ln(10)/c.
const SABINE: f64 = 24.0 * std::f64::consts::LN_10 / SPEED_OF_SOUND;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    pub rt60_target: f64,
    pub max_image_order: u32,
}

impl RoomSpec {
    /// Builds a spec whose image order is just deep enough for the tail to
    /// reach −60 dB.
    pub fn new(dims: [f64; 3], source_pos: [f64; 3], mic_pos: [f64; 3], rt60_target: f64) -> Result<Self> {
        let spec = Self {
            dims,
            source_pos,
            mic_pos,
            rt60_target,
            max_image_order: required_image_order(dims, rt60_target),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rt60_target > 0.0 && self.rt60_target.is_finite()) {
            return Err(Error::invalid(format!("rt60 must be positive, got {}", self.rt60_target)));
        }
        for axis in 0..3 {
            let l = self.dims[axis];
            if !(l > 2.0 * WALL_CLEARANCE && l.is_finite()) {
                return Err(Error::invalid(format!("room dimension {axis} is {l} m")));
            }
            for (what, p) in [("source", self.source_pos), ("mic", self.mic_pos)] {
                if !(p[axis] >= WALL_CLEARANCE && p[axis] <= l - WALL_CLEARANCE) {
                    return Err(Error::invalid(format!(
                        "{what} coordinate {axis} = {} m is not at least {WALL_CLEARANCE} m inside the room",
                        p[axis]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn source_mic_distance(&self) -> f64 {
        dist(self.source_pos, self.mic_pos)
    }

    /// Uniform wall absorption that gives this room's image-source energy
    /// decay the target RT60 (see [`solve_absorption`]).
    pub fn absorption(&self, sample_rate: u32) -> f64 {
        solve_absorption(self, sample_rate)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// α with `rt60 = 24 ln10 V / (−c S ln(1−α))`.
pub fn eyring_absorption(volume: f64, surface: f64, rt60: f64) -> f64 {
    (1.0 - (-SABINE * volume / (surface * rt60)).exp()).clamp(0.0, 1.0)
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let md = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

/// Image order per axis needed to cover `rt60` seconds of propagation.
pub fn required_image_order(dims: [f64; 3], rt60: f64) -> u32 {
    let reach = SPEED_OF_SOUND * rt60.max(0.0);
    let smallest = dims.iter().cloned().fold(f64::INFINITY, f64::min);
    ((reach / smallest).ceil() as u32).saturating_add(1)
}

/// Draws a room uniformly inside `[dims_min, dims_max]` with source and mic
/// uniformly placed away from the walls.
pub fn sample_room<R: Rng + ?Sized>(dims_min: [f64; 3], dims_max: [f64; 3], rt60: f64, rng: &mut R) -> Result<RoomSpec> {
    let mut dims = [0.0; 3];
    for axis in 0..3 {
        let (lo, hi) = (dims_min[axis], dims_max[axis]);
        if !(lo <= hi) {
            return Err(Error::invalid(format!("room range on axis {axis} is empty")));
        }
        dims[axis] = if lo == hi { lo } else { rng.random_range(lo..hi) };
    }
    let place = |rng: &mut R| {
        let mut p = [0.0; 3];
        for axis in 0..3 {
            p[axis] = rng.random_range(WALL_CLEARANCE..dims[axis] - WALL_CLEARANCE);
        }
        p
    };
    let source = place(rng);
    let mic = place(rng);
    RoomSpec::new(dims, source, mic, rt60)
}

/// Time span covered by a simulated response: direct path plus `rt60`.
fn response_span(spec: &RoomSpec, fs: f64) -> (f64, usize) {
    let t_end = spec.source_mic_distance() / SPEED_OF_SOUND + spec.rt60_target;
    (SPEED_OF_SOUND * t_end, (t_end * fs).ceil() as usize + 1)
}

/// Calls `f(distance, reflections)` for every image source within `reach`
/// meters of the microphone, bounded by `max_image_order`.
fn for_each_image(spec: &RoomSpec, reach: f64, mut f: impl FnMut(f64, u32)) {
    let order = spec.max_image_order as i64;
    // Per-axis image offsets: for lattice index n and parity q the image
    // coordinate is 2nL + (1 − 2q)s and the path meets |2n − q| walls.
    let axis_images = |l: f64, s: f64, m: f64| -> Vec<(f64, u32)> {
        let mut v = Vec::new();
        for n in -order..=order {
            for q in 0..2i64 {
                let img = 2.0 * n as f64 * l + if q == 0 { s } else { -s };
                let d = img - m;
                if d.abs() <= reach {
                    v.push((d * d, (2 * n - q).unsigned_abs() as u32));
                }
            }
        }
        v
    };
    let xs = axis_images(spec.dims[0], spec.source_pos[0], spec.mic_pos[0]);
    let ys = axis_images(spec.dims[1], spec.source_pos[1], spec.mic_pos[1]);
    let zs = axis_images(spec.dims[2], spec.source_pos[2], spec.mic_pos[2]);
    let reach2 = reach * reach;
    for &(dx2, rx) in &xs {
        for &(dy2, ry) in &ys {
            let dxy2 = dx2 + dy2;
            if dxy2 > reach2 {
                continue;
            }
            for &(dz2, rz) in &zs {
                let d2 = dxy2 + dz2;
                if d2 <= reach2 {
                    f(d2.sqrt(), rx + ry + rz);
                }
            }
        }
    }
}

/// Absorption whose image-source energy decay has the target RT60.
///
/// Image energies are histogrammed by arrival time and reflection count
/// once; the incoherent Schroeder curve for a candidate reflection
/// coefficient `q = 1 − α` is then built from `Σ_n H[t][n]·q^n`, and `q` is
/// bisected until its T20 matches. Eyring's closed form assumes a perfectly
/// diffuse field and overstates the decay rate of a specular shoebox
/// (grazing paths dominate the tail), so it is only the fallback when the
/// response is too short to fit.
pub fn solve_absorption(spec: &RoomSpec, sample_rate: u32) -> f64 {
    let eyring = eyring_absorption(spec.volume(), spec.surface(), spec.rt60_target);
    let fs = sample_rate as f64;
    let (reach, len) = response_span(spec, fs);
    // 1 ms bins are fine enough for a T20 fit and keep the table small
    let bin = (fs / 1000.0).max(1.0);
    let n_bins = (len as f64 / bin).ceil() as usize + 1;
    let min_dist = SPEED_OF_SOUND / fs;
    let mut hist: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut max_refl = 0usize;
    for_each_image(spec, reach, |d, refl| {
        let b = ((d / SPEED_OF_SOUND * fs) / bin) as usize;
        if b < n_bins {
            let row = &mut hist[b];
            let r = refl as usize;
            if row.len() <= r {
                row.resize(r + 1, 0.0);
            }
            row[r] += 1.0 / d.max(min_dist).powi(2);
            max_refl = max_refl.max(r);
        }
    });
    let first = match hist.iter().position(|row| !row.is_empty()) {
        Some(b) => b,
        None => return eyring,
    };
    let bin_secs = bin / fs;

    // T20 of the incoherent curve; a curve that falls through the fit range
    // within three bins counts as instantaneous, one that never gets there
    // as endless.
    let t20 = |q: f64| -> f64 {
        let mut pow = vec![1.0; max_refl + 1];
        for r in 1..=max_refl {
            pow[r] = pow[r - 1] * q;
        }
        let energy: Vec<f64> = hist[first..]
            .iter()
            .map(|row| row.iter().zip(&pow).map(|(h, p)| h * p).sum())
            .collect();
        let mut edc = vec![0.0; energy.len()];
        let mut acc = 0.0;
        for i in (0..energy.len()).rev() {
            acc += energy[i];
            edc[i] = acc;
        }
        let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / edc[0]).log10()).collect();
        if !db.iter().any(|&d| d <= FIT_END_DB) {
            return f64::INFINITY;
        }
        let points: Vec<(f64, f64)> = db
            .iter()
            .enumerate()
            .map(|(i, &d)| (i as f64 * bin_secs, d))
            .skip_while(|p| p.1 > FIT_START_DB)
            .take_while(|p| p.1 > FIT_END_DB)
            .collect();
        if points.len() < 3 {
            0.0
        } else {
            -60.0 / fit_slope(&points)
        }
    };

    // RT60 grows with q; bisect a = −ln q on a log scale.
    let rt_at = |log_a: f64| t20((-log_a.exp()).exp());
    let alpha_of = |log_a: f64| 1.0 - (-log_a.exp()).exp();
    let target = spec.rt60_target;
    let (mut lo, mut hi) = (1e-6f64.ln(), 20f64.ln());
    if rt_at(lo) <= target {
        return 0.0;
    }
    if rt_at(hi) >= target {
        return alpha_of(hi);
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if rt_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    alpha_of(0.5 * (lo + hi))
}

/// Image-source RIR, normalized so the direct path has unit amplitude and
/// long enough for the tail to decay by 60 dB.
pub fn simulate_rir(spec: &RoomSpec, sample_rate: u32) -> Result<Waveform> {
    spec.validate()?;
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let fs = sample_rate as f64;
    let beta = (1.0 - spec.absorption(sample_rate)).sqrt();
    // distances below one sample of travel are treated as coincident
    let min_dist = SPEED_OF_SOUND / fs;
    let direct = spec.source_mic_distance().max(min_dist);
    let (reach, len) = response_span(spec, fs);
    let log_beta = beta.ln();

    let mut h = vec![0.0; len];
    for_each_image(spec, reach, |d, refl| {
        let attenuation = match refl {
            0 => 1.0,
            _ if beta == 0.0 => return,
            r => (log_beta * r as f64).exp(),
        };
        let idx = (d / SPEED_OF_SOUND * fs).round() as usize;
        if idx < len {
            h[idx] += attenuation * direct / d.max(min_dist);
        }
    });
    highpass_in_place(&mut h, fs);
    Waveform::new(h, sample_rate)
}

/// Second-order 100 Hz high-pass of Allen and Berkley. Every image arrives
/// with positive sign, so without it the dense tail piles up a DC offset
/// that lengthens the measured decay.
fn highpass_in_place(h: &mut [f64], fs: f64) {
    let w = 2.0 * std::f64::consts::PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y1, mut y2) = (0.0, 0.0);
    for x in h.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *x;
        *x = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

/// Level (dB) points that bound the linear fit of the decay curve.
const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -25.0;
const MIN_FIT_SAMPLES: usize = 10;

/// Normalized Schroeder backward-integrated energy curve in dB, starting
/// at the response peak.
pub fn schroeder_curve(rir: &[f64]) -> Vec<f64> {
    let peak = rir
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
        .0;
    let tail = &rir[peak..];
    let mut energy = vec![0.0; tail.len()];
    let mut acc = 0.0;
    for i in (0..tail.len()).rev() {
        acc += tail[i] * tail[i];
        energy[i] = acc;
    }
    let total = energy.first().copied().unwrap_or(0.0);
    energy
        .iter()
        .map(|&e| if total > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY })
        .collect()
}

/// T20 estimate: least-squares line through the −5…−25 dB part of the
/// Schroeder curve, extrapolated to −60 dB.
pub fn estimate_rt60(rir: &Waveform) -> Result<f64> {
    if rir.peak() == 0.0 {
        return Err(Error::Estimation("impulse response is silent".into()));
    }
    let curve = schroeder_curve(rir.samples());
    let start = curve.iter().position(|&db| db <= FIT_START_DB);
    let end = curve.iter().position(|&db| db <= FIT_END_DB);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => {
            return Err(Error::Estimation(
                "decay never reaches the −25 dB fit point".into(),
            ))
        }
    };
    // the last point may already be −∞ for a response that ends abruptly
    let usable: Vec<(f64, f64)> = (start..end)
        .filter(|&i| curve[i].is_finite())
        .map(|i| (i as f64 / rir.sample_rate() as f64, curve[i]))
        .collect();
    if usable.len() < MIN_FIT_SAMPLES {
        return Err(Error::Estimation(format!(
            "decay segment spans {} samples, need at least {MIN_FIT_SAMPLES}",
            usable.len()
        )));
    }
    let slope = fit_slope(&usable);
    if !(slope < 0.0) || !slope.is_finite() {
        return Err(Error::Estimation("energy curve does not decay".into()));
    }
    Ok(-60.0 / slope)
}

/// `convolve(clean, rir)` kept at the clean length, renormalized if it
/// would clip.
pub fn add_reverb(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    add_reverb_recorded(clean, rir).map(|(w, _)| w)
}

pub fn add_reverb_recorded(clean: &Waveform, rir: &Waveform) -> Result<(Waveform, f64)> {
    let wet = convolve(clean, rir)?;
    let (samples, scale) = renormalize(wet.into_samples());
    Ok((clean.with_samples(samples)?, scale))
}
