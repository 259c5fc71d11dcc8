//! Python bindings: waveform I/O, corruption primitives, features, EER and
//! scoring with a trained system.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustcm::augment::{self, RoomSpec};
use robustcm::eval::{self, ScoreSet};
use robustcm::fixture::{self, FixtureSpec};
use robustcm::signal::{self, Waveform};
use robustcm::system::{CmSystem, FeatureConfig};

fn py_err(e: robustcm::Error) -> PyErr {
    match e {
        robustcm::Error::Io { .. } | robustcm::Error::OutputExists(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn wave(samples: Vec<f64>, sample_rate: u32) -> PyResult<Waveform> {
    Waveform::new(samples, sample_rate).map_err(py_err)
}

/// Reads a 16-bit mono PCM WAV file; returns `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let w = signal::read_wav(path).map_err(py_err)?;
    let sr = w.sample_rate();
    Ok((w.into_samples(), sr))
}

#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    signal::write_wav(path, &wave(samples, sample_rate)?).map_err(py_err)
}

/// Mixes `noise` into `clean` at `snr_db` from a random offset drawn with
/// `seed`. Returns `(mixture, clipping_scale)`.
#[pyfunction]
#[pyo3(signature = (clean, noise, snr_db, seed = 0, sample_rate = 16000))]
fn add_noise(clean: Vec<f64>, noise: Vec<f64>, snr_db: f64, seed: u64, sample_rate: u32) -> PyResult<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, mix) = augment::add_noise_recorded(&wave(clean, sample_rate)?, &wave(noise, sample_rate)?, snr_db, &mut rng)
        .map_err(py_err)?;
    Ok((w.into_samples(), mix.scale))
}

/// Image-source room impulse response for a shoebox room.
#[pyfunction]
#[pyo3(signature = (dims, source, mic, rt60, sample_rate = 16000))]
fn simulate_rir(dims: [f64; 3], source: [f64; 3], mic: [f64; 3], rt60: f64, sample_rate: u32) -> PyResult<Vec<f64>> {
    let room = RoomSpec::new(dims, source, mic, rt60).map_err(py_err)?;
    Ok(augment::simulate_rir(&room, sample_rate).map_err(py_err)?.into_samples())
}

/// Schroeder-integration RT60 estimate of an impulse response.
#[pyfunction]
#[pyo3(signature = (rir, sample_rate = 16000))]
fn estimate_rt60(rir: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    augment::estimate_rt60(&wave(rir, sample_rate)?).map_err(py_err)
}

/// Convolves `clean` with `rir`, keeping the clean length.
#[pyfunction]
#[pyo3(signature = (clean, rir, sample_rate = 16000))]
fn add_reverb(clean: Vec<f64>, rir: Vec<f64>, sample_rate: u32) -> PyResult<Vec<f64>> {
    let w = augment::add_reverb(&wave(clean, sample_rate)?, &wave(rir, sample_rate)?).map_err(py_err)?;
    Ok(w.into_samples())
}

/// Log-mel features (frames × n_mels) with the default STFT settings.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000, n_mels = 80))]
fn fbank(samples: Vec<f64>, sample_rate: u32, n_mels: usize) -> PyResult<Vec<Vec<f64>>> {
    let cfg = FeatureConfig { n_mels, ..Default::default() };
    let f = cfg.extract(&wave(samples, sample_rate)?).map_err(py_err)?;
    Ok(f.outer_iter().map(|r| r.to_vec()).collect())
}

/// Equal error rate of bona fide vs spoof scores; returns `(eer, threshold)`.
#[pyfunction]
fn compute_eer(bonafide: Vec<f64>, spoof: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = eval::compute_eer(&ScoreSet::from_pairs(&bonafide, &spoof)).map_err(py_err)?;
    Ok((e.eer, e.threshold))
}

/// Names of the 19 standard test conditions in report order.
#[pyfunction]
fn standard_conditions() -> Vec<String> {
    augment::standard_conditions().into_iter().map(|c| c.name).collect()
}

/// Writes a synthetic corpus; returns the number of WAV files.
#[pyfunction]
#[pyo3(signature = (out_dir, n_per_class = 100, seed = 0, force = false))]
fn make_fixture(out_dir: PathBuf, n_per_class: usize, seed: u64, force: bool) -> PyResult<usize> {
    let spec = FixtureSpec { n_per_class, ..Default::default() };
    Ok(fixture::make_fixture(&spec, seed, &out_dir, force).map_err(py_err)?.wavs)
}

/// A trained countermeasure loaded from a checkpoint directory.
#[pyclass(unsendable)]
struct System {
    inner: CmSystem,
}

#[pymethods]
impl System {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CmSystem::load(&path).map_err(py_err)? })
    }

    /// Bona fide score of one utterance (higher means more likely genuine).
    #[pyo3(signature = (samples, sample_rate = 16000))]
    fn score(&self, samples: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
        self.inner.score_waveform(&wave(samples, sample_rate)?).map_err(py_err)
    }

    fn score_wav(&self, path: PathBuf) -> PyResult<f64> {
        let w = signal::read_wav(path).map_err(py_err)?;
        self.inner.score_waveform(&w).map_err(py_err)
    }

    #[getter]
    fn backend(&self) -> String {
        self.inner.spec.backend.as_str().to_string()
    }

    #[getter]
    fn uses_frontend(&self) -> bool {
        self.inner.spec.use_frontend
    }

    fn __repr__(&self) -> String {
        format!("System(backend={}, frontend={})", self.inner.spec.backend.as_str(), self.inner.spec.use_frontend)
    }
}

#[pymodule]
fn robustcm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_rir, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rt60, m)?)?;
    m.add_function(wrap_pyfunction!(add_reverb, m)?)?;
    m.add_function(wrap_pyfunction!(fbank, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(standard_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(make_fixture, m)?)?;
    m.add_class::<System>()?;
    Ok(())
}
