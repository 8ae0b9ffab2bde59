//! Python bindings: signature extraction, feature selection, health scoring,
//! alignment and the simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use dentres::align::{self, FrameSequence};
use dentres::audio::{self, AudioRecording, Condition, ToothId};
use dentres::commands::{self, BenchmarkSpec};
use dentres::detect;
use dentres::emd::{self, EmdConfig};
use dentres::features::{self, FeatureRange, LabeledSignatureSet};
use dentres::pipeline::{self, PipelineConfig};
use dentres::synth::{self, SceneSpec};

fn to_py(e: dentres::Error) -> PyErr {
    match e {
        dentres::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_from(config: Option<&str>, skip_denoise: bool) -> PyResult<PipelineConfig> {
    let mut cfg: PipelineConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    cfg.skip_denoise |= skip_denoise;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn recording(samples: Vec<f64>, sample_rate: u32) -> PyResult<AudioRecording> {
    AudioRecording::new(samples, sample_rate).map_err(to_py)
}

/// Mono audio at a fixed sample rate.
#[pyclass(name = "Recording", module = "dentres", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRecording {
    inner: AudioRecording,
}

#[pymethods]
impl PyRecording {
    #[new]
    fn new(samples: Vec<f64>, sample_rate: u32) -> PyResult<Self> {
        Ok(Self {
            inner: recording(samples, sample_rate)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: audio::load_wav(path).map_err(to_py)?,
        })
    }

    /// Write as 32-bit float (default) or 16-bit PCM.
    #[pyo3(signature = (path, pcm16 = false))]
    fn save(&self, path: PathBuf, pcm16: bool) -> PyResult<()> {
        let encoding = if pcm16 {
            audio::WavEncoding::Pcm16
        } else {
            audio::WavEncoding::Float32
        };
        audio::write_wav(path, &self.inner, encoding).map_err(to_py)
    }

    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Recording({} samples at {} Hz)",
            self.inner.len(),
            self.inner.sample_rate()
        )
    }

    /// Measurement signature (mid-quefrency cepstrum, averaged over frames).
    #[pyo3(signature = (config = None, skip_denoise = false))]
    fn signature(&self, config: Option<&str>, skip_denoise: bool) -> PyResult<Vec<f64>> {
        let cfg = config_from(config, skip_denoise)?;
        Ok(pipeline::measurement_signature(&self.inner, &cfg)
            .map_err(to_py)?
            .values)
    }

    /// One signature per STFT frame.
    #[pyo3(signature = (config = None, skip_denoise = false))]
    fn frame_signatures(&self, config: Option<&str>, skip_denoise: bool) -> PyResult<Vec<Vec<f64>>> {
        let cfg = config_from(config, skip_denoise)?;
        Ok(pipeline::frame_signatures(&self.inner, &cfg)
            .map_err(to_py)?
            .into_iter()
            .map(|s| s.values)
            .collect())
    }

    /// Sum of the first `keep_imfs` IMFs.
    #[pyo3(signature = (keep_imfs = 2))]
    fn denoise(&self, keep_imfs: usize) -> PyResult<Self> {
        Ok(Self {
            inner: emd::denoise(&self.inner, keep_imfs).map_err(to_py)?.recording,
        })
    }
}

/// Healthy-reference density for one tooth and condition.
#[pyclass(name = "ReferenceProfile", module = "dentres", frozen)]
struct PyProfile {
    inner: detect::ReferenceProfile,
}

#[pymethods]
impl PyProfile {
    /// Fit on reference vectors, optionally restricted to `start..=end`.
    #[staticmethod]
    #[pyo3(signature = (references, h = None, range = None, tooth = 1, condition = "caries"))]
    fn fit(
        references: Vec<Vec<f64>>,
        h: Option<f64>,
        range: Option<(usize, usize)>,
        tooth: u8,
        condition: &str,
    ) -> PyResult<Self> {
        let dim = references.first().map(Vec::len).unwrap_or(0);
        let range = match range {
            Some((start, end)) => FeatureRange::new(start, end, 1.0),
            None => FeatureRange::full(dim),
        }
        .map_err(to_py)?;
        let sliced = references
            .iter()
            .map(|r| features::apply_range_slice(r, &range))
            .collect::<dentres::Result<Vec<_>>>()
            .map_err(to_py)?;
        let condition = Condition::parse(condition)
            .ok_or_else(|| PyValueError::new_err(format!("unknown condition {condition:?}")))?;
        let tooth = ToothId::new(tooth).map_err(to_py)?;
        Ok(Self {
            inner: detect::fit_profile(&sliced, h, range, tooth, condition).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: detect::load_profile(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        detect::save_profile(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.h
    }

    #[getter]
    fn range(&self) -> (usize, usize) {
        (self.inner.range.start, self.inner.range.end)
    }

    #[getter]
    fn n_references(&self) -> usize {
        self.inner.n_references()
    }

    /// Log-likelihood of a full-length signature (the profile's range is
    /// applied first).
    fn log_likelihood(&self, signature: Vec<f64>) -> PyResult<f64> {
        let x = self.slice(&signature)?;
        Ok(detect::log_likelihood(&self.inner, &x)
            .map_err(to_py)?
            .log_likelihood)
    }

    /// Summed log-likelihood of several measurements.
    fn aggregate(&self, signatures: Vec<Vec<f64>>) -> PyResult<f64> {
        let xs = signatures
            .iter()
            .map(|s| self.slice(s))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(detect::aggregate_log_likelihood(&self.inner, &xs)
            .map_err(to_py)?
            .log_likelihood)
    }

    fn __repr__(&self) -> String {
        format!(
            "ReferenceProfile(tooth={}, condition={}, n={}, h={:.4})",
            self.inner.tooth,
            self.inner.condition,
            self.inner.n_references(),
            self.inner.h
        )
    }
}

impl PyProfile {
    fn slice(&self, signature: &[f64]) -> PyResult<Vec<f64>> {
        if signature.len() == self.inner.dim() {
            return Ok(signature.to_vec());
        }
        features::apply_range_slice(signature, &self.inner.range).map_err(to_py)
    }
}

/// Returns `(imfs, residual)`.
#[pyfunction]
#[pyo3(signature = (signal, max_imfs = 8, sift_tolerance = 0.05))]
fn emd_decompose(signal: Vec<f64>, max_imfs: usize, sift_tolerance: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = emd::emd_with(
        &signal,
        &EmdConfig {
            max_imfs,
            sift_tolerance,
            ..EmdConfig::default()
        },
    )
    .map_err(to_py)?;
    Ok((d.imfs, d.residual))
}

/// Per-dimension between/within-class variance ratio.
#[pyfunction]
fn gains(vectors: Vec<Vec<f64>>, classes: Vec<u32>) -> PyResult<Vec<f64>> {
    let set = LabeledSignatureSet::new(vectors, classes).map_err(to_py)?;
    Ok(features::gains(&set))
}

/// Inclusive `(start, end)` maximizing the sum of `gain - alpha`.
#[pyfunction]
#[pyo3(signature = (gains, alpha = 1.0))]
fn select_range(gains: Vec<f64>, alpha: f64) -> PyResult<(usize, usize)> {
    let r = features::select_range(&gains, alpha).map_err(to_py)?;
    Ok((r.start, r.end))
}

/// Returns `(auc, ci95, points)` with points as `(fpr, tpr, threshold)`.
#[pyfunction]
#[pyo3(signature = (healthy, unhealthy, bootstrap_iters = 0, seed = 0))]
fn roc_auc(
    healthy: Vec<f64>,
    unhealthy: Vec<f64>,
    bootstrap_iters: usize,
    seed: u64,
) -> PyResult<(f64, Option<(f64, f64)>, Vec<(f64, f64, f64)>)> {
    let r = detect::roc_auc(&healthy, &unhealthy, bootstrap_iters, seed).map_err(to_py)?;
    let points = r.points.iter().map(|p| (p.fpr, p.tpr, p.threshold)).collect();
    Ok((r.auc, r.ci95, points))
}

/// Returns `(pairs, total_cost)`; pairs are `(reference_idx, test_idx)`.
#[pyfunction]
#[pyo3(signature = (reference, test, band = None))]
fn dtw(reference: Vec<Vec<f64>>, test: Vec<Vec<f64>>, band: Option<usize>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let r = FrameSequence::new(reference, None).map_err(to_py)?;
    let t = FrameSequence::new(test, None).map_err(to_py)?;
    let p = align::dtw(&r, &t, band).map_err(to_py)?;
    Ok((p.pairs, p.total_cost))
}

/// Synthesize from a JSON scene description (defaults for missing fields).
/// Returns the recording and the ground truth as JSON.
#[pyfunction]
#[pyo3(signature = (scene = None))]
fn synthesize(scene: Option<&str>) -> PyResult<(PyRecording, String)> {
    let spec: SceneSpec = match scene {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SceneSpec::default(),
    };
    let (rec, truth) = synth::synthesize(&spec).map_err(to_py)?;
    let truth = serde_json::to_string(&truth).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyRecording { inner: rec }, truth))
}

/// Random resonance envelope as JSON, ready to embed in a scene.
#[pyfunction]
#[pyo3(signature = (n_peaks = 4, band = (2000.0, 16000.0), peak_gain_db = 15.0, seed = 0))]
fn make_envelope(n_peaks: usize, band: (f64, f64), peak_gain_db: f64, seed: u64) -> PyResult<String> {
    let env = synth::make_envelope(n_peaks, band, peak_gain_db, seed).map_err(to_py)?;
    serde_json::to_string(&env).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run a benchmark (the bundled one when `spec` is None) and write its CSVs
/// into `out_dir`. Returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, spec = None))]
fn evaluate(py: Python<'_>, out_dir: PathBuf, spec: Option<&str>) -> PyResult<String> {
    let spec: BenchmarkSpec = match spec {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => BenchmarkSpec::bundled(),
    };
    let summary = py
        .detach(|| commands::cmd_eval(&spec, &out_dir))
        .map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "dentres")]
fn dentres_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecording>()?;
    m.add_class::<PyProfile>()?;
    m.add_function(wrap_pyfunction!(emd_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(gains, m)?)?;
    m.add_function(wrap_pyfunction!(select_range, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(dtw, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(make_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
