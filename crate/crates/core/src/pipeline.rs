//! End-to-end signature extraction: energy guard, optional EMD denoising,
//! STFT, band log spectrum and cepstral partition.

use serde::{Deserialize, Serialize};

use crate::audio::AudioRecording;
use crate::cepstrum::{
    aggregate_signatures, cepstrum, reconstruct_component, signature_from_cepstrum,
    CepstrumFrame, QuefrencyPartition, QuefrencySlice, ToothSignature,
};
use crate::emd::{denoise_with, DenoiseConfig};
use crate::spectral::{log_spectrogram, stft, Band, StftParams, DEFAULT_LOG_FLOOR};
use crate::{Error, Result};

/// Recordings with RMS below this are rejected.
pub const MIN_SIGNAL_RMS: f64 = 1e-6;

pub const USER_BAND: Band = Band {
    low: 2000.0,
    high: 16000.0,
};
pub const MODEL_BAND: Band = Band {
    low: 2000.0,
    high: 18000.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub overlap: f64,
    pub band: Band,
    pub partition: QuefrencyPartition,
    pub alpha: f64,
    /// KDE bandwidth; Scott's rule when `None`.
    pub kde_bandwidth: Option<f64>,
    pub keep_imfs: usize,
    pub skip_denoise: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 44100,
            window_ms: 50.0,
            overlap: 0.75,
            band: USER_BAND,
            partition: QuefrencyPartition::default(),
            alpha: 1.0,
            kde_bandwidth: None,
            keep_imfs: 2,
            skip_denoise: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn stft_params(&self) -> StftParams {
        StftParams {
            window_ms: self.window_ms,
            overlap: self.overlap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        self.band.validate(self.sample_rate)?;
        if !(self.alpha > 0.0) {
            return Err(Error::Validation(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.keep_imfs == 0 {
            return Err(Error::Validation("keep_imfs must be at least 1".into()));
        }
        if let Some(h) = self.kde_bandwidth {
            if !(h > 0.0) {
                return Err(Error::Validation(format!("KDE bandwidth must be > 0, got {h}")));
            }
        }
        QuefrencyPartition::new(self.partition.low_end, self.partition.mid_end)?;
        if !(self.window_ms > 0.0) || !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Validation("invalid STFT window or overlap".into()));
        }
        Ok(())
    }

    pub fn hop_seconds(&self) -> f64 {
        let p = self.stft_params();
        p.hop(self.sample_rate) as f64 / self.sample_rate as f64
    }
}

/// Energy guard, then EMD denoising unless `skip_denoise`.
pub fn preprocess(recording: &AudioRecording, config: &PipelineConfig) -> Result<AudioRecording> {
    if recording.rms() < MIN_SIGNAL_RMS {
        return Err(Error::InsufficientData(format!(
            "insufficient signal energy (RMS {:.3e} < {MIN_SIGNAL_RMS:e})",
            recording.rms()
        )));
    }
    if recording.sample_rate() != config.sample_rate {
        log::warn!(
            "recording at {} Hz differs from configured {} Hz",
            recording.sample_rate(),
            config.sample_rate
        );
    }
    if config.skip_denoise {
        return Ok(recording.clone());
    }
    let out = denoise_with(
        recording,
        &DenoiseConfig {
            keep_imfs: config.keep_imfs,
            ..DenoiseConfig::default()
        },
    )?;
    if out.passthrough {
        log::warn!("EMD produced no IMF for some blocks; those blocks pass through unfiltered");
    }
    Ok(out.recording)
}

/// Cepstrum of every STFT frame of an already preprocessed recording.
pub fn frame_cepstra(recording: &AudioRecording, config: &PipelineConfig) -> Result<Vec<CepstrumFrame>> {
    config.validate()?;
    let spec = stft(recording, config.stft_params())?;
    let frames = log_spectrogram(&spec, config.band, DEFAULT_LOG_FLOOR)?;
    let cepstra = frames.iter().map(cepstrum).collect::<Result<Vec<_>>>()?;
    if let Some(c) = cepstra.first() {
        config.partition.check(c.coeffs.len())?;
    }
    Ok(cepstra)
}

/// Per-frame signatures of a raw recording (guard and denoise included).
pub fn frame_signatures(recording: &AudioRecording, config: &PipelineConfig) -> Result<Vec<ToothSignature>> {
    let clean = preprocess(recording, config)?;
    frame_cepstra(&clean, config)?
        .iter()
        .map(|c| signature_from_cepstrum(c, config.partition))
        .collect()
}

/// One signature per measurement: the mean over its frames.
pub fn measurement_signature(recording: &AudioRecording, config: &PipelineConfig) -> Result<ToothSignature> {
    aggregate_signatures(&frame_signatures(recording, config)?)
}

/// Element-wise mean of cepstra.
pub fn mean_cepstrum(cepstra: &[CepstrumFrame]) -> Result<CepstrumFrame> {
    let first = cepstra
        .first()
        .ok_or_else(|| Error::EmptyInput("no cepstral frames".into()))?;
    let mut coeffs = vec![0.0; first.coeffs.len()];
    for c in cepstra {
        if c.coeffs.len() != coeffs.len() {
            return Err(Error::IncompatibleSignature("cepstra differ in length".into()));
        }
        for (a, v) in coeffs.iter_mut().zip(&c.coeffs) {
            *a += v;
        }
    }
    let k = cepstra.len() as f64;
    coeffs.iter_mut().for_each(|a| *a /= k);
    Ok(CepstrumFrame {
        coeffs,
        band: first.band,
        bin_freqs: first.bin_freqs.clone(),
        source_frame_idx: first.source_frame_idx,
    })
}

/// Log-spectrum reconstruction of one quefrency slice of the frame-averaged
/// cepstrum, on the band bin frequencies.
pub fn slice_reconstruction(
    recording: &AudioRecording,
    config: &PipelineConfig,
    slice: QuefrencySlice,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let clean = preprocess(recording, config)?;
    let mean = mean_cepstrum(&frame_cepstra(&clean, config)?)?;
    let rec = reconstruct_component(&mean, slice, config.partition)?;
    Ok((rec.bin_freqs, rec.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_envelope, synthesize, SceneSpec};

    fn skip() -> PipelineConfig {
        PipelineConfig {
            skip_denoise: true,
            ..Default::default()
        }
    }

    #[test]
    fn silent_input_is_rejected() {
        let rec = AudioRecording::new(vec![0.0; 44100], 44100).unwrap();
        let err = measurement_signature(&rec, &skip()).unwrap_err();
        assert!(err.to_string().contains("insufficient signal energy"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn signature_length_and_determinism() {
        let scene = SceneSpec {
            envelope: make_envelope(3, (2000.0, 16000.0), 12.0, 1).unwrap(),
            ..Default::default()
        };
        let (rec, _) = synthesize(&scene).unwrap();
        for cfg in [skip(), PipelineConfig::default()] {
            let a = measurement_signature(&rec, &cfg).unwrap();
            assert_eq!(a.len(), 75);
            assert_eq!(a, measurement_signature(&rec, &cfg).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            band: Band::new(2000.0, 30000.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let text = serde_json::to_string(&PipelineConfig::default()).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, PipelineConfig::default());
    }
}
