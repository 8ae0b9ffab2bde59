//! Short-time Fourier transform and band-limited log-magnitude spectra.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioRecording;
use crate::error::{Error, Result};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

/// Frequency band in Hz, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low && f <= self.high
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let bad = |reason: &str| {
            Err(Error::InvalidBand {
                low: self.low,
                high: self.high,
                reason: reason.into(),
            })
        };
        if !(self.low.is_finite() && self.high.is_finite()) {
            return bad("non-finite edge");
        }
        if self.low < 0.0 || self.high > nyquist {
            return bad(&format!("outside [0, {nyquist}]"));
        }
        if self.low > self.high {
            return bad("low edge above high edge");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_ms: f64,
    pub overlap: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_ms: 50.0,
            overlap: 0.75,
        }
    }
}

impl StftParams {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms / 1000.0 * sample_rate as f64).round() as usize
    }

    /// Hop in samples, rounded to nearest.
    pub fn hop(&self, sample_rate: u32) -> usize {
        ((self.window_len(sample_rate) as f64) * (1.0 - self.overlap))
            .round()
            .max(1.0) as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.window_len(sample_rate).next_power_of_two()
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize, sample_rate: u32) -> usize {
        let win = self.window_len(sample_rate);
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop(sample_rate)
        }
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_ms > 0.0) || !self.window_ms.is_finite() {
            return Err(Error::Validation(format!(
                "window length {} ms must be positive",
                self.window_ms
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Validation(format!(
                "overlap {} must lie in [0, 1)",
                self.overlap
            )));
        }
        if self.window_len(sample_rate) < 2 {
            return Err(Error::Validation("window shorter than 2 samples".into()));
        }
        Ok(())
    }
}

/// Hann-windowed STFT. Only the non-negative frequency bins
/// `0..=fft_len/2` of each frame are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex<f64>>>,
    pub frame_hop: usize,
    pub window_len: usize,
    pub sample_rate: u32,
    pub fft_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn bin_spacing(&self) -> f64 {
        self.sample_rate as f64 / self.fft_len as f64
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.bin_spacing()
    }

    pub fn hop_seconds(&self) -> f64 {
        self.frame_hop as f64 / self.sample_rate as f64
    }

    /// Indices of bins whose centre frequency lies inside `band`.
    pub fn band_bins(&self, band: Band) -> std::ops::Range<usize> {
        let df = self.bin_spacing();
        let lo = (band.low / df).ceil().max(0.0) as usize;
        let hi = ((band.high / df).floor() as usize).min(self.fft_len / 2);
        if lo > hi {
            lo..lo
        } else {
            lo..hi + 1
        }
    }

    /// Sum of squared magnitudes over the full two-sided spectrum of a frame.
    pub fn frame_energy(&self, frame_idx: usize) -> f64 {
        let frame = &self.frames[frame_idx];
        let half = self.fft_len / 2;
        frame
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = if k == 0 || k == half { 1.0 } else { 2.0 };
                w * c.norm_sqr()
            })
            .sum()
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    // periodic Hann
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn stft(recording: &AudioRecording, params: StftParams) -> Result<Spectrogram> {
    let sr = recording.sample_rate();
    params.validate(sr)?;
    let window_len = params.window_len(sr);
    let hop = params.hop(sr);
    let fft_len = params.fft_len(sr);
    let samples = recording.samples();
    if samples.len() < window_len {
        return Err(Error::InsufficientData(format!(
            "recording of {} samples is shorter than one {window_len}-sample window",
            samples.len()
        )));
    }
    let n_frames = params.frame_count(samples.len(), sr);
    let window = hann_window(window_len);
    let fft = FftPlanner::new().plan_fft_forward(fft_len);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); fft_len];

    let frames = (0..n_frames)
        .map(|i| {
            let start = i * hop;
            for (dst, (s, w)) in buf
                .iter_mut()
                .zip(samples[start..start + window_len].iter().zip(&window))
            {
                *dst = Complex::new(s * w, 0.0);
            }
            buf[window_len..].fill(Complex::default());
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..=fft_len / 2].to_vec()
        })
        .collect();

    Ok(Spectrogram {
        frames,
        frame_hop: hop,
        window_len,
        sample_rate: sr,
        fft_len,
    })
}

/// Natural-log amplitude spectrum of one frame restricted to a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSpectrumFrame {
    pub values: Vec<f64>,
    pub band: Band,
    pub bin_freqs: Vec<f64>,
    pub frame_idx: usize,
}

impl LogSpectrumFrame {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn band_log_magnitude(
    spec: &Spectrogram,
    frame_idx: usize,
    band: Band,
    floor: f64,
) -> Result<LogSpectrumFrame> {
    band.validate(spec.sample_rate)?;
    if !(floor > 0.0) {
        return Err(Error::Validation(format!("log floor {floor} must be > 0")));
    }
    let frame = spec.frames.get(frame_idx).ok_or_else(|| {
        Error::Validation(format!(
            "frame index {frame_idx} out of range ({} frames)",
            spec.frames.len()
        ))
    })?;
    let bins = spec.band_bins(band);
    if bins.is_empty() {
        return Err(Error::InvalidBand {
            low: band.low,
            high: band.high,
            reason: "band contains no frequency bins".into(),
        });
    }
    let values = frame[bins.clone()]
        .iter()
        .map(|c| c.norm().max(floor).ln())
        .collect();
    let bin_freqs = bins.map(|k| spec.bin_freq(k)).collect();
    Ok(LogSpectrumFrame {
        values,
        band,
        bin_freqs,
        frame_idx,
    })
}

/// Band-limited log spectra for every frame.
pub fn log_spectrogram(spec: &Spectrogram, band: Band, floor: f64) -> Result<Vec<LogSpectrumFrame>> {
    (0..spec.n_frames())
        .map(|i| band_log_magnitude(spec, i, band, floor))
        .collect()
}

/// Plot-data export: one `frame,bin_freq,log_mag` row per band bin.
pub fn write_spectrogram_csv<W: Write>(
    mut out: W,
    spec: &Spectrogram,
    band: Band,
    floor: f64,
) -> Result<()> {
    let io = |e| Error::io("<spectrogram csv>", e);
    writeln!(out, "frame,bin_freq,log_mag").map_err(io)?;
    for frame in log_spectrogram(spec, band, floor)? {
        for (f, v) in frame.bin_freqs.iter().zip(&frame.values) {
            writeln!(out, "{},{f},{v}", frame.frame_idx).map_err(io)?;
        }
    }
    Ok(())
}
