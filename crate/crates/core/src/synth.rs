//! Forward simulator of the brush-tooth vibration model.
//!
//! The microphone signal is `M = H * B * X + D + N`: a harmonic excitation
//! `X` shaped by the tooth resonance envelope `H` and the contact factor `B`,
//! plus a direct path `D` (the excitation with a low-frequency emphasis and
//! no `H`) and white noise with optional mains hum. Synthesis is additive in
//! the time domain with 5 ms control frames.

use std::f64::consts::{LN_10, PI};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioRecording, ToothId};
use crate::rng::rng_for;
use crate::spectral::StftParams;
use crate::{Error, Result};

/// Highest harmonic frequency emitted by default.
pub const DEFAULT_TOP_HZ: f64 = 20000.0;
const CONTROL_FRAME_S: f64 = 0.005;
const CROSSFADE_S: f64 = 0.02;
const DIRECT_PATH_CORNER_HZ: f64 = 3000.0;
/// Fixed scale keeping typical scenes inside [-1, 1] for PCM output.
pub const OUTPUT_GAIN: f64 = 0.1;

pub fn db_to_nepers(db: f64) -> f64 {
    db / 20.0 * LN_10
}

/// Monotone piecewise-cubic (Fritsch-Carlson) interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Validation(
                "interpolant needs at least two points".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "interpolation knots must be strictly increasing".into(),
            ));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Validation("interpolation values must be finite".into()));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes.fill(delta[0]);
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { xs, ys, slopes })
    }

    /// Value at `x`; constant extrapolation outside the knots.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// One resonance: a peak of `gain` nepers at `center` spanning
/// `center +- width`, flanked by two anti-resonances of depth `dip * gain / 2`
/// at `center +- 2 * width`. Support is `center +- 3 * width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub width: f64,
    pub gain: f64,
    pub dip: f64,
}

impl Peak {
    fn points(&self) -> [(f64, f64); 7] {
        let (c, w, g) = (self.center, self.width, self.gain);
        let d = -0.5 * self.dip * g;
        [
            (c - 3.0 * w, 0.0),
            (c - 2.0 * w, d),
            (c - w, 0.0),
            (c, g),
            (c + w, 0.0),
            (c + 2.0 * w, d),
            (c + 3.0 * w, 0.0),
        ]
    }

    fn support(&self) -> (f64, f64) {
        (self.center - 3.0 * self.width, self.center + 3.0 * self.width)
    }

    fn shape(&self) -> Pchip {
        let (xs, ys) = self.points().iter().copied().unzip();
        Pchip::new(xs, ys).expect("peak points are increasing")
    }

    fn value(&self, f: f64) -> f64 {
        let (lo, hi) = self.support();
        if f <= lo || f >= hi || self.gain == 0.0 {
            0.0
        } else {
            self.shape().eval(f)
        }
    }
}

/// Tooth resonance envelope `ln|H(f)|`: a monotone cubic through
/// `control_points`, constant outside them. `peaks` records the resonances
/// the points were rendered from, so perturbations can act on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEnvelope {
    pub control_points: Vec<(f64, f64)>,
    pub band: (f64, f64),
    pub peaks: Vec<Peak>,
}

impl ResonanceEnvelope {
    pub fn flat(band: (f64, f64)) -> Result<Self> {
        Self::from_peaks(band, Vec::new())
    }

    pub fn from_peaks(band: (f64, f64), peaks: Vec<Peak>) -> Result<Self> {
        check_band(band)?;
        for p in &peaks {
            if !(p.width > 0.0) || !p.gain.is_finite() || !p.dip.is_finite() {
                return Err(Error::Validation(format!("invalid peak {p:?}")));
            }
        }
        let mut xs: Vec<f64> = vec![band.0, band.1];
        for p in &peaks {
            xs.extend(
                p.points()
                    .iter()
                    .map(|q| q.0)
                    .filter(|&f| f > band.0 && f < band.1),
            );
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let control_points = xs
            .into_iter()
            .map(|f| (f, peaks.iter().map(|p| p.value(f)).sum()))
            .collect();
        Ok(ResonanceEnvelope {
            control_points,
            band,
            peaks,
        })
    }

    fn interpolant(&self) -> Pchip {
        let (xs, ys) = self.control_points.iter().copied().unzip();
        Pchip::new(xs, ys).expect("control points validated on construction")
    }

    /// `ln|H(f)|` in nepers.
    pub fn log_gain(&self, f: f64) -> f64 {
        self.interpolant().eval(f)
    }

    pub fn log_gains(&self, freqs: &[f64]) -> Vec<f64> {
        let p = self.interpolant();
        freqs.iter().map(|&f| p.eval(f)).collect()
    }
}

fn check_band(band: (f64, f64)) -> Result<()> {
    if !(band.0 >= 0.0) || !(band.1 > band.0) || !band.1.is_finite() {
        return Err(Error::InvalidBand {
            low: band.0,
            high: band.1,
            reason: "need 0 <= low < high".into(),
        });
    }
    Ok(())
}

/// Random envelope with `n_peaks` resonances whose peaks lie inside `band`.
///
/// Widths are drawn from 500-1000 Hz, gains from 75-100% of
/// `peak_gain_db`, flank depths from 85-100% of the gain. Each support lies
/// inside the band; centres are kept three widths apart where possible.
pub fn make_envelope(
    n_peaks: usize,
    band: (f64, f64),
    peak_gain_db: f64,
    seed: u64,
) -> Result<ResonanceEnvelope> {
    check_band(band)?;
    let env_band = (0.0, band.1 + 6000.0);
    if n_peaks == 0 {
        return ResonanceEnvelope::flat(env_band);
    }
    let mut rng = rng_for(seed, &[0x656e76]);
    let g = db_to_nepers(peak_gain_db);
    let mut peaks: Vec<Peak> = Vec::with_capacity(n_peaks);
    for _ in 0..n_peaks {
        let width = rng.gen_range(500.0..1000.0);
        let lo = band.0 + 3.0 * width;
        let hi = band.1 - 3.0 * width;
        if !(hi > lo) {
            return Err(Error::InvalidBand {
                low: band.0,
                high: band.1,
                reason: "band too narrow for a resonance".into(),
            });
        }
        let mut center = rng.gen_range(lo..hi);
        for _ in 0..200 {
            if peaks
                .iter()
                .all(|p| (p.center - center).abs() >= 3.0 * p.width.max(width))
            {
                break;
            }
            center = rng.gen_range(lo..hi);
        }
        peaks.push(Peak {
            center,
            width,
            gain: g * rng.gen_range(0.75..1.0),
            dip: rng.gen_range(0.85..1.0),
        });
    }
    ResonanceEnvelope::from_peaks(env_band, peaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    RemovePeak,
    ShiftPeak,
    AddNotch,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 3] = [
        PerturbMode::RemovePeak,
        PerturbMode::ShiftPeak,
        PerturbMode::AddNotch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::RemovePeak => "remove_peak",
            PerturbMode::ShiftPeak => "shift_peak",
            PerturbMode::AddNotch => "add_notch",
        }
    }
}

/// Largest shift, as a fraction of the moved peak's width.
pub const MAX_SHIFT_WIDTHS: f64 = 0.8;
/// Depth of a full-severity notch.
pub const MAX_NOTCH_DB: f64 = 12.0;

/// Emulate damage. Severity 0 returns the input unchanged; severity 1 removes
/// a peak entirely, moves it by `MAX_SHIFT_WIDTHS` widths, or adds a
/// `MAX_NOTCH_DB` notch. The affected peak, direction and notch position are
/// drawn from `seed`.
pub fn perturb_envelope(
    env: &ResonanceEnvelope,
    severity: f64,
    mode: PerturbMode,
    seed: u64,
) -> Result<ResonanceEnvelope> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Validation(format!(
            "severity {severity} outside [0, 1]"
        )));
    }
    if severity == 0.0 {
        return Ok(env.clone());
    }
    let mut rng = rng_for(seed, &[0x70657274]);
    let mut peaks = env.peaks.clone();
    match mode {
        PerturbMode::RemovePeak | PerturbMode::ShiftPeak => {
            if peaks.is_empty() {
                return Err(Error::NoPeaks);
            }
            let i = rng.gen_range(0..peaks.len());
            let p = &mut peaks[i];
            if mode == PerturbMode::RemovePeak {
                p.gain *= 1.0 - severity;
            } else {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                p.center += sign * severity * MAX_SHIFT_WIDTHS * p.width;
            }
        }
        PerturbMode::AddNotch => {
            let width = rng.gen_range(500.0..1000.0);
            let (lo, hi) = match env.peaks.as_slice() {
                [] => (env.band.0 + 2000.0, env.band.1 - 8000.0),
                ps => (
                    ps.iter().map(|p| p.center).fold(f64::INFINITY, f64::min),
                    ps.iter().map(|p| p.center).fold(f64::NEG_INFINITY, f64::max),
                ),
            };
            let center = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            peaks.push(Peak {
                center,
                width,
                gain: -db_to_nepers(severity * MAX_NOTCH_DB),
                dip: 0.0,
            });
        }
    }
    ResonanceEnvelope::from_peaks(env.band, peaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum HarmonicLaw {
    InverseK,
    Flat,
    Power { exponent: f64 },
}

impl HarmonicLaw {
    pub fn amplitude(&self, k: usize) -> f64 {
        match self {
            HarmonicLaw::InverseK => 1.0 / k as f64,
            HarmonicLaw::Flat => 1.0,
            HarmonicLaw::Power { exponent } => (k as f64).powf(-exponent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationSpec {
    pub f0: f64,
    /// Defaults to every harmonic up to 20 kHz (and below Nyquist).
    pub n_harmonics: Option<usize>,
    pub harmonic_amps: HarmonicLaw,
    /// Standard deviation of the per-frame log-amplitude jitter.
    pub jitter_amp: f64,
    /// Fractional standard deviation of the fundamental drift.
    pub jitter_f0: f64,
    pub seed: u64,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec {
            f0: 260.0,
            n_harmonics: None,
            harmonic_amps: HarmonicLaw::InverseK,
            jitter_amp: 0.25,
            jitter_f0: 0.0005,
            seed: 0,
        }
    }
}

impl ExcitationSpec {
    /// Harmonic count actually synthesized at `sample_rate`.
    pub fn harmonic_count(&self, sample_rate: u32) -> usize {
        let nyquist = sample_rate as f64 / 2.0;
        let below_nyquist = ((nyquist / self.f0).ceil() as usize).saturating_sub(1);
        let wanted = self
            .n_harmonics
            .unwrap_or((DEFAULT_TOP_HZ / self.f0).floor() as usize);
        if wanted > below_nyquist {
            warn!(
                "{wanted} harmonics of {} Hz exceed Nyquist; truncating to {below_nyquist}",
                self.f0
            );
        }
        wanted.min(below_nyquist)
    }
}

/// Contact factor `B(t, f) = strength * (f / 1 kHz)^(tilt / ln 2) *
/// (1 + wobble_depth * sin(2 pi wobble_rate t + phase))`; `tilt` is in nepers
/// per octave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactSpec {
    pub strength_scale: f64,
    pub tilt: f64,
    pub wobble_rate: f64,
    pub wobble_depth: f64,
    pub wobble_phase: f64,
}

impl Default for ContactSpec {
    fn default() -> Self {
        ContactSpec {
            strength_scale: 1.0,
            tilt: 0.0,
            wobble_rate: 2.0,
            wobble_depth: 0.2,
            wobble_phase: 0.0,
        }
    }
}

impl ContactSpec {
    fn scale_at(&self, t: f64) -> f64 {
        self.strength_scale
            * (1.0 + self.wobble_depth * (2.0 * PI * self.wobble_rate * t + self.wobble_phase).sin())
    }

    fn log_tilt(&self, f: f64) -> f64 {
        self.tilt * (f / 1000.0).log2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub excitation: ExcitationSpec,
    pub envelope: ResonanceEnvelope,
    pub contact: ContactSpec,
    /// Direct-path amplitude relative to the excitation.
    pub direct_path_gain: f64,
    /// White-noise SNR relative to the tooth response power; `None` disables.
    pub noise_snr_db: Option<f64>,
    /// RMS of a 50 Hz hum (with 3 harmonics) relative to the response RMS.
    pub hum_gain: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            excitation: ExcitationSpec::default(),
            envelope: ResonanceEnvelope::flat((0.0, 22000.0)).expect("valid band"),
            contact: ContactSpec::default(),
            direct_path_gain: 0.5,
            noise_snr_db: Some(20.0),
            hum_gain: 0.0,
            duration_s: 1.0,
            sample_rate: 44100,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let e = &self.excitation;
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::Validation(format!(
                "duration {} s must be positive",
                self.duration_s
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if !(e.f0 > 0.0) || e.f0 >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Validation(format!("f0 {} Hz out of range", e.f0)));
        }
        if !(e.jitter_amp >= 0.0) || !(e.jitter_f0 >= 0.0) {
            return Err(Error::Validation("jitters must be >= 0".into()));
        }
        if !(self.contact.strength_scale > 0.0) {
            return Err(Error::Validation("contact strength must be > 0".into()));
        }
        if !(self.contact.wobble_depth >= 0.0 && self.contact.wobble_depth < 1.0) {
            return Err(Error::Validation("wobble depth must lie in [0, 1)".into()));
        }
        if !(self.direct_path_gain >= 0.0) || !(self.hum_gain >= 0.0) {
            return Err(Error::Validation(
                "direct path and hum gains must be >= 0".into(),
            ));
        }
        if let Some(snr) = self.noise_snr_db {
            if snr.is_nan() {
                return Err(Error::Validation("SNR is NaN".into()));
            }
        }
        Ok(())
    }
}

/// Known model terms alongside a synthesized recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub f0: f64,
    pub n_harmonics: usize,
    /// Frequencies of the STFT bins (default analysis parameters).
    pub bin_freqs: Vec<f64>,
    /// `ln|H|` at `bin_freqs`.
    pub log_envelope: Vec<f64>,
    /// Broadband contact scale `B` at each STFT frame.
    pub frame_b_scale: Vec<f64>,
    /// Tooth under the brush at each STFT frame, for sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels: Option<Vec<ToothId>>,
    /// Noise actually added, as SNR in dB against the response.
    pub measured_snr_db: Option<f64>,
}

/// Time `(i + 0.5) * hop / sr`, used to assign frame `i` to a segment.
pub fn frame_label_time(i: usize, hop: usize, sample_rate: u32) -> f64 {
    (i as f64 + 0.5) * hop as f64 / sample_rate as f64
}

struct Components {
    response: Vec<f64>,
    direct: Vec<f64>,
}

/// Additive synthesis of the response and direct path. `log_h(frame, k)`
/// returns `ln|H|` for harmonic `k` (1-based) at control frame `frame`, given
/// its frequency.
fn render<F>(
    excitation: &ExcitationSpec,
    contact: &[ContactSpec],
    contact_of: &dyn Fn(usize) -> usize,
    direct_path_gain: f64,
    n: usize,
    sample_rate: u32,
    scene_seed: u64,
    log_h: F,
) -> Components
where
    F: Fn(usize, f64) -> f64,
{
    let sr = sample_rate as f64;
    let n_harm = excitation.harmonic_count(sample_rate);
    let frame_len = ((CONTROL_FRAME_S * sr).round() as usize).max(1);
    let n_frames = n.div_ceil(frame_len) + 1;

    let mut jitter_rng = rng_for(excitation.seed, &[0x6a6974]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let rho: f64 = 0.95;
    let mut drift = 0.0;
    let f0s: Vec<f64> = (0..n_frames)
        .map(|_| {
            drift = rho * drift + (1.0 - rho * rho).sqrt() * normal.sample(&mut jitter_rng);
            excitation.f0 * (1.0 + excitation.jitter_f0 * drift)
        })
        .collect();
    // amps[frame][k-1]
    let jitter: Vec<Vec<f64>> = (0..n_frames)
        .map(|_| {
            (0..n_harm)
                .map(|_| (excitation.jitter_amp * normal.sample(&mut jitter_rng)).exp())
                .collect()
        })
        .collect();

    let mut phase_rng = rng_for(scene_seed, &[0x706861]);
    let phase0: Vec<f64> = (0..n_harm).map(|_| phase_rng.gen_range(0.0..2.0 * PI)).collect();
    let direct_offset: Vec<(f64, f64)> = (0..n_harm)
        .map(|_| phase_rng.gen_range(0.0..2.0 * PI).sin_cos())
        .collect();

    let mut resp_amp = vec![vec![0.0; n_harm]; n_frames];
    let mut direct_amp = vec![vec![0.0; n_harm]; n_frames];
    for fr in 0..n_frames {
        let t = (fr * frame_len) as f64 / sr;
        let c = &contact[contact_of(fr * frame_len)];
        let b = c.scale_at(t);
        for k in 1..=n_harm {
            let f = k as f64 * f0s[fr];
            let x = OUTPUT_GAIN * excitation.harmonic_amps.amplitude(k) * jitter[fr][k - 1];
            resp_amp[fr][k - 1] = x * b * (log_h(fr, f) + c.log_tilt(f)).exp();
            let lp = 1.0 / (1.0 + (f / DIRECT_PATH_CORNER_HZ).powi(4)).sqrt();
            direct_amp[fr][k - 1] = direct_path_gain * x * lp;
        }
    }

    let mut response = vec![0.0; n];
    let mut direct = vec![0.0; n];
    let mut phase = phase0;
    for k in 0..n_harm {
        let (ds, dc) = direct_offset[k];
        for fr in 0..n_frames - 1 {
            let start = fr * frame_len;
            if start >= n {
                break;
            }
            let end = (start + frame_len).min(n);
            let w = 2.0 * PI * (k + 1) as f64 * f0s[fr] / sr;
            let (ws, wc) = w.sin_cos();
            let (mut zs, mut zc) = phase[k].sin_cos();
            let (a0, a1) = (resp_amp[fr][k], resp_amp[fr + 1][k]);
            let (d0, d1) = (direct_amp[fr][k], direct_amp[fr + 1][k]);
            for (i, idx) in (start..end).enumerate() {
                let lambda = i as f64 / frame_len as f64;
                response[idx] += (a0 + (a1 - a0) * lambda) * zs;
                // sin(phase + offset)
                direct[idx] += (d0 + (d1 - d0) * lambda) * (zs * dc + zc * ds);
                let s = zs * wc + zc * ws;
                zc = zc * wc - zs * ws;
                zs = s;
            }
            phase[k] = (phase[k] + w * (end - start) as f64).rem_euclid(2.0 * PI);
        }
    }
    Components { response, direct }
}

fn add_noise(
    signal: &mut [f64],
    response: &[f64],
    snr_db: Option<f64>,
    hum_gain: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let p_resp = response.iter().map(|v| v * v).sum::<f64>() / response.len() as f64;
    let measured = snr_db.map(|snr| {
        let sigma = (p_resp / 10f64.powf(snr / 10.0)).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut p_noise = 0.0;
        for v in signal.iter_mut() {
            let e = sigma * normal.sample(rng);
            p_noise += e * e;
            *v += e;
        }
        p_noise /= signal.len() as f64;
        10.0 * (p_resp / p_noise).log10()
    });
    if hum_gain > 0.0 {
        // 50 Hz plus 3 harmonics at 1, 1/2, 1/3, 1/4; sum of squares / 2 = 0.7118
        let amp = hum_gain * p_resp.sqrt() / (0.5f64 * (1.0 + 0.25 + 1.0 / 9.0 + 0.0625)).sqrt();
        let phases: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        for (i, v) in signal.iter_mut().enumerate() {
            let t = i as f64 / sample_rate as f64;
            *v += (1..=4)
                .map(|h| amp / h as f64 * (2.0 * PI * 50.0 * h as f64 * t + phases[h - 1]).sin())
                .sum::<f64>();
        }
    }
    measured
}

fn stft_geometry(sample_rate: u32, n: usize) -> (Vec<f64>, usize, usize) {
    let params = StftParams::default();
    let fft_len = params.fft_len(sample_rate);
    let bin_freqs = (0..=fft_len / 2)
        .map(|k| k as f64 * sample_rate as f64 / fft_len as f64)
        .collect();
    (bin_freqs, params.hop(sample_rate), params.frame_count(n, sample_rate))
}

fn render_scene(scene: &SceneSpec) -> Result<Components> {
    scene.validate()?;
    let sr = scene.sample_rate;
    let n = (scene.duration_s * sr as f64).round() as usize;
    if n == 0 {
        return Err(Error::Validation("scene shorter than one sample".into()));
    }
    let env = scene.envelope.interpolant();
    let contact = std::slice::from_ref(&scene.contact);
    Ok(render(
        &scene.excitation,
        contact,
        &|_| 0,
        scene.direct_path_gain,
        n,
        sr,
        scene.seed,
        |_, f| env.eval(f),
    ))
}

/// The tooth response `H * B * X` alone, before direct path and noise.
pub fn response_component(scene: &SceneSpec) -> Result<Vec<f64>> {
    Ok(render_scene(scene)?.response)
}

pub fn synthesize(scene: &SceneSpec) -> Result<(AudioRecording, GroundTruth)> {
    let comps = render_scene(scene)?;
    let sr = scene.sample_rate;
    let n = comps.response.len();
    let env = scene.envelope.interpolant();
    let mut samples: Vec<f64> = comps
        .response
        .iter()
        .zip(&comps.direct)
        .map(|(r, d)| r + d)
        .collect();
    let mut noise_rng = rng_for(scene.seed, &[0x6e6f6973]);
    let measured = add_noise(
        &mut samples,
        &comps.response,
        scene.noise_snr_db,
        scene.hum_gain,
        sr,
        &mut noise_rng,
    );

    let (bin_freqs, hop, n_frames) = stft_geometry(sr, n);
    let log_envelope = bin_freqs.iter().map(|&f| env.eval(f)).collect();
    let window = StftParams::default().window_len(sr);
    let frame_b_scale = (0..n_frames)
        .map(|i| {
            let t = (i * hop + window / 2) as f64 / sr as f64;
            scene.contact.scale_at(t)
        })
        .collect();
    let truth = GroundTruth {
        f0: scene.excitation.f0,
        n_harmonics: scene.excitation.harmonic_count(sr),
        bin_freqs,
        log_envelope,
        frame_b_scale,
        frame_labels: None,
        measured_snr_db: measured,
    };
    Ok((AudioRecording::new(samples, sr)?, truth))
}

/// One brushed tooth within a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSegment {
    pub tooth: ToothId,
    pub envelope: ResonanceEnvelope,
    pub dwell_s: f64,
    #[serde(default)]
    pub contact: Option<ContactSpec>,
}

/// Continuous brushing across `segments`: the excitation runs uninterrupted
/// while `H` crossfades over 20 ms at each boundary. `shared.duration_s` and
/// `shared.envelope` are ignored. Frame labels follow [`frame_label_time`].
pub fn synthesize_sequence(
    segments: &[SequenceSegment],
    shared: &SceneSpec,
) -> Result<(AudioRecording, GroundTruth)> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("sequence has no segments".into()));
    }
    if let Some(s) = segments.iter().find(|s| !(s.dwell_s > 0.0)) {
        return Err(Error::Validation(format!(
            "dwell {} s for tooth {} must be positive",
            s.dwell_s, s.tooth
        )));
    }
    let total: f64 = segments.iter().map(|s| s.dwell_s).sum();
    let mut scene = shared.clone();
    scene.duration_s = total;
    scene.validate()?;
    let sr = scene.sample_rate;
    let n = (total * sr as f64).round() as usize;
    let boundaries: Vec<f64> = segments
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.dwell_s;
            Some(*acc)
        })
        .collect();
    let segment_at = |t: f64| boundaries.partition_point(|&b| b <= t).min(segments.len() - 1);
    let envs: Vec<Pchip> = segments.iter().map(|s| s.envelope.interpolant()).collect();
    let contacts: Vec<ContactSpec> = segments
        .iter()
        .map(|s| s.contact.clone().unwrap_or_else(|| shared.contact.clone()))
        .collect();
    let frame_len = ((CONTROL_FRAME_S * sr as f64).round() as usize).max(1);
    let half_fade = CROSSFADE_S / 2.0;
    let log_h = |fr: usize, f: f64| {
        let t = (fr * frame_len) as f64 / sr as f64;
        let i = segment_at(t);
        // linear-amplitude crossfade centred on the nearest boundary
        let mix = |a: usize, b: usize, lambda: f64| {
            let ha = envs[a].eval(f).exp();
            let hb = envs[b].eval(f).exp();
            ((1.0 - lambda) * ha + lambda * hb).ln()
        };
        if i > 0 && t - boundaries[i - 1] < half_fade {
            let lambda = 0.5 + (t - boundaries[i - 1]) / CROSSFADE_S;
            return mix(i - 1, i, lambda);
        }
        if i + 1 < segments.len() && boundaries[i] - t < half_fade {
            let lambda = 0.5 - (boundaries[i] - t) / CROSSFADE_S;
            return mix(i, i + 1, lambda);
        }
        envs[i].eval(f)
    };
    let contact_of = |sample: usize| segment_at(sample as f64 / sr as f64);
    let comps = render(
        &scene.excitation,
        &contacts,
        &contact_of,
        scene.direct_path_gain,
        n,
        sr,
        scene.seed,
        log_h,
    );
    let mut samples: Vec<f64> = comps
        .response
        .iter()
        .zip(&comps.direct)
        .map(|(r, d)| r + d)
        .collect();
    let mut noise_rng = rng_for(scene.seed, &[0x6e6f6973]);
    let measured = add_noise(
        &mut samples,
        &comps.response,
        scene.noise_snr_db,
        scene.hum_gain,
        sr,
        &mut noise_rng,
    );

    let (bin_freqs, hop, n_frames) = stft_geometry(sr, n);
    let labels: Vec<ToothId> = (0..n_frames)
        .map(|i| segments[segment_at(frame_label_time(i, hop, sr))].tooth)
        .collect();
    let window = StftParams::default().window_len(sr);
    let frame_b_scale = (0..n_frames)
        .map(|i| {
            let t = (i * hop + window / 2) as f64 / sr as f64;
            contacts[segment_at(t)].scale_at(t)
        })
        .collect();
    let first = &envs[0];
    let truth = GroundTruth {
        f0: scene.excitation.f0,
        n_harmonics: scene.excitation.harmonic_count(sr),
        log_envelope: bin_freqs.iter().map(|&f| first.eval(f)).collect(),
        bin_freqs,
        frame_b_scale,
        frame_labels: Some(labels),
        measured_snr_db: measured,
    };
    Ok((AudioRecording::new(samples, sr)?, truth))
}

/// Random dwell times with ratios in `[lo, hi]` scaled to `mean_s` on average.
pub fn random_dwells(n: usize, lo: f64, hi: f64, mean_s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let ratios: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    let m = ratios.iter().sum::<f64>() / n.max(1) as f64;
    ratios.into_iter().map(|r| r / m * mean_s).collect()
}

/// Shuffle helper kept here so benchmarks and tests draw tooth orders the
/// same way.
pub fn shuffled<T: Clone>(items: &[T], rng: &mut impl Rng) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    v
}
