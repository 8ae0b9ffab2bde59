//! Audio recordings, tooth identifiers and measurement-session manifests.
//!
//! Recordings are read from RIFF/WAVE files holding 16-bit integer PCM or
//! 32-bit IEEE float samples. Multichannel files are reduced to channel 0.
//! Sessions are JSON manifests listing recordings together with the teeth
//! brushed and an optional condition label:
//!
//! ```json
//! {"entries": [{"audio": "rel/path.wav", "teeth": [18], "quadrant": "lower-left",
//!               "condition": "healthy", "timestamp": "2024-01-01T10:00:00Z"}]}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono PCM audio, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecording {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioRecording {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("recording has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        crate::stats::rms(&self.samples)
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!(
            "{}: only PCM and IEEE float WAV are accepted",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Read a WAV file, returning channel 0 scaled to [-1, 1].
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioRecording> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    if reader.duration() == 0 {
        return Err(Error::EmptyInput(format!("{}: no audio frames", path.display())));
    }
    if channels > 1 {
        log::warn!(
            "{}: {} channels, using channel 0 only",
            path.display(),
            channels
        );
    }

    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} samples (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no audio frames", path.display())));
    }
    AudioRecording::new(samples, spec.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Write a mono WAV. 16-bit output rounds to the nearest code and clips to
/// the representable range.
pub fn write_wav(
    path: impl AsRef<Path>,
    recording: &AudioRecording,
    encoding: WavEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: recording.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &recording.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)
            }
            WavEncoding::Float32 => writer.write_sample(s as f32),
        }
        .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    UpperRight,
    UpperLeft,
    LowerLeft,
    LowerRight,
}

impl Quadrant {
    /// Universal Numbering System range for the quadrant.
    pub fn tooth_numbers(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Quadrant::UpperRight => 1..=8,
            Quadrant::UpperLeft => 9..=16,
            Quadrant::LowerLeft => 17..=24,
            Quadrant::LowerRight => 25..=32,
        }
    }

    pub fn of_tooth(number: u8) -> Option<Quadrant> {
        match number {
            1..=8 => Some(Quadrant::UpperRight),
            9..=16 => Some(Quadrant::UpperLeft),
            17..=24 => Some(Quadrant::LowerLeft),
            25..=32 => Some(Quadrant::LowerRight),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::UpperRight => "upper-right",
            Quadrant::UpperLeft => "upper-left",
            Quadrant::LowerLeft => "lower-left",
            Quadrant::LowerRight => "lower-right",
        }
    }
}

/// A tooth in the Universal Numbering System (1-32).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ToothId(u8);

impl ToothId {
    pub fn new(number: u8) -> Result<Self> {
        if (1..=32).contains(&number) {
            Ok(Self(number))
        } else {
            Err(Error::Validation(format!(
                "tooth number {number} outside 1..=32"
            )))
        }
    }

    /// Checked constructor that also verifies quadrant membership.
    pub fn in_quadrant(number: u8, quadrant: Quadrant) -> Result<Self> {
        let tooth = Self::new(number)?;
        if !quadrant.tooth_numbers().contains(&number) {
            return Err(Error::Validation(format!(
                "tooth {number} is not in quadrant {}",
                quadrant.as_str()
            )));
        }
        Ok(tooth)
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn quadrant(self) -> Quadrant {
        Quadrant::of_tooth(self.0).expect("validated tooth number")
    }
}

impl TryFrom<u8> for ToothId {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        ToothId::new(n)
    }
}

impl From<ToothId> for u8 {
    fn from(t: ToothId) -> u8 {
        t.0
    }
}

impl fmt::Display for ToothId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Healthy,
    Caries,
    Calculus,
    FoodImpaction,
    Unknown,
}

impl Condition {
    pub const DISEASES: [Condition; 3] = [
        Condition::Caries,
        Condition::Calculus,
        Condition::FoodImpaction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Healthy => "healthy",
            Condition::Caries => "caries",
            Condition::Calculus => "calculus",
            Condition::FoodImpaction => "food-impaction",
            Condition::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Condition::Healthy,
            Condition::Caries,
            Condition::Calculus,
            Condition::FoodImpaction,
            Condition::Unknown,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionEntry {
    /// Audio path, resolved against the manifest directory.
    pub audio: PathBuf,
    /// One or two teeth brushed together.
    pub teeth: Vec<ToothId>,
    pub condition: Option<Condition>,
    pub timestamp: String,
}

impl SessionEntry {
    pub fn primary_tooth(&self) -> ToothId {
        self.teeth[0]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSession {
    pub entries: Vec<SessionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawManifest {
    entries: Vec<RawEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    audio: String,
    teeth: Vec<u8>,
    quadrant: Quadrant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    timestamp: String,
}

/// Parse a session manifest. Entries keep manifest order.
pub fn load_session(manifest_path: impl AsRef<Path>) -> Result<MeasurementSession> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let raw: RawManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(raw.entries.len());
    for (i, e) in raw.entries.into_iter().enumerate() {
        let ctx = |msg: String| Error::Validation(format!("entry {i} ({}): {msg}", e.audio));
        if e.teeth.is_empty() || e.teeth.len() > 2 {
            return Err(ctx(format!(
                "a segment holds 1 or 2 teeth, found {}",
                e.teeth.len()
            )));
        }
        let teeth = e
            .teeth
            .iter()
            .map(|&n| ToothId::in_quadrant(n, e.quadrant))
            .collect::<Result<Vec<_>>>()
            .map_err(|err| ctx(err.to_string()))?;
        let condition = match e.condition.as_deref() {
            None => None,
            Some(s) => Some(
                Condition::parse(s).ok_or_else(|| ctx(format!("unknown condition label {s:?}")))?,
            ),
        };
        if e.timestamp.trim().is_empty() {
            return Err(ctx("missing timestamp".into()));
        }
        for t in &teeth {
            if !seen.insert((*t, e.timestamp.clone())) {
                return Err(ctx(format!(
                    "duplicate measurement of tooth {t} at {}",
                    e.timestamp
                )));
            }
        }
        let audio = base.join(&e.audio);
        if !audio.is_file() {
            return Err(ctx(format!("audio file {} not found", audio.display())));
        }
        entries.push(SessionEntry {
            audio,
            teeth,
            condition,
            timestamp: e.timestamp,
        });
    }
    Ok(MeasurementSession { entries })
}

/// Write a manifest. Audio paths are stored relative to the manifest
/// directory when possible.
pub fn write_session(manifest_path: impl AsRef<Path>, session: &MeasurementSession) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let raw = RawManifest {
        entries: session
            .entries
            .iter()
            .map(|e| RawEntry {
                audio: e
                    .audio
                    .strip_prefix(base)
                    .unwrap_or(&e.audio)
                    .to_string_lossy()
                    .into_owned(),
                teeth: e.teeth.iter().map(|t| t.number()).collect(),
                quadrant: e.teeth[0].quadrant(),
                condition: e.condition.map(|c| c.as_str().to_string()),
                timestamp: e.timestamp.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw)?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}
