//! Simulation scenario files and their rendering to WAV plus ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_session, write_wav, Condition, MeasurementSession, SessionEntry, ToothId, WavEncoding};
use crate::bench::{condition_for, Variability};
use crate::rng::{derive_seed, rng_for};
use crate::synth::{
    make_envelope, perturb_envelope, synthesize, synthesize_sequence, ContactSpec, ExcitationSpec,
    GroundTruth, PerturbMode, ResonanceEnvelope, SceneSpec, SequenceSegment,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Separate recordings per tooth, listed in a session manifest.
    Measurements,
    /// One continuous recording brushing the teeth in order.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeSpec {
    pub n_peaks: usize,
    pub peak_gain_db: f64,
    /// Frequency range holding the resonances.
    pub band: (f64, f64),
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        EnvelopeSpec {
            n_peaks: 4,
            peak_gain_db: 15.0,
            band: (2000.0, 16000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mode: PerturbMode,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToothSpec {
    pub tooth: ToothId,
    #[serde(default = "default_dwell")]
    pub dwell_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Perturbation>,
    /// Manifest label; defaults to the condition the perturbation emulates,
    /// or healthy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

fn default_dwell() -> f64 {
    1.0
}

impl ToothSpec {
    pub fn label(&self) -> Condition {
        self.condition.unwrap_or(match self.perturb {
            Some(p) if p.severity > 0.0 => condition_for(p.mode),
            _ => Condition::Healthy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Seed of the tooth envelopes; defaults to `seed`. Keep it fixed and vary
    /// `seed` to record the same teeth again.
    pub envelope_seed: Option<u64>,
    pub sample_rate: u32,
    pub envelope: EnvelopeSpec,
    pub excitation: ExcitationSpec,
    pub contact: ContactSpec,
    /// Per-measurement contact draws; `contact` is used as is when absent.
    pub variability: Option<Variability>,
    pub direct_path_gain: f64,
    pub noise_snr_db: Option<f64>,
    pub hum_gain: f64,
    pub teeth: Vec<ToothSpec>,
    pub measurements_per_tooth: usize,
    pub encoding: WavEncoding,
}

impl Default for Scenario {
    fn default() -> Self {
        let scene = SceneSpec::default();
        Scenario {
            kind: ScenarioKind::Measurements,
            seed: 0,
            envelope_seed: None,
            sample_rate: scene.sample_rate,
            envelope: EnvelopeSpec::default(),
            excitation: scene.excitation,
            contact: scene.contact,
            variability: None,
            direct_path_gain: scene.direct_path_gain,
            noise_snr_db: scene.noise_snr_db,
            hum_gain: scene.hum_gain,
            teeth: vec![ToothSpec {
                tooth: ToothId::new(18).expect("valid tooth"),
                dwell_s: 1.0,
                perturb: None,
                condition: None,
            }],
            measurements_per_tooth: 1,
            encoding: WavEncoding::Float32,
        }
    }
}

/// Files written by [`render_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub recordings: Vec<PathBuf>,
    pub truths: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.teeth.is_empty() {
            return Err(Error::Validation("scenario lists no teeth".into()));
        }
        if self.kind == ScenarioKind::Measurements && self.measurements_per_tooth == 0 {
            return Err(Error::Validation("measurements_per_tooth must be >= 1".into()));
        }
        for t in &self.teeth {
            if !(t.dwell_s > 0.0) {
                return Err(Error::Validation(format!("tooth {}: dwell must be > 0", t.tooth)));
            }
            if let Some(p) = t.perturb {
                if !(0.0..=1.0).contains(&p.severity) {
                    return Err(Error::Validation(format!(
                        "tooth {}: severity {} outside [0, 1]",
                        t.tooth, p.severity
                    )));
                }
            }
        }
        self.scene(self.contact.clone(), 0, 1.0).validate()
    }

    /// Envelope of `tooth`, after its perturbation if any.
    pub fn envelope_for(&self, tooth: &ToothSpec) -> Result<ResonanceEnvelope> {
        let root = self.envelope_seed.unwrap_or(self.seed);
        let n = tooth.tooth.number() as u64;
        let e = &self.envelope;
        let env = make_envelope(e.n_peaks, e.band, e.peak_gain_db, derive_seed(root, &[n]))?;
        match tooth.perturb {
            Some(p) => perturb_envelope(&env, p.severity, p.mode, derive_seed(root, &[n, 1])),
            None => Ok(env),
        }
    }

    fn scene(&self, contact: ContactSpec, seed: u64, duration_s: f64) -> SceneSpec {
        SceneSpec {
            excitation: ExcitationSpec {
                seed: derive_seed(seed, &[1]),
                ..self.excitation.clone()
            },
            envelope: ResonanceEnvelope::flat((0.0, 22000.0)).expect("valid band"),
            contact,
            direct_path_gain: self.direct_path_gain,
            noise_snr_db: self.noise_snr_db,
            hum_gain: self.hum_gain,
            duration_s,
            sample_rate: self.sample_rate,
            seed: derive_seed(seed, &[2]),
        }
    }

    fn contact_for(&self, seed: u64) -> ContactSpec {
        match &self.variability {
            Some(v) => v.contact(&mut rng_for(seed, &[3])),
            None => self.contact.clone(),
        }
    }

    /// Scene of measurement `index` of `tooth` in a measurements scenario.
    pub fn measurement_scene(&self, tooth: &ToothSpec, index: usize) -> Result<SceneSpec> {
        let seed = derive_seed(self.seed, &[tooth.tooth.number() as u64, index as u64]);
        let mut scene = self.scene(self.contact_for(seed), seed, tooth.dwell_s);
        scene.envelope = self.envelope_for(tooth)?;
        Ok(scene)
    }

    pub fn sequence_segments(&self) -> Result<Vec<SequenceSegment>> {
        self.teeth
            .iter()
            .map(|t| {
                Ok(SequenceSegment {
                    tooth: t.tooth,
                    envelope: self.envelope_for(t)?,
                    dwell_s: t.dwell_s,
                    contact: None,
                })
            })
            .collect()
    }

    pub fn sequence_scene(&self) -> SceneSpec {
        let seed = derive_seed(self.seed, &[0x736571]);
        self.scene(self.contact_for(seed), seed, 1.0)
    }
}

fn timestamp(index: usize) -> String {
    let s = index % 60;
    let m = (index / 60) % 60;
    let h = (index / 3600) % 24;
    format!("2024-01-01T{h:02}:{m:02}:{s:02}Z")
}

fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let text = serde_json::to_string_pretty(truth)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Synthesize every recording of `scenario` into `out_dir`.
///
/// Measurements become `toothNN_III.wav` with a `.truth.json` sidecar and a
/// `session.json` manifest; a sequence becomes `sequence.wav` and
/// `sequence.truth.json`.
pub fn render_scenario(scenario: &Scenario, out_dir: impl AsRef<Path>) -> Result<SimulationOutput> {
    scenario.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = SimulationOutput {
        recordings: Vec::new(),
        truths: Vec::new(),
        manifest: None,
    };
    match scenario.kind {
        ScenarioKind::Measurements => {
            let mut session = MeasurementSession::default();
            for tooth in &scenario.teeth {
                for i in 0..scenario.measurements_per_tooth {
                    let (rec, truth) = synthesize(&scenario.measurement_scene(tooth, i)?)?;
                    let stem = format!("tooth{:02}_{i:03}", tooth.tooth.number());
                    let wav = out_dir.join(format!("{stem}.wav"));
                    let truth_path = out_dir.join(format!("{stem}.truth.json"));
                    write_wav(&wav, &rec, scenario.encoding)?;
                    write_truth(&truth_path, &truth)?;
                    session.entries.push(SessionEntry {
                        audio: wav.clone(),
                        teeth: vec![tooth.tooth],
                        condition: Some(tooth.label()),
                        timestamp: timestamp(i),
                    });
                    out.recordings.push(wav);
                    out.truths.push(truth_path);
                }
            }
            let manifest = out_dir.join("session.json");
            write_session(&manifest, &session)?;
            out.manifest = Some(manifest);
        }
        ScenarioKind::Sequence => {
            let (rec, truth) =
                synthesize_sequence(&scenario.sequence_segments()?, &scenario.sequence_scene())?;
            let wav = out_dir.join("sequence.wav");
            let truth_path = out_dir.join("sequence.truth.json");
            write_wav(&wav, &rec, scenario.encoding)?;
            write_truth(&truth_path, &truth)?;
            out.recordings.push(wav);
            out.truths.push(truth_path);
        }
    }
    Ok(out)
}

/// Draw a random tooth order for a quadrant, for building sequence scenarios.
pub fn random_teeth(quadrant: crate::audio::Quadrant, n: usize, seed: u64) -> Result<Vec<ToothId>> {
    let numbers: Vec<u8> = quadrant.tooth_numbers().collect();
    if n == 0 || n > numbers.len() {
        return Err(Error::Validation(format!("cannot pick {n} teeth from a quadrant")));
    }
    let first = rng_for(seed, &[]).gen_range(0..=numbers.len() - n);
    numbers[first..first + n].iter().map(|&t| ToothId::new(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::load_session;

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario {
            teeth: vec![ToothSpec {
                tooth: ToothId::new(3).unwrap(),
                dwell_s: 0.5,
                perturb: Some(Perturbation {
                    mode: PerturbMode::ShiftPeak,
                    severity: 0.5,
                }),
                condition: None,
            }],
            ..Default::default()
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.teeth[0].label(), Condition::Calculus);
        let minimal: Scenario = serde_json::from_str(r#"{"teeth": [{"tooth": 5}]}"#).unwrap();
        assert_eq!(minimal.teeth[0].dwell_s, 1.0);
        assert_eq!(minimal.teeth[0].label(), Condition::Healthy);
    }

    #[test]
    fn measurements_write_a_loadable_session() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario {
            measurements_per_tooth: 2,
            teeth: vec![ToothSpec {
                tooth: ToothId::new(18).unwrap(),
                dwell_s: 0.3,
                perturb: None,
                condition: None,
            }],
            ..Default::default()
        };
        let out = render_scenario(&s, dir.path()).unwrap();
        assert_eq!(out.recordings.len(), 2);
        let session = load_session(out.manifest.unwrap()).unwrap();
        assert_eq!(session.entries.len(), 2);
        assert_eq!(session.entries[1].condition, Some(Condition::Healthy));
        let truth = load_truth(&out.truths[0]).unwrap();
        assert_eq!(truth.f0, 260.0);
    }

    #[test]
    fn same_envelope_seed_same_teeth() {
        let a = Scenario::default();
        let b = Scenario {
            seed: 9,
            envelope_seed: Some(0),
            ..Default::default()
        };
        assert_eq!(a.envelope_for(&a.teeth[0]).unwrap(), b.envelope_for(&b.teeth[0]).unwrap());
        assert_ne!(
            a.measurement_scene(&a.teeth[0], 0).unwrap(),
            b.measurement_scene(&b.teeth[0], 0).unwrap()
        );
    }

    #[test]
    fn invalid_scenarios() {
        assert!(Scenario {
            teeth: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<Scenario>(r#"{"teeth": [{"tooth": 40}]}"#).is_err());
    }
}
