//! The operations behind each command-line subcommand. Every function takes
//! explicit paths and configuration and returns a serializable report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::{alignment_report, prepare_sequences, AlignmentReport};
use crate::audio::{load_session, load_wav, Condition, MeasurementSession, ToothId};
use crate::bench::{
    run_alignment_benchmark, run_detection_benchmark, write_alignment_table, write_auc_table,
    write_roc_table, AlignmentBenchConfig, AlignmentBenchResult, DetectionBenchConfig,
    DetectionBenchResult, ModeSummary,
};
use crate::cepstrum::{
    aggregate_signatures, reconstruct_component, signature_from_cepstrum, QuefrencySlice,
    ToothSignature,
};
use crate::detect::{
    aggregate_log_likelihood, classify, fit_profile, leave_one_out_scores, load_profile,
    save_profile, Decision, ReferenceProfile,
};
use crate::features::{apply_range_slice, fit_range, gains, FeatureRange, LabeledSignatureSet};
use crate::pipeline::{frame_cepstra, mean_cepstrum, preprocess, PipelineConfig};
use crate::scenario::load_truth;
use crate::spectral::{stft, write_spectrogram_csv, DEFAULT_LOG_FLOOR};
use crate::stats::median;
use crate::{Error, Result};

/// Benchmark bundled with the crate, used by `eval` without a spec file.
pub const BUNDLED_BENCHMARK: &str = include_str!("../benchmarks/default.json");

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = read_json(path.as_ref())?;
    cfg.validate()?;
    Ok(cfg)
}

/// One extracted measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureRecord {
    pub audio: PathBuf,
    pub teeth: Vec<ToothId>,
    pub condition: Option<Condition>,
    pub timestamp: String,
    pub n_frames: usize,
    pub signature: ToothSignature,
}

impl SignatureRecord {
    pub fn tooth(&self) -> ToothId {
        self.teeth[0]
    }
}

/// Signatures of every session entry, in manifest order.
pub fn extract_session(session: &MeasurementSession, cfg: &PipelineConfig) -> Result<Vec<SignatureRecord>> {
    cfg.validate()?;
    session
        .entries
        .iter()
        .map(|e| {
            let rec = load_wav(&e.audio)?;
            let clean = preprocess(&rec, cfg).map_err(|err| match err {
                Error::InsufficientData(msg) => {
                    Error::InsufficientData(format!("{}: {msg}", e.audio.display()))
                }
                other => other,
            })?;
            let sigs = frame_cepstra(&clean, cfg)?
                .iter()
                .map(|c| signature_from_cepstrum(c, cfg.partition))
                .collect::<Result<Vec<_>>>()?;
            Ok(SignatureRecord {
                audio: e.audio.clone(),
                teeth: e.teeth.clone(),
                condition: e.condition,
                timestamp: e.timestamp.clone(),
                n_frames: sigs.len(),
                signature: aggregate_signatures(&sigs)?,
            })
        })
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "measurement".into())
}

/// Write plot data for one recording: log spectrogram, mean cepstrum and the
/// three slice reconstructions.
pub fn write_plot_data(audio: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let clean = preprocess(&load_wav(audio)?, cfg)?;
    let name = stem(audio);
    let spec_path = out_dir.join(format!("{name}.spectrogram.csv"));
    write_spectrogram_csv(
        csv_file(&spec_path)?,
        &stft(&clean, cfg.stft_params())?,
        cfg.band,
        DEFAULT_LOG_FLOOR,
    )?;

    let mean = mean_cepstrum(&frame_cepstra(&clean, cfg)?)?;
    let cep_path = out_dir.join(format!("{name}.cepstrum.csv"));
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };
    let mut w = csv_file(&cep_path)?;
    writeln!(w, "index,coeff,slice").map_err(io(&cep_path))?;
    let len = mean.coeffs.len();
    for (i, c) in mean.coeffs.iter().enumerate() {
        let slice = [QuefrencySlice::Low, QuefrencySlice::Mid, QuefrencySlice::High]
            .into_iter()
            .find(|s| cfg.partition.range(*s, len).contains(&i))
            .map(|s| format!("{s:?}").to_lowercase())
            .unwrap_or_default();
        writeln!(w, "{i},{c},{slice}").map_err(io(&cep_path))?;
    }
    w.flush().map_err(io(&cep_path))?;

    let slices_path = out_dir.join(format!("{name}.slices.csv"));
    let parts = [QuefrencySlice::Low, QuefrencySlice::Mid, QuefrencySlice::High]
        .map(|s| reconstruct_component(&mean, s, cfg.partition));
    let [low, mid, high] = parts;
    let (low, mid, high) = (low?, mid?, high?);
    let full = crate::cepstrum::idct_ortho(&mean.coeffs);
    let mut w = csv_file(&slices_path)?;
    writeln!(w, "bin_freq,log_mag,low,mid,high").map_err(io(&slices_path))?;
    for i in 0..full.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            mean.bin_freqs[i], full[i], low.values[i], mid.values[i], high.values[i]
        )
        .map_err(io(&slices_path))?;
    }
    w.flush().map_err(io(&slices_path))?;
    Ok(vec![spec_path, cep_path, slices_path])
}

/// `extract`: one `<stem>.sig.json` per entry plus `signatures.json`.
pub fn cmd_extract(
    session_path: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
    plot_data: bool,
) -> Result<Vec<SignatureRecord>> {
    let session = load_session(session_path)?;
    let records = extract_session(&session, cfg)?;
    create_dir(out_dir)?;
    for r in &records {
        write_json(&out_dir.join(format!("{}.sig.json", stem(&r.audio))), r)?;
        if plot_data {
            write_plot_data(&r.audio, cfg, out_dir)?;
        }
    }
    write_json(&out_dir.join("signatures.json"), &records)?;
    Ok(records)
}

/// Feature ranges chosen by `select`, consumed by `enroll` and `align`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeSet {
    /// Healthy-versus-condition range for each disease.
    #[serde(default)]
    pub conditions: BTreeMap<Condition, FeatureRange>,
    /// Tooth-versus-tooth range for alignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teeth: Option<FeatureRange>,
}

impl RangeSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectTarget {
    /// One range per disease label, against the healthy entries.
    Condition,
    /// One range separating teeth.
    Tooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    pub ranges: RangeSet,
    /// Per-dimension gains behind each range, keyed by target name.
    pub gains: BTreeMap<String, Vec<f64>>,
}

pub fn select_ranges(records: &[SignatureRecord], target: SelectTarget, alpha: f64) -> Result<SelectReport> {
    let mut report = SelectReport {
        ranges: RangeSet::default(),
        gains: BTreeMap::new(),
    };
    match target {
        SelectTarget::Tooth => {
            let set = LabeledSignatureSet::new(
                records.iter().map(|r| r.signature.values.clone()).collect(),
                records.iter().map(|r| r.tooth().number() as u32).collect(),
            )?;
            report.ranges.teeth = Some(fit_range(&set, alpha)?);
            report.gains.insert("tooth".into(), gains(&set));
        }
        SelectTarget::Condition => {
            let healthy: Vec<&SignatureRecord> = records
                .iter()
                .filter(|r| r.condition == Some(Condition::Healthy))
                .collect();
            for disease in Condition::DISEASES {
                let sick: Vec<&SignatureRecord> =
                    records.iter().filter(|r| r.condition == Some(disease)).collect();
                if sick.is_empty() {
                    continue;
                }
                if healthy.is_empty() {
                    return Err(Error::InsufficientData(
                        "range selection needs healthy entries".into(),
                    ));
                }
                let set = LabeledSignatureSet::new(
                    healthy.iter().chain(&sick).map(|r| r.signature.values.clone()).collect(),
                    healthy.iter().map(|_| 0).chain(sick.iter().map(|_| 1)).collect(),
                )?;
                report.ranges.conditions.insert(disease, fit_range(&set, alpha)?);
                report.gains.insert(disease.as_str().into(), gains(&set));
            }
            if report.ranges.conditions.is_empty() {
                return Err(Error::InsufficientData(
                    "no entry carries a disease label".into(),
                ));
            }
        }
    }
    Ok(report)
}

/// `select`: writes the range set to `out` and `target,index,gain` rows to
/// `gains_csv` when given.
pub fn cmd_select(
    session_path: &Path,
    cfg: &PipelineConfig,
    target: SelectTarget,
    out: &Path,
    gains_csv: Option<&Path>,
) -> Result<SelectReport> {
    let records = extract_session(&load_session(session_path)?, cfg)?;
    let report = select_ranges(&records, target, cfg.alpha)?;
    write_json(out, &report.ranges)?;
    if let Some(path) = gains_csv {
        let io = |e| Error::io(path, e);
        let mut w = csv_file(path)?;
        writeln!(w, "target,index,gain").map_err(io)?;
        for (name, g) in &report.gains {
            for (i, v) in g.iter().enumerate() {
                writeln!(w, "{name},{i},{v}").map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    Ok(report)
}

pub fn profile_path(store: &Path, tooth: ToothId, condition: Condition) -> PathBuf {
    store
        .join(format!("tooth-{:02}", tooth.number()))
        .join(format!("{}.json", condition.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrolledProfile {
    pub tooth: ToothId,
    pub condition: Condition,
    pub version: u32,
    pub n_references: usize,
    pub range: FeatureRange,
    pub path: PathBuf,
}

/// Fit one profile per tooth and disease from healthy reference records.
/// Entries labeled with a disease are skipped.
pub fn enroll_records(
    records: &[SignatureRecord],
    store: &Path,
    cfg: &PipelineConfig,
    ranges: &RangeSet,
) -> Result<Vec<EnrolledProfile>> {
    let mut by_tooth: BTreeMap<ToothId, Vec<&SignatureRecord>> = BTreeMap::new();
    for r in records {
        match r.condition {
            None | Some(Condition::Healthy) | Some(Condition::Unknown) => {
                by_tooth.entry(r.tooth()).or_default().push(r)
            }
            Some(c) => log::warn!("{}: skipping {c} entry during enrollment", r.audio.display()),
        }
    }
    if by_tooth.is_empty() {
        return Err(Error::EmptyInput("no healthy reference measurements to enroll".into()));
    }
    let mut out = Vec::new();
    for (tooth, refs) in by_tooth {
        let dim = refs[0].signature.len();
        for condition in Condition::DISEASES {
            let range = match ranges.conditions.get(&condition) {
                Some(r) => *r,
                None => FeatureRange::full(dim)?,
            };
            let vectors = refs
                .iter()
                .map(|r| apply_range_slice(&r.signature.values, &range))
                .collect::<Result<Vec<_>>>()?;
            let mut profile = fit_profile(&vectors, cfg.kde_bandwidth, range, tooth, condition)?;
            profile.self_test = leave_one_out_scores(&vectors, cfg.kde_bandwidth)?;
            let path = profile_path(store, tooth, condition);
            if path.exists() {
                profile.version = load_profile(&path)?.version + 1;
            }
            if let Some(dir) = path.parent() {
                create_dir(dir)?;
            }
            save_profile(&path, &profile)?;
            out.push(EnrolledProfile {
                tooth,
                condition,
                version: profile.version,
                n_references: vectors.len(),
                range,
                path,
            });
        }
    }
    Ok(out)
}

pub fn cmd_enroll(
    session_path: &Path,
    cfg: &PipelineConfig,
    store: &Path,
    ranges: Option<&Path>,
) -> Result<Vec<EnrolledProfile>> {
    let session = load_session(session_path)?;
    if session.entries.is_empty() {
        return Err(Error::EmptyInput(format!(
            "session {} has no entries",
            session_path.display()
        )));
    }
    let ranges = match ranges {
        Some(p) => RangeSet::load(p)?,
        None => RangeSet::default(),
    };
    enroll_records(&extract_session(&session, cfg)?, store, cfg, &ranges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub tooth: ToothId,
    pub condition: Condition,
    pub profile_version: u32,
    pub k: usize,
    /// Sum of per-measurement log-likelihoods.
    pub log_likelihood: f64,
    pub mean_log_likelihood: f64,
    /// Median leave-one-out score of the references.
    pub self_test_median: Option<f64>,
    /// Flag when the sum falls below `k` times the lowest self-test score.
    pub threshold: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
    /// Teeth in the session without an enrolled profile.
    pub unenrolled: Vec<ToothId>,
}

/// Decision threshold for `k` aggregated measurements.
pub fn profile_threshold(profile: &ReferenceProfile, k: usize) -> f64 {
    match profile.self_test.iter().copied().reduce(f64::min) {
        Some(m) => m * k as f64,
        None => f64::NEG_INFINITY,
    }
}

/// Score the first `k` measurements of every tooth in `records` against its
/// enrolled profiles.
pub fn detect_records(records: &[SignatureRecord], store: &Path, k: usize) -> Result<DetectionReport> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let mut by_tooth: BTreeMap<ToothId, Vec<&SignatureRecord>> = BTreeMap::new();
    for r in records {
        by_tooth.entry(r.tooth()).or_default().push(r);
    }
    let short: Vec<String> = by_tooth
        .iter()
        .filter(|(_, v)| v.len() < k)
        .map(|(t, v)| format!("tooth {t} has {} (short by {})", v.len(), k - v.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientData(format!(
            "k = {k} measurements required: {}",
            short.join(", ")
        )));
    }
    let mut report = DetectionReport {
        rows: Vec::new(),
        unenrolled: Vec::new(),
    };
    for (tooth, recs) in by_tooth {
        let mut found = false;
        for condition in Condition::DISEASES {
            let path = profile_path(store, tooth, condition);
            if !path.exists() {
                continue;
            }
            found = true;
            let profile = load_profile(&path)?;
            let xs = recs[..k]
                .iter()
                .map(|r| apply_range_slice(&r.signature.values, &profile.range))
                .collect::<Result<Vec<_>>>()?;
            let score = aggregate_log_likelihood(&profile, &xs)?;
            let threshold = profile_threshold(&profile, k);
            report.rows.push(DetectionRow {
                tooth,
                condition,
                profile_version: profile.version,
                k,
                log_likelihood: score.log_likelihood,
                mean_log_likelihood: score.log_likelihood / k as f64,
                self_test_median: (!profile.self_test.is_empty()).then(|| median(&profile.self_test)),
                threshold,
                decision: classify(&score, threshold),
            });
        }
        if !found {
            log::warn!("no enrolled profile for tooth {tooth}");
            report.unenrolled.push(tooth);
        }
    }
    Ok(report)
}

pub fn cmd_detect(session_path: &Path, cfg: &PipelineConfig, store: &Path, k: usize) -> Result<DetectionReport> {
    let records = extract_session(&load_session(session_path)?, cfg)?;
    detect_records(&records, store, k)
}

/// Per-frame signatures of an alignment input: a session manifest (`.json`,
/// entries concatenated and labeled by their tooth) or a WAV file, labeled by
/// an optional ground-truth file.
pub fn load_frames(
    path: &Path,
    truth: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<(Vec<Vec<f64>>, Option<Vec<ToothId>>)> {
    let frames_of = |audio: &Path| -> Result<Vec<Vec<f64>>> {
        let clean = preprocess(&load_wav(audio)?, cfg)?;
        frame_cepstra(&clean, cfg)?
            .iter()
            .map(|c| Ok(signature_from_cepstrum(c, cfg.partition)?.values))
            .collect()
    };
    if path.extension().is_some_and(|e| e == "json") {
        let session = load_session(path)?;
        if session.entries.is_empty() {
            return Err(Error::EmptyInput(format!("session {} has no entries", path.display())));
        }
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for e in &session.entries {
            let f = frames_of(&e.audio)?;
            labels.extend(std::iter::repeat(e.primary_tooth()).take(f.len()));
            frames.extend(f);
        }
        return Ok((frames, Some(labels)));
    }
    let frames = frames_of(path)?;
    let labels = match truth {
        Some(t) => {
            let labels = load_truth(t)?.frame_labels.ok_or_else(|| {
                Error::Validation(format!("{} carries no frame labels", t.display()))
            })?;
            if labels.len() != frames.len() {
                return Err(Error::DimensionMismatch {
                    expected: frames.len(),
                    got: labels.len(),
                });
            }
            Some(labels)
        }
        None => None,
    };
    Ok((frames, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOutput {
    pub range: FeatureRange,
    pub report: AlignmentReport,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_align(
    reference: &Path,
    reference_truth: Option<&Path>,
    test: &Path,
    test_truth: Option<&Path>,
    cfg: &PipelineConfig,
    ranges: Option<&Path>,
    window: Option<usize>,
    out_dir: &Path,
) -> Result<AlignOutput> {
    let (ref_frames, ref_labels) = load_frames(reference, reference_truth, cfg)?;
    let ref_labels = ref_labels.ok_or_else(|| {
        Error::Validation("reference frames need labels: pass a session or a truth file".into())
    })?;
    let (test_frames, truth) = load_frames(test, test_truth, cfg)?;
    let range = match ranges {
        Some(p) => RangeSet::load(p)?.teeth,
        None => None,
    };
    let (range, r, t) = prepare_sequences(&ref_frames, ref_labels, &test_frames, range, cfg.alpha)?;
    let report = alignment_report(&r, &t, cfg.hop_seconds(), window, truth.as_deref())?;

    create_dir(out_dir)?;
    let out = AlignOutput { range, report };
    write_json(&out_dir.join("alignment.json"), &out)?;
    let path = out_dir.join("alignment.csv");
    let io = |e| Error::io(&path, e);
    let mut w = csv_file(&path)?;
    writeln!(w, "time_s,predicted_tooth,matched_ref_idx,baseline_tooth,true_tooth").map_err(io)?;
    for (i, f) in out.report.frames.iter().enumerate() {
        let truth = truth.as_ref().map(|l| l[i].to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{truth}",
            f.time_s, f.predicted_tooth, f.matched_ref_idx, f.baseline_tooth
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(out)
}

/// A benchmark spec: one seed and pipeline shared by the detection and
/// alignment parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub detection: Option<DetectionBenchConfig>,
    pub alignment: Option<AlignmentBenchConfig>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 0,
            pipeline: PipelineConfig::default(),
            detection: Some(DetectionBenchConfig::default()),
            alignment: Some(AlignmentBenchConfig::default()),
        }
    }
}

impl BenchmarkSpec {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_BENCHMARK).expect("bundled benchmark parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub detection: Vec<ModeSummary>,
    pub alignment: Option<AlignmentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub n_scenarios: usize,
    pub dtw_wins: usize,
    pub mean_dtw: crate::align::AlignmentMetrics,
    pub mean_baseline: crate::align::AlignmentMetrics,
}

pub struct EvalOutput {
    pub detection: Option<DetectionBenchResult>,
    pub alignment: Option<AlignmentBenchResult>,
}

pub fn run_eval(spec: &BenchmarkSpec) -> Result<EvalOutput> {
    let detection = match &spec.detection {
        Some(d) => Some(run_detection_benchmark(
            &DetectionBenchConfig {
                seed: spec.seed,
                ..d.clone()
            },
            &spec.pipeline,
        )?),
        None => None,
    };
    let alignment = match &spec.alignment {
        Some(a) => Some(run_alignment_benchmark(
            &AlignmentBenchConfig {
                seed: spec.seed,
                ..a.clone()
            },
            &spec.pipeline,
        )?),
        None => None,
    };
    Ok(EvalOutput {
        detection,
        alignment,
    })
}

/// `eval`: writes `auc.csv` and `roc.csv` for detection, `alignment.csv`
/// for alignment, and `summary.json`.
pub fn cmd_eval(spec: &BenchmarkSpec, out_dir: &Path) -> Result<EvalSummary> {
    let out = run_eval(spec)?;
    create_dir(out_dir)?;
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        let mut w = csv_file(&path)?;
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    if let Some(d) = &out.detection {
        write("auc.csv", &|w| write_auc_table(w, d))?;
        write("roc.csv", &|w| write_roc_table(w, d))?;
    }
    if let Some(a) = &out.alignment {
        write("alignment.csv", &|w| write_alignment_table(w, a))?;
    }
    let summary = EvalSummary {
        seed: spec.seed,
        detection: out.detection.map(|d| d.summaries).unwrap_or_default(),
        alignment: out.alignment.map(|a| AlignmentSummary {
            n_scenarios: a.scenarios.len(),
            dtw_wins: a.dtw_wins,
            mean_dtw: a.mean_dtw,
            mean_baseline: a.mean_baseline,
        }),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
