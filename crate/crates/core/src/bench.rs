//! Seeded synthetic benchmarks for detection and alignment.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    align_to_teeth, alignment_metrics, dtw, prepare_sequences, uniform_baseline, AlignmentMetrics,
};
use crate::audio::{Condition, Quadrant, ToothId};
use crate::cepstrum::ToothSignature;
use crate::detect::{aggregate_log_likelihood, fit_profile, roc_auc, RocResult};
use crate::features::{
    apply_range_slice, fit_range, leave_one_group_out, FeatureRange, LabeledSignatureSet,
};
use crate::pipeline::{frame_signatures, measurement_signature, PipelineConfig};
use crate::rng::{derive_seed, rng_for};
use crate::synth::{
    make_envelope, perturb_envelope, random_dwells, synthesize, synthesize_sequence,
    ContactSpec, ExcitationSpec, PerturbMode, ResonanceEnvelope, SceneSpec, SequenceSegment,
};
use crate::{Error, Result};

/// Which feature range the detector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeProtocol {
    /// Fit on extra healthy and damaged measurements of the same tooth,
    /// disjoint from references and tests.
    Validation,
    /// Fit on every other scenario's validation measurements.
    LeaveOneScenarioOut,
    /// Use the whole signature.
    Full,
}

/// Measurement-to-measurement variability of the simulated brushing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variability {
    pub strength: (f64, f64),
    /// Standard deviation of the contact tilt, nepers per octave.
    pub tilt_sd: f64,
    pub wobble_rate: (f64, f64),
    pub wobble_depth: f64,
}

impl Default for Variability {
    fn default() -> Self {
        Variability {
            strength: (0.6, 1.4),
            tilt_sd: 0.05,
            wobble_rate: (1.0, 4.0),
            wobble_depth: 0.2,
        }
    }
}

impl Variability {
    pub fn contact(&self, rng: &mut impl Rng) -> ContactSpec {
        ContactSpec {
            strength_scale: rng.gen_range(self.strength.0..=self.strength.1),
            tilt: self.tilt_sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            wobble_rate: rng.gen_range(self.wobble_rate.0..=self.wobble_rate.1),
            wobble_depth: self.wobble_depth,
            wobble_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionBenchConfig {
    pub n_scenarios: usize,
    pub n_references: usize,
    pub n_healthy_tests: usize,
    pub n_unhealthy_tests: usize,
    /// Healthy and damaged measurements per scenario used only for range fitting.
    pub n_validation: usize,
    pub modes: Vec<PerturbMode>,
    pub severity: f64,
    pub snr_db: Option<f64>,
    pub direct_path_gain: f64,
    pub hum_gain: f64,
    pub duration_s: f64,
    pub n_peaks: usize,
    pub peak_gain_db: f64,
    pub ks: Vec<usize>,
    pub protocol: RangeProtocol,
    pub variability: Variability,
    pub bootstrap_iters: usize,
    pub seed: u64,
}

impl Default for DetectionBenchConfig {
    fn default() -> Self {
        DetectionBenchConfig {
            n_scenarios: 50,
            n_references: 5,
            n_healthy_tests: 5,
            n_unhealthy_tests: 10,
            n_validation: 5,
            modes: vec![PerturbMode::RemovePeak],
            severity: 0.5,
            snr_db: Some(20.0),
            direct_path_gain: 0.5,
            hum_gain: 0.0,
            duration_s: 1.0,
            n_peaks: 4,
            peak_gain_db: 15.0,
            ks: vec![1, 3, 5],
            protocol: RangeProtocol::Validation,
            variability: Variability::default(),
            bootstrap_iters: 0,
            seed: 0,
        }
    }
}

/// Disease emulated by each perturbation in reports.
pub fn condition_for(mode: PerturbMode) -> Condition {
    match mode {
        PerturbMode::RemovePeak => Condition::Caries,
        PerturbMode::ShiftPeak => Condition::Calculus,
        PerturbMode::AddNotch => Condition::FoodImpaction,
    }
}

const TAG_ENV: u64 = 1;
const TAG_PERTURB: u64 = 2;
const TAG_MEAS: u64 = 3;
const TAG_SEQ: u64 = 4;

/// Signatures of one simulated tooth before and after damage.
#[derive(Debug, Clone)]
pub struct ScenarioSignatures {
    pub references: Vec<Vec<f64>>,
    pub healthy_tests: Vec<Vec<f64>>,
    pub unhealthy_tests: Vec<Vec<f64>>,
    pub validation_healthy: Vec<Vec<f64>>,
    pub validation_unhealthy: Vec<Vec<f64>>,
}

fn measurement_scene(
    cfg: &DetectionBenchConfig,
    envelope: &ResonanceEnvelope,
    seed: u64,
) -> SceneSpec {
    let mut rng = rng_for(seed, &[]);
    SceneSpec {
        excitation: ExcitationSpec {
            seed: rng.gen(),
            ..Default::default()
        },
        envelope: envelope.clone(),
        contact: cfg.variability.contact(&mut rng),
        direct_path_gain: cfg.direct_path_gain,
        noise_snr_db: cfg.snr_db,
        hum_gain: cfg.hum_gain,
        duration_s: cfg.duration_s,
        sample_rate: 44100,
        seed: rng.gen(),
    }
}

/// Synthesize and extract every measurement of scenario `s` for `mode`.
pub fn scenario_signatures(
    cfg: &DetectionBenchConfig,
    pipeline: &PipelineConfig,
    mode: PerturbMode,
    s: usize,
) -> Result<ScenarioSignatures> {
    let root = cfg.seed;
    let band = (pipeline.band.low, pipeline.band.high);
    let env = make_envelope(
        cfg.n_peaks,
        band,
        cfg.peak_gain_db,
        derive_seed(root, &[TAG_ENV, s as u64]),
    )?;
    let damaged = perturb_envelope(
        &env,
        cfg.severity,
        mode,
        derive_seed(root, &[TAG_PERTURB, s as u64, mode as u64]),
    )?;
    let draw = |group: u64, count: usize, envelope: &ResonanceEnvelope| -> Result<Vec<Vec<f64>>> {
        (0..count as u64)
            .map(|i| {
                let seed = derive_seed(root, &[TAG_MEAS, s as u64, mode as u64, group, i]);
                let (rec, _) = synthesize(&measurement_scene(cfg, envelope, seed))?;
                Ok(measurement_signature(&rec, pipeline)?.values)
            })
            .collect()
    };
    let need_validation = cfg.protocol != RangeProtocol::Full;
    let n_val = if need_validation { cfg.n_validation } else { 0 };
    Ok(ScenarioSignatures {
        references: draw(0, cfg.n_references, &env)?,
        healthy_tests: draw(1, cfg.n_healthy_tests, &env)?,
        unhealthy_tests: draw(2, cfg.n_unhealthy_tests, &damaged)?,
        validation_healthy: draw(3, n_val, &env)?,
        validation_unhealthy: draw(4, n_val, &damaged)?,
    })
}

fn validation_set(data: &[&ScenarioSignatures]) -> Result<LabeledSignatureSet> {
    let mut vectors = Vec::new();
    let mut classes = Vec::new();
    for d in data {
        for v in &d.validation_healthy {
            vectors.push(v.clone());
            classes.push(0);
        }
        for v in &d.validation_unhealthy {
            vectors.push(v.clone());
            classes.push(1);
        }
    }
    LabeledSignatureSet::new(vectors, classes)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Aggregated log-likelihood of every `k`-combination of `vectors`.
fn combo_scores(
    profile: &crate::detect::ReferenceProfile,
    vectors: &[Vec<f64>],
    k: usize,
) -> Result<Vec<f64>> {
    combinations(vectors.len(), k)
        .into_iter()
        .map(|c| {
            let xs: Vec<Vec<f64>> = c.iter().map(|&i| vectors[i].clone()).collect();
            Ok(aggregate_log_likelihood(profile, &xs)?.log_likelihood)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: usize,
    pub mode: PerturbMode,
    pub range: FeatureRange,
    /// AUC for each entry of `ks`.
    pub auc: Vec<f64>,
    pub healthy_scores: Vec<Vec<f64>>,
    pub unhealthy_scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: PerturbMode,
    pub condition: Condition,
    pub ks: Vec<usize>,
    /// Mean per-scenario AUC for each k.
    pub mean_auc: Vec<f64>,
    /// Scenarios whose AUC is non-decreasing in k.
    pub monotone_scenarios: usize,
    /// ROC over scores pooled across scenarios, per k.
    pub pooled: Vec<RocResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBenchResult {
    pub scenarios: Vec<ScenarioOutcome>,
    pub summaries: Vec<ModeSummary>,
}

fn score_scenario(
    cfg: &DetectionBenchConfig,
    data: &ScenarioSignatures,
    range: FeatureRange,
    mode: PerturbMode,
    s: usize,
    pipeline: &PipelineConfig,
) -> Result<ScenarioOutcome> {
    let cut = |vs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        vs.iter().map(|v| apply_range_slice(v, &range)).collect()
    };
    let refs = cut(&data.references)?;
    let healthy = cut(&data.healthy_tests)?;
    let unhealthy = cut(&data.unhealthy_tests)?;
    let tooth = ToothId::new(1)?;
    let profile = fit_profile(&refs, pipeline.kde_bandwidth, range, tooth, condition_for(mode))?;
    let mut auc = Vec::with_capacity(cfg.ks.len());
    let mut healthy_scores = Vec::new();
    let mut unhealthy_scores = Vec::new();
    for &k in &cfg.ks {
        let h = combo_scores(&profile, &healthy, k)?;
        let u = combo_scores(&profile, &unhealthy, k)?;
        if h.is_empty() || u.is_empty() {
            return Err(Error::InsufficientData(format!(
                "k = {k} exceeds the {} healthy / {} damaged test measurements",
                healthy.len(),
                unhealthy.len()
            )));
        }
        auc.push(roc_auc(&h, &u, 0, 0)?.auc);
        healthy_scores.push(h);
        unhealthy_scores.push(u);
    }
    Ok(ScenarioOutcome {
        scenario: s,
        mode,
        range,
        auc,
        healthy_scores,
        unhealthy_scores,
    })
}

pub fn run_detection_benchmark(
    cfg: &DetectionBenchConfig,
    pipeline: &PipelineConfig,
) -> Result<DetectionBenchResult> {
    pipeline.validate()?;
    if cfg.n_scenarios == 0 || cfg.ks.is_empty() || cfg.modes.is_empty() {
        return Err(Error::Validation(
            "benchmark needs scenarios, k values and perturbation modes".into(),
        ));
    }
    let mut scenarios = Vec::new();
    let mut summaries = Vec::new();
    for &mode in &cfg.modes {
        let data: Vec<ScenarioSignatures> = (0..cfg.n_scenarios)
            .map(|s| scenario_signatures(cfg, pipeline, mode, s))
            .collect::<Result<_>>()?;
        let sig_len = data[0].references[0].len();
        let ranges: Vec<FeatureRange> = match cfg.protocol {
            RangeProtocol::Full => vec![FeatureRange::full(sig_len)?; data.len()],
            RangeProtocol::Validation => data
                .iter()
                .map(|d| fit_range(&validation_set(&[d])?, pipeline.alpha))
                .collect::<Result<_>>()?,
            RangeProtocol::LeaveOneScenarioOut => {
                let groups: Vec<u64> = (0..data.len() as u64).collect();
                leave_one_group_out(&groups)
                    .into_iter()
                    .map(|(fit, _)| {
                        let subset: Vec<&ScenarioSignatures> = fit.iter().map(|&i| &data[i]).collect();
                        if subset.is_empty() {
                            return FeatureRange::full(sig_len);
                        }
                        fit_range(&validation_set(&subset)?, pipeline.alpha)
                    })
                    .collect::<Result<_>>()?
            }
        };
        let outcomes: Vec<ScenarioOutcome> = data
            .iter()
            .zip(&ranges)
            .enumerate()
            .map(|(s, (d, r))| score_scenario(cfg, d, *r, mode, s, pipeline))
            .collect::<Result<_>>()?;

        let nk = cfg.ks.len();
        let mean_auc = (0..nk)
            .map(|j| outcomes.iter().map(|o| o.auc[j]).sum::<f64>() / outcomes.len() as f64)
            .collect();
        let monotone_scenarios = outcomes
            .iter()
            .filter(|o| o.auc.windows(2).all(|w| w[1] >= w[0]))
            .count();
        let pooled = (0..nk)
            .map(|j| {
                let h: Vec<f64> = outcomes.iter().flat_map(|o| o.healthy_scores[j].clone()).collect();
                let u: Vec<f64> = outcomes.iter().flat_map(|o| o.unhealthy_scores[j].clone()).collect();
                roc_auc(&h, &u, cfg.bootstrap_iters, derive_seed(cfg.seed, &[0xb007, mode as u64, j as u64]))
            })
            .collect::<Result<_>>()?;
        summaries.push(ModeSummary {
            mode,
            condition: condition_for(mode),
            ks: cfg.ks.clone(),
            mean_auc,
            monotone_scenarios,
            pooled,
        });
        scenarios.extend(outcomes);
    }
    Ok(DetectionBenchResult {
        scenarios,
        summaries,
    })
}

/// `condition,k,mean_auc,pooled_auc,ci_low,ci_high,monotone_scenarios,n_scenarios`
pub fn write_auc_table<W: Write>(mut out: W, result: &DetectionBenchResult) -> std::io::Result<()> {
    writeln!(
        out,
        "condition,k,mean_auc,pooled_auc,ci_low,ci_high,monotone_scenarios,n_scenarios"
    )?;
    for s in &result.summaries {
        let n = result.scenarios.iter().filter(|o| o.mode == s.mode).count();
        for (j, k) in s.ks.iter().enumerate() {
            let (lo, hi) = s.pooled[j]
                .ci95
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.condition, k, s.mean_auc[j], s.pooled[j].auc, lo, hi, s.monotone_scenarios, n
            )?;
        }
    }
    Ok(())
}

/// Pooled ROC points of every condition and k:
/// `condition,k,fpr,tpr,threshold`.
pub fn write_roc_table<W: Write>(mut out: W, result: &DetectionBenchResult) -> std::io::Result<()> {
    writeln!(out, "condition,k,fpr,tpr,threshold")?;
    for s in &result.summaries {
        for (j, k) in s.ks.iter().enumerate() {
            for p in &s.pooled[j].points {
                writeln!(out, "{},{},{},{},{}", s.condition, k, p.fpr, p.tpr, p.threshold)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentBenchConfig {
    pub n_scenarios: usize,
    /// Teeth brushed per sequence, in quadrant order.
    pub n_teeth: usize,
    pub reference_dwell_s: f64,
    /// Test dwell ratios are drawn uniformly from this interval.
    pub dwell_ratio: (f64, f64),
    pub snr_db: Option<f64>,
    pub direct_path_gain: f64,
    pub n_peaks: usize,
    pub peak_gain_db: f64,
    pub band: Option<usize>,
    pub variability: Variability,
    pub seed: u64,
}

impl Default for AlignmentBenchConfig {
    fn default() -> Self {
        AlignmentBenchConfig {
            n_scenarios: 50,
            n_teeth: 4,
            reference_dwell_s: 1.0,
            dwell_ratio: (0.5, 2.0),
            snr_db: Some(20.0),
            direct_path_gain: 0.5,
            n_peaks: 4,
            peak_gain_db: 15.0,
            band: None,
            variability: Variability::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub scenario: usize,
    pub quadrant: Quadrant,
    pub dwells: Vec<f64>,
    pub range: FeatureRange,
    pub dtw: AlignmentMetrics,
    pub baseline: AlignmentMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBenchResult {
    pub scenarios: Vec<AlignmentOutcome>,
    pub dtw_wins: usize,
    pub mean_dtw: AlignmentMetrics,
    pub mean_baseline: AlignmentMetrics,
}

fn sequence_scene(cfg: &AlignmentBenchConfig, seed: u64) -> SceneSpec {
    let mut rng = rng_for(seed, &[]);
    SceneSpec {
        excitation: ExcitationSpec {
            seed: rng.gen(),
            ..Default::default()
        },
        contact: cfg.variability.contact(&mut rng),
        direct_path_gain: cfg.direct_path_gain,
        noise_snr_db: cfg.snr_db,
        seed: rng.gen(),
        ..Default::default()
    }
}

/// Per-frame signatures with their labels.
fn labeled_frames(
    segments: &[SequenceSegment],
    scene: &SceneSpec,
    pipeline: &PipelineConfig,
) -> Result<(Vec<ToothSignature>, Vec<ToothId>)> {
    let (rec, truth) = synthesize_sequence(segments, scene)?;
    let sigs = frame_signatures(&rec, pipeline)?;
    let labels = truth.frame_labels.expect("sequence truth carries labels");
    if sigs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: sigs.len(),
        });
    }
    Ok((sigs, labels))
}

/// Align one synthetic quadrant sequence against a uniform-dwell reference.
pub fn alignment_scenario(
    cfg: &AlignmentBenchConfig,
    pipeline: &PipelineConfig,
    s: usize,
) -> Result<AlignmentOutcome> {
    let root = cfg.seed;
    let mut rng = rng_for(root, &[TAG_SEQ, s as u64]);
    let quadrant = [
        Quadrant::UpperRight,
        Quadrant::UpperLeft,
        Quadrant::LowerLeft,
        Quadrant::LowerRight,
    ][rng.gen_range(0..4)];
    let numbers: Vec<u8> = quadrant.tooth_numbers().collect();
    let first = rng.gen_range(0..=numbers.len() - cfg.n_teeth.min(numbers.len()));
    let teeth: Vec<ToothId> = numbers[first..first + cfg.n_teeth.min(numbers.len())]
        .iter()
        .map(|&n| ToothId::new(n))
        .collect::<Result<_>>()?;
    let band = (pipeline.band.low, pipeline.band.high);
    let envelopes: Vec<ResonanceEnvelope> = teeth
        .iter()
        .map(|t| make_envelope(cfg.n_peaks, band, cfg.peak_gain_db, derive_seed(root, &[TAG_SEQ, s as u64, 1, t.number() as u64])))
        .collect::<Result<_>>()?;
    let dwells = random_dwells(teeth.len(), cfg.dwell_ratio.0, cfg.dwell_ratio.1, cfg.reference_dwell_s, &mut rng);
    let segments = |dw: &[f64]| -> Vec<SequenceSegment> {
        teeth
            .iter()
            .zip(&envelopes)
            .zip(dw)
            .map(|((t, e), &d)| SequenceSegment {
                tooth: *t,
                envelope: e.clone(),
                dwell_s: d,
                contact: None,
            })
            .collect()
    };
    let ref_dwells = vec![cfg.reference_dwell_s; teeth.len()];
    let (ref_sigs, ref_labels) = labeled_frames(
        &segments(&ref_dwells),
        &sequence_scene(cfg, derive_seed(root, &[TAG_SEQ, s as u64, 2])),
        pipeline,
    )?;
    let (test_sigs, test_labels) = labeled_frames(
        &segments(&dwells),
        &sequence_scene(cfg, derive_seed(root, &[TAG_SEQ, s as u64, 3])),
        pipeline,
    )?;

    let values = |sigs: &[ToothSignature]| sigs.iter().map(|s| s.values.clone()).collect::<Vec<_>>();
    let (range, reference, test) =
        prepare_sequences(&values(&ref_sigs), ref_labels, &values(&test_sigs), None, pipeline.alpha)?;
    let path = dtw(&reference, &test, cfg.band)?;
    let predicted: Vec<ToothId> = align_to_teeth(&path, &reference)?.into_iter().map(|m| m.1).collect();
    let baseline = uniform_baseline(test.len(), &reference)?;
    Ok(AlignmentOutcome {
        scenario: s,
        quadrant,
        dwells,
        range,
        dtw: alignment_metrics(&predicted, &test_labels)?,
        baseline: alignment_metrics(&baseline, &test_labels)?,
    })
}

pub fn run_alignment_benchmark(
    cfg: &AlignmentBenchConfig,
    pipeline: &PipelineConfig,
) -> Result<AlignmentBenchResult> {
    pipeline.validate()?;
    if cfg.n_scenarios == 0 || cfg.n_teeth < 2 {
        return Err(Error::Validation(
            "alignment benchmark needs scenarios and at least 2 teeth".into(),
        ));
    }
    let scenarios: Vec<AlignmentOutcome> = (0..cfg.n_scenarios)
        .map(|s| alignment_scenario(cfg, pipeline, s))
        .collect::<Result<_>>()?;
    let n = scenarios.len() as f64;
    let mean = |f: &dyn Fn(&AlignmentOutcome) -> AlignmentMetrics| AlignmentMetrics {
        accuracy: scenarios.iter().map(|o| f(o).accuracy).sum::<f64>() / n,
        mean_abs_tooth_error: scenarios.iter().map(|o| f(o).mean_abs_tooth_error).sum::<f64>() / n,
    };
    Ok(AlignmentBenchResult {
        dtw_wins: scenarios
            .iter()
            .filter(|o| o.dtw.accuracy > o.baseline.accuracy)
            .count(),
        mean_dtw: mean(&|o| o.dtw),
        mean_baseline: mean(&|o| o.baseline),
        scenarios,
    })
}

/// `scenario,quadrant,dtw_accuracy,baseline_accuracy,dtw_error,baseline_error`
pub fn write_alignment_table<W: Write>(mut out: W, result: &AlignmentBenchResult) -> std::io::Result<()> {
    writeln!(
        out,
        "scenario,quadrant,dtw_accuracy,baseline_accuracy,dtw_error,baseline_error"
    )?;
    for o in &result.scenarios {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            o.scenario,
            o.quadrant.as_str(),
            o.dtw.accuracy,
            o.baseline.accuracy,
            o.dtw.mean_abs_tooth_error,
            o.baseline.mean_abs_tooth_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_enumerate_subsets() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(5, 5), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(combinations(10, 3).len(), 120);
        assert!(combinations(3, 4).is_empty());
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
    }
}
