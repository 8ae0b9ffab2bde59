//! DTW alignment of brushing sequences against a labeled reference,
//! per-tooth grouping and the uniform-speed baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio::ToothId;
use crate::cepstrum::{aggregate_signatures, ToothSignature};
use crate::detect::STD_FLOOR;
use crate::features::{apply_range_slice, fit_range, FeatureRange, LabeledSignatureSet};
use crate::{Error, Result};

/// Per-frame feature vectors, optionally labeled with the tooth under the brush.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    features: Vec<Vec<f64>>,
    labels: Option<Vec<ToothId>>,
}

impl FrameSequence {
    pub fn new(features: Vec<Vec<f64>>, labels: Option<Vec<ToothId>>) -> Result<Self> {
        let Some(first) = features.first() else {
            return Err(Error::EmptyInput("frame sequence has no frames".into()));
        };
        let d = first.len();
        if let Some(f) = features.iter().find(|f| f.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != features.len() {
                return Err(Error::DimensionMismatch {
                    expected: features.len(),
                    got: l.len(),
                });
            }
        }
        Ok(FrameSequence { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[ToothId]> {
        self.labels.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalize every sequence with per-dimension statistics of `seqs[0]`,
/// the reference.
pub fn normalize_features(seqs: &[FrameSequence]) -> Result<(Vec<FrameSequence>, NormStats)> {
    let Some(reference) = seqs.first() else {
        return Err(Error::EmptyInput("no sequences to normalize".into()));
    };
    let d = reference.dim();
    let n = reference.len() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let m = reference.features.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = reference
            .features
            .iter()
            .map(|f| (f[j] - m).powi(2))
            .sum::<f64>()
            / n;
        mean[j] = m;
        std[j] = var.sqrt().max(STD_FLOOR);
    }
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
        let features = s
            .features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), sd)| (v - m) / sd)
                    .collect()
            })
            .collect();
        out.push(FrameSequence {
            features,
            labels: s.labels.clone(),
        });
    }
    Ok((out, NormStats { mean, std }))
}

/// Cut both sequences to `range`, or to a range fit on the reference frames
/// with teeth as classes, then normalize them with reference statistics.
pub fn prepare_sequences(
    reference: &[Vec<f64>],
    labels: Vec<ToothId>,
    test: &[Vec<f64>],
    range: Option<FeatureRange>,
    alpha: f64,
) -> Result<(FeatureRange, FrameSequence, FrameSequence)> {
    if labels.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: labels.len(),
        });
    }
    let range = match range {
        Some(r) => r,
        None => {
            let classes = labels.iter().map(|t| t.number() as u32).collect();
            fit_range(&LabeledSignatureSet::new(reference.to_vec(), classes)?, alpha)?
        }
    };
    let cut = |vs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        vs.iter().map(|v| apply_range_slice(v, &range)).collect()
    };
    let r = FrameSequence::new(cut(reference)?, Some(labels))?;
    let t = FrameSequence::new(cut(test)?, None)?;
    let (mut normed, _) = normalize_features(&[r, t])?;
    let t = normed.pop().expect("two sequences");
    let r = normed.pop().expect("two sequences");
    Ok((range, r, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    /// `(ref_idx, test_idx)` from `(0, 0)` to `(m - 1, n - 1)`.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Clone, Copy)]
enum Step {
    Start,
    Diagonal,
    Test,
    Ref,
}

/// Minimum-cost monotone alignment under squared Euclidean frame distance.
///
/// `band` limits `|i - j * (m - 1) / (n - 1)|`; it is widened to the slope of
/// the rescaled diagonal when narrower, so a path always exists.
pub fn dtw(reference: &FrameSequence, test: &FrameSequence, band: Option<usize>) -> Result<AlignmentPath> {
    if reference.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: test.dim(),
        });
    }
    let m = reference.len();
    let n = test.len();
    let slope = if n > 1 { (m - 1) as f64 / (n - 1) as f64 } else { 0.0 };
    let width = band.map(|w| (w as f64).max(slope.ceil()).max(1.0));
    let allowed = |i: usize, j: usize| match width {
        None => true,
        Some(w) => n == 1 || (i as f64 - j as f64 * slope).abs() <= w,
    };

    let mut cost = vec![f64::INFINITY; m * n];
    let mut step = vec![Step::Start; m * n];
    for i in 0..m {
        for j in 0..n {
            if !allowed(i, j) {
                continue;
            }
            let d = squared_distance(&reference.features[i], &test.features[j]);
            let idx = i * n + j;
            if i == 0 && j == 0 {
                cost[idx] = d;
                continue;
            }
            let mut best = (f64::INFINITY, Step::Start);
            if i > 0 && j > 0 {
                best = (cost[(i - 1) * n + j - 1], Step::Diagonal);
            }
            if j > 0 && cost[i * n + j - 1] < best.0 {
                best = (cost[i * n + j - 1], Step::Test);
            }
            if i > 0 && cost[(i - 1) * n + j] < best.0 {
                best = (cost[(i - 1) * n + j], Step::Ref);
            }
            cost[idx] = d + best.0;
            step[idx] = best.1;
        }
    }
    let total_cost = cost[m * n - 1];
    if !total_cost.is_finite() {
        return Err(Error::Validation(
            "no admissible alignment path within the band".into(),
        ));
    }
    let (mut i, mut j) = (m - 1, n - 1);
    let mut pairs = vec![(i, j)];
    loop {
        match step[i * n + j] {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::Test => j -= 1,
            Step::Ref => i -= 1,
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(AlignmentPath { pairs, total_cost })
}

/// Per test frame: the matched reference index (last match wins) and its label.
pub fn align_to_teeth(
    path: &AlignmentPath,
    reference: &FrameSequence,
) -> Result<Vec<(usize, ToothId)>> {
    let labels = reference
        .labels()
        .ok_or_else(|| Error::Validation("reference sequence has no labels".into()))?;
    let n = path.pairs.last().map(|p| p.1 + 1).unwrap_or(0);
    let mut out = vec![(0, labels[0]); n];
    for &(r, t) in &path.pairs {
        if r >= labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: r + 1,
            });
        }
        out[t] = (r, labels[r]);
    }
    Ok(out)
}

/// Constant-speed mapping: test frame `t` takes reference label `floor(t * m / n)`.
pub fn uniform_baseline(test_len: usize, reference: &FrameSequence) -> Result<Vec<ToothId>> {
    let labels = reference
        .labels()
        .ok_or_else(|| Error::Validation("reference sequence has no labels".into()))?;
    let m = labels.len();
    Ok((0..test_len).map(|t| labels[t * m / test_len]).collect())
}

/// Mean signature per tooth.
pub fn group_frames(
    labels: &[ToothId],
    signatures: &[ToothSignature],
) -> Result<BTreeMap<ToothId, ToothSignature>> {
    if labels.len() != signatures.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: signatures.len(),
        });
    }
    let mut groups: BTreeMap<ToothId, Vec<ToothSignature>> = BTreeMap::new();
    for (l, s) in labels.iter().zip(signatures) {
        groups.entry(*l).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(t, sigs)| Ok((t, aggregate_signatures(&sigs)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMetrics {
    pub accuracy: f64,
    pub mean_abs_tooth_error: f64,
}

pub fn alignment_metrics(predicted: &[ToothId], truth: &[ToothId]) -> Result<AlignmentMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no frames to score".into()));
    }
    let n = truth.len() as f64;
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let err: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.number() as f64 - t.number() as f64).abs())
        .sum();
    Ok(AlignmentMetrics {
        accuracy: hits as f64 / n,
        mean_abs_tooth_error: err / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub time_s: f64,
    pub predicted_tooth: ToothId,
    pub matched_ref_idx: usize,
    pub baseline_tooth: ToothId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub frames: Vec<AlignedFrame>,
    pub total_cost: f64,
    pub dtw: Option<AlignmentMetrics>,
    pub baseline: Option<AlignmentMetrics>,
}

/// Align, label, and score against `truth` when given.
pub fn alignment_report(
    reference: &FrameSequence,
    test: &FrameSequence,
    hop_seconds: f64,
    band: Option<usize>,
    truth: Option<&[ToothId]>,
) -> Result<AlignmentReport> {
    let path = dtw(reference, test, band)?;
    let matched = align_to_teeth(&path, reference)?;
    let baseline = uniform_baseline(test.len(), reference)?;
    let frames = matched
        .iter()
        .zip(&baseline)
        .enumerate()
        .map(|(t, (&(r, tooth), &b))| AlignedFrame {
            time_s: t as f64 * hop_seconds,
            predicted_tooth: tooth,
            matched_ref_idx: r,
            baseline_tooth: b,
        })
        .collect();
    let (dtw_metrics, baseline_metrics) = match truth {
        Some(truth) => {
            let predicted: Vec<ToothId> = matched.iter().map(|m| m.1).collect();
            (
                Some(alignment_metrics(&predicted, truth)?),
                Some(alignment_metrics(&baseline, truth)?),
            )
        }
        None => (None, None),
    };
    Ok(AlignmentReport {
        frames,
        total_cost: path.total_cost,
        dtw: dtw_metrics,
        baseline: baseline_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> FrameSequence {
        FrameSequence::new(values.iter().map(|&v| vec![v]).collect(), None).unwrap()
    }

    fn tooth(n: u8) -> ToothId {
        ToothId::new(n).unwrap()
    }

    fn labeled(values: &[f64], labels: &[u8]) -> FrameSequence {
        FrameSequence::new(
            values.iter().map(|&v| vec![v]).collect(),
            Some(labels.iter().map(|&l| tooth(l)).collect()),
        )
        .unwrap()
    }

    #[test]
    fn identical_is_diagonal() {
        let s = seq(&[1.0, 4.0, 2.0, 7.0]);
        let p = dtw(&s, &s, None).unwrap();
        assert_eq!(p.total_cost, 0.0);
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn two_by_three_example() {
        let p = dtw(&seq(&[0.0, 2.0]), &seq(&[0.0, 0.0, 2.0]), None).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (0, 1), (1, 2)]);
        assert_eq!(p.total_cost, 0.0);
    }

    #[test]
    fn duplicated_frames_map_to_source() {
        let r = labeled(&[0.0, 3.0, 1.0, 5.0], &[1, 2, 3, 4]);
        let t = seq(&[0.0, 0.0, 3.0, 3.0, 1.0, 1.0, 5.0, 5.0]);
        let p = dtw(&r, &t, None).unwrap();
        assert_eq!(p.total_cost, 0.0);
        let labels = align_to_teeth(&p, &r).unwrap();
        for (t, &(ri, l)) in labels.iter().enumerate() {
            assert_eq!(ri, t / 2);
            assert_eq!(l, tooth(ri as u8 + 1));
        }
    }

    #[test]
    fn last_match_wins() {
        let path = AlignmentPath {
            pairs: vec![(0, 0), (1, 0), (2, 1)],
            total_cost: 0.0,
        };
        let r = labeled(&[0.0, 1.0, 2.0], &[5, 6, 7]);
        let out = align_to_teeth(&path, &r).unwrap();
        assert_eq!(out, vec![(1, tooth(6)), (2, tooth(7))]);
        assert!(align_to_teeth(&path, &seq(&[0.0, 1.0, 2.0])).is_err());
    }

    #[test]
    fn band_matches_unbanded_near_diagonal() {
        let r = seq(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let t = seq(&[0.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let free = dtw(&r, &t, None).unwrap();
        let banded = dtw(&r, &t, Some(1)).unwrap();
        assert_eq!(free.total_cost, banded.total_cost);
        let far = seq(&[5.0, 5.0, 5.0, 5.0, 5.0, 0.0]);
        assert!(dtw(&r, &far, Some(1)).unwrap().total_cost >= dtw(&r, &far, None).unwrap().total_cost);
    }

    #[test]
    fn uniform_baseline_examples() {
        // indices 0, 2, 4
        let r = labeled(&[0.0; 6], &[1, 1, 2, 2, 2, 3]);
        assert_eq!(
            uniform_baseline(3, &r).unwrap(),
            vec![tooth(1), tooth(2), tooth(2)]
        );
        assert_eq!(uniform_baseline(6, &r).unwrap(), r.labels().unwrap());
        let twice = uniform_baseline(12, &r).unwrap();
        for t in 0..12 {
            assert_eq!(twice[t], r.labels().unwrap()[t / 2]);
        }
    }

    #[test]
    fn normalization() {
        let r = FrameSequence::new(vec![vec![3.0, 1.0], vec![7.0, 1.0]], None).unwrap();
        let t = FrameSequence::new(vec![vec![9.0, 1.0]], None).unwrap();
        let (out, stats) = normalize_features(&[r, t]).unwrap();
        assert_eq!(stats.mean, vec![5.0, 1.0]);
        assert_eq!(stats.std[0], 2.0);
        assert_eq!(out[1].features()[0], vec![2.0, 0.0]);
        assert_eq!(out[0].features()[0][1], 0.0);
        let bad = FrameSequence::new(vec![vec![1.0]], None).unwrap();
        assert!(normalize_features(&[out[0].clone(), bad]).is_err());
    }

    #[test]
    fn metrics_examples() {
        let m = alignment_metrics(
            &[tooth(18), tooth(18), tooth(19)],
            &[tooth(18), tooth(19), tooth(19)],
        )
        .unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.mean_abs_tooth_error - 1.0 / 3.0).abs() < 1e-15);
        let half = alignment_metrics(
            &[tooth(1), tooth(2), tooth(4), tooth(5)],
            &[tooth(1), tooth(2), tooth(3), tooth(4)],
        )
        .unwrap();
        assert_eq!((half.accuracy, half.mean_abs_tooth_error), (0.5, 0.5));
        assert!(alignment_metrics(&[tooth(1)], &[]).is_err());
    }

    #[test]
    fn grouping_means() {
        use crate::cepstrum::QuefrencyPartition;
        use crate::spectral::Band;
        let sig = |v: f64| ToothSignature {
            band: Band::new(2000.0, 16000.0),
            partition: QuefrencyPartition::default(),
            values: vec![v, 2.0 * v],
        };
        let labels = [tooth(1), tooth(2), tooth(1), tooth(2)];
        let sigs = [sig(1.0), sig(10.0), sig(3.0), sig(20.0)];
        let g = group_frames(&labels, &sigs).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[&tooth(1)].values, vec![2.0, 4.0]);
        assert_eq!(g[&tooth(2)].values, vec![15.0, 30.0]);
        assert!(group_frames(&labels[..3], &sigs).is_err());
    }

    #[test]
    fn report_self_alignment() {
        let r = labeled(&[0.0, 1.0, 5.0, 6.0], &[9, 9, 10, 10]);
        let rep = alignment_report(&r, &r, 0.0125, None, r.labels()).unwrap();
        assert_eq!(rep.dtw.unwrap().accuracy, 1.0);
        assert_eq!(rep.baseline.unwrap().accuracy, 1.0);
        assert_eq!(rep.frames[2].time_s, 0.025);
    }
}
