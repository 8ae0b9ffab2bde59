//! One-class detection: a Gaussian KDE over healthy reference features,
//! log-likelihood scoring with multi-measurement aggregation, and ROC/AUC
//! evaluation with bootstrap intervals.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Condition, ToothId};
use crate::features::FeatureRange;
use crate::rng::rng_for;
use crate::stats::quantile;
use crate::{Error, Result};

pub const STD_FLOOR: f64 = 1e-9;
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;
pub const DEFAULT_BOOTSTRAP_ITERS: usize = 1000;

/// Healthy-reference density model for one tooth and one target condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub tooth: ToothId,
    pub condition: Condition,
    pub range: FeatureRange,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub h: f64,
    /// Normalized reference vectors.
    pub reference_vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub version: u32,
    /// Leave-one-out scores of the references against the others.
    #[serde(default)]
    pub self_test: Vec<f64>,
}

impl ReferenceProfile {
    pub fn dim(&self) -> usize {
        self.norm_mean.len()
    }

    pub fn n_references(&self) -> usize {
        self.reference_vectors.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.norm_mean)
            .zip(&self.norm_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub log_likelihood: f64,
    pub n_measurements: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Healthy,
    Flagged,
}

/// Scott's rule on normalized data: `n^(-1/(d+4))`.
pub fn scott_bandwidth(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = vectors.first() else {
        return Err(Error::EmptyInput("no reference vectors".into()));
    };
    let d = first.len();
    if d == 0 {
        return Err(Error::EmptyInput("reference vectors have dimension 0".into()));
    }
    for v in vectors {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("reference vector has non-finite values".into()));
        }
    }
    Ok(d)
}

pub fn fit_profile(
    references: &[Vec<f64>],
    h: Option<f64>,
    range: FeatureRange,
    tooth: ToothId,
    condition: Condition,
) -> Result<ReferenceProfile> {
    let d = check_vectors(references)?;
    if range.len() != d {
        return Err(Error::DimensionMismatch {
            expected: range.len(),
            got: d,
        });
    }
    let n = references.len();
    let mut norm_mean = vec![0.0; d];
    let mut norm_std = vec![0.0; d];
    for j in 0..d {
        let m = references.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        let var = references.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / n as f64;
        norm_mean[j] = m;
        norm_std[j] = var.sqrt().max(STD_FLOOR);
    }
    let h = match h {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Validation(format!("bandwidth must be > 0, got {h}"))),
        None => scott_bandwidth(n, d),
    };
    let reference_vectors = references
        .iter()
        .map(|v| {
            v.iter()
                .zip(&norm_mean)
                .zip(&norm_std)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();
    Ok(ReferenceProfile {
        tooth,
        condition,
        range,
        norm_mean,
        norm_std,
        h,
        reference_vectors,
        version: 1,
        self_test: Vec::new(),
    })
}

/// `ln max(f(z), 1e-300)` for an already normalized query `z`.
fn log_density(profile: &ReferenceProfile, z: &[f64]) -> f64 {
    let h = profile.h;
    let d = z.len() as f64;
    let exponents: Vec<f64> = profile
        .reference_vectors
        .iter()
        .map(|r| {
            let sq: f64 = r.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
            -0.5 * sq / (h * h)
        })
        .collect();
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + exponents.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
    let log_f = lse
        - (profile.n_references() as f64).ln()
        - d * h.ln()
        - 0.5 * d * (2.0 * std::f64::consts::PI).ln();
    log_f.max(LIKELIHOOD_FLOOR.ln())
}

pub fn log_likelihood(profile: &ReferenceProfile, x: &[f64]) -> Result<DetectionScore> {
    let z = profile.normalize(x)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("query vector has non-finite values".into()));
    }
    Ok(DetectionScore {
        log_likelihood: log_density(profile, &z),
        n_measurements: 1,
    })
}

/// Sum of per-measurement log-likelihoods.
pub fn aggregate_log_likelihood(
    profile: &ReferenceProfile,
    xs: &[Vec<f64>],
) -> Result<DetectionScore> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no measurements to aggregate".into()));
    }
    let mut total = 0.0;
    for x in xs {
        total += log_likelihood(profile, x)?.log_likelihood;
    }
    Ok(DetectionScore {
        log_likelihood: total,
        n_measurements: xs.len(),
    })
}

pub fn classify(score: &DetectionScore, threshold: f64) -> Decision {
    if score.log_likelihood < threshold {
        Decision::Flagged
    } else {
        Decision::Healthy
    }
}

/// Each reference scored against a profile fit on the others (same bandwidth
/// rule). Empty when there is only one reference.
pub fn leave_one_out_scores(references: &[Vec<f64>], h: Option<f64>) -> Result<Vec<f64>> {
    let d = check_vectors(references)?;
    if references.len() < 2 {
        return Ok(Vec::new());
    }
    let range = FeatureRange::full(d)?;
    let tooth = ToothId::new(1)?;
    let mut out = Vec::with_capacity(references.len());
    for i in 0..references.len() {
        let rest: Vec<Vec<f64>> = references
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v.clone())
            .collect();
        let p = fit_profile(&rest, h, range, tooth, Condition::Healthy)?;
        out.push(log_likelihood(&p, &references[i])?.log_likelihood);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Flag when `score < threshold`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub ci95: Option<(f64, f64)>,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(format!("no {name} scores")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Points for thresholds at every distinct score plus `+inf`, from (0, 0)
/// to (1, 1). Unhealthy scores are the positives.
fn roc_points(healthy: &[f64], unhealthy: &[f64]) -> Vec<RocPoint> {
    let mut h = healthy.to_vec();
    let mut u = unhealthy.to_vec();
    h.sort_by(|a, b| a.total_cmp(b));
    u.sort_by(|a, b| a.total_cmp(b));
    let mut thresholds: Vec<f64> = h.iter().chain(&u).copied().collect();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (mut ih, mut iu) = (0, 0);
    thresholds
        .into_iter()
        .map(|t| {
            while ih < h.len() && h[ih] < t {
                ih += 1;
            }
            while iu < u.len() && u[iu] < t {
                iu += 1;
            }
            RocPoint {
                fpr: ih as f64 / h.len() as f64,
                tpr: iu as f64 / u.len() as f64,
                threshold: t,
            }
        })
        .collect()
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
        .sum()
}

fn auc_only(healthy: &[f64], unhealthy: &[f64]) -> f64 {
    trapezoid(&roc_points(healthy, unhealthy))
}

/// ROC sweep and trapezoidal AUC; with `bootstrap_iters > 0` also a
/// percentile 95% interval from resampling both lists.
pub fn roc_auc(
    healthy: &[f64],
    unhealthy: &[f64],
    bootstrap_iters: usize,
    seed: u64,
) -> Result<RocResult> {
    check_scores("healthy", healthy)?;
    check_scores("unhealthy", unhealthy)?;
    let points = roc_points(healthy, unhealthy);
    let auc = trapezoid(&points);
    let ci95 = (bootstrap_iters > 0).then(|| {
        let mut h = vec![0.0; healthy.len()];
        let mut u = vec![0.0; unhealthy.len()];
        let aucs: Vec<f64> = (0..bootstrap_iters as u64)
            .map(|b| {
                let mut rng = rng_for(seed, &[b]);
                for v in h.iter_mut() {
                    *v = healthy[rng.gen_range(0..healthy.len())];
                }
                for v in u.iter_mut() {
                    *v = unhealthy[rng.gen_range(0..unhealthy.len())];
                }
                auc_only(&h, &u)
            })
            .collect();
        (quantile(&aucs, 0.025), quantile(&aucs, 0.975))
    });
    Ok(RocResult { points, auc, ci95 })
}

pub fn write_roc_csv<W: Write>(mut out: W, roc: &RocResult) -> std::io::Result<()> {
    writeln!(out, "fpr,tpr,threshold")?;
    for p in &roc.points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
    }
    Ok(())
}

pub fn save_profile(path: impl AsRef<Path>, profile: &ReferenceProfile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(profile)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ReferenceProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p: ReferenceProfile = serde_json::from_str(&text)?;
    check_vectors(&p.reference_vectors)?;
    if p.norm_std.len() != p.dim() || p.reference_vectors[0].len() != p.dim() {
        return Err(Error::Validation(format!(
            "profile {} has inconsistent dimensions",
            path.display()
        )));
    }
    if !(p.h > 0.0) || p.norm_std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Validation(format!(
            "profile {} has non-positive bandwidth or std",
            path.display()
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_1d(refs: &[f64], h: f64) -> ReferenceProfile {
        // bypass normalization so the hand examples apply directly
        ReferenceProfile {
            tooth: ToothId::new(3).unwrap(),
            condition: Condition::Caries,
            range: FeatureRange::full(1).unwrap(),
            norm_mean: vec![0.0],
            norm_std: vec![1.0],
            h,
            reference_vectors: refs.iter().map(|&r| vec![r]).collect(),
            version: 1,
            self_test: vec![],
        }
    }

    #[test]
    fn single_reference_mode_density() {
        let s = log_likelihood(&profile_1d(&[0.0], 1.0), &[0.0]).unwrap();
        let expect = (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((s.log_likelihood - expect).abs() < 1e-12);
        assert!((s.log_likelihood + 0.9189385332).abs() < 1e-9);
    }

    #[test]
    fn two_reference_density() {
        let s = log_likelihood(&profile_1d(&[-1.0, 1.0], 1.0), &[0.0]).unwrap();
        assert!((s.log_likelihood.exp() - 0.24197072451914337).abs() < 1e-12);
    }

    #[test]
    fn scott_rule() {
        assert!((scott_bandwidth(4, 1) - 4f64.powf(-0.2)).abs() < 1e-15);
        assert!((scott_bandwidth(4, 1) - 0.7579).abs() < 1e-4);
        let refs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let p = fit_profile(
            &refs,
            None,
            FeatureRange::full(1).unwrap(),
            ToothId::new(1).unwrap(),
            Condition::Caries,
        )
        .unwrap();
        assert_eq!(p.h, scott_bandwidth(4, 1));
    }

    #[test]
    fn identical_references_floor_std() {
        let refs = vec![vec![2.0, 3.0]; 5];
        let p = fit_profile(
            &refs,
            None,
            FeatureRange::new(0, 1, 1.0).unwrap(),
            ToothId::new(1).unwrap(),
            Condition::Caries,
        )
        .unwrap();
        assert_eq!(p.n_references(), 5);
        assert!(p.norm_std.iter().all(|&s| s == STD_FLOOR));
        let at_ref = log_likelihood(&p, &[2.0, 3.0]).unwrap().log_likelihood;
        let off = log_likelihood(&p, &[2.0 + 1e-9, 3.0]).unwrap().log_likelihood;
        assert!(off < at_ref);
        // far queries hit the floor instead of -inf
        let far = log_likelihood(&p, &[3.0, 3.0]).unwrap().log_likelihood;
        assert_eq!(far, LIKELIHOOD_FLOOR.ln());
    }

    #[test]
    fn fit_errors() {
        let r = FeatureRange::full(1).unwrap();
        let t = ToothId::new(1).unwrap();
        assert!(fit_profile(&[], None, r, t, Condition::Caries).is_err());
        assert!(fit_profile(&[vec![1.0], vec![1.0, 2.0]], None, r, t, Condition::Caries).is_err());
        let p = fit_profile(&[vec![1.0], vec![2.0]], None, r, t, Condition::Caries).unwrap();
        assert!(matches!(
            log_likelihood(&p, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(fit_profile(&[vec![1.0]], Some(0.0), r, t, Condition::Caries).is_err());
    }

    #[test]
    fn aggregation_sums() {
        let p = profile_1d(&[-1.0, 1.0], 1.0);
        let one = log_likelihood(&p, &[0.3]).unwrap().log_likelihood;
        let agg = aggregate_log_likelihood(&p, &vec![vec![0.3]; 4]).unwrap();
        assert!((agg.log_likelihood - 4.0 * one).abs() < 1e-12);
        assert_eq!(agg.n_measurements, 4);
        assert!(aggregate_log_likelihood(&p, &[]).is_err());
    }

    #[test]
    fn classify_is_strict() {
        let s = |v| DetectionScore {
            log_likelihood: v,
            n_measurements: 1,
        };
        assert_eq!(classify(&s(-5.0), -3.0), Decision::Flagged);
        assert_eq!(classify(&s(-3.0), -3.0), Decision::Healthy);
        assert_eq!(classify(&s(-1.0), -3.0), Decision::Healthy);
    }

    #[test]
    fn roc_examples() {
        let r = roc_auc(&[1.0, 2.0, 3.0], &[-3.0, -2.0, -1.0], 0, 0).unwrap();
        assert_eq!(r.auc, 1.0);
        assert!(r.ci95.is_none());
        let r = roc_auc(&[1.0, 2.0], &[1.0, 2.0], 0, 0).unwrap();
        assert_eq!(r.auc, 0.5);
        let r = roc_auc(&[2.0, 0.0], &[1.0, -1.0], 0, 0).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(r.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert!(roc_auc(&[], &[1.0], 0, 0).is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_estimate() {
        let healthy: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let unhealthy: Vec<f64> = (0..30).map(|i| i as f64 * 0.1 - 1.0).collect();
        let r = roc_auc(&healthy, &unhealthy, 400, 7).unwrap();
        let (lo, hi) = r.ci95.unwrap();
        assert!(lo <= r.auc && r.auc <= hi);
        assert!(hi - lo > 0.0);
        assert_eq!(roc_auc(&healthy, &unhealthy, 400, 7).unwrap(), r);
    }

    #[test]
    fn roc_csv_and_profile_round_trip() {
        let r = roc_auc(&[1.0], &[0.0], 0, 0).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fpr,tpr,threshold\n"));
        assert!(text.trim_end().ends_with("1,1,inf"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = fit_profile(
            &[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.5, 0.5]],
            None,
            FeatureRange::new(4, 5, 1.0).unwrap(),
            ToothId::new(12).unwrap(),
            Condition::Calculus,
        )
        .unwrap();
        save_profile(&path, &p).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);
    }
}
