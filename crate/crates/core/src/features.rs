//! Discriminant gain per cepstral coefficient and contiguous range selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cepstrum::ToothSignature;
use crate::{Error, Result};

/// Floor applied to the within-class scatter.
pub const GAIN_EPSILON: f64 = 1e-12;

/// Feature vectors tagged with class ids.
#[derive(Debug, Clone)]
pub struct LabeledSignatureSet {
    vectors: Vec<Vec<f64>>,
    classes: Vec<u32>,
    dim: usize,
}

impl LabeledSignatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, classes: Vec<u32>) -> Result<Self> {
        if vectors.len() != classes.len() {
            return Err(Error::DimensionMismatch {
                expected: vectors.len(),
                got: classes.len(),
            });
        }
        let Some(first) = vectors.first() else {
            return Err(Error::EmptyInput("labeled set has no samples".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::EmptyInput("signatures have length 0".into()));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let mut distinct = classes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "feature selection needs at least 2 classes, got {}",
                distinct.len()
            )));
        }
        Ok(LabeledSignatureSet {
            vectors,
            classes,
            dim,
        })
    }

    pub fn from_signatures(samples: &[(ToothSignature, u32)]) -> Result<Self> {
        let (vectors, classes) = samples
            .iter()
            .map(|(s, c)| (s.values.clone(), *c))
            .unzip();
        Self::new(vectors, classes)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        let mut c = self.classes.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Subset by sample index; fails if fewer than two classes remain.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            indices.iter().map(|&i| self.classes[i]).collect(),
        )
    }
}

/// Inclusive index range `[start, end]` over a signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub start: usize,
    pub end: usize,
    pub alpha: f64,
}

impl FeatureRange {
    pub fn new(start: usize, end: usize, alpha: f64) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidRange(format!("start {start} > end {end}")));
        }
        Ok(FeatureRange { start, end, alpha })
    }

    /// The whole signature, `[0, len - 1]`.
    pub fn full(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidRange("empty signature".into()));
        }
        Ok(FeatureRange {
            start: 0,
            end: len - 1,
            alpha: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Between-class over within-class scatter of feature `i`.
pub fn gain(set: &LabeledSignatureSet, i: usize) -> Result<f64> {
    if i >= set.dim {
        return Err(Error::InvalidRange(format!(
            "feature {i} out of range for length {}",
            set.dim
        )));
    }
    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for (v, &c) in set.vectors.iter().zip(&set.classes) {
        let g = groups.entry(c).or_insert((0.0, 0));
        g.0 += v[i];
        g.1 += 1;
        total += v[i];
    }
    let grand = total / set.len() as f64;
    let means: BTreeMap<u32, f64> = groups
        .iter()
        .map(|(&c, &(sum, n))| (c, sum / n as f64))
        .collect();
    let between: f64 = groups
        .iter()
        .map(|(c, &(_, n))| n as f64 * (means[c] - grand).powi(2))
        .sum();
    let within: f64 = set
        .vectors
        .iter()
        .zip(&set.classes)
        .map(|(v, c)| (v[i] - means[c]).powi(2))
        .sum();
    Ok(between / within.max(GAIN_EPSILON))
}

/// Gain of every feature.
pub fn gains(set: &LabeledSignatureSet) -> Vec<f64> {
    (0..set.dim)
        .map(|i| gain(set, i).expect("index within dimension"))
        .collect()
}

/// Maximum-sum contiguous run of `gains - alpha`.
///
/// Ties go to the smallest start, then the smallest end. When every gain is
/// at most `alpha` this reduces to the first index of the largest gain.
pub fn select_range(gains: &[f64], alpha: f64) -> Result<FeatureRange> {
    if gains.is_empty() {
        return Err(Error::EmptyInput("no gains to select from".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Validation(format!("alpha must be > 0, got {alpha}")));
    }
    if let Some(i) = gains.iter().position(|g| g.is_nan()) {
        return Err(Error::Validation(format!("gain {i} is NaN")));
    }
    let mut best = (f64::NEG_INFINITY, 0, 0);
    let mut cur = 0.0;
    let mut cur_start = 0;
    for (j, g) in gains.iter().enumerate() {
        let v = g - alpha;
        if j == 0 || cur < 0.0 {
            cur = v;
            cur_start = j;
        } else {
            cur += v;
        }
        if cur > best.0 || (cur == best.0 && cur_start < best.1) {
            best = (cur, cur_start, j);
        }
    }
    Ok(FeatureRange {
        start: best.1,
        end: best.2,
        alpha,
    })
}

/// Sum of `gains - alpha` over `range`.
pub fn range_score(gains: &[f64], range: &FeatureRange) -> f64 {
    gains[range.start..=range.end]
        .iter()
        .map(|g| g - range.alpha)
        .sum()
}

/// Gains of `set`, then [`select_range`].
pub fn fit_range(set: &LabeledSignatureSet, alpha: f64) -> Result<FeatureRange> {
    select_range(&gains(set), alpha)
}

pub fn apply_range_slice(values: &[f64], range: &FeatureRange) -> Result<Vec<f64>> {
    if range.start > range.end || range.end >= values.len() {
        return Err(Error::InvalidRange(format!(
            "[{}, {}] does not fit a signature of length {}",
            range.start,
            range.end,
            values.len()
        )));
    }
    Ok(values[range.start..=range.end].to_vec())
}

pub fn apply_range(signature: &ToothSignature, range: &FeatureRange) -> Result<Vec<f64>> {
    apply_range_slice(&signature.values, range)
}

/// One fold per distinct group: `(fit indices, held-out indices)`.
pub fn leave_one_group_out(groups: &[u64]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut distinct = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct
        .into_iter()
        .map(|g| {
            let (held, fit): (Vec<usize>, Vec<usize>) =
                (0..groups.len()).partition(|&i| groups[i] == g);
            (fit, held)
        })
        .collect()
}

/// Ranges fit with each group held out in turn, keyed by the held-out group.
pub fn leave_one_group_out_ranges(
    set: &LabeledSignatureSet,
    groups: &[u64],
    alpha: f64,
) -> Result<BTreeMap<u64, FeatureRange>> {
    if groups.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            got: groups.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (fit, held) in leave_one_group_out(groups) {
        let range = fit_range(&set.subset(&fit)?, alpha)?;
        out.insert(groups[held[0]], range);
    }
    Ok(out)
}
