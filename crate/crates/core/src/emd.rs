//! Empirical mode decomposition and IMF-based noise suppression.
//!
//! Sifting uses natural cubic-spline envelopes through the local extrema.
//! Boundaries are handled by symmetric extension of the signal about its
//! end samples: the two extrema nearest each end are mirrored, and the end
//! sample itself joins the envelope whose extremum it forms under the
//! reflection.

use serde::{Deserialize, Serialize};

use crate::audio::AudioRecording;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdConfig {
    pub max_imfs: usize,
    /// Cauchy standard-deviation threshold that ends sifting.
    pub sift_tolerance: f64,
    pub max_sift_iterations: usize,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            max_imfs: 8,
            sift_tolerance: 0.05,
            max_sift_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImfDecomposition {
    /// IMF 1 (highest frequency) first.
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    /// Sifting iterations spent on each IMF.
    pub sift_iterations: Vec<usize>,
}

impl ImfDecomposition {
    /// Sum of all IMFs plus the residual.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

pub fn emd(signal: &[f64], max_imfs: usize, sift_tolerance: f64) -> Result<ImfDecomposition> {
    emd_with(
        signal,
        &EmdConfig {
            max_imfs,
            sift_tolerance,
            ..EmdConfig::default()
        },
    )
}

pub fn emd_with(signal: &[f64], config: &EmdConfig) -> Result<ImfDecomposition> {
    if signal.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "EMD needs at least 4 samples, got {}",
            signal.len()
        )));
    }
    if config.max_imfs == 0 {
        return Err(Error::Validation("max_imfs must be at least 1".into()));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("sample {i} is not finite")));
    }

    let n = signal.len();
    let mut sifter = Sifter::new(n);
    let mut residual = signal.to_vec();
    let mut imfs = Vec::new();
    let mut sift_iterations = Vec::new();

    while imfs.len() < config.max_imfs {
        sifter.find_extrema(&residual);
        if !sifter.has_enough_extrema() {
            break;
        }
        let mut h = residual.clone();
        let mut iters = 0;
        while iters < config.max_sift_iterations {
            if iters > 0 {
                sifter.find_extrema(&h);
                if !sifter.has_enough_extrema() {
                    break;
                }
            }
            sifter.envelope_mean(&h);
            iters += 1;
            let prev_energy: f64 = h.iter().map(|v| v * v).sum();
            let mut change = 0.0;
            for (hv, m) in h.iter_mut().zip(&sifter.mean) {
                *hv -= m;
                change += m * m;
            }
            if prev_energy == 0.0 || change / prev_energy < config.sift_tolerance {
                break;
            }
        }
        for (r, v) in residual.iter_mut().zip(&h) {
            *r -= v;
        }
        imfs.push(h);
        sift_iterations.push(iters);
    }

    Ok(ImfDecomposition {
        imfs,
        residual,
        sift_iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Extremum {
    pos: f64,
    value: f64,
}

fn refine(left: f64, centre: f64, right: f64, i: usize) -> Extremum {
    let curvature = left - 2.0 * centre + right;
    if curvature == 0.0 {
        return Extremum {
            pos: i as f64,
            value: centre,
        };
    }
    let offset = (0.5 * (left - right) / curvature).clamp(-0.5, 0.5);
    Extremum {
        pos: i as f64 + offset,
        value: centre - 0.25 * (left - right) * offset,
    }
}

/// Scratch buffers reused across sifting iterations.
struct Sifter {
    maxima: Vec<Extremum>,
    minima: Vec<Extremum>,
    knots_t: Vec<f64>,
    knots_y: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    mean: Vec<f64>,
    spline: SplineScratch,
}

impl Sifter {
    fn new(n: usize) -> Self {
        Self {
            maxima: Vec::new(),
            minima: Vec::new(),
            knots_t: Vec::new(),
            knots_y: Vec::new(),
            upper: vec![0.0; n],
            lower: vec![0.0; n],
            mean: vec![0.0; n],
            spline: SplineScratch::default(),
        }
    }

    fn has_enough_extrema(&self) -> bool {
        self.maxima.len() >= 2 && self.minima.len() >= 2
    }

    /// Interior local extrema; a flat plateau counts once, at its centre.
    /// Strict extrema are refined by a parabola through the three samples
    /// around them.
    fn find_extrema(&mut self, x: &[f64]) {
        self.maxima.clear();
        self.minima.clear();
        let n = x.len();
        let mut i = 1;
        while i + 1 < n {
            if x[i] == x[i - 1] {
                i += 1;
                continue;
            }
            let rising = x[i] > x[i - 1];
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 >= n {
                break;
            }
            let is_max = rising && x[j + 1] < x[i];
            let is_min = !rising && x[j + 1] > x[i];
            if is_max || is_min {
                let point = if i == j {
                    refine(x[i - 1], x[i], x[i + 1], i)
                } else {
                    Extremum {
                        pos: 0.5 * (i + j) as f64,
                        value: x[i],
                    }
                };
                if is_max {
                    self.maxima.push(point);
                } else {
                    self.minima.push(point);
                }
            }
            i = j + 1;
        }
    }

    fn envelope_mean(&mut self, x: &[f64]) {
        let n = x.len();
        let last = (n - 1) as f64;
        let (left_max, left_min) = mirror_end(&self.maxima, &self.minima, x[0]);
        let from_end = |v: &[Extremum]| -> Vec<Extremum> {
            v.iter()
                .rev()
                .map(|e| Extremum {
                    pos: last - e.pos,
                    value: e.value,
                })
                .collect()
        };
        let (right_max, right_min) =
            mirror_end(&from_end(&self.maxima), &from_end(&self.minima), x[n - 1]);
        for upper in [true, false] {
            let (idx, left, right) = if upper {
                (&self.maxima, &left_max, &right_max)
            } else {
                (&self.minima, &left_min, &right_min)
            };
            self.knots_t.clear();
            self.knots_y.clear();
            for p in left.iter().rev() {
                self.knots_t.push(p.pos);
                self.knots_y.push(p.value);
            }
            for p in idx {
                self.knots_t.push(p.pos);
                self.knots_y.push(p.value);
            }
            for p in right {
                self.knots_t.push(last - p.pos);
                self.knots_y.push(p.value);
            }
            let out = if upper {
                &mut self.upper
            } else {
                &mut self.lower
            };
            self.spline
                .fit_and_sample(&self.knots_t, &self.knots_y, out);
        }
        for ((m, u), l) in self.mean.iter_mut().zip(&self.upper).zip(&self.lower) {
            *m = 0.5 * (u + l);
        }
    }
}

const MIRRORED: usize = 2;

/// Mirrored knots beyond one end of the signal. Positions are distances from
/// that end, extrema ordered nearest first; returned knots have negative
/// positions, nearest first. The mirror axis is the first extremum unless the
/// end sample overshoots the first opposite extremum, in which case the end
/// itself is the axis and joins the knots.
fn mirror_end(
    maxima: &[Extremum],
    minima: &[Extremum],
    end_value: f64,
) -> (Vec<Extremum>, Vec<Extremum>) {
    let first_is_max = maxima[0].pos < minima[0].pos;
    let (same, other) = if first_is_max {
        (maxima, minima)
    } else {
        (minima, maxima)
    };
    let beyond = |v: f64, w: f64| if first_is_max { v > w } else { v < w };
    let take = |v: &[Extremum], from: usize, count: usize| -> Vec<Extremum> {
        v.iter().skip(from).take(count).copied().collect()
    };
    let reflect = |v: &[Extremum], axis: f64| -> Vec<Extremum> {
        v.iter()
            .map(|e| Extremum {
                pos: 2.0 * axis - e.pos,
                value: e.value,
            })
            .collect()
    };

    let (mut same_m, other_m) = if beyond(end_value, other[0].value) {
        let axis = same[0].pos;
        let s = reflect(&take(same, 1, MIRRORED), axis);
        let o = reflect(&take(other, 0, MIRRORED), axis);
        let reaches = |v: &[Extremum]| v.last().is_some_and(|e| e.pos < 0.0);
        if reaches(&s) && reaches(&o) {
            (s, o)
        } else {
            (
                reflect(&take(same, 0, MIRRORED), 0.0),
                reflect(&take(other, 0, MIRRORED), 0.0),
            )
        }
    } else {
        let mut o = vec![Extremum {
            pos: 0.0,
            value: end_value,
        }];
        o.extend(reflect(&take(other, 0, MIRRORED - 1), 0.0));
        (reflect(&take(same, 0, MIRRORED), 0.0), o)
    };
    same_m.retain(|e| e.pos < same[0].pos);
    if first_is_max {
        (same_m, other_m)
    } else {
        (other_m, same_m)
    }
}

#[derive(Default)]
struct SplineScratch {
    second: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl SplineScratch {
    /// Natural cubic spline through (t, y), sampled at 0, 1, ..., out.len()-1.
    /// Knots must be strictly increasing and bracket the sample range.
    fn fit_and_sample(&mut self, t: &[f64], y: &[f64], out: &mut [f64]) {
        let k = t.len();
        debug_assert!(k >= 2);
        debug_assert!(t.windows(2).all(|w| w[1] > w[0]));
        self.second.clear();
        self.second.resize(k, 0.0);
        if k > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let m = k - 2;
            self.c.clear();
            self.c.resize(m, 0.0);
            self.d.clear();
            self.d.resize(m, 0.0);
            for i in 0..m {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                let a = h0;
                let b = 2.0 * (h0 + h1);
                let c = h1;
                let r = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
                if i == 0 {
                    self.c[i] = c / b;
                    self.d[i] = r / b;
                } else {
                    let denom = b - a * self.c[i - 1];
                    self.c[i] = c / denom;
                    self.d[i] = (r - a * self.d[i - 1]) / denom;
                }
            }
            self.second[m] = self.d[m - 1];
            for i in (0..m - 1).rev() {
                self.second[i + 1] = self.d[i] - self.c[i] * self.second[i + 2];
            }
        }

        let mut seg = 0;
        for (pos, o) in out.iter_mut().enumerate() {
            let x = pos as f64;
            while seg + 2 < k && x > t[seg + 1] {
                seg += 1;
            }
            let h = t[seg + 1] - t[seg];
            let a = (t[seg + 1] - x) / h;
            let b = (x - t[seg]) / h;
            *o = a * y[seg]
                + b * y[seg + 1]
                + ((a * a * a - a) * self.second[seg] + (b * b * b - b) * self.second[seg + 1])
                    * h
                    * h
                    / 6.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub keep_imfs: usize,
    /// Block length for long recordings, seconds.
    pub block_s: f64,
    /// Fraction of a block shared with its neighbour and cross-faded.
    pub block_overlap: f64,
    pub sift_tolerance: f64,
    pub max_sift_iterations: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            keep_imfs: 2,
            block_s: 1.0,
            block_overlap: 0.1,
            sift_tolerance: 0.05,
            max_sift_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub recording: AudioRecording,
    /// IMFs retained in each processing block.
    pub imf_counts: Vec<usize>,
    /// True when at least one block yielded no IMF and was passed through.
    pub passthrough: bool,
}

/// Keep the sum of the first `keep_imfs` IMFs.
pub fn denoise(recording: &AudioRecording, keep_imfs: usize) -> Result<DenoiseOutput> {
    denoise_with(
        recording,
        &DenoiseConfig {
            keep_imfs,
            ..DenoiseConfig::default()
        },
    )
}

pub fn denoise_with(recording: &AudioRecording, config: &DenoiseConfig) -> Result<DenoiseOutput> {
    if config.keep_imfs == 0 {
        return Err(Error::Validation("keep_imfs must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&config.block_overlap) || !(config.block_s > 0.0) {
        return Err(Error::Validation("invalid denoise block geometry".into()));
    }
    let x = recording.samples();
    let n = x.len();
    let emd_cfg = EmdConfig {
        max_imfs: config.keep_imfs,
        sift_tolerance: config.sift_tolerance,
        max_sift_iterations: config.max_sift_iterations,
    };

    let block_len = ((config.block_s * recording.sample_rate() as f64).round() as usize).max(16);
    let overlap = (config.block_overlap * block_len as f64).round() as usize;
    let starts: Vec<usize> = if n <= block_len {
        vec![0]
    } else {
        let step = block_len - overlap;
        let count = 1 + (n - block_len).div_ceil(step);
        (0..count)
            .map(|b| if b + 1 == count { n - block_len } else { b * step })
            .collect()
    };

    let mut out = vec![0.0; n];
    let mut weight = vec![0.0; n];
    let mut imf_counts = Vec::with_capacity(starts.len());
    let mut passthrough = false;
    for (b, &start) in starts.iter().enumerate() {
        let end = (start + block_len).min(n);
        let block = &x[start..end];
        let kept = if block.len() < 4 {
            None
        } else {
            let dec = emd_with(block, &emd_cfg)?;
            imf_counts.push(dec.imfs.len());
            if dec.imfs.is_empty() {
                None
            } else {
                let mut sum = vec![0.0; block.len()];
                for imf in &dec.imfs {
                    for (s, v) in sum.iter_mut().zip(imf) {
                        *s += v;
                    }
                }
                Some(sum)
            }
        };
        let kept = kept.unwrap_or_else(|| {
            passthrough = true;
            block.to_vec()
        });

        let fade_in = if b > 0 {
            (starts[b - 1] + block_len).min(n).saturating_sub(start)
        } else {
            0
        };
        let fade_out = if b + 1 < starts.len() {
            end.saturating_sub(starts[b + 1])
        } else {
            0
        };
        let len = end - start;
        for (i, v) in kept.iter().enumerate() {
            let mut w = 1.0;
            if i < fade_in {
                w *= (std::f64::consts::FRAC_PI_2 * (i as f64 + 0.5) / fade_in as f64)
                    .sin()
                    .powi(2);
            }
            let from_end = len - 1 - i;
            if from_end < fade_out {
                w *= (std::f64::consts::FRAC_PI_2 * (from_end as f64 + 0.5) / fade_out as f64)
                    .sin()
                    .powi(2);
            }
            out[start + i] += w * v;
            weight[start + i] += w;
        }
    }
    for (o, w) in out.iter_mut().zip(&weight) {
        if *w > 0.0 {
            *o /= w;
        }
    }
    if passthrough {
        log::warn!("EMD produced no IMF for at least one block; passing input through");
    }
    Ok(DenoiseOutput {
        recording: AudioRecording::new(out, recording.sample_rate())?,
        imf_counts,
        passthrough,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{l2_norm, pearson};
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, sr: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn spline_reproduces_cubic_interior_and_line() {
        let mut s = SplineScratch::default();
        // A straight line is reproduced exactly by a natural spline.
        let t = [-3.0, 0.0, 2.0, 5.0, 9.0, 12.0];
        let y: Vec<f64> = t.iter().map(|v| 2.0 * v - 1.0).collect();
        let mut out = vec![0.0; 10];
        s.fit_and_sample(&t, &y, &mut out);
        for (i, v) in out.iter().enumerate() {
            assert!((v - (2.0 * i as f64 - 1.0)).abs() < 1e-12);
        }
        // Knot values are interpolated.
        let t = [-1.0, 0.0, 3.0, 4.0, 7.0];
        let y = [1.0, -2.0, 0.5, 3.0, -1.0];
        let mut out = vec![0.0; 8];
        s.fit_and_sample(&t, &y, &mut out);
        assert!((out[0] + 2.0).abs() < 1e-12);
        assert!((out[3] - 0.5).abs() < 1e-12);
        assert!((out[4] - 3.0).abs() < 1e-12);
        assert!((out[7] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn extrema_with_plateaus() {
        let mut s = Sifter::new(9);
        s.find_extrema(&[0.0, 1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 0.0, 0.0]);
        let pos = |v: &[Extremum]| v.iter().map(|e| e.pos).collect::<Vec<_>>();
        assert_eq!(pos(&s.maxima), vec![2.0]);
        assert_eq!(pos(&s.minima), vec![5.5]);
    }

    #[test]
    fn pure_tone_is_one_mode() {
        let x = tone(5000.0, 1.0, 44100.0, 8820);
        let dec = emd(&x, 4, 0.05).unwrap();
        assert!(!dec.imfs.is_empty());
        assert!(pearson(&dec.imfs[0], &x) >= 0.99);
        let rest: Vec<f64> = x.iter().zip(&dec.imfs[0]).map(|(a, b)| a - b).collect();
        assert!(l2_norm(&rest) < 0.01 * l2_norm(&x));
    }

    #[test]
    fn two_tones_separate() {
        let hi = tone(8000.0, 1.0, 44100.0, 8820);
        let lo = tone(200.0, 1.0, 44100.0, 8820);
        let x: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a + b).collect();
        let dec = emd(&x, 4, 0.05).unwrap();
        assert!(pearson(&dec.imfs[0], &hi) >= 0.95);
    }

    #[test]
    fn completeness_exact() {
        let x: Vec<f64> = (0..5000)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0 + (i as f64 * 0.01).sin())
            .collect();
        let dec = emd(&x, 6, 0.05).unwrap();
        let rec = dec.reconstruct();
        let err: f64 = rec.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * l2_norm(&x));
    }

    #[test]
    fn monotone_signal_is_residual() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64).powi(2)).collect();
        let dec = emd(&x, 3, 0.05).unwrap();
        assert!(dec.imfs.is_empty());
        assert_eq!(dec.residual, x);
    }

    #[test]
    fn precondition_errors() {
        assert!(emd(&[1.0, 2.0, 3.0], 2, 0.05).is_err());
        assert!(emd(&[1.0, 2.0, 3.0, 4.0], 0, 0.05).is_err());
    }

    #[test]
    fn zero_signal_passes_through() {
        let rec = AudioRecording::new(vec![0.0; 1000], 44100).unwrap();
        let out = denoise(&rec, 2).unwrap();
        assert!(out.passthrough);
        assert!(out.recording.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn narrowband_tone_survives_denoise() {
        let x = tone(9000.0, 0.5, 44100.0, 22050);
        let rec = AudioRecording::new(x.clone(), 44100).unwrap();
        let out = denoise(&rec, 2).unwrap();
        assert!(pearson(out.recording.samples(), &x) >= 0.99);
    }

    #[test]
    fn blocked_denoise_covers_long_input() {
        // 2.5 s forces three blocks, the last one aligned to the end.
        let x = tone(6000.0, 0.5, 8000.0 * 2.0, 40000);
        let rec = AudioRecording::new(x.clone(), 16000).unwrap();
        let out = denoise(&rec, 2).unwrap();
        assert_eq!(out.imf_counts.len(), 3);
        assert_eq!(out.recording.len(), x.len());
        assert!(pearson(out.recording.samples(), &x) >= 0.99);
    }

    #[test]
    fn denoise_is_scale_equivariant() {
        let x: Vec<f64> = tone(7000.0, 0.3, 44100.0, 6000)
            .iter()
            .zip(tone(300.0, 0.5, 44100.0, 6000))
            .map(|(a, b)| a + b)
            .collect();
        let a = denoise(&AudioRecording::new(x.clone(), 44100).unwrap(), 2).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let b = denoise(&AudioRecording::new(scaled, 44100).unwrap(), 2).unwrap();
        for (u, v) in a.recording.samples().iter().zip(b.recording.samples()) {
            assert!((2.5 * u - v).abs() < 1e-9);
        }
    }
}
