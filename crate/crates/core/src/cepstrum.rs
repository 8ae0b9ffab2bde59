//! Cepstral resonance signatures.
//!
//! The band-limited log spectrum of a measurement is the sum of three terms:
//! the slowly varying contact factor, the object's resonance envelope and the
//! rapidly oscillating excitation comb. Under an orthonormal DCT-II these
//! land in the low, middle and high quefrency slices respectively, so the
//! middle slice is kept as the signature.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Band, LogSpectrumFrame};

thread_local! {
    static PLANNER: RefCell<DctPlanner<f64>> = RefCell::new(DctPlanner::new());
}

fn plan(len: usize) -> Arc<dyn TransformType2And3<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_dct2(len))
}

/// Orthonormal DCT-II.
pub fn dct_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = x.to_vec();
    plan(n).process_dct2(&mut buf);
    let s0 = (1.0 / n as f64).sqrt();
    let s = (2.0 / n as f64).sqrt();
    buf[0] *= s0;
    for v in &mut buf[1..] {
        *v *= s;
    }
    buf
}

/// Inverse of [`dct_ortho`] (orthonormal DCT-III).
pub fn idct_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    let s = (2.0 / n as f64).sqrt();
    let mut buf: Vec<f64> = c.iter().map(|v| v * s).collect();
    buf[0] = 2.0 * c[0] * (1.0 / n as f64).sqrt();
    plan(n).process_dct3(&mut buf);
    buf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepstrumFrame {
    pub coeffs: Vec<f64>,
    pub band: Band,
    pub bin_freqs: Vec<f64>,
    pub source_frame_idx: usize,
}

/// Quefrency slices: low `[0, low_end)`, mid `[low_end, mid_end)`,
/// high `[mid_end, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuefrencyPartition {
    pub low_end: usize,
    pub mid_end: usize,
}

impl Default for QuefrencyPartition {
    fn default() -> Self {
        Self {
            low_end: 5,
            mid_end: 80,
        }
    }
}

impl QuefrencyPartition {
    pub fn new(low_end: usize, mid_end: usize) -> Result<Self> {
        if low_end == 0 || low_end >= mid_end {
            return Err(Error::InvalidPartition(format!(
                "need 0 < low_end < mid_end, got {low_end}, {mid_end}"
            )));
        }
        Ok(Self { low_end, mid_end })
    }

    pub fn check(&self, len: usize) -> Result<()> {
        Self::new(self.low_end, self.mid_end)?;
        if self.mid_end > len {
            return Err(Error::InvalidPartition(format!(
                "mid_end {} exceeds cepstrum length {len}",
                self.mid_end
            )));
        }
        Ok(())
    }

    pub fn signature_len(&self) -> usize {
        self.mid_end - self.low_end
    }

    pub fn range(&self, slice: QuefrencySlice, len: usize) -> std::ops::Range<usize> {
        match slice {
            QuefrencySlice::Low => 0..self.low_end,
            QuefrencySlice::Mid => self.low_end..self.mid_end,
            QuefrencySlice::High => self.mid_end..len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuefrencySlice {
    Low,
    Mid,
    High,
}

/// Mid-quefrency coefficients of a log spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToothSignature {
    pub band: Band,
    pub partition: QuefrencyPartition,
    pub values: Vec<f64>,
}

impl ToothSignature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn cepstrum(frame: &LogSpectrumFrame) -> Result<CepstrumFrame> {
    if frame.is_empty() {
        return Err(Error::EmptyInput("log spectrum frame is empty".into()));
    }
    Ok(CepstrumFrame {
        coeffs: dct_ortho(&frame.values),
        band: frame.band,
        bin_freqs: frame.bin_freqs.clone(),
        source_frame_idx: frame.frame_idx,
    })
}

pub fn signature_from_cepstrum(
    cep: &CepstrumFrame,
    partition: QuefrencyPartition,
) -> Result<ToothSignature> {
    partition.check(cep.coeffs.len())?;
    Ok(ToothSignature {
        band: cep.band,
        partition,
        values: cep.coeffs[partition.low_end..partition.mid_end].to_vec(),
    })
}

pub fn extract_signature(
    frame: &LogSpectrumFrame,
    partition: QuefrencyPartition,
) -> Result<ToothSignature> {
    partition.check(frame.len())?;
    signature_from_cepstrum(&cepstrum(frame)?, partition)
}

/// Inverse transform of one quefrency slice, other coefficients zeroed.
pub fn reconstruct_component(
    cep: &CepstrumFrame,
    slice: QuefrencySlice,
    partition: QuefrencyPartition,
) -> Result<LogSpectrumFrame> {
    let len = cep.coeffs.len();
    partition.check(len)?;
    let keep = partition.range(slice, len);
    let masked: Vec<f64> = cep
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| if keep.contains(&i) { c } else { 0.0 })
        .collect();
    Ok(LogSpectrumFrame {
        values: idct_ortho(&masked),
        band: cep.band,
        bin_freqs: cep.bin_freqs.clone(),
        frame_idx: cep.source_frame_idx,
    })
}

/// Sum of squared coefficients within one slice.
pub fn slice_energy(cep: &CepstrumFrame, slice: QuefrencySlice, partition: QuefrencyPartition) -> f64 {
    let range = partition.range(slice, cep.coeffs.len());
    cep.coeffs[range].iter().map(|c| c * c).sum()
}

/// Element-wise mean of signatures sharing band, partition and length.
pub fn aggregate_signatures(signatures: &[ToothSignature]) -> Result<ToothSignature> {
    let first = signatures
        .first()
        .ok_or_else(|| Error::EmptyInput("no signatures to aggregate".into()))?;
    let mut sum = vec![0.0; first.len()];
    for s in signatures {
        if s.partition != first.partition || s.band != first.band || s.len() != first.len() {
            return Err(Error::IncompatibleSignature(format!(
                "expected partition {:?}, band {:?}, length {}; got {:?}, {:?}, {}",
                first.partition,
                first.band,
                first.len(),
                s.partition,
                s.band,
                s.len()
            )));
        }
        for (acc, v) in sum.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    let k = signatures.len() as f64;
    Ok(ToothSignature {
        band: first.band,
        partition: first.partition,
        values: sum.into_iter().map(|v| v / k).collect(),
    })
}
