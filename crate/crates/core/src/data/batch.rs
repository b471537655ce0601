use super::Dataset;
use crate::error::{BatError, Result};
use crate::numerics::Tensor;

/// Dense, padded model input for a group of samples.
///
/// Samples shorter than the longest one are padded at the end; padded rows
/// have `padding == 0` and an all-zero mask.
#[derive(Clone, Debug)]
pub struct Batch {
    pub b: usize,
    pub t: usize,
    pub d: usize,
    /// `[B, T, D]`, missing and padded cells set to zero.
    pub values: Tensor,
    /// `[B, T, D]`, 1 where a value was observed.
    pub mask: Tensor,
    /// `[B, T]`, padded entries zero.
    pub times: Tensor,
    /// `[B, T]`, 1 for real time steps.
    pub padding: Tensor,
    /// `[B, P]`.
    pub demographics: Tensor,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
}

impl Batch {
    /// Builds a batch from a standardized dataset.
    pub fn from_dataset(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
        if !dataset.is_standardized() {
            return Err(BatError::State(format!("dataset {} must be standardized before batching", dataset.name)));
        }
        if indices.is_empty() {
            return Err(BatError::Argument("empty batch".into()));
        }
        let b = indices.len();
        let d = dataset.n_sensors();
        let p = dataset.n_demographics();
        let mut t = 0;
        for &i in indices {
            let s = dataset
                .samples
                .get(i)
                .ok_or_else(|| BatError::Argument(format!("sample index {i} out of range ({})", dataset.len())))?;
            t = t.max(s.n_times());
        }
        if t == 0 {
            return Err(BatError::Argument("batch has no time steps".into()));
        }
        let mut values = vec![0.0; b * t * d];
        let mut mask = vec![0.0; b * t * d];
        let mut times = vec![0.0; b * t];
        let mut padding = vec![0.0; b * t];
        let mut demographics = vec![0.0; b * p];
        let mut labels = Vec::with_capacity(b);
        let mut sample_ids = Vec::with_capacity(b);
        for (bi, &i) in indices.iter().enumerate() {
            let s = &dataset.samples[i];
            for k in 0..s.n_times() {
                times[bi * t + k] = s.times[k];
                padding[bi * t + k] = 1.0;
                for j in 0..d {
                    let v = s.values[k * d + j];
                    if !v.is_nan() {
                        values[(bi * t + k) * d + j] = v;
                        mask[(bi * t + k) * d + j] = 1.0;
                    }
                }
            }
            for (q, &v) in s.demographics.iter().enumerate() {
                demographics[bi * p + q] = if v.is_nan() { 0.0 } else { v };
            }
            labels.push(s.label);
            sample_ids.push(s.id.clone());
        }
        Ok(Batch {
            b,
            t,
            d,
            values: Tensor::new(vec![b, t, d], values)?,
            mask: Tensor::new(vec![b, t, d], mask)?,
            times: Tensor::new(vec![b, t], times)?,
            padding: Tensor::new(vec![b, t], padding)?,
            demographics: Tensor::new(vec![b, p], demographics)?,
            labels,
            sample_ids,
        })
    }

    pub fn n_demographics(&self) -> usize {
        self.demographics.shape()[1]
    }
}
