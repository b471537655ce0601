//! Irregular multivariate series, their indicator masks, and dataset-level
//! operations (splits, epoch composition, sparsity induction, synthetic
//! corpora, NDJSON files).

mod batch;
mod epoch;
mod ndjson;
mod sparsity;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};

pub use batch::Batch;
pub use epoch::{compose_epoch, compose_epoch_for_labels, shuffled_epoch, RESAMPLE_FACTOR};
pub use ndjson::{load_ndjson, parse_ndjson, write_ndjson};
pub use sparsity::induce_sparsity;
pub use split::{split, SplitData, SplitSpec};
pub use synthetic::{
    class_templates, generate_synthetic, generate_with_factors, min_pairwise_distance, PlantedFactors, SignalMode,
    SyntheticSpec,
};

/// One record: `values` is a row-major `times.len() × n_sensors` matrix in
/// which `NaN` marks a missing cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n_sensors: usize,
    pub demographics: Vec<f64>,
    pub label: usize,
}

impl TimeSeriesSample {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.n_sensors + d]
    }

    pub fn is_observed(&self, t: usize, d: usize) -> bool {
        !self.value(t, d).is_nan()
    }

    /// Indicator matrix, 1 where a value was observed.
    pub fn derive_mask(&self) -> Vec<u8> {
        self.values.iter().map(|v| u8::from(!v.is_nan())).collect()
    }

    pub fn observed_cells(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.times.len() * self.n_sensors {
            return Err(BatError::Schema(format!(
                "sample {}: {} values for {} times x {} sensors",
                self.id,
                self.values.len(),
                self.times.len(),
                self.n_sensors
            )));
        }
        if self.times.is_empty() {
            return Err(BatError::Schema(format!("sample {} has no time points", self.id)));
        }
        if self.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(BatError::Schema(format!("sample {} has a negative or non-finite time", self.id)));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BatError::Schema(format!("sample {}: times not strictly increasing", self.id)));
        }
        if self.values.iter().any(|v| v.is_infinite()) {
            return Err(BatError::Schema(format!("sample {} has an infinite value", self.id)));
        }
        Ok(())
    }
}

/// Mean and standard deviation of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return ColumnStats { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        ColumnStats { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Per-sensor statistics, plus statistics for continuous demographic
/// columns (`None` for one-hot columns, which are left as is).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub sensors: Vec<ColumnStats>,
    pub demographics: Vec<Option<ColumnStats>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<TimeSeriesSample>,
    pub sensor_names: Vec<String>,
    pub demographic_names: Vec<String>,
    /// `true` for continuous demographic columns, `false` for one-hot ones.
    pub demographic_continuous: Vec<bool>,
    pub class_count: usize,
    /// Present once values have been standardized.
    pub stats: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<TimeSeriesSample>,
        sensor_names: Vec<String>,
        demographic_names: Vec<String>,
        demographic_continuous: Vec<bool>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            samples,
            sensor_names,
            demographic_names,
            demographic_continuous,
            class_count,
            stats: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.sensor_names.len();
        let p = self.demographic_names.len();
        if self.demographic_continuous.len() != p {
            return Err(BatError::Schema("demographic kinds do not match names".into()));
        }
        if self.class_count < 2 {
            return Err(BatError::Schema(format!("need at least 2 classes, got {}", self.class_count)));
        }
        let mut names = self.sensor_names.clone();
        names.sort();
        names.dedup();
        if names.len() != d {
            return Err(BatError::Schema("duplicate sensor names".into()));
        }
        for s in &self.samples {
            if s.n_sensors != d || s.demographics.len() != p {
                return Err(BatError::Schema(format!(
                    "sample {} has {} sensors and {} demographics, dataset has {d} and {p}",
                    s.id,
                    s.n_sensors,
                    s.demographics.len()
                )));
            }
            if s.label >= self.class_count {
                return Err(BatError::Schema(format!("sample {} label {} >= {}", s.id, s.label, self.class_count)));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn n_demographics(&self) -> usize {
        self.demographic_names.len()
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn total_cells(&self) -> usize {
        self.samples.iter().map(|s| s.values.len()).sum()
    }

    pub fn observed_cells(&self) -> usize {
        self.samples.iter().map(TimeSeriesSample::observed_cells).sum()
    }

    /// `1 − observed / total`.
    pub fn sparsity(&self) -> f64 {
        let total = self.total_cells();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.observed_cells() as f64 / total as f64
    }

    pub fn max_times(&self) -> usize {
        self.samples.iter().map(TimeSeriesSample::n_times).max().unwrap_or(0)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// A dataset holding clones of the selected samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            samples: Vec::new(),
            sensor_names: self.sensor_names.clone(),
            demographic_names: self.demographic_names.clone(),
            demographic_continuous: self.demographic_continuous.clone(),
            class_count: self.class_count,
            stats: self.stats.clone(),
        }
    }

    /// Statistics of the observed entries of this (raw) dataset.
    pub fn fit_standardization(&self) -> Result<Standardization> {
        if self.is_standardized() {
            return Err(BatError::State("dataset is already standardized".into()));
        }
        let d = self.n_sensors();
        let sensors = (0..d)
            .map(|j| {
                ColumnStats::fit(
                    self.samples.iter().flat_map(|s| s.values.iter().skip(j).step_by(d).copied().filter(|v| !v.is_nan())),
                )
            })
            .collect();
        let demographics = self
            .demographic_continuous
            .iter()
            .enumerate()
            .map(|(j, &cont)| cont.then(|| ColumnStats::fit(self.samples.iter().map(|s| s.demographics[j]))))
            .collect();
        Ok(Standardization { sensors, demographics })
    }

    /// Applies `stats` to observed values and continuous demographics.
    pub fn standardized(&self, stats: &Standardization) -> Result<Dataset> {
        if self.is_standardized() {
            return Err(BatError::State("dataset is already standardized".into()));
        }
        if stats.sensors.len() != self.n_sensors() || stats.demographics.len() != self.n_demographics() {
            return Err(BatError::dim("standardization does not match dataset widths"));
        }
        let d = self.n_sensors();
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for (i, v) in s.values.iter_mut().enumerate() {
                    if !v.is_nan() {
                        *v = stats.sensors[i % d].apply(*v);
                    }
                }
                for (v, st) in s.demographics.iter_mut().zip(&stats.demographics) {
                    if let Some(st) = st {
                        *v = st.apply(*v);
                    }
                }
                s
            })
            .collect();
        Ok(Dataset { samples, stats: Some(stats.clone()), ..self.empty_like() })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: &str, times: Vec<f64>, values: Vec<f64>, d: usize, label: usize) -> TimeSeriesSample {
        TimeSeriesSample { id: id.into(), times, values, n_sensors: d, demographics: vec![], label }
    }

    #[test]
    fn mask_examples() {
        let full = sample("a", vec![0.0, 1.0], vec![1.0, 2.0, 3.0, 4.0], 2, 0);
        assert_eq!(full.derive_mask(), vec![1, 1, 1, 1]);

        let row_missing = sample("b", vec![0.0, 1.0], vec![1.0, 2.0, f64::NAN, f64::NAN], 2, 0);
        assert_eq!(&row_missing.derive_mask()[2..], &[0, 0]);

        let one = sample("c", vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0, f64::NAN, 5.0, 6.0], 2, 0);
        let m = one.derive_mask();
        let density = m.iter().map(|&b| f64::from(b)).sum::<f64>() / m.len() as f64;
        assert_eq!(density, 5.0 / 6.0);
    }

    #[test]
    fn sparsity_is_one_minus_mean_mask() {
        let s1 = sample("a", vec![0.0, 1.0], vec![1.0, f64::NAN, f64::NAN, f64::NAN], 2, 0);
        let s2 = sample("b", vec![0.5], vec![1.0, 1.0], 2, 1);
        let ds = Dataset::new("x", vec![s1, s2], vec!["p".into(), "q".into()], vec![], vec![], 2).unwrap();
        let masks: Vec<u8> = ds.samples.iter().flat_map(|s| s.derive_mask()).collect();
        let mean = masks.iter().map(|&b| f64::from(b)).sum::<f64>() / masks.len() as f64;
        assert_eq!(ds.sparsity(), 1.0 - mean);
        assert_eq!(ds.sparsity(), 0.5);
    }

    #[test]
    fn validation_catches_bad_samples() {
        let names = vec!["p".to_string()];
        let bad_times = sample("a", vec![1.0, 1.0], vec![1.0, 2.0], 1, 0);
        assert!(Dataset::new("x", vec![bad_times], names.clone(), vec![], vec![], 2).is_err());
        let negative = sample("a", vec![-1.0], vec![1.0], 1, 0);
        assert!(Dataset::new("x", vec![negative], names.clone(), vec![], vec![], 2).is_err());
        let bad_label = sample("a", vec![0.0], vec![1.0], 1, 5);
        assert!(Dataset::new("x", vec![bad_label], names, vec![], vec![], 2).is_err());
    }

    #[test]
    fn standardization_zero_mean_unit_variance() {
        let s1 = sample("a", vec![0.0, 1.0], vec![1.0, 10.0, 3.0, f64::NAN], 2, 0);
        let s2 = sample("b", vec![0.0], vec![5.0, 20.0], 2, 1);
        let ds = Dataset::new("x", vec![s1, s2], vec!["p".into(), "q".into()], vec![], vec![], 2).unwrap();
        let st = ds.fit_standardization().unwrap();
        let z = ds.standardized(&st).unwrap();
        let col0: Vec<f64> = z.samples.iter().flat_map(|s| s.values.iter().step_by(2).copied()).collect();
        let mean = col0.iter().sum::<f64>() / 3.0;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(z.samples[0].values[3].is_nan());
        assert!(z.standardized(&st).is_err());
    }
}
