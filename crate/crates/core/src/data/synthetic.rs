//! Synthetic corpora with planted, known label signal.
//!
//! * `cross_axis`: two hidden bits. `u` sets the level of sensor 0 over the
//!   first quarter of the series; `v` decides whether sensor 1 is observed or
//!   missing over the last quarter. The label is `u AND v`, so neither the
//!   value factor nor the missingness factor determines it alone.
//! * `mask_only`: sensor `D-1` is observed over the first half of the series
//!   for positives and missing there for negatives. Sensor `D-1` always reads
//!   the constant 1, which standardizes to exactly the zero fill, and every
//!   other observed value is independent standard normal noise; the values
//!   channel carries no label information even after zero-filling.
//! * `dense_multiclass`: regular series whose per-class mean is a sensor
//!   offset pattern plus a class-specific sinusoid, with Gaussian noise.
//!
//! `noise` is the standard deviation of Gaussian noise on planted values; in
//! the two binary modes each planted mask cell is also flipped with
//! probability `noise / 20` (capped at one half).
//!
//! Outside the planted cells, observations are placed uniformly at random.
//! In `cross_axis` and `dense_multiclass` every sample holds exactly
//! `round((1 - sparsity) · T · D)` observed cells. In `mask_only` the number
//! of randomly placed cells is the same for both classes, chosen so that the
//! corpus-level sparsity matches at the configured prevalence.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, TimeSeriesSample};
use crate::error::{BatError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    CrossAxis,
    MaskOnly,
    DenseMulticlass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    #[serde(default = "two")]
    pub c: usize,
    pub sparsity: f64,
    pub mode: SignalMode,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub name: Option<String>,
    /// Sensor names; defaults to `s0..s{d-1}`.
    #[serde(default)]
    pub sensor_names: Option<Vec<String>>,
    /// Positive prevalence in `mask_only` mode.
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    /// Per-cell class amplitude in `dense_multiclass` mode, in units of `noise`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn two() -> usize {
    2
}

fn default_positive_rate() -> f64 {
    0.25
}

fn default_amplitude() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(mode: SignalMode, n: usize, t: usize, d: usize, sparsity: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            t,
            d,
            c: 2,
            sparsity,
            mode,
            noise: 0.0,
            seed,
            name: None,
            sensor_names: None,
            positive_rate: default_positive_rate(),
            amplitude: default_amplitude(),
        }
    }

    pub fn with_classes(mut self, c: usize) -> Self {
        self.c = c;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_sensor_names(mut self, names: Vec<String>) -> Self {
        self.sensor_names = Some(names);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn flip_probability(&self) -> f64 {
        (self.noise / 20.0).clamp(0.0, 0.5)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.d == 0 {
            return Err(BatError::Spec("n, t and d must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) || !self.noise.is_finite() || self.noise < 0.0 {
            return Err(BatError::Spec(format!("sparsity {} or noise {} out of range", self.sparsity, self.noise)));
        }
        match self.mode {
            SignalMode::CrossAxis | SignalMode::MaskOnly => {
                if self.c != 2 {
                    return Err(BatError::Spec(format!("{:?} is a binary mode, got c = {}", self.mode, self.c)));
                }
                if self.t < 4 || self.d < 2 {
                    return Err(BatError::Spec("binary modes need t >= 4 and d >= 2".into()));
                }
                if !(0.0..=1.0).contains(&self.positive_rate) {
                    return Err(BatError::Spec("positive_rate outside [0, 1]".into()));
                }
            }
            SignalMode::DenseMulticlass => {
                if self.c < 2 {
                    return Err(BatError::Spec("dense_multiclass needs c >= 2".into()));
                }
            }
        }
        if let Some(names) = &self.sensor_names {
            if names.len() != self.d {
                return Err(BatError::Spec(format!("{} sensor names for d = {}", names.len(), self.d)));
            }
        }
        Ok(())
    }

    fn observed_target(&self) -> usize {
        ((1.0 - self.sparsity) * (self.t * self.d) as f64).round() as usize
    }
}

/// Hidden factors behind one `cross_axis` sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedFactors {
    /// High (true) or low level of sensor 0 early on.
    pub value_high: bool,
    /// Sensor 1 observed (true) or missing late on.
    pub late_observed: bool,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_with_factors(spec).map(|(d, _)| d)
}

/// Like [`generate_synthetic`], also returning the per-sample planted factors
/// (`cross_axis` only; empty otherwise).
pub fn generate_with_factors(spec: &SyntheticSpec) -> Result<(Dataset, Vec<PlantedFactors>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, d) = (spec.t, spec.d);
    let target = spec.observed_target();
    let templates = match spec.mode {
        SignalMode::DenseMulticlass => class_templates(spec),
        _ => Vec::new(),
    };
    let flip = spec.flip_probability();
    let mut samples = Vec::with_capacity(spec.n);
    let mut factors = Vec::new();

    for i in 0..spec.n {
        let mut forced_on = Vec::new();
        let mut forced_off = Vec::new();
        let mut planted = vec![f64::NAN; t * d];
        let label;
        let mut plant_mask = |cell: usize, on: bool, rng: &mut ChaCha8Rng, on_cells: &mut Vec<usize>| {
            let on = if rng.gen::<f64>() < flip { !on } else { on };
            if on {
                on_cells.push(cell)
            } else {
                forced_off.push(cell)
            }
        };
        match spec.mode {
            SignalMode::CrossAxis => {
                let q = t / 4;
                let value_high = rng.gen::<bool>();
                let late_observed = rng.gen::<bool>();
                label = usize::from(value_high && late_observed);
                let level = if value_high { 1.5 } else { -1.5 };
                for k in 0..q {
                    let cell = k * d;
                    let z: f64 = rng.sample(StandardNormal);
                    planted[cell] = level + spec.noise * z;
                    forced_on.push(cell);
                }
                for k in t - q..t {
                    plant_mask(k * d + 1, late_observed, &mut rng, &mut forced_on);
                }
                factors.push(PlantedFactors { value_high, late_observed });
            }
            SignalMode::MaskOnly => {
                let positive = rng.gen::<f64>() < spec.positive_rate;
                label = usize::from(positive);
                for k in 0..t / 2 {
                    plant_mask(k * d + (d - 1), positive, &mut rng, &mut forced_on);
                }
            }
            SignalMode::DenseMulticlass => {
                label = i % spec.c;
            }
        }

        let mut values = vec![f64::NAN; t * d];
        let mut taken = vec![false; t * d];
        for &c in forced_on.iter().chain(&forced_off) {
            taken[c] = true;
        }
        let free: Vec<usize> = (0..t * d).filter(|&c| !taken[c]).collect();
        let planned = match spec.mode {
            SignalMode::MaskOnly => {
                let expected_planted = (spec.positive_rate * (t / 2) as f64).round() as usize;
                target.checked_sub(expected_planted)
            }
            _ => target.checked_sub(forced_on.len()),
        };
        let need = planned
            .filter(|&k| k <= free.len())
            .ok_or_else(|| {
                BatError::Spec(format!(
                    "sparsity {} cannot hold {} planted observed and {} planted missing cells out of {}",
                    spec.sparsity,
                    forced_on.len(),
                    forced_off.len(),
                    t * d
                ))
            })?;
        let chosen = index::sample(&mut rng, free.len(), need);
        let mut observed: Vec<usize> = chosen.into_iter().map(|k| free[k]).chain(forced_on).collect();
        observed.sort_unstable();
        for cell in observed {
            let noise: f64 = rng.sample(StandardNormal);
            values[cell] = match spec.mode {
                SignalMode::DenseMulticlass => templates[label][cell] + spec.noise * noise,
                _ if !planted[cell].is_nan() => planted[cell],
                SignalMode::MaskOnly if cell % d == d - 1 => 1.0,
                _ => noise,
            };
        }

        let times = match spec.mode {
            SignalMode::DenseMulticlass => (0..t).map(|k| k as f64).collect(),
            _ => (0..t).map(|k| k as f64 + rng.gen_range(0.0..0.5)).collect(),
        };
        let sex = rng.gen::<bool>();
        let demographics = vec![
            60.0 + 10.0 * rng.sample::<f64, _>(StandardNormal),
            80.0 + 15.0 * rng.sample::<f64, _>(StandardNormal),
            f64::from(u8::from(sex)),
            f64::from(u8::from(!sex)),
        ];
        samples.push(TimeSeriesSample { id: format!("{i}"), times, values, n_sensors: d, demographics, label });
    }

    let sensor_names = spec.sensor_names.clone().unwrap_or_else(|| (0..d).map(|k| format!("s{k}")).collect());
    let name = spec.name.clone().unwrap_or_else(|| format!("{:?}", spec.mode).to_lowercase());
    let dataset = Dataset::new(
        name,
        samples,
        sensor_names,
        vec!["age".into(), "weight".into(), "sex=f".into(), "sex=m".into()],
        vec![true, true, false, false],
        spec.c,
    )?;
    Ok((dataset, factors))
}

/// Noise-free class means of `dense_multiclass` corpora, each a row-major
/// `T × D` matrix. Scaled up if needed so that every pair of classes is at
/// least `3 · noise` apart in Euclidean distance.
pub fn class_templates(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let (t, d) = (spec.t, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e3a_11c5);
    let amp = spec.amplitude * spec.noise.max(1e-3);
    let mut templates: Vec<Vec<f64>> = (0..spec.c)
        .map(|c| {
            let signs: Vec<f64> = (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let phases: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let freq = (c + 1) as f64;
            (0..t * d)
                .map(|cell| {
                    let (k, j) = (cell / d, cell % d);
                    amp * (signs[j] + (2.0 * PI * freq * k as f64 / t as f64 + phases[j]).sin())
                })
                .collect()
        })
        .collect();
    let min_dist = min_pairwise_distance(&templates);
    let wanted = 3.0 * spec.noise;
    if min_dist < wanted && min_dist > 0.0 {
        let s = wanted / min_dist * (1.0 + 1e-9);
        templates.iter_mut().flatten().for_each(|v| *v *= s);
    }
    templates
}

pub fn min_pairwise_distance(templates: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..templates.len() {
        for b in a + 1..templates.len() {
            let d2: f64 = templates[a].iter().zip(&templates[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}
