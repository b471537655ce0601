//! Per-observation embedding: a value/indicator projection concatenated with
//! a learned sensor-identity row, plus a continuous-time encoding added over
//! the full width. Also the demographic projection.

pub mod registry;
pub mod temporal;

use serde::{Deserialize, Serialize};

pub use registry::{RegistryMode, SensorRegistry, IDENTITY_PARAM};
pub use temporal::{classic_positional_encoding, temporal_encoding, TemporalEncodingConfig};

use crate::data::{Batch, Dataset};
use crate::error::{BatError, Result};
use crate::numerics::{Init, ParamStore, Tape, Tensor, Var};

pub const VALUE_WEIGHT: &str = "embed.value.w";
pub const VALUE_BIAS: &str = "embed.value.b";
pub const DEMO_WEIGHT: &str = "embed.demo.w";
pub const DEMO_BIAS: &str = "embed.demo.b";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    /// Full embedding width `E`; the value and identity parts are `E/2` each.
    pub dim: usize,
    pub temporal: TemporalEncodingConfig,
    pub use_values: bool,
    pub use_mask: bool,
    pub use_demographics: bool,
}

impl EmbedConfig {
    pub fn new(dim: usize, max_time: f64) -> Result<Self> {
        let cfg = EmbedConfig {
            dim,
            temporal: TemporalEncodingConfig { dim, max_time },
            use_values: true,
            use_mask: true,
            use_demographics: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(BatError::Argument(format!("embedding width {} must be even and at least 2", self.dim)));
        }
        if self.temporal.dim != self.dim {
            return Err(BatError::Argument(format!(
                "temporal encoding width {} differs from embedding width {}",
                self.temporal.dim, self.dim
            )));
        }
        self.temporal.validate()
    }

    pub fn part_width(&self) -> usize {
        self.dim / 2
    }
}

/// Adds the embedding parameters, including the identity table for the
/// registry's current vocabulary.
pub fn init_embedding_params(
    store: &mut ParamStore,
    registry: &SensorRegistry,
    cfg: &EmbedConfig,
    n_demographics: usize,
    seed: u64,
) -> Result<()> {
    cfg.validate()?;
    let half = cfg.part_width();
    store.init(VALUE_WEIGHT, &[2, half], Init::FanIn(2), seed)?;
    store.init(VALUE_BIAS, &[half], Init::Zeros, seed)?;
    store.insert(IDENTITY_PARAM, registry.init_table(half, seed)?)?;
    if n_demographics > 0 {
        store.init(DEMO_WEIGHT, &[n_demographics, cfg.dim], Init::FanIn(n_demographics), seed)?;
        store.init(DEMO_BIAS, &[cfg.dim], Init::Zeros, seed)?;
    }
    Ok(())
}

/// `[B, T, D, E]` embedding of a batch whose sensor columns use identity rows
/// `sensor_rows`. Disabled components are zeroed at the input, and so is the
/// value of every cell whose mask is 0.
pub fn embed_observations(
    tape: &mut Tape,
    store: &ParamStore,
    batch: &Batch,
    sensor_rows: &[usize],
    cfg: &EmbedConfig,
) -> Result<Var> {
    if sensor_rows.len() != batch.d {
        return Err(BatError::Registry(format!("{} identity rows for {} sensors", sensor_rows.len(), batch.d)));
    }
    let (b, t, d, e) = (batch.b, batch.t, batch.d, cfg.dim);
    let half = cfg.part_width();
    let cells = b * t * d;
    let mut pair = vec![0.0; cells * 2];
    let (xv, mv) = (batch.values.data(), batch.mask.data());
    for c in 0..cells {
        if cfg.use_values && mv[c] > 0.0 {
            pair[2 * c] = xv[c];
        }
        if cfg.use_mask {
            pair[2 * c + 1] = mv[c];
        }
    }
    let input = tape.constant(Tensor::new(vec![b, t, d, 2], pair)?);
    let w = tape.param(store, store.id(VALUE_WEIGHT)?);
    let bias = tape.param(store, store.id(VALUE_BIAS)?);
    let value_part = tape.linear(input, w, Some(bias))?;

    let table = tape.param(store, store.id(IDENTITY_PARAM)?);
    let rows = tape.gather_rows(table, sensor_rows).map_err(|_| {
        BatError::Registry(format!("identity rows {:?} exceed table of {:?}", sensor_rows, store.by_name(IDENTITY_PARAM).map(|p| p.tensor.shape().to_vec())))
    })?;
    if tape.shape(rows)[1] != half {
        return Err(BatError::dim(format!("identity width {} for embedding width {e}", tape.shape(rows)[1])));
    }
    let identity_part = tape.expand_leading(rows, &[b, t])?;
    let joined = tape.concat(&[value_part, identity_part])?;

    let tv = batch.times.data();
    let mut pe = Vec::with_capacity(cells * e);
    for bt in 0..b * t {
        let enc = temporal_encoding(tv[bt], &cfg.temporal);
        for _ in 0..d {
            pe.extend_from_slice(&enc);
        }
    }
    let pe = tape.constant(Tensor::new(vec![b, t, d, e], pe)?);
    tape.add(joined, pe)
}

/// `[B, E]` projection of the batch demographics; all zeros when the
/// component is disabled or the corpus has no demographic columns.
pub fn embed_demographics(tape: &mut Tape, store: &ParamStore, demographics: &Tensor, cfg: &EmbedConfig) -> Result<Var> {
    let s = demographics.shape();
    if s.len() != 2 {
        return Err(BatError::dim(format!("demographics of shape {:?}", s)));
    }
    let (b, p) = (s[0], s[1]);
    let Ok(wid) = store.id(DEMO_WEIGHT) else {
        if p != 0 {
            return Err(BatError::dim(format!("{p} demographic columns but no demographic embedding")));
        }
        return Ok(tape.constant(Tensor::zeros(&[b, cfg.dim])));
    };
    let expected = store.get(wid).tensor.shape()[0];
    if p != expected {
        return Err(BatError::dim(format!("{p} demographic columns for an embedding of width {expected}")));
    }
    let input = if cfg.use_demographics { demographics.clone() } else { Tensor::zeros(s) };
    let x = tape.constant(input);
    let w = tape.param(store, wid);
    let bias = tape.param(store, store.id(DEMO_BIAS)?);
    tape.linear(x, w, Some(bias))
}

/// Embedding of one sample, outside any training graph.
#[derive(Clone, Debug)]
pub struct EmbeddedSeries {
    /// `[T, D, E]`.
    pub tensor: Tensor,
    pub padding: Vec<bool>,
}

pub fn embed_series(
    store: &ParamStore,
    registry: &SensorRegistry,
    dataset: &Dataset,
    index: usize,
    cfg: &EmbedConfig,
) -> Result<EmbeddedSeries> {
    let rows = registry.resolve(&dataset.name)?.to_vec();
    let batch = Batch::from_dataset(dataset, &[index])?;
    let mut tape = Tape::new();
    let v = embed_observations(&mut tape, store, &batch, &rows, cfg)?;
    let tensor = tape.value(v).clone().reshape(&[batch.t, batch.d, cfg.dim])?;
    Ok(EmbeddedSeries { tensor, padding: batch.padding.data().iter().map(|&p| p > 0.0).collect() })
}
