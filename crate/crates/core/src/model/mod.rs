//! The bi-axial classifier and its single-axis variants.

pub mod attention;
pub mod cost;
pub mod encoder;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use attention::{attention_records, top_k_per_pass, AttentionRecord};
pub use cost::{representation_cost, CostReport, RepresentationScheme};
pub use encoder::{axial_pass, block_forward, init_block, track_forward, AttentionTap, Axis, BlockSpec, TrackOrder};

use crate::data::{Batch, Dataset, Standardization};
use crate::embedding::{embed_demographics, embed_observations, init_embedding_params, EmbedConfig, SensorRegistry};
use crate::error::{BatError, Result};
use crate::numerics::{load_checkpoint, save_checkpoint, Init, ParamStore, PoolMode, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Biaxial,
    TimeOnly,
    SensorOnly,
}

impl AttentionMode {
    pub fn tracks(self) -> &'static [TrackOrder] {
        match self {
            AttentionMode::Biaxial => &[TrackOrder::TimeThenSensor, TrackOrder::SensorThenTime],
            AttentionMode::TimeOnly => &[TrackOrder::TimeOnly],
            AttentionMode::SensorOnly => &[TrackOrder::SensorOnly],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Biaxial => "biaxial",
            AttentionMode::TimeOnly => "time_only",
            AttentionMode::SensorOnly => "sensor_only",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = BatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biaxial" => Ok(AttentionMode::Biaxial),
            "time_only" => Ok(AttentionMode::TimeOnly),
            "sensor_only" => Ok(AttentionMode::SensorOnly),
            other => Err(BatError::Argument(format!("unknown attention mode {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: AttentionMode,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub pool: PoolMode,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub use_values: bool,
    pub use_mask: bool,
    pub use_demographics: bool,
    /// Scale `T` of the continuous-time encoding.
    pub max_time: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: AttentionMode::Biaxial,
            embed_dim: 16,
            heads: 2,
            layers: 1,
            pool: PoolMode::Mean,
            dropout: 0.1,
            attention_dropout: 0.0,
            use_values: true,
            use_mask: true,
            use_demographics: true,
            max_time: 10000.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.embed_config()?;
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(BatError::Argument(format!("width {} not divisible into {} heads", self.embed_dim, self.heads)));
        }
        if self.layers == 0 {
            return Err(BatError::Argument("at least one layer is required".into()));
        }
        for rate in [self.dropout, self.attention_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(BatError::Argument(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn embed_config(&self) -> Result<EmbedConfig> {
        let mut cfg = EmbedConfig::new(self.embed_dim, self.max_time)?;
        cfg.use_values = self.use_values;
        cfg.use_mask = self.use_mask;
        cfg.use_demographics = self.use_demographics;
        Ok(cfg)
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            dim: self.embed_dim,
            heads: self.heads,
            dropout: self.dropout,
            attention_dropout: self.attention_dropout,
        }
    }

    /// True when neither values nor indicators reach the encoder, leaving
    /// demographics as the only sample-specific input.
    pub fn observations_disabled(&self) -> bool {
        !self.use_values && !self.use_mask
    }
}

/// Logits and, when requested, the attention nodes of every pass.
pub struct ForwardOutput {
    /// `[B, C]`.
    pub logits: Var,
    pub taps: Vec<AttentionTap>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    registry: SensorRegistry,
    n_demographics: usize,
    n_classes: usize,
    seed: u64,
    #[serde(default)]
    standardization: BTreeMap<String, Standardization>,
}

#[derive(Clone, Debug)]
pub struct BatModel {
    pub config: ModelConfig,
    pub registry: SensorRegistry,
    pub params: ParamStore,
    pub n_demographics: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Training-split statistics per corpus name, used to prepare raw
    /// corpora for inference.
    pub standardization: BTreeMap<String, Standardization>,
}

pub fn track_prefix(index: usize) -> String {
    format!("track{index}")
}

impl BatModel {
    /// Initializes a model for corpora already entered into `registry`.
    /// Parameter values depend only on `seed` and parameter names, so parts
    /// shared between attention modes start out identical.
    pub fn new(config: ModelConfig, registry: SensorRegistry, n_demographics: usize, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(BatError::Argument(format!("need at least 2 classes, got {n_classes}")));
        }
        let e = config.embed_dim;
        let mut params = ParamStore::new();
        init_embedding_params(&mut params, &registry, &config.embed_config()?, n_demographics, seed)?;
        let tracks = config.mode.tracks();
        let spec = config.block_spec();
        for (i, _) in tracks.iter().enumerate() {
            for l in 0..config.layers {
                init_block(&mut params, &format!("{}.layer{l}", track_prefix(i)), &spec, seed)?;
            }
        }
        let merge_in = tracks.len() * e;
        params.init("merge.w", &[merge_in, e], Init::FanIn(merge_in), seed)?;
        params.init("merge.b", &[e], Init::Zeros, seed)?;
        params.init("fuse.w", &[2 * e, e], Init::FanIn(2 * e), seed)?;
        params.init("fuse.b", &[e], Init::Zeros, seed)?;
        params.init("head.w1", &[e, e / 2], Init::FanIn(e), seed)?;
        params.init("head.b1", &[e / 2], Init::Zeros, seed)?;
        params.init("head.w2", &[e / 2, n_classes], Init::FanIn(e / 2), seed)?;
        params.init("head.b2", &[n_classes], Init::Zeros, seed)?;
        Ok(BatModel { config, registry, params, n_demographics, n_classes, seed, standardization: BTreeMap::new() })
    }

    /// Adds a corpus after construction, growing the identity table.
    pub fn register_dataset(&mut self, name: &str, sensors: &[String]) -> Result<Vec<usize>> {
        let rows = self.registry.register(name, sensors)?;
        self.registry.sync_table(&mut self.params, self.seed)?;
        Ok(rows)
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch, dataset: &str, capture: bool) -> Result<ForwardOutput> {
        let rows = self.registry.resolve(dataset)?.to_vec();
        self.forward_rows(tape, batch, &rows, capture)
    }

    /// Forward pass with explicit identity rows for the batch's sensors.
    pub fn forward_rows(&self, tape: &mut Tape, batch: &Batch, sensor_rows: &[usize], capture: bool) -> Result<ForwardOutput> {
        self.forward_with(&self.params, tape, batch, sensor_rows, capture)
    }

    /// Forward pass reading parameters from `store`, which must have the
    /// layout of `self.params`.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        sensor_rows: &[usize],
        capture: bool,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let e = cfg.embed_dim;
        let ecfg = cfg.embed_config()?;
        if batch.n_demographics() != self.n_demographics {
            return Err(BatError::dim(format!(
                "batch has {} demographic columns, model expects {}",
                batch.n_demographics(),
                self.n_demographics
            )));
        }
        let mut taps = Vec::new();
        let merged = if cfg.observations_disabled() {
            tape.constant(Tensor::zeros(&[batch.b, e]))
        } else {
            let x = embed_observations(tape, store, batch, sensor_rows, &ecfg)?;
            let spec = cfg.block_spec();
            let mut pooled = Vec::new();
            for (i, &order) in cfg.mode.tracks().iter().enumerate() {
                let y = track_forward(tape, store, &track_prefix(i), &spec, cfg.layers, order, x, &batch.padding, i, &mut taps)?;
                pooled.push(tape.masked_pool(y, &batch.padding, &[1, 2], cfg.pool)?);
            }
            let joined = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled)? };
            let w = tape.param(store, store.id("merge.w")?);
            let b = tape.param(store, store.id("merge.b")?);
            let m = tape.linear(joined, w, Some(b))?;
            tape.relu(m)
        };
        let demo = embed_demographics(tape, store, &batch.demographics, &ecfg)?;
        let fused_in = tape.concat(&[merged, demo])?;
        let w = tape.param(store, store.id("fuse.w")?);
        let b = tape.param(store, store.id("fuse.b")?);
        let fused = tape.linear(fused_in, w, Some(b))?;
        let fused = tape.relu(fused);
        let w1 = tape.param(store, store.id("head.w1")?);
        let b1 = tape.param(store, store.id("head.b1")?);
        let h = tape.linear(fused, w1, Some(b1))?;
        let h = tape.relu(h);
        let w2 = tape.param(store, store.id("head.w2")?);
        let b2 = tape.param(store, store.id("head.b2")?);
        let logits = tape.linear(h, w2, Some(b2))?;
        if !capture {
            taps.clear();
        }
        Ok(ForwardOutput { logits, taps })
    }

    /// Class probabilities for `indices` of a standardized corpus, computed in
    /// batches of `batch_size` on evaluation tapes.
    pub fn predict_proba(&self, dataset: &Dataset, indices: &[usize], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let rows = self.registry.resolve(&dataset.name)?.to_vec();
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(batch_size.max(1)) {
            let batch = Batch::from_dataset(dataset, chunk)?;
            let mut tape = Tape::new();
            let f = self.forward_rows(&mut tape, &batch, &rows, false)?;
            tape.check_finite()?;
            let logits = tape.value(f.logits);
            for r in logits.data().chunks(self.n_classes) {
                out.push(softmax(r));
            }
        }
        Ok(out)
    }

    /// Standardizes a raw corpus with the statistics stored for its name.
    pub fn prepare(&self, raw: &Dataset) -> Result<Dataset> {
        if raw.is_standardized() {
            return Ok(raw.clone());
        }
        let stats = self
            .standardization
            .get(&raw.name)
            .ok_or_else(|| BatError::State(format!("no standardization stored for corpus {:?}", raw.name)))?;
        raw.standardized(stats)
    }

    /// Parameter count of the encoder stack of track `index`.
    pub fn track_param_count(&self, index: usize) -> usize {
        self.params.numel_with_prefix(&format!("{}.", track_prefix(index)))
    }

    fn meta(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(ModelMeta {
            config: self.config.clone(),
            registry: self.registry.clone(),
            n_demographics: self.n_demographics,
            n_classes: self.n_classes,
            seed: self.seed,
            standardization: self.standardization.clone(),
        })?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params, &self.meta()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let meta: ModelMeta =
            serde_json::from_value(meta).map_err(|e| BatError::Checkpoint(format!("bad model header: {e}")))?;
        let model = BatModel {
            config: meta.config,
            registry: meta.registry,
            params,
            n_demographics: meta.n_demographics,
            n_classes: meta.n_classes,
            seed: meta.seed,
            standardization: meta.standardization,
        };
        let fresh = BatModel::new(model.config.clone(), model.registry.clone(), model.n_demographics, model.n_classes, 0)?;
        for p in fresh.params.iter() {
            let got = model
                .params
                .by_name(&p.name)
                .ok_or_else(|| BatError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if got.tensor.shape() != p.tensor.shape() {
                return Err(BatError::Checkpoint(format!("parameter {} has shape {:?}", p.name, got.tensor.shape())));
            }
        }
        Ok(model)
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / sum).collect()
}
