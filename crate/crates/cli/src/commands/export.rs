use std::collections::BTreeMap;
use std::path::Path;

use bat_core::data::Batch;
use bat_core::model::{attention_records, top_k_per_pass, Axis, BatModel};
use bat_core::numerics::{name_seed, Tape};
use serde::Serialize;

use super::Run;
use crate::output::{write_csv, write_json};
use crate::UsageError;

/// One kept attention weight. The key is the source and the query the
/// target: the target attended to the source with `weight`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExportRow {
    pub config_hash: String,
    pub sample_id: String,
    pub track: usize,
    pub track_order: String,
    pub pass_axis: String,
    pub layer: usize,
    pub head: usize,
    pub query_axis_index: usize,
    pub key_axis_index: usize,
    pub query_time_index: usize,
    pub query_time: f64,
    pub query_sensor: String,
    pub key_time_index: usize,
    pub key_time: f64,
    pub key_sensor: String,
    pub query_observed: bool,
    pub key_observed: bool,
    /// Fraction of sensors observed at the query's time step.
    pub query_time_density: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityRow {
    pub config_hash: String,
    pub sample_id: String,
    pub time_index: usize,
    pub time: f64,
    pub observed: usize,
    pub density: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PassSummary {
    pub rows: usize,
    /// Kept weights whose query cell is unobserved.
    pub missing_targets: usize,
    /// Kept weights whose key cell is unobserved.
    pub missing_sources: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExportReport {
    pub config_hash: String,
    pub sample_id: String,
    pub k: usize,
    /// Keyed by `track{i}/{axis}`.
    pub passes: BTreeMap<String, PassSummary>,
    #[serde(skip)]
    pub rows: Vec<ExportRow>,
    #[serde(skip)]
    pub density: Vec<DensityRow>,
}

/// Runs one forward pass with attention capture on a single sample and keeps
/// the `k` largest weights per (track, pass axis). Without `sample` a sample
/// is picked from the run seed. Writes `attention.csv`, `density.csv` and
/// `attention_summary.json`.
pub fn cmd_export_attention(run: &Run, checkpoint: &Path, sample: Option<&str>, k: Option<usize>) -> anyhow::Result<ExportReport> {
    let k = k.unwrap_or(run.config.export_k);
    if k == 0 {
        return Err(UsageError("k must be at least 1".into()).into());
    }
    if !checkpoint.exists() {
        return Err(UsageError(format!("checkpoint {} does not exist", checkpoint.display())).into());
    }
    let model = BatModel::load(checkpoint)?;
    let raw = run.corpus()?;
    let ds = model.prepare(&raw).map_err(|e| UsageError(format!("checkpoint does not fit corpus: {e}")))?;
    if ds.is_empty() {
        return Err(UsageError("corpus is empty".into()).into());
    }
    let idx = match sample {
        Some(id) => ds.position(id).ok_or_else(|| UsageError(format!("sample {id:?} not found")))?,
        None => (name_seed(run.config.seed, "export") % ds.len() as u64) as usize,
    };
    let s = &ds.samples[idx];
    let d = ds.n_sensors();

    let batch = Batch::from_dataset(&ds, &[idx])?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch, &ds.name, true)?;
    let records = attention_records(&tape, &out.taps, &batch, model.config.mode.tracks())?;
    let kept = top_k_per_pass(&records, k);

    let density: Vec<DensityRow> = (0..s.n_times())
        .map(|t| {
            let observed = (0..d).filter(|&c| s.is_observed(t, c)).count();
            DensityRow {
                config_hash: run.hash.clone(),
                sample_id: s.id.clone(),
                time_index: t,
                time: s.times[t],
                observed,
                density: observed as f64 / d as f64,
            }
        })
        .collect();

    let mut passes: BTreeMap<String, PassSummary> = BTreeMap::new();
    let rows: Vec<ExportRow> = kept
        .iter()
        .map(|r| {
            let ((qt, qs), (kt, ks)) = match r.pass_axis {
                Axis::Time => ((r.query_axis_index, r.lane_index), (r.key_axis_index, r.lane_index)),
                Axis::Sensor => ((r.lane_index, r.query_axis_index), (r.lane_index, r.key_axis_index)),
            };
            let (query_observed, key_observed) = (s.is_observed(qt, qs), s.is_observed(kt, ks));
            let p = passes.entry(format!("track{}/{}", r.track, r.pass_axis.as_str())).or_default();
            p.rows += 1;
            p.missing_targets += usize::from(!query_observed);
            p.missing_sources += usize::from(!key_observed);
            ExportRow {
                config_hash: run.hash.clone(),
                sample_id: r.sample_id.clone(),
                track: r.track,
                track_order: r.track_order.as_str().into(),
                pass_axis: r.pass_axis.as_str().into(),
                layer: r.layer,
                head: r.head,
                query_axis_index: r.query_axis_index,
                key_axis_index: r.key_axis_index,
                query_time_index: qt,
                query_time: s.times[qt],
                query_sensor: ds.sensor_names[qs].clone(),
                key_time_index: kt,
                key_time: s.times[kt],
                key_sensor: ds.sensor_names[ks].clone(),
                query_observed,
                key_observed,
                query_time_density: density[qt].density,
                weight: r.weight,
            }
        })
        .collect();

    let report = ExportReport { config_hash: run.hash.clone(), sample_id: s.id.clone(), k, passes, rows, density };
    write_csv(&run.path("attention.csv"), &report.rows, None)?;
    write_csv(&run.path("density.csv"), &report.density, None)?;
    write_json(&run.path("attention_summary.json"), &report)?;
    Ok(report)
}
