//! One JSON object per line:
//!
//! ```text
//! {"id": "p1", "times": [0.0, 1.5], "sensors": {"HR": [80, null]}, "static": {"age": 61, "sex": "F"}, "label": 1}
//! ```
//!
//! An optional first line `{"header": {...}}` may fix the sensor order
//! (`sensors`), static column order (`static`), numeric static columns that
//! are already one-hot (`categorical_columns`), the class count (`classes`)
//! and the dataset `name`. Without a header, sensor order follows the first
//! record. String-valued static fields are one-hot encoded as `key=value`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dataset, TimeSeriesSample};
use crate::error::{BatError, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    sensors: Option<Vec<String>>,
    #[serde(default, rename = "static")]
    static_columns: Option<Vec<String>>,
    #[serde(default)]
    categorical_columns: Vec<String>,
    #[serde(default)]
    classes: Option<usize>,
}

struct RawRecord {
    line: usize,
    id: String,
    times: Vec<f64>,
    sensors: Map<String, Value>,
    statics: Map<String, Value>,
    label: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> BatError {
    BatError::Parse { line, msg: msg.into() }
}

fn parse_record(line: usize, v: Value) -> Result<RawRecord> {
    let Value::Object(mut obj) = v else { return Err(parse_err(line, "record is not an object")) };
    let times = match obj.remove("times") {
        Some(Value::Array(a)) => a
            .iter()
            .map(|t| t.as_f64().ok_or_else(|| parse_err(line, "non-numeric time")))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(parse_err(line, "missing \"times\" array")),
    };
    let sensors = match obj.remove("sensors") {
        Some(Value::Object(m)) => m,
        _ => return Err(parse_err(line, "missing \"sensors\" object")),
    };
    let statics = match obj.remove("static") {
        Some(Value::Object(m)) => m,
        None | Some(Value::Null) => Map::new(),
        _ => return Err(parse_err(line, "\"static\" is not an object")),
    };
    let label = obj
        .get("label")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(line, "missing non-negative integer \"label\""))? as usize;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("line{line}"),
    };
    Ok(RawRecord { line, id, times, sensors, statics, label })
}

enum StaticKind {
    Numeric { one_hot: bool },
    Categorical(Vec<String>),
}

/// Parses NDJSON text; `default_name` names the dataset when no header does.
pub fn parse_ndjson(text: &str, default_name: &str) -> Result<Dataset> {
    let mut header = Header::default();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        if let Some(h) = v.get("header") {
            if !records.is_empty() {
                return Err(parse_err(line, "header must precede records"));
            }
            header = serde_json::from_value(h.clone()).map_err(|e| parse_err(line, e.to_string()))?;
            continue;
        }
        records.push(parse_record(line, v)?);
    }
    let first = records.first().ok_or_else(|| parse_err(0, "no records"))?;

    let sensor_names: Vec<String> = header.sensors.clone().unwrap_or_else(|| first.sensors.keys().cloned().collect());
    let static_keys: Vec<String> = header.static_columns.clone().unwrap_or_else(|| {
        let mut keys: Vec<String> = Vec::new();
        for r in &records {
            for k in r.statics.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys
    });

    let mut kinds = Vec::with_capacity(static_keys.len());
    for key in &static_keys {
        let mut cats: Vec<String> = Vec::new();
        let mut numeric = false;
        for r in &records {
            match r.statics.get(key) {
                Some(Value::String(s)) => {
                    if !cats.contains(s) {
                        cats.push(s.clone());
                    }
                }
                Some(Value::Number(_)) | Some(Value::Bool(_)) => numeric = true,
                None => return Err(parse_err(r.line, format!("missing static field {key}"))),
                Some(_) => return Err(parse_err(r.line, format!("static field {key} has an unsupported type"))),
            }
            if numeric && !cats.is_empty() {
                return Err(BatError::Schema(format!("static field {key} mixes strings and numbers")));
            }
        }
        kinds.push(if numeric {
            StaticKind::Numeric { one_hot: header.categorical_columns.contains(key) }
        } else {
            StaticKind::Categorical(cats)
        });
    }
    let mut demographic_names = Vec::new();
    let mut demographic_continuous = Vec::new();
    for (key, kind) in static_keys.iter().zip(&kinds) {
        match kind {
            StaticKind::Numeric { one_hot } => {
                demographic_names.push(key.clone());
                demographic_continuous.push(!one_hot);
            }
            StaticKind::Categorical(cats) => {
                for c in cats {
                    demographic_names.push(format!("{key}={c}"));
                    demographic_continuous.push(false);
                }
            }
        }
    }

    let d = sensor_names.len();
    let mut samples = Vec::with_capacity(records.len());
    for r in &records {
        if r.sensors.len() != d || sensor_names.iter().any(|n| !r.sensors.contains_key(n)) {
            return Err(BatError::Schema(format!(
                "line {}: sensor set {:?} differs from {:?}",
                r.line,
                r.sensors.keys().collect::<Vec<_>>(),
                sensor_names
            )));
        }
        let t = r.times.len();
        let mut values = vec![f64::NAN; t * d];
        for (j, name) in sensor_names.iter().enumerate() {
            let Some(Value::Array(col)) = r.sensors.get(name) else {
                return Err(parse_err(r.line, format!("sensor {name} is not an array")));
            };
            if col.len() != t {
                return Err(parse_err(r.line, format!("sensor {name} has {} values for {t} times", col.len())));
            }
            for (k, v) in col.iter().enumerate() {
                values[k * d + j] = match v {
                    Value::Null => f64::NAN,
                    v => v.as_f64().ok_or_else(|| parse_err(r.line, format!("non-numeric value for {name}")))?,
                };
            }
        }
        let mut demographics = Vec::with_capacity(demographic_names.len());
        for (key, kind) in static_keys.iter().zip(&kinds) {
            let v = &r.statics[key.as_str()];
            match kind {
                StaticKind::Numeric { .. } => demographics.push(match v {
                    Value::Bool(b) => f64::from(u8::from(*b)),
                    v => v.as_f64().unwrap_or(f64::NAN),
                }),
                StaticKind::Categorical(cats) => {
                    let s = v.as_str().unwrap_or_default();
                    demographics.extend(cats.iter().map(|c| f64::from(u8::from(c == s))));
                }
            }
        }
        samples.push(TimeSeriesSample {
            id: r.id.clone(),
            times: r.times.clone(),
            values,
            n_sensors: d,
            demographics,
            label: r.label,
        });
    }
    let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
    let class_count = header.classes.unwrap_or(max_label + 1).max(2);
    let name = header.name.clone().unwrap_or_else(|| default_name.to_string());
    Dataset::new(name, samples, sensor_names, demographic_names, demographic_continuous, class_count).map_err(|e| match e {
        BatError::Schema(m) => BatError::Schema(m),
        other => other,
    })
}

pub fn load_ndjson(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    parse_ndjson(&text, stem)
}

/// Writes `dataset` with a header line that preserves sensor order,
/// demographic columns and class count.
pub fn write_ndjson(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = Header {
        name: Some(dataset.name.clone()),
        sensors: Some(dataset.sensor_names.clone()),
        static_columns: Some(dataset.demographic_names.clone()),
        categorical_columns: dataset
            .demographic_names
            .iter()
            .zip(&dataset.demographic_continuous)
            .filter(|(_, &c)| !c)
            .map(|(n, _)| n.clone())
            .collect(),
        classes: Some(dataset.class_count),
    };
    serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
    writeln!(w)?;
    let d = dataset.n_sensors();
    for s in &dataset.samples {
        let mut sensors = Map::new();
        for (j, name) in dataset.sensor_names.iter().enumerate() {
            let col = (0..s.n_times())
                .map(|k| {
                    let v = s.values[k * d + j];
                    if v.is_nan() {
                        Value::Null
                    } else {
                        Value::from(v)
                    }
                })
                .collect();
            sensors.insert(name.clone(), Value::Array(col));
        }
        let statics: Map<String, Value> =
            dataset.demographic_names.iter().cloned().zip(s.demographics.iter().map(|&v| Value::from(v))).collect();
        let rec = serde_json::json!({
            "id": s.id,
            "times": s.times,
            "sensors": sensors,
            "static": statics,
            "label": s.label,
        });
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
