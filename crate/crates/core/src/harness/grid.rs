//! Declarative experiment grids.
//!
//! ```toml
//! [defaults]                      # merged under every experiment
//! scheme = "mean_of_videos"
//! model = { input_size = 64, encoder_widths = [8, 16, 32, 32] }
//! schedule = { max_epochs = 20, seed = 1 }
//! dataset = { kind = "cdnet2014", root = "data/cdnet", frames_per_video = 200 }
//!
//! [[experiment]]
//! presets = ["G1", "G2", "G3"]   # or `preset = "G1"`; neither means the default model
//! name = "gap"                    # optional prefix
//! dataset = { categories = ["baseline", "badWeather"] }
//!
//! [experiment.vary]               # cross product over dotted paths
//! "schedule.optimizer" = ["adam", "rmsprop"]
//! ```
//!
//! Tables are merged key by key: preset, then `defaults`, then the
//! experiment's own tables, then one combination of `vary`.

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use super::ExperimentSpec;
use crate::model::{preset, ModelConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("grid defines no experiments")]
    Empty,
    #[error("experiment name `{0}` appears more than once")]
    Duplicate(String),
}

fn perr(location: impl Into<String>, message: impl Into<String>) -> GridError {
    GridError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Table, top: &Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn set_path(table: &mut Table, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return;
        }
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        cur = entry.as_table_mut().expect("table");
    }
}

fn as_table<'a>(v: &'a Value, location: &str) -> Result<&'a Table, GridError> {
    v.as_table().ok_or_else(|| perr(location, "expected a table"))
}

fn decode<T: DeserializeOwned>(v: Value, location: &str) -> Result<T, GridError> {
    v.try_into().map_err(|e: toml::de::Error| perr(location, e.message().to_string()))
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(value_label).collect::<Vec<_>>().join("+"),
        other => other.to_string(),
    }
}

const SECTION_KEYS: [&str; 4] = ["model", "schedule", "dataset", "scheme"];
const EXPERIMENT_KEYS: [&str; 9] = [
    "name",
    "preset",
    "presets",
    "vary",
    "model",
    "schedule",
    "dataset",
    "scheme",
    "pretrained",
];

fn check_keys(t: &Table, allowed: &[&str], location: &str) -> Result<(), GridError> {
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(perr(format!("{location}.{k}"), "unknown field"));
        }
    }
    Ok(())
}

fn preset_list(exp: &Table, location: &str) -> Result<Vec<Option<String>>, GridError> {
    let one = exp.get("preset");
    let many = exp.get("presets");
    if one.is_some() && many.is_some() {
        return Err(perr(location, "give either `preset` or `presets`, not both"));
    }
    if let Some(v) = one {
        let s = v.as_str().ok_or_else(|| perr(format!("{location}.preset"), "expected a string"))?;
        return Ok(vec![Some(s.to_string())]);
    }
    if let Some(v) = many {
        let arr = v
            .as_array()
            .ok_or_else(|| perr(format!("{location}.presets"), "expected an array"))?;
        if arr.is_empty() {
            return Err(perr(format!("{location}.presets"), "empty preset list"));
        }
        return arr
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.as_str()
                    .map(|s| Some(s.to_string()))
                    .ok_or_else(|| perr(format!("{location}.presets[{i}]"), "expected a string"))
            })
            .collect();
    }
    Ok(vec![None])
}

/// All assignments of the `vary` table, in key order then value order.
fn combinations(exp: &Table, location: &str) -> Result<Vec<Vec<(String, Value)>>, GridError> {
    let Some(v) = exp.get("vary") else {
        return Ok(vec![Vec::new()]);
    };
    let vary = as_table(v, &format!("{location}.vary"))?;
    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in vary {
        let loc = format!("{location}.vary.\"{key}\"");
        let head = key.split('.').next().unwrap_or_default();
        if !SECTION_KEYS.contains(&head) {
            return Err(perr(&loc, format!("`{head}` is not one of model, schedule, dataset, scheme")));
        }
        let arr = values.as_array().ok_or_else(|| perr(&loc, "expected an array of values"))?;
        if arr.is_empty() {
            return Err(perr(&loc, "no values to vary over"));
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                arr.iter().map(move |val| {
                    let mut c = c.clone();
                    c.push((key.clone(), val.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(combos)
}

pub fn parse_grid(text: &str) -> Result<Vec<ExperimentSpec>, GridError> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        let location = e
            .span()
            .map(|s| {
                let (l, c) = line_col(text, s.start);
                format!("line {l}, column {c}")
            })
            .unwrap_or_else(|| "document".into());
        perr(location, e.message().to_string())
    })?;
    check_keys(&doc, &["defaults", "experiment"], "document")?;
    let defaults = match doc.get("defaults") {
        Some(v) => {
            let t = as_table(v, "defaults")?.clone();
            check_keys(&t, &SECTION_KEYS, "defaults")?;
            t
        }
        None => Table::new(),
    };
    let experiments = match doc.get("experiment") {
        None => return Err(GridError::Empty),
        Some(Value::Array(a)) if a.is_empty() => return Err(GridError::Empty),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(perr("experiment", "expected [[experiment]] entries")),
    };

    let mut specs = Vec::new();
    let mut names = BTreeSet::new();
    for (i, e) in experiments.iter().enumerate() {
        let location = format!("experiment[{i}]");
        let exp = as_table(e, &location)?;
        check_keys(exp, &EXPERIMENT_KEYS, &location)?;
        let prefix = match exp.get("name") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| perr(format!("{location}.name"), "expected a string"))?
                    .to_string(),
            ),
            None => None,
        };
        let pretrained = match exp.get("pretrained") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| perr(format!("{location}.pretrained"), "expected a path string"))?
                    .into(),
            ),
            None => None,
        };
        let presets = preset_list(exp, &location)?;
        let combos = combinations(exp, &location)?;
        for (pi, p) in presets.iter().enumerate() {
            let base_model = match p {
                Some(name) => preset(name)
                    .ok_or_else(|| perr(format!("{location}.presets[{pi}]"), format!("unknown preset `{name}`")))?,
                None => ModelConfig::default(),
            };
            for combo in &combos {
                let mut doc = Table::new();
                doc.insert(
                    "model".into(),
                    Value::try_from(&base_model).map_err(|e| perr(&location, e.to_string()))?,
                );
                merge(&mut doc, &defaults);
                let own: Table = exp
                    .iter()
                    .filter(|(k, _)| SECTION_KEYS.contains(&k.as_str()))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                merge(&mut doc, &own);
                for (k, v) in combo {
                    set_path(&mut doc, k, v.clone());
                }
                let mut parts: Vec<String> = Vec::new();
                parts.extend(prefix.clone());
                parts.extend(p.clone());
                if parts.is_empty() {
                    parts.push(format!("experiment{i}"));
                }
                let mut name = parts.join("/");
                if !combo.is_empty() {
                    let tags: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={}", value_label(v))).collect();
                    name = format!("{name}[{}]", tags.join(","));
                }
                let spec = ExperimentSpec {
                    model: decode(doc.remove("model").unwrap_or(Value::Table(Table::new())), &format!("{location}.model"))?,
                    schedule: decode(
                        doc.remove("schedule").unwrap_or(Value::Table(Table::new())),
                        &format!("{location}.schedule"),
                    )?,
                    dataset: decode(
                        doc.remove("dataset").ok_or_else(|| perr(&location, "no dataset selector"))?,
                        &format!("{location}.dataset"),
                    )?,
                    scheme: match doc.remove("scheme") {
                        Some(v) => decode(v, &format!("{location}.scheme"))?,
                        None => Default::default(),
                    },
                    preset: p.clone(),
                    pretrained: pretrained.clone(),
                    name: name.clone(),
                };
                spec.model
                    .validate()
                    .map_err(|e| perr(format!("{location}.model"), e.to_string()))?;
                spec.schedule
                    .validate()
                    .map_err(|e| perr(format!("{location}.schedule"), e.to_string()))?;
                if !names.insert(name.clone()) {
                    return Err(GridError::Duplicate(name));
                }
                specs.push(spec);
            }
        }
    }
    Ok(specs)
}

/// A single experiment document: the keys of one `[[experiment]]` entry at
/// top level (plus an optional `[defaults]`). Must expand to exactly one spec.
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec, GridError> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| perr("document", e.message().to_string()))?;
    let defaults = doc.remove("defaults");
    let mut grid = Table::new();
    if let Some(d) = defaults {
        grid.insert("defaults".into(), d);
    }
    grid.insert("experiment".into(), Value::Array(vec![Value::Table(doc)]));
    let mut specs = parse_grid(&toml::to_string(&grid).expect("table serializes"))?;
    match specs.len() {
        1 => Ok(specs.remove(0)),
        n => Err(perr("document", format!("expands to {n} experiments; use a grid instead"))),
    }
}
