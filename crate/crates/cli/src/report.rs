//! Versioned JSON report of an optimisation run.

use catseye::optimizer::{OptimizationReport, OptimizationSpec};
use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize)]
struct Document<'a> {
    schema_version: u64,
    spec: &'a OptimizationSpec,
    best: &'a catseye::designs::UnitDesign,
    best_offset: f64,
    score: f64,
    seed: u64,
    spec_fingerprint: &'a str,
    grid: &'a [catseye::optimizer::GridRow],
}

pub fn to_json(spec: &OptimizationSpec, report: &OptimizationReport) -> Value {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        spec,
        best: &report.best,
        best_offset: report.best_offset,
        score: report.score,
        seed: report.seed,
        spec_fingerprint: &report.spec_fingerprint,
        grid: &report.grid,
    };
    serde_json::to_value(doc).expect("report fields are plain data")
}

fn number(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("missing number {key}"))
}

fn object<'a>(v: &'a Value, key: &str) -> Result<&'a serde_json::Map<String, Value>, String> {
    v.get(key)
        .and_then(Value::as_object)
        .ok_or_else(|| format!("missing object {key}"))
}

const DESIGN_KEYS: [&str; 10] = [
    "family",
    "R_l",
    "R_m",
    "d",
    "a",
    "n",
    "t",
    "mirror_reflectivity",
    "fresnel_enabled",
    "fill_factor",
];

fn check_design(v: &Value, at: &str) -> Result<(), String> {
    let obj = v
        .as_object()
        .ok_or_else(|| format!("{at} is not an object"))?;
    for key in DESIGN_KEYS {
        if !obj.contains_key(key) {
            return Err(format!("{at} lacks {key}"));
        }
    }
    Ok(())
}

/// Checks a report document against the version 1 layout.
pub fn validate(doc: &Value) -> Result<(), String> {
    match doc.get("schema_version").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        other => return Err(format!("unsupported schema_version {other:?}")),
    }
    object(doc, "spec")?;
    check_design(doc.get("best").ok_or("missing best")?, "best")?;
    number(doc, "best_offset")?;
    let score = number(doc, "score")?;
    doc.get("seed")
        .and_then(Value::as_u64)
        .ok_or("missing seed")?;
    doc.get("spec_fingerprint")
        .and_then(Value::as_str)
        .ok_or("missing spec_fingerprint")?;
    let grid = doc
        .get("grid")
        .and_then(Value::as_array)
        .ok_or("missing grid")?;
    if grid.is_empty() {
        return Err("empty grid".into());
    }
    let mut max = f64::NEG_INFINITY;
    for (i, row) in grid.iter().enumerate() {
        for key in ["offset", "aperture", "score", "stderr"] {
            number(row, key).map_err(|e| format!("grid[{i}]: {e}"))?;
        }
        check_design(
            row.get("design").ok_or(format!("grid[{i}] lacks design"))?,
            "grid design",
        )?;
        max = max.max(number(row, "score")?);
    }
    if score != max {
        return Err(format!("best score {score} is not the grid maximum {max}"));
    }
    Ok(())
}
