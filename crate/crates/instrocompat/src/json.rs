//! Shared JSON formats for devices, dilations, and verdict reports.
//!
//! Complex numbers serialize as `[re, im]` pairs and matrices as row-major
//! nested arrays. Devices carry a `"kind"` discriminator:
//!
//! ```json
//! {"kind": "instrument", "dim_in": 2, "dim_out": 2,
//!  "outcomes": ["0", "1"], "ops": {"0": {"kraus": [[[ [1.0,0.0], ... ]]]}}}
//! ```
//!
//! POVMs use `"kind": "povm"` with an `"effects"` map, dilations are
//! `{"w": matrix, "e": povm, "dim_anc": n}`.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::devices::{DeviceError, Instrument, Operation, Povm};
use crate::dilation::Dilation;
use crate::linalg::{CMatrix, C64};

/// Errors from parsing the shared JSON formats; the message names the field
/// that failed.
#[derive(Debug, Error)]
pub enum JsonError {
    #[error("malformed device file at {field}: {reason}")]
    Malformed { field: String, reason: String },
    #[error("device validation failed: {0}")]
    Device(#[from] DeviceError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
}

fn bad(field: &str, reason: impl Into<String>) -> JsonError {
    JsonError::Malformed {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Serialize a matrix as row-major nested arrays of `[re, im]` pairs.
pub fn matrix_to_json(m: &CMatrix) -> Value {
    let rows: Vec<Value> = (0..m.rows())
        .map(|i| {
            let row: Vec<Value> = (0..m.cols())
                .map(|j| {
                    let z = m.at(i, j);
                    json!([z.re, z.im])
                })
                .collect();
            Value::Array(row)
        })
        .collect();
    Value::Array(rows)
}

fn complex_from_json(v: &Value, field: &str) -> Result<C64, JsonError> {
    let pair = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| bad(field, "expected a [re, im] pair"))?;
    let re = pair[0]
        .as_f64()
        .ok_or_else(|| bad(field, "real part is not a number"))?;
    let im = pair[1]
        .as_f64()
        .ok_or_else(|| bad(field, "imaginary part is not a number"))?;
    Ok(C64::new(re, im))
}

/// Parse a matrix from row-major nested arrays of `[re, im]` pairs.
pub fn matrix_from_json(v: &Value, field: &str) -> Result<CMatrix, JsonError> {
    let rows = v
        .as_array()
        .ok_or_else(|| bad(field, "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(bad(field, "matrix has no rows"));
    }
    let mut parsed: Vec<Vec<C64>> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let cells = row
            .as_array()
            .ok_or_else(|| bad(&format!("{field}[{i}]"), "expected an array row"))?;
        let mut out = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            out.push(complex_from_json(cell, &format!("{field}[{i}][{j}]"))?);
        }
        parsed.push(out);
    }
    let cols = parsed[0].len();
    if parsed.iter().any(|r| r.len() != cols) {
        return Err(bad(field, "rows have differing lengths"));
    }
    Ok(CMatrix::from_rows(&parsed))
}

// ---------------------------------------------------------------------------
// Devices
// ---------------------------------------------------------------------------

/// A device file: either a POVM or an instrument.
#[derive(Debug, Clone)]
pub enum Device {
    Povm(Povm),
    Instrument(Instrument),
}

impl Device {
    /// View as an instrument (POVMs become dim_out = 1 instruments).
    pub fn as_instrument(&self) -> Instrument {
        match self {
            Device::Povm(p) => p.as_instrument(),
            Device::Instrument(i) => i.clone(),
        }
    }

    pub fn dim_in(&self) -> usize {
        match self {
            Device::Povm(p) => p.dim_in(),
            Device::Instrument(i) => i.dim_in(),
        }
    }
}

/// Serialize a POVM.
pub fn povm_to_json(p: &Povm) -> Value {
    let mut effects = Map::new();
    for (label, e) in p.outcomes().iter().zip(p.effects()) {
        effects.insert(label.clone(), matrix_to_json(e));
    }
    json!({
        "kind": "povm",
        "dim_in": p.dim_in(),
        "outcomes": p.outcomes(),
        "effects": Value::Object(effects),
    })
}

/// Serialize an instrument with per-outcome Kraus lists.
pub fn instrument_to_json(ins: &Instrument) -> Value {
    let mut ops = Map::new();
    for (label, op) in ins.outcomes().iter().zip(ins.ops()) {
        let kraus: Vec<Value> = op.kraus().iter().map(matrix_to_json).collect();
        ops.insert(label.clone(), json!({ "kraus": kraus }));
    }
    json!({
        "kind": "instrument",
        "dim_in": ins.dim_in(),
        "dim_out": ins.dim_out(),
        "outcomes": ins.outcomes(),
        "ops": Value::Object(ops),
    })
}

pub fn device_to_json(d: &Device) -> Value {
    match d {
        Device::Povm(p) => povm_to_json(p),
        Device::Instrument(i) => instrument_to_json(i),
    }
}

fn get_usize(obj: &Map<String, Value>, field: &str) -> Result<usize, JsonError> {
    obj.get(field)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| bad(field, "expected a positive integer"))
}

fn get_outcomes(obj: &Map<String, Value>) -> Result<Vec<String>, JsonError> {
    let arr = obj
        .get("outcomes")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("outcomes", "expected an array of labels"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("outcomes[{i}]"), "expected a string"))
        })
        .collect()
}

/// Parse a device (POVM or instrument) from JSON.
pub fn device_from_json(v: &Value) -> Result<Device, JsonError> {
    let obj = v
        .as_object()
        .ok_or_else(|| bad("<root>", "expected a JSON object"))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("kind", "expected \"povm\" or \"instrument\""))?;
    match kind {
        "povm" => {
            let dim_in = get_usize(obj, "dim_in")?;
            let outcomes = get_outcomes(obj)?;
            let effects_obj = obj
                .get("effects")
                .and_then(Value::as_object)
                .ok_or_else(|| bad("effects", "expected an object keyed by outcome"))?;
            let mut effects = Vec::with_capacity(outcomes.len());
            for label in &outcomes {
                let e = effects_obj
                    .get(label)
                    .ok_or_else(|| bad(&format!("effects.{label}"), "missing effect"))?;
                let m = matrix_from_json(e, &format!("effects.{label}"))?;
                if m.rows() != dim_in || m.cols() != dim_in {
                    return Err(bad(
                        &format!("effects.{label}"),
                        format!("expected a {dim_in}x{dim_in} matrix"),
                    ));
                }
                effects.push(m);
            }
            Ok(Device::Povm(Povm::new(dim_in, outcomes, effects)?))
        }
        "instrument" => {
            let dim_in = get_usize(obj, "dim_in")?;
            let dim_out = get_usize(obj, "dim_out")?;
            let outcomes = get_outcomes(obj)?;
            let ops_obj = obj
                .get("ops")
                .and_then(Value::as_object)
                .ok_or_else(|| bad("ops", "expected an object keyed by outcome"))?;
            let mut ops = Vec::with_capacity(outcomes.len());
            for label in &outcomes {
                let entry = ops_obj
                    .get(label)
                    .and_then(Value::as_object)
                    .ok_or_else(|| bad(&format!("ops.{label}"), "missing operation"))?;
                let kraus_v = entry
                    .get("kraus")
                    .and_then(Value::as_array)
                    .ok_or_else(|| bad(&format!("ops.{label}.kraus"), "expected an array"))?;
                let mut kraus = Vec::with_capacity(kraus_v.len());
                for (k, kv) in kraus_v.iter().enumerate() {
                    let m = matrix_from_json(kv, &format!("ops.{label}.kraus[{k}]"))?;
                    if m.rows() != dim_out || m.cols() != dim_in {
                        return Err(bad(
                            &format!("ops.{label}.kraus[{k}]"),
                            format!("expected a {dim_out}x{dim_in} matrix"),
                        ));
                    }
                    kraus.push(m);
                }
                ops.push(Operation::from_kraus(kraus, dim_in, dim_out)?);
            }
            Ok(Device::Instrument(Instrument::new(
                dim_in, dim_out, outcomes, ops,
            )?))
        }
        other => Err(bad("kind", format!("unknown device kind \"{other}\""))),
    }
}

/// Read a device from a file path.
pub fn device_from_file(path: &std::path::Path) -> Result<Device, JsonError> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    device_from_json(&v)
}

// ---------------------------------------------------------------------------
// Dilations
// ---------------------------------------------------------------------------

pub fn dilation_to_json(d: &Dilation) -> Value {
    json!({
        "dim_anc": d.dim_anc,
        "w": matrix_to_json(&d.w),
        "e": povm_to_json(&d.e),
    })
}

pub fn dilation_from_json(v: &Value) -> Result<Dilation, JsonError> {
    let obj = v
        .as_object()
        .ok_or_else(|| bad("<root>", "expected a JSON object"))?;
    let dim_anc = get_usize(obj, "dim_anc")?;
    let w = matrix_from_json(
        obj.get("w").ok_or_else(|| bad("w", "missing isometry"))?,
        "w",
    )?;
    let e = match device_from_json(
        obj.get("e").ok_or_else(|| bad("e", "missing ancilla POVM"))?,
    )? {
        Device::Povm(p) => p,
        Device::Instrument(_) => {
            return Err(bad("e", "expected a POVM, found an instrument"))
        }
    };
    Ok(Dilation { dim_anc, w, e })
}
