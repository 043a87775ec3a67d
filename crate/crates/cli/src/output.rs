//! Report envelopes and their JSON / CSV renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use todalab::{Error, Result};

use crate::config::{Format, RunConfig};

/// Wraps a command result with the config hash and the tolerances in force.
pub fn envelope(command: &str, cfg: &RunConfig, result: impl Serialize) -> Result<Value> {
    let result = serde_json::to_value(result).map_err(|e| Error::Data(format!("serializing report: {e}")))?;
    Ok(json!({
        "command": command,
        "config_hash": cfg.hash(),
        "tolerances": {
            "solver.grad_tol": cfg.solver.grad_tol,
            "solver.max_iter": cfg.solver.max_iter,
            "solver.ceiling": cfg.solver.ceiling,
        },
        "result": result,
    }))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Flat `key,value` rows with dotted keys.
pub fn to_csv(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{}", v.replace(',', ";"));
    }
    out
}

pub fn render(v: &Value, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(v).expect("values always serialize");
            s.push('\n');
            s
        }
        Format::Csv => to_csv(v),
    }
}

/// Writes `text` to `dir/name`, or to stdout without a directory.
pub fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            std::fs::write(d.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn extension(format: Format) -> &'static str {
    match format {
        Format::Json => "json",
        Format::Csv => "csv",
    }
}
