//! Provenance stamping and deterministic file output.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::CliError;

/// Significant digits kept for every float written to JSON.
pub const FLOAT_DIGITS: usize = 12;

/// Rounds every non-integer number to [`FLOAT_DIGITS`] significant digits so
/// the text form does not depend on shortest-representation printing.
pub fn fix_precision(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = format!("{x:.prec$e}", prec = FLOAT_DIGITS - 1).parse().expect("round trip");
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(fix_precision),
        Value::Object(o) => o.values_mut().for_each(fix_precision),
        _ => {}
    }
}

pub fn provenance(command: &str, hash: &str, seed: u64) -> Value {
    json!({
        "command": command,
        "config_sha256": hash,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

/// Adds `provenance` to a JSON object, fixes its precision and writes it.
pub fn write_json(path: &Path, mut v: Value, provenance: Value) -> Result<Value, CliError> {
    if let Value::Object(o) = &mut v {
        o.insert("provenance".into(), provenance);
    }
    fix_precision(&mut v);
    let text = serde_json::to_string_pretty(&v).expect("json serializes") + "\n";
    write_text(path, &text)?;
    Ok(v)
}

/// CSV with a leading `# config_sha256=… seed=…` comment line.
pub fn write_csv(path: &Path, body: &str, hash: &str, seed: u64) -> Result<(), CliError> {
    write_text(path, &format!("# config_sha256={hash} seed={seed}\n{body}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}
