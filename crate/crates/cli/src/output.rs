use std::fs;
use std::io::Write;
use std::path::Path;

use qsv_core::simulator::format_sig9;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Rounds every float in `v` to 9 significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            format_sig9(x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_floats).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serialisable output");
    serde_json::to_string_pretty(&round_floats(v)).expect("valid json")
}

pub fn print_json<T: Serialize>(value: &T) {
    print_line(&to_json(value));
}

/// Prints one line, ignoring a closed stdout.
pub fn print_line(s: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Aligned `key value` lines.
pub fn print_table(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (k, v) in rows {
        // Ignore broken pipes.
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
}

pub fn join_sig9(xs: &[f64]) -> String {
    xs.iter().map(|x| format_sig9(*x)).collect::<Vec<_>>().join(" ")
}
