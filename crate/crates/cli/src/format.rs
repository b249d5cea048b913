//! Text output: 9-significant-digit numbers, CSV tables and JSON documents.

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

/// Formats `x` with 9 significant digits, in plain notation for moderate
/// magnitudes and scientific notation otherwise. Trailing zeros are dropped.
pub fn g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        g9(x).parse().expect("g9 output parses")
    } else {
        x
    }
}

/// A CSV table with one header row naming each quantity and its unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let err = |e: csv::Error| CliError::config(format!("csv encoding failed: {e}"));
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::config(format!("csv encoding failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CliError::config(e.to_string()))
    }
}

/// Rounds every number in a JSON tree to 9 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round9(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with rounded numbers and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::config(format!("json encoding failed: {e}")))?;
    let mut s = serde_json::to_string_pretty(&round_json(v))
        .map_err(|e| CliError::config(format!("json encoding failed: {e}")))?;
    s.push('\n');
    Ok(s)
}
