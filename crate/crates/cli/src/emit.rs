//! CSV and JSON writers. Both carry the resolved config as a header so a
//! file can be re-run from its own contents.

use std::io::Write;

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format, Mode};
use crate::experiment::{Cell, Table};

/// Everything written besides the table itself.
#[derive(Debug, Clone)]
pub struct Header<'a> {
    pub mode: Mode,
    pub config: &'a ExperimentConfig,
    /// ISO-8601 timestamp; omitted when `None`.
    pub generated: Option<String>,
}

fn float_text(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => float_text(*v),
        Cell::Text(s) => s.clone(),
    }
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Int(v) => json!(v),
        Cell::Float(v) if v.is_finite() => json!(v),
        Cell::Float(_) => Value::Null,
        Cell::Text(s) => json!(s),
    }
}

pub fn emit<W: Write>(
    out: &mut W,
    header: &Header,
    table: &Table,
    format: Format,
) -> std::io::Result<()> {
    match format {
        Format::Csv => emit_csv(out, header, table),
        Format::Json => emit_json(out, header, table),
    }
}

fn emit_csv<W: Write>(out: &mut W, header: &Header, table: &Table) -> std::io::Result<()> {
    writeln!(out, "# s3 {}", header.mode.name())?;
    writeln!(out, "# config: {}", serde_json::to_string(header.config)?)?;
    if let Some(ts) = &header.generated {
        writeln!(out, "# generated: {ts}")?;
    }
    if let Some(s) = &table.summary {
        writeln!(out, "# summary: {s}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(cell_text))?;
    }
    w.flush()
}

fn emit_json<W: Write>(out: &mut W, header: &Header, table: &Table) -> std::io::Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("mode".into(), json!(header.mode.name()));
    doc.insert("config".into(), serde_json::to_value(header.config)?);
    if let Some(ts) = &header.generated {
        doc.insert("generated".into(), json!(ts));
    }
    if let Some(s) = &table.summary {
        doc.insert("summary".into(), s.clone());
    }
    doc.insert("columns".into(), json!(table.columns));
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| Value::Array(r.iter().map(cell_json).collect()))
        .collect();
    doc.insert("rows".into(), Value::Array(rows));
    serde_json::to_writer_pretty(&mut *out, &Value::Object(doc))?;
    writeln!(out)
}
