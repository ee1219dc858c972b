//! Lenient extraction of CSV records and rules from generator output.

use crate::error::Result;
use crate::rules::{parse_dgr_for, Dgr};
use crate::table::{Kind, Record, Schema, Value};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedRows {
    pub rows: Vec<Record>,
    /// Rejected lines with the reason.
    pub rejected: Vec<(String, String)>,
}

/// Lines inside fenced blocks when any fence is present, otherwise every line.
fn body_lines(raw: &str) -> Vec<&str> {
    let has_fence = raw.lines().any(|l| l.trim_start().starts_with("```"));
    if !has_fence {
        return raw.lines().collect();
    }
    let mut inside = false;
    let mut out = Vec::new();
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
            continue;
        }
        if inside {
            out.push(line);
        }
    }
    out
}

fn parse_line(line: &str, schema: &Schema) -> std::result::Result<Record, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(line.as_bytes());
    let rec = match rdr.records().next() {
        Some(Ok(r)) => r,
        Some(Err(e)) => return Err(e.to_string()),
        None => return Err("empty line".into()),
    };
    if rec.len() != schema.len() {
        return Err(format!("expected {} fields, found {}", schema.len(), rec.len()));
    }
    rec.iter()
        .zip(schema.attributes())
        .map(|(f, a)| {
            let f = f.trim();
            if f.is_empty() {
                return Err(format!("missing value for `{}`", a.name));
            }
            match a.kind {
                Kind::Numeric => f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Value::Num)
                    .ok_or_else(|| format!("`{f}` is not numeric for `{}`", a.name)),
                Kind::Categorical => Ok(Value::Cat(f.to_string())),
            }
        })
        .collect()
}

/// Extracts schema-conforming CSV rows from free-form text. Fenced blocks are
/// preferred when present; header lines and blank lines are skipped; every
/// other malformed line is rejected with a reason instead of failing.
pub fn parse_generated(raw: &str, schema: &Schema) -> ParsedRows {
    let header = schema.header().join(",");
    let mut out = ParsedRows::default();
    for line in body_lines(raw) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let squashed: String = trimmed.split(',').map(str::trim).collect::<Vec<_>>().join(",");
        if squashed == header {
            continue;
        }
        match parse_line(trimmed, schema) {
            Ok(r) => out.rows.push(r),
            Err(reason) => {
                log::debug!("rejected generated line `{trimmed}`: {reason}");
                out.rejected.push((trimmed.to_string(), reason));
            }
        }
    }
    out
}

/// Parses one rule per line, skipping blank lines, list markers and fences.
/// Lines that do not parse or do not fit the schema are returned as rejects.
pub fn parse_rules(raw: &str, schema: &Schema) -> (Vec<Dgr>, Vec<(String, String)>) {
    let mut rules = Vec::new();
    let mut rejected = Vec::new();
    for line in raw.lines() {
        let mut t = line.trim();
        if t.is_empty() || t.starts_with("```") {
            continue;
        }
        t = t.trim_start_matches(['-', '*', '•']).trim_start();
        if let Some(pos) = t.find(". ") {
            if t[..pos].chars().all(|c| c.is_ascii_digit()) && pos > 0 {
                t = &t[pos + 2..];
            }
        }
        let r: Result<Dgr> = parse_dgr_for(t, schema);
        match r {
            Ok(r) => rules.push(r),
            Err(e) => rejected.push((t.to_string(), e.to_string())),
        }
    }
    (rules, rejected)
}
