//! Fusion config files and the score tables consumed and produced by `fuse`.
//!
//! Config keys:
//!
//! ```text
//! members = depth_a:2, depth_b, depth_c    # name[:weight], weight defaults to 1
//! anchor = depth_a
//! ir = ir_model
//! max_threshold = 0.9                      # optional, as are the other three
//! min_threshold = 0.1
//! anchor_threshold = 0.5
//! ir_threshold = 0.5
//! ```

use feathernet_core::fusion::{Decision, FusionConfig, ScoreRecord, Thresholds};

use crate::config::parse_kv;

#[derive(Debug, thiserror::Error)]
pub enum FuseIoError {
    #[error("fusion config: {0}")]
    Syntax(#[from] crate::config::ConfigError),
    #[error("fusion config line {line}: {message}")]
    Value { line: usize, message: String },
    #[error("fusion config: missing key '{0}'")]
    Missing(&'static str),
    #[error("fusion config: {0}")]
    Invalid(#[from] feathernet_core::Error),
    #[error("scores table line {line}: {message}")]
    Table { line: u64, message: String },
}

pub fn parse_fusion_config(text: &str) -> Result<FusionConfig, FuseIoError> {
    let mut members = None;
    let mut anchor = None;
    let mut ir = None;
    let mut t = Thresholds::default();
    for (line, key, value) in parse_kv(text)? {
        let bad = |message: String| FuseIoError::Value { line, message };
        let number = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("'{v}' is not a number")));
        match key.as_str() {
            "members" => {
                let mut list = Vec::new();
                for item in value.split(',').map(str::trim) {
                    let (name, weight) = match item.split_once(':') {
                        Some((n, w)) => (n.trim(), number(w.trim())?),
                        None => (item, 1.0),
                    };
                    if name.is_empty() {
                        return Err(bad("empty member name".into()));
                    }
                    list.push((name.to_string(), weight));
                }
                members = Some(list);
            }
            "anchor" => anchor = Some(value),
            "ir" => ir = Some(value),
            "max_threshold" => t.max = number(&value)?,
            "min_threshold" => t.min = number(&value)?,
            "anchor_threshold" => t.anchor = number(&value)?,
            "ir_threshold" => t.ir = number(&value)?,
            _ => return Err(bad(format!("unknown key '{key}'"))),
        }
    }
    let members = members.ok_or(FuseIoError::Missing("members"))?;
    let anchor = anchor.ok_or(FuseIoError::Missing("anchor"))?;
    let ir = ir.ok_or(FuseIoError::Missing("ir"))?;
    Ok(FusionConfig::new(members, anchor, ir, t)?)
}

/// Reads a table whose first column is `sample_id` and whose remaining
/// columns hold one score per model. Every configured model must have a
/// column; extra columns are ignored.
pub fn parse_score_table(text: &str, config: &FusionConfig) -> Result<Vec<ScoreRecord>, FuseIoError> {
    let table = |line: u64, message: String| FuseIoError::Table { line, message };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| table(1, e.to_string()))?.clone();
    if header.get(0) != Some("sample_id") {
        return Err(table(1, "first column must be 'sample_id'".into()));
    }
    for name in config.model_names() {
        if !header.iter().any(|h| h == name) {
            return Err(table(1, format!("no column for model '{name}'")));
        }
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| table(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut r = ScoreRecord::new(&rec[0]);
        for (col, name) in header.iter().enumerate().skip(1) {
            if !config.model_names().any(|m| m == name) {
                continue;
            }
            let v: f64 = rec[col].parse().map_err(|_| table(line, format!("model '{name}': bad score '{}'", &rec[col])))?;
            r = r.with(name, v);
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_decisions(rows: &[(String, Decision)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "final_score", "branch"]).expect("in-memory write");
    for (id, d) in rows {
        w.write_record([id.as_str(), &d.score.to_string(), d.trace.branch.name()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
