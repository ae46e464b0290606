//! Weight files and score tables.

use std::path::{Path, PathBuf};

use feathernet_core::image::Label;
use feathernet_core::weights::{decode, encode, WeightsError};
use feathernet_core::{Model, Scalar};

use crate::manifest::parse_label;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Weights { path: PathBuf, source: WeightsError },
    #[error("{}: line {line}: {message}", path.display())]
    Table { path: PathBuf, line: u64, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_weights<T: Scalar>(model: &Model<T>, path: &Path) -> Result<(), FileError> {
    std::fs::write(path, encode(model)).map_err(io(path))
}

pub fn load_weights(path: &Path) -> Result<Model<f32>, FileError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    decode(&bytes).map_err(|source| FileError::Weights {
        path: path.to_path_buf(),
        source,
    })
}

/// One row of a scores file (`path,score,label`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub path: String,
    pub score: f64,
    pub label: Label,
}

pub const SCORES_HEADER: [&str; 3] = ["path", "score", "label"];

pub fn write_scores(rows: &[ScoreRow], path: &Path) -> Result<(), FileError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut put = |rec: &[&str]| w.write_record(rec).expect("in-memory write");
    put(&SCORES_HEADER);
    for r in rows {
        put(&[&r.path, &r.score.to_string(), &r.label.as_u8().to_string()]);
    }
    std::fs::write(path, w.into_inner().expect("in-memory flush")).map_err(io(path))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, FileError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let table = |line: u64, message: String| FileError::Table {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| table(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != SCORES_HEADER {
        return Err(table(1, "header must be 'path,score,label'".into()));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| table(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let score: f64 = rec[1].parse().map_err(|_| table(line, format!("bad score '{}'", &rec[1])))?;
        let label = parse_label(&rec[2]).ok_or_else(|| table(line, format!("bad label '{}'", &rec[2])))?;
        rows.push(ScoreRow {
            path: rec[0].to_string(),
            score,
            label,
        });
    }
    Ok(rows)
}
