//! Dataset manifests: CSV with the header `path,label,modality`. Paths are
//! relative to the directory holding the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use feathernet_core::image::{Label, LabeledSample, Modality};

use crate::pgm::{read_pgm, PgmError};

pub const HEADER: [&str; 3] = ["path", "label", "modality"];

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("header must be 'path,label,modality', found '{0}'")]
    Header(String),
    #[error("line {line}: label '{value}' is not 0 (fake) or 1 (real)")]
    Label { line: u64, value: String },
    #[error("line {line}: unknown modality '{value}'")]
    Modality { line: u64, value: String },
    #[error("line {line}: duplicate path '{path}'")]
    Duplicate { line: u64, path: String },
    #[error("line {line}: '{}' does not exist", path.display())]
    Missing { line: u64, path: PathBuf },
    #[error("{path}: {source}")]
    Image { path: String, source: PgmError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// As written in the manifest.
    pub path: String,
    pub label: Label,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory the record paths are relative to.
    pub base: PathBuf,
    pub records: Vec<Record>,
}

pub fn parse_label(s: &str) -> Option<Label> {
    match s {
        "1" | "real" => Some(Label::Real),
        "0" | "fake" => Some(Label::Fake),
        _ => None,
    }
}

impl Manifest {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Manifest {
            base: base.into(),
            records: Vec::new(),
        }
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| csv_error(&e))?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(ManifestError::Header(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut manifest = Manifest::new(base);
        let mut seen = HashSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| csv_error(&e))?;
            let line = row.position().map_or(0, |p| p.line());
            let (path, label, modality) = (&row[0], &row[1], &row[2]);
            if path.is_empty() {
                return Err(ManifestError::Csv {
                    line,
                    message: "empty path".into(),
                });
            }
            let label = parse_label(label).ok_or_else(|| ManifestError::Label {
                line,
                value: label.into(),
            })?;
            let modality = modality.parse().map_err(|_| ManifestError::Modality {
                line,
                value: modality.into(),
            })?;
            if !seen.insert(path.to_string()) {
                return Err(ManifestError::Duplicate { line, path: path.into() });
            }
            manifest.records.push(Record {
                path: path.into(),
                label,
                modality,
            });
        }
        Ok(manifest)
    }

    /// Reads a manifest and checks that every path resolves.
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Manifest::parse(&text, base)?;
        for (i, r) in manifest.records.iter().enumerate() {
            let full = manifest.resolve(r);
            if !full.is_file() {
                // header is line 1
                return Err(ManifestError::Missing {
                    line: i as u64 + 2,
                    path: full,
                });
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.base.join(&record.path)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.records {
            w.write_record([r.path.as_str(), &r.label.as_u8().to_string(), r.modality.name()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_csv()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads every image in manifest order.
    pub fn load_samples(&self) -> Result<Vec<LabeledSample>, ManifestError> {
        self.records
            .iter()
            .map(|r| {
                let image = read_pgm(&self.resolve(r)).map_err(|source| ManifestError::Image {
                    path: r.path.clone(),
                    source,
                })?;
                Ok(LabeledSample {
                    image,
                    label: r.label,
                    modality: r.modality,
                })
            })
            .collect()
    }
}

fn csv_error(e: &csv::Error) -> ManifestError {
    ManifestError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "path,label,modality\na.pgm,1,depth\nsub/b.pgm,0,ir\n";
        let m = Manifest::parse(text, "root").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].label, Label::Fake);
        assert_eq!(m.resolve(&m.records[1]), Path::new("root/sub/b.pgm"));
        assert_eq!(m.to_csv(), text);
    }

    #[test]
    fn rejections() {
        let err = |t: &str| Manifest::parse(t, ".").unwrap_err();
        assert!(matches!(err("file,label,modality\n"), ManifestError::Header(_)));
        assert!(matches!(err("path,label,modality\na,2,depth\n"), ManifestError::Label { line: 2, .. }));
        assert!(matches!(err("path,label,modality\na,1,sonar\n"), ManifestError::Modality { .. }));
        assert!(matches!(err("path,label,modality\na,1,depth\na,0,depth\n"), ManifestError::Duplicate { line: 3, .. }));
        assert!(matches!(err("path,label,modality\na,1\n"), ManifestError::Csv { .. }));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(Manifest::parse("path,label,modality\n", ".").unwrap().records.is_empty());
    }
}
