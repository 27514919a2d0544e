//! CSV datasets and JSON artifacts.
//!
//! A dataset CSV has a header row. The id column (default `id`) holds sample
//! ids; when absent, row numbers are used. The label column (default `label`)
//! is optional. Every other column is a numeric feature.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use xfl_core::data::{DataError, Table};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("{path}: line {line}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { path: PathBuf, line: u64, column: String, value: String },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.to_owned(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub id_column: String,
    pub label_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { id_column: "id".into(), label_column: "label".into() }
    }
}

pub fn read_table(path: &Path, schema: &CsvSchema) -> Result<Table, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::io(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let id_pos = headers.iter().position(|h| h == schema.id_column);
    let label_pos = headers.iter().position(|h| h == schema.label_column);
    let feature_pos: Vec<usize> =
        (0..headers.len()).filter(|&i| Some(i) != id_pos && Some(i) != label_pos).collect();
    let feature_names: Vec<String> = feature_pos.iter().map(|&i| headers[i].to_owned()).collect();

    let mut ids = Vec::new();
    let mut columns = vec![Vec::new(); feature_pos.len()];
    let mut labels = label_pos.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        let parse = |i: usize| -> Result<f64, IoError> {
            let v = &rec[i];
            v.parse::<f64>().map_err(|_| IoError::Parse {
                path: path.to_owned(),
                line,
                column: headers[i].to_owned(),
                value: v.to_owned(),
            })
        };
        ids.push(match id_pos {
            Some(i) => rec[i].to_owned(),
            None => row.to_string(),
        });
        for (col, &i) in columns.iter_mut().zip(&feature_pos) {
            col.push(parse(i)?);
        }
        if let (Some(l), Some(i)) = (labels.as_mut(), label_pos) {
            l.push(parse(i)?);
        }
    }
    Table::new(ids, feature_names, columns, labels).map_err(|source| IoError::Data { path: path.to_owned(), source })
}

/// Writes `id`, then the label column when present, then features.
pub fn write_table(path: &Path, table: &Table, schema: &CsvSchema) -> Result<(), IoError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::io(path, e))?;
    let mut header = vec![schema.id_column.clone()];
    if table.labels().is_some() {
        header.push(schema.label_column.clone());
    }
    header.extend(table.feature_names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..table.n_rows() {
        rec.clear();
        rec.push(table.ids()[i].clone());
        if let Some(l) = table.labels() {
            rec.push(l[i].to_string());
        }
        rec.extend(table.columns().iter().map(|c| c[i].to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    IoError::Csv { path: path.to_owned(), line, message: e.to_string() }
}

pub fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
    }
    Ok(())
}

/// Pretty JSON with a trailing newline. Field order follows the type's
/// declaration and maps are sorted, so equal values give equal bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| IoError::Json { path: path.to_owned(), message: e.to_string() })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::Json { path: path.to_owned(), message: e.to_string() })
}

/// Appends one compact JSON line.
pub fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    use std::io::Write;
    ensure_parent(path)?;
    let mut line =
        serde_json::to_vec(value).map_err(|e| IoError::Json { path: path.to_owned(), message: e.to_string() })?;
    line.push(b'\n');
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| IoError::io(path, e))?;
    f.write_all(&line).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Table::new(
            vec!["a".into(), "b".into()],
            vec!["x0".into(), "x1".into()],
            vec![vec![0.1, -1e-300], vec![1.0 / 3.0, 12345.678]],
            Some(vec![1.0, 0.0]),
        )
        .unwrap();
        write_table(&path, &t, &CsvSchema::default()).unwrap();
        assert_eq!(read_table(&path, &CsvSchema::default()).unwrap(), t);
    }

    #[test]
    fn missing_id_column_uses_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "x,y\n1,2\n3,4\n").unwrap();
        let t = read_table(&path, &CsvSchema::default()).unwrap();
        assert_eq!(t.ids(), ["0", "1"]);
        assert!(t.labels().is_none());
        assert_eq!(t.feature_names(), ["x", "y"]);
    }

    #[test]
    fn bad_number_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "id,x\na,1\nb,oops\n").unwrap();
        match read_table(&path, &CsvSchema::default()) {
            Err(IoError::Parse { line, column, value, .. }) => {
                assert_eq!((line, column.as_str(), value.as_str()), (3, "x", "oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "id,x\na,1\nb,2,3\n").unwrap();
        assert!(matches!(read_table(&path, &CsvSchema::default()), Err(IoError::Csv { .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "id,x\na,1\na,2\n").unwrap();
        assert!(matches!(read_table(&path, &CsvSchema::default()), Err(IoError::Data { .. })));
    }
}
