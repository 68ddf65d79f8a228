//! Numeric CSV tables with an optional `id` column.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use mccqr_core::Matrix;

use crate::CliError;

pub const ID_COLUMN: &str = "id";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    ids: Option<Vec<String>>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

fn parse_cell(raw: &str, row: usize, col: &str, path: &Path) -> Result<f64, CliError> {
    let v = raw.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
        return Err(CliError::Data(format!(
            "{}: row {row}, column '{col}': missing value",
            path.display()
        )));
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::Data(format!(
            "{}: row {row}, column '{col}': '{v}' is not a finite number",
            path.display()
        ))),
    }
}

impl Table {
    /// Reads a headered CSV. Every column except `id` must be numeric; rows
    /// are numbered from 1 after the header in diagnostics.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file =
            File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(CliError::Data(format!(
                "{}: missing header row",
                path.display()
            )));
        }
        for (i, h) in headers.iter().enumerate() {
            if headers[..i].contains(h) {
                return Err(CliError::Data(format!(
                    "{}: duplicate column '{h}'",
                    path.display()
                )));
            }
        }
        let id_pos = headers.iter().position(|h| h == ID_COLUMN);
        let mut ids = id_pos.map(|_| Vec::new());
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        let mut n_rows = 0;
        for (r, record) in reader.records().enumerate() {
            let row = r + 1;
            let record = record
                .map_err(|e| CliError::Data(format!("{}: row {row}: {e}", path.display())))?;
            if record.len() != headers.len() {
                return Err(CliError::Data(format!(
                    "{}: row {row} has {} fields, header has {}",
                    path.display(),
                    record.len(),
                    headers.len()
                )));
            }
            for (c, cell) in record.iter().enumerate() {
                if Some(c) == id_pos {
                    ids.as_mut().expect("id column").push(cell.to_string());
                } else {
                    columns[c].push(parse_cell(cell, row, &headers[c], path)?);
                }
            }
            n_rows += 1;
        }
        Ok(Self {
            headers,
            ids,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn has(&self, name: &str) -> bool {
        name != ID_COLUMN && self.headers.iter().any(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        match self.headers.iter().position(|h| h == name) {
            Some(i) if name != ID_COLUMN => Ok(&self.columns[i]),
            _ => Err(CliError::Data(format!("no numeric column named '{name}'"))),
        }
    }

    /// Explicit ids, or the 0-based row number.
    pub fn ids(&self) -> Vec<String> {
        match &self.ids {
            Some(ids) => ids.clone(),
            None => (0..self.n_rows).map(|i| i.to_string()).collect(),
        }
    }

    pub fn has_ids(&self) -> bool {
        self.ids.is_some()
    }

    /// Numeric columns other than `exclude`, in file order.
    pub fn feature_names(&self, exclude: &[&str]) -> Vec<String> {
        self.headers
            .iter()
            .filter(|h| h.as_str() != ID_COLUMN && !exclude.contains(&h.as_str()))
            .cloned()
            .collect()
    }

    pub fn matrix(&self, names: &[String]) -> Result<Matrix, CliError> {
        let cols: Vec<&[f64]> = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<_, _>>()?;
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            data.extend(cols.iter().map(|c| c[i]));
        }
        Ok(Matrix::from_vec(self.n_rows, cols.len(), data)?)
    }
}

/// Writes rows of already-formatted fields.
pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<Table, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, text).unwrap();
        Table::read(&p)
    }

    #[test]
    fn reads_ids_and_columns() {
        let t = table("id,x0,y\na,1,2\nb,3.5,-4\n").unwrap();
        assert_eq!(t.ids(), vec!["a", "b"]);
        assert_eq!(t.column("x0").unwrap(), &[1.0, 3.5]);
        assert_eq!(t.feature_names(&["y"]), vec!["x0"]);
        assert_eq!(
            t.matrix(&t.feature_names(&[])).unwrap().row(1),
            &[3.5, -4.0]
        );
        assert!(t.column("id").is_err());
    }

    #[test]
    fn missing_value_names_row_and_column() {
        let err = table("x0,x1\n1,2\n3,\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("'x1'"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(table("x0\nabc\n")
            .unwrap_err()
            .to_string()
            .contains("row 1"));
        assert!(table("x0,x0\n1,2\n").is_err());
    }

    #[test]
    fn row_numbers_default_ids() {
        let t = table("x\n5\n6\n").unwrap();
        assert_eq!(t.ids(), vec!["0", "1"]);
        assert!(!t.has_ids());
    }
}
