//! CSV and file plumbing. Numbers are written with 17 significant digits.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TarcoError};

pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.16e}")
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TarcoError {
    TarcoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn input_err(path: &Path, line: usize, message: impl Into<String>) -> TarcoError {
    TarcoError::Input {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// A labelled numeric table: first column holds row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub id_header: String,
    pub columns: Vec<String>,
    pub row_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = read_text(path)?;
    parse_table(path, &text)
}

pub fn parse_table(path: &Path, text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| input_err(path, 1, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(input_err(
            path,
            1,
            "expected an id column and at least one value column",
        ));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| input_err(path, line, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(input_err(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        row_ids.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                input_err(
                    path,
                    line,
                    format!("column '{}': not a number: '{field}'", columns[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(input_err(
                    path,
                    line,
                    format!("column '{}': non-finite value", columns[j]),
                ));
            }
            data.push(v);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), columns.len(), &data);
    Ok(Table {
        id_header: headers[0].to_string(),
        columns,
        row_ids,
        values,
    })
}

pub fn table_csv(
    id_header: &str,
    columns: &[String],
    row_ids: &[String],
    values: &DMatrix<f64>,
) -> String {
    let mut out = csv_field(id_header);
    for c in columns {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (i, id) in row_ids.iter().enumerate() {
        out.push_str(&csv_field(id));
        for j in 0..values.ncols() {
            out.push(',');
            out.push_str(&fmt_f64(values[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn write_table(
    path: &Path,
    id_header: &str,
    columns: &[String],
    row_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    write_text(path, &table_csv(id_header, columns, row_ids, values))
}

pub fn vector_csv(id_header: &str, column: &str, ids: &[String], v: &DVector<f64>) -> String {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    table_csv(id_header, &[column.to_string()], ids, &m)
}

/// Response file: id column plus exactly one numeric column.
pub fn read_response(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let t = read_table(path)?;
    if t.columns.len() != 1 {
        return Err(input_err(
            path,
            1,
            format!(
                "response file must have one value column, found {}",
                t.columns.len()
            ),
        ));
    }
    Ok((t.row_ids, DVector::from_column_slice(t.values.as_slice())))
}

/// Replicate file: group id column, then taxa. Groups are returned in order
/// of first appearance as matrices of their rows.
pub fn read_replicates(path: &Path) -> Result<(Vec<String>, Vec<(String, DMatrix<f64>)>)> {
    let t = read_table(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (i, g) in t.row_ids.iter().enumerate() {
        match order.iter().position(|o| o == g) {
            Some(k) => rows[k].push(i),
            None => {
                order.push(g.clone());
                rows.push(vec![i]);
            }
        }
    }
    let groups = order
        .into_iter()
        .zip(rows)
        .map(|(g, r)| (g, crate::linalg::select_rows(&t.values, &r)))
        .collect();
    Ok((t.columns, groups))
}

/// Square matrix with matching row and column labels.
pub fn read_square(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = read_table(path)?;
    if t.row_ids.len() != t.columns.len() {
        return Err(input_err(
            path,
            1,
            format!(
                "matrix is {}x{}, expected square",
                t.row_ids.len(),
                t.columns.len()
            ),
        ));
    }
    if let Some(i) = t.row_ids.iter().zip(&t.columns).position(|(r, c)| r != c) {
        return Err(input_err(
            path,
            i + 2,
            format!(
                "row label '{}' does not match column '{}'",
                t.row_ids[i], t.columns[i]
            ),
        ));
    }
    Ok((t.columns, t.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn roundtrip_full_precision() {
        let m = dmatrix![0.1, 1.0 / 3.0; -2.5e-300, 0.0];
        let ids = vec!["s1".to_string(), "s,2".to_string()];
        let cols = vec!["a".to_string(), "b".to_string()];
        let text = table_csv("id", &cols, &ids, &m);
        let t = parse_table(Path::new("x.csv"), &text).unwrap();
        assert_eq!(t.values, m);
        assert_eq!(t.row_ids, ids);
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn bad_number_names_line() {
        let err = parse_table(Path::new("c.csv"), "id,a\ns1,1\ns2,x\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c.csv") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn replicate_groups_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "group,a,b\ng2,1,2\ng1,3,4\ng2,5,6\n").unwrap();
        let (taxa, groups) = read_replicates(&p).unwrap();
        assert_eq!(taxa, vec!["a", "b"]);
        assert_eq!(groups[0].0, "g2");
        assert_eq!(groups[0].1, dmatrix![1.0, 2.0; 5.0, 6.0]);
        assert_eq!(groups[1].1.nrows(), 1);
    }
}
