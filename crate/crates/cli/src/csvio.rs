//! CSV ingestion with fixed schemas.
//!
//! A header row is required and selects the schema. Lines starting with `#`
//! and blank lines are skipped; line numbers in errors count every physical
//! line of the file, starting at 1. Quoted fields may not span lines.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `x,y`
    Sharp,
    /// `x,d,y`
    Fuzzy,
    /// `z,d,y`
    Late,
    /// `y,d,e,mu0,mu1`
    Ate,
}

impl Schema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::Sharp => &["x", "y"],
            Schema::Fuzzy => &["x", "d", "y"],
            Schema::Late => &["z", "d", "y"],
            Schema::Ate => &["y", "d", "e", "mu0", "mu1"],
        }
    }

    fn header(self) -> String {
        self.columns().join(",")
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: header `{found}` does not match {expected}")]
    SchemaMismatch { line: u64, expected: String, found: String },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a finite number")]
    ParseError { line: u64, column: String, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
    #[error("no header row")]
    MissingHeader,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Parsed rows in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One column by name.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let j = self
            .schema
            .columns()
            .iter()
            .position(|c| *c == name)
            .unwrap_or_else(|| panic!("column `{name}` is not in the schema"));
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Reads `path`, accepting the first schema in `accepted` whose header matches.
pub fn read_csv(path: &Path, accepted: &[Schema]) -> Result<Table, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Io { path: path.display().to_string(), source })?;
    read_csv_from(file, accepted)
}

pub fn read_csv_from<R: Read>(mut reader: R, accepted: &[Schema]) -> Result<Table, CsvError> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|source| CsvError::Io { path: "<input>".into(), source })?;
    // physical line number of every line that carries a record
    let kept: Vec<(u64, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .collect();
    let body = kept.iter().map(|(_, l)| *l).collect::<Vec<_>>().join("\n");
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(body.as_bytes());
    let mut records = rdr.records().zip(kept.iter().map(|(n, _)| *n));
    let (header, header_line) = match records.next() {
        Some((rec, line)) => (rec?, line),
        None => return Err(CsvError::MissingHeader),
    };
    let found: Vec<&str> = header.iter().collect();
    let schema =
        accepted.iter().copied().find(|s| s.columns() == found.as_slice()).ok_or_else(|| CsvError::SchemaMismatch {
            line: header_line,
            expected: accepted.iter().map(|s| format!("`{}`", s.header())).collect::<Vec<_>>().join(" or "),
            found: found.join(","),
        })?;
    let cols = schema.columns();
    let mut rows = Vec::new();
    for (rec, line) in records {
        let rec = rec?;
        if rec.len() != cols.len() {
            return Err(CsvError::FieldCount { line, expected: cols.len(), found: rec.len() });
        }
        let row = rec
            .iter()
            .zip(cols)
            .map(|(v, c)| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(CsvError::ParseError { line, column: (*c).to_string(), value: v.to_string() }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { schema, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# note\nx,y\n\n0.5,1\n# mid\n-0.25,2\n";
        let t = read_csv_from(text.as_bytes(), &[Schema::Sharp, Schema::Fuzzy]).unwrap();
        assert_eq!(t.schema, Schema::Sharp);
        assert_eq!(t.rows, vec![vec![0.5, 1.0], vec![-0.25, 2.0]]);
    }

    #[test]
    fn header_selects_fuzzy() {
        let t = read_csv_from("x,d,y\n0.1,1,2\n".as_bytes(), &[Schema::Sharp, Schema::Fuzzy]).unwrap();
        assert_eq!(t.schema, Schema::Fuzzy);
        assert_eq!(t.column("d"), vec![1.0]);
    }

    #[test]
    fn bad_value_reports_its_line() {
        let err = read_csv_from("x,y\n1,2\n\n3,abc\n".as_bytes(), &[Schema::Sharp]).unwrap_err();
        match err {
            CsvError::ParseError { line, column, .. } => {
                assert_eq!(line, 4);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_header_is_a_schema_mismatch() {
        let err = read_csv_from("# c\na,b\n1,2\n".as_bytes(), &[Schema::Sharp]).unwrap_err();
        assert!(matches!(err, CsvError::SchemaMismatch { line: 2, .. }), "{err}");
    }
}
