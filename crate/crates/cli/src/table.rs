//! Numeric CSV tables: a header row followed by rows of floats.

use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("empty table")]
    Empty,
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Shortest decimal that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", format_float(*v));
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_csv(text: &str) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| TableError::Header(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(TableError::Empty);
    }
    if header.iter().any(|h| h.is_empty()) {
        return Err(TableError::Header(format!("empty column name in {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TableError::Row {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(TableError::Row {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| TableError::Row { line, message: format!("not a number: {f:?}") })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reports_line_numbers() {
        let err = parse_csv("t,xi2\n0,1\n0.5,oops\n").unwrap_err();
        assert_eq!(err, TableError::Row { line: 3, message: "not a number: \"oops\"".into() });
        let err = parse_csv("t,xi2\n0,1\n1\n").unwrap_err();
        assert!(matches!(err, TableError::Row { line: 3, .. }));
        assert_eq!(parse_csv(""), Err(TableError::Empty));
    }

    #[test]
    fn integral_values_print_plainly() {
        assert_eq!(format_float(100.0), "100");
        assert_eq!(format_float(0.25), "0.25");
        assert_eq!(format_float(1e-20), "1e-20");
    }

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 0..40)) {
            let mut t = Table::new(["a", "b"]);
            for pair in values.chunks_exact(2) {
                t.push(pair.to_vec());
            }
            let back = parse_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(back.header, t.header);
            prop_assert_eq!(back.rows.len(), t.rows.len());
            for (x, y) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
                prop_assert_eq!(x.to_bits() == y.to_bits() || (*x == 0.0 && *y == 0.0), true);
            }
        }
    }
}
