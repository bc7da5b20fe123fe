//! CSV tables with `#`-prefixed metadata lines.

use std::io::Write;

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    metadata: Vec<(String, String)>,
    failures: Vec<String>,
}

impl OutputTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    /// Per-point failures; a non-empty list means a partial run.
    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidParameter(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn add_metadata(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn add_failure(&mut self, what: impl Into<String>) {
        self.failures.push(what.into());
    }

    /// Values of one column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Rows whose `key` column equals `value` exactly.
    pub fn filter(&self, key: &str, value: f64) -> Vec<&Vec<f64>> {
        match self.columns.iter().position(|c| c == key) {
            Some(idx) => self.rows.iter().filter(|r| r[idx] == value).collect(),
            None => Vec::new(),
        }
    }

    /// Writes the table; `timestamp` adds a wall-clock line that is the only
    /// non-reproducible part of the output.
    pub fn write_csv<W: Write>(&self, mut w: W, timestamp: Option<u64>) -> Result<()> {
        writeln!(w, "# artifact = {ARTIFACT_VERSION}")?;
        if let Some(ts) = timestamp {
            writeln!(w, "# timestamp_unix = {ts}")?;
        }
        for (k, v) in &self.metadata {
            writeln!(w, "# {k} = {v}")?;
        }
        for f in &self.failures {
            writeln!(w, "# failure = {f}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Full double precision in scientific notation.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_metadata_then_rows() {
        let mut t = OutputTable::new(["x", "y"]);
        t.push_row(vec![0.1, f64::NAN]).unwrap();
        t.add_metadata("scenario", "custom");
        t.add_failure("point 3: not converged");
        assert!(t.push_row(vec![1.0]).is_err());
        let mut buf = Vec::new();
        t.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# artifact = "));
        assert_eq!(lines[1], "# scenario = custom");
        assert_eq!(lines[2], "# failure = point 3: not converged");
        assert_eq!(lines[3], "x,y");
        assert_eq!(lines[4], "1.0000000000000001e-1,nan");
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn timestamp_is_optional() {
        let t = OutputTable::new(["x"]);
        let mut a = Vec::new();
        t.write_csv(&mut a, Some(12)).unwrap();
        assert!(String::from_utf8(a)
            .unwrap()
            .contains("# timestamp_unix = 12"));
    }
}
