//! Column CSV files with optional `# key=value` metadata lines.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back yields bit-identical values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&str], columns: Vec<Vec<f64>>) -> Self {
        Table {
            meta: BTreeMap::new(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            columns,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = Vec::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.headers)?;
            let n = self.n_rows();
            if self.columns.iter().any(|c| c.len() != n) {
                return Err(Error::invalid("table columns have different lengths"));
            }
            let mut row = Vec::with_capacity(self.columns.len());
            for i in 0..n {
                row.clear();
                row.extend(self.columns.iter().map(|c| format!("{}", c[i])));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(String::from_utf8(out).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    /// Parses a CSV. A header row is detected when its first field is not a number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_owned(), v.trim().to_owned());
                }
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(text.as_bytes());
        let mut headers = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                headers = rec.iter().map(str::to_owned).collect();
                continue;
            }
            if columns.is_empty() {
                columns = vec![Vec::new(); rec.len()];
            }
            for (j, field) in rec.iter().enumerate() {
                let v = field.parse::<f64>().map_err(|_| {
                    Error::invalid(format!(
                        "row {}: field `{field}` is not a number",
                        rec.position().map_or(0, |p| p.line())
                    ))
                })?;
                columns[j].push(v);
            }
        }
        if headers.is_empty() {
            headers = (0..columns.len()).map(|i| format!("col{i}")).collect();
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); headers.len()];
        }
        Ok(Table { meta, headers, columns })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn headerless_input() {
        let t = Table::parse("0,1\n1,0.5\n2,0.25\n").unwrap();
        assert_eq!(t.headers, ["col0", "col1"]);
        assert_eq!(t.columns[1], [1.0, 0.5, 0.25]);
    }

    #[test]
    fn bad_field_is_reported() {
        assert!(Table::parse("x,y\n1,abc\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(v in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..50)) {
            let t = Table::new(&["a", "b"], vec![v.clone(), v.iter().map(|x| x * 0.1).collect()])
                .with_meta("delta_hz", 200000.0);
            let back = Table::parse(&t.to_csv_string().unwrap()).unwrap();
            prop_assert_eq!(&back.columns, &t.columns);
            prop_assert_eq!(back.meta.get("delta_hz").map(String::as_str), Some("200000"));
        }
    }
}
