//! Deterministic CSV reading/writing. Floats are formatted with Rust's
//! shortest-roundtrip formatter so identical data always produces identical
//! bytes; writes go through a temp file + rename so partial files never
//! appear in the result store.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub fn fmt_f32(v: f32) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Renders a table; fields must not contain commas or newlines (all writers
/// in this crate emit plain identifiers and numbers).
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        debug_assert!(row.iter().all(|f| !f.contains(',') && !f.contains('\n')));
        let mut first = true;
        for field in row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{field}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Atomically writes `content` to `path` (temp file + rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<CsvTable> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text, path)
}

pub fn parse_table(text: &str, origin: &Path) -> Result<CsvTable> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty CSV", origin.display())))?;
    let header: Vec<String> = header_line.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::format(format!(
                "{}: row {} has {} fields, expected {}",
                origin.display(),
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

impl CsvTable {
    pub fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(format!("missing CSV column {name:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let rows = vec![
            vec!["a".to_string(), fmt_f64(0.30000000000000004)],
            vec!["b".to_string(), fmt_f64(-1.5)],
        ];
        let text = render(&["name", "x"], &rows);
        let table = parse_table(&text, Path::new("mem")).unwrap();
        assert_eq!(table.header, vec!["name", "x"]);
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0][1].parse::<f64>().unwrap(), 0.30000000000000004);
    }

    #[test]
    fn float_formatting_is_shortest_roundtrip() {
        assert_eq!(fmt_f32(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1");
        let v = 0.9f32;
        assert_eq!(fmt_f32(v).parse::<f32>().unwrap(), v);
    }
}
