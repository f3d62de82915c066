//! Tabular output with a reproducibility contract.
//!
//! Every command emits one table. Data rows are plain CSV and are
//! byte-identical across runs with the same seed and inputs, independent of
//! thread count. Everything that may legitimately vary between runs (wall
//! times, hostnames of the invocation) lives in `#`-prefixed comment lines,
//! so two outputs can be compared by dropping those lines.

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};
use std::fmt;

/// Identifies what produced a table: tool version, model content hash, seed,
/// and the command line. All of it goes into comment lines.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub model: String,
    pub seed: Option<u64>,
    pub command: String,
}

impl Provenance {
    pub fn new(model: impl Into<String>, seed: Option<u64>, command: impl Into<String>) -> Self {
        Self {
            tool: format!("avgraph {}", env!("CARGO_PKG_VERSION")),
            model: model.into(),
            seed,
            command: command.into(),
        }
    }

    fn comment_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("tool: {}", self.tool),
            format!("model: {}", self.model),
        ];
        if let Some(seed) = self.seed {
            lines.push(format!("seed: {seed}"));
        }
        lines.push(format!("command: {}", self.command));
        lines
    }
}

/// Shortest decimal representation that parses back to the same value.
/// Plain notation in the human range, exponent notation outside it; never
/// locale dependent.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs();
    if (1e-4..1e16).contains(&mag) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// One table value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => write!(f, "{}", format_float(*v)),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    write!(f, "\"{}\"", s.replace('"', "\"\""))
                } else {
                    write!(f, "{s}")
                }
            }
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Int(v) => ser.serialize_i64(*v),
            Cell::Real(v) if v.is_finite() => ser.serialize_f64(*v),
            // JSON has no literals for these; fall back to the CSV spelling.
            Cell::Real(v) => ser.serialize_str(&format_float(*v)),
            Cell::Text(s) => ser.serialize_str(s),
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A titled table of cells plus free-form comments.
#[derive(Debug, Clone)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub comments: Vec<String>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<Cell>) {
        assert_eq!(
            cells.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(cells);
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    /// Records a wall time as a comment so it never touches the data body.
    pub fn runtime_comment(&mut self, label: &str, seconds: f64) {
        self.comments.push(format!("{label}_runtime_s: {seconds:.3}"));
    }

    pub fn to_csv(&self, prov: Option<&Provenance>) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.title));
        if let Some(p) = prov {
            for line in p.comment_lines() {
                out.push_str(&format!("# {line}\n"));
            }
        }
        for line in &self.comments {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, prov: Option<&Provenance>) -> String {
        struct Doc<'a>(&'a ReportTable, Option<&'a Provenance>);
        impl Serialize for Doc<'_> {
            fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                let mut map = ser.serialize_map(None)?;
                map.serialize_entry("title", &self.0.title)?;
                if let Some(p) = self.1 {
                    map.serialize_entry("provenance", p)?;
                }
                map.serialize_entry("comments", &self.0.comments)?;
                map.serialize_entry("columns", &self.0.columns)?;
                struct Rows<'a>(&'a [Vec<Cell>]);
                impl Serialize for Rows<'_> {
                    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                        let mut seq = ser.serialize_seq(Some(self.0.len()))?;
                        for row in self.0 {
                            seq.serialize_element(row)?;
                        }
                        seq.end()
                    }
                }
                map.serialize_entry("rows", &Rows(&self.0.rows))?;
                map.end()
            }
        }
        serde_json::to_string_pretty(&Doc(self, prov)).expect("tables serialize")
    }
}

/// The data body of a CSV report: every line except the `#` comments. Two
/// runs of the same command agree on this byte for byte.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_format_shortest_and_round_trip() {
        for &(x, want) in &[
            (0.0, "0"),
            (1.0, "1"),
            (-0.0375, "-0.0375"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.3333333333333333"),
        ] {
            assert_eq!(format_float(x), want);
            assert_eq!(want.parse::<f64>().unwrap(), x);
        }
        let tiny = 3.7e-7;
        let s = format_float(tiny);
        assert!(s.contains('e'));
        assert_eq!(s.parse::<f64>().unwrap(), tiny);
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn comments_do_not_touch_the_body() {
        let mut a = ReportTable::new("demo", &["x", "y"]);
        a.push_row(vec![1.0.into(), "left".into()]);
        let mut b = a.clone();
        a.runtime_comment("total", 1.234);
        b.runtime_comment("total", 9.876);
        assert_ne!(a.to_csv(None), b.to_csv(None));
        assert_eq!(csv_body(&a.to_csv(None)), csv_body(&b.to_csv(None)));
    }

    #[test]
    fn text_cells_with_commas_are_quoted() {
        let mut t = ReportTable::new("q", &["label"]);
        t.push_row(vec!["a,b".into()]);
        assert!(t.to_csv(None).contains("\"a,b\""));
    }

    #[test]
    fn json_document_parses_back() {
        let mut t = ReportTable::new("j", &["n", "p"]);
        t.push_row(vec![3usize.into(), 0.25.into()]);
        let prov = Provenance::new("m2 sha256:abc", Some(7), "avgraph demo");
        let doc: serde_json::Value = serde_json::from_str(&t.to_json(Some(&prov))).unwrap();
        assert_eq!(doc["columns"][1], "p");
        assert_eq!(doc["rows"][0][0], 3);
        assert_eq!(doc["provenance"]["seed"], 7);
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn mismatched_rows_are_rejected() {
        let mut t = ReportTable::new("w", &["a", "b"]);
        t.push_row(vec![1.0.into()]);
    }
}
