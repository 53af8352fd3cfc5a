//! Convergence tables and their CSV / JSON forms.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stated at the top of every report.
pub const NORM_NOTE: &str = "errors are measured in H^-1_2, L2 and the grid sup norm \
(H^eta_2 when an eta index is listed) in place of H^eta_p with p > 6";

pub const CSV_COLUMNS: [&str; 8] = [
    "N",
    "beta",
    "norm",
    "sup_error",
    "t_of_sup",
    "wall_ms",
    "seed_master",
    "config_hash",
];

/// One `(N, norm)` entry of a convergence sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub norm: String,
    /// `sup_t ‖g^N_t − ω_t‖` over the snapshot times; `None` when the run
    /// failed.
    pub sup_error: Option<f64>,
    pub t_of_sup: Option<f64>,
    pub wall_ms: u64,
    pub seed_master: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ErrorRow {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub note: String,
    pub rows: Vec<ErrorRow>,
}

impl Default for ErrorTable {
    fn default() -> Self {
        Self {
            note: NORM_NOTE.into(),
            rows: Vec::new(),
        }
    }
}

impl ErrorTable {
    /// Equality of every field except the wall-clock times, with floats
    /// compared bit for bit.
    pub fn same_results(&self, other: &ErrorTable) -> bool {
        let bits = |x: Option<f64>| x.map(f64::to_bits);
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.n == b.n
                    && a.beta.to_bits() == b.beta.to_bits()
                    && a.norm == b.norm
                    && bits(a.sup_error) == bits(b.sup_error)
                    && bits(a.t_of_sup) == bits(b.t_of_sup)
                    && a.seed_master == b.seed_master
                    && a.config_hash == b.config_hash
                    && a.failure == b.failure
            })
    }

    /// Rows for one norm, in sweep order.
    pub fn series(&self, norm: &str) -> Vec<&ErrorRow> {
        self.rows.iter().filter(|r| r.norm == norm).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", self.note)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.beta.to_string(),
                r.norm.clone(),
                opt(r.sup_error),
                opt(r.t_of_sup),
                r.wall_ms.to_string(),
                r.seed_master.to_string(),
                r.config_hash.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }

    /// Write to `path` in `format`, through a single writer.
    pub fn emit(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match format {
            Format::Csv => self.write_csv(file),
            Format::Json => self.write_json(file),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, err: Option<f64>) -> ErrorRow {
        ErrorRow {
            n,
            beta: 0.25,
            norm: "H^-1".into(),
            sup_error: err,
            t_of_sup: err.map(|_| 0.1),
            wall_ms: 17,
            seed_master: 3,
            config_hash: "0123456789ab".into(),
            failure: err.is_none().then(|| "blow-up".to_string()),
        }
    }

    fn data_lines(text: &str) -> Vec<&str> {
        text.lines().filter(|l| !l.starts_with('#')).collect()
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        ErrorTable::default().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# errors are measured in H^-1_2"));
        assert_eq!(data_lines(&text), vec!["N,beta,norm,sup_error,t_of_sup,wall_ms,seed_master,config_hash"]);
    }

    #[test]
    fn csv_field_count_is_constant() {
        let table = ErrorTable {
            rows: vec![row(512, Some(0.125)), row(1728, None), row(4096, Some(1e-3))],
            ..Default::default()
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines = data_lines(&text);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
        assert_eq!(lines[2], "1728,0.25,H^-1,,,17,3,0123456789ab");
    }

    #[test]
    fn json_round_trip_is_stable() {
        let table = ErrorTable {
            rows: vec![row(512, Some(0.1 + 0.2)), row(1728, None)],
            ..Default::default()
        };
        let mut first = Vec::new();
        table.write_json(&mut first).unwrap();
        let back = ErrorTable::read_json(first.as_slice()).unwrap();
        assert_eq!(back, table);
        let mut second = Vec::new();
        back.write_json(&mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn same_results_ignores_wall_time_only() {
        let a = ErrorTable {
            rows: vec![row(512, Some(0.5))],
            ..Default::default()
        };
        let mut b = a.clone();
        b.rows[0].wall_ms = 99;
        assert!(a.same_results(&b));
        b.rows[0].sup_error = Some(0.5 + f64::EPSILON);
        assert!(!a.same_results(&b));
    }

    #[test]
    fn formats_parse() {
        assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }
}
