//! Finished-run payloads: one row per executed check, a runtime stamp,
//! and stable CSV/JSON rendering.
//!
//! The JSON payload is deterministic for a fixed scenario and seed: rows
//! carry only measured values and witnesses, and everything wall-clock or
//! host dependent lives under the single `runtime` key, which
//! [`RunReport::canonical_json`] strips before comparisons.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use homspace_core::report::csv_field;

/// One executed check with its expectation from the scenario file.
#[derive(Debug, Clone, Serialize)]
pub struct RowRecord {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
    pub expected_pass: bool,
    /// `pass == expected_pass`; the run succeeds when every row has it.
    pub met_expectation: bool,
    pub witness: String,
}

/// Wall-clock and host details, excluded from golden comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct RuntimeStamp {
    pub total_ms: f64,
    /// Per-check wall time, in row order.
    pub per_check_ms: Vec<f64>,
    pub threads: usize,
    pub host: String,
}

/// Full payload of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub version: String,
    /// Hash of the scenario as parsed (canonical JSON).
    pub scenario_sha256: String,
    /// Hash of the generated space tables (distances then masses).
    pub space_sha256: String,
    pub rows: Vec<RowRecord>,
    pub all_met: bool,
    pub runtime: RuntimeStamp,
}

impl RunReport {
    /// Pretty JSON in declaration order, runtime stamp included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Compact JSON with alphabetically ordered keys and the `runtime`
    /// key removed: byte-identical across reruns of the same scenario.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("runtime");
        }
        value.to_string()
    }

    /// One CSV line per check, with the per-check wall time appended.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "name,measured,bound,slack,pass,expected_pass,met_expectation,runtime_ms,witness\n",
        );
        for (i, row) in self.rows.iter().enumerate() {
            let ms = self
                .runtime
                .per_check_ms
                .get(i)
                .copied()
                .unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                csv_field(&row.name),
                row.measured,
                row.bound,
                row.slack,
                row.pass,
                row.expected_pass,
                row.met_expectation,
                ms,
                csv_field(&row.witness),
            ));
        }
        out
    }

    /// Write the requested formats into `dir` as `<scenario>.<ext>`;
    /// returns the paths written.
    pub fn write_files(&self, dir: &Path, formats: &[ReportFormat]) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for fmt in formats {
            let (ext, body) = match fmt {
                ReportFormat::Json => ("json", self.to_json()),
                ReportFormat::Csv => ("csv", self.to_csv()),
            };
            let path = dir.join(format!("{}.{ext}", self.scenario));
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Output format selector for `write_files`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Parse a comma-separated list such as `"csv,json"`.
    pub fn parse_list(s: &str) -> anyhow::Result<Vec<ReportFormat>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "csv" => out.push(ReportFormat::Csv),
                "json" => out.push(ReportFormat::Json),
                other => anyhow::bail!("unknown report format {other:?} (expected csv or json)"),
            }
        }
        if out.is_empty() {
            anyhow::bail!("no report formats requested");
        }
        out.dedup();
        Ok(out)
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of an f64 table as little-endian bytes, order-sensitive.
pub fn hash_tables(parts: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        for v in *part {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(total_ms: f64) -> RunReport {
        RunReport {
            scenario: "sample".into(),
            version: "0.1.0".into(),
            scenario_sha256: "ab".into(),
            space_sha256: "cd".into(),
            rows: vec![RowRecord {
                name: "doubling".into(),
                measured: 2.0,
                bound: 4.0,
                slack: 2.0,
                pass: true,
                expected_pass: true,
                met_expectation: true,
                witness: "center 0, radius 1".into(),
            }],
            all_met: true,
            runtime: RuntimeStamp {
                total_ms,
                per_check_ms: vec![total_ms],
                threads: 4,
                host: "test".into(),
            },
        }
    }

    #[test]
    fn canonical_json_ignores_runtime() {
        let a = sample(1.0);
        let b = sample(250.0);
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(a.canonical_json(), b.canonical_json());
        let mut c = sample(1.0);
        c.rows[0].measured = 3.0;
        assert_ne!(a.canonical_json(), c.canonical_json());
    }

    #[test]
    fn csv_has_one_line_per_row_and_escapes_commas() {
        let r = sample(1.0);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("name,measured,bound"));
        assert!(lines[1].contains("\"center 0, radius 1\""));
    }

    #[test]
    fn json_keeps_declaration_order() {
        let j = sample(1.0).to_json();
        let scenario_at = j.find("\"scenario\"").unwrap();
        let rows_at = j.find("\"rows\"").unwrap();
        let runtime_at = j.find("\"runtime\"").unwrap();
        assert!(scenario_at < rows_at && rows_at < runtime_at);
    }

    #[test]
    fn format_list_parses_and_rejects() {
        assert_eq!(
            ReportFormat::parse_list("csv,json").unwrap(),
            vec![ReportFormat::Csv, ReportFormat::Json]
        );
        assert!(ReportFormat::parse_list("yaml").is_err());
        assert!(ReportFormat::parse_list("").is_err());
    }

    #[test]
    fn hashes_are_stable_and_order_sensitive() {
        let a = hash_tables(&[&[1.0, 2.0]]);
        let b = hash_tables(&[&[1.0, 2.0]]);
        let c = hash_tables(&[&[2.0, 1.0]]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(sha256_hex(b"x").len(), 64);
    }
}
