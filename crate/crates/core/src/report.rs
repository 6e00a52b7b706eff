//! Check rows: the uniform record every verification step emits.
//!
//! A row states what was measured, what bound it was held against, the slack
//! that remained, and a witness string locating the extremal configuration.
//! Rows serialize with a fixed field order so that reports are byte-stable.

use serde::{Deserialize, Serialize};

use crate::num::{le_tol, REL_TOL};

/// One verification step: `measured` against `bound` with remaining `slack`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckRow {
    pub step: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
    pub witness: String,
}

impl CheckRow {
    /// A row asserting `measured <= bound` (with relative tolerance).
    pub fn le(step: impl Into<String>, measured: f64, bound: f64, witness: impl Into<String>) -> Self {
        CheckRow {
            step: step.into(),
            measured,
            bound,
            slack: bound - measured,
            pass: measured.is_finite() && le_tol(measured, bound),
            witness: witness.into(),
        }
    }

    /// A row asserting `measured == expected` (with relative tolerance).
    pub fn eq(step: impl Into<String>, measured: f64, expected: f64, witness: impl Into<String>) -> Self {
        let dev = (measured - expected).abs();
        CheckRow {
            step: step.into(),
            measured,
            bound: expected,
            slack: -dev,
            pass: measured.is_finite() && dev <= REL_TOL * measured.abs().max(expected.abs()).max(1.0),
            witness: witness.into(),
        }
    }

    /// A row recording a boolean outcome with no numeric content.
    pub fn flag(step: impl Into<String>, pass: bool, witness: impl Into<String>) -> Self {
        CheckRow {
            step: step.into(),
            measured: if pass { 1.0 } else { 0.0 },
            bound: 1.0,
            slack: 0.0,
            pass,
            witness: witness.into(),
        }
    }

    /// A row that only records a value, always passing.
    pub fn info(step: impl Into<String>, value: f64, witness: impl Into<String>) -> Self {
        CheckRow {
            step: step.into(),
            measured: value,
            bound: f64::MAX,
            slack: 0.0,
            pass: value.is_finite(),
            witness: witness.into(),
        }
    }
}

/// Escape one CSV field: quote when it contains a comma, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Render rows as CSV with a fixed header. Floats print via the shortest
/// round-trip representation, so output is deterministic.
pub fn rows_to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("step,measured,bound,slack,pass,witness\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.step),
            r.measured,
            r.bound,
            r.slack,
            r.pass,
            csv_field(&r.witness)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_row_pass_and_slack() {
        let r = CheckRow::le("x", 2.0, 3.0, "");
        assert!(r.pass);
        assert_eq!(r.slack, 1.0);
        assert!(!CheckRow::le("x", 3.1, 3.0, "").pass);
    }

    #[test]
    fn csv_escapes_commas_and_quotes() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("a\"b"), "\"a\"\"b\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn csv_roundtrip_shape() {
        let rows = vec![CheckRow::eq("s", 1.5, 1.5, "w,1")];
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("step,measured,bound,slack,pass,witness\n"));
        assert!(csv.contains("\"w,1\""));
    }
}
