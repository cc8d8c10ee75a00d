//! Machine-readable sensitivity reports: one row per perturbation direction,
//! emitted as CSV (fixed column set, 17 significant digits) or JSON. Files
//! are written atomically (temp file in the target directory, then rename) so
//! a crashed run never leaves a half-written report.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CSV_HEADER: &str = "label,adjoint_value,fd_value,abs_gap,rel_gap,mc_stderr,runtime_ms";

/// One comparison of the adjoint-formula derivative against the
/// finite-difference estimate on the same ray.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub adjoint_value: f64,
    pub fd_value: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub mc_stderr: Option<f64>,
    pub runtime_ms: f64,
}

impl ReportRow {
    /// Builds a row, deriving the gaps: abs_gap = |adjoint − fd|,
    /// rel_gap = abs_gap / max(|adjoint|, 1e-12).
    pub fn new(
        label: impl Into<String>,
        adjoint_value: f64,
        fd_value: f64,
        mc_stderr: Option<f64>,
        runtime_ms: f64,
    ) -> Result<ReportRow> {
        let abs_gap = (adjoint_value - fd_value).abs();
        let rel_gap = abs_gap / adjoint_value.abs().max(1e-12);
        let row = ReportRow {
            label: label.into(),
            adjoint_value,
            fd_value,
            abs_gap,
            rel_gap,
            mc_stderr,
            runtime_ms,
        };
        let finite = row.adjoint_value.is_finite()
            && row.fd_value.is_finite()
            && row.abs_gap.is_finite()
            && row.rel_gap.is_finite()
            && row.mc_stderr.map_or(true, f64::is_finite)
            && row.runtime_ms.is_finite();
        if !finite {
            return Err(Error::NonFinite(format!("report row `{}` has non-finite fields", row.label)));
        }
        Ok(row)
    }
}

/// 17 significant digits, enough to reproduce any f64 exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))
        .and_then(|_| {
            for r in rows {
                w.write_record(&[
                    r.label.clone(),
                    fmt(r.adjoint_value),
                    fmt(r.fd_value),
                    fmt(r.abs_gap),
                    fmt(r.rel_gap),
                    r.mc_stderr.map(fmt).unwrap_or_default(),
                    fmt(r.runtime_ms),
                ])?;
            }
            Ok(())
        })
        .map_err(|e| Error::InvalidArgument(format!("csv rendering failed: {e}")))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv rendering failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv not utf-8: {e}")))
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    Ok(s)
}

/// Writes `content` to `path` via a temporary file in the same directory and
/// an atomic rename.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
