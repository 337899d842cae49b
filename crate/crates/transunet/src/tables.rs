//! Tab-separated curve and ablation records, and JSON metric reports.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use transunet_core::metrics::MetricReport;
use transunet_core::train::{AblationTable, CurvePoint};

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "iteration\tloss\tval_dsc";

pub fn curve_record(p: &CurvePoint) -> String {
    let dsc = p.val_dsc.map_or_else(|| "-".to_string(), |d| format!("{d:?}"));
    format!("{}\t{:?}\t{dsc}", p.iteration, p.loss)
}

/// Append-only curve file; the header is written on creation.
pub struct CurveWriter {
    file: File,
    path: std::path::PathBuf,
}

impl CurveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(Error::io(path))?;
        writeln!(file, "{CURVE_HEADER}").map_err(Error::io(path))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path).map_err(Error::io(path))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn push(&mut self, p: &CurvePoint) -> Result<()> {
        writeln!(self.file, "{}", curve_record(p)).map_err(Error::io(&self.path))
    }
}

pub fn ablation_tsv(table: &AblationTable) -> String {
    let mut out = format!("axis\t{}\n", AblationTable::COLUMNS.join("\t"));
    for row in &table.rows {
        out += &format!("{}\t{}\n", table.axis, AblationTable::cells(row).join("\t"));
    }
    out
}

pub fn write_ablation(path: &Path, table: &AblationTable) -> Result<()> {
    fs::write(path, ablation_tsv(table)).map_err(Error::io(path))
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("metric report serializes");
    fs::write(path, json + "\n").map_err(Error::io(path))
}
