//! Planning-case CSV: one row per unit in the published dispatch-table layout.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CASE_HEADER: [&str; 7] = [
    "Project",
    "Unit ID",
    "Pgen (MW)",
    "Pmax (MW)",
    "Head (ft)",
    "Pgen calculated (MW)",
    "Pmax available (MW)",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRow {
    pub project: String,
    /// Written to the `Unit ID` column.
    pub unit_id: String,
    /// Reference output from the existing case.
    pub pgen_ref: f64,
    pub pmax_nominal: f64,
    pub head_ft: f64,
    pub pgen_calculated: f64,
    pub pmax_available: f64,
}

impl DispatchRow {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pgen_calculated >= 0.0
            && self.pgen_calculated <= self.pmax_available + 1e-9
            && self.pmax_available <= self.pmax_nominal + 1e-9
            && self.head_ft > 0.0;
        if !ok {
            return Err(Error::validation(format!(
                "row {}/{}: need 0 <= pgen {} <= available {} <= nominal {}",
                self.project, self.unit_id, self.pgen_calculated, self.pmax_available, self.pmax_nominal
            )));
        }
        Ok(())
    }
}

fn sorted(rows: &[DispatchRow]) -> Vec<&DispatchRow> {
    let mut v: Vec<&DispatchRow> = rows.iter().collect();
    v.sort_by(|a, b| (&a.project, &a.unit_id).cmp(&(&b.project, &b.unit_id)));
    v
}

/// Writes rows sorted by (project, unit id) with two-decimal numbers.
pub fn write_case<W: Write>(out: W, rows: &[DispatchRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CASE_HEADER)?;
    for r in sorted(rows) {
        w.write_record([
            r.project.clone(),
            r.unit_id.clone(),
            format!("{:.2}", r.pgen_ref),
            format!("{:.2}", r.pmax_nominal),
            format!("{:.2}", r.head_ft),
            format!("{:.2}", r.pgen_calculated),
            format!("{:.2}", r.pmax_available),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_case(rows: &[DispatchRow], path: impl AsRef<Path>) -> Result<()> {
    for r in rows {
        r.validate()?;
    }
    let mut buf = Vec::new();
    write_case(&mut buf, rows)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_case<R: Read>(input: R) -> Result<Vec<DispatchRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CASE_HEADER {
        return Err(Error::at_line(1, format!("expected header {}", CASE_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::at_line(line, format!("column {:?} is not a number", CASE_HEADER[k])))
        };
        rows.push(DispatchRow {
            project: rec.get(0).unwrap_or_default().to_string(),
            unit_id: rec.get(1).unwrap_or_default().to_string(),
            pgen_ref: num(2)?,
            pmax_nominal: num(3)?,
            head_ft: num(4)?,
            pgen_calculated: num(5)?,
            pmax_available: num(6)?,
        });
    }
    Ok(rows)
}
