//! Reading back the CSV files written by `run`.

use std::path::Path;

use fedsim_core::metrics::METRIC_NAMES;

use crate::format::{ROUNDS_HEADER, SCANS_PREFIX};
use crate::{CliError, CliResult};

/// One parsed rounds.csv row, columns in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub values: Vec<f64>,
}

impl RoundRow {
    pub fn column(&self, name: &str) -> Option<f64> {
        ROUNDS_HEADER.iter().position(|h| *h == name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub round: usize,
    pub collaborator_id: String,
    pub scan_id: usize,
    pub values: [f64; 12],
}

fn malformed(path: &Path, line: u64, what: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: line {line}: {what}", path.display()))
}

fn read_records(path: &Path, header: &[&str]) -> CliResult<Vec<(u64, csv::StringRecord)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut rows = Vec::new();
    let mut saw_header = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(path, line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !saw_header {
            if rec.iter().ne(header.iter().copied()) {
                return Err(malformed(path, line, format!("expected header `{}`", header.join(","))));
            }
            saw_header = true;
            continue;
        }
        if rec.len() != header.len() {
            return Err(malformed(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    if !saw_header {
        return Err(malformed(path, 1, "file is empty"));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> CliResult<T> {
    raw.parse()
        .map_err(|_| malformed(path, line, format!("column {name}: cannot parse `{raw}`")))
}

pub fn read_rounds(path: &Path) -> CliResult<Vec<RoundRow>> {
    read_records(path, &ROUNDS_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            let round = field(path, line, "round", &rec[0])?;
            let values = ROUNDS_HEADER
                .iter()
                .zip(rec.iter())
                .map(|(name, raw)| field::<f64>(path, line, name, raw))
                .collect::<CliResult<Vec<f64>>>()?;
            Ok(RoundRow { round, values })
        })
        .collect()
}

pub fn read_scans(path: &Path) -> CliResult<Vec<ScanRow>> {
    let header: Vec<&str> = SCANS_PREFIX.iter().chain(METRIC_NAMES.iter()).copied().collect();
    read_records(path, &header)?
        .into_iter()
        .map(|(line, rec)| {
            let mut values = [0.0; 12];
            for (i, v) in values.iter_mut().enumerate() {
                *v = field(path, line, METRIC_NAMES[i], &rec[3 + i])?;
            }
            Ok(ScanRow {
                round: field(path, line, "round", &rec[0])?,
                collaborator_id: rec[1].to_string(),
                scan_id: field(path, line, "scan_id", &rec[2])?,
                values,
            })
        })
        .collect()
}
