//! CSV and JSON file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{ColumnRoles, DataError, RawTable, SurvivalDataset};
use crate::simulate::MonteCarloReport;

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Parses a numeric CSV with a header row. Empty cells and non-numeric
/// values are parse errors; line numbers count the header as line 1.
pub fn read_table<R: Read>(reader: R) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(DataError::Parse { line, message: format!("missing value in column `{}`", headers[j]) });
            }
            let v: f64 = field.parse().map_err(|_| DataError::Parse {
                line,
                message: format!("`{field}` in column `{}` is not a number", headers[j]),
            })?;
            columns[j].push(v);
        }
    }
    Ok(RawTable { headers, columns })
}

pub fn read_table_file(path: &Path) -> Result<RawTable, DataError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_table(BufReader::new(f))
}

/// Writes `time, status` and every covariate column, each named column once.
pub fn write_dataset<W: Write>(ds: &SurvivalDataset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "status".to_string()];
    let mut blocks = Vec::new();
    let shared = ds.shared_penalized && ds.names.z_pen == ds.names.x_pen;
    let mut sources = vec![
        (&ds.names.z_unpen, &ds.z_unpen),
        (&ds.names.z_pen, &ds.z_pen),
        (&ds.names.x_unpen, &ds.x_unpen),
    ];
    if !shared {
        sources.push((&ds.names.x_pen, &ds.x_pen));
    }
    for (names, m) in sources {
        for (j, name) in names.iter().enumerate() {
            if !header.contains(name) {
                header.push(name.clone());
                blocks.push((m, j));
            }
        }
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row = vec![ds.time[i].to_string(), (ds.status[i] as u8).to_string()];
        row.extend(blocks.iter().map(|(m, j)| m[[i, *j]].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column roles matching [`write_dataset`] output.
pub fn roles_of(ds: &SurvivalDataset) -> ColumnRoles {
    ColumnRoles {
        time: "time".into(),
        status: "status".into(),
        z_unpen: ds.names.z_unpen.clone(),
        z_pen: ds.names.z_pen.clone(),
        x_unpen: ds.names.x_unpen.clone(),
        x_pen: ds.names.x_pen.clone(),
        shared_penalized: ds.shared_penalized,
    }
}

pub fn write_dataset_file(ds: &SurvivalDataset, path: &Path) -> Result<(), DataError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset(ds, BufWriter::new(f)).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DataError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

/// Header of benchmark report CSVs.
pub const REPORT_COLUMNS: [&str; 7] = ["scenario", "method", "metric", "mean", "sd", "n_ok", "n_failed"];

/// One row per method and metric; a missing SD is written as an empty cell.
pub fn write_report<W: Write>(reports: &[MonteCarloReport], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for report in reports {
        for row in &report.rows {
            w.write_record([
                row.scenario.clone(),
                row.method.clone(),
                row.metric.clone(),
                row.mean.to_string(),
                row.sd.map_or_else(String::new, |v| v.to_string()),
                row.n_ok.to_string(),
                row.n_failed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
