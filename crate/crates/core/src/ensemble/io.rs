use std::fs::File;
use std::path::Path;

use crate::fsutil::write_atomic;

use super::{Bin, EnsembleError, PredictionMatrix, UncertaintyReport};

fn open(path: &Path) -> Result<csv::Reader<File>, EnsembleError> {
    let file = File::open(path).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(
    path: &Path,
    reader: &mut csv::Reader<File>,
    expected: &[&str],
) -> Result<(), EnsembleError> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(EnsembleError::Io(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T, EnsembleError> {
    s.parse()
        .map_err(|_| EnsembleError::Io(format!("{}: line {line}: cannot parse `{s}`", path.display())))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, EnsembleError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| EnsembleError::Io(e.to_string()))
}

/// Reads an `index,prediction` file.
pub fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<f64>), EnsembleError> {
    let mut reader = open(path)?;
    check_header(path, &mut reader, &["index", "prediction"])?;
    let (mut indices, mut values) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        indices.push(field(path, line, record.get(0).unwrap_or(""))?);
        values.push(field(path, line, record.get(1).unwrap_or(""))?);
    }
    Ok((indices, values))
}

pub fn write_predictions(path: &Path, indices: &[usize], values: &[f64]) -> Result<(), EnsembleError> {
    if indices.len() != values.len() {
        return Err(EnsembleError::LengthMismatch {
            left: indices.len(),
            right: values.len(),
        });
    }
    let rows = indices
        .iter()
        .zip(values)
        .map(|(i, v)| vec![i.to_string(), v.to_string()]);
    Ok(write_atomic(path, &csv_bytes(&["index", "prediction"], rows)?)?)
}

/// One learner per file, labelled by file name; all files must list the same indices.
pub fn read_prediction_matrix(paths: &[impl AsRef<Path>]) -> Result<PredictionMatrix, EnsembleError> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut indices: Option<Vec<usize>> = None;
    for path in paths {
        let path = path.as_ref();
        let (idx, row) = read_predictions(path)?;
        match &indices {
            Some(first) if *first != idx => return Err(EnsembleError::IndexMismatch),
            Some(_) => {}
            None => indices = Some(idx),
        }
        labels.push(path.display().to_string());
        values.push(row);
    }
    PredictionMatrix::new(labels, values, indices.unwrap_or_default())
}

/// An `index,mean,std` ensemble file; `std` is absent for a single learner.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFile {
    pub indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Option<Vec<f64>>,
}

pub fn write_ensemble(path: &Path, ens: &EnsembleFile) -> Result<(), EnsembleError> {
    let rows = (0..ens.indices.len()).map(|j| {
        let std = ens.std.as_ref().map(|s| s[j].to_string()).unwrap_or_default();
        vec![ens.indices[j].to_string(), ens.mean[j].to_string(), std]
    });
    Ok(write_atomic(path, &csv_bytes(&["index", "mean", "std"], rows)?)?)
}

pub fn read_ensemble(path: &Path) -> Result<EnsembleFile, EnsembleError> {
    let mut reader = open(path)?;
    check_header(path, &mut reader, &["index", "mean", "std"])?;
    let mut out = EnsembleFile {
        indices: Vec::new(),
        mean: Vec::new(),
        std: None,
    };
    let mut std = Vec::new();
    let mut blanks = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        out.indices.push(field(path, line, record.get(0).unwrap_or(""))?);
        out.mean.push(field(path, line, record.get(1).unwrap_or(""))?);
        match record.get(2).unwrap_or("") {
            "" => blanks += 1,
            s => std.push(field(path, line, s)?),
        }
    }
    if blanks > 0 && !std.is_empty() {
        return Err(EnsembleError::Io(format!(
            "{}: std column is only partly filled",
            path.display()
        )));
    }
    if blanks == 0 {
        out.std = Some(std);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `bin_lower,bin_upper,mean_uncertainty,mean_abs_error,count`; empty bins leave the means blank.
pub fn write_report(path: &Path, bins: &[Bin]) -> Result<(), EnsembleError> {
    let rows = bins.iter().map(|b| {
        vec![
            b.lower.to_string(),
            b.upper.to_string(),
            opt(b.mean_uncertainty),
            opt(b.mean_abs_error),
            b.count.to_string(),
        ]
    });
    let header = ["bin_lower", "bin_upper", "mean_uncertainty", "mean_abs_error", "count"];
    Ok(write_atomic(path, &csv_bytes(&header, rows)?)?)
}

/// `pearson_raw=<r> pearson_binned=<r> ensemble_mae=<v> mean_individual_mae=<v>`, `NA` when undefined.
pub fn summary_line(
    report: Option<&UncertaintyReport>,
    ensemble_mae: Option<f64>,
    mean_individual_mae: Option<f64>,
) -> String {
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
    format!(
        "pearson_raw={} pearson_binned={} ensemble_mae={} mean_individual_mae={}",
        na(report.and_then(|r| r.pearson_raw)),
        na(report.and_then(|r| r.pearson_binned)),
        na(ensemble_mae),
        na(mean_individual_mae),
    )
}
