//! Dataset directories and labeled-matrix CSV files.
//!
//! A simulated dataset is a directory of four files: `counts.csv`,
//! `r_star.csv`, `l_star.csv`, and `metadata.json`. Matrix CSVs carry row
//! labels in the first column and column labels in the header, and every
//! value is printed with 17 significant digits so a read-back is bit exact.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphLaplacian;
use crate::model::{CountMatrix, ReproMatrix, ScaleParams};
use crate::synthetic::SyntheticDataset;

use super::atomic_write;

pub const COUNTS_FILE: &str = "counts.csv";
pub const R_STAR_FILE: &str = "r_star.csv";
pub const L_STAR_FILE: &str = "l_star.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Enough digits that `parse::<f64>()` recovers the exact bit pattern.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix with a corner label, per-row labels, and per-column labels.
pub fn write_labeled_matrix(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &Array2<f64>,
) -> Result<()> {
    let (rows, cols) = m.dim();
    if row_labels.len() != rows || col_labels.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} labels for a {}x{} matrix",
            row_labels.len(),
            col_labels.len(),
            rows,
            cols
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = Vec::with_capacity(cols + 1);
    header.push(corner.to_string());
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)
        .map_err(|e| csv_error(path, 1, &e))?;
    for (i, row) in m.rows().into_iter().enumerate() {
        let mut record = Vec::with_capacity(cols + 1);
        record.push(row_labels[i].clone());
        record.extend(row.iter().map(|&v| format_value(v)));
        w.write_record(&record)
            .map_err(|e| csv_error(path, i + 2, &e))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    atomic_write(path, &bytes)
}

/// Read back a matrix written by [`write_labeled_matrix`].
pub fn read_labeled_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, &e))?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| csv_error(path, 1, &"empty file"))?
        .map_err(|e| csv_error(path, 1, &e))?;
    if header.is_empty() {
        return Err(csv_error(path, 1, &"empty header"));
    }
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let cols = col_labels.len();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in records.enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| csv_error(path, line, &e))?;
        if record.len() != cols + 1 {
            return Err(csv_error(
                path,
                line,
                &format!("expected {} fields, found {}", cols + 1, record.len()),
            ));
        }
        row_labels.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| csv_error(path, line, &format!("bad number '{field}': {e}")))?;
            values.push(v);
        }
    }
    let rows = row_labels.len();
    let m = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((row_labels, col_labels, m))
}

fn csv_error(path: &Path, line: usize, err: &dyn std::fmt::Display) -> Error {
    Error::Csv {
        line,
        message: format!("{}: {}", path.display(), err),
    }
}

pub fn write_count_matrix(path: &Path, z: &CountMatrix) -> Result<()> {
    write_labeled_matrix(
        path,
        "territory",
        z.territory_ids(),
        z.dates(),
        z.counts(),
    )
}

pub fn read_count_matrix(path: &Path) -> Result<CountMatrix> {
    let (ids, dates, m) = read_labeled_matrix(path)?;
    CountMatrix::new(m, ids, dates)
}

pub fn write_repro_matrix(
    path: &Path,
    r: &ReproMatrix,
    territory_ids: &[String],
    dates: &[String],
) -> Result<()> {
    write_labeled_matrix(path, "territory", territory_ids, dates, r.matrix())
}

pub fn read_repro_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, ReproMatrix)> {
    let (ids, dates, m) = read_labeled_matrix(path)?;
    Ok((ids, dates, ReproMatrix::new(m)?))
}

pub fn write_laplacian(path: &Path, l: &Array2<f64>, territory_ids: &[String]) -> Result<()> {
    write_labeled_matrix(path, "territory", territory_ids, territory_ids, l)
}

pub fn read_laplacian(path: &Path) -> Result<GraphLaplacian> {
    let (_, _, m) = read_labeled_matrix(path)?;
    GraphLaplacian::new(m)
}

/// One objective value per line, with the iteration index alongside.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "objective"])
        .map_err(|e| csv_error(path, 1, &e))?;
    for (k, &v) in trace.iter().enumerate() {
        w.write_record([k.to_string(), format_value(v)])
            .map_err(|e| csv_error(path, k + 2, &e))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    atomic_write(path, &bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMetadata {
    seed: u64,
    n_territories: usize,
    n_days: usize,
    gamma: Vec<f64>,
    omega: Vec<f64>,
}

/// Write a full simulated dataset into `dir`, creating it if needed.
pub fn save_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_count_matrix(&dir.join(COUNTS_FILE), &ds.z)?;
    write_repro_matrix(
        &dir.join(R_STAR_FILE),
        &ds.r_star,
        ds.z.territory_ids(),
        ds.z.dates(),
    )?;
    write_laplacian(&dir.join(L_STAR_FILE), ds.l_star.matrix(), ds.z.territory_ids())?;
    let meta = DatasetMetadata {
        seed: ds.seed,
        n_territories: ds.z.n_territories(),
        n_days: ds.z.n_days(),
        gamma: ds.gamma.gamma().to_vec(),
        omega: ds.gamma.omega().to_vec(),
    };
    let bytes = serde_json::to_vec_pretty(&meta)?;
    atomic_write(&dir.join(METADATA_FILE), &bytes)
}

/// Read a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let z = read_count_matrix(&dir.join(COUNTS_FILE))?;
    let (_, _, r_star) = read_repro_matrix(&dir.join(R_STAR_FILE))?;
    let l_star = read_laplacian(&dir.join(L_STAR_FILE))?;
    let meta: DatasetMetadata =
        serde_json::from_slice(&std::fs::read(dir.join(METADATA_FILE))?)?;
    if meta.n_territories != z.n_territories() || meta.n_days != z.n_days() {
        return Err(Error::DimensionMismatch(format!(
            "metadata says {}x{}, counts are {}x{}",
            meta.n_territories,
            meta.n_days,
            z.n_territories(),
            z.n_days()
        )));
    }
    if r_star.matrix().dim() != z.counts().dim() {
        return Err(Error::DimensionMismatch(
            "r_star and counts shapes differ".into(),
        ));
    }
    if l_star.matrix().nrows() != z.n_territories() {
        return Err(Error::DimensionMismatch(
            "laplacian size does not match territory count".into(),
        ));
    }
    let gamma = ScaleParams::new(meta.gamma, meta.omega)?;
    Ok(SyntheticDataset {
        z,
        r_star,
        l_star,
        gamma,
        seed: meta.seed,
    })
}
