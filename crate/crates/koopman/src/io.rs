//! File formats: snapshot and trajectory CSV, result CSV/JSON emission.
//!
//! All CSV is plain UTF-8, comma separated, no header, with numbers written
//! in round-trippable scientific notation so identical runs produce
//! byte-identical files.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use faer::c64;

use crate::systems::SnapshotSet;
use crate::{Error, RMat, Result};

/// Parse a headerless numeric CSV into a dense real matrix.
pub fn read_matrix_csv(path: &Path) -> Result<RMat> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!(
                        "{}:{}: bad number '{}': {e}",
                        path.display(),
                        lineno + 1,
                        tok.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}:{}: expected {} columns, found {}",
                    path.display(),
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty file", path.display())));
    }
    let (m, d) = (rows.len(), rows[0].len());
    Ok(RMat::from_fn(m, d, |i, j| rows[i][j]))
}

/// Write a dense real matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, m: &RMat) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                write!(out, ",")?;
            }
            write!(out, "{:.17e}", m[(i, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read a snapshot pair `X.csv` / `Y.csv` with optional `weights.csv`.
pub fn read_snapshots(x_path: &Path, y_path: &Path, weights_path: Option<&Path>) -> Result<SnapshotSet> {
    let x = read_matrix_csv(x_path)?;
    let y = read_matrix_csv(y_path)?;
    let weights = match weights_path {
        Some(p) => {
            let w = read_matrix_csv(p)?;
            if w.ncols() != 1 {
                return Err(Error::Parse(format!(
                    "{}: weights must be a single column",
                    p.display()
                )));
            }
            (0..w.nrows()).map(|i| w[(i, 0)]).collect()
        }
        None => vec![1.0 / x.nrows() as f64; x.nrows()],
    };
    SnapshotSet::new(x, y, weights)
}

/// Read a single-trajectory CSV (rows are consecutive states) and form
/// snapshot pairs by a unit shift, with ergodic weights `1/M`.
pub fn read_trajectory_pairs(path: &Path) -> Result<SnapshotSet> {
    let traj = read_matrix_csv(path)?;
    if traj.nrows() < 2 {
        return Err(Error::Parse(format!(
            "{}: need at least two states to form pairs",
            path.display()
        )));
    }
    let m = traj.nrows() - 1;
    let d = traj.ncols();
    let x = RMat::from_fn(m, d, |i, j| traj[(i, j)]);
    let y = RMat::from_fn(m, d, |i, j| traj[(i + 1, j)]);
    SnapshotSet::new(x, y, vec![1.0 / m as f64; m])
}

/// Write eigenvalues with residuals: columns `re, im, residual`.
pub fn write_eigenvalues_csv(path: &Path, eigenvalues: &[c64], residuals: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (lam, res) in eigenvalues.iter().zip(residuals) {
        writeln!(out, "{:.17e},{:.17e},{:.17e}", lam.re, lam.im, res)?;
    }
    Ok(())
}

/// Write pseudospectrum data: columns `re(z), im(z), tau, accepted`.
pub fn write_pseudospectrum_csv(
    path: &Path,
    points: &[c64],
    tau: &[f64],
    accepted: &[bool],
) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for ((z, t), acc) in points.iter().zip(tau).zip(accepted) {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{}",
            z.re,
            z.im,
            t,
            if *acc { 1 } else { 0 }
        )?;
    }
    Ok(())
}

/// Write an atomic measure: columns `theta, mass`, sorted by angle.
pub fn write_atoms_csv(path: &Path, thetas: &[f64], masses: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (t, m) in thetas.iter().zip(masses) {
        writeln!(out, "{:.17e},{:.17e}", t, m)?;
    }
    Ok(())
}

/// Write density samples: columns `theta, value` (NaN for failed points).
pub fn write_density_csv(path: &Path, thetas: &[f64], values: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (t, v) in thetas.iter().zip(values) {
        writeln!(out, "{:.17e},{:.17e}", t, v)?;
    }
    Ok(())
}

/// Serialize eigenvalue results to the shared JSON layout:
/// `{eigenvalues: [[re, im], ...], residuals: [...], rank, modes: optional path}`.
pub fn eigenvalues_json(
    eigenvalues: &[c64],
    residuals: &[f64],
    rank: usize,
    modes_path: Option<&str>,
) -> serde_json::Value {
    serde_json::json!({
        "eigenvalues": eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "residuals": residuals,
        "rank": rank,
        "modes": modes_path,
    })
}
