//! CSV exchange formats: orbits, spectral loops and dense matrices.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loops::{FrequencyGrid, RotatingLoop};
use crate::symplectic::C64;

/// Orbit table: header `t,z1,…,z2n`, rows `t = mT/N` for `m = 0..N` where the
/// last row is the integrated end point `z(T)`.
pub fn write_orbit_csv(path: &Path, samples: &DMatrix<f64>, period: f64, end: &DVector<f64>) -> Result<()> {
    let n_s = samples.nrows();
    let dim = samples.ncols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for m in 0..=n_s {
        let t = if m == n_s { period } else { period * m as f64 / n_s as f64 };
        let row: Vec<f64> = if m == n_s {
            end.iter().copied().collect()
        } else {
            samples.row(m).iter().copied().collect()
        };
        let mut rec = vec![fmt(t)];
        rec.extend(row.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone)]
pub struct OrbitTable {
    pub times: Vec<f64>,
    /// All rows, including the end point.
    pub states: DMatrix<f64>,
}

impl OrbitTable {
    pub fn period(&self) -> f64 {
        *self.times.last().expect("non-empty table")
    }

    /// Uniform samples without the end point.
    pub fn samples(&self) -> DMatrix<f64> {
        self.states.rows(0, self.states.nrows() - 1).into_owned()
    }

    pub fn end(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }
}

pub fn read_orbit_csv(path: &Path) -> Result<OrbitTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") || header.len() < 3 {
        return Err(Error::Input(format!("{}: expected header t,z1,...", path.display())));
    }
    let dim = header.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Input(format!("{}: ragged row", path.display())));
        }
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        times.push(vals[0]);
        data.extend_from_slice(&vals[1..]);
    }
    if times.len() < 3 {
        return Err(Error::Input(format!("{}: too few rows", path.display())));
    }
    let rows = times.len();
    Ok(OrbitTable {
        times,
        states: DMatrix::from_row_slice(rows, dim, &data),
    })
}

/// Spectral table: a `# period=…,n=…,k_max=…` line, then `plane,k,omega,re,im`.
pub fn write_loop_csv(path: &Path, y: &RotatingLoop) -> Result<()> {
    let grid = y.grid();
    let mut file = File::create(path)?;
    writeln!(
        file,
        "# period={},n={},k_max={}",
        fmt(grid.period()),
        grid.n(),
        grid.k_max()
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["plane", "k", "omega", "re", "im"])?;
    for (e, c) in grid.entries().iter().zip(y.coeffs()) {
        w.write_record([
            e.plane.to_string(),
            e.k.to_string(),
            fmt(e.omega),
            fmt(c.re),
            fmt(c.im),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read coefficients back onto `grid` (entries must match by `(plane, k)`).
pub fn read_loop_csv(path: &Path, grid: &Arc<FrequencyGrid>) -> Result<RotatingLoop> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut y = RotatingLoop::zeros(grid.clone());
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let plane: usize = get(0).parse().map_err(|e| Error::Input(format!("plane: {e}")))?;
        let k: i64 = get(1).parse().map_err(|e| Error::Input(format!("k: {e}")))?;
        let re: f64 = get(3).parse().map_err(|e| Error::Input(format!("re: {e}")))?;
        let im: f64 = get(4).parse().map_err(|e| Error::Input(format!("im: {e}")))?;
        let idx = grid
            .index_of(plane, k)
            .ok_or_else(|| Error::Input(format!("mode ({plane}, {k}) is not on the grid")))?;
        y.coeffs_mut()[idx] = C64::new(re, im);
    }
    Ok(y)
}

/// Dense matrix from CSV rows (no header) or a JSON array of rows.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let trimmed = text.trim_start();
    let rows: Vec<Vec<f64>> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else {
        let mut rows = Vec::new();
        for line in BufReader::new(text.as_bytes()).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            rows.push(row);
        }
        rows
    };
    matrix_from_rows(&rows)
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::Input("empty matrix".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Input("matrix rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| fmt(v)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loops::build_grid;
    use crate::symplectic::{plane_rotation, SymplecticRotation};

    #[test]
    fn orbit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        let samples = DMatrix::from_fn(8, 4, |i, j| (i * 4 + j) as f64 * 0.1 + 1.0 / 3.0);
        let end = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0 + 1e-17]);
        write_orbit_csv(&path, &samples, 2.5, &end).unwrap();
        let table = read_orbit_csv(&path).unwrap();
        assert_eq!(table.samples(), samples);
        assert_eq!(table.end(), end);
        assert_eq!(table.period(), 2.5);
        assert_eq!(table.times.len(), 9);
    }

    #[test]
    fn loop_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let sr = Arc::new(SymplecticRotation::new(&plane_rotation(&[0.0, 1.0])).unwrap());
        let grid = build_grid(&sr, 3.0, 3).unwrap();
        let coeffs = (0..grid.len()).map(|i| C64::new(i as f64 / 7.0, -1.0 / (i + 1) as f64)).collect();
        let y = RotatingLoop::from_coeffs(grid.clone(), coeffs).unwrap();
        write_loop_csv(&path, &y).unwrap();
        let back = read_loop_csv(&path, &grid).unwrap();
        assert_eq!(back.coeffs(), y.coeffs());
    }

    #[test]
    fn matrix_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]);
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let pj = dir.path().join("m.json");
        std::fs::write(&pj, "[[0, 1], [-1, 0.5]]").unwrap();
        assert_eq!(read_matrix(&pj).unwrap(), m);
        std::fs::write(&pj, "[[0, 1], [-1]]").unwrap();
        assert!(read_matrix(&pj).is_err());
    }
}
