use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::CovarianceOracle;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;

/// Default cap on the number of points materialized by [`build_dense`].
pub const DEFAULT_DENSE_CAP: usize = 20_000;

const MAGIC: &[u8; 8] = b"LCGFCOV1";

/// A symmetric covariance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCovariance {
    size: usize,
    entries: Vec<f64>,
}

impl DenseCovariance {
    /// Validates symmetry (1e-12 relative) and a strictly positive diagonal.
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::input(format!(
                "{} entries do not form a {size}x{size} matrix",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("entry {bad} is not finite")));
        }
        for i in 0..size {
            if entries[i * size + i] <= 0.0 {
                return Err(Error::input(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..i {
                let (a, b) = (entries[i * size + j], entries[j * size + i]);
                let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::input(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { size, entries })
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn trace(&self) -> f64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }

    /// Adds `shift` to every diagonal entry.
    pub fn shifted_diagonal(&self, shift: f64) -> Result<Self> {
        let mut entries = self.entries.clone();
        for i in 0..self.size {
            entries[i * self.size + i] += shift;
        }
        Self::new(self.size, entries)
    }

    /// Binary export: magic `LCGFCOV1`, `u32` size, `u32` point dimension,
    /// then the entries as little-endian `f64`, row-major.
    pub fn write_binary<W: Write>(&self, d: u32, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.size as u32).to_le_bytes())?;
        out.write_all(&d.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.entries.len() * 8);
        for v in &self.entries {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Reads a matrix written by [`DenseCovariance::write_binary`]; returns it
    /// with the stored point dimension.
    pub fn read_binary<R: Read>(mut input: R) -> Result<(Self, u32)> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(Error::input("not an LCGFCOV1 file"));
        }
        let size = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(header[12..16].try_into().unwrap());
        let mut raw = vec![0u8; size * size * 8];
        input.read_exact(&mut raw)?;
        let entries = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::new(size, entries)?, d))
    }

    /// One matrix row per line, comma separated.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.size {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Materializes the covariance of `points` under `oracle`.
pub fn build_dense(oracle: &dyn CovarianceOracle, points: &[LatticePoint]) -> Result<DenseCovariance> {
    build_dense_with_cap(oracle, points, DEFAULT_DENSE_CAP)
}

pub fn build_dense_with_cap(
    oracle: &dyn CovarianceOracle,
    points: &[LatticePoint],
    cap: usize,
) -> Result<DenseCovariance> {
    let m = points.len();
    if m > cap {
        return Err(Error::Capacity { requested: m, cap });
    }
    if m == 0 {
        return Err(Error::input("no points given"));
    }
    let shape = oracle.shape();
    let mut seen = HashSet::with_capacity(m);
    for p in points {
        p.validate(shape.d, shape.side)?;
        if !seen.insert(p) {
            return Err(Error::input(format!("duplicate point {p}")));
        }
    }
    let mut entries = vec![0.0; m * m];
    entries.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate().take(i + 1) {
            *slot = oracle.cov(&points[i].coords, &points[j].coords);
        }
    });
    for i in 0..m {
        for j in 0..i {
            entries[j * m + i] = entries[i * m + j];
        }
    }
    DenseCovariance::new(m, entries)
}
