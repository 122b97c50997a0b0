use super::{ClremOracle, CovarianceOracle, DenseCovariance};
use crate::error::{Error, Result};

/// Default tolerance of [`find_minimal_w`].
pub const DEFAULT_W_TOLERANCE: f64 = 1e-6;

/// Lower-triangular factor `L` with `L L^T` equal to the source matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    size: usize,
    // row-major, upper triangle zero
    lower: Vec<f64>,
}

impl CholeskyFactor {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.size + j]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Computes `L g`.
    pub fn mul_vec(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.mul_vec_into(g, &mut out);
        out
    }

    pub fn mul_vec_into(&self, g: &[f64], out: &mut [f64]) {
        let m = self.size;
        for (i, slot) in out.iter_mut().enumerate().take(m) {
            let row = &self.lower[i * m..i * m + i + 1];
            *slot = row.iter().zip(&g[..=i]).map(|(a, b)| a * b).sum();
        }
    }

    /// `L L^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let m = self.size;
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let k = j + 1;
                let v: f64 = self.lower[i * m..i * m + k]
                    .iter()
                    .zip(&self.lower[j * m..j * m + k])
                    .map(|(a, b)| a * b)
                    .sum();
                out[i * m + j] = v;
                out[j * m + i] = v;
            }
        }
        out
    }
}

/// Cholesky factorization without regularization.
///
/// A pivot at or below `1e-10 * trace / m` is reported as
/// [`Error::NotPositiveDefinite`] with its index.
pub fn cholesky(matrix: &DenseCovariance) -> Result<CholeskyFactor> {
    let m = matrix.size();
    let floor = 1e-10 * matrix.trace() / m as f64;
    let mut lower = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let dot: f64 = lower[i * m..i * m + j]
                .iter()
                .zip(&lower[j * m..j * m + j])
                .map(|(a, b)| a * b)
                .sum();
            let s = matrix.get(i, j) - dot;
            if i == j {
                if !(s > floor) {
                    return Err(Error::NotPositiveDefinite {
                        pivot: i,
                        value: s,
                        floor,
                    });
                }
                lower[i * m + i] = s.sqrt();
            } else {
                lower[i * m + j] = s / lower[j * m + j];
            }
        }
    }
    Ok(CholeskyFactor { size: m, lower })
}

fn clrem_matrix(points: usize, w: f64) -> Result<DenseCovariance> {
    let o = ClremOracle { points, w };
    let mut entries = vec![0.0; points * points];
    for k in 0..points {
        for l in 0..points {
            entries[k * points + l] = o.cov(&[k], &[l]);
        }
    }
    DenseCovariance::new(points, entries)
}

/// Smallest `W` (to within `tol`) for which the CLREM matrix on `points`
/// points admits a Cholesky factor.
///
/// Bisection over `[-log N, 10 log N]`; the returned value is the upper end
/// of the final bracket, so it always factors.
pub fn find_minimal_w(points: usize, tol: f64) -> Result<f64> {
    if points < 2 {
        return Err(Error::input("find_minimal_w needs N >= 2"));
    }
    if !(tol > 0.0) {
        return Err(Error::input("tolerance must be positive"));
    }
    let log_n = (points as f64).ln();
    let base = clrem_matrix(points, 0.0)?;
    let factors = |w: f64| -> Result<bool> {
        // the diagonal of the W = 0 matrix is log N > 0, so shifting by w > -log N stays valid
        match base.shifted_diagonal(w) {
            Ok(m) => Ok(cholesky(&m).is_ok()),
            Err(_) => Ok(false),
        }
    };
    let mut lo = -log_n;
    let mut hi = 10.0 * log_n;
    while !factors(hi)? {
        lo = hi;
        hi *= 2.0;
    }
    if factors(lo)? {
        return Ok(lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if factors(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn min_eigenvalue(m: &DenseCovariance) -> f64 {
        let a = DMatrix::from_row_slice(m.size(), m.size(), m.entries());
        a.symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn identity_factor() {
        let f = cholesky(&DenseCovariance::identity(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(f.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        let m = DenseCovariance::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let f = cholesky(&m).unwrap();
        assert!((f.get(0, 0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.get(0, 1), 0.0);
        assert!((f.get(1, 0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((f.get(1, 1) - 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let m = DenseCovariance::new(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        match cholesky(&m) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPD, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_frobenius() {
        let o = super::super::MbrwOracle { d: 2, n: 3 };
        let pts: Vec<_> = crate::lattice::Shape::new(2, 8).points().collect();
        let m = super::super::build_dense(&o, &pts).unwrap();
        let f = cholesky(&m).unwrap();
        let r = f.reconstruct();
        let num: f64 = r.iter().zip(m.entries()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = m.entries().iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn minimal_w_matches_eigenvalue_oracle() {
        for n in [2usize, 3, 8, 17, 64] {
            let w = find_minimal_w(n, 1e-6).unwrap();
            // the CLREM matrix is W I + A, so the threshold is -lambda_min(A)
            let oracle = -min_eigenvalue(&clrem_matrix(n, 0.0).unwrap());
            assert!((w - oracle).abs() < 1e-5, "N={n}: {w} vs {oracle}");
            assert!(cholesky(&clrem_matrix(n, w + 0.01).unwrap()).is_ok());
        }
    }

    #[test]
    fn minimal_w_two_points() {
        // [[ln2 + W, -ln2], [-ln2, ln2 + W]] has eigenvalues W and W + 2 ln2
        let w = find_minimal_w(2, 1e-8).unwrap();
        assert!(w.abs() < 1e-7, "{w}");
    }
}
