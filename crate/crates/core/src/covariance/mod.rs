//! Exact covariance oracles for the built-in field families, dense matrix
//! assembly and the positive-definiteness machinery built on Cholesky.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{log2_exact, Family, FieldSpec, LatticePoint, Shape};

mod cholesky;
mod dense;

pub use cholesky::{cholesky, find_minimal_w, CholeskyFactor, DEFAULT_W_TOLERANCE};
pub use dense::{build_dense, build_dense_with_cap, DenseCovariance, DEFAULT_DENSE_CAP};

/// Exact pairwise covariance of a centered Gaussian field on a box.
pub trait CovarianceOracle: Send + Sync {
    fn shape(&self) -> Shape;

    /// Covariance between two points given as coordinate slices.
    ///
    /// Coordinates are assumed valid; use [`CovarianceOracle::covariance`]
    /// for checked access.
    fn cov(&self, x: &[usize], y: &[usize]) -> f64;

    fn variance(&self, x: &[usize]) -> f64 {
        self.cov(x, x)
    }

    fn covariance(&self, x: &LatticePoint, y: &LatticePoint) -> Result<f64> {
        let Shape { d, side } = self.shape();
        x.validate(d, side)?;
        y.validate(d, side)?;
        Ok(self.cov(&x.coords, &y.coords))
    }

    fn cov_index(&self, i: usize, j: usize) -> f64 {
        let shape = self.shape();
        self.cov(&shape.coords(i), &shape.coords(j))
    }
}

/// Branching random walk over aligned dyadic boxes, increments of variance `log 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrwOracle {
    pub d: usize,
    pub n: u32,
}

impl CovarianceOracle for BrwOracle {
    fn shape(&self) -> Shape {
        Shape::new(self.d, 1 << self.n)
    }

    fn cov(&self, x: &[usize], y: &[usize]) -> f64 {
        // levels j >= first_shared put x and y in the same aligned box
        let first_shared = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| usize::BITS - (a ^ b).leading_zeros())
            .max()
            .unwrap_or(0);
        let shared = (self.n + 1).saturating_sub(first_shared);
        LN_2 * shared as f64
    }
}

/// Modified branching random walk: boxes at every offset, identified modulo `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbrwOracle {
    pub d: usize,
    pub n: u32,
}

impl MbrwOracle {
    /// Number of (torus-identified) level-`j` boxes that contain both points,
    /// as a product of per-coordinate arc overlaps.
    pub fn shared_boxes(&self, j: u32, x: &[usize], y: &[usize]) -> u64 {
        let side = 1usize << self.n;
        let width = 1usize << j;
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                if width == side {
                    // every corner of the torus yields a box covering everything
                    side as u64
                } else {
                    let t = a.abs_diff(b);
                    let t = t.min(side - t);
                    width.saturating_sub(t) as u64
                }
            })
            .product()
    }

    /// Contribution of level `j` to the covariance.
    pub fn level_cov(&self, j: u32, x: &[usize], y: &[usize]) -> f64 {
        let scale = 0.5f64.powi((self.d as u32 * j) as i32);
        LN_2 * self.shared_boxes(j, x, y) as f64 * scale
    }
}

impl CovarianceOracle for MbrwOracle {
    fn shape(&self) -> Shape {
        Shape::new(self.d, 1 << self.n)
    }

    fn cov(&self, x: &[usize], y: &[usize]) -> f64 {
        (0..=self.n).map(|j| self.level_cov(j, x, y)).sum()
    }
}

/// Circular logarithmic REM on `points` equally spaced points of the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClremOracle {
    pub points: usize,
    pub w: f64,
}

impl ClremOracle {
    pub fn entry(&self, k: usize, l: usize) -> f64 {
        let m = self.points;
        if k == l {
            return (m as f64).ln() + self.w;
        }
        let delta = k.abs_diff(l);
        let delta = delta.min(m - delta);
        let s = (PI * delta as f64 / m as f64).sin();
        -0.5 * (4.0 * s * s).ln()
    }
}

impl CovarianceOracle for ClremOracle {
    fn shape(&self) -> Shape {
        Shape::new(1, self.points)
    }

    fn cov(&self, x: &[usize], y: &[usize]) -> f64 {
        self.entry(x[0], y[0])
    }
}

/// Oracle backed by a materialized covariance over all points of a box.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub shape: Shape,
    pub matrix: Arc<DenseCovariance>,
}

impl CovarianceOracle for DenseOracle {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn cov(&self, x: &[usize], y: &[usize]) -> f64 {
        self.matrix
            .get(self.shape.index(x), self.shape.index(y))
    }

    fn cov_index(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

fn dyadic_n(spec: &FieldSpec) -> Result<u32> {
    log2_exact(spec.side)
        .ok_or_else(|| Error::input(format!("side {} is not a power of two", spec.side)))
}

/// The exact covariance oracle of a field specification.
pub fn oracle_for(spec: &FieldSpec) -> Result<Arc<dyn CovarianceOracle>> {
    Ok(match &spec.family {
        Family::Brw => Arc::new(BrwOracle {
            d: spec.d,
            n: dyadic_n(spec)?,
        }),
        Family::Mbrw => Arc::new(MbrwOracle {
            d: spec.d,
            n: dyadic_n(spec)?,
        }),
        Family::Clrem { w } => Arc::new(ClremOracle {
            points: spec.side,
            w: *w,
        }),
        Family::Dense(m) => Arc::new(DenseOracle {
            shape: spec.shape(),
            matrix: Arc::clone(m),
        }),
        Family::Xi(params) => Arc::new(crate::approx::XiOracle::new(params)?),
    })
}

fn family_cov(
    spec: &FieldSpec,
    want: &str,
    x: &LatticePoint,
    y: &LatticePoint,
) -> Result<f64> {
    if spec.family.name() != want {
        return Err(Error::input(format!(
            "expected a {want} specification, got {}",
            spec.family.name()
        )));
    }
    oracle_for(spec)?.covariance(x, y)
}

pub fn brw_covariance(spec: &FieldSpec, x: &LatticePoint, y: &LatticePoint) -> Result<f64> {
    family_cov(spec, "brw", x, y)
}

pub fn mbrw_covariance(spec: &FieldSpec, x: &LatticePoint, y: &LatticePoint) -> Result<f64> {
    family_cov(spec, "mbrw", x, y)
}

pub fn clrem_covariance(spec: &FieldSpec, k: usize, l: usize) -> Result<f64> {
    family_cov(spec, "clrem", &LatticePoint::new(vec![k]), &LatticePoint::new(vec![l]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[usize]) -> LatticePoint {
        LatticePoint::new(c.to_vec())
    }

    /// Enumerates every torus-identified box at every level.
    fn mbrw_brute(d: usize, n: u32, x: &[usize], y: &[usize]) -> f64 {
        let side = 1usize << n;
        let corners = Shape::new(d, side);
        let mut total = 0.0;
        for j in 0..=n {
            let w = 1usize << j;
            let inside = |z: &[usize], c: &[usize]| {
                z.iter().zip(c).all(|(&zi, &ci)| (zi + side - ci) % side < w)
            };
            let count = (0..corners.len())
                .map(|i| corners.coords(i))
                .filter(|c| inside(x, c) && inside(y, c))
                .count();
            total += LN_2 * count as f64 * 0.5f64.powi((d as u32 * j) as i32);
        }
        total
    }

    fn brw_brute(n: u32, x: &[usize], y: &[usize]) -> f64 {
        let shared = (0..=n)
            .filter(|&j| x.iter().zip(y).all(|(a, b)| a >> j == b >> j))
            .count();
        LN_2 * shared as f64
    }

    #[test]
    fn brw_examples() {
        let s = FieldSpec::brw(1, 3).unwrap();
        assert_eq!(brw_covariance(&s, &p(&[1]), &p(&[1])).unwrap(), 4.0 * LN_2);
        assert_eq!(brw_covariance(&s, &p(&[1]), &p(&[2])).unwrap(), 2.0 * LN_2);
        let s2 = FieldSpec::brw(2, 2).unwrap();
        assert_eq!(brw_covariance(&s2, &p(&[0, 0]), &p(&[3, 3])).unwrap(), LN_2);
    }

    #[test]
    fn brw_dimension_mismatch() {
        let s = FieldSpec::brw(2, 2).unwrap();
        assert!(matches!(
            brw_covariance(&s, &p(&[0]), &p(&[1, 1])),
            Err(Error::Input(_))
        ));
        assert!(brw_covariance(&FieldSpec::mbrw(2, 2).unwrap(), &p(&[0, 0]), &p(&[0, 0])).is_err());
    }

    #[test]
    fn mbrw_examples() {
        let s = FieldSpec::mbrw(2, 8).unwrap();
        let v = mbrw_covariance(&s, &p(&[17, 200]), &p(&[17, 200])).unwrap();
        assert!((v - 9.0 * LN_2).abs() < 1e-12);
        // the top level covers the whole torus, so every pair shares it
        let s = FieldSpec::mbrw(1, 2).unwrap();
        let c = mbrw_covariance(&s, &p(&[0]), &p(&[2])).unwrap();
        assert_eq!(c, mbrw_brute(1, 2, &[0], &[2]));
        assert!((c - LN_2).abs() < 1e-15);
    }

    #[test]
    fn mbrw_matches_brute_force_small() {
        for (d, n) in [(1usize, 1u32), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 3)] {
            let o = MbrwOracle { d, n };
            let shape = o.shape();
            for i in 0..shape.len() {
                for j in 0..shape.len() {
                    let (x, y) = (shape.coords(i), shape.coords(j));
                    let a = o.cov(&x, &y);
                    let b = mbrw_brute(d, n, &x, &y);
                    assert!((a - b).abs() <= 1e-12, "d={d} n={n} {x:?} {y:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mbrw_log_correlated_bound() {
        // |Cov - (log N - log(|x-y|_N v 1))| stays bounded in n
        let sup = |n: u32| {
            let o = MbrwOracle { d: 1, n };
            let side = 1usize << n;
            (0..side)
                .map(|v| {
                    let t = crate::lattice::torus_distance(&[0], &[v], side).max(1.0);
                    (o.cov(&[0], &[v]) - ((side as f64).ln() - t.ln())).abs()
                })
                .fold(0.0, f64::max)
        };
        let sups: Vec<f64> = (2..=10).map(sup).collect();
        assert!(sups.iter().all(|&s| s < 2.0), "{sups:?}");
    }

    #[test]
    fn clrem_examples() {
        let s = FieldSpec::clrem(8, 0.25).unwrap();
        assert!((clrem_covariance(&s, 3, 3).unwrap() - (8f64.ln() + 0.25)).abs() < 1e-15);
        assert!((clrem_covariance(&s, 0, 4).unwrap() + LN_2).abs() < 1e-12);
        assert!((clrem_covariance(&s, 2, 6).unwrap() + LN_2).abs() < 1e-12);
        // -1/2 log(4 sin^2(pi/8)), evaluated independently
        let direct = -0.5 * (4.0 * (PI / 8.0).sin().powi(2)).ln();
        assert!((clrem_covariance(&s, 0, 1).unwrap() - direct).abs() < 1e-14);
        assert!((clrem_covariance(&s, 0, 1).unwrap() - 0.267_400_0).abs() < 1e-6);
        assert!(clrem_covariance(&s, 0, 8).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_diagonal_dominant(
            n in 1u32..7, d in 1usize..3, seed in any::<u64>()
        ) {
            let side = 1usize << n;
            let shape = Shape::new(d, side);
            let i = (seed as usize) % shape.len();
            let j = (seed.rotate_left(17) as usize) % shape.len();
            let (x, y) = (shape.coords(i), shape.coords(j));
            let oracles: [Box<dyn CovarianceOracle>; 2] =
                [Box::new(BrwOracle { d, n }), Box::new(MbrwOracle { d, n })];
            for o in &oracles {
                prop_assert_eq!(o.cov(&x, &y), o.cov(&y, &x));
                prop_assert!(o.cov(&x, &x) >= o.cov(&x, &y));
            }
            let v = MbrwOracle { d, n }.cov(&x, &x);
            prop_assert!((v - (n + 1) as f64 * LN_2).abs() < 1e-12);
            let b = BrwOracle { d, n }.cov(&x, &y) / LN_2;
            prop_assert!((b - b.round()).abs() < 1e-12 && b >= 0.0 && b <= (n + 1) as f64);
            prop_assert_eq!(BrwOracle { d, n }.cov(&x, &y), brw_brute(n, &x, &y));
        }
    }
}
