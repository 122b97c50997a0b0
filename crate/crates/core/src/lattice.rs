//! Lattice geometry and declarative field descriptions.
//!
//! Points of the box `V_N = {0, .., N-1}^d` are addressed either by a
//! [`LatticePoint`] or by their row-major flat index (last coordinate varies
//! fastest). Every field array in the crate uses that flat layout.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::approx::XiParams;
use crate::covariance::DenseCovariance;
use crate::error::{Error, Result};

/// A point of `V_N` in lattice units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub coords: Vec<usize>,
}

impl LatticePoint {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        Self {
            coords: coords.into(),
        }
    }

    pub fn origin(d: usize) -> Self {
        Self { coords: vec![0; d] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Checks the point against a box of dimension `d` and side `side`.
    pub fn validate(&self, d: usize, side: usize) -> Result<()> {
        if self.coords.len() != d {
            return Err(Error::input(format!(
                "point {self} has dimension {}, expected {d}",
                self.coords.len()
            )));
        }
        if let Some(c) = self.coords.iter().find(|&&c| c >= side) {
            return Err(Error::input(format!(
                "coordinate {c} of {self} is outside [0, {side})"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<usize>> for LatticePoint {
    fn from(coords: Vec<usize>) -> Self {
        Self { coords }
    }
}

/// Dimension and side length of a cubic box, with row-major indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub side: usize,
}

impl Shape {
    pub fn new(d: usize, side: usize) -> Self {
        Self { d, side }
    }

    /// Number of lattice points, `side^d`.
    pub fn len(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn coords_into(&self, mut index: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = index % self.side;
            index /= self.side;
        }
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        self.coords_into(index, &mut out);
        out
    }

    pub fn point(&self, index: usize) -> LatticePoint {
        LatticePoint::new(self.coords(index))
    }

    /// Iterates all points in row-major order.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

/// Euclidean distance between two coordinate tuples.
pub fn euclidean(x: &[usize], y: &[usize]) -> f64 {
    squared_distance(x, y).sqrt()
}

pub fn squared_distance(x: &[usize], y: &[usize]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let t = a.abs_diff(b) as f64;
            t * t
        })
        .sum()
}

/// Euclidean distance on the torus of side `side` (minimum over periodic images).
pub fn torus_distance(x: &[usize], y: &[usize], side: usize) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let t = a.abs_diff(b);
            let t = t.min(side - t) as f64;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Exact base-2 logarithm of a power of two.
pub fn log2_exact(side: usize) -> Option<u32> {
    side.is_power_of_two().then(|| side.trailing_zeros())
}

/// The built-in field families.
#[derive(Debug, Clone)]
pub enum Family {
    /// Branching random walk over aligned dyadic boxes.
    Brw,
    /// Modified branching random walk with torus identification.
    Mbrw,
    /// Circular logarithmic REM; `w` is the diagonal offset.
    Clrem { w: f64 },
    /// Arbitrary covariance over all points of the box, row-major.
    Dense(Arc<DenseCovariance>),
    /// The four-component approximation field.
    Xi(Box<XiParams>),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Brw => "brw",
            Family::Mbrw => "mbrw",
            Family::Clrem { .. } => "clrem",
            Family::Dense(_) => "dense",
            Family::Xi(_) => "xi",
        }
    }
}

/// Declarative description of a field family on `V_N`.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub family: Family,
    pub d: usize,
    /// Side length `N`.
    pub side: usize,
}

impl FieldSpec {
    pub fn brw(d: usize, n: u32) -> Result<Self> {
        Self::dyadic(Family::Brw, d, n)
    }

    pub fn mbrw(d: usize, n: u32) -> Result<Self> {
        Self::dyadic(Family::Mbrw, d, n)
    }

    fn dyadic(family: Family, d: usize, n: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if n >= usize::BITS / 2 {
            return Err(Error::input(format!("n = {n} is too large")));
        }
        Ok(Self {
            family,
            d,
            side: 1 << n,
        })
    }

    /// CLREM on `points` equally spaced points of the circle (always `d = 1`).
    pub fn clrem(points: usize, w: f64) -> Result<Self> {
        if points == 0 {
            return Err(Error::input("CLREM needs at least one point"));
        }
        if !w.is_finite() {
            return Err(Error::input("W must be finite"));
        }
        Ok(Self {
            family: Family::Clrem { w },
            d: 1,
            side: points,
        })
    }

    pub fn dense(d: usize, side: usize, cov: DenseCovariance) -> Result<Self> {
        let shape = Shape::new(d, side);
        if d == 0 || side == 0 {
            return Err(Error::input("dense field needs positive d and side"));
        }
        if cov.size() != shape.len() {
            return Err(Error::input(format!(
                "dense covariance has size {}, box has {} points",
                cov.size(),
                shape.len()
            )));
        }
        Ok(Self {
            family: Family::Dense(Arc::new(cov)),
            d,
            side,
        })
    }

    pub fn xi(params: XiParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            d: params.d,
            side: params.side(),
            family: Family::Xi(Box::new(params)),
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.d, self.side)
    }

    /// `n` with `N = 2^n`, when the side is a power of two.
    pub fn n(&self) -> Option<u32> {
        log2_exact(self.side)
    }

    pub fn len(&self) -> usize {
        self.shape().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_side(&self) -> f64 {
        (self.side as f64).ln()
    }

    /// True when two specs describe the same law.
    pub fn same_law(&self, other: &FieldSpec) -> bool {
        if self.d != other.d || self.side != other.side {
            return false;
        }
        match (&self.family, &other.family) {
            (Family::Brw, Family::Brw) | (Family::Mbrw, Family::Mbrw) => true,
            (Family::Clrem { w: a }, Family::Clrem { w: b }) => a == b,
            (Family::Dense(a), Family::Dense(b)) => Arc::ptr_eq(a, b) || a == b,
            (Family::Xi(a), Family::Xi(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} d={} N={}", self.family.name(), self.d, self.side)?;
        if let Family::Clrem { w } = self.family {
            write!(f, " W={w}")?;
        }
        Ok(())
    }
}
