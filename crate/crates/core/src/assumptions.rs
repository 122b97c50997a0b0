//! Numerical checks of the log-correlation assumptions for a covariance
//! oracle: the bound constant, the correlation constant on an interior box,
//! near- and off-diagonal fits with their stability across `N`.
//!
//! Pairs are probed exhaustively when they fit in the budget and otherwise
//! through a deterministic prefix of the R2 low-discrepancy sequence, so a
//! larger budget probes a superset.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::covariance::CovarianceOracle;
use crate::error::{Error, Result};
use crate::lattice::{euclidean, torus_distance, LatticePoint, Shape};

/// Number of witnesses kept per check.
pub const WITNESSES: usize = 8;

/// A probed pair and its deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub u: LatticePoint,
    pub v: LatticePoint,
    pub dev: f64,
}

/// Estimate with its largest witnesses, in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub estimate: f64,
    pub witnesses: Vec<Witness>,
    pub pairs_probed: usize,
    pub exhaustive: bool,
}

fn log_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// `max(Var u - log N, Var v - log N, (E(phi_v - phi_u)^2 - 2 log+|u-v| + |Var v - Var u|) / 4)`.
pub fn a0_deviation(o: &dyn CovarianceOracle, u: &[usize], v: &[usize]) -> f64 {
    let log_n = (o.shape().side as f64).ln();
    let (vu, vv) = (o.variance(u), o.variance(v));
    let inc = vu + vv - 2.0 * o.cov(u, v);
    let inc_term = 0.25 * (inc - 2.0 * log_plus(euclidean(u, v)) + (vv - vu).abs());
    (vu - log_n).max(vv - log_n).max(inc_term)
}

/// `|Cov(u, v) - (log N - log+|u - v|)|`.
pub fn a1_deviation(o: &dyn CovarianceOracle, u: &[usize], v: &[usize]) -> f64 {
    let log_n = (o.shape().side as f64).ln();
    (o.cov(u, v) - (log_n - log_plus(euclidean(u, v)))).abs()
}

/// `|Cov(u, v) - (log N - log(|u - v|_N v 1))|` with the torus distance.
pub fn torus_deviation(o: &dyn CovarianceOracle, u: &[usize], v: &[usize]) -> f64 {
    let side = o.shape().side;
    let log_n = (side as f64).ln();
    (o.cov(u, v) - (log_n - torus_distance(u, v, side).max(1.0).ln())).abs()
}

/// Unordered pairs `i <= j` of a box with `m` points: exhaustive or an R2 prefix.
struct Probe {
    pairs: Vec<(usize, usize)>,
    exhaustive: bool,
}

impl Probe {
    fn new(m: usize, budget: usize) -> Self {
        let total = m * (m + 1) / 2;
        if total <= budget {
            let pairs = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
            return Self {
                pairs,
                exhaustive: true,
            };
        }
        // plastic-number R2 sequence in the unit square
        let g = 1.324_717_957_244_746_f64;
        let (a1, a2) = (1.0 / g, 1.0 / (g * g));
        let pairs = (0..budget)
            .map(|k| {
                let x = (0.5 + a1 * k as f64).fract();
                let y = (0.5 + a2 * k as f64).fract();
                let i = ((x * m as f64) as usize).min(m - 1);
                let j = ((y * m as f64) as usize).min(m - 1);
                (i.min(j), i.max(j))
            })
            .collect();
        Self {
            pairs,
            exhaustive: false,
        }
    }
}

/// The `delta N`-interior of `V_N`: coordinates in `[ceil(delta N), N - ceil(delta N))`.
#[derive(Debug, Clone, Copy)]
struct Interior {
    lo: usize,
    inner: Shape,
}

impl Interior {
    fn new(shape: Shape, delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::input(format!("delta must lie in [0, 1/2), got {delta}")));
        }
        let lo = (delta * shape.side as f64).ceil() as usize;
        if 2 * lo >= shape.side {
            return Err(Error::input(format!(
                "the {delta}-interior of a box of side {} is empty",
                shape.side
            )));
        }
        Ok(Self {
            lo,
            inner: Shape::new(shape.d, shape.side - 2 * lo),
        })
    }

    fn coords(&self, i: usize) -> Vec<usize> {
        self.inner.coords(i).into_iter().map(|c| c + self.lo).collect()
    }
}

fn run_check(
    o: &dyn CovarianceOracle,
    interior: Interior,
    budget: usize,
    dev: impl Fn(&dyn CovarianceOracle, &[usize], &[usize]) -> f64,
) -> Result<Check> {
    if budget == 0 {
        return Err(Error::input("pair budget must be at least 1"));
    }
    let probe = Probe::new(interior.inner.len(), budget);
    let mut witnesses: Vec<Witness> = Vec::with_capacity(WITNESSES + 1);
    let mut estimate = f64::NEG_INFINITY;
    for &(i, j) in &probe.pairs {
        let (u, v) = (interior.coords(i), interior.coords(j));
        let d = dev(o, &u, &v);
        estimate = estimate.max(d);
        let full = witnesses.len() == WITNESSES;
        if !full || d > witnesses[WITNESSES - 1].dev {
            let at = witnesses.partition_point(|w| w.dev >= d);
            witnesses.insert(
                at,
                Witness {
                    u: LatticePoint::new(u),
                    v: LatticePoint::new(v),
                    dev: d,
                },
            );
            witnesses.truncate(WITNESSES);
        }
    }
    Ok(Check {
        estimate,
        witnesses,
        pairs_probed: probe.pairs.len(),
        exhaustive: probe.exhaustive,
    })
}

/// Bound constant over the probed pairs of `V_N`.
pub fn check_a0(o: &dyn CovarianceOracle, pair_budget: usize) -> Result<Check> {
    let interior = Interior::new(o.shape(), 0.0)?;
    let mut c = run_check(o, interior, pair_budget, a0_deviation)?;
    c.estimate = c.estimate.max(0.0);
    Ok(c)
}

/// Correlation constant over probed pairs of the `delta N`-interior.
pub fn check_a1(o: &dyn CovarianceOracle, delta: f64, pair_budget: usize) -> Result<Check> {
    let interior = Interior::new(o.shape(), delta)?;
    run_check(o, interior, pair_budget, a1_deviation)
}

/// Torus log-correlation constant over probed pairs of `V_N`.
pub fn check_torus(o: &dyn CovarianceOracle, pair_budget: usize) -> Result<Check> {
    let interior = Interior::new(o.shape(), 0.0)?;
    run_check(o, interior, pair_budget, torus_deviation)
}

/// Evaluation grids for [`estimate_fgh`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FghGrids {
    /// Macroscopic points `x` in `(0, 1)^d`.
    pub x: Vec<Vec<f64>>,
    /// Microscopic offsets range over `[0, l]^d`.
    pub l: usize,
    /// Macroscopic pairs `(x, y)` for the off-diagonal fit.
    pub h_pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Fits at the largest `N`, with inter-`N` stability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FghFit {
    pub sides: Vec<usize>,
    /// `f(x)`: mean over `u` of `Var(xN + u) - log N`.
    pub f_hat: Vec<f64>,
    /// `g(u, v)` over `[0, l]^d x [0, l]^d` row-major: mean over `x` of the residual.
    pub g_hat: Vec<f64>,
    /// `h(x, y) = Cov(xN, yN)`.
    pub h_hat: Vec<f64>,
    /// Largest `|f + g - (Cov - log N)|` over the near-diagonal grid.
    pub reproduction_error: f64,
    /// Largest change of each fit between consecutive sides.
    pub stability_f: f64,
    pub stability_g: f64,
    pub stability_h: f64,
}

fn macro_point(x: &[f64], side: usize, d: usize) -> Result<Vec<usize>> {
    if x.len() != d {
        return Err(Error::input(format!("grid point {x:?} is not {d}-dimensional")));
    }
    x.iter()
        .map(|&t| {
            if !(t >= 0.0 && t < 1.0) {
                return Err(Error::input(format!("grid coordinate {t} is outside [0, 1)")));
            }
            Ok((t * side as f64).floor() as usize)
        })
        .collect()
}

struct OneSide {
    f: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    reproduction: f64,
}

fn fit_one(o: &dyn CovarianceOracle, grids: &FghGrids) -> Result<OneSide> {
    let shape = o.shape();
    let (d, side) = (shape.d, shape.side);
    let log_n = (side as f64).ln();
    let micro = Shape::new(d, grids.l + 1);
    let mlen = micro.len();
    let offset = |base: &[usize], k: usize| -> Result<Vec<usize>> {
        let p: Vec<usize> = base.iter().zip(micro.coords(k)).map(|(b, u)| b + u).collect();
        if p.iter().any(|&c| c >= side) {
            return Err(Error::input(format!("grid point {p:?} lies outside V_N for N = {side}")));
        }
        Ok(p)
    };
    let mut f = Vec::with_capacity(grids.x.len());
    // centered covariances per x, row-major over (u, v)
    let mut resid = Vec::with_capacity(grids.x.len());
    for x in &grids.x {
        let base = macro_point(x, side, d)?;
        let pts: Vec<Vec<usize>> = (0..mlen).map(|k| offset(&base, k)).collect::<Result<_>>()?;
        let fx = pts.iter().map(|p| o.variance(p) - log_n).sum::<f64>() / mlen as f64;
        let mut r = Vec::with_capacity(mlen * mlen);
        for a in &pts {
            for b in &pts {
                r.push(o.cov(a, b) - log_n - fx);
            }
        }
        f.push(fx);
        resid.push(r);
    }
    let g: Vec<f64> = (0..mlen * mlen)
        .map(|k| resid.iter().map(|r| r[k]).sum::<f64>() / resid.len() as f64)
        .collect();
    let reproduction = resid
        .iter()
        .flat_map(|r| r.iter().zip(&g).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let h = grids
        .h_pairs
        .iter()
        .map(|(x, y)| Ok(o.cov(&macro_point(x, side, d)?, &macro_point(y, side, d)?)))
        .collect::<Result<_>>()?;
    Ok(OneSide {
        f,
        g,
        h,
        reproduction,
    })
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Near- and off-diagonal fits for oracles at ascending sides.
pub fn estimate_fgh(oracles: &[Arc<dyn CovarianceOracle>], grids: &FghGrids) -> Result<FghFit> {
    if oracles.len() < 2 {
        return Err(Error::input("need at least two sides"));
    }
    let sides: Vec<usize> = oracles.iter().map(|o| o.shape().side).collect();
    if sides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("sides must be strictly ascending"));
    }
    if grids.x.is_empty() {
        return Err(Error::input("the x grid is empty"));
    }
    let fits: Vec<OneSide> = oracles
        .iter()
        .map(|o| fit_one(o.as_ref(), grids))
        .collect::<Result<_>>()?;
    let stab = |pick: fn(&OneSide) -> &[f64]| {
        fits.windows(2)
            .map(|w| max_change(pick(&w[0]), pick(&w[1])))
            .fold(0.0, f64::max)
    };
    let stability_f = stab(|s| &s.f);
    let stability_g = stab(|s| &s.g);
    let stability_h = stab(|s| &s.h);
    let last = fits.into_iter().last().expect("at least two fits");
    Ok(FghFit {
        sides,
        f_hat: last.f,
        g_hat: last.g,
        h_hat: last.h,
        reproduction_error: last.reproduction,
        stability_f,
        stability_g,
        stability_h,
    })
}

/// Collected results of the checks run on one oracle.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub alpha0: Option<Check>,
    /// Keyed by `delta` as written.
    pub alpha_delta: BTreeMap<String, Check>,
    pub torus: Option<Check>,
    pub fgh: Option<FghFit>,
}

impl AssumptionReport {
    pub fn alpha0_hat(&self) -> Option<f64> {
        self.alpha0.as_ref().map(|c| c.estimate)
    }

    /// Every witness across the checks, largest deviation first.
    pub fn worst_pairs(&self) -> Vec<Witness> {
        let mut all: Vec<Witness> = self
            .alpha0
            .iter()
            .chain(self.alpha_delta.values())
            .chain(self.torus.iter())
            .flat_map(|c| c.witnesses.iter().cloned())
            .collect();
        all.sort_by(|a, b| b.dev.total_cmp(&a.dev));
        all
    }

    /// `[{assumption, estimate, witnesses: [{u, v, dev}], grids}]`.
    pub fn to_json(&self) -> Value {
        let entry = |name: String, c: &Check| {
            json!({
                "assumption": name,
                "estimate": c.estimate,
                "witnesses": c.witnesses,
                "pairs_probed": c.pairs_probed,
                "exhaustive": c.exhaustive,
                "grids": {},
            })
        };
        let mut out = Vec::new();
        if let Some(c) = &self.alpha0 {
            out.push(entry("A0".into(), c));
        }
        for (delta, c) in &self.alpha_delta {
            out.push(entry(format!("A1(delta={delta})"), c));
        }
        if let Some(c) = &self.torus {
            out.push(entry("torus".into(), c));
        }
        if let Some(f) = &self.fgh {
            out.push(json!({
                "assumption": "A2/A3",
                "estimate": f.stability_f.max(f.stability_g).max(f.stability_h),
                "witnesses": [],
                "grids": f,
            }));
        }
        Value::Array(out)
    }
}
