//! Seeded samplers for every [`FieldSpec`] family and deterministic replica
//! execution.
//!
//! Randomness is drawn per `(level, box)` from counter-seeded streams (see
//! [`crate::rng`]), so a `(spec, seed)` pair always yields the same field,
//! bit for bit, regardless of how many worker threads run the replicas.

use std::f64::consts::LN_2;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::approx::{count_barrier_events, BarrierCounts, XiSampler};
use crate::covariance::{cholesky, CholeskyFactor, ClremOracle};
use crate::error::{Error, Result};
use crate::extremes::{derivative_martingale, max_stat, restricted_pair_max, MaxStat, PairMaxStat};
use crate::lattice::{log2_exact, Family, FieldSpec, Shape};
use crate::rng::{self, tag};

/// Default cap on the number of lattice points a sampler will materialize.
pub const DEFAULT_POINT_CAP: usize = 1 << 22;

const FIELD_MAGIC: &[u8; 8] = b"LCGFFLD1";

/// A realization of a field on `V_N`.
#[derive(Debug, Clone)]
pub struct SampledField {
    pub spec: FieldSpec,
    /// Row-major values, length `N^d`.
    pub values: Vec<f64>,
    pub seed: u64,
    /// Per-level increments (MBRW only, when requested); `levels[j]` holds the
    /// level-`j` contribution at every point.
    pub levels: Option<Vec<Vec<f64>>>,
}

impl SampledField {
    pub fn shape(&self) -> Shape {
        self.spec.shape()
    }

    pub fn value_at(&self, coords: &[usize]) -> f64 {
        self.values[self.shape().index(coords)]
    }

    /// Binary export: magic `LCGFFLD1`, `u32` d, `u32` N, `u64` seed, then
    /// `N^d` little-endian `f64` values in row-major order.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        write_field_record(out, self.spec.d, self.spec.side, self.seed, None, &self.values)
    }

    /// CSV export with columns `x0, .., x{d-1}, value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let shape = self.shape();
        let header: Vec<String> = (0..shape.d).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        let mut coords = vec![0; shape.d];
        for (i, v) in self.values.iter().enumerate() {
            shape.coords_into(i, &mut coords);
            let c: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{v:.17e}", c.join(","))?;
        }
        Ok(())
    }
}

/// A field record read back from the binary format.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub d: u32,
    pub side: u32,
    pub seed: u64,
    pub component: Option<u8>,
    pub values: Vec<f64>,
}

pub(crate) fn write_field_record<W: Write>(
    mut out: W,
    d: usize,
    side: usize,
    seed: u64,
    component: Option<u8>,
    values: &[f64],
) -> Result<()> {
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&(d as u32).to_le_bytes())?;
    out.write_all(&(side as u32).to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    if let Some(c) = component {
        out.write_all(&[c])?;
    }
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one field record; `with_component` selects the approximation-field
/// variant that carries a component byte after the header.
pub fn read_field_record<R: Read>(mut input: R, with_component: bool) -> Result<FieldRecord> {
    let mut header = [0u8; 24];
    input.read_exact(&mut header)?;
    if &header[..8] != FIELD_MAGIC {
        return Err(Error::input("not an LCGFFLD1 record"));
    }
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let side = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let seed = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let component = if with_component {
        let mut c = [0u8; 1];
        input.read_exact(&mut c)?;
        Some(c[0])
    } else {
        None
    };
    let len = (side as usize)
        .checked_pow(d)
        .ok_or_else(|| Error::input("record size overflows"))?;
    let mut raw = vec![0u8; len * 8];
    input.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FieldRecord {
        d,
        side,
        seed,
        component,
        values,
    })
}

/// Replaces `dst` with cyclic window sums of `src` along `axis`:
/// `dst[z] = sum_{o < width} src[z - o e_axis mod N]`.
fn cyclic_window_sum(src: &[f64], dst: &mut [f64], shape: Shape, axis: usize, width: usize) {
    let side = shape.side;
    let stride = side.pow((shape.d - 1 - axis) as u32);
    let block = side * stride;
    if width == 1 {
        dst.copy_from_slice(src);
        return;
    }
    let mut acc = vec![0.0; stride];
    for (s_blk, d_blk) in src.chunks_exact(block).zip(dst.chunks_exact_mut(block)) {
        let row = |k: usize| &s_blk[k * stride..(k + 1) * stride];
        acc.iter_mut().for_each(|a| *a = 0.0);
        if width >= side {
            for k in 0..side {
                acc.iter_mut().zip(row(k)).for_each(|(a, &v)| *a += v);
            }
            for k in 0..side {
                d_blk[k * stride..(k + 1) * stride].copy_from_slice(&acc);
            }
            continue;
        }
        for o in 0..width {
            let k = (side - o) % side;
            acc.iter_mut().zip(row(k)).for_each(|(a, &v)| *a += v);
        }
        d_blk[..stride].copy_from_slice(&acc);
        for k in 1..side {
            let drop = (k + side - width) % side;
            let (add, sub) = (row(k), row(drop));
            for ((a, &p), &m) in acc.iter_mut().zip(add).zip(sub) {
                *a += p - m;
            }
            d_blk[k * stride..(k + 1) * stride].copy_from_slice(&acc);
        }
    }
}

/// Level-`j` MBRW increment at every point of the torus, written into `out`.
/// `scratch` must have the same length.
pub(crate) fn mbrw_level(
    shape: Shape,
    j: u32,
    rng: &mut rng::Rng,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    let sd = (LN_2 * 0.5f64.powi((shape.d as u32 * j) as i32)).sqrt();
    // one variable per level-j box, indexed by its lower-left corner
    rng::fill_normal(rng, out, sd);
    let width = 1usize << j;
    if width == 1 {
        return;
    }
    for axis in 0..shape.d {
        cyclic_window_sum(out, scratch, shape, axis, width);
        out.copy_from_slice(scratch);
    }
}

fn check_cap(spec: &FieldSpec) -> Result<()> {
    let len = spec
        .side
        .checked_pow(spec.d as u32)
        .ok_or(Error::Capacity {
            requested: usize::MAX,
            cap: DEFAULT_POINT_CAP,
        })?;
    if len > DEFAULT_POINT_CAP {
        return Err(Error::Capacity {
            requested: len,
            cap: DEFAULT_POINT_CAP,
        });
    }
    Ok(())
}

fn expect_family(spec: &FieldSpec, want: &str) -> Result<u32> {
    if spec.family.name() != want {
        return Err(Error::input(format!(
            "expected a {want} specification, got {}",
            spec.family.name()
        )));
    }
    check_cap(spec)?;
    log2_exact(spec.side).ok_or_else(|| Error::input("side must be a power of two"))
}

/// Samples a branching random walk.
pub fn sample_brw(spec: &FieldSpec, seed: u64) -> Result<SampledField> {
    let n = expect_family(spec, "brw")?;
    let shape = spec.shape();
    let mut values = vec![0.0; shape.len()];
    let mut coords = vec![0; shape.d];
    for j in 0..=n {
        let coarse = Shape::new(shape.d, shape.side >> j);
        let mut a = vec![0.0; coarse.len()];
        rng::fill_normal(&mut rng::stream(seed, &[tag::BRW, j as u64]), &mut a, LN_2.sqrt());
        for (i, v) in values.iter_mut().enumerate() {
            shape.coords_into(i, &mut coords);
            coords.iter_mut().for_each(|c| *c >>= j);
            *v += a[coarse.index(&coords)];
        }
    }
    Ok(SampledField {
        spec: spec.clone(),
        values,
        seed,
        levels: None,
    })
}

/// Samples a modified branching random walk, optionally retaining the
/// per-level increments.
pub fn sample_mbrw(spec: &FieldSpec, seed: u64, retain_levels: bool) -> Result<SampledField> {
    let n = expect_family(spec, "mbrw")?;
    let shape = spec.shape();
    let len = shape.len();
    let mut values = vec![0.0; len];
    let mut level = vec![0.0; len];
    let mut scratch = vec![0.0; len];
    let mut levels = retain_levels.then(|| Vec::with_capacity(n as usize + 1));
    for j in 0..=n {
        let mut rng = rng::stream(seed, &[tag::MBRW, j as u64]);
        mbrw_level(shape, j, &mut rng, &mut level, &mut scratch);
        values.iter_mut().zip(&level).for_each(|(v, &l)| *v += l);
        if let Some(ls) = levels.as_mut() {
            ls.push(level.clone());
        }
    }
    Ok(SampledField {
        spec: spec.clone(),
        values,
        seed,
        levels,
    })
}

/// Draws `L g` with `g` i.i.d. standard normal.
pub fn sample_dense(factor: &CholeskyFactor, seed: u64) -> Vec<f64> {
    let mut g = vec![0.0; factor.size()];
    rng::fill_normal(&mut rng::stream(seed, &[tag::DENSE]), &mut g, 1.0);
    factor.mul_vec(&g)
}

enum Kind {
    Brw,
    Mbrw,
    Dense(CholeskyFactor),
    Xi(Box<XiSampler>),
}

/// A sampler prepared for repeated draws from one specification; dense
/// families are factored once.
pub struct Sampler {
    spec: FieldSpec,
    kind: Kind,
}

impl Sampler {
    pub fn new(spec: &FieldSpec) -> Result<Self> {
        check_cap(spec)?;
        let kind = match &spec.family {
            Family::Brw => Kind::Brw,
            Family::Mbrw => Kind::Mbrw,
            Family::Clrem { w } => {
                let o = ClremOracle {
                    points: spec.side,
                    w: *w,
                };
                let pts: Vec<_> = spec.shape().points().collect();
                let m = crate::covariance::build_dense(&o, &pts)?;
                Kind::Dense(cholesky(&m)?)
            }
            Family::Dense(m) => Kind::Dense(cholesky(m)?),
            Family::Xi(p) => Kind::Xi(Box::new(XiSampler::new(p)?)),
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
        })
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn xi(&self) -> Option<&XiSampler> {
        match &self.kind {
            Kind::Xi(x) => Some(x),
            _ => None,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<SampledField> {
        match &self.kind {
            Kind::Brw => sample_brw(&self.spec, seed),
            Kind::Mbrw => sample_mbrw(&self.spec, seed, false),
            Kind::Dense(f) => Ok(SampledField {
                spec: self.spec.clone(),
                values: sample_dense(f, seed),
                seed,
                levels: None,
            }),
            Kind::Xi(x) => Ok(SampledField {
                spec: self.spec.clone(),
                values: x.build(seed).total,
                seed,
                levels: None,
            }),
        }
    }
}

/// Replica count and master seed for a batch of independent samples.
#[derive(Debug, Clone)]
pub struct ReplicaPlan {
    pub spec: FieldSpec,
    pub replicas: usize,
    pub master_seed: u64,
}

impl ReplicaPlan {
    pub fn new(spec: FieldSpec, replicas: usize, master_seed: u64) -> Self {
        Self {
            spec,
            replicas,
            master_seed,
        }
    }

    /// Seed of replica `index`: `hash64(master, index)`.
    pub fn seed(&self, index: usize) -> u64 {
        rng::replica_seed(self.master_seed, index as u64)
    }
}

/// Per-replica reductions understood by [`run_replicas`].
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    Max,
    DerivativeMartingale,
    PairMax { r: usize },
    BarrierCounts { z: f64 },
    RawField,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Max => "max",
            Statistic::DerivativeMartingale => "dmart",
            Statistic::PairMax { .. } => "pair-max",
            Statistic::BarrierCounts { .. } => "barrier-counts",
            Statistic::RawField => "raw",
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    /// Parses `max`, `dmart`, `pair-max:<r>`, `barrier-counts:<z>` or `raw`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let parse_arg = |what: &str| -> Result<&str> {
            arg.ok_or_else(|| Error::input(format!("statistic {name} needs :{what}")))
        };
        match name {
            "max" => Ok(Statistic::Max),
            "dmart" | "derivative-martingale" => Ok(Statistic::DerivativeMartingale),
            "pair-max" => Ok(Statistic::PairMax {
                r: parse_arg("r")?
                    .parse()
                    .map_err(|_| Error::input("pair-max radius must be an integer"))?,
            }),
            "barrier-counts" => Ok(Statistic::BarrierCounts {
                z: parse_arg("z")?
                    .parse()
                    .map_err(|_| Error::input("barrier level must be a number"))?,
            }),
            "raw" => Ok(Statistic::RawField),
            other => Err(Error::input(format!("unknown statistic {other:?}"))),
        }
    }
}

/// The value of a [`Statistic`] on one replica.
#[derive(Debug, Clone)]
pub enum ReplicaOutput {
    Max(MaxStat),
    DerivativeMartingale(f64),
    PairMax(PairMaxStat),
    Barrier(BarrierCounts),
    Field(SampledField),
}

/// Runs `plan.replicas` independent samples and reduces each with `statistic`.
///
/// Output is in replica order and identical for every `workers` value
/// (`0` uses the global rayon pool).
pub fn run_replicas(
    plan: &ReplicaPlan,
    statistic: &Statistic,
    workers: usize,
) -> Result<Vec<ReplicaOutput>> {
    let sampler = Sampler::new(&plan.spec)?;
    if let Statistic::BarrierCounts { .. } = statistic {
        if sampler.xi().is_none() {
            return Err(Error::input("barrier counts need an approximation-field spec"));
        }
    }
    let one = |i: usize| -> Result<ReplicaOutput> {
        let seed = plan.seed(i);
        Ok(match statistic {
            Statistic::BarrierCounts { z } => {
                let xi = sampler.xi().expect("checked above").build(seed);
                ReplicaOutput::Barrier(count_barrier_events(&xi, *z)?)
            }
            Statistic::Max => ReplicaOutput::Max(max_stat(&sampler.sample(seed)?)),
            Statistic::DerivativeMartingale => ReplicaOutput::DerivativeMartingale(
                derivative_martingale(&sampler.sample(seed)?, None)?.z,
            ),
            Statistic::PairMax { r } => {
                ReplicaOutput::PairMax(restricted_pair_max(&sampler.sample(seed)?, *r)?)
            }
            Statistic::RawField => ReplicaOutput::Field(sampler.sample(seed)?),
        })
    };
    map_replicas(plan.replicas, workers, one)?.into_iter().collect()
}

/// Maps `f` over `0..count` in parallel, preserving index order.
pub fn map_replicas<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 0 {
        return Ok((0..count).into_par_iter().map(&f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::input(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}
