//! Extreme-value statistics: the centering `m_N`, maxima, restricted-pair
//! maxima, near-maxima geometry and the derivative martingale.
//!
//! Distances between points are Euclidean (no wrap-around); logarithms are
//! natural.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{squared_distance, LatticePoint, Shape};
use crate::samplers::SampledField;
use crate::stats::compensated_sum;

/// `m_N = sqrt(2d) log N - 3 / (2 sqrt(2d)) log log N`.
pub fn m_n(side: usize, d: usize) -> Result<f64> {
    if side <= 2 {
        return Err(Error::domain(format!("m_N needs N >= 3, got {side}")));
    }
    if d == 0 {
        return Err(Error::input("dimension must be positive"));
    }
    let c = (2.0 * d as f64).sqrt();
    let ln = (side as f64).ln();
    Ok(c * ln - 3.0 / (2.0 * c) * ln.ln())
}

/// Maximum of a field with its first (row-major) maximizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxStat {
    pub max_value: f64,
    pub argmax: LatticePoint,
    /// `max_value - m_N`; NaN when `N < 3`.
    pub centered: f64,
}

/// Value and flat index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn max_stat(field: &SampledField) -> MaxStat {
    let shape = field.shape();
    let (i, v) = argmax(&field.values);
    MaxStat {
        max_value: v,
        argmax: shape.point(i),
        centered: m_n(shape.side, shape.d).map_or(f64::NAN, |m| v - m),
    }
}

/// `max { phi_u + phi_v : r <= |u - v| <= N / r }`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMaxStat {
    pub value: f64,
    pub pair: (LatticePoint, LatticePoint),
    pub r: usize,
}

/// Closed annulus `r <= |u - v| <= N / r` in squared distances, exact.
fn in_closed_annulus(sq: u128, r: u128, side: u128) -> bool {
    r * r <= sq && sq * r * r <= side * side
}

fn in_open_annulus(sq: u128, r: u128, side: u128) -> bool {
    r * r < sq && sq * r * r < side * side
}

fn squared_int(a: &[usize], b: &[usize]) -> u128 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x.abs_diff(y) as u128;
            t * t
        })
        .sum()
}

/// True when some displacement inside the box satisfies `pred`.
fn annulus_feasible(shape: Shape, pred: impl Fn(u128) -> bool) -> bool {
    let bound = Shape::new(shape.d, shape.side);
    let mut c = vec![0; shape.d];
    (0..bound.len()).any(|i| {
        bound.coords_into(i, &mut c);
        pred(c.iter().map(|&x| (x as u128) * (x as u128)).sum())
    })
}

fn descending_order(values: &[f64], top: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if top < idx.len() {
        idx.select_nth_unstable_by(top, cmp);
        idx.truncate(top);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Best pair among the `order` candidates; `None` if no candidate pair is feasible.
fn best_pair(
    values: &[f64],
    shape: Shape,
    order: &[usize],
    feasible: &impl Fn(u128) -> bool,
) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    let mut a = vec![0; shape.d];
    let mut b = vec![0; shape.d];
    for (k, &i) in order.iter().enumerate() {
        let vi = values[i];
        if let Some((bv, ..)) = best {
            // every remaining pair has its larger element at or after k
            if 2.0 * vi <= bv {
                break;
            }
        }
        shape.coords_into(i, &mut a);
        for &j in &order[k + 1..] {
            let s = vi + values[j];
            if matches!(best, Some((bv, ..)) if s <= bv) {
                break;
            }
            shape.coords_into(j, &mut b);
            if feasible(squared_int(&a, &b)) {
                best = Some((s, i, j));
                break;
            }
        }
    }
    best
}

/// Exact restricted-pair maximum over raw row-major values.
pub fn restricted_pair_max_values(values: &[f64], shape: Shape, r: usize) -> Result<PairMaxStat> {
    let side = shape.side as u128;
    let rr = r as u128;
    if r == 0 || !annulus_feasible(shape, |sq| in_closed_annulus(sq, rr, side)) {
        return Err(Error::domain(format!(
            "the annulus {r} <= |u-v| <= N/{r} is empty for N = {}",
            shape.side
        )));
    }
    let feasible = |sq: u128| in_closed_annulus(sq, rr, side);
    // candidates beyond the top block can only reach max + (top block floor)
    let mut top = 1024.min(values.len());
    loop {
        let order = descending_order(values, top);
        let found = best_pair(values, shape, &order, &feasible);
        let exhaustive = top == values.len();
        let certified = match found {
            Some((s, ..)) => exhaustive || s >= values[order[0]] + values[order[top - 1]],
            None => exhaustive,
        };
        if certified {
            let (value, i, j) = found.expect("a feasible annulus has at least one pair");
            return Ok(PairMaxStat {
                value,
                pair: (shape.point(i), shape.point(j)),
                r,
            });
        }
        top = (top * 4).min(values.len());
    }
}

pub fn restricted_pair_max(field: &SampledField, r: usize) -> Result<PairMaxStat> {
    restricted_pair_max_values(&field.values, field.shape(), r)
}

/// Pairs of near-maxima at mesoscopic distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearMaxReport {
    pub r: usize,
    pub c: f64,
    /// `m_N - c log log r`.
    pub threshold: f64,
    pub pair_count: u64,
    /// At most [`NEAR_MAX_EXAMPLES`] pairs, in scan order.
    pub examples: Vec<(LatticePoint, LatticePoint)>,
}

pub const NEAR_MAX_EXAMPLES: usize = 32;

/// Counts unordered pairs `{u, v}` with `r < |u - v| < N / r` and both values
/// at least `m_N - c log log r`.
pub fn near_max_pairs(field: &SampledField, r: usize, c: f64) -> Result<NearMaxReport> {
    let shape = field.shape();
    if r < 3 {
        return Err(Error::domain(format!("log log r needs r >= 3, got {r}")));
    }
    let (side, rr) = (shape.side as u128, r as u128);
    if !annulus_feasible(shape, |sq| in_open_annulus(sq, rr, side)) {
        return Err(Error::domain(format!(
            "the annulus {r} < |u-v| < N/{r} is empty for N = {}",
            shape.side
        )));
    }
    let threshold = m_n(shape.side, shape.d)? - c * (r as f64).ln().ln();
    let above: Vec<Vec<usize>> = field
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(i, _)| shape.coords(i))
        .collect();
    let mut pair_count = 0u64;
    let mut examples = Vec::new();
    for (a, u) in above.iter().enumerate() {
        for v in &above[a + 1..] {
            if in_open_annulus(squared_int(u, v), rr, side) {
                pair_count += 1;
                if examples.len() < NEAR_MAX_EXAMPLES {
                    examples.push((LatticePoint::new(u.clone()), LatticePoint::new(v.clone())));
                }
            }
        }
    }
    Ok(NearMaxReport {
        r,
        c,
        threshold,
        pair_count,
        examples,
    })
}

/// A region of `V_N` for the derivative-martingale measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    /// The half-open box `lo <= x < hi`, coordinatewise.
    Box { lo: Vec<usize>, hi: Vec<usize> },
    /// Explicit row-major indices.
    Indices(Vec<usize>),
}

impl Region {
    fn indices(&self, shape: Shape) -> Result<Vec<usize>> {
        match self {
            Region::Box { lo, hi } => {
                if lo.len() != shape.d || hi.len() != shape.d {
                    return Err(Error::input("region dimension does not match the field"));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h || *h > shape.side) {
                    return Err(Error::input("region box is outside the field"));
                }
                let mut c = vec![0; shape.d];
                Ok((0..shape.len())
                    .filter(|&i| {
                        shape.coords_into(i, &mut c);
                        c.iter().zip(lo).zip(hi).all(|((x, l), h)| l <= x && x < h)
                    })
                    .collect())
            }
            Region::Indices(ix) => {
                if let Some(bad) = ix.iter().find(|&&i| i >= shape.len()) {
                    return Err(Error::input(format!("index {bad} is outside the field")));
                }
                Ok(ix.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeMartingaleValue {
    pub z: f64,
    /// Number of points summed.
    pub points: usize,
}

/// One term `s e^{-sqrt(2d) s}` with `s = sqrt(2d) log N - phi`.
pub fn dm_term(phi: f64, d: usize, log_side: f64) -> f64 {
    let c = (2.0 * d as f64).sqrt();
    let s = c * log_side - phi;
    s * (-c * s).exp()
}

/// `Z_{N,A} = sum_{v in A} (sqrt(2d) log N - phi_v) e^{-sqrt(2d)(sqrt(2d) log N - phi_v)}`,
/// over the whole box when `subset` is `None`.
pub fn derivative_martingale(
    field: &SampledField,
    subset: Option<&Region>,
) -> Result<DerivativeMartingaleValue> {
    let shape = field.shape();
    let log_side = (shape.side as f64).ln();
    let term = |i: usize| dm_term(field.values[i], shape.d, log_side);
    Ok(match subset {
        None => DerivativeMartingaleValue {
            z: compensated_sum((0..shape.len()).map(term)),
            points: shape.len(),
        },
        Some(region) => {
            let ix = region.indices(shape)?;
            DerivativeMartingaleValue {
                z: compensated_sum(ix.iter().map(|&i| term(i))),
                points: ix.len(),
            }
        }
    })
}

/// Euclidean distance between two lattice points.
pub fn distance(u: &LatticePoint, v: &LatticePoint) -> f64 {
    squared_distance(&u.coords, &v.coords).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::FieldSpec;
    use crate::rng;
    use proptest::prelude::*;

    fn field(d: usize, n: u32, values: Vec<f64>) -> SampledField {
        SampledField {
            spec: FieldSpec::mbrw(d, n).unwrap(),
            values,
            seed: 0,
            levels: None,
        }
    }

    fn brute_pair_max(values: &[f64], shape: Shape, r: usize) -> Option<f64> {
        let (side, rr) = (shape.side as u128, r as u128);
        let mut best: Option<f64> = None;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                let sq = squared_int(&shape.coords(i), &shape.coords(j));
                if in_closed_annulus(sq, rr, side) {
                    let s = values[i] + values[j];
                    best = Some(best.map_or(s, |b: f64| b.max(s)));
                }
            }
        }
        best
    }

    #[test]
    fn centering_values() {
        // sqrt(2d) ln N - 3/(2 sqrt(2d)) ln ln N, evaluated term by term
        let ln = 1024f64.ln();
        let d2 = 2.0 * ln - 0.75 * ln.ln();
        let d1 = 2f64.sqrt() * ln - 1.5 / 2f64.sqrt() * ln.ln();
        assert!((m_n(1024, 2).unwrap() - d2).abs() < 1e-12);
        assert!((m_n(1024, 1).unwrap() - d1).abs() < 1e-12);
        assert!((m_n(1024, 2).unwrap() - 12.410_889).abs() < 1e-5);
        assert!((m_n(1024, 1).unwrap() - 7.749_067).abs() < 1e-5);
        assert!(m_n(3, 2).unwrap().is_finite());
        assert!(matches!(m_n(2, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_field() {
        let f = field(2, 3, vec![1.5; 64]);
        let m = max_stat(&f);
        assert_eq!(m.max_value, 1.5);
        assert_eq!(m.argmax, LatticePoint::origin(2));
        assert_eq!(restricted_pair_max(&f, 2).unwrap().value, 3.0);
    }

    #[test]
    fn centered_and_shift() {
        let spec = FieldSpec::mbrw(2, 5).unwrap();
        let f = crate::samplers::sample_mbrw(&spec, 11, false).unwrap();
        let m = max_stat(&f);
        assert!((m.centered + m_n(32, 2).unwrap() - m.max_value).abs() < 1e-12);
        let mut g = f.clone();
        g.values.iter_mut().for_each(|v| *v += 0.75);
        let mg = max_stat(&g);
        assert_eq!(mg.argmax, m.argmax);
        assert!((mg.max_value - m.max_value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_annulus() {
        let f = field(2, 3, vec![0.0; 64]);
        assert!(matches!(restricted_pair_max(&f, 8), Err(Error::Domain(_))));
        assert!(matches!(restricted_pair_max(&f, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn pair_max_random_8x8() {
        let mut r = rng::stream(5, &[]);
        let mut v = vec![0.0; 64];
        rng::fill_normal(&mut r, &mut v, 1.0);
        let shape = Shape::new(2, 8);
        let got = restricted_pair_max_values(&v, shape, 2).unwrap();
        assert_eq!(Some(got.value), brute_pair_max(&v, shape, 2));
        let d = distance(&got.pair.0, &got.pair.1);
        assert!((2.0..=4.0).contains(&d));
    }

    #[test]
    fn near_max_extremes() {
        let mut r = rng::stream(6, &[]);
        let mut v = vec![0.0; 16];
        rng::fill_normal(&mut r, &mut v, 1.0);
        // N = 16 in d = 1 with r = 3: 3 < |u - v| < 16/3, i.e. distances 4 and 5
        let f = SampledField {
            spec: FieldSpec::mbrw(1, 4).unwrap(),
            values: v,
            seed: 0,
            levels: None,
        };
        let all = near_max_pairs(&f, 3, 1e6).unwrap();
        assert_eq!(all.pair_count, (16 - 4) + (16 - 5));
        let none = near_max_pairs(&f, 3, -1e6).unwrap();
        assert_eq!(none.pair_count, 0);
        assert!(none.examples.is_empty());

        // 16x16, r = 3: 9 < |u - v|^2 < (16/3)^2
        let g = field(2, 4, vec![0.0; 256]);
        let rep = near_max_pairs(&g, 3, 1e6).unwrap();
        let mut want = 0u64;
        let shape = Shape::new(2, 16);
        for i in 0..256 {
            for j in i + 1..256 {
                let sq = squared_int(&shape.coords(i), &shape.coords(j));
                if 9 < sq && sq * 9 < 256 {
                    want += 1;
                }
            }
        }
        assert_eq!(rep.pair_count, want);
        assert!(want > 0);
        for (u, v) in &rep.examples {
            let d = distance(u, v);
            assert!(d > 3.0 && d < 16.0 / 3.0);
        }
    }

    #[test]
    fn dm_vanishes_at_center() {
        let c = 2.0 * 16f64.ln();
        let f = field(2, 4, vec![c; 256]);
        assert!(derivative_martingale(&f, None).unwrap().z.abs() < 1e-12);
    }

    #[test]
    fn dm_four_points_by_hand() {
        // d = 1, N = 4: s = sqrt(2) ln 4 - phi, term = s e^{-sqrt(2) s}
        let vals = vec![0.0, 1.0, -0.5, 2.0];
        let f = field(1, 2, vals.clone());
        let c = 2f64.sqrt();
        let want: f64 = vals
            .iter()
            .map(|p| {
                let s = c * 4f64.ln() - p;
                s * (-c * s).exp()
            })
            .sum();
        let got = derivative_martingale(&f, None).unwrap().z;
        assert!((got - want).abs() < 1e-14 * want.abs());
    }

    #[test]
    fn dm_additive_over_partition() {
        let spec = FieldSpec::mbrw(2, 4).unwrap();
        let f = crate::samplers::sample_mbrw(&spec, 3, false).unwrap();
        let whole = derivative_martingale(&f, None).unwrap().z;
        let quads = [(0, 0), (0, 8), (8, 0), (8, 8)];
        let parts: f64 = quads
            .iter()
            .map(|&(a, b)| {
                let reg = Region::Box {
                    lo: vec![a, b],
                    hi: vec![a + 8, b + 8],
                };
                derivative_martingale(&f, Some(&reg)).unwrap().z
            })
            .sum();
        assert!((whole - parts).abs() <= 1e-9 * whole.abs());
        let all = Region::Indices((0..256).collect());
        assert_eq!(derivative_martingale(&f, Some(&all)).unwrap().z, whole);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn pair_max_equals_brute_force(
            seed in any::<u64>(), d in 1usize..3, n in 2u32..6, r in 1usize..4
        ) {
            let n = if d == 2 { n.min(4) } else { n };
            let shape = Shape::new(d, 1 << n);
            let mut v = vec![0.0; shape.len()];
            rng::fill_normal(&mut rng::stream(seed, &[]), &mut v, 1.0);
            let brute = brute_pair_max(&v, shape, r);
            match restricted_pair_max_values(&v, shape, r) {
                Ok(s) => prop_assert_eq!(Some(s.value), brute),
                Err(_) => prop_assert_eq!(brute, None),
            }
        }
    }
}
