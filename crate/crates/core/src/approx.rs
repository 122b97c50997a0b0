//! The four-component approximation field
//! `xi = coarse + bottom + mbrw + correction`, its fine field, backbone
//! paths and barrier-event counts.
//!
//! Notation: `N = 2^n`, `KL = 2^(k+l)`, `K'L' = 2^(k'+l')`,
//! `N_bar = N / KL`. The coarse component is one reference field on
//! `V_KL`, held constant on each `N_bar`-box. The bottom component is an
//! independent reference field on `V_K'L'` in every `K'L'`-box. The MBRW
//! component sums levels `j = k'+l' ..= n-k-l` at the corner of each
//! `K'L'`-box, with independent variables in every `N_bar`-box. The
//! correction is `a(v_bar) phi_j`, one standard normal per `K'L'`-box.

use std::f64::consts::LN_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covariance::{
    build_dense, cholesky, BrwOracle, CholeskyFactor, CovarianceOracle, MbrwOracle,
    DEFAULT_DENSE_CAP,
};
use crate::error::{Error, Result};
use crate::extremes::m_n;
use crate::lattice::{LatticePoint, Shape};
use crate::rng::{self, tag};
use crate::samplers::{map_replicas, write_field_record, DEFAULT_POINT_CAP};

/// Reference field used for the coarse and bottom components and for
/// variance matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceField {
    Mbrw,
    Brw,
}

impl ReferenceField {
    pub fn oracle(self, d: usize, n: u32) -> Box<dyn CovarianceOracle> {
        match self {
            ReferenceField::Mbrw => Box::new(MbrwOracle { d, n }),
            ReferenceField::Brw => Box::new(BrwOracle { d, n }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReferenceField::Mbrw => "mbrw",
            ReferenceField::Brw => "brw",
        }
    }
}

impl std::str::FromStr for ReferenceField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbrw" => Ok(ReferenceField::Mbrw),
            "brw" => Ok(ReferenceField::Brw),
            _ => Err(Error::input(format!("unknown reference field {s:?}"))),
        }
    }
}

/// Default assumption constant; with an MBRW reference the correction
/// variance is `4 alpha - 2 log 2`, so `alpha` must be at least `log 2 / 2`.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Scale parameters of the approximation field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiParams {
    pub d: usize,
    pub n: u32,
    pub k: u32,
    pub l: u32,
    pub kp: u32,
    pub lp: u32,
    pub alpha: f64,
    pub reference: ReferenceField,
}

impl XiParams {
    pub fn new(d: usize, n: u32, k: u32, l: u32, kp: u32, lp: u32) -> Self {
        Self {
            d,
            n,
            k,
            l,
            kp,
            lp,
            alpha: DEFAULT_ALPHA,
            reference: ReferenceField::Mbrw,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn side(&self) -> usize {
        1 << self.n
    }

    /// `KL`.
    pub fn coarse_side(&self) -> usize {
        1 << (self.k + self.l)
    }

    /// `K'L'`.
    pub fn bottom_side(&self) -> usize {
        1 << (self.kp + self.lp)
    }

    /// `N_bar = N / KL`.
    pub fn box_side(&self) -> usize {
        self.side() / self.coarse_side()
    }

    /// `n_bar` with `N_bar = 2^n_bar`.
    pub fn n_bar(&self) -> u32 {
        self.n - self.k - self.l
    }

    /// Finest and coarsest MBRW level.
    pub fn level_range(&self) -> (u32, u32) {
        (self.kp + self.lp, self.n_bar())
    }

    /// Number of MBRW levels; the backbone runs over `t = 0 ..= n_star`.
    pub fn n_star(&self) -> usize {
        let (lo, hi) = self.level_range();
        (hi - lo + 1) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if self.n >= usize::BITS / 2 {
            return Err(Error::input(format!("n = {} is too large", self.n)));
        }
        if self.k + self.l > self.n {
            return Err(Error::input("KL must divide N"));
        }
        if self.kp + self.lp > self.n - self.k - self.l {
            return Err(Error::input(
                "scale ordering needs k' + l' <= n - k - l (empty MBRW level range)",
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input("alpha must be finite and non-negative"));
        }
        let points = |side: usize| side.checked_pow(self.d as u32).unwrap_or(usize::MAX);
        if points(self.side()) > DEFAULT_POINT_CAP {
            return Err(Error::Capacity {
                requested: points(self.side()),
                cap: DEFAULT_POINT_CAP,
            });
        }
        for side in [self.coarse_side(), self.bottom_side()] {
            if points(side) > DEFAULT_DENSE_CAP {
                return Err(Error::Capacity {
                    requested: points(side),
                    cap: DEFAULT_DENSE_CAP,
                });
            }
        }
        Ok(())
    }
}

/// Variance of one MBRW level variable at level `j`.
fn level_sd(d: usize, j: u32) -> f64 {
    (LN_2 * 0.5f64.powi((d as u32 * j) as i32)).sqrt()
}

/// Covariance matrix of the reference field on `V_side`; a one-point box is
/// the zero field.
fn reference_factor(p: &XiParams, exp: u32) -> Result<Option<CholeskyFactor>> {
    if exp == 0 {
        return Ok(None);
    }
    let oracle = p.reference.oracle(p.d, exp);
    let pts: Vec<_> = oracle.shape().points().collect();
    Ok(Some(cholesky(&build_dense(oracle.as_ref(), &pts)?)?))
}

fn reference_var(p: &XiParams, exp: u32, x: &[usize]) -> f64 {
    if exp == 0 {
        0.0
    } else {
        p.reference.oracle(p.d, exp).variance(x)
    }
}

/// Per-class correction standard deviations `a(v_bar)`, `v_bar in V_K'L'`.
///
/// `a(v_bar)^2` is the average over `v = v_bar mod K'L'` of
/// `Var phi_N(v) + 4 alpha - Var phi_KL(w_i) - Var phi_K'L'(v_bar) - n_star log 2`.
pub fn correction_sd(p: &XiParams) -> Result<Vec<f64>> {
    p.validate()?;
    let full = Shape::new(p.d, p.side());
    let classes = Shape::new(p.d, p.bottom_side());
    let top = p.reference.oracle(p.d, p.n);
    let (kl_exp, klp_exp) = (p.k + p.l, p.kp + p.lp);
    let mbrw_var = p.n_star() as f64 * LN_2;
    let (lbar, nbar) = (p.bottom_side(), p.box_side());
    let mut sums = vec![0.0; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    let mut c = vec![0; p.d];
    let mut w = vec![0; p.d];
    let mut vb = vec![0; p.d];
    for i in 0..full.len() {
        full.coords_into(i, &mut c);
        for a in 0..p.d {
            w[a] = c[a] / nbar;
            vb[a] = c[a] % lbar;
        }
        let cls = classes.index(&vb);
        sums[cls] += top.variance(&c) + 4.0 * p.alpha
            - reference_var(p, kl_exp, &w)
            - reference_var(p, klp_exp, &vb)
            - mbrw_var;
        counts[cls] += 1;
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(class, (s, &k))| {
            let value = s / k as f64;
            if value < -1e-12 {
                Err(Error::NegativeCorrectionVariance { class, value })
            } else {
                Ok(value.max(0.0).sqrt())
            }
        })
        .collect()
}

/// Largest `|a(v_bar) - a(u_bar)|` over classes with `||v_bar - u_bar||_inf <= L'`.
pub fn correction_continuity(p: &XiParams) -> Result<f64> {
    let a = correction_sd(p)?;
    let classes = Shape::new(p.d, p.bottom_side());
    let lp = 1usize << p.lp;
    let mut worst: f64 = 0.0;
    for i in 0..classes.len() {
        let ci = classes.coords(i);
        for j in 0..classes.len() {
            let cj = classes.coords(j);
            if ci.iter().zip(&cj).all(|(x, y)| x.abs_diff(*y) <= lp) {
                worst = worst.max((a[i] - a[j]).abs());
            }
        }
    }
    Ok(worst)
}

/// Exact covariance of the approximation field.
pub struct XiOracle {
    params: XiParams,
    coarse: Option<Box<dyn CovarianceOracle>>,
    bottom: Option<Box<dyn CovarianceOracle>>,
    a: Vec<f64>,
}

impl XiOracle {
    pub fn new(params: &XiParams) -> Result<Self> {
        let a = correction_sd(params)?;
        let (kl, klp) = (params.k + params.l, params.kp + params.lp);
        Ok(Self {
            params: params.clone(),
            coarse: (kl > 0).then(|| params.reference.oracle(params.d, kl)),
            bottom: (klp > 0).then(|| params.reference.oracle(params.d, klp)),
            a,
        })
    }

    /// Covariance of the MBRW component at two `K'L'` corners of one `N_bar`-box.
    fn mbrw_cov(&self, x: &[usize], y: &[usize]) -> f64 {
        let p = &self.params;
        let (lo, hi) = p.level_range();
        let torus = MbrwOracle { d: p.d, n: p.n };
        (lo..=hi)
            .map(|j| {
                let shared = if p.k + p.l == 0 {
                    torus.shared_boxes(j, x, y)
                } else {
                    let w = 1usize << j;
                    x.iter()
                        .zip(y)
                        .map(|(a, b)| w.saturating_sub(a.abs_diff(*b)) as u64)
                        .product()
                };
                LN_2 * 0.5f64.powi((p.d as u32 * j) as i32) * shared as f64
            })
            .sum()
    }
}

impl CovarianceOracle for XiOracle {
    fn shape(&self) -> Shape {
        Shape::new(self.params.d, self.params.side())
    }

    fn cov(&self, x: &[usize], y: &[usize]) -> f64 {
        let p = &self.params;
        let (nbar, lbar) = (p.box_side(), p.bottom_side());
        let wx: Vec<usize> = x.iter().map(|c| c / nbar).collect();
        let wy: Vec<usize> = y.iter().map(|c| c / nbar).collect();
        let mut total = self.coarse.as_ref().map_or(0.0, |o| o.cov(&wx, &wy));
        let bx: Vec<usize> = x.iter().map(|c| c / lbar).collect();
        let by: Vec<usize> = y.iter().map(|c| c / lbar).collect();
        if bx == by {
            let vx: Vec<usize> = x.iter().map(|c| c % lbar).collect();
            let vy: Vec<usize> = y.iter().map(|c| c % lbar).collect();
            total += self.bottom.as_ref().map_or(0.0, |o| o.cov(&vx, &vy));
            let classes = Shape::new(p.d, lbar);
            total += self.a[classes.index(&vx)] * self.a[classes.index(&vy)];
        }
        if wx == wy {
            let cx: Vec<usize> = bx.iter().map(|b| b * lbar).collect();
            let cy: Vec<usize> = by.iter().map(|b| b * lbar).collect();
            total += self.mbrw_cov(&cx, &cy);
        }
        total
    }
}

/// Component codes of the approximation-field export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Component {
    Total = 0,
    Coarse = 1,
    Bottom = 2,
    Mbrw = 3,
    Correction = 4,
    Fine = 5,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Total,
        Component::Coarse,
        Component::Bottom,
        Component::Mbrw,
        Component::Correction,
        Component::Fine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Total => "total",
            Component::Coarse => "coarse",
            Component::Bottom => "bottom",
            Component::Mbrw => "mbrw",
            Component::Correction => "correction",
            Component::Fine => "fine",
        }
    }
}

/// A realization of the approximation field with all components retained.
#[derive(Debug, Clone)]
pub struct XiField {
    pub params: XiParams,
    pub seed: u64,
    pub coarse: Vec<f64>,
    pub bottom: Vec<f64>,
    pub mbrw: Vec<f64>,
    pub correction: Vec<f64>,
    /// `bottom + mbrw + correction`.
    pub fine: Vec<f64>,
    /// `coarse + fine`.
    pub total: Vec<f64>,
    /// `levels[t][b]`: level increment `t` (coarsest first) at `K'L'`-box `b`.
    pub levels: Option<Vec<Vec<f64>>>,
}

impl XiField {
    pub fn shape(&self) -> Shape {
        Shape::new(self.params.d, self.params.side())
    }

    pub fn component(&self, c: Component) -> &[f64] {
        match c {
            Component::Total => &self.total,
            Component::Coarse => &self.coarse,
            Component::Bottom => &self.bottom,
            Component::Mbrw => &self.mbrw,
            Component::Correction => &self.correction,
            Component::Fine => &self.fine,
        }
    }

    /// Writes one field record per component, each followed by its code byte
    /// after the header.
    pub fn write_binary<W: Write>(&self, mut out: W, components: &[Component]) -> Result<()> {
        for &c in components {
            write_field_record(
                &mut out,
                self.params.d,
                self.params.side(),
                self.seed,
                Some(c as u8),
                self.component(c),
            )?;
        }
        Ok(())
    }
}

/// Prepared sampler for one parameter set (reference factors computed once).
pub struct XiSampler {
    params: XiParams,
    coarse: Option<CholeskyFactor>,
    bottom: Option<CholeskyFactor>,
    a: Vec<f64>,
}

impl XiSampler {
    pub fn new(params: &XiParams) -> Result<Self> {
        params.validate()?;
        let a = correction_sd(params)?;
        Ok(Self {
            params: params.clone(),
            coarse: reference_factor(params, params.k + params.l)?,
            bottom: reference_factor(params, params.kp + params.lp)?,
            a,
        })
    }

    pub fn params(&self) -> &XiParams {
        &self.params
    }

    pub fn correction_sd(&self) -> &[f64] {
        &self.a
    }

    pub fn build(&self, seed: u64) -> XiField {
        self.build_with(seed, true)
    }

    pub fn build_with(&self, seed: u64, retain_levels: bool) -> XiField {
        let p = &self.params;
        let d = p.d;
        let full = Shape::new(d, p.side());
        let (nbar, lbar) = (p.box_side(), p.bottom_side());
        let coarse_grid = Shape::new(d, p.coarse_side());
        let bottom_grid = Shape::new(d, p.side() / lbar);
        let local = Shape::new(d, lbar);

        let coarse_vals = match &self.coarse {
            Some(f) => {
                let mut g = vec![0.0; f.size()];
                rng::fill_normal(&mut rng::stream(seed, &[tag::XI_COARSE]), &mut g, 1.0);
                f.mul_vec(&g)
            }
            None => vec![0.0],
        };

        let mut g = vec![0.0; local.len()];
        let bottom_vals: Vec<Vec<f64>> = (0..bottom_grid.len())
            .map(|b| match &self.bottom {
                Some(f) => {
                    let mut r = rng::stream(seed, &[tag::XI_BOTTOM, b as u64]);
                    rng::fill_normal(&mut r, &mut g, 1.0);
                    f.mul_vec(&g)
                }
                None => vec![0.0],
            })
            .collect();

        let mut phi = vec![0.0; bottom_grid.len()];
        rng::fill_normal(&mut rng::stream(seed, &[tag::XI_CORRECTION]), &mut phi, 1.0);

        let levels = self.mbrw_levels(seed, bottom_grid);
        let mbrw_at_box: Vec<f64> = (0..bottom_grid.len())
            .map(|b| levels.iter().fold(0.0, |acc, l| acc + l[b]))
            .collect();

        let len = full.len();
        let (mut coarse, mut bottom, mut mbrw, mut correction) =
            (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        let (mut fine, mut total) = (vec![0.0; len], vec![0.0; len]);
        let mut c = vec![0; d];
        let (mut w, mut b, mut v) = (vec![0; d], vec![0; d], vec![0; d]);
        for i in 0..len {
            full.coords_into(i, &mut c);
            for a in 0..d {
                w[a] = c[a] / nbar;
                b[a] = c[a] / lbar;
                v[a] = c[a] % lbar;
            }
            let bi = bottom_grid.index(&b);
            let vi = local.index(&v);
            coarse[i] = coarse_vals[coarse_grid.index(&w).min(coarse_vals.len() - 1)];
            bottom[i] = bottom_vals[bi][vi.min(bottom_vals[bi].len() - 1)];
            mbrw[i] = mbrw_at_box[bi];
            correction[i] = self.a[vi] * phi[bi];
            fine[i] = bottom[i] + mbrw[i] + correction[i];
            total[i] = coarse[i] + fine[i];
        }
        XiField {
            params: p.clone(),
            seed,
            coarse,
            bottom,
            mbrw,
            correction,
            fine,
            total,
            levels: retain_levels.then_some(levels),
        }
    }

    /// MBRW level increments at every `K'L'` corner, coarsest level first.
    fn mbrw_levels(&self, seed: u64, bottom_grid: Shape) -> Vec<Vec<f64>> {
        let p = &self.params;
        let d = p.d;
        let (nbar, lbar) = (p.box_side(), p.bottom_side());
        let cyclic = p.k + p.l == 0;
        let boxes = Shape::new(d, p.coarse_side());
        let corners = Shape::new(d, nbar / lbar);
        let (lo, hi) = p.level_range();
        let mut out = Vec::with_capacity(p.n_star());
        let mut cc = vec![0; d];
        let mut bc = vec![0; d];
        let mut gc = vec![0; d];
        for j in (lo..=hi).rev() {
            let w = 1usize << j;
            let extent = nbar + w - 1;
            let noise_side = if cyclic { p.side() } else { extent };
            let mut level = vec![0.0; bottom_grid.len()];
            for bi in 0..boxes.len() {
                let mut noise = vec![0.0; noise_side.pow(d as u32)];
                let mut r = rng::stream(seed, &[tag::XI_MBRW, bi as u64, j as u64]);
                rng::fill_normal(&mut r, &mut noise, level_sd(d, j));
                let sat = SummedArea::new(d, extent, |q| {
                    // extended coordinate q is the corner q - (w - 1), wrapped on the torus
                    if cyclic {
                        let side = p.side();
                        q.iter()
                            .fold(0, |acc, &x| acc * side + (x + side - (w - 1)) % side)
                    } else {
                        q.iter().fold(0, |acc, &x| acc * extent + x)
                    }
                }, &noise);
                boxes.coords_into(bi, &mut bc);
                for ci in 0..corners.len() {
                    corners.coords_into(ci, &mut cc);
                    // boxes with corner in (v - w, v] occupy extended range [v, v + w)
                    let lo_q: Vec<usize> = cc.iter().map(|x| x * lbar).collect();
                    let s = sat.window(&lo_q, w);
                    for a in 0..d {
                        gc[a] = bc[a] * (nbar / lbar) + cc[a];
                    }
                    level[bottom_grid.index(&gc)] = s;
                }
            }
            out.push(level);
        }
        out
    }
}

/// d-dimensional inclusive prefix sums over an `extent^d` array.
struct SummedArea {
    d: usize,
    side: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(d: usize, extent: usize, label: impl Fn(&[usize]) -> usize, noise: &[f64]) -> Self {
        let side = extent + 1;
        let shape = Shape::new(d, side);
        let mut table = vec![0.0; shape.len()];
        let mut c = vec![0; d];
        let mut q = vec![0; d];
        for (i, slot) in table.iter_mut().enumerate() {
            shape.coords_into(i, &mut c);
            if c.iter().all(|&x| x > 0) {
                q.iter_mut().zip(&c).for_each(|(a, &b)| *a = b - 1);
                *slot = noise[label(&q)];
            }
        }
        for axis in 0..d {
            let stride = side.pow((d - 1 - axis) as u32);
            for i in 0..table.len() {
                if (i / stride) % side > 0 {
                    table[i] += table[i - stride];
                }
            }
        }
        Self { d, side, table }
    }

    /// Sum over the cube `[lo, lo + w)`.
    fn window(&self, lo: &[usize], w: usize) -> f64 {
        let shape = Shape::new(self.d, self.side);
        let mut c = vec![0; self.d];
        let mut s = 0.0;
        for mask in 0u32..(1 << self.d) {
            for a in 0..self.d {
                c[a] = lo[a] + if mask >> a & 1 == 1 { w } else { 0 };
            }
            let sign = if (self.d as u32 - mask.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * self.table[shape.index(&c)];
        }
        s
    }
}

/// Samples the approximation field.
pub fn build_xi(params: &XiParams, seed: u64) -> Result<XiField> {
    Ok(XiSampler::new(params)?.build(seed))
}

/// `xi - xi_coarse`.
pub fn fine_field(xi: &XiField) -> &[f64] {
    &xi.fine
}

/// Backbone path `X(t)`, `t = 0 ..= n_star`, at one `K'L'` corner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneDecomposition {
    pub v: LatticePoint,
    pub x: Vec<f64>,
}

fn backbone_at(levels: &[Vec<f64>], b: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(levels.len() + 1);
    let mut acc = 0.0;
    x.push(acc);
    for l in levels {
        acc += l[b];
        x.push(acc);
    }
    x
}

pub fn backbone(xi: &XiField, v: &LatticePoint) -> Result<BackboneDecomposition> {
    let p = &xi.params;
    v.validate(p.d, p.side())?;
    let lbar = p.bottom_side();
    if v.coords.iter().any(|c| c % lbar != 0) {
        return Err(Error::input(format!("{v} is not a corner of a {lbar}-box")));
    }
    let levels = xi
        .levels
        .as_ref()
        .ok_or_else(|| Error::State("MBRW levels were not retained".into()))?;
    let grid = Shape::new(p.d, p.side() / lbar);
    let b: Vec<usize> = v.coords.iter().map(|c| c / lbar).collect();
    Ok(BackboneDecomposition {
        v: v.clone(),
        x: backbone_at(levels, grid.index(&b)),
    })
}

/// Barrier-event counts aggregated over all `N_bar`-boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierCounts {
    pub z: f64,
    pub lambda: u64,
    pub gamma_count: u64,
    pub g_event: bool,
}

/// The straight and the bent barrier at integer times.
pub fn barriers(p: &XiParams, z: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_bar = p.n_bar();
    let m = m_n(p.box_side(), p.d)?;
    let slope = m / n_bar as f64;
    let ns = p.n_star();
    let straight: Vec<f64> = (0..=ns).map(|t| z + slope * t as f64).collect();
    let bent = straight
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let s = t.min(ns - t) as f64;
            let slack = if s > 0.0 { (10.0 * s.ln()).max(0.0) } else { 0.0 };
            b + slack + z.powf(1.0 / 20.0)
        })
        .collect();
    Ok((straight, bent))
}

/// Per-box maxima of the fine field over the `K'L'`-boxes, indexed like the
/// backbone grid.
pub fn fine_box_maxima(xi: &XiField, box_side: usize) -> Vec<f64> {
    let p = &xi.params;
    let full = xi.shape();
    let grid = Shape::new(p.d, p.side() / box_side);
    let mut out = vec![f64::NEG_INFINITY; grid.len()];
    let mut c = vec![0; p.d];
    for (i, &v) in xi.fine.iter().enumerate() {
        full.coords_into(i, &mut c);
        c.iter_mut().for_each(|x| *x /= box_side);
        let b = grid.index(&c);
        if v > out[b] {
            out[b] = v;
        }
    }
    out
}

/// Counts `Lambda` (straight barrier) and `Gamma` (bent barrier) over every
/// `K'L'` corner, and whether any backbone crosses the bent barrier.
pub fn count_barrier_events(xi: &XiField, z: f64) -> Result<BarrierCounts> {
    if !(z >= 1.0) {
        return Err(Error::domain(format!("barrier events need z >= 1, got {z}")));
    }
    let p = &xi.params;
    let levels = xi
        .levels
        .as_ref()
        .ok_or_else(|| Error::State("MBRW levels were not retained".into()))?;
    let (straight, bent) = barriers(p, z)?;
    let target = m_n(p.box_side(), p.d)? + z;
    let local_max = fine_box_maxima(xi, p.bottom_side());
    let mut counts = BarrierCounts {
        z,
        lambda: 0,
        gamma_count: 0,
        g_event: false,
    };
    for (b, &top) in local_max.iter().enumerate() {
        let x = backbone_at(levels, b);
        let below = |bar: &[f64]| x.iter().zip(bar).all(|(a, b)| a <= b);
        let under_bent = below(&bent);
        counts.g_event |= !under_bent;
        if top >= target {
            counts.lambda += below(&straight) as u64;
            counts.gamma_count += under_bent as u64;
        }
    }
    Ok(counts)
}

/// One row of the fine-field right-tail table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub z: f64,
    pub p_hat: f64,
    pub beta_hat: f64,
    pub stderr: f64,
    /// Number of box-samples.
    pub samples: usize,
    /// Whether `z` lies in `[1, sqrt(log N_bar)]`.
    pub in_regime: bool,
}

/// `beta_hat = p e^{sqrt(2d) z} / z`.
pub fn beta_hat(p: f64, z: f64, d: usize) -> f64 {
    p * ((2.0 * d as f64).sqrt() * z).exp() / z
}

/// Tail table from centered samples `max - m_N_bar`.
pub fn tail_table(centered: &[f64], z_grid: &[f64], d: usize, regime_top: f64) -> Vec<TailRow> {
    let n = centered.len();
    z_grid
        .iter()
        .map(|&z| {
            let hits = centered.iter().filter(|&&x| x >= z).count();
            let p = hits as f64 / n as f64;
            let se_p = (p * (1.0 - p) / n as f64).sqrt();
            TailRow {
                z,
                p_hat: p,
                beta_hat: beta_hat(p, z, d),
                stderr: beta_hat(se_p, z, d),
                samples: n,
                in_regime: (1.0..=regime_top).contains(&z),
            }
        })
        .collect()
}

/// Centered fine-field maxima `max_{B_i} xi^f - m_N_bar`, one per
/// `N_bar`-box, over `replicas` fields.
pub fn fine_box_samples(
    params: &XiParams,
    replicas: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    let sampler = XiSampler::new(params)?;
    let m = m_n(params.box_side(), params.d)?;
    let per = map_replicas(replicas, workers, |i| {
        let xi = sampler.build_with(rng::replica_seed(master_seed, i as u64), false);
        fine_box_maxima(&xi, params.box_side())
            .into_iter()
            .map(|v| v - m)
            .collect::<Vec<f64>>()
    })?;
    Ok(per.into_iter().flatten().collect())
}

/// Estimates `beta_hat(z) = p_hat(z) e^{sqrt(2d) z} / z` with
/// `p_hat(z) = P(max_{B_i} xi^f >= m_N_bar + z)`, pooling all `N_bar`-boxes.
///
/// Rows with `z` outside `[1, sqrt(log N_bar)]` are computed and flagged.
pub fn fine_right_tail(
    params: &XiParams,
    z_grid: &[f64],
    replicas: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<TailRow>> {
    if z_grid.is_empty() {
        return Err(Error::input("empty z grid"));
    }
    let samples = fine_box_samples(params, replicas, master_seed, workers)?;
    let top = (params.box_side() as f64).ln().sqrt();
    Ok(tail_table(&samples, z_grid, params.d, top))
}
