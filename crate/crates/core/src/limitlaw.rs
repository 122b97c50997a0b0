//! Limit-law machinery: empirical distributions with Lévy and one-sided
//! distances, the `G*` construction, the Gumbel mixture and tail fitting.

use rand::Rng as _;
use serde::Serialize;

use crate::approx::{ReferenceField, TailRow};
use crate::covariance::{build_dense, cholesky, CholeskyFactor};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::stats::{compensated_sum, linear_fit};

/// Sorted sample with right-continuous ECDF.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("empirical distribution needs at least one sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("samples must be finite"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{x_i <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// `#{x_i < x} / n`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.len() as f64
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// Linear-interpolated quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        crate::stats::quantile_sorted(&self.sorted, p)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn shifted(&self, s: f64) -> Self {
        Self {
            sorted: self.sorted.iter().map(|v| v + s).collect(),
        }
    }
}

const LEVY_TOL: f64 = 1e-12;

/// Smallest `delta` in `[0, 1]` with `ok(delta)`, for a monotone predicate.
fn bisect_delta(ok: impl Fn(f64) -> bool) -> f64 {
    if ok(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > LEVY_TOL {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `F_b(y) <= F_a(y + delta) + delta` for every `y`; the sup of the left side
/// minus the right is attained at the atoms of `b`.
fn dominated_within(a: &EmpiricalDistribution, b: &EmpiricalDistribution, delta: f64) -> bool {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut ia = 0;
    let s = &b.sorted;
    let mut j = 0;
    while j < s.len() {
        let y = s[j];
        while j < s.len() && s[j] == y {
            j += 1;
        }
        let fb = j as f64 / nb;
        let x = y + delta;
        while ia < a.sorted.len() && a.sorted[ia] <= x {
            ia += 1;
        }
        if fb > ia as f64 / na + delta + 1e-15 {
            return false;
        }
    }
    true
}

/// One-sided distance `inf { delta : a((x, inf)) <= b((x - delta, inf)) + delta for all x }`.
///
/// Zero exactly when `a` is stochastically dominated by `b`.
pub fn one_sided_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    bisect_delta(|d| dominated_within(a, b, d))
}

/// Lévy distance between two ECDFs, the larger of the two one-sided distances.
pub fn levy_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    one_sided_distance(a, b).max(one_sided_distance(b, a))
}

/// Lévy distance between an ECDF and a continuous non-decreasing CDF `g`.
pub fn levy_to_cdf(e: &EmpiricalDistribution, g: impl Fn(f64) -> f64) -> f64 {
    let n = e.len() as f64;
    let s = &e.sorted;
    let ok = |delta: f64| {
        let mut k = 0;
        while k < s.len() {
            let x = s[k];
            let below = k as f64 / n;
            while k < s.len() && s[k] == x {
                k += 1;
            }
            let at = k as f64 / n;
            // G(x) <= F(x + delta) + delta, tightest just left of each atom
            if g(x - delta) > below + delta + 1e-15 {
                return false;
            }
            // F(x - delta) - delta <= G(x), tightest at each atom shifted right
            if at - delta > g(x + delta) + 1e-15 {
                return false;
            }
        }
        true
    };
    bisect_delta(ok)
}

/// `P(Y >= x) = ((gamma + x) / gamma) e^{-sqrt(2d) x}`, `x >= 0`.
pub fn y_survival(x: f64, gamma: f64, d: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let c = (2.0 * d as f64).sqrt();
    (gamma + x) / gamma * (-c * x).exp()
}

fn check_gamma(gamma: f64, d: usize) -> Result<()> {
    let c = (2.0 * d as f64).sqrt();
    if !(gamma > 1.0 / c) || !gamma.is_finite() {
        return Err(Error::domain(format!(
            "gamma must exceed 1/sqrt(2d) = {:.6}, got {gamma}",
            1.0 / c
        )));
    }
    Ok(())
}

/// The `x >= 0` with `y_survival(x) = u`, by bisection.
pub fn y_quantile(u: f64, gamma: f64, d: usize) -> Result<f64> {
    check_gamma(gamma, d)?;
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::input(format!("survival level must lie in (0, 1], got {u}")));
    }
    if u == 1.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while y_survival(hi, gamma, d) > u {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if y_survival(mid, gamma, d) > u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn draw_y(r: &mut rng::Rng, gamma: f64, d: usize) -> Result<f64> {
    // 1 - U lies in (0, 1]
    let u = 1.0 - r.gen::<f64>();
    y_quantile(u, gamma, d)
}

/// One draw of `Y` by inverse transform.
pub fn sample_y(gamma: f64, d: usize, seed: u64) -> Result<f64> {
    check_gamma(gamma, d)?;
    draw_y(&mut rng::stream(seed, &[tag::Y]), gamma, d)
}

/// Parameters of the `G*` construction over `R = (KL)^d` coarse points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GStarParams {
    pub d: usize,
    pub k: u32,
    pub l: u32,
    pub beta_star: f64,
    pub gamma: f64,
    pub coarse: ReferenceField,
}

impl GStarParams {
    pub fn new(d: usize, k: u32, l: u32, beta_star: f64, gamma: f64) -> Self {
        Self {
            d,
            k,
            l,
            beta_star,
            gamma,
            coarse: ReferenceField::Mbrw,
        }
    }

    /// `max(1/sqrt(2d) + 0.1, log log log(KL))`.
    pub fn default_gamma(d: usize, k: u32, l: u32) -> f64 {
        let c = (2.0 * d as f64).sqrt();
        let kl = (1u64 << (k + l)) as f64;
        let lll = kl.ln().ln().ln();
        let floor = 1.0 / c + 0.1;
        if lll.is_nan() {
            floor
        } else {
            floor.max(lll)
        }
    }

    pub fn kl(&self) -> usize {
        1 << (self.k + self.l)
    }

    /// `R = (KL)^d`.
    pub fn points(&self) -> usize {
        self.kl().pow(self.d as u32)
    }

    /// `P(rho = 1) = beta* gamma e^{-sqrt(2d) gamma}`.
    pub fn activation_probability(&self) -> f64 {
        let c = (2.0 * self.d as f64).sqrt();
        self.beta_star * self.gamma * (-c * self.gamma).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if !(self.beta_star > 0.0 && self.beta_star.is_finite()) {
            return Err(Error::domain("beta* must be positive"));
        }
        check_gamma(self.gamma, self.d)?;
        let p = self.activation_probability();
        if p > 1.0 {
            return Err(Error::domain(format!(
                "activation probability beta* gamma e^(-sqrt(2d) gamma) = {p} exceeds 1"
            )));
        }
        if self.points() > crate::covariance::DEFAULT_DENSE_CAP {
            return Err(Error::Capacity {
                requested: self.points(),
                cap: crate::covariance::DEFAULT_DENSE_CAP,
            });
        }
        Ok(())
    }
}

/// Random ingredients of one `G*` draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GStarParts {
    /// Coarse field `Z_i`.
    pub z: Vec<f64>,
    pub rho: Vec<bool>,
    /// `Y_i` for active `i`, zero elsewhere.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GStarDraw {
    /// `max_{rho_i = 1} G_i`, or 0 when no `rho_i` is 1.
    pub value: f64,
    pub empty: bool,
    pub active_count: usize,
    /// Derivative martingale of the coarse field,
    /// `sum_i S_i e^{-sqrt(2d) S_i}` with `S_i = sqrt(2d) log KL - Z_i`.
    pub dm_proxy: f64,
}

/// `G*` sampler with the coarse covariance factored once.
pub struct GStarSampler {
    params: GStarParams,
    factor: Option<CholeskyFactor>,
}

impl GStarSampler {
    pub fn new(params: &GStarParams) -> Result<Self> {
        params.validate()?;
        let exp = params.k + params.l;
        let factor = if exp == 0 {
            None
        } else {
            let o = params.coarse.oracle(params.d, exp);
            let pts: Vec<_> = o.shape().points().collect();
            Some(cholesky(&build_dense(o.as_ref(), &pts)?)?)
        };
        Ok(Self {
            params: params.clone(),
            factor,
        })
    }

    pub fn params(&self) -> &GStarParams {
        &self.params
    }

    pub fn parts(&self, seed: u64) -> GStarParts {
        let p = &self.params;
        let r_pts = p.points();
        let mut r = rng::stream(seed, &[tag::GSTAR]);
        let z = match &self.factor {
            Some(f) => {
                let mut g = vec![0.0; r_pts];
                rng::fill_normal(&mut r, &mut g, 1.0);
                f.mul_vec(&g)
            }
            None => vec![0.0],
        };
        let q = p.activation_probability();
        let rho: Vec<bool> = (0..r_pts).map(|_| r.gen::<f64>() < q).collect();
        let y = rho
            .iter()
            .map(|&on| {
                if on {
                    draw_y(&mut r, p.gamma, p.d).expect("gamma validated")
                } else {
                    0.0
                }
            })
            .collect();
        GStarParts { z, rho, y }
    }

    /// `G* = max_{rho_i = 1} (Y_i + gamma + Z_i - sqrt(2d) log KL)`.
    pub fn evaluate(&self, parts: &GStarParts) -> GStarDraw {
        let p = &self.params;
        let c = (2.0 * p.d as f64).sqrt();
        let top = c * (p.kl() as f64).ln();
        let mut best: Option<f64> = None;
        let mut active = 0;
        for i in 0..parts.z.len() {
            if parts.rho[i] {
                active += 1;
                let g = parts.y[i] + p.gamma + parts.z[i] - top;
                best = Some(best.map_or(g, |b: f64| b.max(g)));
            }
        }
        let dm_proxy = compensated_sum(parts.z.iter().map(|&zi| {
            let s = top - zi;
            s * (-c * s).exp()
        }));
        GStarDraw {
            value: best.unwrap_or(0.0),
            empty: best.is_none(),
            active_count: active,
            dm_proxy,
        }
    }

    pub fn draw(&self, seed: u64) -> GStarDraw {
        self.evaluate(&self.parts(seed))
    }
}

pub fn sample_gstar(params: &GStarParams, seed: u64) -> Result<GStarDraw> {
    Ok(GStarSampler::new(params)?.draw(seed))
}

/// `x -> E exp(-beta* Z e^{-sqrt(2d) x})` over an empirical law of `Z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GumbelMixture {
    pub beta_star: f64,
    pub d: usize,
    pub z_samples: EmpiricalDistribution,
}

impl GumbelMixture {
    pub fn new(beta_star: f64, d: usize, z_samples: EmpiricalDistribution) -> Result<Self> {
        if !(beta_star > 0.0 && beta_star.is_finite()) {
            return Err(Error::domain("beta* must be positive"));
        }
        if d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        Ok(Self {
            beta_star,
            d,
            z_samples,
        })
    }

    fn rate(&self) -> f64 {
        (2.0 * self.d as f64).sqrt()
    }

    /// Fraction of non-positive `Z` samples.
    pub fn negative_z_fraction(&self) -> f64 {
        self.z_samples.samples().iter().filter(|&&z| z <= 0.0).count() as f64
            / self.z_samples.len() as f64
    }

    /// The mixture restricted to the strictly positive `Z` samples.
    pub fn positive_part(&self) -> Result<Self> {
        let pos: Vec<f64> = self
            .z_samples
            .samples()
            .iter()
            .copied()
            .filter(|&z| z > 0.0)
            .collect();
        if pos.is_empty() {
            return Err(Error::InsufficientData("no positive Z samples".into()));
        }
        Self::new(self.beta_star, self.d, EmpiricalDistribution::new(pos)?)
    }

    /// Mean of `exp(-beta* z e^{-sqrt(2d) x})`. Negative samples contribute
    /// values above 1 and are not clamped.
    pub fn cdf(&self, x: f64) -> f64 {
        let e = self.beta_star * (-self.rate() * x).exp();
        let s = compensated_sum(self.z_samples.samples().iter().map(|&z| (-e * z).exp()));
        s / self.z_samples.len() as f64
    }

    /// Quantile of the positive-sample mixture by bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::input(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let pos = self.positive_part()?;
        let c = self.rate();
        // bracket from the extreme single-atom Gumbels
        let loc = |z: f64| (self.beta_star * z).ln() / c;
        let g = |q: f64| -(-q.ln()).ln() / c;
        let zs = pos.z_samples.samples();
        let mut lo = loc(zs[0]) + g(p) - 1.0;
        let mut hi = loc(zs[zs.len() - 1]) + g(p) + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if pos.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Draws from the positive-sample mixture: `(log(beta* Z) - log E) / sqrt(2d)`
    /// with `Z` resampled and `E` standard exponential.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<f64>> {
        let pos = self.positive_part()?;
        let zs = pos.z_samples.samples();
        let mut r = rng::stream(seed, &[tag::GSTAR, 1]);
        let c = self.rate();
        Ok((0..count)
            .map(|_| {
                let z = zs[r.gen_range(0..zs.len())];
                let e = -(1.0 - r.gen::<f64>()).ln();
                ((self.beta_star * z).ln() - e.ln()) / c
            })
            .collect())
    }
}

pub fn gumbel_mixture_cdf(m: &GumbelMixture, x: f64) -> f64 {
    m.cdf(x)
}

/// Result of [`compare_to_limit`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitComparison {
    pub beta_star: f64,
    /// Median of the sample minus median of the mixture.
    pub shift: f64,
    pub levy_after_shift: f64,
    pub n_samples: usize,
    pub negative_z_fraction: f64,
}

const GRID_POINTS: usize = 2048;

/// Median-matches the sample to the mixture, then measures the Lévy distance
/// to the mixture CDF (tabulated on a grid, linear in between).
///
/// The mixture uses the strictly positive `Z` samples; the fraction of the
/// rest is reported.
pub fn compare_to_limit(
    empirical: &EmpiricalDistribution,
    m: &GumbelMixture,
) -> Result<LimitComparison> {
    let pos = m.positive_part()?;
    let shift = empirical.median() - pos.quantile(0.5)?;
    let moved = empirical.shifted(-shift);
    let s = moved.samples();
    let (lo, hi) = (s[0] - 2.0, s[s.len() - 1] + 2.0);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let table: Vec<f64> = (0..GRID_POINTS).map(|i| pos.cdf(lo + step * i as f64)).collect();
    let g = |x: f64| {
        if x <= lo || x >= hi {
            return pos.cdf(x);
        }
        let t = (x - lo) / step;
        let i = (t.floor() as usize).min(GRID_POINTS - 2);
        let f = t - i as f64;
        table[i] + f * (table[i + 1] - table[i])
    };
    Ok(LimitComparison {
        beta_star: m.beta_star,
        shift,
        levy_after_shift: levy_to_cdf(&moved, g),
        n_samples: empirical.len(),
        negative_z_fraction: m.negative_z_fraction(),
    })
}

/// Inverse-variance weighted `beta*` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaFit {
    pub estimate: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Weighted mean of `beta_hat(z)` over rows with `z` in `window` and
/// `p_hat > 0`.
pub fn fit_beta_star(rows: &[TailRow], window: (f64, f64)) -> Result<BetaFit> {
    let use_rows: Vec<&TailRow> = rows
        .iter()
        .filter(|r| r.z >= window.0 && r.z <= window.1 && r.p_hat > 0.0 && r.stderr > 0.0)
        .collect();
    if use_rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable tail points in [{}, {}], need 2",
            use_rows.len(),
            window.0,
            window.1
        )));
    }
    let w: Vec<f64> = use_rows.iter().map(|r| 1.0 / (r.stderr * r.stderr)).collect();
    let sw: f64 = w.iter().sum();
    let est = use_rows.iter().zip(&w).map(|(r, w)| r.beta_hat * w).sum::<f64>() / sw;
    Ok(BetaFit {
        estimate: est,
        stderr: (1.0 / sw).sqrt(),
        points: use_rows.len(),
    })
}

/// Least-squares slope of `log(P(X > z) / z)` against `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Spacing of the `z` grid used by [`tail_slope`].
pub const TAIL_GRID_STEP: f64 = 0.25;

/// Unweighted fit on exact `(z, P(X > z))` pairs.
pub fn tail_slope_points(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(z, p)| p > 0.0 && z > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable tail points, need 3",
            usable.len()
        )));
    }
    let x: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let y: Vec<f64> = usable.iter().map(|&(z, p)| (p / z).ln()).collect();
    let f = linear_fit(&x, &y, None);
    Ok(SlopeFit {
        slope: f.slope,
        stderr: f.slope_se,
        points: usable.len(),
    })
}

/// Slope of `log(P_hat(X > z) / z)` on the grid `z_lo, z_lo + 0.25, .., z_hi`,
/// weighted by the binomial variance of `log P_hat`.
pub fn tail_slope(ecdf: &EmpiricalDistribution, window: (f64, f64)) -> Result<SlopeFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::input("tail window must satisfy 0 < z_lo < z_hi"));
    }
    let n = ecdf.len() as f64;
    let steps = ((hi - lo) / TAIL_GRID_STEP + 1e-9).floor() as usize;
    let (mut x, mut y, mut w) = (vec![], vec![], vec![]);
    for i in 0..=steps {
        let z = lo + TAIL_GRID_STEP * i as f64;
        let p = ecdf.survival(z);
        if p > 0.0 && p < 1.0 {
            x.push(z);
            y.push((p / z).ln());
            w.push(n * p / (1.0 - p));
        }
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} grid points in [{lo}, {hi}] have tail data, need 3",
            x.len()
        )));
    }
    let f = linear_fit(&x, &y, Some(&w));
    Ok(SlopeFit {
        slope: f.slope,
        stderr: f.slope_se,
        points: x.len(),
    })
}
