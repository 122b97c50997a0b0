//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line with the measured values and tolerances.
//!
//! The expensive MBRW run (d = 2, n = 9) is shared between criteria through a
//! `OnceLock`.

use std::f64::consts::LN_2;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use lcgf::approx::{backbone, fine_right_tail, Component, XiParams, XiSampler};
use lcgf::assumptions::{check_a1, check_torus};
use lcgf::covariance::{cholesky, find_minimal_w, mbrw_covariance, CovarianceOracle};
use lcgf::covariance::{BrwOracle, MbrwOracle, ClremOracle, build_dense, DEFAULT_W_TOLERANCE};
use lcgf::extremes::{argmax, derivative_martingale, m_n};
use lcgf::lattice::{FieldSpec, LatticePoint, Shape};
use lcgf::limitlaw::{
    compare_to_limit, levy_distance, tail_slope, EmpiricalDistribution, GStarParams, GStarSampler,
    GumbelMixture,
};
use lcgf::perturb::{mix_scale, perturbed_max, scaled_mix_field, shift_from_maxima, BoxPerturbation};
use lcgf::rng::replica_seed;
use lcgf::samplers::{map_replicas, read_field_record, sample_dense, sample_mbrw};
use lcgf::stats::{ks_two_sample, mean};

/// Prints a result line past the test harness's output capture.
fn report(id: u32, name: &str, pass: bool, detail: String, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "criterion {id:>2} [{name}] {verdict}: {detail} ({:.1}s)",
        started.elapsed().as_secs_f64()
    )
    .unwrap();
}

fn centered_max(values: &[f64], side: usize, d: usize) -> f64 {
    argmax(values).1 - m_n(side, d).unwrap()
}

/// Per-replica statistics of the MBRW field.
struct MbrwRun {
    centered: Vec<f64>,
    dm: Vec<f64>,
    /// `(base max, perturbed max at r = 8, perturbed max at r = 16)`.
    shift: Vec<(f64, f64, f64)>,
}

const SHIFT_REPLICAS: usize = 5000;

fn perturbation(r: usize) -> BoxPerturbation {
    BoxPerturbation::new(r, r, 1.0, 1.0)
}

fn mbrw_run(n: u32, replicas: usize, master: u64, with_shift: usize) -> MbrwRun {
    let spec = FieldSpec::mbrw(2, n).unwrap();
    let side = spec.side;
    let rows = map_replicas(replicas, 0, |i| {
        let seed = replica_seed(master, i as u64);
        let f = sample_mbrw(&spec, seed, false).unwrap();
        let top = argmax(&f.values).1;
        let z = derivative_martingale(&f, None).unwrap().z;
        let shift = (i < with_shift).then(|| {
            (
                top,
                perturbed_max(&f, &perturbation(8), seed).unwrap(),
                perturbed_max(&f, &perturbation(16), seed).unwrap(),
            )
        });
        (top - m_n(side, 2).unwrap(), z, shift)
    })
    .unwrap();
    MbrwRun {
        centered: rows.iter().map(|r| r.0).collect(),
        dm: rows.iter().map(|r| r.1).collect(),
        shift: rows.iter().filter_map(|r| r.2).collect(),
    }
}

const MASTER: u64 = 0x5EED_0001;

fn run_n9() -> &'static MbrwRun {
    static RUN: OnceLock<MbrwRun> = OnceLock::new();
    RUN.get_or_init(|| mbrw_run(9, 20_000, MASTER, SHIFT_REPLICAS))
}

fn run_small(n: u32) -> &'static MbrwRun {
    static R7: OnceLock<MbrwRun> = OnceLock::new();
    static R8: OnceLock<MbrwRun> = OnceLock::new();
    let cell = if n == 7 { &R7 } else { &R8 };
    cell.get_or_init(|| mbrw_run(n, 2000, MASTER + n as u64, 0))
}

/// Counts torus-identified level boxes containing both points by enumeration.
fn mbrw_brute(d: usize, n: u32, x: &[usize], y: &[usize]) -> f64 {
    let side = 1usize << n;
    let corners = Shape::new(d, side);
    let mut total = 0.0;
    for j in 0..=n {
        let w = 1usize << j;
        let inside = |p: &[usize], c: &[usize]| {
            p.iter().zip(c).all(|(&a, &b)| (a + side - b) % side < w)
        };
        let shared = (0..corners.len())
            .filter(|&i| {
                let c = corners.coords(i);
                inside(x, &c) && inside(y, &c)
            })
            .count();
        total += LN_2 * shared as f64 / (w as f64).powi(d as i32);
    }
    total
}

#[test]
fn criterion_01_mbrw_covariance_exact() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (d, top) in [(1usize, 4u32), (2, 3)] {
        for n in 0..=top {
            let spec = FieldSpec::mbrw(d, n).unwrap();
            let shape = spec.shape();
            for i in 0..shape.len() {
                for j in 0..shape.len() {
                    let (x, y) = (shape.point(i), shape.point(j));
                    let got = mbrw_covariance(&spec, &x, &y).unwrap();
                    worst = worst.max((got - mbrw_brute(d, n, &x.coords, &y.coords)).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-12;
    report(1, "MBRW covariance exactness", pass, format!("max |closed - brute| = {worst:.2e}, tol 1e-12"), t);
    assert!(pass);
}

#[test]
fn criterion_02_torus_log_correlation_bounded() {
    let t = Instant::now();
    let mut detail = vec![];
    let mut pass = true;
    for d in [1usize, 2] {
        let sup: Vec<f64> = (4..=10)
            .map(|n| {
                let o = MbrwOracle { d, n };
                check_torus(&o, 500).unwrap().estimate
            })
            .collect();
        let growth = sup[6] - sup[4];
        pass &= growth <= 0.1;
        detail.push(format!(
            "d={d} sup over n=4..10 {:?}, sup(10) - sup(8) = {growth:.4} (tol 0.1)",
            sup.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ));
    }
    report(2, "torus log-correlation bounded", pass, detail.join("; "), t);
    assert!(pass);
}

#[test]
fn criterion_03_centering() {
    let t = Instant::now();
    let m: Vec<f64> = [mean(&run_small(7).centered), mean(&run_small(8).centered), {
        let c = &run_n9().centered[..2000];
        mean(c)
    }]
    .to_vec();
    let steps = [(m[1] - m[0]).abs(), (m[2] - m[1]).abs()];
    let pass = steps.iter().all(|&s| s < 0.5) && m.iter().all(|v| v.abs() < 3.0);
    report(
        3,
        "centering",
        pass,
        format!(
            "mean centered max n=7,8,9: {:.4}, {:.4}, {:.4}; steps {:.4}, {:.4} (tol < 0.5); |mean| < 3; time includes the shared n=9 run reused by 4, 5, 6, 11",
            m[0], m[1], m[2], steps[0], steps[1]
        ),
        t,
    );
    assert!(pass);
}

fn mbrw_d1_centered(n: u32, replicas: usize) -> Vec<f64> {
    let spec = FieldSpec::mbrw(1, n).unwrap();
    map_replicas(replicas, 0, |i| {
        let f = sample_mbrw(&spec, replica_seed(MASTER + 100, i as u64), false).unwrap();
        centered_max(&f.values, spec.side, 1)
    })
    .unwrap()
}

#[test]
fn criterion_04_right_tail_exponent() {
    let t = Instant::now();
    let window = (1.0, 3.5);
    let s2 = tail_slope(&EmpiricalDistribution::new(run_n9().centered.clone()).unwrap(), window).unwrap();
    let s1 = tail_slope(&EmpiricalDistribution::new(mbrw_d1_centered(14, 20_000)).unwrap(), window).unwrap();
    let pass2 = (-2.3..=-1.7).contains(&s2.slope);
    let pass1 = (-1.7..=-1.15).contains(&s1.slope);
    report(
        4,
        "right-tail exponent",
        pass2 && pass1,
        format!(
            "d=2 n=9 slope {:.4} +- {:.4} in [-2.3, -1.7]: {}; d=1 n=14 slope {:.4} +- {:.4} in [-1.7, -1.15]: {}; window [1, 3.5], 2e4 replicas",
            s2.slope, s2.stderr, pass2, s1.slope, s1.stderr, pass1
        ),
        t,
    );
    assert!(pass2 && pass1);
}

#[test]
fn criterion_05_left_tail_decay() {
    let t = Instant::now();
    let c = &run_n9().centered;
    let n = c.len() as f64;
    let probs: Vec<f64> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&l| c.iter().filter(|&&x| x <= -l).count() as f64 / n)
        .collect();
    let positive = probs.iter().all(|&p| p > 0.0);
    let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    // delta-method variance of log p_hat
    let var: Vec<f64> = probs.iter().map(|&p| (1.0 - p) / (n * p)).collect();
    let decreasing = positive && logs[0] > logs[1] && logs[1] > logs[2];
    let second = logs[0] - 2.0 * logs[1] + logs[2];
    let se = (var[0] + 4.0 * var[1] + var[2]).sqrt();
    let concave = positive && second <= 2.0 * se;
    let pass = decreasing && concave;
    report(
        5,
        "left-tail decay",
        pass,
        format!(
            "P(M - m_N <= -l) for l=1,2,3: {:.3e}, {:.3e}, {:.3e}; decreasing {decreasing}; second difference of log {second:.4} <= 2 SE = {:.4}",
            probs[0], probs[1], probs[2], 2.0 * se
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_06_shift_lemma() {
    let t = Instant::now();
    let rows = &run_n9().shift;
    let base: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let p8: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let p16: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let c8 = shift_from_maxima(512, 2, &perturbation(8), &base, &p8);
    let c16 = shift_from_maxima(512, 2, &perturbation(16), &base, &p16);
    let close = c16.gap_error() <= 0.4;
    // flat: within two combined standard errors
    let tol = 2.0 * (c8.stderr.powi(2) + c16.stderr.powi(2)).sqrt();
    let trend = c16.gap_error() <= c8.gap_error() + tol;
    let pass = close && trend;
    report(
        6,
        "shift lemma",
        pass,
        format!(
            "{} replicas; r=16 mean gap {:.4} +- {:.4} vs 2.0 (tol 0.4); error r=8 {:.4}, r=16 {:.4} (flat tol {tol:.4})",
            c16.replicas, c16.mean_gap, c16.stderr, c8.gap_error(), c16.gap_error()
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_07_scaling_identity() {
    let t = Instant::now();
    let spec = FieldSpec::mbrw(1, 6).unwrap();
    let p = BoxPerturbation::new(2, 2, 1.0, 1.0);
    let a = mix_scale(&p, spec.side);
    let reps = 10_000;
    let pairs = map_replicas(reps, 0, |i| {
        let i = i as u64;
        let f = sample_mbrw(&spec, replica_seed(MASTER + 7, i), false).unwrap();
        let g = sample_mbrw(&spec, replica_seed(MASTER + 8, i), false).unwrap();
        let h = sample_mbrw(&spec, replica_seed(MASTER + 9, i), false).unwrap();
        let mixed = scaled_mix_field(&f, &g, &p).unwrap();
        (argmax(&mixed.values).1, a * argmax(&h.values).1)
    })
    .unwrap();
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ks = ks_two_sample(&x, &y);
    let pass = ks.p_value >= 0.01;
    report(
        7,
        "scaling identity",
        pass,
        format!("KS D = {:.4}, p = {:.4} (>= 0.01), a_N = {a:.4}, 1e4 replicas", ks.statistic, ks.p_value),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_08_fine_tail_flatness() {
    let t = Instant::now();
    let params = XiParams::new(2, 9, 1, 1, 2, 2);
    let per_field = (params.side() / params.box_side()).pow(2);
    let fields = 20_000usize.div_ceil(per_field);
    let grid: Vec<f64> = (0..=8).map(|i| 2.0 + 0.25 * i as f64).collect();
    let rows = fine_right_tail(&params, &grid, fields, MASTER + 11, 0).unwrap();
    let betas: Vec<f64> = rows.iter().map(|r| r.beta_hat).collect();
    let positive = betas.iter().all(|b| *b > 0.0 && b.is_finite());
    let (lo, hi) = betas.iter().fold((f64::MAX, f64::MIN), |(l, h), &b| (l.min(b), h.max(b)));
    let ratio = hi / lo;
    let pass = positive && ratio <= 2.0;
    report(
        8,
        "fine-field tail flatness",
        pass,
        format!(
            "{} box-samples; beta_hat over z=2..4: [{}]; max/min {ratio:.3} (<= 2); all positive {positive}",
            rows[0].samples,
            betas.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join(", ")
        ),
        t,
    );
    assert!(pass);
}

/// Independent recount of the barrier events from exported data.
fn brute_counts(
    params: &XiParams,
    fine: &[f64],
    backbones: &[(Vec<usize>, Vec<f64>)],
    z: f64,
) -> (u64, u64) {
    let d = params.d;
    let nbar_side = params.side() >> (params.k + params.l);
    let nbar = nbar_side.trailing_zeros() as f64;
    let c = (2.0 * d as f64).sqrt();
    let ln = (nbar_side as f64).ln();
    let m = c * ln - 3.0 / (2.0 * c) * ln.ln();
    let box_side = 1usize << (params.kp + params.lp);
    let shape = Shape::new(d, params.side());
    let inner = Shape::new(d, box_side);
    let (mut lambda, mut gamma) = (0, 0);
    for (v, x) in backbones {
        let ns = x.len() - 1;
        let local = (0..inner.len())
            .map(|k| {
                let off = inner.coords(k);
                let p: Vec<usize> = v.iter().zip(&off).map(|(a, b)| a + b).collect();
                fine[shape.index(&p)]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if local < m + z {
            continue;
        }
        let straight = |t: usize| z + m / nbar * t as f64;
        let slack = |t: usize| {
            let s = t.min(ns - t);
            let l = if s == 0 { 0.0 } else { 10.0 * (s as f64).ln() };
            l.max(0.0) + z.powf(0.05)
        };
        if (0..=ns).all(|t| x[t] <= straight(t)) {
            lambda += 1;
        }
        if (0..=ns).all(|t| x[t] <= straight(t) + slack(t)) {
            gamma += 1;
        }
    }
    (lambda, gamma)
}

#[test]
fn criterion_09_barrier_containment() {
    let t = Instant::now();
    // N_bar = 16 (n_bar = 4), K'L' = 2
    let params = XiParams::new(2, 6, 1, 1, 1, 0);
    let sampler = XiSampler::new(&params).unwrap();
    let box_side = params.bottom_side();
    let corners: Vec<Vec<usize>> = Shape::new(2, params.side() / box_side)
        .points()
        .map(|p| p.coords.iter().map(|c| c * box_side).collect())
        .collect();
    let mut contained = true;
    let mut mismatches = 0;
    let mut nonzero = 0;
    for i in 0..1000u64 {
        let xi = sampler.build_with(replica_seed(MASTER + 9, i), true);
        let mut buf = Vec::new();
        xi.write_binary(&mut buf, &[Component::Fine]).unwrap();
        let fine = read_field_record(&buf[..], true).unwrap().values;
        let backbones: Vec<(Vec<usize>, Vec<f64>)> = corners
            .iter()
            .map(|c| (c.clone(), backbone(&xi, &LatticePoint::new(c.clone())).unwrap().x))
            .collect();
        for z in [1.0, 1.5, 2.5] {
            let counts = lcgf::approx::count_barrier_events(&xi, z).unwrap();
            contained &= counts.lambda <= counts.gamma_count;
            if brute_counts(&params, &fine, &backbones, z) != (counts.lambda, counts.gamma_count) {
                mismatches += 1;
            }
            nonzero += (counts.gamma_count > 0) as u32;
        }
    }
    let pass = contained && mismatches == 0;
    report(
        9,
        "barrier containment and recount",
        pass,
        format!(
            "1000 fields x 3 levels: Lambda <= Gamma always {contained}; brute-force mismatches {mismatches} (exact); {nonzero} non-empty Gamma"
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_10_gstar_mixture() {
    let t = Instant::now();
    // R = (KL)^d = 64 with d = 2, KL = 8
    let params = GStarParams::new(2, 2, 1, 1.0, 3.0);
    let sampler = GStarSampler::new(&params).unwrap();
    let draws: Vec<_> = (0..10_000u64).map(|i| sampler.draw(replica_seed(MASTER + 10, i))).collect();
    let values = EmpiricalDistribution::new(draws.iter().map(|d| d.value).collect()).unwrap();
    let z = EmpiricalDistribution::new(draws.iter().map(|d| d.dm_proxy).collect()).unwrap();
    let mixture = GumbelMixture::new(1.0, 2, z).unwrap();
    let cmp = compare_to_limit(&values, &mixture).unwrap();
    let empty = draws.iter().filter(|d| d.empty).count() as f64 / draws.len() as f64;
    let pass = cmp.levy_after_shift <= 0.05;
    report(
        10,
        "G*/mixture self-consistency",
        pass,
        format!(
            "Levy after shift {:.4} (<= 0.05), shift {:.4}, empty fraction {empty:.4}, non-positive Z fraction {:.4}",
            cmp.levy_after_shift, cmp.shift, cmp.negative_z_fraction
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_11_derivative_martingale_trend() {
    let t = Instant::now();
    let ed = |v: &[f64]| EmpiricalDistribution::new(v.to_vec()).unwrap();
    let z7 = ed(&run_small(7).dm);
    let z8 = ed(&run_small(8).dm);
    let z9 = ed(&run_n9().dm[..2000]);
    let (a, b) = (levy_distance(&z7, &z8), levy_distance(&z8, &z9));
    let pass = a > b || (a <= 0.1 && b <= 0.1);
    report(
        11,
        "derivative-martingale trend",
        pass,
        format!("Levy(Z_7, Z_8) = {a:.4}, Levy(Z_8, Z_9) = {b:.4}; first larger or both <= 0.1"),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_12_clrem() {
    let t = Instant::now();
    let mut means = vec![];
    let mut factored = true;
    let mut ws = vec![];
    for points in [128usize, 256, 512] {
        let w = find_minimal_w(points, DEFAULT_W_TOLERANCE).unwrap() + 0.01;
        ws.push(w);
        let o = ClremOracle { points, w };
        let pts: Vec<LatticePoint> = o.shape().points().collect();
        let factor = match cholesky(&build_dense(&o, &pts).unwrap()) {
            Ok(f) => f,
            Err(_) => {
                factored = false;
                break;
            }
        };
        let c = map_replicas(5000, 0, |i| {
            let v = sample_dense(&factor, replica_seed(MASTER + 12, i as u64));
            centered_max(&v, points, 1)
        })
        .unwrap();
        means.push(mean(&c));
    }
    let pass = factored && means.len() == 3 && means.windows(2).all(|w| (w[1] - w[0]).abs() < 0.5);
    report(
        12,
        "CLREM centering",
        pass,
        format!(
            "W = {:?}; Cholesky ok {factored}; mean centered max N=128,256,512: {:?} (steps < 0.5)",
            ws.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>(),
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn criterion_13_negative_control() {
    let t = Instant::now();
    let delta = 0.25;
    let est = |o: &dyn CovarianceOracle| check_a1(o, delta, 1 << 16).unwrap().estimate;
    let brw: Vec<f64> = (4..=8).map(|n| est(&BrwOracle { d: 1, n })).collect();
    let mbrw: Vec<f64> = (4..=8).map(|n| est(&MbrwOracle { d: 1, n })).collect();
    let grows = brw.windows(2).all(|w| w[1] - w[0] >= 0.5 * LN_2);
    let (lo, hi) = mbrw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let pass = grows && hi - lo < 0.2;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    report(
        13,
        "negative control",
        pass,
        format!(
            "d=1, delta={delta}: BRW alpha_hat n=4..8 [{}] (steps >= {:.4}); MBRW [{}] band {:.4} (< 0.2)",
            fmt(&brw),
            0.5 * LN_2,
            fmt(&mbrw),
            hi - lo
        ),
        t,
    );
    assert!(pass);
}
