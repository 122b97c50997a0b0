//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use lcgf::approx::{
    count_barrier_events, fine_right_tail, Component, ReferenceField, TailRow, XiParams, XiSampler,
};
use lcgf::assumptions::{
    check_a0, check_a1, check_torus, estimate_fgh, AssumptionReport, Check, FghGrids,
};
use lcgf::covariance::{build_dense, find_minimal_w, oracle_for, CovarianceOracle};
use lcgf::extremes::near_max_pairs;
use lcgf::lattice::{FieldSpec, LatticePoint};
use lcgf::limitlaw::{
    compare_to_limit, fit_beta_star, tail_slope, EmpiricalDistribution, GStarParams, GStarSampler,
    GumbelMixture, TAIL_GRID_STEP,
};
use lcgf::rng::replica_seed;
use lcgf::samplers::{map_replicas, run_replicas, ReplicaOutput, ReplicaPlan, Sampler, Statistic};
use lcgf::{Error, Result};

use crate::cli::*;
use crate::output::{self, Header};

pub fn run(cmd: Command, header: &Header) -> Result<()> {
    match cmd {
        Command::Cov(a) => cov(a, header),
        Command::Sample(a) => sample(a, header),
        Command::CheckAssumptions(a) => check_assumptions(a, header),
        Command::MaxStats(a) => max_stats(a, header),
        Command::Tail(a) => tail(a, header),
        Command::Pairs(a) => pairs(a, header),
        Command::Loc(a) => loc(a, header),
        Command::Dmart(a) => dmart(a, header),
        Command::Xi(a) => xi(a, header),
        Command::Barrier(a) => barrier(a, header),
        Command::Gstar(a) => gstar(a, header),
        Command::LimitCompare(a) => limit_compare(a, header),
        Command::ClremW(a) => clrem_w(a, header),
    }
}

fn field_spec(f: &FieldArgs) -> Result<FieldSpec> {
    match f.family {
        FamilyArg::Brw => FieldSpec::brw(f.dim, f.n),
        FamilyArg::Mbrw => FieldSpec::mbrw(f.dim, f.n),
        FamilyArg::Clrem => FieldSpec::clrem(f.points, f.w),
    }
}

fn xi_params(a: &XiParamArgs) -> XiParams {
    let mut p = XiParams::new(a.dim, a.n, a.k, a.l, a.kp, a.lp).with_alpha(a.alpha);
    p.reference = match a.reference {
        ReferenceArg::Mbrw => ReferenceField::Mbrw,
        ReferenceArg::Brw => ReferenceField::Brw,
    };
    p
}

fn component(c: ComponentArg) -> Component {
    match c {
        ComponentArg::Total => Component::Total,
        ComponentArg::Coarse => Component::Coarse,
        ComponentArg::Bottom => Component::Bottom,
        ComponentArg::Mbrw => Component::Mbrw,
        ComponentArg::Correction => Component::Correction,
        ComponentArg::Fine => Component::Fine,
    }
}

fn coord_columns(prefix: &str, d: usize) -> String {
    (0..d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn coords(p: &LatticePoint) -> String {
    p.coords.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn finish(mut out: Box<dyn Write>) -> Result<()> {
    out.flush()?;
    Ok(())
}

fn cov(a: CovArgs, header: &Header) -> Result<()> {
    let spec = field_spec(&a.field)?;
    let oracle = oracle_for(&spec)?;
    if let Some(path) = &a.export {
        let points: Vec<LatticePoint> = spec.shape().points().collect();
        let m = build_dense(oracle.as_ref(), &points)?;
        let out = match a.format {
            MatrixFormat::Bin => {
                let mut out = output::binary(Some(path), header)?;
                m.write_binary(spec.d as u32, &mut out)?;
                out
            }
            MatrixFormat::Csv => {
                let mut out = output::text(Some(path), header)?;
                m.write_csv(&mut out)?;
                out
            }
        };
        return finish(out);
    }
    let (x, y) = match a.field.family {
        FamilyArg::Clrem => {
            let need = |v: Option<usize>, name: &str| {
                v.ok_or_else(|| Error::Input(format!("clrem queries need --{name}")))
            };
            (vec![need(a.k, "k")?], vec![need(a.l, "l")?])
        }
        _ => {
            let need = |v: Option<Vec<usize>>, name: &str| {
                v.ok_or_else(|| Error::Input(format!("lattice queries need --{name}")))
            };
            (need(a.x, "x")?, need(a.y, "y")?)
        }
    };
    let value = oracle.covariance(&LatticePoint::new(x), &LatticePoint::new(y))?;
    let mut out = output::text(a.io.output.as_deref(), header)?;
    writeln!(out, "cov\n{value}")?;
    finish(out)
}

fn sample(a: SampleArgs, header: &Header) -> Result<()> {
    let spec = field_spec(&a.field)?;
    let field = Sampler::new(&spec)?.sample(a.run.seed)?;
    let out = match a.format {
        MatrixFormat::Bin => {
            let mut out = output::binary(a.io.output.as_deref(), header)?;
            field.write_binary(&mut out)?;
            out
        }
        MatrixFormat::Csv => {
            let mut out = output::text(a.io.output.as_deref(), header)?;
            field.write_csv(&mut out)?;
            out
        }
    };
    finish(out)
}

fn check_assumptions(a: CheckArgs, header: &Header) -> Result<()> {
    let spec = field_spec(&a.field)?;
    let oracle = oracle_for(&spec)?;
    let mut report = AssumptionReport {
        alpha0: Some(check_a0(oracle.as_ref(), a.pair_budget)?),
        torus: Some(check_torus(oracle.as_ref(), a.pair_budget)?),
        ..Default::default()
    };
    for &delta in &a.delta {
        report
            .alpha_delta
            .insert(delta.to_string(), check_a1(oracle.as_ref(), delta, a.pair_budget)?);
    }
    if let Some(ns) = &a.fgh_n {
        let oracles = ns
            .iter()
            .map(|&n| {
                let mut f = a.field.clone();
                f.n = n;
                oracle_for(&field_spec(&f)?)
            })
            .collect::<Result<Vec<Arc<dyn CovarianceOracle>>>>()?;
        let d = spec.d;
        let x: Vec<Vec<f64>> = a.x_grid.iter().map(|&t| vec![t; d]).collect();
        let h_pairs = x.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        let grids = FghGrids { x, l: a.micro, h_pairs };
        report.fgh = Some(estimate_fgh(&oracles, &grids)?);
    }
    match a.format {
        ReportFormat::Json => output::json(a.io.output.as_deref(), header, ("checks", report.to_json())),
        ReportFormat::Text => {
            let mut out = output::text(a.io.output.as_deref(), header)?;
            writeln!(out, "assumption,estimate,pairs_probed,exhaustive")?;
            let mut row = |name: String, c: &Check| {
                writeln!(out, "{name},{},{},{}", c.estimate, c.pairs_probed, c.exhaustive)
            };
            if let Some(c) = &report.alpha0 {
                row("A0".into(), c)?;
            }
            for (delta, c) in &report.alpha_delta {
                row(format!("A1(delta={delta})"), c)?;
            }
            if let Some(c) = &report.torus {
                row("torus".into(), c)?;
            }
            if let Some(f) = &report.fgh {
                writeln!(
                    out,
                    "# fgh: reproduction_error = {}, stability f = {}, g = {}, h = {}",
                    f.reproduction_error, f.stability_f, f.stability_g, f.stability_h
                )?;
            }
            for w in report.worst_pairs().iter().take(lcgf::assumptions::WITNESSES) {
                writeln!(out, "# witness u = {} v = {} dev = {}", w.u, w.v, w.dev)?;
            }
            finish(out)
        }
    }
}

fn replica_values(
    base: &ReplicaFieldArgs,
    statistic: Statistic,
) -> Result<(FieldSpec, Vec<ReplicaOutput>)> {
    let spec = field_spec(&base.field)?;
    let plan = ReplicaPlan::new(spec.clone(), base.replicas, base.run.seed);
    let outs = run_replicas(&plan, &statistic, base.run.workers)?;
    Ok((spec, outs))
}

fn centered_maxima(base: &ReplicaFieldArgs) -> Result<Vec<(f64, f64)>> {
    let (_, outs) = replica_values(base, Statistic::Max)?;
    Ok(outs
        .into_iter()
        .map(|o| match o {
            ReplicaOutput::Max(m) => (m.max_value, m.centered),
            _ => unreachable!("max statistic"),
        })
        .collect())
}

fn max_stats(a: ReplicaFieldArgs, header: &Header) -> Result<()> {
    let rows = centered_maxima(&a)?;
    let mut out = output::text(a.io.output.as_deref(), header)?;
    writeln!(out, "replica,max,centered")?;
    for (i, (m, c)) in rows.iter().enumerate() {
        writeln!(out, "{i},{m},{c}")?;
    }
    finish(out)
}

fn tail(a: TailArgs, header: &Header) -> Result<()> {
    let centered: Vec<f64> = centered_maxima(&a.base)?.into_iter().map(|r| r.1).collect();
    let ecdf = EmpiricalDistribution::new(centered)?;
    let fit = tail_slope(&ecdf, (a.z_lo, a.z_hi))?;
    let mut out = output::text(a.base.io.output.as_deref(), header)?;
    writeln!(out, "z,log_tail_over_z")?;
    let steps = ((a.z_hi - a.z_lo) / TAIL_GRID_STEP + 1e-9).floor() as usize;
    for i in 0..=steps {
        let z = a.z_lo + TAIL_GRID_STEP * i as f64;
        let p = ecdf.survival(z);
        if p > 0.0 && p < 1.0 {
            writeln!(out, "{z},{}", (p / z).ln())?;
        }
    }
    writeln!(out, "# slope = {}", fit.slope)?;
    writeln!(out, "# slope_stderr = {}", fit.stderr)?;
    writeln!(out, "# points = {}", fit.points)?;
    finish(out)
}

fn pairs(a: PairsArgs, header: &Header) -> Result<()> {
    let (spec, outs) = replica_values(&a.base, Statistic::PairMax { r: a.r })?;
    let mut out = output::text(a.base.io.output.as_deref(), header)?;
    writeln!(
        out,
        "replica,value,{},{}",
        coord_columns("u", spec.d),
        coord_columns("v", spec.d)
    )?;
    for (i, o) in outs.iter().enumerate() {
        let ReplicaOutput::PairMax(p) = o else {
            unreachable!("pair-max statistic")
        };
        writeln!(out, "{i},{},{},{}", p.value, coords(&p.pair.0), coords(&p.pair.1))?;
    }
    finish(out)
}

fn loc(a: LocArgs, header: &Header) -> Result<()> {
    let spec = field_spec(&a.base.field)?;
    let sampler = Sampler::new(&spec)?;
    let seed = a.base.run.seed;
    let reports = map_replicas(a.base.replicas, a.base.run.workers, |i| {
        near_max_pairs(&sampler.sample(replica_seed(seed, i as u64))?, a.r, a.c)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut out = output::text(a.base.io.output.as_deref(), header)?;
    writeln!(out, "replica,threshold,pair_count")?;
    for (i, r) in reports.iter().enumerate() {
        writeln!(out, "{i},{},{}", r.threshold, r.pair_count)?;
    }
    finish(out)
}

fn dmart(a: ReplicaFieldArgs, header: &Header) -> Result<()> {
    let (_, outs) = replica_values(&a, Statistic::DerivativeMartingale)?;
    let mut out = output::text(a.io.output.as_deref(), header)?;
    writeln!(out, "replica,z_n")?;
    for (i, o) in outs.iter().enumerate() {
        let ReplicaOutput::DerivativeMartingale(z) = o else {
            unreachable!("derivative-martingale statistic")
        };
        writeln!(out, "{i},{z}")?;
    }
    finish(out)
}

fn write_tail_rows<W: Write + ?Sized>(out: &mut W, rows: &[TailRow]) -> Result<()> {
    writeln!(out, "z,p_hat,beta_hat,stderr,samples,in_regime")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.z, r.p_hat, r.beta_hat, r.stderr, r.samples, r.in_regime
        )?;
    }
    Ok(())
}

fn xi(a: XiArgs, header: &Header) -> Result<()> {
    let params = xi_params(&a.params);
    match a.mode {
        XiMode::Export => {
            let xi = XiSampler::new(&params)?.build_with(a.run.seed, false);
            let comps: Vec<Component> = a.components.iter().map(|&c| component(c)).collect();
            let mut out = output::binary(a.io.output.as_deref(), header)?;
            xi.write_binary(&mut out, &comps)?;
            finish(out)
        }
        XiMode::Tail => {
            let rows = fine_right_tail(&params, &a.z_grid, a.replicas, a.run.seed, a.run.workers)?;
            let mut out = output::text(a.io.output.as_deref(), header)?;
            write_tail_rows(&mut out, &rows)?;
            finish(out)
        }
    }
}

fn barrier(a: BarrierArgs, header: &Header) -> Result<()> {
    let params = xi_params(&a.params);
    let sampler = XiSampler::new(&params)?;
    let seed = a.run.seed;
    let per = map_replicas(a.replicas, a.run.workers, |i| {
        let xi = sampler.build(replica_seed(seed, i as u64));
        a.z.iter().map(|&z| count_barrier_events(&xi, z)).collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut out = output::text(a.io.output.as_deref(), header)?;
    writeln!(out, "replica,z,lambda,gamma,g_event")?;
    for (i, counts) in per.iter().enumerate() {
        for c in counts {
            writeln!(out, "{i},{},{},{},{}", c.z, c.lambda, c.gamma_count, c.g_event as u8)?;
        }
    }
    finish(out)
}

fn gstar(a: GstarArgs, header: &Header) -> Result<()> {
    let gamma = a.gamma.unwrap_or_else(|| GStarParams::default_gamma(a.dim, a.k, a.l));
    let params = GStarParams::new(a.dim, a.k, a.l, a.beta_star, gamma);
    let sampler = GStarSampler::new(&params)?;
    let seed = a.run.seed;
    let draws = map_replicas(a.draws, a.run.workers, |i| sampler.draw(replica_seed(seed, i as u64)))?;
    match a.mode {
        GstarMode::Draws => {
            let mut out = output::text(a.io.output.as_deref(), header)?;
            writeln!(out, "draw,value,empty,active_count,dm_proxy")?;
            for (i, d) in draws.iter().enumerate() {
                writeln!(out, "{i},{},{},{},{}", d.value, d.empty as u8, d.active_count, d.dm_proxy)?;
            }
            finish(out)
        }
        GstarMode::Compare => {
            let values = EmpiricalDistribution::new(draws.iter().map(|d| d.value).collect())?;
            let z = EmpiricalDistribution::new(draws.iter().map(|d| d.dm_proxy).collect())?;
            let cmp = compare_to_limit(&values, &GumbelMixture::new(a.beta_star, a.dim, z)?)?;
            let empty = draws.iter().filter(|d| d.empty).count() as f64 / draws.len() as f64;
            let mut body = serde_json::to_value(&cmp).map_err(std::io::Error::from)?;
            body["empty_fraction"] = json!(empty);
            body["gamma"] = json!(gamma);
            output::json(a.io.output.as_deref(), header, ("comparison", body))
        }
    }
}

/// Reads numbers from a value-per-line file or a CSV column; `#` lines are skipped.
fn read_column(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let first: Vec<&str> = lines
        .peek()
        .ok_or_else(|| Error::InsufficientData(format!("{} has no data", path.display())))?
        .split(',')
        .collect();
    let has_header = first.iter().any(|f| f.trim().parse::<f64>().is_err());
    let index = match column {
        Some(name) => {
            if !has_header {
                return Err(Error::Input(format!("{} has no header row", path.display())));
            }
            first
                .iter()
                .position(|f| f.trim() == name)
                .ok_or_else(|| Error::Input(format!("no column {name:?} in {}", path.display())))?
        }
        None => first.len() - 1,
    };
    if has_header {
        lines.next();
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(index)
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::Input(format!("{}: bad value on data row {}", path.display(), i + 1))
                })
        })
        .collect()
}

fn read_tail_table(path: &Path) -> Result<Vec<TailRow>> {
    let col = |name: &str| read_column(path, Some(name));
    let (z, p, b, se, n, reg) = (
        col("z")?,
        col("p_hat")?,
        col("beta_hat")?,
        col("stderr")?,
        col("samples")?,
        fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .skip(1)
            .map(|l| l.trim_end().ends_with("true"))
            .collect::<Vec<bool>>(),
    );
    Ok((0..z.len())
        .map(|i| TailRow {
            z: z[i],
            p_hat: p[i],
            beta_hat: b[i],
            stderr: se[i],
            samples: n[i] as usize,
            in_regime: reg[i],
        })
        .collect())
}

fn limit_compare(a: LimitCompareArgs, header: &Header) -> Result<()> {
    let samples = EmpiricalDistribution::new(read_column(&a.samples, a.column.as_deref())?)?;
    let z = EmpiricalDistribution::new(read_column(&a.z_samples, a.z_column.as_deref())?)?;
    let mut extra = BTreeMap::new();
    let beta = match (a.beta_star, &a.tail_table) {
        (Some(b), None) => b,
        (None, Some(path)) => {
            let [lo, hi] = a.window[..] else {
                return Err(Error::Input("--window needs two values lo,hi".into()));
            };
            let fit = fit_beta_star(&read_tail_table(path)?, (lo, hi))?;
            extra.insert("beta_fit", serde_json::to_value(fit).map_err(std::io::Error::from)?);
            fit.estimate
        }
        _ => return Err(Error::Input("give exactly one of --beta-star and --tail-table".into())),
    };
    let cmp = compare_to_limit(&samples, &GumbelMixture::new(beta, a.dim, z)?)?;
    let mut body = serde_json::to_value(&cmp).map_err(std::io::Error::from)?;
    for (k, v) in extra {
        body[k] = v;
    }
    output::json(a.io.output.as_deref(), header, ("comparison", body))
}

fn clrem_w(a: ClremWArgs, header: &Header) -> Result<()> {
    let w = find_minimal_w(a.points, a.tol)?;
    let mut out = output::text(a.io.output.as_deref(), header)?;
    writeln!(out, "w\n{w}")?;
    finish(out)
}
