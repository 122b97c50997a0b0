//! Box perturbations of a field and the invariance checks built on them.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremes::argmax;
use crate::lattice::{FieldSpec, Shape};
use crate::rng::{self, tag};
use crate::samplers::{map_replicas, ReplicaPlan, SampledField, Sampler};
use crate::stats::{mean, std_err};

/// Two-scale perturbation: one `N(0, 1)` per `r1`-box scaled by `sigma1`
/// plus one per `(N / r2)`-box scaled by `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxPerturbation {
    pub r1: usize,
    pub r2: usize,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl BoxPerturbation {
    pub fn new(r1: usize, r2: usize, sigma1: f64, sigma2: f64) -> Self {
        Self {
            r1,
            r2,
            sigma1,
            sigma2,
        }
    }

    /// `||sigma||_2^2`.
    pub fn sigma_sq(&self) -> f64 {
        self.sigma1 * self.sigma1 + self.sigma2 * self.sigma2
    }

    /// Predicted shift of the centered maximum, `||sigma||^2 sqrt(d / 2)`.
    pub fn predicted_shift(&self, d: usize) -> f64 {
        self.sigma_sq() * (d as f64 / 2.0).sqrt()
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.r1 == 0 || self.r2 == 0 {
            return Err(Error::input("r1 and r2 must be at least 1"));
        }
        if self.r1 > side {
            return Err(Error::input(format!("r1 = {} exceeds N = {side}", self.r1)));
        }
        if self.r2 > side {
            return Err(Error::input(format!("N / r2 < 1 for r2 = {}", self.r2)));
        }
        for s in [self.sigma1, self.sigma2] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::input("sigma values must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Box side lengths at the two scales, `r1` and `floor(N / r2)`.
    pub fn box_sides(&self, side: usize) -> [usize; 2] {
        [self.r1, side / self.r2]
    }
}

/// The additive perturbation layer on `shape`; points outside the
/// `floor(N / s) s` partition at a scale receive nothing from that scale.
pub fn perturbation_layer(shape: Shape, p: &BoxPerturbation, seed: u64) -> Result<Vec<f64>> {
    p.validate(shape.side)?;
    let mut layer = vec![0.0; shape.len()];
    let mut coords = vec![0; shape.d];
    for (scale, (box_side, sigma)) in p
        .box_sides(shape.side)
        .into_iter()
        .zip([p.sigma1, p.sigma2])
        .enumerate()
    {
        if sigma == 0.0 {
            continue;
        }
        let per_axis = shape.side / box_side;
        let boxes = Shape::new(shape.d, per_axis);
        let mut g = vec![0.0; boxes.len()];
        rng::fill_normal(&mut rng::stream(seed, &[tag::PERTURB, scale as u64]), &mut g, sigma);
        for (i, slot) in layer.iter_mut().enumerate() {
            shape.coords_into(i, &mut coords);
            if coords.iter().all(|&c| c / box_side < per_axis) {
                coords.iter_mut().for_each(|c| *c /= box_side);
                *slot += g[boxes.index(&coords)];
            }
        }
    }
    Ok(layer)
}

/// `phi + sigma1 g_{B(v, r1)} + sigma2 g_{B(v, N / r2)}`.
pub fn perturbed_field(field: &SampledField, p: &BoxPerturbation, seed: u64) -> Result<SampledField> {
    let mut out = field.clone();
    out.levels = None;
    if p.sigma_sq() == 0.0 {
        p.validate(field.spec.side)?;
        return Ok(out);
    }
    let layer = perturbation_layer(field.shape(), p, seed)?;
    out.values.iter_mut().zip(&layer).for_each(|(v, l)| *v += l);
    Ok(out)
}

/// Maximum of the perturbed field without materializing it.
pub fn perturbed_max(field: &SampledField, p: &BoxPerturbation, seed: u64) -> Result<f64> {
    let layer = perturbation_layer(field.shape(), p, seed)?;
    Ok(field
        .values
        .iter()
        .zip(&layer)
        .map(|(v, l)| v + l)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `phi + sqrt(||sigma||^2 / log N) phi'`, distributed as `a_N phi` with
/// `a_N = sqrt(1 + ||sigma||^2 / log N)`.
pub fn scaled_mix_field(
    field: &SampledField,
    field_prime: &SampledField,
    p: &BoxPerturbation,
) -> Result<SampledField> {
    if !field.spec.same_law(&field_prime.spec) {
        return Err(Error::input("the two fields have different specifications"));
    }
    if field.seed == field_prime.seed {
        return Err(Error::input("the two fields must come from different seeds"));
    }
    let mut out = field.clone();
    out.levels = None;
    let s2 = p.sigma_sq();
    if s2 == 0.0 {
        return Ok(out);
    }
    let coef = (s2 / field.spec.log_side()).sqrt();
    out.values
        .iter_mut()
        .zip(&field_prime.values)
        .for_each(|(v, w)| *v += coef * w);
    Ok(out)
}

/// `a_N = sqrt(1 + ||sigma||^2 / log N)`.
pub fn mix_scale(p: &BoxPerturbation, side: usize) -> f64 {
    (1.0 + p.sigma_sq() / (side as f64).ln()).sqrt()
}

/// Outcome of [`shift_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftCheck {
    pub side: usize,
    pub perturbation: BoxPerturbation,
    pub mean_gap: f64,
    pub predicted: f64,
    /// Standard error of `mean_gap` from the paired differences.
    pub stderr: f64,
    pub replicas: usize,
}

impl ShiftCheck {
    pub const CSV_HEADER: &'static str = "N,r1,r2,sigma1,sigma2,mean_gap,predicted,stderr";

    pub fn gap_error(&self) -> f64 {
        (self.mean_gap - self.predicted).abs()
    }

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.perturbation;
        writeln!(
            out,
            "{},{},{},{},{},{:.10},{:.10},{:.10}",
            self.side, p.r1, p.r2, p.sigma1, p.sigma2, self.mean_gap, self.predicted, self.stderr
        )?;
        Ok(())
    }
}

/// Gap statistics from paired base/perturbed maxima.
pub fn shift_from_maxima(
    side: usize,
    d: usize,
    p: &BoxPerturbation,
    base: &[f64],
    perturbed: &[f64],
) -> ShiftCheck {
    let gaps: Vec<f64> = perturbed.iter().zip(base).map(|(a, b)| a - b).collect();
    ShiftCheck {
        side,
        perturbation: *p,
        mean_gap: mean(&gaps),
        predicted: p.predicted_shift(d),
        stderr: std_err(&gaps),
        replicas: gaps.len(),
    }
}

/// Mean gap between the perturbed and the base maximum over `replicas`
/// paired samples, against `||sigma||^2 sqrt(d / 2)`.
pub fn shift_check(
    spec: &FieldSpec,
    p: &BoxPerturbation,
    replicas: usize,
    master_seed: u64,
    workers: usize,
) -> Result<ShiftCheck> {
    if replicas < 100 {
        return Err(Error::input("shift_check needs at least 100 replicas"));
    }
    p.validate(spec.side)?;
    let plan = ReplicaPlan::new(spec.clone(), replicas, master_seed);
    let sampler = Sampler::new(spec)?;
    let pairs = map_replicas(replicas, workers, |i| -> Result<(f64, f64)> {
        let seed = plan.seed(i);
        let f = sampler.sample(seed)?;
        let base = argmax(&f.values).1;
        Ok((base, perturbed_max(&f, p, seed)?))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (base, pert): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(shift_from_maxima(spec.side, spec.d, p, &base, &pert))
}
