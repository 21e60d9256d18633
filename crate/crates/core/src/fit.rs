//! Maximum-likelihood fitting.
//!
//! Every family has covariance `σ² K̃(θ)`, so for fixed shape `θ` the scale
//! has the closed-form maximizer `σ̂² = xᵀK̃⁻¹x / n` and the search runs
//! over `θ` only, on the transformed scale of each parameter.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use dashmap::DashMap;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::family::{with_bounds, FamilyRegistry, ModelFamily, ParamSpec, Transform};
use crate::gaussian::cholesky_with_jitter;
use crate::grid::TimeGrid;
use crate::kernels::KernelModel;
use crate::optim::{golden_section_max, nelder_mead_max};
use crate::quadrature::QuadratureSpec;
use crate::telemetry::Trajectory;

/// How raw observations are tied to the process, which starts at 0 at time 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Subtract the first observation from values and times and drop it.
    #[default]
    FirstObservation,
    /// Times are already measured from the process start and values from
    /// its starting point (simulated data).
    Origin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub anchor: Anchor,
    pub level: f64,
    /// Per-parameter bounds overriding the family defaults.
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Coarse-scan density for log-scaled parameters.
    pub scan_per_decade: f64,
    pub flat_epsilon: f64,
    pub confidence_intervals: bool,
    pub quadrature: QuadratureSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            anchor: Anchor::FirstObservation,
            level: 0.95,
            bounds: BTreeMap::new(),
            rel_tol: 1e-6,
            max_iter: 200,
            scan_per_decade: 2.0,
            flat_epsilon: 1e-2,
            confidence_intervals: true,
            quadrature: QuadratureSpec::default(),
        }
    }
}

/// Observations on the grid used by the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Time and value subtracted from the raw data.
    pub t0: f64,
    pub x0: f64,
}

pub fn prepare(data: &Trajectory, anchor: Anchor) -> Result<Prepared> {
    match anchor {
        Anchor::Origin => {
            if data.is_empty() {
                return Err(Error::Data("no observations".into()));
            }
            Ok(Prepared {
                grid: data.grid.clone(),
                values: data.values.clone(),
                t0: 0.0,
                x0: 0.0,
            })
        }
        Anchor::FirstObservation => {
            if data.len() < 2 {
                return Err(Error::Data("need at least two observations".into()));
            }
            let (t0, x0) = (data.times()[0], data.values[0]);
            let times = data.times()[1..].iter().map(|t| t - t0).collect();
            Ok(Prepared {
                grid: TimeGrid::with_offset(times, data.grid.origin_offset + t0)?,
                values: data.values[1..].iter().map(|v| v - x0).collect(),
                t0,
                x0,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Concentrated {
    pub sigma_hat_sq: f64,
    pub log_lik: f64,
    pub jitter: f64,
}

fn concentrated_from(n: f64, quad_form: f64, log_det: f64) -> Result<(f64, f64)> {
    if !(quad_form > 0.0) {
        return Err(Error::Degenerate("all observations are zero, the scale estimate is 0".into()));
    }
    let s2 = quad_form / n;
    Ok((s2, -0.5 * (n * (2.0 * PI).ln() + n * s2.ln() + log_det + n)))
}

/// Profile the scale out of `shape_model` (its own scale is ignored) on the
/// grid of `data` as given.
pub fn concentrate_sigma(shape_model: &KernelModel, data: &Trajectory) -> Result<Concentrated> {
    let unit = shape_model.with_scale(1.0);
    let k = unit.kernel()?.matrix(&data.grid)?;
    let f = cholesky_with_jitter(&k)?;
    let (sigma_hat_sq, log_lik) = concentrated_from(data.len() as f64, f.quad_form(&data.values)?, f.log_det)?;
    Ok(Concentrated {
        sigma_hat_sq,
        log_lik,
        jitter: f.jitter_applied,
    })
}

#[derive(Debug, Clone, Copy)]
struct ShapeEval {
    quad_form: f64,
    log_det: f64,
    rel_jitter: f64,
}

/// Cached likelihood pieces per shape vector.
struct Profiler<'a> {
    family: &'a dyn ModelFamily,
    specs: Vec<ParamSpec>,
    prep: &'a Prepared,
    quad: QuadratureSpec,
    cache: DashMap<Vec<u64>, ShapeEval>,
    first_error: Mutex<Option<Error>>,
}

impl<'a> Profiler<'a> {
    fn n(&self) -> f64 {
        self.prep.values.len() as f64
    }

    fn shape_eval(&self, shape: &[f64]) -> Result<ShapeEval> {
        let key: Vec<u64> = shape.iter().map(|v| v.to_bits()).collect();
        if let Some(e) = self.cache.get(&key) {
            return Ok(*e);
        }
        let model = self.family.build(1.0, shape)?;
        let k = model.kernel_with(&self.quad)?.matrix(&self.prep.grid)?;
        let f = cholesky_with_jitter(&k)?;
        let e = ShapeEval {
            quad_form: f.quad_form(&self.prep.values)?,
            log_det: f.log_det,
            rel_jitter: f.jitter_applied / k.diagonal().mean(),
        };
        self.cache.insert(key, e);
        Ok(e)
    }

    /// `(σ̂², ℓ̂)` at a shape given in natural units.
    fn concentrated(&self, shape: &[f64]) -> Result<(f64, f64)> {
        let e = self.shape_eval(shape)?;
        concentrated_from(self.n(), e.quad_form, e.log_det)
    }

    fn log_lik(&self, sigma: f64, shape: &[f64]) -> Result<f64> {
        let e = self.shape_eval(shape)?;
        let n = self.n();
        let s2 = sigma * sigma;
        Ok(-0.5 * (n * (2.0 * PI).ln() + n * s2.ln() + e.log_det + e.quad_form / s2))
    }

    fn natural(&self, z: &[f64]) -> Vec<f64> {
        self.specs
            .iter()
            .zip(z)
            .map(|(p, &zi)| {
                let (lo, hi) = p.internal_bounds();
                p.from_internal(zi.clamp(lo, hi)).clamp(p.lower, p.upper)
            })
            .collect()
    }

    fn record(&self, e: Error) -> f64 {
        let mut slot = self.first_error.lock().expect("error slot");
        if slot.is_none() {
            log::debug!("likelihood evaluation failed: {e}");
            *slot = Some(e);
        }
        f64::NEG_INFINITY
    }

    /// Concentrated log-likelihood at internal coordinates; failures count as `-∞`.
    fn objective(&self, z: &[f64]) -> f64 {
        match self.concentrated(&self.natural(z)) {
            Ok((_, l)) => l,
            Err(e) => self.record(e),
        }
    }

    fn take_error(&self) -> Error {
        self.first_error
            .lock()
            .expect("error slot")
            .take()
            .unwrap_or_else(|| Error::Optimization("no finite likelihood value".into()))
    }

    fn jitter_max(&self) -> f64 {
        self.cache.iter().map(|e| e.rel_jitter).fold(0.0, f64::max)
    }
}

fn scan_axis(p: &ParamSpec, per_decade: f64) -> Vec<f64> {
    let (lo, hi) = p.internal_bounds();
    let count = match p.transform {
        Transform::Log => ((hi - lo) / std::f64::consts::LN_10 * per_decade).ceil() as usize + 1,
        _ => 9,
    };
    let count = count.max(3);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Internal-coordinate maximizer over all shape parameters, and every
/// point evaluated on the way.
fn maximize_shape(prof: &Profiler<'_>, opts: &FitOptions) -> Result<(Vec<f64>, f64, Vec<(Vec<f64>, f64)>)> {
    let d = prof.specs.len();
    if d == 0 {
        let (_, l) = prof.concentrated(&[])?;
        return Ok((Vec::new(), l, Vec::new()));
    }
    let axes: Vec<Vec<f64>> = prof.specs.iter().map(|p| scan_axis(p, opts.scan_per_decade)).collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&z| {
                    let mut q = p.clone();
                    q.push(z);
                    q
                })
            })
            .collect();
    }
    let mut evals: Vec<(Vec<f64>, f64)> = points
        .into_par_iter()
        .map(|z| {
            let v = prof.objective(&z);
            (z, v)
        })
        .collect();
    let (z_best, v_best) = evals
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("non-empty scan");
    if v_best == f64::NEG_INFINITY {
        return Err(prof.take_error());
    }
    if d == 1 {
        let axis = &axes[0];
        let k = axis.iter().position(|z| *z == z_best[0]).expect("scan point");
        let a = axis[k.saturating_sub(1)];
        let b = axis[(k + 1).min(axis.len() - 1)];
        let m = golden_section_max(|z| prof.objective(&[z]), a, b, opts.rel_tol, opts.max_iter);
        evals.extend(m.evaluations.into_iter().map(|(z, v)| (vec![z], v)));
    } else {
        let step: Vec<f64> = axes.iter().map(|a| 0.5 * (a[1] - a[0])).collect();
        let m = nelder_mead_max(|z| prof.objective(z), &z_best, &step, opts.rel_tol, opts.max_iter);
        evals.extend(m.evaluations.into_iter().map(|(z, v)| (prof.clamp_internal(&z), v)));
    }
    let (z, v) = evals
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("non-empty");
    Ok((z, v, evals))
}

impl Profiler<'_> {
    fn clamp_internal(&self, z: &[f64]) -> Vec<f64> {
        self.specs
            .iter()
            .zip(z)
            .map(|(p, &zi)| {
                let (lo, hi) = p.internal_bounds();
                zi.clamp(lo, hi)
            })
            .collect()
    }

    /// Maximize over every shape parameter except `fixed`, which is held at
    /// internal value `z_fixed`; `start` is the full internal starting point.
    fn max_over_others(&self, fixed: usize, z_fixed: f64, start: &[f64], opts: &FitOptions) -> (Vec<f64>, f64) {
        let d = self.specs.len();
        let embed = |free: &[f64]| -> Vec<f64> {
            let mut z = Vec::with_capacity(d);
            let mut it = free.iter();
            for i in 0..d {
                z.push(if i == fixed { z_fixed } else { *it.next().expect("free coordinate") });
            }
            z
        };
        let free0: Vec<f64> = (0..d).filter(|&i| i != fixed).map(|i| start[i]).collect();
        match free0.len() {
            0 => {
                let z = embed(&[]);
                let v = self.objective(&z);
                (z, v)
            }
            1 => {
                let (lo, hi) = self.specs[(0..d).find(|&i| i != fixed).expect("free index")].internal_bounds();
                let (a, b) = ((free0[0] - 1.0).max(lo), (free0[0] + 1.0).min(hi));
                let m = golden_section_max(|x| self.objective(&embed(&[x])), a, b, opts.rel_tol, opts.max_iter);
                (embed(&[m.x]), m.value)
            }
            k => {
                let m = nelder_mead_max(|x| self.objective(&embed(x)), &free0, &vec![0.25; k], opts.rel_tol, opts.max_iter);
                (embed(&m.x), m.value)
            }
        }
    }

    /// `max_θ ℓ(σ, θ)` searched near `z_hat`.
    fn scale_profile(&self, sigma: f64, z_hat: &[f64], opts: &FitOptions) -> f64 {
        let f = |z: &[f64]| match self.log_lik(sigma, &self.natural(z)) {
            Ok(v) => v,
            Err(e) => self.record(e),
        };
        match z_hat.len() {
            0 => f(&[]),
            1 => {
                let (lo, hi) = self.specs[0].internal_bounds();
                let (a, b) = ((z_hat[0] - 1.0).max(lo), (z_hat[0] + 1.0).min(hi));
                golden_section_max(|x| f(&[x]), a, b, opts.rel_tol, opts.max_iter).value
            }
            k => nelder_mead_max(f, z_hat, &vec![0.25; k], opts.rel_tol, opts.max_iter).value,
        }
    }
}

/// Wald-type interval from the local curvature of a profile log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub param: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub curvature: f64,
}

/// Relative half-width of the neighbourhood used for the local quadratic.
pub const GA_NEIGHBOURHOOD: f64 = 0.05;

/// Fit `ℓ(θ) ≈ a + b(θ-θ̂) + c(θ-θ̂)²` by least squares to the profile
/// points within ±5% of `theta_hat` and return `θ̂ ± z/√(-2c)`.
pub fn ga_confidence_interval(profile: &[(f64, f64)], theta_hat: f64, level: f64) -> Result<(f64, f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    let radius = GA_NEIGHBOURHOOD * theta_hat.abs() * (1.0 + 1e-9);
    let near: Vec<(f64, f64)> = profile
        .iter()
        .filter(|(t, l)| (t - theta_hat).abs() <= radius && l.is_finite())
        .map(|&(t, l)| (t - theta_hat, l))
        .collect();
    let mut distinct: Vec<f64> = near.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Optimization(format!(
            "need 3 distinct profile points within ±5% of {theta_hat}, have {}",
            distinct.len()
        )));
    }
    // scale offsets to O(1) for the normal equations
    let h = distinct.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(d, l) in &near {
        let u = d / h;
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        aty += row * l;
    }
    let coef = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Optimization("singular quadratic fit".into()))?;
    let curvature = -2.0 * coef[2] / (h * h);
    if !(curvature > 0.0) {
        return Err(Error::Optimization(format!(
            "profile is not locally concave at {theta_hat} (curvature {curvature:e})"
        )));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let half = z / curvature.sqrt();
    Ok((theta_hat - half, theta_hat + half, curvature))
}

/// Locate the flat-profile rate `β*`: the smallest `β` such that the profile
/// on `(β, beta_max]` stays within `epsilon` of its value at `β`.
///
/// The profile is scanned downward from `beta_max` on a log grid with 64
/// points per decade, then the crossing is refined by bisection.
pub fn flat_profile_beta_with<F>(mut profile: F, beta_max: f64, epsilon: f64, beta_min: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(beta_max > beta_min && beta_min > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_min < beta_max and epsilon > 0 (got {beta_min}, {beta_max}, {epsilon})"
        )));
    }
    let ratio = 10f64.powf(-1.0 / 64.0);
    let top = profile(beta_max)?;
    let mut best_above = top;
    let mut prev = beta_max;
    let mut beta = beta_max * ratio;
    let mut interior_gain = 0.0f64;
    while beta >= beta_min {
        let l = profile(beta)?;
        interior_gain = interior_gain.max(l - top);
        if interior_gain >= epsilon {
            return Err(Error::InteriorMaximum(format!(
                "profile at beta = {beta:.6} exceeds the value at beta_max by {interior_gain:.4}"
            )));
        }
        if best_above - l >= epsilon {
            // crossing in (beta, prev]
            let (mut lo, mut hi) = (beta.ln(), prev.ln());
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if best_above - profile(mid.exp())? >= epsilon {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
            return Ok(hi.exp());
        }
        best_above = best_above.max(l);
        prev = beta;
        beta *= ratio;
    }
    Ok(prev)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitFlags {
    pub boundary_beta_zero: bool,
    pub flat_profile_beta_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub param: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub model: KernelModel,
    pub theta_hat: BTreeMap<String, f64>,
    pub scale_name: String,
    pub sigma_hat: f64,
    pub log_lik: f64,
    pub aic: f64,
    pub k_params: usize,
    pub n_obs: usize,
    pub profile: Vec<ProfileCurve>,
    pub ci: Vec<ConfidenceInterval>,
    pub flags: FitFlags,
    pub jitter_max: f64,
    pub anchor: Anchor,
    pub evaluations: usize,
}

impl FitResult {
    pub fn interval(&self, param: &str) -> Option<&ConfidenceInterval> {
        self.ci.iter().find(|c| c.param == param)
    }
}

pub fn aic(k: usize, log_lik: f64) -> f64 {
    2.0 * k as f64 - 2.0 * log_lik
}

/// Fit the family registered under `name`.
pub fn fit_by_name(registry: &FamilyRegistry, name: &str, data: &Trajectory, opts: &FitOptions) -> Result<FitResult> {
    fit_mle(registry.get(name)?, data, opts)
}

pub fn fit_mle(family: Arc<dyn ModelFamily>, data: &Trajectory, opts: &FitOptions) -> Result<FitResult> {
    let family = with_bounds(family, &opts.bounds);
    let specs = family.shape_params();
    for p in &specs {
        p.validate()?;
    }
    let prep = prepare(data, opts.anchor)?;
    let prof = Profiler {
        family: family.as_ref(),
        specs: specs.clone(),
        prep: &prep,
        quad: opts.quadrature,
        cache: DashMap::new(),
        first_error: Mutex::new(None),
    };
    let (mut z_hat, _, evals) = maximize_shape(&prof, opts)?;
    let mut flags = FitFlags::default();

    if let Some(bi) = specs.iter().position(|p| p.name == "beta" && p.transform == Transform::Log) {
        let (lo, hi) = specs[bi].internal_bounds();
        if z_hat[bi] - lo < 1e-3 {
            if let Some(fallback) = family.lower_boundary_fallback() {
                log::info!("{}: beta at its lower bound, refitting {fallback}", family.name());
                let mut r = fit_by_name(&FamilyRegistry::standard(), fallback, data, opts)?;
                r.flags.boundary_beta_zero = true;
                r.jitter_max = r.jitter_max.max(prof.jitter_max());
                return Ok(r);
            }
        } else if hi - z_hat[bi] < 1e-3 {
            let mut start = z_hat.clone();
            let beta_star = flat_profile_beta_with(
                |beta| {
                    let (z, v) = prof.max_over_others(bi, specs[bi].to_internal(beta), &start, opts);
                    start = z;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(prof.take_error())
                    }
                },
                specs[bi].upper,
                opts.flat_epsilon,
                specs[bi].lower,
            )?;
            let (z, _) = prof.max_over_others(bi, specs[bi].to_internal(beta_star), &z_hat, opts);
            z_hat = z;
            flags.flat_profile_beta_star = Some(beta_star);
        }
    }

    let shape_hat = prof.natural(&z_hat);
    let (s2, log_lik) = prof.concentrated(&shape_hat)?;
    let sigma_hat = s2.sqrt();
    let model = family.build(sigma_hat, &shape_hat)?;
    let theta_hat: BTreeMap<String, f64> = specs.iter().map(|p| p.name.clone()).zip(shape_hat.iter().copied()).collect();

    let mut profile = Vec::new();
    let mut ci = Vec::new();
    let offsets = [-2.0, -1.0, 1.0, 2.0].map(|k| k * GA_NEIGHBOURHOOD / 2.0);
    if opts.confidence_intervals {
        for (i, p) in specs.iter().enumerate() {
            let th = shape_hat[i];
            let mut points: Vec<(f64, f64)> = vec![(th, log_lik)];
            for off in offsets {
                let t = th * (1.0 + off);
                if t < p.lower || t > p.upper {
                    continue;
                }
                let (_, v) = prof.max_over_others(i, p.to_internal(t), &z_hat, opts);
                points.push((t, v));
            }
            if specs.len() == 1 {
                points.extend(evals.iter().map(|(z, v)| (prof.natural(z)[0], *v)));
            }
            let skip = flags.flat_profile_beta_star.is_some() && p.name == "beta";
            if !skip {
                match ga_confidence_interval(&points, th, opts.level) {
                    Ok((lower, upper, curvature)) => ci.push(ConfidenceInterval {
                        param: p.name.clone(),
                        estimate: th,
                        lower,
                        upper,
                        level: opts.level,
                        curvature,
                    }),
                    Err(e) => log::warn!("no interval for {}: {e}", p.name),
                }
            }
            points.retain(|q| q.1.is_finite());
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            points.dedup_by(|a, b| a.0 == b.0);
            profile.push(ProfileCurve {
                param: p.name.clone(),
                points,
            });
        }
        let mut points = vec![(sigma_hat, log_lik)];
        for off in offsets {
            let s = sigma_hat * (1.0 + off);
            points.push((s, prof.scale_profile(s, &z_hat, opts)));
        }
        match ga_confidence_interval(&points, sigma_hat, opts.level) {
            Ok((lower, upper, curvature)) => ci.push(ConfidenceInterval {
                param: family.scale_name().to_string(),
                estimate: sigma_hat,
                lower,
                upper,
                level: opts.level,
                curvature,
            }),
            Err(e) => log::warn!("no interval for the scale: {e}"),
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        profile.push(ProfileCurve {
            param: family.scale_name().to_string(),
            points,
        });
    }

    let k = family.free_params();
    Ok(FitResult {
        family: family.name().to_string(),
        model,
        theta_hat,
        scale_name: family.scale_name().to_string(),
        sigma_hat,
        log_lik,
        aic: aic(k, log_lik),
        k_params: k,
        n_obs: prep.values.len(),
        profile,
        ci,
        flags,
        jitter_max: prof.jitter_max(),
        anchor: opts.anchor,
        evaluations: prof.cache.len(),
    })
}

/// `β*` for a family with a `beta` parameter; other shape parameters are
/// maximized out at each `β`.
pub fn flat_profile_beta(
    family: Arc<dyn ModelFamily>,
    data: &Trajectory,
    opts: &FitOptions,
    beta_max: f64,
    epsilon: f64,
) -> Result<f64> {
    let family = with_bounds(family, &opts.bounds);
    let specs = family.shape_params();
    let bi = specs
        .iter()
        .position(|p| p.name == "beta")
        .ok_or_else(|| Error::InvalidParameter(format!("{} has no beta parameter", family.name())))?;
    let prep = prepare(data, opts.anchor)?;
    let prof = Profiler {
        family: family.as_ref(),
        specs: specs.clone(),
        prep: &prep,
        quad: opts.quadrature,
        cache: DashMap::new(),
        first_error: Mutex::new(None),
    };
    let mut start: Vec<f64> = specs
        .iter()
        .map(|p| {
            let (lo, hi) = p.internal_bounds();
            0.5 * (lo + hi)
        })
        .collect();
    flat_profile_beta_with(
        |beta| {
            let (z, v) = prof.max_over_others(bi, specs[bi].to_internal(beta), &start, opts);
            start = z;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(prof.take_error())
            }
        },
        beta_max,
        epsilon,
        specs[bi].lower,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: String,
    pub aic: Option<f64>,
    pub log_lik: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub theta_hat: BTreeMap<String, f64>,
    pub flags: FitFlags,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Successful fits by ascending AIC, then failures.
    pub rows: Vec<ComparisonRow>,
    pub winner: Option<String>,
}

pub fn compare_models(
    registry: &FamilyRegistry,
    data: &Trajectory,
    families: &[&str],
    opts: &FitOptions,
) -> Result<Comparison> {
    if families.is_empty() {
        return Err(Error::InvalidParameter("no families to compare".into()));
    }
    let mut rows: Vec<ComparisonRow> = families
        .iter()
        .map(|name| match fit_by_name(registry, name, data, opts) {
            Ok(r) => ComparisonRow {
                family: r.family.clone(),
                aic: Some(r.aic),
                log_lik: Some(r.log_lik),
                sigma_hat: Some(r.sigma_hat),
                theta_hat: r.theta_hat,
                flags: r.flags,
                error: None,
            },
            Err(e) => {
                log::warn!("{name} failed: {e}");
                ComparisonRow {
                    family: name.to_string(),
                    aic: None,
                    log_lik: None,
                    sigma_hat: None,
                    theta_hat: BTreeMap::new(),
                    flags: FitFlags::default(),
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.aic, b.aic) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let winner = rows.first().filter(|r| r.aic.is_some()).map(|r| r.family.clone());
    Ok(Comparison { rows, winner })
}
