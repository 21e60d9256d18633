//! Model families available for fitting, registered by name.
//!
//! A family maps a scale and a vector of shape parameters to a
//! [`KernelModel`]. Fitting code only talks to the [`ModelFamily`] trait,
//! so new families can be registered at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelModel, WeightFunction};

/// How a shape parameter is mapped to the unconstrained optimizer scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    /// `log(x / (1 - x))`
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub transform: Transform,
}

impl ParamSpec {
    pub fn new(name: &str, lower: f64, upper: f64, transform: Transform) -> Self {
        ParamSpec {
            name: name.into(),
            lower,
            upper,
            transform,
        }
    }

    pub fn to_internal(&self, x: f64) -> f64 {
        match self.transform {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => (x / (1.0 - x)).ln(),
        }
    }

    pub fn from_internal(&self, z: f64) -> f64 {
        match self.transform {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Bounds on the internal scale.
    pub fn internal_bounds(&self) -> (f64, f64) {
        (self.to_internal(self.lower), self.to_internal(self.upper))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.internal_bounds();
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "bounds [{}, {}] for `{}` are not usable",
                self.lower, self.upper, self.name
            )))
        }
    }
}

/// Default box for rates.
pub const BETA_BOUNDS: (f64, f64) = (1e-8, 400.0);
/// Default box for Hurst indices.
pub const HURST_BOUNDS: (f64, f64) = (0.01, 0.99);

/// A parametric covariance family `scale² · K̃(shape)`.
pub trait ModelFamily: Send + Sync {
    fn name(&self) -> &str;

    fn shape_params(&self) -> Vec<ParamSpec>;

    fn scale_name(&self) -> &'static str {
        "sigma"
    }

    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel>;

    /// Number of free parameters counted by AIC.
    fn free_params(&self) -> usize {
        1 + self.shape_params().len()
    }

    /// Family to refit when the rate parameter runs into its lower bound.
    fn lower_boundary_fallback(&self) -> Option<&str> {
        None
    }
}

fn expect_len(shape: &[f64], n: usize, family: &str) -> Result<()> {
    if shape.len() == n {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{family} takes {n} shape parameters, got {}",
            shape.len()
        )))
    }
}

fn beta_spec() -> ParamSpec {
    ParamSpec::new("beta", BETA_BOUNDS.0, BETA_BOUNDS.1, Transform::Log)
}

fn hurst_spec() -> ParamSpec {
    ParamSpec::new("hurst", HURST_BOUNDS.0, HURST_BOUNDS.1, Transform::Logit)
}

struct ExpWeightFamily;

impl ModelFamily for ExpWeightFamily {
    fn name(&self) -> &str {
        "weighted_log_exp"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        vec![beta_spec()]
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 1, self.name())?;
        Ok(KernelModel::WeightedLogExp {
            sigma: scale,
            beta: shape[0],
        })
    }
    fn lower_boundary_fallback(&self) -> Option<&str> {
        Some("weighted_log_const")
    }
}

struct ConstWeightFamily;

impl ModelFamily for ConstWeightFamily {
    fn name(&self) -> &str {
        "weighted_log_const"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        Vec::new()
    }
    fn scale_name(&self) -> &'static str {
        "alpha"
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 0, self.name())?;
        Ok(KernelModel::WeightedLogConst { alpha: scale })
    }
}

struct PowerWeightFamily;

impl ModelFamily for PowerWeightFamily {
    fn name(&self) -> &str {
        "weighted_log_poly"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("alpha", -0.95, 20.0, Transform::Identity)]
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 1, self.name())?;
        Ok(KernelModel::WeightedLogPoly {
            alpha: shape[0],
            sigma: scale,
        })
    }
}

struct IntegratedOuFamily;

impl ModelFamily for IntegratedOuFamily {
    fn name(&self) -> &str {
        "integrated_ou"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        vec![beta_spec()]
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 1, self.name())?;
        Ok(KernelModel::IntegratedOu {
            sigma: scale,
            beta: shape[0],
        })
    }
}

struct IntegratedFouFamily;

impl ModelFamily for IntegratedFouFamily {
    fn name(&self) -> &str {
        "integrated_fou"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        vec![beta_spec(), hurst_spec()]
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 2, self.name())?;
        Ok(KernelModel::IntegratedFou {
            sigma: scale,
            beta: shape[0],
            hurst: shape[1],
        })
    }
}

struct FbmFamily;

impl ModelFamily for FbmFamily {
    fn name(&self) -> &str {
        "fbm"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        vec![hurst_spec()]
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 1, self.name())?;
        Ok(KernelModel::Fbm {
            sigma: scale,
            hurst: shape[0],
        })
    }
}

/// Weighted-log kernel with a fixed user weight; only the scale is free.
pub struct UserWeightFamily {
    pub weight: WeightFunction,
}

impl ModelFamily for UserWeightFamily {
    fn name(&self) -> &str {
        "weighted_log"
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        Vec::new()
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        expect_len(shape, 0, self.name())?;
        Ok(KernelModel::WeightedLog {
            weight: self.weight.clone(),
            sigma: scale,
        })
    }
}

/// A family whose shape-parameter bounds are overridden by name.
struct Rebounded {
    inner: Arc<dyn ModelFamily>,
    bounds: BTreeMap<String, (f64, f64)>,
}

impl ModelFamily for Rebounded {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn shape_params(&self) -> Vec<ParamSpec> {
        self.inner
            .shape_params()
            .into_iter()
            .map(|mut p| {
                if let Some(&(lo, hi)) = self.bounds.get(&p.name) {
                    p.lower = lo;
                    p.upper = hi;
                }
                p
            })
            .collect()
    }
    fn scale_name(&self) -> &'static str {
        self.inner.scale_name()
    }
    fn build(&self, scale: f64, shape: &[f64]) -> Result<KernelModel> {
        self.inner.build(scale, shape)
    }
    fn free_params(&self) -> usize {
        self.inner.free_params()
    }
    fn lower_boundary_fallback(&self) -> Option<&str> {
        self.inner.lower_boundary_fallback()
    }
}

/// Wrap `family` so that the named parameters use the given bounds.
pub fn with_bounds(family: Arc<dyn ModelFamily>, bounds: &BTreeMap<String, (f64, f64)>) -> Arc<dyn ModelFamily> {
    let relevant: BTreeMap<String, (f64, f64)> = family
        .shape_params()
        .iter()
        .filter_map(|p| bounds.get(&p.name).map(|b| (p.name.clone(), *b)))
        .collect();
    if relevant.is_empty() {
        family
    } else {
        Arc::new(Rebounded {
            inner: family,
            bounds: relevant,
        })
    }
}

#[derive(Clone, Default)]
pub struct FamilyRegistry {
    families: BTreeMap<String, Arc<dyn ModelFamily>>,
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// All built-in families.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ExpWeightFamily));
        r.register(Arc::new(ConstWeightFamily));
        r.register(Arc::new(PowerWeightFamily));
        r.register(Arc::new(IntegratedOuFamily));
        r.register(Arc::new(IntegratedFouFamily));
        r.register(Arc::new(FbmFamily));
        r
    }

    /// Register or replace a family under its own name.
    pub fn register(&mut self, family: Arc<dyn ModelFamily>) {
        self.families.insert(family.name().to_string(), family);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ModelFamily>> {
        self.families
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.families.keys().map(String::as_str).collect()
    }
}
