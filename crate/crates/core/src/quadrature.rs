//! Adaptive quadrature in one and two dimensions.
//!
//! One-dimensional integrals use globally adaptive 15-point Gauss–Kronrod
//! panels, bisecting the panel with the largest error estimate. A declared
//! power-law endpoint singularity `(u - a)^alpha`, `-1 < alpha < 0`, is
//! removed exactly by the substitution `u = a + v^{1/(1+alpha)}` before any
//! panel is formed.
//!
//! Two-dimensional integrals over rectangles use 12×12 tensor Gauss–Legendre
//! panels. A declared ridge `y - x = k` (a line where the integrand has a
//! kink) is split out first, and panels adjacent to it get their nodes
//! graded towards the ridge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Singularity {
    pub endpoint: Endpoint,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub singularity: Option<Singularity>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 2000,
            singularity: None,
        }
    }
}

impl QuadratureSpec {
    pub fn with_singularity(self, singularity: Option<Singularity>) -> Self {
        QuadratureSpec {
            singularity,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::InvalidParameter(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        if let Some(s) = self.singularity {
            if !(s.exponent > -1.0) || !s.exponent.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "singularity exponent must be > -1, got {}",
                    s.exponent
                )));
            }
        }
        Ok(())
    }

    fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error_estimate: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F>(f: &F, a: f64, b: f64) -> Result<Panel>
where
    F: Fn(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteIntegrand { at: vec![x] })
        }
    };
    let fc = eval(center)?;
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..3 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..4 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_k += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let habs = half.abs();
    let value = res_k * half;
    res_abs *= habs;
    res_asc *= habs;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel {
        a,
        b,
        value,
        error: err,
    })
}

fn splittable(p: &Panel) -> bool {
    let mid = 0.5 * (p.a + p.b);
    let scale = p.a.abs().max(p.b.abs());
    (p.b - p.a) > 1e3 * f64::EPSILON * scale.max(1e-280) && mid > p.a && mid < p.b
}

fn adaptive<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> Result<f64>,
{
    let first = gk15(f, a, b)?;
    let mut panels = vec![first];
    let mut frozen: Vec<Panel> = Vec::new();
    let mut subdivisions = 0usize;
    loop {
        let value: f64 = panels.iter().chain(&frozen).map(|p| p.value).sum();
        let error: f64 = panels.iter().chain(&frozen).map(|p| p.error).sum();
        if error <= spec.tolerance(value) {
            return Ok(Estimate {
                value,
                error_estimate: error,
            });
        }
        if subdivisions >= spec.max_subdivisions || panels.is_empty() {
            return Err(Error::NonConvergence {
                value,
                error,
                subdivisions,
            });
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let worst = panels.swap_remove(idx);
        if !splittable(&worst) {
            frozen.push(worst);
            continue;
        }
        let mid = 0.5 * (worst.a + worst.b);
        panels.push(gk15(f, worst.a, mid)?);
        panels.push(gk15(f, mid, worst.b)?);
        subdivisions += 1;
    }
}

/// Integrate a fallible integrand over `[a, b]`.
pub fn try_integrate<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> Result<f64>,
{
    spec.validate()?;
    if !a.is_finite() || !b.is_finite() || a > b {
        return Err(Error::InvalidParameter(format!(
            "integration bounds must satisfy a <= b, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error_estimate: 0.0,
        });
    }
    match spec.singularity {
        Some(s) if s.exponent < 0.0 => {
            let p = 1.0 / (1.0 + s.exponent);
            let vmax = (b - a).powf(1.0 + s.exponent);
            let g = |v: f64| -> Result<f64> {
                let w = v.powf(p);
                let u = match s.endpoint {
                    Endpoint::Left => a + w,
                    Endpoint::Right => b - w,
                };
                let jac = p * v.powf(p - 1.0);
                Ok(f(u.clamp(a, b))? * jac)
            };
            adaptive(&g, 0.0, vmax, spec)
        }
        _ => adaptive(&f, a, b, spec),
    }
}

/// Integrate `f` over `[a, b]`.
pub fn integrate<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    try_integrate(|x| Ok(f(x)), a, b, spec)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// The line `y - x = offset`, along which the integrand may have a kink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub offset: f64,
}

const GL12_X: [f64; 6] = [
    0.125_233_408_511_468_9,
    0.367_831_498_998_180_2,
    0.587_317_954_286_617_4,
    0.769_902_674_194_304_7,
    0.904_117_256_370_474_9,
    0.981_560_634_246_719_3,
];

const GL12_W: [f64; 6] = [
    0.249_147_045_813_402_8,
    0.233_492_536_538_354_8,
    0.203_167_426_723_065_9,
    0.160_078_328_543_346_2,
    0.106_939_325_995_318_4,
    0.047_175_336_386_511_8,
];

/// 12-point Gauss–Legendre rule on [0, 1].
fn gl12_unit() -> [(f64, f64); 12] {
    let mut out = [(0.0, 0.0); 12];
    for i in 0..6 {
        out[2 * i] = (0.5 - 0.5 * GL12_X[i], 0.5 * GL12_W[i]);
        out[2 * i + 1] = (0.5 + 0.5 * GL12_X[i], 0.5 * GL12_W[i]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RidgeSide {
    None,
    /// the ridge is the upper boundary of the region (eta = 1)
    Top,
    /// the ridge is the lower boundary of the region (eta = 0)
    Bottom,
}

/// `{(x, y): x in [x0, x1], lo(x) <= y <= hi(x)}` with linear `lo`, `hi`.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: f64,
    x1: f64,
    lo: (f64, f64),
    hi: (f64, f64),
    ridge: RidgeSide,
}

impl Region {
    fn bound(&self, edge: (f64, f64), xi: f64) -> f64 {
        edge.0 + (edge.1 - edge.0) * xi
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel2 {
    xi: (f64, f64),
    eta: (f64, f64),
    value: f64,
    error: f64,
}

struct Integrator2<'a, F> {
    f: &'a F,
    region: Region,
    nodes: [(f64, f64); 12],
}

impl<F> Integrator2<'_, F>
where
    F: Fn(f64, f64) -> f64,
{
    /// Map the grading variable `z` in [0, 1] to `eta`, returning `(eta, d eta / d z)`.
    fn grade(&self, z: f64) -> (f64, f64) {
        match self.region.ridge {
            RidgeSide::None => (z, 1.0),
            RidgeSide::Bottom => (z * z * z, 3.0 * z * z),
            RidgeSide::Top => {
                let w = 1.0 - z;
                (1.0 - w * w * w, 3.0 * w * w)
            }
        }
    }

    fn rule(&self, xi: (f64, f64), eta: (f64, f64)) -> Result<f64> {
        let r = &self.region;
        let dxi = xi.1 - xi.0;
        let deta = eta.1 - eta.0;
        let width_x = r.x1 - r.x0;
        let mut sum = 0.0;
        for &(px, wx) in &self.nodes {
            let xi_v = xi.0 + dxi * px;
            let x = r.x0 + width_x * xi_v;
            let lo = r.bound(r.lo, xi_v);
            let hi = r.bound(r.hi, xi_v);
            let span = hi - lo;
            let mut inner = 0.0;
            for &(py, wy) in &self.nodes {
                let (e, de) = self.grade(eta.0 + deta * py);
                let y = lo + span * e;
                let v = (self.f)(x, y);
                if !v.is_finite() {
                    return Err(Error::NonFiniteIntegrand { at: vec![x, y] });
                }
                inner += wy * v * de;
            }
            sum += wx * inner * span;
        }
        Ok(sum * dxi * deta * width_x)
    }

    fn children(xi: (f64, f64), eta: (f64, f64)) -> [((f64, f64), (f64, f64)); 4] {
        let xm = 0.5 * (xi.0 + xi.1);
        let em = 0.5 * (eta.0 + eta.1);
        [
            ((xi.0, xm), (eta.0, em)),
            ((xm, xi.1), (eta.0, em)),
            ((xi.0, xm), (em, eta.1)),
            ((xm, xi.1), (em, eta.1)),
        ]
    }

    /// Evaluate a panel: its value is the sum over its four children, its
    /// error the discrepancy with the single-panel rule.
    fn panel(&self, xi: (f64, f64), eta: (f64, f64)) -> Result<Panel2> {
        let coarse = self.rule(xi, eta)?;
        let mut fine = 0.0;
        for (cx, ce) in Self::children(xi, eta) {
            fine += self.rule(cx, ce)?;
        }
        Ok(Panel2 {
            xi,
            eta,
            value: fine,
            error: (fine - coarse).abs(),
        })
    }
}

fn regions(rect: &Rect, ridge: Option<Ridge>) -> Vec<Region> {
    let plain = |x0: f64, x1: f64| Region {
        x0,
        x1,
        lo: (rect.y0, rect.y0),
        hi: (rect.y1, rect.y1),
        ridge: RidgeSide::None,
    };
    let Some(ridge) = ridge else {
        return vec![plain(rect.x0, rect.x1)];
    };
    let k = ridge.offset;
    let mut xs = vec![rect.x0, rect.x1];
    for cand in [rect.y0 - k, rect.y1 - k] {
        if cand > rect.x0 && cand < rect.x1 {
            xs.push(cand);
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let xm = 0.5 * (x0 + x1);
        let ym = xm + k;
        if ym > rect.y0 && ym < rect.y1 {
            let ridge_edge = (x0 + k, x1 + k);
            out.push(Region {
                x0,
                x1,
                lo: (rect.y0, rect.y0),
                hi: ridge_edge,
                ridge: RidgeSide::Top,
            });
            out.push(Region {
                x0,
                x1,
                lo: ridge_edge,
                hi: (rect.y1, rect.y1),
                ridge: RidgeSide::Bottom,
            });
        } else {
            out.push(plain(x0, x1));
        }
    }
    out
}

/// Integrate `f(x, y)` over `rect`, splitting along `ridge` when given.
pub fn integrate_2d<F>(
    f: F,
    rect: Rect,
    ridge: Option<Ridge>,
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(f64, f64) -> f64,
{
    spec.validate()?;
    let finite = [rect.x0, rect.x1, rect.y0, rect.y1]
        .iter()
        .all(|v| v.is_finite());
    if !finite || rect.x0 > rect.x1 || rect.y0 > rect.y1 {
        return Err(Error::InvalidParameter(format!(
            "invalid integration rectangle {rect:?}"
        )));
    }
    if rect.x0 == rect.x1 || rect.y0 == rect.y1 {
        return Ok(Estimate {
            value: 0.0,
            error_estimate: 0.0,
        });
    }
    let nodes = gl12_unit();
    let integrators: Vec<Integrator2<'_, F>> = regions(&rect, ridge)
        .into_iter()
        .map(|region| Integrator2 {
            f: &f,
            region,
            nodes,
        })
        .collect();
    // (region index, panel)
    let mut panels: Vec<(usize, Panel2)> = Vec::new();
    for (i, ig) in integrators.iter().enumerate() {
        panels.push((i, ig.panel((0.0, 1.0), (0.0, 1.0))?));
    }
    let mut subdivisions = 0usize;
    loop {
        let value: f64 = panels.iter().map(|p| p.1.value).sum();
        let error: f64 = panels.iter().map(|p| p.1.error).sum();
        if error <= spec.tolerance(value) {
            return Ok(Estimate {
                value,
                error_estimate: error,
            });
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::NonConvergence {
                value,
                error,
                subdivisions,
            });
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .1.error.total_cmp(&y.1 .1.error))
            .expect("non-empty");
        let (ri, worst) = panels.swap_remove(idx);
        if worst.xi.1 - worst.xi.0 < 1e-12 {
            return Err(Error::NonConvergence {
                value,
                error,
                subdivisions,
            });
        }
        let ig = &integrators[ri];
        for (cx, ce) in Integrator2::<F>::children(worst.xi, worst.eta) {
            panels.push((ri, ig.panel(cx, ce)?));
        }
        subdivisions += 1;
    }
}
