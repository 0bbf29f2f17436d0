//! Physical parameters and localized Gaussian source terms.
//!
//! A source is a normalized sum of isotropic Gaussians,
//! `f(p) = (1/N) * sum_i exp(-|p - x_i|^2 / (2 sigma_i^2))`, where the single
//! shared constant `N` makes the integral of `f` over the domain equal to one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Smallest source width accepted; anything narrower cannot be resolved by the mesher.
pub const MIN_SIGMA: f64 = 1e-6;

/// Default per-axis midpoint-rule resolution used for normalization.
pub const DEFAULT_QUAD_N: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysParams {
    /// Domain extent along x (mm); the domain is `[0, lx] x [0, ly]`.
    pub lx: f64,
    pub ly: f64,
    /// Intrinsic permeability K (mm^2).
    pub permeability: f64,
    /// Dynamic viscosity mu (Pa s).
    pub viscosity: f64,
    /// Pressure-dependent sink coefficient alpha.
    pub sink: f64,
    /// Solute diffusivity D (mm^2/s).
    pub diffusivity: f64,
    /// Fluid infusion rate beta_1 (mm^2/s).
    pub fluid_rate: f64,
    /// Solute infusion rate beta_2 (mmol/s).
    pub solute_rate: f64,
    /// Final time T (s).
    pub final_time: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            lx: 10.0,
            ly: 10.0,
            permeability: 1e-9,
            viscosity: 9e-4,
            sink: 1e-2,
            diffusivity: 4e-6,
            fluid_rate: 5.0 / 60.0,
            solute_rate: 5.0 / 240.0,
            final_time: 500.0,
        }
    }
}

impl PhysParams {
    /// Darcy mobility K/mu.
    pub fn mobility(&self) -> f64 {
        self.permeability / self.viscosity
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= -tol && p[0] <= self.lx + tol && p[1] >= -tol && p[1] <= self.ly + tol
    }

    /// Returns one message per violated invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("lx", self.lx),
            ("ly", self.ly),
            ("permeability", self.permeability),
            ("viscosity", self.viscosity),
            ("sink", self.sink),
            ("diffusivity", self.diffusivity),
            ("fluid_rate", self.fluid_rate),
            ("solute_rate", self.solute_rate),
            ("final_time", self.final_time),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("physics.{name} must be positive and finite (got {v})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub center: Point,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn new(center: Point, sigma: f64) -> Self {
        Self { center, sigma }
    }

    #[inline]
    fn unnormalized(&self, p: Point) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// A normalized sum of Gaussian components: the branch-side input function.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMixture {
    components: Vec<GaussianComponent>,
    norm_const: f64,
}

impl SourceMixture {
    /// Validates the components and computes the shared normalization constant.
    pub fn new(components: Vec<GaussianComponent>, params: &PhysParams) -> Result<Self> {
        Self::with_quadrature(components, params, DEFAULT_QUAD_N)
    }

    pub fn with_quadrature(
        components: Vec<GaussianComponent>,
        params: &PhysParams,
        quad_n: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "a source mixture needs at least one component".into(),
            ));
        }
        for c in &components {
            if !(c.sigma > MIN_SIGMA) || !c.sigma.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "source width {} must exceed {MIN_SIGMA}",
                    c.sigma
                )));
            }
            if !params.contains(c.center, 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "source center ({}, {}) lies outside the domain",
                    c.center[0], c.center[1]
                )));
            }
        }
        let norm_const = normalize(&components, params, quad_n)?;
        Ok(Self {
            components,
            norm_const,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn min_sigma(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.sigma)
            .fold(f64::INFINITY, f64::min)
    }

    /// Source intensity f(p) in 1/mm^2.
    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        self.components.iter().map(|c| c.unnormalized(p)).sum::<f64>() / self.norm_const
    }
}

/// Free-function form of [`SourceMixture::eval`].
pub fn eval_source(mix: &SourceMixture, p: Point) -> f64 {
    mix.eval(p)
}

/// Midpoint-rule integral of the unnormalized component sum over the domain.
///
/// Each Gaussian is separable and the midpoint grid is a tensor grid, so the
/// `quad_n x quad_n` sum factors exactly into two one-dimensional sums per
/// component.
pub fn normalize(
    components: &[GaussianComponent],
    params: &PhysParams,
    quad_n: usize,
) -> Result<f64> {
    if quad_n < 256 {
        return Err(Error::InvalidParameter(format!(
            "normalization grid must have at least 256 points per axis (got {quad_n})"
        )));
    }
    let hx = params.lx / quad_n as f64;
    let hy = params.ly / quad_n as f64;
    let axis_sum = |center: f64, sigma: f64, h: f64| -> f64 {
        let inv = 1.0 / (2.0 * sigma * sigma);
        (0..quad_n)
            .map(|i| {
                let d = (i as f64 + 0.5) * h - center;
                (-d * d * inv).exp()
            })
            .sum::<f64>()
            * h
    };
    let integral: f64 = components
        .iter()
        .map(|c| axis_sum(c.center[0], c.sigma, hx) * axis_sum(c.center[1], c.sigma, hy))
        .sum();
    if !(integral >= 1e-300) {
        return Err(Error::DegenerateNormalization { integral });
    }
    Ok(integral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }
}

/// How many Gaussian components each sampled source carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CountRule {
    Fixed(usize),
    UniformChoice(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSamplerConfig {
    pub region: Rect,
    pub sigma_range: [f64; 2],
    pub count: CountRule,
    pub fixed_centers: Option<Vec<Point>>,
    pub fixed_sigma: Option<f64>,
}

impl Default for SourceSamplerConfig {
    fn default() -> Self {
        Self {
            region: Rect {
                x: [3.0, 7.0],
                y: [3.0, 7.0],
            },
            sigma_range: [0.25, 0.60],
            count: CountRule::Fixed(1),
            fixed_centers: None,
            fixed_sigma: None,
        }
    }
}

impl SourceSamplerConfig {
    pub fn violations(&self, params: &PhysParams) -> Vec<String> {
        let mut out = Vec::new();
        let r = &self.region;
        if !(r.x[0] <= r.x[1] && r.y[0] <= r.y[1]) {
            out.push("sources.region bounds must be ordered [min, max]".to_string());
        }
        if r.x[0] < 0.0 || r.y[0] < 0.0 || r.x[1] > params.lx || r.y[1] > params.ly {
            out.push("sources.region must lie inside the domain".to_string());
        }
        let [lo, hi] = self.sigma_range;
        if !(lo > MIN_SIGMA) {
            out.push(format!("sources.sigma_range lower bound must exceed {MIN_SIGMA} (got {lo})"));
        }
        if !(lo <= hi) {
            out.push(format!(
                "sources.sigma_range must satisfy sigma_min <= sigma_max (got [{lo}, {hi}])"
            ));
        }
        match &self.count {
            CountRule::Fixed(0) => out.push("sources.count.fixed must be at least 1".to_string()),
            CountRule::UniformChoice(set) if set.is_empty() || set.contains(&0) => out.push(
                "sources.count.uniform_choice must be a nonempty set of positive counts".to_string(),
            ),
            _ => {}
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > MIN_SIGMA) {
                out.push(format!("sources.fixed_sigma must exceed {MIN_SIGMA} (got {s})"));
            }
        }
        if let Some(centers) = &self.fixed_centers {
            if centers.iter().any(|c| !params.contains(*c, 0.0)) {
                out.push("sources.fixed_centers must lie inside the domain".to_string());
            }
            let ok = match &self.count {
                CountRule::Fixed(n) => *n == centers.len(),
                CountRule::UniformChoice(set) => set.iter().all(|n| *n == centers.len()),
            };
            if !ok {
                out.push(format!(
                    "sources.fixed_centers has {} entries but the count rule asks for a different number",
                    centers.len()
                ));
            }
        }
        out
    }

    /// Largest number of components this sampler can produce.
    pub fn max_count(&self) -> usize {
        match &self.count {
            CountRule::Fixed(n) => *n,
            CountRule::UniformChoice(set) => set.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Draws a random normalized mixture according to `cfg`.
pub fn sample_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SourceSamplerConfig,
    params: &PhysParams,
) -> Result<SourceMixture> {
    let count = match &cfg.count {
        CountRule::Fixed(n) => *n,
        CountRule::UniformChoice(set) => {
            if set.is_empty() {
                return Err(Error::InvalidParameter("empty count choice set".into()));
            }
            set[rng.random_range(0..set.len())]
        }
    };
    if let Some(centers) = &cfg.fixed_centers {
        if centers.len() != count {
            return Err(Error::InvalidParameter(format!(
                "{} fixed centers given but {count} components requested",
                centers.len()
            )));
        }
    }
    let [lo, hi] = cfg.sigma_range;
    let mut components = Vec::with_capacity(count);
    for i in 0..count {
        let center = match &cfg.fixed_centers {
            Some(c) => c[i],
            None => [
                uniform(rng, cfg.region.x[0], cfg.region.x[1]),
                uniform(rng, cfg.region.y[0], cfg.region.y[1]),
            ],
        };
        let sigma = match cfg.fixed_sigma {
            Some(s) => s,
            None => uniform(rng, lo, hi),
        };
        components.push(GaussianComponent::new(center, sigma));
    }
    SourceMixture::new(components, params)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Fraction of the domain covered by the union of the components' 3-sigma disks.
///
/// Exact for a single disk inside the domain; otherwise estimated by counting
/// cell centers of a 512 x 512 grid.
pub fn effective_support_fraction(mix: &SourceMixture, params: &PhysParams) -> f64 {
    let comps = mix.components();
    if let [c] = comps {
        let r = 3.0 * c.sigma;
        let [x, y] = c.center;
        if x - r >= 0.0 && x + r <= params.lx && y - r >= 0.0 && y + r <= params.ly {
            return std::f64::consts::PI * r * r / params.area();
        }
    }
    let n = 512;
    let (hx, hy) = (params.lx / n as f64, params.ly / n as f64);
    let mut inside = 0usize;
    for j in 0..n {
        let py = (j as f64 + 0.5) * hy;
        for i in 0..n {
            let px = (i as f64 + 0.5) * hx;
            if comps.iter().any(|c| {
                let (dx, dy) = (px - c.center[0], py - c.center[1]);
                dx * dx + dy * dy <= 9.0 * c.sigma * c.sigma
            }) {
                inside += 1;
            }
        }
    }
    inside as f64 / (n * n) as f64
}
