//! Branch sensors and trunk collocation points for one training instance.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem_darcy::{divergence_identity, ScalarField, VectorField};
use crate::mesh::TriMesh;
use crate::physics::{GaussianComponent, PhysParams, Point, SourceMixture};

/// Collocation counts. The structured strategy uses `n_r x n_theta` polar
/// points per component plus `n_rand` uniform points; setting
/// `n_r = n_theta = 0` and `n_rand_per_component = n_r * n_theta` gives the
/// all-random strategy with the same budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Branch sensors per axis.
    pub m: usize,
    pub p_bcs: usize,
    pub p_ics: usize,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_rand: usize,
    /// Extra uniform points added per source component.
    pub n_rand_per_component: usize,
    /// Training instances N.
    pub n_train: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            m: 30,
            p_bcs: 100,
            p_ics: 5,
            n_r: 30,
            n_theta: 30,
            n_rand: 300,
            n_rand_per_component: 0,
            n_train: 2000,
        }
    }
}

impl SamplingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m < 2 {
            out.push(format!("sampling.m must be at least 2 (got {})", self.m));
        }
        if (self.n_r == 0) != (self.n_theta == 0) {
            out.push("sampling.n_r and sampling.n_theta must both be zero or both positive".into());
        }
        if self.n_train == 0 {
            out.push("sampling.n_train must be positive".into());
        }
        out
    }

    /// Residual points for a mixture with `components` components.
    pub fn n_residual(&self, components: usize) -> usize {
        components * (self.n_r * self.n_theta + self.n_rand_per_component) + self.n_rand
    }

    /// Same residual budget with every point drawn uniformly.
    pub fn all_random(&self) -> Self {
        Self {
            n_r: 0,
            n_theta: 0,
            n_rand_per_component: self.n_rand_per_component + self.n_r * self.n_theta,
            ..*self
        }
    }
}

/// Interior space-time point with the flow data the residual needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub pos: Point,
    pub t: f64,
    pub v: [f64; 2],
    pub div_v: f64,
    pub f_val: f64,
    /// Interpolated pressure, kept so `div_v` can be re-derived.
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub pos: Point,
    pub t: f64,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

/// Point at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialPoint {
    pub pos: Point,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollocationSet {
    /// Polar points first, then the uniform ones.
    pub residual: Vec<ResidualPoint>,
    pub n_source: usize,
    pub boundary: Vec<BoundaryPoint>,
    pub initial: Vec<InitialPoint>,
}

impl CollocationSet {
    pub fn n_rand(&self) -> usize {
        self.residual.len() - self.n_source
    }
}

/// Source sampled on the fixed `m x m` sensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchInput {
    pub m: usize,
    pub values: Vec<f64>,
}

/// Vertex-aligned sensor grid including the boundary, row-major in y then x.
pub fn sensor_points(m: usize, params: &PhysParams) -> Vec<Point> {
    let mut out = Vec::with_capacity(m * m);
    let d = (m.max(2) - 1) as f64;
    for j in 0..m {
        for i in 0..m {
            out.push([params.lx * i as f64 / d, params.ly * j as f64 / d]);
        }
    }
    out
}

pub fn branch_sensors(mix: &SourceMixture, m: usize, params: &PhysParams) -> Result<BranchInput> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("sensor grid needs m >= 2 (got {m})")));
    }
    let values = sensor_points(m, params).into_iter().map(|p| mix.eval(p)).collect();
    Ok(BranchInput { m, values })
}

fn clamp_to_domain(p: Point, params: &PhysParams) -> Point {
    [p[0].clamp(0.0, params.lx), p[1].clamp(0.0, params.ly)]
}

/// `n_r x n_theta` points on rings of radius `3 sigma j / n_r` around the
/// component center, each with its own uniform time in `[0, T]`.
pub fn polar_points<R: Rng + ?Sized>(
    comp: &GaussianComponent,
    n_r: usize,
    n_theta: usize,
    params: &PhysParams,
    rng: &mut R,
) -> Vec<(Point, f64)> {
    let mut out = Vec::with_capacity(n_r * n_theta);
    for j in 1..=n_r {
        let r = 3.0 * comp.sigma * j as f64 / n_r as f64;
        for l in 0..n_theta {
            let th = 2.0 * PI * l as f64 / n_theta as f64;
            let p = [comp.center[0] + r * th.cos(), comp.center[1] + r * th.sin()];
            let t = rng.random_range(0.0..=params.final_time);
            out.push((clamp_to_domain(p, params), t));
        }
    }
    out
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, params: &PhysParams) -> Point {
    [rng.random_range(0.0..=params.lx), rng.random_range(0.0..=params.ly)]
}

/// Uniform point on the open edges of the rectangle, edge chosen with
/// probability proportional to its length.
pub fn boundary_point<R: Rng + ?Sized>(rng: &mut R, params: &PhysParams) -> (Point, [f64; 2]) {
    let (lx, ly) = (params.lx, params.ly);
    let s = loop {
        let s = rng.random_range(0.0..2.0 * (lx + ly));
        // Corners have no unique normal.
        if s != 0.0 && s != lx && s != lx + ly && s != 2.0 * lx + ly {
            break s;
        }
    };
    if s < lx {
        ([s, 0.0], [0.0, -1.0])
    } else if s < lx + ly {
        ([lx, s - lx], [1.0, 0.0])
    } else if s < 2.0 * lx + ly {
        ([2.0 * lx + ly - s, ly], [0.0, 1.0])
    } else {
        ([0.0, 2.0 * (lx + ly) - s], [-1.0, 0.0])
    }
}

/// Attaches interpolated velocity, pressure, the divergence identity and the
/// analytic source value to an interior point.
pub fn residual_point(
    mesh: &TriMesh,
    pressure: &ScalarField,
    velocity: &VectorField,
    mix: &SourceMixture,
    params: &PhysParams,
    pos: Point,
    t: f64,
) -> Result<ResidualPoint> {
    let (tri, lam) = mesh.locate(pos)?;
    let ids = mesh.triangles()[tri];
    let mut v = [0.0; 2];
    let mut p = 0.0;
    for k in 0..3 {
        v[0] += lam[k] * velocity.values[ids[k]][0];
        v[1] += lam[k] * velocity.values[ids[k]][1];
        p += lam[k] * pressure.values[ids[k]];
    }
    let f_val = mix.eval(pos);
    Ok(ResidualPoint {
        pos,
        t,
        v,
        div_v: divergence_identity(p, f_val, params),
        f_val,
        p,
    })
}

/// Draws the four collocation subsets for one instance. Random draws happen
/// in a fixed order: polar times per component, uniform residual points,
/// boundary points, initial points.
pub fn build_collocation<R: Rng + ?Sized>(
    mix: &SourceMixture,
    mesh: &TriMesh,
    pressure: &ScalarField,
    velocity: &VectorField,
    params: &PhysParams,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<CollocationSet> {
    pressure.check_mesh(mesh)?;
    velocity.check_mesh(mesh)?;
    let n_comp = mix.components().len();
    let mut raw = Vec::with_capacity(cfg.n_residual(n_comp));
    for comp in mix.components() {
        raw.extend(polar_points(comp, cfg.n_r, cfg.n_theta, params, rng));
    }
    let n_source = raw.len();
    for _ in 0..cfg.n_rand + n_comp * cfg.n_rand_per_component {
        let p = uniform_point(rng, params);
        raw.push((p, rng.random_range(0.0..=params.final_time)));
    }
    let residual = raw
        .into_iter()
        .map(|(p, t)| residual_point(mesh, pressure, velocity, mix, params, p, t))
        .collect::<Result<Vec<_>>>()?;
    let boundary = (0..cfg.p_bcs)
        .map(|_| {
            let (pos, normal) = boundary_point(rng, params);
            BoundaryPoint {
                pos,
                t: rng.random_range(0.0..=params.final_time),
                normal,
            }
        })
        .collect();
    let initial = (0..cfg.p_ics)
        .map(|_| InitialPoint {
            pos: uniform_point(rng, params),
        })
        .collect();
    Ok(CollocationSet {
        residual,
        n_source,
        boundary,
        initial,
    })
}
