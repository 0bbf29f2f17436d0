//! Steady Darcy flow with a pressure-dependent sink.
//!
//! The mixed system `v = -(K/mu) grad p`, `div v = -alpha p + beta_1 f` is
//! solved in primal form: substituting Darcy's law gives the screened
//! equation `-(K/mu) lap p + alpha p = beta_1 f`, discretized with continuous
//! P1 elements. The no-flux condition `v . n = 0` is the natural boundary
//! condition of this form; pressure is left free on the boundary (alpha > 0
//! keeps the problem well posed). This replaces an H(div)-conforming mixed
//! discretization; only the velocity is consumed downstream.

use serde::{Deserialize, Serialize};

use crate::element::{P1Triangle, MIDPOINT_RULE};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::physics::{PhysParams, Point, SourceMixture};
use crate::sparse::{cg, CsrMatrix, SparseSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// Pa
    Pressure,
    /// mm/s
    Velocity,
    /// mmol/mm^2
    Concentration,
    Dimensionless,
}

/// Piecewise-linear field given by its vertex values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField<T> {
    pub values: Vec<T>,
    pub units: Units,
}

pub type ScalarField = NodalField<f64>;
pub type VectorField = NodalField<[f64; 2]>;

impl<T: Copy> NodalField<T> {
    pub fn new(values: Vec<T>, units: Units) -> Self {
        Self { values, units }
    }

    pub fn constant(n: usize, value: T, units: Units) -> Self {
        Self {
            values: vec![value; n],
            units,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_mesh(&self, mesh: &TriMesh) -> Result<()> {
        if self.values.len() != mesh.n_vertices() {
            return Err(Error::Shape(format!(
                "field has {} values but the mesh has {} vertices",
                self.values.len(),
                mesh.n_vertices()
            )));
        }
        Ok(())
    }
}

impl ScalarField {
    pub fn at(&self, mesh: &TriMesh, p: Point) -> Result<f64> {
        mesh.interpolate(&self.values, p)
    }

    /// Integral over the domain of the P1 interpolant.
    pub fn integral(&self, mesh: &TriMesh) -> f64 {
        mesh.triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| mesh.area(t) * tri.iter().map(|&v| self.values[v]).sum::<f64>() / 3.0)
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl VectorField {
    pub fn at(&self, mesh: &TriMesh, p: Point) -> Result<[f64; 2]> {
        let (t, lam) = mesh.locate(p)?;
        let tri = mesh.triangles()[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            let v = self.values[tri[k]];
            out[0] += lam[k] * v[0];
            out[1] += lam[k] * v[1];
        }
        Ok(out)
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }
}

fn element(mesh: &TriMesh, t: usize) -> Result<P1Triangle> {
    let e = P1Triangle::new(mesh.corners(t));
    if e.area < 1e-14 {
        return Err(Error::DegenerateTriangle { index: t, area: e.area });
    }
    Ok(e)
}

/// Assembles the Darcy system for an arbitrary volumetric load `g`
/// (the right-hand side is `beta_1 * g`).
pub fn assemble_darcy_with<F: Fn(Point) -> f64>(
    mesh: &TriMesh,
    params: &PhysParams,
    load: F,
) -> Result<SparseSystem> {
    let n = mesh.n_vertices();
    let mobility = params.mobility();
    let mut trip = Vec::with_capacity(mesh.n_triangles() * 9);
    let mut rhs = vec![0.0; n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = element(mesh, t)?;
        let k = e.stiffness();
        let m = e.mass();
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], mobility * k[i][j] + params.sink * m[i][j]));
            }
        }
        for (lam, w) in MIDPOINT_RULE {
            let g = params.fluid_rate * load(e.point(lam)) * w * e.area;
            for i in 0..3 {
                rhs[tri[i]] += g * lam[i];
            }
        }
    }
    Ok(SparseSystem {
        symmetric: true,
        matrix: CsrMatrix::from_triplets(n, n, &trip),
        rhs,
    })
}

/// P1 Galerkin system for `-(K/mu) lap p + alpha p = beta_1 f` with natural
/// zero-flux boundary conditions.
pub fn assemble_darcy(mesh: &TriMesh, params: &PhysParams, source: &SourceMixture) -> Result<SparseSystem> {
    assemble_darcy_with(mesh, params, |p| source.eval(p))
}

pub const DARCY_TOL: f64 = 1e-10;

/// Solves the pressure equation.
pub fn solve_pressure(mesh: &TriMesh, params: &PhysParams, source: &SourceMixture) -> Result<ScalarField> {
    let sys = assemble_darcy(mesh, params, source)?;
    let max_iter = 10 * mesh.n_vertices() + 100;
    let (p, _) = cg(&sys.matrix, &sys.rhs, None, DARCY_TOL, max_iter)?;
    Ok(ScalarField::new(p, Units::Pressure))
}

/// Vertex velocities from the elementwise-constant pressure gradient,
/// averaged over incident triangles with area weights.
pub fn recover_velocity(mesh: &TriMesh, p: &ScalarField, params: &PhysParams) -> VectorField {
    let mut acc = vec![[0.0; 2]; mesh.n_vertices()];
    let mut weight = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = P1Triangle::new(mesh.corners(t));
        let g = e.gradient(tri.map(|v| p.values[v]));
        for &v in tri {
            acc[v][0] += e.area * g[0];
            acc[v][1] += e.area * g[1];
            weight[v] += e.area;
        }
    }
    let scale = -params.mobility();
    let values = acc
        .into_iter()
        .zip(weight)
        .map(|(a, w)| [scale * a[0] / w, scale * a[1] / w])
        .collect();
    VectorField::new(values, Units::Velocity)
}

/// `div v` at a point through the mass-balance identity `-alpha p + beta_1 f`.
pub fn divergence_v_at(
    mesh: &TriMesh,
    p: &ScalarField,
    source: &SourceMixture,
    params: &PhysParams,
    point: Point,
) -> Result<f64> {
    let pv = p.at(mesh, point)?;
    Ok(divergence_identity(pv, source.eval(point), params))
}

#[inline]
pub fn divergence_identity(pressure: f64, f: f64, params: &PhysParams) -> f64 {
    -params.sink * pressure + params.fluid_rate * f
}

/// Pressure and velocity for one source.
#[derive(Debug, Clone)]
pub struct DarcySolution {
    pub pressure: ScalarField,
    pub velocity: VectorField,
}

pub fn solve_darcy(mesh: &TriMesh, params: &PhysParams, source: &SourceMixture) -> Result<DarcySolution> {
    let pressure = solve_pressure(mesh, params, source)?;
    let velocity = recover_velocity(mesh, &pressure, params);
    Ok(DarcySolution { pressure, velocity })
}

/// Diagnostic Peclet number `max |v| * L / D` with `L = max(Lx, Ly)`.
pub fn peclet(velocity: &VectorField, params: &PhysParams) -> f64 {
    velocity.max_norm() * params.lx.max(params.ly) / params.diffusivity
}
