//! Time-dependent convection-diffusion with a source: backward Euler in
//! time, P1 elements with streamline-upwind (SUPG) stabilization in space.
//!
//! Weak form per step, for every test function `phi`:
//!
//! ```text
//! ((c+ - c-)/dt, phi) + (D grad c+, grad phi) - (v c+, grad phi)
//!     + sum_e tau_e (v . grad phi, R(c+))_e = (beta_2 f, phi)
//! R(c) = (c - c-)/dt + v . grad c + (div v) c - beta_2 f
//! ```
//!
//! The diffusion part of the residual is dropped since it vanishes on P1
//! elements. Boundary terms disappear under `v . n = 0` and zero diffusive
//! flux.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::element::{dot2, P1Triangle, MIDPOINT_RULE};
use crate::error::{Error, Result};
use crate::fem_darcy::{ScalarField, Units, VectorField};
use crate::mesh::TriMesh;
use crate::physics::{PhysParams, SourceMixture};
use crate::sparse::{bicgstab, CsrMatrix};

pub const TRANSPORT_TOL: f64 = 1e-10;
/// Below this element-mean speed the stabilization is switched off.
pub const TAU_SPEED_FLOOR: f64 = 1e-14;
pub const DEFAULT_SNAPSHOTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub dt: f64,
    pub final_time: f64,
    pub save_times: Vec<f64>,
}

/// Default step: 1 s up to T = 50, 5 s beyond.
pub fn default_dt(final_time: f64) -> f64 {
    if final_time <= 50.0 {
        1.0
    } else {
        5.0
    }
}

/// `n` uniformly spaced times in `(0, T]`.
pub fn uniform_save_times(final_time: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| final_time * i as f64 / n as f64).collect()
}

impl TransportConfig {
    pub fn new(final_time: f64) -> Self {
        Self {
            dt: default_dt(final_time),
            final_time,
            save_times: uniform_save_times(final_time, DEFAULT_SNAPSHOTS),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.final_time / self.dt).round() as usize
    }

    fn step_index(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        ((t / self.dt - k).abs() <= 1e-9 * k.max(1.0)).then_some(k as usize)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(format!("transport.dt must be positive (got {})", self.dt));
            return out;
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            out.push(format!("transport.final_time must be positive (got {})", self.final_time));
            return out;
        }
        if self.step_index(self.final_time).is_none() {
            out.push(format!(
                "transport: final time {} is not a whole number of steps of {}",
                self.final_time, self.dt
            ));
        }
        if self.save_times.is_empty() {
            out.push("transport.save_times must not be empty".into());
        }
        for w in self.save_times.windows(2) {
            if w[1] <= w[0] {
                out.push("transport.save_times must be strictly increasing".into());
                break;
            }
        }
        for &t in &self.save_times {
            if !(t > 0.0 && t <= self.final_time * (1.0 + 1e-12)) {
                out.push(format!("transport.save_times entry {t} lies outside (0, {}]", self.final_time));
            } else if self.step_index(t).is_none() {
                out.push(format!("transport.save_times entry {t} is not on the step grid (dt = {})", self.dt));
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

/// Snapshots of the concentration at increasing times.
#[derive(Debug, Clone)]
pub struct ConcentrationSeries {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
}

impl ConcentrationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &ScalarField)> {
        self.times.last().map(|&t| (t, self.fields.last().unwrap()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &ScalarField)> {
        self.times.iter().copied().zip(&self.fields)
    }
}

/// Assembled backward-Euler operator for a fixed mesh, velocity and step.
///
/// One step solves `lhs c+ = history c- + load`.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    pub lhs: CsrMatrix,
    pub history: CsrMatrix,
    pub load: Vec<f64>,
    pub dt: f64,
}

struct ElementData {
    e: P1Triangle,
    /// Velocity at the three corners.
    vel: [[f64; 2]; 3],
    tau: f64,
    div: f64,
}

fn element_data(mesh: &TriMesh, v: &VectorField, t: usize) -> Result<ElementData> {
    let e = P1Triangle::new(mesh.corners(t));
    if e.area < 1e-14 {
        return Err(Error::DegenerateTriangle { index: t, area: e.area });
    }
    let tri = mesh.triangles()[t];
    let vel = tri.map(|k| v.values[k]);
    let mean = [
        (vel[0][0] + vel[1][0] + vel[2][0]) / 3.0,
        (vel[0][1] + vel[1][1] + vel[2][1]) / 3.0,
    ];
    let speed = mean[0].hypot(mean[1]);
    let tau = if speed < TAU_SPEED_FLOOR {
        0.0
    } else {
        mesh.diameter(t) / (2.0 * speed)
    };
    let gx = e.gradient(vel.map(|w| w[0]));
    let gy = e.gradient(vel.map(|w| w[1]));
    Ok(ElementData {
        e,
        vel,
        tau,
        div: gx[0] + gy[1],
    })
}

fn vel_at(vel: &[[f64; 2]; 3], lam: [f64; 3]) -> [f64; 2] {
    [
        lam[0] * vel[0][0] + lam[1] * vel[1][0] + lam[2] * vel[2][0],
        lam[0] * vel[0][1] + lam[1] * vel[1][1] + lam[2] * vel[2][1],
    ]
}

impl TransportOperator {
    pub fn new(
        mesh: &TriMesh,
        velocity: &VectorField,
        source: Option<&SourceMixture>,
        params: &PhysParams,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive (got {dt})")));
        }
        velocity.check_mesh(mesh)?;
        let n = mesh.n_vertices();
        let mut lhs = Vec::with_capacity(9 * mesh.n_triangles());
        let mut hist = Vec::with_capacity(9 * mesh.n_triangles());
        let mut load = vec![0.0; n];
        let d = params.diffusivity;
        let b2 = params.solute_rate;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let ed = element_data(mesh, velocity, t)?;
            let e = &ed.e;
            let k = e.stiffness();
            let m = e.mass();
            let mut a = [[0.0; 3]; 3];
            let mut h = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = m[i][j] / dt + d * k[i][j];
                    h[i][j] = m[i][j] / dt;
                }
            }
            let mut f_loc = [0.0; 3];
            // Midpoint rule: exact for the quadratic integrands below.
            for (lam, w) in MIDPOINT_RULE {
                let wq = w * e.area;
                let vq = vel_at(&ed.vel, lam);
                let stream = e.grads.map(|g| dot2(vq, g));
                let fq = source.map_or(0.0, |s| b2 * s.eval(e.point(lam)));
                for i in 0..3 {
                    f_loc[i] += wq * fq * (lam[i] + ed.tau * stream[i]);
                    for j in 0..3 {
                        // -(v c, grad phi_i)
                        a[i][j] -= wq * lam[j] * stream[i];
                        if ed.tau > 0.0 {
                            let r = lam[j] / dt + stream[j] + ed.div * lam[j];
                            a[i][j] += wq * ed.tau * stream[i] * r;
                            h[i][j] += wq * ed.tau * stream[i] * lam[j] / dt;
                        }
                    }
                }
            }
            for i in 0..3 {
                load[tri[i]] += f_loc[i];
                for j in 0..3 {
                    lhs.push((tri[i], tri[j], a[i][j]));
                    hist.push((tri[i], tri[j], h[i][j]));
                }
            }
        }
        Ok(Self {
            lhs: CsrMatrix::from_triplets(n, n, &lhs),
            history: CsrMatrix::from_triplets(n, n, &hist),
            load,
            dt,
        })
    }

    pub fn step(&self, c_prev: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.history.mul_vec(c_prev);
        for (r, f) in rhs.iter_mut().zip(&self.load) {
            *r += f;
        }
        let max_iter = 20 * rhs.len() + 200;
        bicgstab(&self.lhs, &rhs, Some(c_prev), TRANSPORT_TOL, max_iter).map(|(x, _)| x)
    }
}

/// One backward-Euler step. Assembles the operator on every call; use
/// [`TransportOperator`] or [`run_transport`] for repeated steps.
pub fn step(
    mesh: &TriMesh,
    velocity: &VectorField,
    c_prev: &ScalarField,
    source: Option<&SourceMixture>,
    params: &PhysParams,
    dt: f64,
) -> Result<ScalarField> {
    c_prev.check_mesh(mesh)?;
    let op = TransportOperator::new(mesh, velocity, source, params, dt)?;
    Ok(ScalarField::new(op.step(&c_prev.values)?, Units::Concentration))
}

/// Integrates from `c = 0` to the final time, keeping the requested snapshots.
pub fn run_transport(
    mesh: &TriMesh,
    velocity: &VectorField,
    source: &SourceMixture,
    params: &PhysParams,
    cfg: &TransportConfig,
) -> Result<ConcentrationSeries> {
    cfg.validate()?;
    let op = TransportOperator::new(mesh, velocity, Some(source), params, cfg.dt)?;
    let wanted: Vec<usize> = cfg.save_times.iter().map(|&t| cfg.step_index(t).unwrap()).collect();
    let mut c = vec![0.0; mesh.n_vertices()];
    let mut series = ConcentrationSeries {
        times: Vec::with_capacity(wanted.len()),
        fields: Vec::with_capacity(wanted.len()),
    };
    let mut next = 0;
    for k in 1..=cfg.n_steps() {
        c = op.step(&c)?;
        while next < wanted.len() && wanted[next] == k {
            series.times.push(cfg.save_times[next]);
            series.fields.push(ScalarField::new(c.clone(), Units::Concentration));
            next += 1;
        }
    }
    Ok(series)
}

/// Vertex-aligned `k x k` grid over the domain with precomputed barycentric
/// weights. Grid index `[iy, ix]` sits at `(Lx ix/(k-1), Ly iy/(k-1))`.
#[derive(Debug, Clone)]
pub struct GridInterpolator {
    k: usize,
    weights: Vec<([usize; 3], [f64; 3])>,
}

pub fn grid_points(k: usize, lx: f64, ly: f64) -> Vec<[f64; 2]> {
    let step = |l: f64, i: usize| if k == 1 { 0.5 * l } else { l * i as f64 / (k - 1) as f64 };
    let mut out = Vec::with_capacity(k * k);
    for iy in 0..k {
        for ix in 0..k {
            out.push([step(lx, ix), step(ly, iy)]);
        }
    }
    out
}

impl GridInterpolator {
    pub fn new(mesh: &TriMesh, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("grid size must be positive".into()));
        }
        let [lx, ly] = mesh.extent();
        let weights = grid_points(k, lx, ly)
            .into_iter()
            .map(|p| {
                let (t, lam) = mesh.locate(p)?;
                Ok((mesh.triangles()[t], lam))
            })
            .collect::<Result<_>>()?;
        Ok(Self { k, weights })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn apply(&self, values: &[f64]) -> Array2<f64> {
        let data = self
            .weights
            .iter()
            .map(|(tri, lam)| lam[0] * values[tri[0]] + lam[1] * values[tri[1]] + lam[2] * values[tri[2]])
            .collect();
        Array2::from_shape_vec((self.k, self.k), data).expect("k*k weights")
    }
}

pub fn interpolate_to_grid(mesh: &TriMesh, field: &ScalarField, k: usize) -> Result<Array2<f64>> {
    field.check_mesh(mesh)?;
    Ok(GridInterpolator::new(mesh, k)?.apply(&field.values))
}

pub fn interpolate_series(mesh: &TriMesh, series: &ConcentrationSeries, k: usize) -> Result<Vec<Array2<f64>>> {
    let g = GridInterpolator::new(mesh, k)?;
    Ok(series.fields.iter().map(|f| g.apply(&f.values)).collect())
}
