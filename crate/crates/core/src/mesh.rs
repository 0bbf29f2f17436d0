//! Adaptive conforming triangle meshes over the rectangular domain.
//!
//! A quadtree is refined until each leaf's diagonal is below the source-driven
//! size field at the leaf center, balanced so that edge neighbors differ by at
//! most one level, and then triangulated: regular leaves split along one
//! diagonal, leaves carrying hanging edge midpoints get a center vertex and a
//! fan that closes them conformingly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{PhysParams, Point, SourceMixture};

const MAX_LEVEL: u8 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeFieldParams {
    pub k0: f64,
    pub k1: f64,
    pub sigma_ref: f64,
    /// h_max = h_max_factor * max(Lx, Ly).
    pub h_max_factor: f64,
    /// h_min = min_i sigma_i / h_min_divisor.
    pub h_min_divisor: f64,
    /// Lower bound on the refinement radius as a fraction of min(Lx, Ly).
    pub floor_radius_factor: f64,
    /// Overrides the derived h_min (used for uniform meshes).
    pub h_min_override: Option<f64>,
    pub h_max_override: Option<f64>,
    /// Refinement budget on quadtree leaves.
    pub max_leaves: usize,
}

impl Default for SizeFieldParams {
    fn default() -> Self {
        Self {
            k0: 10.0,
            k1: 10.0,
            sigma_ref: 1e-3,
            h_max_factor: 0.04,
            h_min_divisor: 6.0,
            floor_radius_factor: 0.1,
            h_min_override: None,
            h_max_override: None,
            max_leaves: 2_000_000,
        }
    }
}

impl SizeFieldParams {
    /// Parameters producing a uniform size field `h` everywhere.
    pub fn uniform(h: f64) -> Self {
        Self {
            h_min_override: Some(h),
            h_max_override: Some(h),
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("k0", self.k0),
            ("k1", self.k1),
            ("sigma_ref", self.sigma_ref),
            ("h_max_factor", self.h_max_factor),
            ("h_min_divisor", self.h_min_divisor),
            ("floor_radius_factor", self.floor_radius_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("mesh.{name} must be positive (got {v})"));
            }
        }
        for (name, v) in [
            ("h_min_override", self.h_min_override),
            ("h_max_override", self.h_max_override),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    out.push(format!("mesh.{name} must be positive (got {v})"));
                }
            }
        }
        if self.max_leaves == 0 {
            out.push("mesh.max_leaves must be positive".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Refinement {
    center: Point,
    radius: f64,
    width: f64,
}

/// The background size field h(x, y) for one source mixture.
#[derive(Debug, Clone)]
pub struct SizeField {
    h_min: f64,
    h_max: f64,
    sigma_min: f64,
    zones: Vec<Refinement>,
}

impl SizeField {
    pub fn new(mix: &SourceMixture, sfp: &SizeFieldParams, params: &PhysParams) -> Self {
        let floor = sfp.floor_radius_factor * params.lx.min(params.ly);
        let zones = mix
            .components()
            .iter()
            .map(|c| {
                let k = sfp.k0 + sfp.k1 * (sfp.sigma_ref - c.sigma) / sfp.sigma_ref;
                let radius = (k * c.sigma).max(floor);
                Refinement {
                    center: c.center,
                    radius,
                    width: radius / 2.0,
                }
            })
            .collect();
        let sigma_min = mix.min_sigma();
        let h_min = sfp
            .h_min_override
            .unwrap_or(sigma_min / sfp.h_min_divisor);
        let h_max = sfp
            .h_max_override
            .unwrap_or(sfp.h_max_factor * params.lx.max(params.ly));
        Self {
            h_min,
            h_max,
            sigma_min,
            zones,
        }
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Refinement radii r_i, in component order.
    pub fn radii(&self) -> Vec<f64> {
        self.zones.iter().map(|z| z.radius).collect()
    }

    /// Largest slope of h, for continuity checks.
    pub fn lipschitz_bound(&self) -> f64 {
        // d/dr of 0.5*(1 + tanh((r - r_i)/delta_i)) peaks at 1/(2 delta_i); the
        // other factors of the product are bounded by one.
        let sum: f64 = self.zones.iter().map(|z| 0.5 / z.width).sum();
        (self.h_max - self.h_min).abs() * sum
    }

    pub fn eval(&self, p: Point) -> f64 {
        let prod: f64 = self
            .zones
            .iter()
            .map(|z| {
                let d = ((p[0] - z.center[0]).powi(2) + (p[1] - z.center[1]).powi(2)).sqrt();
                0.5 * (1.0 + ((d - z.radius) / z.width).tanh())
            })
            .product();
        self.h_min + (self.h_max - self.h_min) * prod
    }
}

/// Evaluates the mesh size field at `p`.
pub fn size_field(
    sources: &SourceMixture,
    sfp: &SizeFieldParams,
    params: &PhysParams,
    p: Point,
) -> f64 {
    SizeField::new(sources, sfp, params).eval(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

/// A conforming triangle mesh with counterclockwise triangles.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    /// `neighbors[t][k]` is the triangle across the edge opposite local vertex k.
    neighbors: Vec<[Option<usize>; 3]>,
    vertex_triangles: Vec<Vec<usize>>,
    extent: [f64; 2],
    buckets: LocateBuckets,
}

#[derive(Debug, Clone)]
struct LocateBuckets {
    nx: usize,
    ny: usize,
    start: Vec<usize>,
}

impl TriMesh {
    /// Builds a mesh from raw connectivity. Triangles are reoriented to be
    /// counterclockwise; degenerate triangles are rejected.
    pub fn from_parts(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        extent: [f64; 2],
    ) -> Result<Self> {
        for (index, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Shape(format!("triangle {index} references a missing vertex")));
            }
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a.abs() < 1e-14 {
                return Err(Error::DegenerateTriangle { index, area: a });
            }
            if a < 0.0 {
                t.swap(1, 2);
            }
        }

        let mut edge_owner: HashMap<(usize, usize), (usize, usize)> =
            HashMap::with_capacity(triangles.len() * 2);
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some((tj, kj)) = edge_owner.remove(&key) {
                    neighbors[ti][k] = Some(tj);
                    neighbors[tj][kj] = Some(ti);
                } else {
                    edge_owner.insert(key, (ti, k));
                }
            }
        }
        let mut boundary_edges: Vec<BoundaryEdge> = edge_owner
            .into_values()
            .map(|(ti, k)| {
                let t = triangles[ti];
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                let (pa, pb) = (vertices[a], vertices[b]);
                let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                let len = (dx * dx + dy * dy).sqrt();
                BoundaryEdge {
                    a,
                    b,
                    normal: [dy / len, -dx / len],
                }
            })
            .collect();
        boundary_edges.sort_by_key(|e| (e.a, e.b));

        let mut vertex_triangles = vec![Vec::new(); vertices.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for &v in t {
                vertex_triangles[v].push(ti);
            }
        }

        let nb = ((triangles.len() as f64 / 4.0).sqrt().ceil() as usize).max(1);
        let mut start = vec![usize::MAX; nb * nb];
        for (ti, t) in triangles.iter().enumerate() {
            let c = centroid(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            let bi = bucket_index(c, extent, nb, nb);
            if start[bi] == usize::MAX {
                start[bi] = ti;
            }
        }
        let mut last = 0;
        for s in start.iter_mut() {
            if *s == usize::MAX {
                *s = last;
            } else {
                last = *s;
            }
        }

        Ok(Self {
            vertices,
            triangles,
            boundary_edges,
            neighbors,
            vertex_triangles,
            extent,
            buckets: LocateBuckets {
                nx: nb,
                ny: nb,
                start,
            },
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn neighbors(&self) -> &[[Option<usize>; 3]] {
        &self.neighbors
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        centroid(a, b, c)
    }

    /// Longest edge of triangle `t` (its diameter).
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    /// Finds the triangle containing `p` and its barycentric coordinates.
    ///
    /// Walks across edges from a start triangle cached in a bucket grid; falls
    /// back to a linear scan if the walk fails to terminate.
    pub fn locate(&self, p: Point) -> Result<(usize, [f64; 3])> {
        let tol = 1e-12 * self.extent[0].max(self.extent[1]);
        if !(p[0] >= -tol && p[0] <= self.extent[0] + tol && p[1] >= -tol && p[1] <= self.extent[1] + tol)
        {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
        let mut t = self.buckets.start[bucket_index(p, self.extent, self.buckets.nx, self.buckets.ny)];
        for _ in 0..self.triangles.len() + 8 {
            let lam = self.barycentric(t, p);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&i, &j| lam[i].total_cmp(&lam[j]));
            if lam[order[0]] >= -1e-12 {
                return Ok((t, clean(lam)));
            }
            let next = order
                .iter()
                .filter(|&&k| lam[k] < -1e-12)
                .find_map(|&k| self.neighbors[t][k]);
            match next {
                Some(n) => t = n,
                None => break,
            }
        }
        self.locate_scan(p)
            .ok_or(Error::OutsideDomain { x: p[0], y: p[1] })
    }

    fn locate_scan(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for t in 0..self.triangles.len() {
            let lam = self.barycentric(t, p);
            let m = lam[0].min(lam[1]).min(lam[2]);
            if best.is_none_or(|b| m > b.2) {
                best = Some((t, lam, m));
            }
        }
        best.filter(|b| b.2 >= -1e-9).map(|(t, lam, _)| (t, clean(lam)))
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let area = signed_area(a, b, c);
        let l0 = signed_area(p, b, c) / area;
        let l1 = signed_area(a, p, c) / area;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Interpolates a nodal scalar field at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Result<f64> {
        let (t, lam) = self.locate(p)?;
        let tri = self.triangles[t];
        Ok(lam[0] * values[tri[0]] + lam[1] * values[tri[1]] + lam[2] * values[tri[2]])
    }
}

fn clean(lam: [f64; 3]) -> [f64; 3] {
    let l = lam.map(|v| v.max(0.0));
    let s = l[0] + l[1] + l[2];
    [l[0] / s, l[1] / s, 1.0 - l[0] / s - l[1] / s]
}

fn bucket_index(p: Point, extent: [f64; 2], nx: usize, ny: usize) -> usize {
    let i = ((p[0] / extent[0] * nx as f64) as isize).clamp(0, nx as isize - 1) as usize;
    let j = ((p[1] / extent[1] * ny as f64) as isize).clamp(0, ny as isize - 1) as usize;
    j * nx + i
}

#[inline]
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

#[inline]
fn centroid(a: Point, b: Point, c: Point) -> Point {
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Cell key: (level, i, j) with `0 <= i, j < 2^level`.
type Cell = (u8, u32, u32);

struct Quadtree {
    lx: f64,
    ly: f64,
    /// Every node of the tree; the flag marks leaves.
    nodes: HashMap<Cell, bool>,
    leaves: usize,
}

impl Quadtree {
    fn cell_size(&self, level: u8) -> (f64, f64) {
        let n = (1u64 << level) as f64;
        (self.lx / n, self.ly / n)
    }

    fn cell_center(&self, (l, i, j): Cell) -> Point {
        let (w, h) = self.cell_size(l);
        [(i as f64 + 0.5) * w, (j as f64 + 0.5) * h]
    }

    fn split(&mut self, (l, i, j): Cell) {
        self.nodes.insert((l, i, j), false);
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            self.nodes.insert((l + 1, 2 * i + di, 2 * j + dj), true);
        }
        self.leaves += 3;
    }

    /// The leaf covering the same-level region `(l, i, j)`, if it is this
    /// cell or an ancestor of it.
    fn covering_leaf(&self, (l, i, j): Cell) -> Option<Cell> {
        for up in 0..=l {
            let key = (l - up, i >> up, j >> up);
            match self.nodes.get(&key) {
                Some(true) => return Some(key),
                Some(false) => return None,
                None => continue,
            }
        }
        None
    }

    fn is_subdivided(&self, key: Cell) -> bool {
        matches!(self.nodes.get(&key), Some(false))
    }
}

fn edge_neighbors((l, i, j): Cell) -> impl Iterator<Item = Cell> {
    let n = 1i64 << l;
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .filter_map(move |(di, dj)| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            (a >= 0 && b >= 0 && a < n && b < n).then_some((l, a as u32, b as u32))
        })
}

fn morton(x: u32, y: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut v = v as u64;
        v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
        v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
        v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
        v = (v | (v << 2)) & 0x3333_3333_3333_3333;
        v = (v | (v << 1)) & 0x5555_5555_5555_5555;
        v
    }
    spread(x) | (spread(y) << 1)
}

/// Generates the adaptive mesh for `sources`.
pub fn generate_mesh(
    sources: &SourceMixture,
    sfp: &SizeFieldParams,
    params: &PhysParams,
) -> Result<TriMesh> {
    let field = SizeField::new(sources, sfp, params);
    generate_mesh_with(&field, sfp.max_leaves, params)
}

/// Meshes the domain against an arbitrary size field.
pub fn generate_mesh_with(field: &SizeField, max_leaves: usize, params: &PhysParams) -> Result<TriMesh> {
    let min_extent = params.lx.min(params.ly);
    if !(field.h_min() >= 1e-4 * min_extent) {
        return Err(Error::InvalidParameter(format!(
            "h_min = {} is below 1e-4 * min(Lx, Ly)",
            field.h_min()
        )));
    }
    let mut tree = Quadtree {
        lx: params.lx,
        ly: params.ly,
        nodes: HashMap::new(),
        leaves: 1,
    };
    tree.nodes.insert((0, 0, 0), true);

    let budget = |leaves: usize| -> Result<()> {
        if leaves > max_leaves {
            Err(Error::RefinementBudget {
                leaves,
                cap: max_leaves,
                sigma: field.sigma_min,
            })
        } else {
            Ok(())
        }
    };

    // Size-driven refinement.
    let mut stack = vec![(0u8, 0u32, 0u32)];
    while let Some(cell) = stack.pop() {
        let (w, h) = tree.cell_size(cell.0);
        let diag = (w * w + h * h).sqrt();
        if cell.0 < MAX_LEVEL && diag > field.eval(tree.cell_center(cell)) {
            tree.split(cell);
            budget(tree.leaves)?;
            let (l, i, j) = cell;
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                stack.push((l + 1, 2 * i + di, 2 * j + dj));
            }
        }
    }

    // 2:1 edge balance.
    let mut work: Vec<Cell> = tree
        .nodes
        .iter()
        .filter_map(|(k, leaf)| leaf.then_some(*k))
        .collect();
    work.sort_unstable();
    while let Some(cell) = work.pop() {
        if tree.nodes.get(&cell) != Some(&true) {
            continue;
        }
        for nb in edge_neighbors(cell) {
            if let Some(cover) = tree.covering_leaf(nb) {
                if cover.0 + 1 < cell.0 {
                    tree.split(cover);
                    budget(tree.leaves)?;
                    let (l, i, j) = cover;
                    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        work.push((l + 1, 2 * i + di, 2 * j + dj));
                    }
                    work.push(cell);
                }
            }
        }
    }

    triangulate(&tree)
}

fn triangulate(tree: &Quadtree) -> Result<TriMesh> {
    let mut leaves: Vec<Cell> = tree
        .nodes
        .iter()
        .filter_map(|(k, leaf)| leaf.then_some(*k))
        .collect();
    let lmax = leaves.iter().map(|c| c.0).max().unwrap_or(0);
    // Lattice coordinates on the finest level, plus one extra level so that
    // centers of finest-level cells would still be integral.
    let shift = |l: u8| lmax + 1 - l;
    leaves.sort_by_key(|&(l, i, j)| morton(i << shift(l), j << shift(l)));

    let scale = (1u64 << (lmax + 1)) as f64;
    let (dx, dy) = (tree.lx / scale, tree.ly / scale);
    let mut index: HashMap<(u32, u32), usize> = HashMap::new();
    let mut vertices: Vec<Point> = Vec::new();
    let mut vid = |ij: (u32, u32)| -> usize {
        *index.entry(ij).or_insert_with(|| {
            let pt = [
                if ij.0 as f64 == scale { tree.lx } else { ij.0 as f64 * dx },
                if ij.1 as f64 == scale { tree.ly } else { ij.1 as f64 * dy },
            ];
            vertices.push(pt);
            vertices.len() - 1
        })
    };

    let mut triangles = Vec::with_capacity(leaves.len() * 2);
    let n_at = |l: u8| 1u32 << l;
    for &(l, i, j) in &leaves {
        let s = shift(l);
        let (x0, y0) = (i << s, j << s);
        let w = 1u32 << s;
        let half = w / 2;
        let bl = (x0, y0);
        let br = (x0 + w, y0);
        let tr = (x0 + w, y0 + w);
        let tl = (x0, y0 + w);
        // Hanging midpoints: the same-level neighbor across the side is subdivided.
        let bottom = j > 0 && tree.is_subdivided((l, i, j - 1));
        let right = i + 1 < n_at(l) && tree.is_subdivided((l, i + 1, j));
        let top = j + 1 < n_at(l) && tree.is_subdivided((l, i, j + 1));
        let left = i > 0 && tree.is_subdivided((l, i - 1, j));
        if !(bottom || right || top || left) {
            let (a, b, c, d) = (vid(bl), vid(br), vid(tr), vid(tl));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
            continue;
        }
        let mut ring = vec![vid(bl)];
        if bottom {
            ring.push(vid((x0 + half, y0)));
        }
        ring.push(vid(br));
        if right {
            ring.push(vid((x0 + w, y0 + half)));
        }
        ring.push(vid(tr));
        if top {
            ring.push(vid((x0 + half, y0 + w)));
        }
        ring.push(vid(tl));
        if left {
            ring.push(vid((x0, y0 + half)));
        }
        let center = vid((x0 + half, y0 + half));
        for k in 0..ring.len() {
            triangles.push([center, ring[k], ring[(k + 1) % ring.len()]]);
        }
    }

    TriMesh::from_parts(vertices, triangles, [tree.lx, tree.ly])
}

/// Structured uniform mesh with `nx x ny` cells, each split into two triangles.
pub fn uniform_mesh(params: &PhysParams, nx: usize, ny: usize) -> Result<TriMesh> {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([params.lx * i as f64 / nx as f64, params.ly * j as f64 / ny as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::from_parts(vertices, triangles, [params.lx, params.ly])
}

/// Summary statistics recorded with training instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub triangles: usize,
    pub min_diameter: f64,
    pub max_diameter: f64,
}

impl MeshStats {
    pub fn of(mesh: &TriMesh) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for t in 0..mesh.n_triangles() {
            let d = mesh.diameter(t);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        Self {
            vertices: mesh.n_vertices(),
            triangles: mesh.n_triangles(),
            min_diameter: lo,
            max_diameter: hi,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{GaussianComponent, SourceMixture};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(center: Point, sigma: f64) -> SourceMixture {
        SourceMixture::new(vec![GaussianComponent::new(center, sigma)], &PhysParams::default())
            .unwrap()
    }

    /// Independent integrity oracle: positive orientation, full coverage and
    /// edge multiplicities (interior edges shared twice, once-used edges on
    /// the domain boundary).
    pub(crate) fn check_integrity(mesh: &TriMesh, params: &PhysParams) {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            assert!(mesh.area(t) > 0.0, "triangle {t} not counterclockwise");
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let on_boundary = |p: Point| {
            p[0].abs() < 1e-12
                || p[1].abs() < 1e-12
                || (p[0] - params.lx).abs() < 1e-12
                || (p[1] - params.ly).abs() < 1e-12
        };
        let mut boundary = 0;
        for ((a, b), n) in count {
            assert!(n == 1 || n == 2, "edge used {n} times");
            if n == 1 {
                boundary += 1;
                let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
                let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                assert!(on_boundary(pa) && on_boundary(pb) && on_boundary(mid), "hanging edge");
            }
        }
        assert_eq!(boundary, mesh.boundary_edges().len());
        let area = mesh.total_area();
        assert!((area - params.area()).abs() <= 1e-9 * params.area(), "area {area}");
    }

    #[test]
    fn size_field_extremes() {
        let p = PhysParams::default();
        let mix = single([5.0, 5.0], 0.45);
        let sfp = SizeFieldParams::default();
        let f = SizeField::new(&mix, &sfp, &p);
        assert_relative_eq!(f.h_min(), 0.075, epsilon = 1e-15);
        assert_relative_eq!(f.h_max(), 0.4, epsilon = 1e-15);
        // Radius clamps to the floor 0.1 * min(Lx, Ly).
        assert_eq!(f.radii(), vec![1.0]);
        assert_relative_eq!(f.eval([6.0, 5.0]), (0.075 + 0.4) / 2.0, epsilon = 1e-15);
        let psi = 0.5 * (1.0 + (-2.0f64).tanh());
        assert_relative_eq!(psi, 0.017_986_209_962_091_56, epsilon = 1e-15);
        assert_relative_eq!(f.eval([5.0, 5.0]), 0.075 + 0.325 * psi, epsilon = 1e-15);
        assert!((f.eval([5.0, 5.0]) - 0.08085).abs() < 1e-5);
    }

    #[test]
    fn radius_always_clamps_for_default_constants() {
        let p = PhysParams::default();
        let sfp = SizeFieldParams::default();
        for k in 0..=35 {
            let sigma = 0.25 + 0.01 * k as f64;
            let k_i = sfp.k0 + sfp.k1 * (sfp.sigma_ref - sigma) / sfp.sigma_ref;
            assert!(k_i * sigma < 0.0);
            let f = SizeField::new(&single([5.0, 5.0], sigma), &sfp, &p);
            assert_eq!(f.radii(), vec![1.0]);
        }
    }

    #[test]
    fn size_field_is_lipschitz_on_segments() {
        let p = PhysParams::default();
        let mix = SourceMixture::new(
            vec![
                GaussianComponent::new([3.0, 3.0], 0.3),
                GaussianComponent::new([4.0, 6.0], 0.5),
            ],
            &p,
        )
        .unwrap();
        let f = SizeField::new(&mix, &SizeFieldParams::default(), &p);
        let lip = f.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let a = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let b = [a[0] + rng.random_range(-0.2..0.2), a[1] + rng.random_range(-0.2..0.2)];
            let d = dist(a, b);
            assert!((f.eval(a) - f.eval(b)).abs() <= lip * d + 1e-15);
            let h = f.eval(a);
            assert!(h >= f.h_min() - 1e-15 && h <= f.h_max() + 1e-15);
        }
    }

    #[test]
    fn single_source_mesh_grading() {
        let p = PhysParams::default();
        let mix = single([5.0, 5.0], 0.45);
        let sfp = SizeFieldParams::default();
        let mesh = generate_mesh(&mix, &sfp, &p).unwrap();
        check_integrity(&mesh, &p);
        let field = SizeField::new(&mix, &sfp, &p);
        for t in 0..mesh.n_triangles() {
            let c = mesh.centroid(t);
            let d = mesh.diameter(t);
            assert!(d <= 2.0 * field.eval(c) + 1e-12);
            let r = dist(c, [5.0, 5.0]);
            if r <= 2.0 * 0.45 {
                assert!(d <= 0.16, "edge {d} at distance {r}");
            }
            if c[0].min(10.0 - c[0]) < 1.0 && c[1].min(10.0 - c[1]) < 1.0 {
                assert!(d >= 0.2, "corner edge {d}");
            }
        }
    }

    #[test]
    fn uniform_field_gives_structured_mesh() {
        let p = PhysParams::default();
        let mix = single([5.0, 5.0], 0.45);
        let mesh = generate_mesh(&mix, &SizeFieldParams::uniform(1.0), &p).unwrap();
        check_integrity(&mesh, &p);
        assert_eq!(mesh.n_triangles(), 2 * 16 * 16);
        for t in 0..mesh.n_triangles() {
            let d = mesh.diameter(t);
            assert!((0.5..=2.0).contains(&d));
        }
    }

    #[test]
    fn triple_source_mesh_is_conforming() {
        let p = PhysParams::default();
        let mix = SourceMixture::new(
            [[3.0, 3.0], [4.0, 6.0], [7.0, 4.0]]
                .into_iter()
                .map(|c| GaussianComponent::new(c, 0.45))
                .collect(),
            &p,
        )
        .unwrap();
        let mesh = generate_mesh(&mix, &SizeFieldParams::default(), &p).unwrap();
        check_integrity(&mesh, &p);
        assert!((mesh.total_area() - 100.0).abs() < 1e-7);
    }

    #[test]
    fn random_sources_give_valid_meshes() {
        let p = PhysParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.random_range(1..=3);
            let comps = (0..n)
                .map(|_| {
                    GaussianComponent::new(
                        [rng.random_range(3.0..7.0), rng.random_range(3.0..7.0)],
                        rng.random_range(0.25..0.6),
                    )
                })
                .collect();
            let mix = SourceMixture::new(comps, &p).unwrap();
            let mesh = generate_mesh(&mix, &SizeFieldParams::default(), &p).unwrap();
            check_integrity(&mesh, &p);
            let mut sum = [0.0, 0.0];
            for e in mesh.boundary_edges() {
                let len = dist(mesh.vertices()[e.a], mesh.vertices()[e.b]);
                sum[0] += e.normal[0] * len;
                sum[1] += e.normal[1] * len;
                assert!(e.normal[0].abs() == 1.0 || e.normal[1].abs() == 1.0);
            }
            assert!(sum[0].abs() < 1e-10 && sum[1].abs() < 1e-10);
        }
    }

    #[test]
    fn refinement_budget_names_sigma() {
        let p = PhysParams::default();
        let mix = single([5.0, 5.0], 0.45);
        let sfp = SizeFieldParams {
            max_leaves: 500,
            ..SizeFieldParams::default()
        };
        match generate_mesh(&mix, &sfp, &p) {
            Err(e @ Error::RefinementBudget { .. }) => assert!(e.to_string().contains("0.45")),
            other => panic!("unexpected {other:?}"),
        }
        let tiny = SizeFieldParams::uniform(1e-5);
        assert!(matches!(generate_mesh(&mix, &tiny, &p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn locate_vertices_and_centroids() {
        let p = PhysParams::default();
        let mesh = generate_mesh(&single([4.2, 5.7], 0.3), &SizeFieldParams::default(), &p).unwrap();
        let v0 = mesh.vertices()[mesh.triangles()[0][0]];
        let (t, lam) = mesh.locate(v0).unwrap();
        assert!(mesh.triangles()[t].iter().any(|&v| mesh.vertices()[v] == v0));
        assert!(lam.iter().any(|&l| (l - 1.0).abs() < 1e-12));
        for k in (0..mesh.n_triangles()).step_by(37) {
            let (t, lam) = mesh.locate(mesh.centroid(k)).unwrap();
            assert_eq!(t, k);
            for l in lam {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        assert!(matches!(mesh.locate([10.5, 3.0]), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn locate_random_points_against_scan() {
        let p = PhysParams::default();
        let mesh = generate_mesh(&single([6.0, 3.5], 0.35), &SizeFieldParams::default(), &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for k in 0..10_000 {
            let q = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let (t, lam) = mesh.locate(q).unwrap();
            let [a, b, c] = mesh.corners(t);
            let rx = lam[0] * a[0] + lam[1] * b[0] + lam[2] * c[0];
            let ry = lam[0] * a[1] + lam[1] * b[1] + lam[2] * c[1];
            assert!((rx - q[0]).abs() < 1e-12 && (ry - q[1]).abs() < 1e-12);
            assert!(lam.iter().all(|&l| l >= -1e-12));
            if k % 50 == 0 {
                // Brute-force scan agrees that the point is inside triangle t.
                let inside: Vec<usize> = (0..mesh.n_triangles())
                    .filter(|&s| mesh.barycentric(s, q).iter().all(|&l| l >= -1e-12))
                    .collect();
                assert!(inside.contains(&t));
            }
        }
    }
}
