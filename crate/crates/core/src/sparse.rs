//! Compressed sparse row matrices and Krylov solvers (Jacobi-preconditioned
//! conjugate gradients and BiCGStab).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            for &(c, v) in &row {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        cols.binary_search(&c)
            .map(|k| self.values[self.indptr[r] + k])
            .unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// y = A x
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *out = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Linear system with a symmetry flag.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub symmetric: bool,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Inverse absolute row sums. Unlike the diagonal this stays positive when
/// stabilization terms make some pivots small or negative.
fn row_scaling(a: &CsrMatrix) -> Vec<f64> {
    (0..a.nrows())
        .map(|r| {
            let s: f64 = a.row(r).map(|(_, v)| v.abs()).sum();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect()
}

fn true_residual(a: &CsrMatrix, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm(r)
}

/// Diagonally preconditioned conjugate gradients for SPD systems.
pub fn solve_spd(sys: &SparseSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !sys.symmetric {
        return Err(Error::InvalidParameter("solve_spd needs a symmetric system".into()));
    }
    cg(&sys.matrix, &sys.rhs, None, tol, max_iter).map(|(x, _)| x)
}

pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let minv = jacobi(a);
    let mut r = vec![0.0; n];
    let mut rnorm = true_residual(a, &x, b, &mut r);
    if rnorm <= tol * bnorm {
        return Ok((x, SolveStats { iterations: 0, relative_residual: rnorm / bnorm }));
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm(&r);
        if rnorm <= tol * bnorm {
            // Confirm against the true residual before returning.
            let true_norm = true_residual(a, &x, b, &mut ap);
            if true_norm <= tol * bnorm {
                return Ok((x, SolveStats { iterations: it, relative_residual: true_norm / bnorm }));
            }
            r.copy_from_slice(&ap);
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        solver: "conjugate gradients",
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Restarts allowed after a breakdown or a false convergence signal.
const MAX_RESTARTS: usize = 50;
/// Relative size of `rho` or `(r_hat, v)` below which BiCGStab restarts.
const BREAKDOWN: f64 = 1e-12;

/// Right-preconditioned BiCGStab (absolute row-sum scaling) for general nonsymmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let minv = row_scaling(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    let mut rnorm = true_residual(a, &x, b, &mut r);
    if rnorm <= tol * bnorm {
        return Ok((x, SolveStats { iterations: 0, relative_residual: rnorm / bnorm }));
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarts = 0;
    let mut it = 0;
    let mut restart = false;
    while it < max_iter {
        if restart {
            restarts += 1;
            if restarts > MAX_RESTARTS {
                break;
            }
            rnorm = true_residual(a, &x, b, &mut r);
            if rnorm <= tol * bnorm {
                return Ok((x, SolveStats { iterations: it, relative_residual: rnorm / bnorm }));
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            restart = false;
        }
        it += 1;
        let rho_new = dot(&r_hat, &r);
        // Breakdown when the shadow residual is (nearly) orthogonal to r.
        if !(rho_new.abs() > BREAKDOWN * norm(&r_hat) * norm(&r)) || omega == 0.0 {
            restart = true;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * minv[i];
        }
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if !(rv.abs() > BREAKDOWN * norm(&r_hat) * norm(&v)) {
            restart = true;
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            restart = true;
            continue;
        }
        for i in 0..n {
            z[i] = s[i] * minv[i];
        }
        a.mul_vec_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        if !omega.is_finite() {
            restart = true;
            continue;
        }
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rnorm = norm(&r);
        if !rnorm.is_finite() {
            return Err(Error::NoConvergence { solver: "BiCGStab", iterations: it, residual: rnorm });
        }
        if rnorm <= tol * bnorm {
            restart = true;
        }
    }
    Err(Error::NoConvergence {
        solver: "BiCGStab",
        iterations: it,
        residual: rnorm / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 2), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![14.0, -2.0]);
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let sys = SparseSystem {
            symmetric: true,
            matrix: CsrMatrix::identity(5),
            rhs: vec![1.0, -2.0, 3.0, 0.5, 7.0],
        };
        let (x, stats) = cg(&sys.matrix, &sys.rhs, None, 1e-10, 10).unwrap();
        assert_eq!(x, sys.rhs);
        assert_eq!(stats.iterations, 1);
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let sys = SparseSystem {
            symmetric: true,
            matrix: a.clone(),
            rhs: vec![1.0, 2.0],
        };
        let x = solve_spd(&sys, 1e-12, 10).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-10);
        let (y, _) = bicgstab(&a, &[1.0, 2.0], None, 1e-12, 10).unwrap();
        assert!((y[0] - 1.0 / 11.0).abs() < 1e-10 && (y[1] - 7.0 / 11.0).abs() < 1e-10);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let n = 50;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0));
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip);
        let b = vec![1.0; n];
        match cg(&a, &b, None, 1e-14, 3) {
            Err(Error::NoConvergence { iterations: 3, residual, .. }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_spd(&SparseSystem { symmetric: false, matrix: a, rhs: b }, 1e-8, 10).is_err());
    }

    #[test]
    fn bicgstab_on_random_nonsymmetric_system() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0 + rng.random::<f64>()));
            for _ in 0..4 {
                let j = rng.random_range(0..n);
                trip.push((i, j, rng.random_range(-0.5..0.5)));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, stats) = bicgstab(&a, &b, None, 1e-10, 500).unwrap();
        let ax = a.mul_vec(&x);
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * norm(&b));
        assert!(stats.relative_residual <= 1e-10);
    }

    #[test]
    fn exact_breakdown_is_an_error_not_nan() {
        // (r, A r) = 0 for a rotation, so every restart breaks down again.
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, -1.0)]);
        match bicgstab(&a, &[1.0, 0.0], None, 1e-10, 1000) {
            Err(Error::NoConvergence { iterations, residual, .. }) => {
                assert!(iterations < 1000);
                assert!(residual.is_finite());
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = CsrMatrix::identity(3);
        assert_eq!(cg(&a, &[0.0; 3], Some(&[1.0; 3]), 1e-10, 5).unwrap().0, vec![0.0; 3]);
        assert_eq!(bicgstab(&a, &[0.0; 3], None, 1e-10, 5).unwrap().0, vec![0.0; 3]);
    }
}
