//! Second-order input jets: a value plus `d/dx`, `d/dy`, `d/dt`, `d2/dx2`,
//! `d2/dy2`.
//!
//! Batched jets are stored as an `(slots * n) x width` matrix whose row
//! `s * n + i` holds slot `s` of point `i`. Three slot counts occur: 1 (value
//! only), 3 (value and spatial gradient) and 6 (everything). Linear layers act
//! on every row with one product; biases touch only the value rows.

use ndarray::{Array1, Array2, Axis};

pub const V: usize = 0;
pub const DX: usize = 1;
pub const DY: usize = 2;
pub const DT: usize = 3;
pub const DXX: usize = 4;
pub const DYY: usize = 5;
pub const FULL: usize = 6;

/// Scalar jet.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub dxx: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self { v, ..Self::default() }
    }

    pub fn from_slots(s: [f64; 6]) -> Self {
        Self {
            v: s[V],
            dx: s[DX],
            dy: s[DY],
            dt: s[DT],
            dxx: s[DXX],
            dyy: s[DYY],
        }
    }

    pub fn slots(&self) -> [f64; 6] {
        [self.v, self.dx, self.dy, self.dt, self.dxx, self.dyy]
    }

    pub fn add(self, o: Self) -> Self {
        let (a, b) = (self.slots(), o.slots());
        Self::from_slots(std::array::from_fn(|k| a[k] + b[k]))
    }

    pub fn scale(self, c: f64) -> Self {
        Self::from_slots(self.slots().map(|x| c * x))
    }

    pub fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dy: self.dy * o.v + self.v * o.dy,
            dt: self.dt * o.v + self.v * o.dt,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
            dyy: self.dyy * o.v + 2.0 * self.dy * o.dy + self.v * o.dyy,
        }
    }

    pub fn tanh(self) -> Self {
        let y = self.v.tanh();
        let d1 = 1.0 - y * y;
        let d2 = -2.0 * y * d1;
        Self {
            v: y,
            dx: d1 * self.dx,
            dy: d1 * self.dy,
            dt: d1 * self.dt,
            dxx: d1 * self.dxx + d2 * self.dx * self.dx,
            dyy: d1 * self.dyy + d2 * self.dy * self.dy,
        }
    }
}

fn first_order(slots: usize) -> usize {
    slots.min(4)
}

fn check(slots: usize) {
    debug_assert!(matches!(slots, 1 | 3 | 4 | FULL), "unsupported slot count {slots}");
}

/// Elementwise `tanh` on a batched jet.
pub fn tanh_fwd(z: &Array2<f64>, n: usize, slots: usize) -> Array2<f64> {
    check(slots);
    let w = z.ncols();
    let len = n * w;
    let zs = z.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros(z.raw_dim());
    let ys = out.as_slice_mut().expect("standard layout");
    let fo = first_order(slots);
    for j in 0..len {
        let y = zs[j].tanh();
        ys[j] = y;
        if slots == 1 {
            continue;
        }
        let d1 = 1.0 - y * y;
        for s in 1..fo {
            ys[s * len + j] = d1 * zs[s * len + j];
        }
        if slots == FULL {
            let d2 = -2.0 * y * d1;
            let zx = zs[DX * len + j];
            let zy = zs[DY * len + j];
            ys[DXX * len + j] = d1 * zs[DXX * len + j] + d2 * zx * zx;
            ys[DYY * len + j] = d1 * zs[DYY * len + j] + d2 * zy * zy;
        }
    }
    out
}

/// Pullback of [`tanh_fwd`]: given the input `z`, output `y` and output
/// cotangent `gy`, returns the input cotangent.
pub fn tanh_bwd(z: &Array2<f64>, y: &Array2<f64>, gy: &Array2<f64>, n: usize, slots: usize) -> Array2<f64> {
    check(slots);
    let w = z.ncols();
    let len = n * w;
    let zs = z.as_slice().expect("standard layout");
    let ys = y.as_slice().expect("standard layout");
    let g = gy.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros(z.raw_dim());
    let gz = out.as_slice_mut().expect("standard layout");
    let fo = first_order(slots);
    for j in 0..len {
        let y0 = ys[j];
        let d1 = 1.0 - y0 * y0;
        let mut g0 = g[j] * d1;
        if slots > 1 {
            let d2 = -2.0 * y0 * d1;
            for s in 1..fo {
                g0 += g[s * len + j] * zs[s * len + j] * d2;
                gz[s * len + j] = g[s * len + j] * d1;
            }
            if slots == FULL {
                let d3 = -2.0 * d1 * d1 + 4.0 * y0 * y0 * d1;
                let (zx, zy) = (zs[DX * len + j], zs[DY * len + j]);
                let (gxx, gyy) = (g[DXX * len + j], g[DYY * len + j]);
                g0 += gxx * (d2 * zs[DXX * len + j] + d3 * zx * zx);
                g0 += gyy * (d2 * zs[DYY * len + j] + d3 * zy * zy);
                gz[DX * len + j] += 2.0 * gxx * d2 * zx;
                gz[DY * len + j] += 2.0 * gyy * d2 * zy;
                gz[DXX * len + j] = gxx * d1;
                gz[DYY * len + j] = gyy * d1;
            }
        }
        gz[j] = g0;
    }
    out
}

/// Elementwise product of two batched jets.
pub fn mul_fwd(a: &Array2<f64>, b: &Array2<f64>, n: usize, slots: usize) -> Array2<f64> {
    check(slots);
    let len = n * a.ncols();
    let (x, y) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut out = Array2::<f64>::zeros(a.raw_dim());
    let p = out.as_slice_mut().unwrap();
    let fo = first_order(slots);
    for j in 0..len {
        let (a0, b0) = (x[j], y[j]);
        p[j] = a0 * b0;
        for s in 1..fo {
            p[s * len + j] = x[s * len + j] * b0 + a0 * y[s * len + j];
        }
        if slots == FULL {
            p[DXX * len + j] = x[DXX * len + j] * b0 + 2.0 * x[DX * len + j] * y[DX * len + j] + a0 * y[DXX * len + j];
            p[DYY * len + j] = x[DYY * len + j] * b0 + 2.0 * x[DY * len + j] * y[DY * len + j] + a0 * y[DYY * len + j];
        }
    }
    out
}

/// Pullback of [`mul_fwd`] with respect to both factors.
pub fn mul_bwd(
    a: &Array2<f64>,
    b: &Array2<f64>,
    gp: &Array2<f64>,
    n: usize,
    slots: usize,
) -> (Array2<f64>, Array2<f64>) {
    check(slots);
    let len = n * a.ncols();
    let (x, y, g) = (a.as_slice().unwrap(), b.as_slice().unwrap(), gp.as_slice().unwrap());
    let mut ga = Array2::<f64>::zeros(a.raw_dim());
    let mut gb = Array2::<f64>::zeros(a.raw_dim());
    let (ga_s, gb_s) = (ga.as_slice_mut().unwrap(), gb.as_slice_mut().unwrap());
    let fo = first_order(slots);
    for j in 0..len {
        let (a0, b0, g0) = (x[j], y[j], g[j]);
        let mut sa = g0 * b0;
        let mut sb = g0 * a0;
        for s in 1..fo {
            let k = s * len + j;
            sa += g[k] * y[k];
            sb += g[k] * x[k];
            ga_s[k] = g[k] * b0;
            gb_s[k] = g[k] * a0;
        }
        if slots == FULL {
            for (d2, d1) in [(DXX, DX), (DYY, DY)] {
                let k2 = d2 * len + j;
                let k1 = d1 * len + j;
                sa += g[k2] * y[k2];
                sb += g[k2] * x[k2];
                ga_s[k1] += 2.0 * g[k2] * y[k1];
                gb_s[k1] += 2.0 * g[k2] * x[k1];
                ga_s[k2] = g[k2] * b0;
                gb_s[k2] = g[k2] * a0;
            }
        }
        ga_s[j] = sa;
        gb_s[j] = sb;
    }
    (ga, gb)
}

/// Adds `b` to the value rows.
pub fn add_bias(x: &mut Array2<f64>, b: &Array1<f64>, n: usize) {
    for mut row in x.rows_mut().into_iter().take(n) {
        row += b;
    }
}

/// Column sums of the value rows (bias cotangent).
pub fn bias_grad(g: &Array2<f64>, n: usize) -> Array1<f64> {
    g.slice(ndarray::s![0..n, ..]).sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_jets(rng: &mut ChaCha8Rng, n: usize, w: usize, slots: usize) -> (Array2<f64>, Vec<Vec<Jet2>>) {
        let mut scalar = vec![vec![Jet2::default(); w]; n];
        let mut m = Array2::zeros((slots * n, w));
        for i in 0..n {
            for c in 0..w {
                let mut s = [0.0; 6];
                for (k, v) in s.iter_mut().enumerate().take(slots) {
                    *v = rng.random_range(-1.5..1.5);
                    m[[k * n + i, c]] = *v;
                }
                scalar[i][c] = Jet2::from_slots(s);
            }
        }
        (m, scalar)
    }

    #[test]
    fn batched_ops_match_scalar_jets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, w) = (5, 3);
        let (a, sa) = random_jets(&mut rng, n, w, FULL);
        let (b, sb) = random_jets(&mut rng, n, w, FULL);
        let t = tanh_fwd(&a, n, FULL);
        let p = mul_fwd(&a, &b, n, FULL);
        for i in 0..n {
            for c in 0..w {
                let st = sa[i][c].tanh().slots();
                let sp = sa[i][c].mul(sb[i][c]).slots();
                for k in 0..FULL {
                    assert!((t[[k * n + i, c]] - st[k]).abs() < 1e-15);
                    assert!((p[[k * n + i, c]] - sp[k]).abs() < 1e-15);
                }
            }
        }
    }

    /// Pullbacks checked against finite differences of a random linear
    /// functional of the output.
    #[test]
    fn pullbacks_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for slots in [1, 3, FULL] {
            let (n, w) = (3, 2);
            let (a, _) = random_jets(&mut rng, n, w, slots);
            let (b, _) = random_jets(&mut rng, n, w, slots);
            let (g, _) = random_jets(&mut rng, n, w, slots);
            let dot = |x: &Array2<f64>| (x * &g).sum();
            let y = tanh_fwd(&a, n, slots);
            let ga = tanh_bwd(&a, &y, &g, n, slots);
            let (pa, pb) = mul_bwd(&a, &b, &g, n, slots);
            let h = 1e-6;
            for idx in 0..a.len() {
                let (r, c) = (idx / w, idx % w);
                let mut ap = a.clone();
                ap[[r, c]] += h;
                let mut am = a.clone();
                am[[r, c]] -= h;
                let fd = (dot(&tanh_fwd(&ap, n, slots)) - dot(&tanh_fwd(&am, n, slots))) / (2.0 * h);
                assert!((fd - ga[[r, c]]).abs() < 1e-8, "tanh slots={slots} {fd} {}", ga[[r, c]]);
                let fd = (dot(&mul_fwd(&ap, &b, n, slots)) - dot(&mul_fwd(&am, &b, n, slots))) / (2.0 * h);
                assert!((fd - pa[[r, c]]).abs() < 1e-8);
                let mut bp = b.clone();
                bp[[r, c]] += h;
                let mut bm = b.clone();
                bm[[r, c]] -= h;
                let fd = (dot(&mul_fwd(&a, &bp, n, slots)) - dot(&mul_fwd(&a, &bm, n, slots))) / (2.0 * h);
                assert!((fd - pb[[r, c]]).abs() < 1e-8);
            }
        }
    }
}
