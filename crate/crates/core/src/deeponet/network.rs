//! Forward evaluation (plain and jet-augmented) and reverse accumulation for
//! the modified-MLP DeepONet.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::jet::{self, Jet2};
use super::params::{Dense, DeepONetParams, ModifiedMlp};
use crate::error::{Error, Result};
use crate::physics::PhysParams;

/// Input normalization and output scaling. Trunk inputs enter as
/// `(x / lx, y / ly, t / t_final)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub lx: f64,
    pub ly: f64,
    pub t_final: f64,
    pub output_scale: f64,
}

impl Scales {
    pub fn from_physics(params: &PhysParams, output_scale: f64) -> Self {
        Self {
            lx: params.lx,
            ly: params.ly,
            t_final: params.final_time,
            output_scale,
        }
    }
}

/// Parameters together with the fixed scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepONet {
    pub params: DeepONetParams,
    pub scales: Scales,
}

fn dense_fwd(x: &Array2<f64>, d: &Dense, n: usize) -> Array2<f64> {
    let mut out = x.dot(&d.w);
    jet::add_bias(&mut out, &d.b, n);
    out
}

fn dense_bwd(x: &Array2<f64>, d: &Dense, g: &Array2<f64>, n: usize, grad: &mut Dense) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), g, 1.0, &mut grad.w);
    grad.b += &jet::bias_grad(g, n);
    g.dot(&d.w.t())
}

fn dense_bwd_params(x: &Array2<f64>, g: &Array2<f64>, n: usize, grad: &mut Dense) {
    general_mat_mul(1.0, &x.t(), g, 1.0, &mut grad.w);
    grad.b += &jet::bias_grad(g, n);
}

/// Intermediate values of one modified-MLP pass over a batched jet.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub n: usize,
    pub slots: usize,
    x: Array2<f64>,
    pre_u: Array2<f64>,
    u: Array2<f64>,
    pre_v: Array2<f64>,
    v: Array2<f64>,
    /// Pre-activations of H1, Z1, ..., Z_{L-1}.
    pre: Vec<Array2<f64>>,
    /// tanh of `pre`.
    post: Vec<Array2<f64>>,
    /// H1, ..., H_L.
    h: Vec<Array2<f64>>,
    pub out: Array2<f64>,
}

pub fn mlp_forward(net: &ModifiedMlp, x: Array2<f64>, n: usize, slots: usize) -> MlpTape {
    let pre_u = dense_fwd(&x, &net.enc_u, n);
    let u = jet::tanh_fwd(&pre_u, n, slots);
    let pre_v = dense_fwd(&x, &net.enc_v, n);
    let v = jet::tanh_fwd(&pre_v, n, slots);
    let diff = &v - &u;
    let mut pre = Vec::with_capacity(net.hidden.len());
    let mut post = Vec::with_capacity(net.hidden.len());
    let mut h = Vec::with_capacity(net.hidden.len());
    let a1 = dense_fwd(&x, &net.hidden[0], n);
    let h1 = jet::tanh_fwd(&a1, n, slots);
    pre.push(a1);
    post.push(h1.clone());
    h.push(h1);
    for layer in &net.hidden[1..] {
        let a = dense_fwd(h.last().unwrap(), layer, n);
        let z = jet::tanh_fwd(&a, n, slots);
        let next = &u + &jet::mul_fwd(&z, &diff, n, slots);
        pre.push(a);
        post.push(z);
        h.push(next);
    }
    let out = dense_fwd(h.last().unwrap(), &net.head, n);
    MlpTape {
        n,
        slots,
        x,
        pre_u,
        u,
        pre_v,
        v,
        pre,
        post,
        h,
        out,
    }
}

/// Accumulates parameter cotangents of one pass into `grad`.
pub fn mlp_backward(net: &ModifiedMlp, tape: &MlpTape, gout: &Array2<f64>, grad: &mut ModifiedMlp) {
    let (n, slots) = (tape.n, tape.slots);
    let depth = net.hidden.len();
    let mut gh = dense_bwd(&tape.h[depth - 1], &net.head, gout, n, &mut grad.head);
    let mut gu = Array2::<f64>::zeros(tape.u.raw_dim());
    let mut gv = Array2::<f64>::zeros(tape.v.raw_dim());
    if depth > 1 {
        let diff = &tape.v - &tape.u;
        for k in (1..depth).rev() {
            let (gz, gd) = jet::mul_bwd(&tape.post[k], &diff, &gh, n, slots);
            gu += &gh;
            gu -= &gd;
            gv += &gd;
            let ga = jet::tanh_bwd(&tape.pre[k], &tape.post[k], &gz, n, slots);
            gh = dense_bwd(&tape.h[k - 1], &net.hidden[k], &ga, n, &mut grad.hidden[k]);
        }
    }
    let ga1 = jet::tanh_bwd(&tape.pre[0], &tape.post[0], &gh, n, slots);
    dense_bwd_params(&tape.x, &ga1, n, &mut grad.hidden[0]);
    let gau = jet::tanh_bwd(&tape.pre_u, &tape.u, &gu, n, slots);
    dense_bwd_params(&tape.x, &gau, n, &mut grad.enc_u);
    let gav = jet::tanh_bwd(&tape.pre_v, &tape.v, &gv, n, slots);
    dense_bwd_params(&tape.x, &gav, n, &mut grad.enc_v);
}

/// Value-only pass without a tape, returning the last hidden state `H_L`.
pub fn mlp_hidden(net: &ModifiedMlp, x: ArrayView2<f64>) -> Array2<f64> {
    let act = |mut a: Array2<f64>, b: &Array1<f64>| {
        for mut row in a.rows_mut() {
            row += b;
        }
        a.mapv_inplace(f64::tanh);
        a
    };
    let u = act(x.dot(&net.enc_u.w), &net.enc_u.b);
    let v = act(x.dot(&net.enc_v.w), &net.enc_v.b);
    let diff = &v - &u;
    let mut h = act(x.dot(&net.hidden[0].w), &net.hidden[0].b);
    for layer in &net.hidden[1..] {
        let z = act(h.dot(&layer.w), &layer.b);
        h = &u + &(&z * &diff);
    }
    h
}

/// Value-only pass without a tape.
pub fn mlp_eval(net: &ModifiedMlp, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = mlp_hidden(net, x).dot(&net.head.w);
    for mut row in out.rows_mut() {
        row += &net.head.b;
    }
    out
}

impl DeepONet {
    pub fn new(params: DeepONetParams, scales: Scales) -> Result<Self> {
        params.check()?;
        Ok(Self { params, scales })
    }

    pub fn q(&self) -> usize {
        self.params.trunk.head.output()
    }

    /// Factor applied to the branch-trunk inner product.
    pub fn kappa(&self) -> f64 {
        self.scales.output_scale / (self.q() as f64).sqrt()
    }

    pub fn branch_input_len(&self) -> usize {
        self.params.branch.enc_u.input()
    }

    pub(crate) fn check_branch(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.branch_input_len() {
            return Err(Error::Shape(format!(
                "branch input has {} values, network expects {}",
                b.len(),
                self.branch_input_len()
            )));
        }
        Ok(())
    }

    /// Normalized trunk inputs as a batched jet with `slots` slots.
    pub fn trunk_jet_input(&self, pts: &[[f64; 3]], slots: usize) -> Array2<f64> {
        let n = pts.len();
        let s = &self.scales;
        let mut x = Array2::zeros((slots * n, 3));
        for (i, p) in pts.iter().enumerate() {
            x[[i, 0]] = p[0] / s.lx;
            x[[i, 1]] = p[1] / s.ly;
            x[[i, 2]] = p[2] / s.t_final;
            if slots > jet::DX {
                x[[jet::DX * n + i, 0]] = 1.0 / s.lx;
            }
            if slots > jet::DY {
                x[[jet::DY * n + i, 1]] = 1.0 / s.ly;
            }
            if slots > jet::DT {
                x[[jet::DT * n + i, 2]] = 1.0 / s.t_final;
            }
        }
        x
    }

    /// Branch features for a stack of sensor vectors (one row each).
    pub fn branch_features(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        mlp_eval(&self.params.branch, inputs)
    }

    /// Trunk features for plain space-time points.
    pub fn trunk_features(&self, pts: &[[f64; 3]]) -> Array2<f64> {
        let x = self.trunk_jet_input(pts, 1);
        mlp_eval(&self.params.trunk, x.view())
    }

    /// Predictions at many points for one source.
    pub fn predict(&self, branch: &[f64], pts: &[[f64; 3]]) -> Result<Vec<f64>> {
        self.check_branch(branch)?;
        let bfeat = self.branch_features(ArrayView2::from_shape((1, branch.len()), branch).unwrap());
        let t = self.trunk_features(pts);
        Ok(self.combine(&t, bfeat.row(0).as_slice().unwrap()))
    }

    /// `kappa <B, T_i> + b0` for every trunk row.
    pub fn combine(&self, trunk: &Array2<f64>, branch: &[f64]) -> Vec<f64> {
        let kappa = self.kappa();
        let b = ndarray::ArrayView1::from(branch);
        trunk.dot(&b).iter().map(|v| kappa * v + self.params.b0).collect()
    }

    pub fn forward(&self, branch: &[f64], xt: [f64; 3]) -> Result<f64> {
        Ok(self.predict(branch, &[xt])?[0])
    }

    /// Output together with its first and pure second input derivatives in
    /// physical units.
    pub fn forward_jet(&self, branch: &[f64], xt: [f64; 3]) -> Result<Jet2> {
        self.check_branch(branch)?;
        let bfeat = self.branch_features(ArrayView2::from_shape((1, branch.len()), branch).unwrap());
        let x = self.trunk_jet_input(&[xt], jet::FULL);
        let tape = mlp_forward(&self.params.trunk, x, 1, jet::FULL);
        let kappa = self.kappa();
        let mut s = [0.0; 6];
        for (k, slot) in s.iter_mut().enumerate() {
            *slot = kappa * tape.out.row(k).dot(&bfeat.row(0));
        }
        s[jet::V] += self.params.b0;
        Ok(Jet2::from_slots(s))
    }
}
