//! Physics-informed loss and its exact parameter gradient.
//!
//! ```text
//! L = l_res mean(R^2) + l_bcs mean((n . grad c)^2) + l_ics mean(c(x, 0)^2)
//! R = c_t - D (c_xx + c_yy) + v . grad c + (div v) c - beta_2 f
//! ```

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::jet::{self, FULL};
use super::network::{mlp_backward, mlp_forward, DeepONet, MlpTape};
use super::params::DeepONetParams;
use crate::error::{Error, Result};
use crate::physics::PhysParams;
use crate::sampling::{BoundaryPoint, BranchInput, CollocationSet, InitialPoint, ResidualPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub res: f64,
    pub bcs: f64,
    pub ics: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            res: 10.0,
            bcs: 1e-3,
            ics: 1.0,
        }
    }
}

impl LossWeights {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("res", self.res), ("bcs", self.bcs), ("ics", self.ics)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("loss.{name} must be a nonnegative number (got {v})"));
            }
        }
        out
    }
}

/// Unweighted mean squared terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub res: f64,
    pub bcs: f64,
    pub ics: f64,
}

/// Points of several instances pooled for one loss evaluation. Each point
/// carries the row of its instance in `branch`.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    /// One sensor vector per row.
    pub branch: Array2<f64>,
    pub residual: Vec<(usize, ResidualPoint)>,
    pub boundary: Vec<(usize, BoundaryPoint)>,
    pub initial: Vec<(usize, InitialPoint)>,
}

impl Batch {
    /// Pools every point of the given instances.
    pub fn from_instances(items: &[(&BranchInput, &CollocationSet)]) -> Result<Self> {
        let m2 = items.first().map_or(0, |(b, _)| b.values.len());
        let mut branch = Array2::zeros((items.len(), m2));
        let mut batch = Batch::default();
        for (k, (b, set)) in items.iter().enumerate() {
            if b.values.len() != m2 {
                return Err(Error::Shape("branch inputs of different lengths in one batch".into()));
            }
            branch.row_mut(k).assign(&ndarray::ArrayView1::from(&b.values));
            batch.residual.extend(set.residual.iter().map(|p| (k, *p)));
            batch.boundary.extend(set.boundary.iter().map(|p| (k, *p)));
            batch.initial.extend(set.initial.iter().map(|p| (k, *p)));
        }
        batch.branch = branch;
        Ok(batch)
    }

    pub fn n_instances(&self) -> usize {
        self.branch.nrows()
    }
}

/// PDE residual at one interior point.
pub fn residual_at(model: &DeepONet, branch: &[f64], pt: &ResidualPoint, params: &PhysParams) -> Result<f64> {
    let c = model.forward_jet(branch, [pt.pos[0], pt.pos[1], pt.t])?;
    Ok(residual_from_slots(&c.slots(), pt, params))
}

#[inline]
fn residual_from_slots(c: &[f64; 6], pt: &ResidualPoint, params: &PhysParams) -> f64 {
    c[jet::DT] - params.diffusivity * (c[jet::DXX] + c[jet::DYY])
        + pt.v[0] * c[jet::DX]
        + pt.v[1] * c[jet::DY]
        + pt.div_v * c[jet::V]
        - params.solute_rate * pt.f_val
}

struct Pass {
    tape: MlpTape,
    /// `c` slots, row `s * n + i`.
    c: Vec<f64>,
    insts: Vec<usize>,
}

fn trunk_pass(model: &DeepONet, bfeat: &Array2<f64>, insts: Vec<usize>, pts: &[[f64; 3]], slots: usize) -> Pass {
    let n = pts.len();
    let x = model.trunk_jet_input(pts, slots);
    let tape = mlp_forward(&model.params.trunk, x, n, slots);
    let kappa = model.kappa();
    let mut c = vec![0.0; slots * n];
    for s in 0..slots {
        for i in 0..n {
            c[s * n + i] = kappa * tape.out.row(s * n + i).dot(&bfeat.row(insts[i]));
        }
    }
    for ci in c.iter_mut().take(n) {
        *ci += model.params.b0;
    }
    Pass { tape, c, insts }
}

/// Pulls `dL/dc` back through the inner product and the trunk.
fn trunk_backward(
    model: &DeepONet,
    bfeat: &Array2<f64>,
    pass: &Pass,
    gc: &[f64],
    gbranch: &mut Array2<f64>,
    grad: &mut DeepONetParams,
) {
    let n = pass.insts.len();
    let slots = pass.tape.slots;
    let kappa = model.kappa();
    let q = bfeat.ncols();
    let mut gt = Array2::<f64>::zeros((slots * n, q));
    for s in 0..slots {
        for i in 0..n {
            let g = kappa * gc[s * n + i];
            if g == 0.0 {
                continue;
            }
            let inst = pass.insts[i];
            gt.row_mut(s * n + i).scaled_add(g, &bfeat.row(inst));
            gbranch.row_mut(inst).scaled_add(g, &pass.tape.out.row(s * n + i));
        }
    }
    grad.b0 += gc[..n].iter().sum::<f64>();
    mlp_backward(&model.params.trunk, &pass.tape, &gt, &mut grad.trunk);
}

fn evaluate(
    model: &DeepONet,
    batch: &Batch,
    weights: &LossWeights,
    params: &PhysParams,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<DeepONetParams>)> {
    if batch.branch.ncols() != model.branch_input_len() {
        return Err(Error::Shape(format!(
            "batch sensors have {} values, network expects {}",
            batch.branch.ncols(),
            model.branch_input_len()
        )));
    }
    let n_inst = batch.n_instances();
    let btape = mlp_forward(&model.params.branch, batch.branch.clone(), n_inst, 1);
    let bfeat = &btape.out;
    let mut gbranch = Array2::<f64>::zeros(bfeat.raw_dim());
    let mut grad = want_grad.then(|| model.params.zeros_like());
    let mut out = LossBreakdown::default();

    if !batch.residual.is_empty() {
        let n = batch.residual.len();
        let pts: Vec<[f64; 3]> = batch.residual.iter().map(|(_, p)| [p.pos[0], p.pos[1], p.t]).collect();
        let insts = batch.residual.iter().map(|(k, _)| *k).collect();
        let pass = trunk_pass(model, bfeat, insts, &pts, FULL);
        let mut gc = vec![0.0; FULL * n];
        let mut sum = 0.0;
        for (i, (_, pt)) in batch.residual.iter().enumerate() {
            let slots: [f64; 6] = std::array::from_fn(|s| pass.c[s * n + i]);
            let r = residual_from_slots(&slots, pt, params);
            sum += r * r;
            let g = 2.0 * weights.res * r / n as f64;
            gc[jet::V * n + i] = g * pt.div_v;
            gc[jet::DX * n + i] = g * pt.v[0];
            gc[jet::DY * n + i] = g * pt.v[1];
            gc[jet::DT * n + i] = g;
            gc[jet::DXX * n + i] = -g * params.diffusivity;
            gc[jet::DYY * n + i] = -g * params.diffusivity;
        }
        out.res = sum / n as f64;
        if let Some(grad) = grad.as_mut() {
            trunk_backward(model, bfeat, &pass, &gc, &mut gbranch, grad);
        }
    }

    if !batch.boundary.is_empty() {
        let n = batch.boundary.len();
        let pts: Vec<[f64; 3]> = batch.boundary.iter().map(|(_, p)| [p.pos[0], p.pos[1], p.t]).collect();
        let insts = batch.boundary.iter().map(|(k, _)| *k).collect();
        let pass = trunk_pass(model, bfeat, insts, &pts, 3);
        let mut gc = vec![0.0; 3 * n];
        let mut sum = 0.0;
        for (i, (_, pt)) in batch.boundary.iter().enumerate() {
            let flux = pt.normal[0] * pass.c[jet::DX * n + i] + pt.normal[1] * pass.c[jet::DY * n + i];
            sum += flux * flux;
            let g = 2.0 * weights.bcs * flux / n as f64;
            gc[jet::DX * n + i] = g * pt.normal[0];
            gc[jet::DY * n + i] = g * pt.normal[1];
        }
        out.bcs = sum / n as f64;
        if let Some(grad) = grad.as_mut() {
            trunk_backward(model, bfeat, &pass, &gc, &mut gbranch, grad);
        }
    }

    if !batch.initial.is_empty() {
        let n = batch.initial.len();
        let pts: Vec<[f64; 3]> = batch.initial.iter().map(|(_, p)| [p.pos[0], p.pos[1], 0.0]).collect();
        let insts = batch.initial.iter().map(|(k, _)| *k).collect();
        let pass = trunk_pass(model, bfeat, insts, &pts, 1);
        let mut gc = vec![0.0; n];
        let mut sum = 0.0;
        for i in 0..n {
            let c = pass.c[i];
            sum += c * c;
            gc[i] = 2.0 * weights.ics * c / n as f64;
        }
        out.ics = sum / n as f64;
        if let Some(grad) = grad.as_mut() {
            trunk_backward(model, bfeat, &pass, &gc, &mut gbranch, grad);
        }
    }

    out.total = weights.res * out.res + weights.bcs * out.bcs + weights.ics * out.ics;
    if let Some(grad) = grad.as_mut() {
        mlp_backward(&model.params.branch, &btape, &gbranch, &mut grad.branch);
    }
    Ok((out, grad))
}

pub fn loss_total(model: &DeepONet, batch: &Batch, weights: &LossWeights, params: &PhysParams) -> Result<LossBreakdown> {
    evaluate(model, batch, weights, params, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every parameter.
pub fn grad_loss(
    model: &DeepONet,
    batch: &Batch,
    weights: &LossWeights,
    params: &PhysParams,
) -> Result<(LossBreakdown, DeepONetParams)> {
    evaluate(model, batch, weights, params, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Branch sensor rows viewed as a matrix.
pub fn branch_matrix(inputs: &[&[f64]]) -> Result<Array2<f64>> {
    let m2 = inputs.first().map_or(0, |b| b.len());
    let mut out = Array2::zeros((inputs.len(), m2));
    for (k, b) in inputs.iter().enumerate() {
        if b.len() != m2 {
            return Err(Error::Shape("branch inputs of different lengths".into()));
        }
        out.row_mut(k).assign(&ArrayView2::from_shape((1, m2), b).unwrap().row(0));
    }
    Ok(out)
}
