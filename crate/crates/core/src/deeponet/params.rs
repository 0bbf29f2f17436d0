//! Parameter containers for the modified-MLP DeepONet.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Glorot-normal weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = (2.0 / (input + output) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = Array2::from_shape_simple_fn((input, output), || normal.sample(rng));
        Self {
            w,
            b: Array1::zeros(output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    pub fn output(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub width: usize,
    /// Number of hidden layers L.
    pub depth: usize,
    pub output: usize,
}

/// Two encoders `U`, `V` mixed into every hidden layer after the first:
/// `H1 = tanh(W1 x + b1)`, `Z_k = tanh(W_{k+1} H_k + b_{k+1})`,
/// `H_{k+1} = (1 - Z_k) U + Z_k V`, output `W_h H_L + b_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedMlp {
    pub enc_u: Dense,
    pub enc_v: Dense,
    pub hidden: Vec<Dense>,
    pub head: Dense,
}

impl ModifiedMlp {
    pub fn zeros(shape: MlpShape) -> Self {
        let mut hidden = vec![Dense::zeros(shape.input, shape.width)];
        for _ in 1..shape.depth {
            hidden.push(Dense::zeros(shape.width, shape.width));
        }
        Self {
            enc_u: Dense::zeros(shape.input, shape.width),
            enc_v: Dense::zeros(shape.input, shape.width),
            hidden,
            head: Dense::zeros(shape.width, shape.output),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let enc_u = Dense::glorot(shape.input, shape.width, rng);
        let enc_v = Dense::glorot(shape.input, shape.width, rng);
        let mut hidden = vec![Dense::glorot(shape.input, shape.width, rng)];
        for _ in 1..shape.depth {
            hidden.push(Dense::glorot(shape.width, shape.width, rng));
        }
        let head = Dense::glorot(shape.width, shape.output, rng);
        Self {
            enc_u,
            enc_v,
            hidden,
            head,
        }
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input: self.enc_u.input(),
            width: self.enc_u.output(),
            depth: self.hidden.len(),
            output: self.head.output(),
        }
    }

    /// Layers in storage order: U, V, hidden 1..L, head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        [&self.enc_u, &self.enc_v]
            .into_iter()
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        [&mut self.enc_u, &mut self.enc_v]
            .into_iter()
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }
}

/// Architecture integers as stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Sensors per axis; the branch input has `m * m` entries.
    pub m: usize,
    pub branch_width: usize,
    pub branch_depth: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub q: usize,
}

impl ArchSpec {
    pub fn branch_shape(&self) -> MlpShape {
        MlpShape {
            input: self.m * self.m,
            width: self.branch_width,
            depth: self.branch_depth,
            output: self.q,
        }
    }

    pub fn trunk_shape(&self) -> MlpShape {
        MlpShape {
            input: 3,
            width: self.trunk_width,
            depth: self.trunk_depth,
            output: self.q,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("m", self.m),
            ("branch_width", self.branch_width),
            ("branch_depth", self.branch_depth),
            ("trunk_width", self.trunk_width),
            ("trunk_depth", self.trunk_depth),
            ("q", self.q),
        ] {
            if v == 0 {
                out.push(format!("model.{name} must be positive"));
            }
        }
        out
    }
}

/// All trainable tensors. Also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepONetParams {
    pub branch: ModifiedMlp,
    pub trunk: ModifiedMlp,
    pub b0: f64,
}

impl DeepONetParams {
    pub fn zeros(arch: &ArchSpec) -> Self {
        Self {
            branch: ModifiedMlp::zeros(arch.branch_shape()),
            trunk: ModifiedMlp::zeros(arch.trunk_shape()),
            b0: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branch: ModifiedMlp::zeros(self.branch.shape()),
            trunk: ModifiedMlp::zeros(self.trunk.shape()),
            b0: 0.0,
        }
    }

    pub fn arch(&self) -> ArchSpec {
        let b = self.branch.shape();
        let t = self.trunk.shape();
        ArchSpec {
            m: (b.input as f64).sqrt().round() as usize,
            branch_width: b.width,
            branch_depth: b.depth,
            trunk_width: t.width,
            trunk_depth: t.depth,
            q: b.output,
        }
    }

    pub fn check(&self) -> Result<()> {
        let b = self.branch.shape();
        let t = self.trunk.shape();
        if b.output != t.output {
            return Err(Error::Shape(format!(
                "branch emits {} features but trunk emits {}",
                b.output, t.output
            )));
        }
        if t.input != 3 {
            return Err(Error::Shape(format!("trunk takes (x, y, t), got input width {}", t.input)));
        }
        if !self.tensors().all(|s| s.iter().all(|v| v.is_finite())) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Flat tensor views in checkpoint order: branch layers (W then b),
    /// trunk layers, `b0`.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.branch
            .layers()
            .chain(self.trunk.layers())
            .flat_map(|d| [d.w.as_slice().expect("standard layout"), d.b.as_slice().expect("contiguous")])
            .chain(std::iter::once(std::slice::from_ref(&self.b0)))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.branch
            .layers_mut()
            .chain(self.trunk.layers_mut())
            .flat_map(|d| {
                [
                    d.w.as_slice_mut().expect("standard layout"),
                    d.b.as_slice_mut().expect("contiguous"),
                ]
            })
            .chain(std::iter::once(std::slice::from_mut(&mut self.b0)))
    }

    pub fn n_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Copies all parameters into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

/// Glorot-normal initialization: branch layers, then trunk layers, in
/// storage order. Biases and `b0` start at zero.
pub fn init_glorot<R: Rng + ?Sized>(rng: &mut R, arch: &ArchSpec) -> DeepONetParams {
    let branch = ModifiedMlp::glorot(arch.branch_shape(), rng);
    let trunk = ModifiedMlp::glorot(arch.trunk_shape(), rng);
    DeepONetParams { branch, trunk, b0: 0.0 }
}
