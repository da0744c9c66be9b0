//! Invertible layers and their composition into a flow model with exact
//! per-layer log-determinant contributions.

mod build;
mod layers;
mod net;

pub use build::MODEL_KEYS;
pub use build::{build_model, KernelInit, Mixer, ModelConfig, Variant};
pub use layers::{Coupling, CouplingKind, FlowLayer, IndexPermutation, InvConv1x1, ScaleParam};
pub use net::{ConvLayer, CouplingNet};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{RngState, Tensor};

/// Per-example extent `H×W×C`. Flat vectors of dimension `D` are `1×1×D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExampleShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ExampleShape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub const fn flat(d: usize) -> Self {
        Self::new(1, 1, d)
    }

    pub const fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.h, self.w, self.c]
    }

    /// Read the per-example shape off a batch tensor (`N×H×W×C` or `N×D`).
    pub fn of_batch(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [_, d] => Ok(Self::flat(*d)),
            [_, h, w, c] => Ok(Self::new(*h, *w, *c)),
            other => Err(shape_mismatch("[N, D] or [N, H, W, C]", other)),
        }
    }
}

impl fmt::Display for ExampleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

impl FromStr for ExampleShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').map(str::trim).collect();
        let parse = |p: &str| {
            p.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::InvalidConfig(format!("bad shape {s:?}")))
        };
        match parts.as_slice() {
            [d] => Ok(Self::flat(parse(d)?)),
            [h, w, c] => Ok(Self::new(parse(h)?, parse(w)?, parse(c)?)),
            _ => Err(Error::InvalidConfig(format!("bad shape {s:?}"))),
        }
    }
}

/// Per-example forward record: every layer's input plus the latent code.
#[derive(Debug, Clone)]
pub struct ExampleTrace {
    pub inputs: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub logdet: f64,
    pub per_layer: Vec<f64>,
}

/// Batch forward result.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `N×D` latent codes: factored-out parts in order, then the final output.
    pub z: Tensor,
    pub logdet: Vec<f64>,
    /// `per_layer[l][n]` is layer `l`'s log-det for example `n`.
    pub per_layer: Vec<Vec<f64>>,
}

/// Ordered composition of invertible layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: ModelConfig,
    layers: Vec<FlowLayer>,
}

impl FlowModel {
    pub(crate) fn from_layers(config: ModelConfig, layers: Vec<FlowLayer>) -> Self {
        Self { config, layers }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [FlowLayer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> ExampleShape {
        self.config.input_shape
    }

    pub fn dim(&self) -> usize {
        self.input_shape().len()
    }

    /// Lengths of the factored-out latent parts, in the order they leave the flow.
    pub fn factor_out_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| matches!(l, FlowLayer::FactorOut { .. }))
            .map(|l| l.in_shape().len() - l.out_shape().len())
            .collect()
    }

    pub fn is_constant_volume(&self) -> bool {
        self.layers.iter().all(FlowLayer::is_constant_volume)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(FlowLayer::param_count).sum()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(FlowLayer::param_shapes).collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(FlowLayer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(FlowLayer::params_mut).collect()
    }

    /// Zeroed gradient buffers aligned with [`FlowModel::params`].
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// All parameters flattened in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_mismatch(self.param_count(), flat.len()));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Add `N(0, std²)` noise to every parameter (random models for tests and
    /// ensembles).
    pub fn perturb_params(&mut self, rng: &mut RngState, std: f64) {
        for p in self.params_mut() {
            for v in p.iter_mut() {
                *v += std * rng.normal();
            }
        }
    }

    /// Sum of all layer log-dets when the model is constant-volume.
    pub fn constant_logdet(&self) -> Result<f64> {
        if !self.is_constant_volume() {
            return Err(Error::NotConstantVolume("model contains affine couplings".into()));
        }
        self.layers
            .iter()
            .map(|l| match l {
                FlowLayer::InvConv1x1(c) => c.logdet(),
                _ => Ok(0.0),
            })
            .sum()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(shape_mismatch(self.dim(), v.len()));
        }
        Ok(())
    }

    fn run_forward(&self, x: &[f64], keep_inputs: bool) -> Result<ExampleTrace> {
        self.check_len(x)?;
        let mut cur = x.to_vec();
        let mut parts: Vec<Vec<f64>> = Vec::new();
        let mut inputs = Vec::with_capacity(if keep_inputs { self.layers.len() } else { 0 });
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (mut y, ld) = layer.forward_example(&cur)?;
            if keep_inputs {
                inputs.push(std::mem::take(&mut cur));
            }
            if let FlowLayer::FactorOut { .. } = layer {
                let kept = layer.out_shape().len();
                parts.push(y.split_off(kept));
            }
            cur = y;
            per_layer.push(ld);
        }
        parts.push(cur);
        Ok(ExampleTrace {
            inputs,
            z: parts.concat(),
            logdet: per_layer.iter().sum(),
            per_layer,
        })
    }

    /// `(z, log|det ∂z/∂x|)` for one flat example.
    pub fn forward_example(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let t = self.run_forward(x, false)?;
        Ok((t.z, t.logdet))
    }

    /// Forward pass that keeps every layer input for [`FlowModel::backward_example`].
    pub fn trace_example(&self, x: &[f64]) -> Result<ExampleTrace> {
        self.run_forward(x, true)
    }

    pub fn inverse_example(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let sizes = self.factor_out_sizes();
        let factored: usize = sizes.iter().sum();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for s in &sizes {
            offsets.push(off);
            off += s;
        }
        let mut cur = z[factored..].to_vec();
        let mut part = sizes.len();
        for layer in self.layers.iter().rev() {
            if let FlowLayer::FactorOut { .. } = layer {
                part -= 1;
                cur.extend_from_slice(&z[offsets[part]..offsets[part] + sizes[part]]);
            }
            cur = layer.inverse_example(&cur)?;
        }
        Ok(cur)
    }

    /// Reverse-mode pass for one example. `grad_z` is `∂L/∂z`, `grad_logdet`
    /// is `∂L/∂(total log-det)`; parameter gradients accumulate into `grads`
    /// (aligned with [`FlowModel::params`]). Returns `∂L/∂x`.
    pub fn backward_example(
        &self,
        trace: &ExampleTrace,
        grad_z: &[f64],
        grad_logdet: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<Vec<f64>> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::InvalidConfig("trace was recorded without layer inputs".into()));
        }
        self.check_len(grad_z)?;
        let sizes = self.factor_out_sizes();
        let mut part_end: usize = sizes.iter().sum();
        let mut part = sizes.len();
        let mut g = grad_z[part_end..].to_vec();
        let mut slot_end = grads.len();
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            if let FlowLayer::FactorOut { .. } = layer {
                part -= 1;
                let start = part_end - sizes[part];
                g.extend_from_slice(&grad_z[start..part_end]);
                part_end = start;
            }
            let n_slots = layer.param_shapes().len();
            let slots = &mut grads[slot_end - n_slots..slot_end];
            g = layer.backward_example(input, &g, grad_logdet, slots)?;
            slot_end -= n_slots;
        }
        Ok(g)
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let ok = match x.shape() {
            [_, d] => *d == self.dim(),
            [_, h, w, c] => ExampleShape::new(*h, *w, *c) == self.input_shape(),
            _ => false,
        };
        if !ok {
            return Err(shape_mismatch(
                format!("[N, {}] or [N, {}]", self.dim(), self.input_shape()),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Batch forward; examples are evaluated in parallel, results keep input order.
    pub fn model_forward(&self, x: &Tensor) -> Result<ModelOutput> {
        self.check_batch(x)?;
        let traces: Vec<ExampleTrace> = (0..x.n_examples())
            .into_par_iter()
            .map(|i| self.run_forward(x.example(i), false))
            .collect::<Result<_>>()?;
        let n = traces.len();
        let mut per_layer = vec![Vec::with_capacity(n); self.layers.len()];
        let mut logdet = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n * self.dim());
        for t in traces {
            for (l, v) in t.per_layer.iter().enumerate() {
                per_layer[l].push(*v);
            }
            logdet.push(t.logdet);
            z.extend_from_slice(&t.z);
        }
        Ok(ModelOutput {
            z: Tensor::new(vec![n, self.dim()], z)?,
            logdet,
            per_layer,
        })
    }

    /// Batch inverse; output keeps the model's input layout `N×H×W×C`.
    pub fn model_inverse(&self, z: &Tensor) -> Result<Tensor> {
        if z.rank() < 2 || z.example_len() != self.dim() {
            return Err(shape_mismatch(format!("[N, {}]", self.dim()), z.shape()));
        }
        let rows: Vec<Vec<f64>> = (0..z.n_examples())
            .into_par_iter()
            .map(|i| self.inverse_example(z.example(i)))
            .collect::<Result<_>>()?;
        Tensor::from_examples(&self.input_shape().dims(), &rows)
    }
}
