//! Invertible layers. All operate on one example at a time, stored as a flat
//! HWC buffer; batch wrappers live on [`FlowLayer`].

use super::net::{CouplingNet, NetCache};
use super::ExampleShape;
use crate::error::{shape_mismatch, Result};
use crate::tensor::{RngState, SquareMatrix, Tensor};

/// How an affine coupling turns the raw net output `s` into a scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleParam {
    /// `exp(s)`, optionally soft-clamped to `s_max·tanh(s/s_max)`.
    Exp { clamp: Option<f64> },
    /// `sigmoid(s)`; can only shrink volume.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingKind {
    Additive,
    Affine(ScaleParam),
}

/// `y = [scale(x_b) ⊙ x_a + t(x_b), x_b]` where `x_a` is the first `split`
/// channels at every pixel and `x_b` the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub kind: CouplingKind,
    pub shape: ExampleShape,
    pub split: usize,
    pub net: CouplingNet,
}

fn log_sigmoid(r: f64) -> f64 {
    // −softplus(−r), stable in both tails.
    if r >= 0.0 {
        -(-r).exp().ln_1p()
    } else {
        r - r.exp().ln_1p()
    }
}

fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

impl Coupling {
    pub fn new(kind: CouplingKind, shape: ExampleShape, net_kernel: usize, hidden: usize, rng: &mut RngState) -> Self {
        let split = shape.c / 2;
        let cond = shape.c - split;
        let out = match kind {
            CouplingKind::Additive => split,
            CouplingKind::Affine(_) => 2 * split,
        };
        let net = CouplingNet::new(shape.h, shape.w, net_kernel, cond, hidden, out, rng);
        Self {
            kind,
            shape,
            split,
            net,
        }
    }

    fn split_halves(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.shape.c;
        let s = self.split;
        let pixels = self.shape.h * self.shape.w;
        let mut a = Vec::with_capacity(pixels * s);
        let mut b = Vec::with_capacity(pixels * (c - s));
        for p in 0..pixels {
            a.extend_from_slice(&x[p * c..p * c + s]);
            b.extend_from_slice(&x[p * c + s..(p + 1) * c]);
        }
        (a, b)
    }

    fn join_halves(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let c = self.shape.c;
        let s = self.split;
        let pixels = self.shape.h * self.shape.w;
        let mut y = Vec::with_capacity(pixels * c);
        for p in 0..pixels {
            y.extend_from_slice(&a[p * s..(p + 1) * s]);
            y.extend_from_slice(&b[p * (c - s)..(p + 1) * (c - s)]);
        }
        y
    }

    /// Effective log-scale for a raw net output; `(log scale, d log scale / d raw)`.
    fn log_scale(param: ScaleParam, raw: f64) -> (f64, f64) {
        match param {
            ScaleParam::Exp { clamp: None } => (raw, 1.0),
            ScaleParam::Exp { clamp: Some(m) } => {
                let th = (raw / m).tanh();
                (m * th, 1.0 - th * th)
            }
            ScaleParam::Sigmoid => (log_sigmoid(raw), 1.0 - sigmoid(raw)),
        }
    }

    /// Splits the net output into per-element `(log scale, translation)`.
    fn scale_shift(&self, net_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.split;
        let pixels = self.shape.h * self.shape.w;
        match self.kind {
            CouplingKind::Additive => (vec![0.0; pixels * s], net_out.to_vec()),
            CouplingKind::Affine(param) => {
                let mut ls = Vec::with_capacity(pixels * s);
                let mut t = Vec::with_capacity(pixels * s);
                for p in 0..pixels {
                    let o = &net_out[p * 2 * s..(p + 1) * 2 * s];
                    ls.extend(o[..s].iter().map(|&r| Self::log_scale(param, r).0));
                    t.extend_from_slice(&o[s..]);
                }
                (ls, t)
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (a, b) = self.split_halves(x);
        let (ls, t) = self.scale_shift(&self.net.forward(&b));
        let ya: Vec<f64> = a
            .iter()
            .zip(&ls)
            .zip(&t)
            .map(|((&xa, &l), &tv)| l.exp() * xa + tv)
            .collect();
        let logdet = match self.kind {
            CouplingKind::Additive => 0.0,
            CouplingKind::Affine(_) => ls.iter().sum(),
        };
        (self.join_halves(&ya, &b), logdet)
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        let (ya, b) = self.split_halves(y);
        let (ls, t) = self.scale_shift(&self.net.forward(&b));
        let xa: Vec<f64> = ya
            .iter()
            .zip(&ls)
            .zip(&t)
            .map(|((&v, &l), &tv)| (v - tv) * (-l).exp())
            .collect();
        self.join_halves(&xa, &b)
    }

    pub fn backward(&self, x: &[f64], gy: &[f64], gld: f64, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let (a, b) = self.split_halves(x);
        let (gya, gyb) = self.split_halves(gy);
        let (net_out, cache): (Vec<f64>, NetCache) = self.net.forward_cached(&b);
        let s = self.split;
        let pixels = self.shape.h * self.shape.w;
        let mut gnet = vec![0.0; net_out.len()];
        let mut gxa = vec![0.0; a.len()];
        match self.kind {
            CouplingKind::Additive => {
                gxa.copy_from_slice(&gya);
                gnet.copy_from_slice(&gya);
            }
            CouplingKind::Affine(param) => {
                for p in 0..pixels {
                    for j in 0..s {
                        let e = p * s + j;
                        let raw = net_out[p * 2 * s + j];
                        let (l, dl) = Self::log_scale(param, raw);
                        let scale = l.exp();
                        gxa[e] = gya[e] * scale;
                        // d/dl of (e^l·x_a) plus the log-det contribution.
                        let gl = gya[e] * a[e] * scale + gld;
                        gnet[p * 2 * s + j] = gl * dl;
                        gnet[p * 2 * s + s + j] = gya[e];
                    }
                }
            }
        }
        let gb_net = self.net.backward(&b, &cache, &gnet, grads);
        let gxb: Vec<f64> = gyb.iter().zip(&gb_net).map(|(u, v)| u + v).collect();
        self.join_halves(&gxa, &gxb)
    }
}

/// Learned channel mixing `y_p = U·x_p` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct InvConv1x1 {
    pub shape: ExampleShape,
    pub kernel: SquareMatrix,
}

impl InvConv1x1 {
    pub fn pixels(&self) -> usize {
        self.shape.h * self.shape.w
    }

    /// `H·W·log|det U|`, the same for every input.
    pub fn logdet(&self) -> Result<f64> {
        Ok(self.pixels() as f64 * self.kernel.lu_logabsdet()?.0)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let logdet = self.logdet()?;
        Ok((self.apply(&self.kernel, x), logdet))
    }

    fn apply(&self, m: &SquareMatrix, x: &[f64]) -> Vec<f64> {
        let c = self.shape.c;
        let mut y = vec![0.0; x.len()];
        for (xp, yp) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
            m.matvec_into(xp, yp);
        }
        y
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        let inv = self.kernel.inverse()?;
        Ok(self.apply(&inv, y))
    }

    /// `dL/dU = Σ_p g_p x_pᵀ + gld·HW·U⁻ᵀ`.
    pub fn backward(&self, x: &[f64], gy: &[f64], gld: f64, grad_u: &mut [f64]) -> Result<Vec<f64>> {
        let c = self.shape.c;
        let mut gx = vec![0.0; x.len()];
        for ((xp, gp), gxp) in x.chunks_exact(c).zip(gy.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
            self.kernel.matvec_transpose_into(gp, gxp);
            for i in 0..c {
                for j in 0..c {
                    grad_u[i * c + j] += gp[i] * xp[j];
                }
            }
        }
        if gld != 0.0 {
            let inv_t = self.kernel.inverse()?.transpose();
            let w = gld * self.pixels() as f64;
            for (g, v) in grad_u.iter_mut().zip(inv_t.data()) {
                *g += w * v;
            }
        }
        Ok(gx)
    }
}

/// Fixed bijective rearrangement: `y[i] = x[src[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPermutation {
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl IndexPermutation {
    pub fn new(src: Vec<usize>) -> Self {
        let mut dst = vec![usize::MAX; src.len()];
        for (i, &s) in src.iter().enumerate() {
            dst[s] = i;
        }
        debug_assert!(dst.iter().all(|&d| d != usize::MAX), "not a permutation");
        Self { src, dst }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Source index of output position `i`.
    pub fn source(&self, i: usize) -> usize {
        self.src[i]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.src.iter().map(|&s| x[s]).collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        self.dst.iter().map(|&d| y[d]).collect()
    }

    /// Space-to-depth by 2: `(y, x, c) → (y/2, x/2, 4c + 2(y%2) + x%2)`.
    pub fn squeeze(shape: ExampleShape) -> Self {
        let ExampleShape { h, w, c } = shape;
        let (oh, ow, oc) = (h / 2, w / 2, 4 * c);
        let mut src = vec![0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let out_c = ch * 4 + (y % 2) * 2 + (x % 2);
                    let out = ((y / 2) * ow + x / 2) * oc + out_c;
                    src[out] = (y * w + x) * c + ch;
                }
            }
        }
        debug_assert_eq!(oh * ow * oc, src.len());
        Self::new(src)
    }

    /// Same channel map applied at every pixel.
    pub fn per_pixel(shape: ExampleShape, channel_map: &[usize]) -> Self {
        let c = shape.c;
        let src = (0..shape.h * shape.w)
            .flat_map(|p| channel_map.iter().map(move |&m| p * c + m))
            .collect();
        Self::new(src)
    }

    /// Moves channels `split..` of every pixel behind all kept channels:
    /// output is `[kept (h,w,split) | factored (h,w,c−split)]`.
    pub fn factor_out(shape: ExampleShape, split: usize) -> Self {
        let c = shape.c;
        let pixels = shape.h * shape.w;
        let kept = (0..pixels).flat_map(|p| (0..split).map(move |ch| p * c + ch));
        let gone = (0..pixels).flat_map(|p| (split..c).map(move |ch| p * c + ch));
        Self::new(kept.chain(gone).collect())
    }
}

/// One invertible step of a flow.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer {
    AdditiveCoupling(Coupling),
    AffineCoupling(Coupling),
    InvConv1x1(InvConv1x1),
    Squeeze {
        in_shape: ExampleShape,
        perm: IndexPermutation,
    },
    /// Output keeps all values; the model routes the trailing
    /// `h·w·(c − split)` of them into the latent code.
    FactorOut {
        in_shape: ExampleShape,
        split: usize,
        perm: IndexPermutation,
    },
    FixedPermutation {
        shape: ExampleShape,
        channel_map: Vec<usize>,
        perm: IndexPermutation,
    },
}

impl FlowLayer {
    pub fn squeeze(in_shape: ExampleShape) -> Self {
        FlowLayer::Squeeze {
            in_shape,
            perm: IndexPermutation::squeeze(in_shape),
        }
    }

    pub fn factor_out(in_shape: ExampleShape, split: usize) -> Self {
        FlowLayer::FactorOut {
            in_shape,
            split,
            perm: IndexPermutation::factor_out(in_shape, split),
        }
    }

    pub fn fixed_permutation(shape: ExampleShape, channel_map: Vec<usize>) -> Self {
        let perm = IndexPermutation::per_pixel(shape, &channel_map);
        FlowLayer::FixedPermutation {
            shape,
            channel_map,
            perm,
        }
    }

    /// Channel reversal, which swaps the coupling halves for even `c`.
    pub fn reverse_channels(shape: ExampleShape) -> Self {
        Self::fixed_permutation(shape, (0..shape.c).rev().collect())
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowLayer::AdditiveCoupling(_) => "additive_coupling",
            FlowLayer::AffineCoupling(_) => "affine_coupling",
            FlowLayer::InvConv1x1(_) => "invconv1x1",
            FlowLayer::Squeeze { .. } => "squeeze",
            FlowLayer::FactorOut { .. } => "factor_out",
            FlowLayer::FixedPermutation { .. } => "permutation",
        }
    }

    pub fn in_shape(&self) -> ExampleShape {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => c.shape,
            FlowLayer::InvConv1x1(c) => c.shape,
            FlowLayer::Squeeze { in_shape, .. } | FlowLayer::FactorOut { in_shape, .. } => *in_shape,
            FlowLayer::FixedPermutation { shape, .. } => *shape,
        }
    }

    /// Shape of the part that continues through the flow.
    pub fn out_shape(&self) -> ExampleShape {
        match self {
            FlowLayer::Squeeze { in_shape, .. } => ExampleShape::new(in_shape.h / 2, in_shape.w / 2, in_shape.c * 4),
            FlowLayer::FactorOut { in_shape, split, .. } => ExampleShape::new(in_shape.h, in_shape.w, *split),
            other => other.in_shape(),
        }
    }

    /// True when the log-det contribution cannot depend on the input.
    pub fn is_constant_volume(&self) -> bool {
        !matches!(self, FlowLayer::AffineCoupling(_))
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => c.net.param_shapes(),
            FlowLayer::InvConv1x1(c) => vec![vec![c.shape.c, c.shape.c]],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => c.net.params(),
            FlowLayer::InvConv1x1(c) => vec![c.kernel.data()],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => c.net.params_mut(),
            FlowLayer::InvConv1x1(c) => vec![c.kernel.data_mut()],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward one example: `(y, log|det ∂y/∂x|)`.
    pub fn forward_example(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => Ok(c.forward(x)),
            FlowLayer::InvConv1x1(c) => c.forward(x),
            FlowLayer::Squeeze { perm, .. }
            | FlowLayer::FactorOut { perm, .. }
            | FlowLayer::FixedPermutation { perm, .. } => Ok((perm.apply(x), 0.0)),
        }
    }

    pub fn inverse_example(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => Ok(c.inverse(y)),
            FlowLayer::InvConv1x1(c) => c.inverse(y),
            FlowLayer::Squeeze { perm, .. }
            | FlowLayer::FactorOut { perm, .. }
            | FlowLayer::FixedPermutation { perm, .. } => Ok(perm.apply_inverse(y)),
        }
    }

    /// Reverse-mode step: given `∂L/∂y` and `∂L/∂logdet`, accumulate parameter
    /// gradients into `grads` (this layer's slots only) and return `∂L/∂x`.
    pub fn backward_example(&self, x: &[f64], gy: &[f64], gld: f64, grads: &mut [Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            FlowLayer::AdditiveCoupling(c) | FlowLayer::AffineCoupling(c) => Ok(c.backward(x, gy, gld, grads)),
            FlowLayer::InvConv1x1(c) => c.backward(x, gy, gld, &mut grads[0]),
            FlowLayer::Squeeze { perm, .. }
            | FlowLayer::FactorOut { perm, .. }
            | FlowLayer::FixedPermutation { perm, .. } => Ok(perm.apply_inverse(gy)),
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let len = self.in_shape().len();
        if x.rank() < 2 || x.example_len() != len {
            return Err(shape_mismatch(format!("[N, {len}]"), x.shape()));
        }
        Ok(())
    }

    /// Batch forward over an `N×…` tensor; returns `N×len` output and per-example log-dets.
    pub fn layer_forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(x)?;
        let mut rows = Vec::with_capacity(x.n_examples());
        let mut logdets = Vec::with_capacity(x.n_examples());
        for ex in x.examples() {
            let (y, ld) = self.forward_example(ex)?;
            rows.push(y);
            logdets.push(ld);
        }
        Ok((Tensor::from_examples(&[x.example_len()], &rows)?, logdets))
    }

    pub fn layer_inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check_batch(y)?;
        let rows = y
            .examples()
            .map(|ex| self.inverse_example(ex))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_examples(&[y.example_len()], &rows)
    }
}
