//! Coupling networks: three same-padded convolutions with tanh between them.
//! With kernel size 1 (or a 1×1 spatial grid) this is a plain fully
//! connected net over the channel axis.

use crate::tensor::RngState;

/// Same-padded `k×k` convolution over an `h×w` grid, HWC layout.
/// Weights are stored `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(k: usize, cin: usize, cout: usize) -> Self {
        Self {
            k,
            cin,
            cout,
            weight: vec![0.0; k * k * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    /// Truncated normal weights with stddev `1/√fan_in`, zero bias.
    pub fn init(k: usize, cin: usize, cout: usize, rng: &mut RngState) -> Self {
        let mut layer = Self::zeros(k, cin, cout);
        let std = 1.0 / ((k * k * cin) as f64).sqrt();
        for w in &mut layer.weight {
            *w = rng.truncated_normal(std);
        }
        layer
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.k, self.k, self.cin, self.cout]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
        let (k, cin, cout) = (self.k, self.cin, self.cout);
        let pad = k / 2;
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
                o.copy_from_slice(&self.bias);
                for ky in 0..k {
                    let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        let inp = &input[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                        let base = (ky * k + kx) * cin * cout;
                        for (ci, &a) in inp.iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            let wrow = &self.weight[base + ci * cout..base + (ci + 1) * cout];
                            for (ov, wv) in o.iter_mut().zip(wrow) {
                                *ov += a * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates into `gw`/`gb`; returns the input gradient.
    fn backward(&self, h: usize, w: usize, input: &[f64], gout: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let (k, cin, cout) = (self.k, self.cin, self.cout);
        let pad = k / 2;
        let mut gin = vec![0.0; h * w * cin];
        for y in 0..h {
            for x in 0..w {
                let g = &gout[(y * w + x) * cout..(y * w + x + 1) * cout];
                for (b, gv) in gb.iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..k {
                    let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        let off = (iy * w + ix) * cin;
                        let base = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let a = input[off + ci];
                            let wrow = &self.weight[base + ci * cout..base + (ci + 1) * cout];
                            let gwrow = &mut gw[base + ci * cout..base + (ci + 1) * cout];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                gwrow[co] += a * g[co];
                                acc += wrow[co] * g[co];
                            }
                            gin[off + ci] += acc;
                        }
                    }
                }
            }
        }
        gin
    }
}

/// Intermediate activations kept for the backward pass.
pub struct NetCache {
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
}

/// `conv(k) → tanh → conv(1) → tanh → conv(k)`; the last layer starts at zero
/// so a freshly built coupling is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingNet {
    pub h: usize,
    pub w: usize,
    pub layers: [ConvLayer; 3],
}

impl CouplingNet {
    pub fn new(h: usize, w: usize, k: usize, cin: usize, hidden: usize, cout: usize, rng: &mut RngState) -> Self {
        Self {
            h,
            w,
            layers: [
                ConvLayer::init(k, cin, hidden, rng),
                ConvLayer::init(1, hidden, hidden, rng),
                ConvLayer::zeros(k, hidden, cout),
            ],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].cin
    }

    pub fn out_channels(&self) -> usize {
        self.layers[2].cout
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight_shape(), vec![l.cout]])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, NetCache) {
        let (h, w) = (self.h, self.w);
        let mut hidden1 = self.layers[0].forward(h, w, input);
        hidden1.iter_mut().for_each(|v| *v = v.tanh());
        let mut hidden2 = self.layers[1].forward(h, w, &hidden1);
        hidden2.iter_mut().for_each(|v| *v = v.tanh());
        let out = self.layers[2].forward(h, w, &hidden2);
        (out, NetCache { hidden1, hidden2 })
    }

    /// `grads` holds this net's six parameter gradients in `params()` order.
    pub fn backward(&self, input: &[f64], cache: &NetCache, gout: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let (g01, g2) = grads.split_at_mut(4);
        let (g0, g1) = g01.split_at_mut(2);
        let [gw2, gb2] = g2 else {
            unreachable!("six net gradients")
        };
        let mut g = self.layers[2].backward(h, w, &cache.hidden2, gout, gw2, gb2);
        for (gv, a) in g.iter_mut().zip(&cache.hidden2) {
            *gv *= 1.0 - a * a;
        }
        let [gw1, gb1] = g1 else { unreachable!() };
        let mut g = self.layers[1].backward(h, w, &cache.hidden1, &g, gw1, gb1);
        for (gv, a) in g.iter_mut().zip(&cache.hidden1) {
            *gv *= 1.0 - a * a;
        }
        let [gw0, gb0] = g0 else { unreachable!() };
        self.layers[0].backward(h, w, input, &g, gw0, gb0)
    }
}
