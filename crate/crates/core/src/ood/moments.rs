use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ExampleShape, FlowModel};
use crate::tensor::Tensor;

/// Per-dimension sample moments plus per-channel sums of the spatial variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMoments {
    pub shape: ExampleShape,
    pub mean: Vec<f64>,
    /// Unbiased (`N − 1`) variances.
    pub variance: Vec<f64>,
    /// `S_c = Σ_{h,w} σ²_{h,w,c}`.
    pub channel_variance_sums: Vec<f64>,
    pub count: usize,
}

impl DataMoments {
    /// Moments given directly by channel sums only (as in published tables).
    pub fn from_channel_sums(sums: &[f64]) -> Self {
        Self {
            shape: ExampleShape::flat(sums.len()),
            mean: vec![0.0; sums.len()],
            variance: sums.to_vec(),
            channel_variance_sums: sums.to_vec(),
            count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_variance_sums.len()
    }
}

fn channel_sums(variance: &[f64], c: usize) -> Vec<f64> {
    let mut sums = vec![0.0; c];
    for (d, v) in variance.iter().enumerate() {
        sums[d % c] += v;
    }
    sums
}

/// Two-pass mean and unbiased variance over the examples of `x`
/// (`N×D` is read as `N×1×1×D`).
pub fn compute_moments(x: &Tensor) -> Result<DataMoments> {
    let n = x.n_examples();
    if n < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: n });
    }
    let shape = ExampleShape::of_batch(x)?;
    let d = x.example_len();
    let mut mean = vec![0.0; d];
    for ex in x.examples() {
        for (m, v) in mean.iter_mut().zip(ex) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut variance = vec![0.0; d];
    for ex in x.examples() {
        for ((s, v), m) in variance.iter_mut().zip(ex).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= (n - 1) as f64);
    Ok(DataMoments {
        shape,
        channel_variance_sums: channel_sums(&variance, shape.c),
        mean,
        variance,
        count: n,
    })
}

/// `x' = λx + (1 − λ)·0.5`, pulling pixels towards mid-gray.
pub fn gray_images(x: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::OutOfRange(format!("graying lambda {lambda}")));
    }
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("pixel {v} outside [0, 1]")));
    }
    Ok(x.map(|v| lambda * v + (1.0 - lambda) * 0.5))
}

/// Latent-code statistics: per-dimension mean and `N − 1` std, and per-example `‖z‖/√D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub normalized_norms: Vec<f64>,
}

pub fn latent_stats(model: &FlowModel, x: &Tensor) -> Result<CodeStats> {
    let n = x.n_examples();
    if n < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: n });
    }
    let z = model.model_forward(x)?.z;
    let m = compute_moments(&z)?;
    let root_d = (z.example_len() as f64).sqrt();
    Ok(CodeStats {
        std: m.variance.iter().map(|v| v.sqrt()).collect(),
        mean: m.mean,
        normalized_norms: z
            .examples()
            .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt() / root_d)
            .collect(),
    })
}
