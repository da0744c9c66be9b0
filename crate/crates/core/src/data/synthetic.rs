//! Synthetic generators: two moons, diagonal Gaussians, constant and
//! uniform-noise images.

use super::{DataKind, ImageDataset};
use crate::error::{Error, Result};
use crate::flow::ExampleShape;
use crate::tensor::{RngState, Tensor};

pub const DEFAULT_MOON_NOISE: f64 = 0.1;

/// Two-moons sample: noisy points plus the noise-free arc positions they
/// were drawn around, which [`replicate_dims`] re-noises per tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMoons {
    pub points: Tensor,
    pub arcs: Tensor,
    pub noise: f64,
}

/// Upper arc `(cos t, sin t)` and lower arc `(1 − cos t, 1 − sin t − 0.5)`,
/// `t ~ U[0, π]`. Even examples sit on the upper arc, odd on the lower.
pub fn gen_two_moons(n: usize, noise: f64, rng: &mut RngState) -> Result<TwoMoons> {
    if n == 0 {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    if !(noise >= 0.0) {
        return Err(Error::OutOfRange(format!("noise sigma {noise}")));
    }
    let mut arcs = Vec::with_capacity(2 * n);
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = rng.uniform() * std::f64::consts::PI;
        let (s, c) = t.sin_cos();
        let (ax, ay) = if i % 2 == 0 { (c, s) } else { (1.0 - c, 1.0 - s - 0.5) };
        arcs.extend([ax, ay]);
        points.extend([ax + noise * rng.normal(), ay + noise * rng.normal()]);
    }
    Ok(TwoMoons {
        points: Tensor::new(vec![n, 2], points)?,
        arcs: Tensor::new(vec![n, 2], arcs)?,
        noise,
    })
}

/// Tile the 2-D coordinates `D/2` times. The first tile is the original
/// noisy sample; every further tile adds fresh noise to the arc positions.
pub fn replicate_dims(moons: &TwoMoons, d: usize, rng: &mut RngState) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidDim(d));
    }
    let n = moons.points.n_examples();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend_from_slice(moons.points.example(i));
        let arc = moons.arcs.example(i);
        for _ in 1..d / 2 {
            data.extend(arc.iter().map(|a| a + moons.noise * rng.normal()));
        }
    }
    Tensor::new(vec![n, d], data)
}

/// `N×D` sample with independent coordinates `N(mean_d, var_d)`.
pub fn gen_diag_gaussian(n: usize, mean: &[f64], var: &[f64], rng: &mut RngState) -> Result<Tensor> {
    if mean.len() != var.len() {
        return Err(crate::error::shape_mismatch(mean.len(), var.len()));
    }
    if let Some(v) = var.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::OutOfRange(format!("variance {v}")));
    }
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut data = Vec::with_capacity(n * mean.len());
    for _ in 0..n {
        for (m, s) in mean.iter().zip(&sd) {
            data.push(m + s * rng.normal());
        }
    }
    Tensor::new(vec![n, mean.len()], data)
}

fn image_dims(n: usize, shape: ExampleShape) -> Vec<usize> {
    vec![n, shape.h, shape.w, shape.c]
}

/// Every pixel equal to `value` (raw scale).
pub fn gen_constant(value: f64, shape: ExampleShape, n: usize) -> Result<ImageDataset> {
    if !(0.0..=255.0).contains(&value) || value.fract() != 0.0 {
        return Err(Error::OutOfRange(format!("constant pixel value {value}")));
    }
    Ok(ImageDataset::new(
        Tensor::full(image_dims(n, shape), value),
        DataKind::RawPixels,
    ))
}

/// I.i.d. pixels uniform over the integers `0..=255`.
pub fn gen_uniform_random(shape: ExampleShape, n: usize, rng: &mut RngState) -> ImageDataset {
    let data = (0..n * shape.len()).map(|_| rng.index(256) as f64).collect();
    let images = Tensor::new(image_dims(n, shape), data).expect("extents match payload");
    ImageDataset::new(images, DataKind::RawPixels)
}
