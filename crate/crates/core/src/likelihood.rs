//! Change-of-variables log-likelihood split into a prior term and a volume
//! term, bits-per-dimension conversion and uniform dequantization.
//!
//! Everything is in nats until [`bpd`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::tensor::{RngState, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Zero-mean factorized latent density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Prior {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
    Laplace { scale: f64 },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian { sigma: 1.0 }
    }
}

impl Prior {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Prior::Gaussian { sigma }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let p = match self {
            Prior::Gaussian { sigma: p } | Prior::Logistic { scale: p } | Prior::Laplace { scale: p } => p,
        };
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidConfig(format!("prior scale must be positive, got {p}")));
        }
        Ok(self)
    }

    /// Latent variance per coordinate.
    pub fn variance(&self) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => sigma * sigma,
            Prior::Logistic { scale } => scale * scale * std::f64::consts::PI.powi(2) / 3.0,
            Prior::Laplace { scale } => 2.0 * scale * scale,
        }
    }

    pub fn log_density(&self, z: f64) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => -HALF_LN_2PI - sigma.ln() - 0.5 * (z / sigma).powi(2),
            Prior::Logistic { scale } => {
                let a = (z / scale).abs();
                -a - 2.0 * (-a).exp().ln_1p() - scale.ln()
            }
            Prior::Laplace { scale } => -(z.abs() / scale) - (2.0 * scale).ln(),
        }
    }

    /// `d/dz log p(z)`.
    pub fn score(&self, z: f64) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => -z / (sigma * sigma),
            Prior::Logistic { scale } => -(z / (2.0 * scale)).tanh() / scale,
            Prior::Laplace { scale } => {
                if z == 0.0 {
                    0.0
                } else {
                    -z.signum() / scale
                }
            }
        }
    }

    pub fn log_prob(&self, z: &[f64]) -> f64 {
        z.iter().map(|&v| self.log_density(v)).sum()
    }

    pub fn sample(&self, rng: &mut RngState) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => sigma * rng.normal(),
            Prior::Logistic { scale } => {
                let u = rng.uniform().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                scale * (u / (1.0 - u)).ln()
            }
            Prior::Laplace { scale } => {
                let u = rng.uniform() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

/// Per-example log-density of an `N×…` latent batch.
pub fn prior_logprob(prior: &Prior, z: &Tensor) -> Vec<f64> {
    z.examples().map(|ex| prior.log_prob(ex)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBreakdown {
    pub prior_term: f64,
    pub volume_term: f64,
    pub total: f64,
    pub bpd: f64,
}

impl LikelihoodBreakdown {
    pub fn new(prior_term: f64, volume_term: f64, dim: usize) -> Self {
        let total = prior_term + volume_term;
        Self {
            prior_term,
            volume_term,
            total,
            bpd: bpd(total, dim),
        }
    }
}

pub fn log_likelihood(model: &FlowModel, prior: &Prior, x: &Tensor) -> Result<Vec<LikelihoodBreakdown>> {
    let out = model.model_forward(x)?;
    let dim = model.dim();
    Ok(prior_logprob(prior, &out.z)
        .into_iter()
        .zip(out.logdet)
        .map(|(p, v)| LikelihoodBreakdown::new(p, v, dim))
        .collect())
}

pub fn mean_total(rows: &[LikelihoodBreakdown]) -> f64 {
    rows.iter().map(|r| r.total).sum::<f64>() / rows.len().max(1) as f64
}

pub fn mean_bpd(rows: &[LikelihoodBreakdown]) -> f64 {
    rows.iter().map(|r| r.bpd).sum::<f64>() / rows.len().max(1) as f64
}

/// Bits per dimension for inputs scaled by 1/256: `−total/(D ln 2) + 8`.
pub fn bpd(total_nats: f64, dim: usize) -> f64 {
    bpd_with_offset(total_nats, dim, 8.0)
}

/// `−total/(D ln 2) + offset`; offset 0 gives plain bits per dimension.
pub fn bpd_with_offset(total_nats: f64, dim: usize, offset: f64) -> f64 {
    -total_nats / (dim as f64 * std::f64::consts::LN_2) + offset
}

fn check_raw_pixels(x_raw: &Tensor) -> Result<()> {
    if let Some(v) = x_raw
        .data()
        .iter()
        .find(|v| !(0.0..=255.0).contains(*v) || v.fract() != 0.0)
    {
        return Err(Error::OutOfRange(format!(
            "raw pixel value {v} is not an integer in 0..=255"
        )));
    }
    Ok(())
}

/// `(x + u)/256` with `u ~ U[0, 1)` drawn in storage order from `rng`.
pub fn dequantize(x_raw: &Tensor, rng: &mut RngState) -> Result<Tensor> {
    check_raw_pixels(x_raw)?;
    let data = x_raw.data().iter().map(|&v| (v + rng.uniform()) / 256.0).collect();
    Tensor::new(x_raw.shape().to_vec(), data)
}

/// Dequantization with noise fixed per example: example `i` draws from child
/// stream `i` of `seed`, independent of batch composition.
pub fn dequantize_fixed(x_raw: &Tensor, seed: u64) -> Result<Tensor> {
    check_raw_pixels(x_raw)?;
    let base = RngState::new(seed);
    let mut out = x_raw.clone();
    for i in 0..out.n_examples() {
        let mut rng = base.child(i as u64);
        for v in out.example_mut(i) {
            *v = (*v + rng.uniform()) / 256.0;
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct BreakdownRow {
    example_id: usize,
    prior_term: f64,
    volume_term: f64,
    total: f64,
    bpd: f64,
}

pub fn write_breakdown_csv_to<W: Write>(w: W, rows: &[LikelihoodBreakdown]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (example_id, r) in rows.iter().enumerate() {
        out.serialize(BreakdownRow {
            example_id,
            prior_term: r.prior_term,
            volume_term: r.volume_term,
            total: r.total,
            bpd: r.bpd,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_breakdown_csv(path: impl AsRef<Path>, rows: &[LikelihoodBreakdown]) -> Result<()> {
    write_breakdown_csv_to(std::fs::File::create(path)?, rows)
}
