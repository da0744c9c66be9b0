//! Dimensionality sweep on replicated two-moons data: how the prior and
//! volume terms of a trained NVP model move as `D` grows.

use serde::Serialize;

use super::bounds::{estimate_lipschitz, likelihood_bound_check};
use crate::data::{gen_two_moons, replicate_dims, DEFAULT_MOON_NOISE};
use crate::error::{Error, Result};
use crate::flow::{build_model, ExampleShape, ModelConfig, Variant};
use crate::likelihood::{log_likelihood, Prior};
use crate::tensor::RngState;
use crate::train::{train, TrainConfig, TrainData};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub noise: f64,
    pub couplings: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluation points used for the Lipschitz estimate and the likelihood ceiling.
    pub bound_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_eval: 500,
            noise: DEFAULT_MOON_NOISE,
            couplings: 4,
            hidden: 32,
            steps: 1500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            bound_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub dim: usize,
    pub prior_mean: f64,
    pub volume_mean: f64,
    pub total_mean: f64,
    pub volume_max: f64,
    pub volume_nonpositive: bool,
    pub lipschitz_estimate: f64,
    pub likelihood_bound: f64,
    pub bound_satisfied: bool,
}

/// Train one model per entry of `dims` and record both likelihood terms on
/// held-out data.
pub fn simulate_bounds(dims: &[usize], variant: Variant, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if let Some(&d) = dims.iter().find(|&&d| d < 2 || d % 2 != 0) {
        return Err(Error::InvalidDim(d));
    }
    let prior = Prior::default();
    dims.iter()
        .map(|&d| {
            let root = RngState::new(config.seed).child(d as u64);
            let mut rng = root.child(0);
            let train_moons = gen_two_moons(config.n_train, config.noise, &mut rng)?;
            let eval_moons = gen_two_moons(config.n_eval, config.noise, &mut rng)?;
            let x_train = replicate_dims(&train_moons, d, &mut rng)?;
            let x_eval = replicate_dims(&eval_moons, d, &mut rng)?;
            let model_cfg = ModelConfig {
                input_shape: ExampleShape::flat(d),
                variant,
                couplings: config.couplings,
                hidden: config.hidden,
                ..ModelConfig::default()
            };
            let mut model = build_model(&model_cfg, &mut root.child(1))?;
            let train_cfg = TrainConfig {
                lr: config.lr,
                steps: config.steps,
                batch_size: config.batch_size,
                seed: root.child(2).next_u64(),
                eval_every: config.steps.max(1),
                ..TrainConfig::default()
            };
            train(
                &mut model,
                &prior,
                TrainData {
                    train: &x_train,
                    eval: None,
                },
                &train_cfg,
            )?;
            let rows = log_likelihood(&model, &prior, &x_eval)?;
            let n = rows.len() as f64;
            let bound_pts = x_eval.select(&(0..config.bound_points.min(x_eval.n_examples())).collect::<Vec<_>>());
            let lipschitz = estimate_lipschitz(&model, &bound_pts)?;
            let bound = likelihood_bound_check(&model, &prior, &bound_pts, lipschitz)?;
            Ok(SweepRow {
                dim: d,
                prior_mean: rows.iter().map(|r| r.prior_term).sum::<f64>() / n,
                volume_mean: rows.iter().map(|r| r.volume_term).sum::<f64>() / n,
                total_mean: rows.iter().map(|r| r.total).sum::<f64>() / n,
                volume_max: rows.iter().map(|r| r.volume_term).fold(f64::NEG_INFINITY, f64::max),
                volume_nonpositive: rows.iter().all(|r| r.volume_term <= 0.0),
                lipschitz_estimate: lipschitz,
                likelihood_bound: bound.right,
                bound_satisfied: bound.satisfied,
            })
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn trend_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
