//! Out-of-distribution likelihood analysis: data moments, the CV gap
//! predictor and its finite-difference verification, volume and
//! concentration bounds, dimensionality sweeps, ensembles and latent
//! statistics.

mod bounds;
mod gap;
mod moments;
mod sweep;

pub use bounds::{
    concentration_check, estimate_lipschitz, hadamard_check, hadamard_check_matrix, hadamard_terms,
    likelihood_bound_check, BoundReport, ConcentrationReport, ConcentrationRow, HadamardReport, WorstCase, BOUND_SLACK,
};
pub use gap::{
    alpha_coeffs, alpha_from_kernels, conv_structure, hessian_check_cv, jacobian_diag_check, predict_gap_cv,
    predict_gap_from_sums, predict_gap_model, second_order_gap, AlphaCoefficients, ConvStructure,
    DiagonalJacobianCheck, GapPrediction, HessianCheck, SecondOrderGap, HESSIAN_EPS, PRIOR_HESSIAN_TOL,
    VOLUME_HESSIAN_TOL,
};
pub use moments::{compute_moments, gray_images, latent_stats, CodeStats, DataMoments};
pub use sweep::{simulate_bounds, trend_slope, write_sweep_csv, SweepConfig, SweepRow};

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::likelihood::{log_likelihood, Prior};
use crate::tensor::Tensor;

pub const DEFAULT_HISTOGRAM_BINS: usize = 80;

/// `log(1/M Σ_m p(x; θ_m))` per example, via max-shifted log-sum-exp.
pub fn ensemble_loglik(models: &[FlowModel], prior: &Prior, x: &Tensor) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let totals: Vec<Vec<f64>> = models
        .iter()
        .map(|m| Ok(log_likelihood(m, prior, x)?.iter().map(|r| r.total).collect()))
        .collect::<Result<_>>()?;
    Ok((0..x.n_examples())
        .map(|i| log_mean_exp(totals.iter().map(|t| t[i])))
        .collect())
}

/// `log Σ exp(v) − log n`, shifted by the max.
pub fn log_mean_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - max).exp(), n + 1));
    max + (sum / n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Equal-width histogram over the finite values; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    match finite_range(values) {
        Some((lo, hi)) => histogram_range(values, bins, lo, hi),
        None if bins == 0 => Err(no_bins()),
        None => Ok(Vec::new()),
    }
}

/// Smallest and largest finite value, if any.
pub fn finite_range(values: &[f64]) -> Option<(f64, f64)> {
    values.iter().filter(|v| v.is_finite()).fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((f64::min(lo, v), f64::max(hi, v))),
    })
}

fn no_bins() -> Error {
    Error::InvalidConfig("histogram needs at least one bin".into())
}

/// Histogram on fixed edges `[lo, hi]`, so several samples share bins.
/// Values outside the range are dropped; `lo == hi` widens to `±0.5`.
pub fn histogram_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(no_bins());
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::OutOfRange(format!("histogram range [{lo}, {hi}]")));
    }
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| (lo..=hi).contains(*v)) {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            bin_left: lo + k as f64 * width,
            bin_right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count,
        })
        .collect())
}

pub fn write_histogram_csv_to<W: Write>(w: W, bins: &[HistogramBin]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for b in bins {
        out.serialize(b)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: impl AsRef<Path>, bins: &[HistogramBin]) -> Result<()> {
    write_histogram_csv_to(std::fs::File::create(path)?, bins)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
