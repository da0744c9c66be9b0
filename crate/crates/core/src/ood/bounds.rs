//! Volume and likelihood bounds: Hadamard's inequality, a Chebyshev-type
//! concentration inequality for Lipschitz maps, and the Gaussian-mode
//! likelihood ceiling `−D/2·log(2πσ²) + D log L`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::likelihood::Prior;
use crate::tensor::{finite_diff_jacobian, RngState, SquareMatrix, Tensor, DEFAULT_FD_EPS};

pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    pub index: usize,
    pub left: f64,
    pub right: f64,
}

/// One inequality `left ≤ right` checked over a set of points; `left` and
/// `right` are taken at the point with the smallest margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub left: f64,
    pub right: f64,
    pub satisfied: bool,
    pub checked: usize,
    pub violations: usize,
    pub worst_case: Option<WorstCase>,
    pub note: String,
}

impl BoundReport {
    /// Build from `(left, right)` pairs.
    pub fn from_pairs(name: &str, pairs: &[(f64, f64)], note: &str) -> Self {
        let mut worst: Option<WorstCase> = None;
        let mut violations = 0;
        for (i, &(l, r)) in pairs.iter().enumerate() {
            if !(l <= r + BOUND_SLACK) {
                violations += 1;
            }
            let margin = r - l;
            if worst
                .as_ref()
                .is_none_or(|w| margin < w.right - w.left || margin.is_nan())
            {
                worst = Some(WorstCase {
                    index: i,
                    left: l,
                    right: r,
                });
            }
        }
        let (left, right) = worst.as_ref().map_or((f64::NAN, f64::NAN), |w| (w.left, w.right));
        Self {
            name: name.to_string(),
            left,
            right,
            satisfied: violations == 0 && !pairs.is_empty(),
            checked: pairs.len(),
            violations,
            worst_case: worst,
            note: note.to_string(),
        }
    }
}

/// `(log|det J|, Σ_j log‖J e_j‖, max_j ‖J e_j‖)` for one Jacobian.
pub fn hadamard_terms(j: &SquareMatrix) -> Result<(f64, f64, f64)> {
    let cols = j.column_norms();
    let sum_log: f64 = cols.iter().map(|c| c.ln()).sum();
    let max_col = cols.iter().cloned().fold(0.0, f64::max);
    let logdet = match j.lu_logabsdet() {
        Ok((l, _)) => l,
        Err(Error::SingularMatrix { .. }) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok((logdet, sum_log, max_col))
}

/// Hadamard check for a single matrix: both `log|det| ≤ Σ log‖col‖` and
/// `Σ log‖col‖ ≤ D log L`, `L` the largest column norm.
pub fn hadamard_check_matrix(j: &SquareMatrix) -> Result<Vec<BoundReport>> {
    let (logdet, sum_log, max_col) = hadamard_terms(j)?;
    let d = j.order() as f64;
    Ok(vec![
        BoundReport::from_pairs("hadamard", &[(logdet, sum_log)], "log|det J| <= sum_j log||J e_j||"),
        BoundReport::from_pairs(
            "column_lipschitz",
            &[(sum_log, d * max_col.ln())],
            "sum_j log||J e_j|| <= D log L",
        ),
    ])
}

fn jacobians(model: &FlowModel, points: &Tensor) -> Vec<SquareMatrix> {
    points
        .examples()
        .map(|x| {
            finite_diff_jacobian(
                |v| model.forward_example(v).expect("length checked").0,
                x,
                DEFAULT_FD_EPS,
            )
        })
        .collect()
}

fn check_points(model: &FlowModel, points: &Tensor) -> Result<()> {
    if points.rank() < 2 || points.example_len() != model.dim() {
        return Err(crate::error::shape_mismatch(model.dim(), points.shape()));
    }
    Ok(())
}

/// Lipschitz estimate: the largest finite-difference Jacobian column norm
/// over `points`. This is a lower bound on the true constant.
pub fn estimate_lipschitz(model: &FlowModel, points: &Tensor) -> Result<f64> {
    check_points(model, points)?;
    Ok(jacobians(model, points)
        .iter()
        .flat_map(|j| j.column_norms())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HadamardReport {
    pub lipschitz_estimate: f64,
    /// Analytic log-det against the column-norm sum at each point.
    pub hadamard: BoundReport,
    /// Column-norm sum against `D log L̂`.
    pub lipschitz: BoundReport,
}

/// Hadamard's inequality at every point, using the model's analytic log-det
/// and finite-difference column norms.
pub fn hadamard_check(model: &FlowModel, points: &Tensor) -> Result<HadamardReport> {
    check_points(model, points)?;
    let jacs = jacobians(model, points);
    let l_hat = jacs.iter().flat_map(|j| j.column_norms()).fold(0.0, f64::max);
    let d = model.dim() as f64;
    let mut had = Vec::with_capacity(jacs.len());
    let mut lip = Vec::with_capacity(jacs.len());
    for (x, j) in points.examples().zip(&jacs) {
        let (_, ld) = model.forward_example(x)?;
        let (_, sum_log, _) = hadamard_terms(j)?;
        had.push((ld, sum_log));
        lip.push((sum_log, d * l_hat.ln()));
    }
    Ok(HadamardReport {
        lipschitz_estimate: l_hat,
        hadamard: BoundReport::from_pairs("hadamard", &had, "log|df/dx| <= sum_j log||J e_j|| (FD columns)"),
        lipschitz: BoundReport::from_pairs(
            "column_lipschitz",
            &lip,
            "sum_j log||J e_j|| <= D log L_hat; L_hat is an FD estimate (lower bound on true L)",
        ),
    })
}

/// Per-point ceiling `log p(x) ≤ −D/2·log(2πσ²) + D log L̂` for a Gaussian prior.
pub fn likelihood_bound_check(
    model: &FlowModel,
    prior: &Prior,
    points: &Tensor,
    lipschitz: f64,
) -> Result<BoundReport> {
    let Prior::Gaussian { sigma } = *prior else {
        return Err(Error::InvalidConfig("likelihood ceiling needs a Gaussian prior".into()));
    };
    check_points(model, points)?;
    let d = model.dim() as f64;
    let rhs = -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() + d * lipschitz.ln();
    let pairs: Vec<(f64, f64)> = points
        .examples()
        .map(|x| {
            let (z, ld) = model.forward_example(x)?;
            Ok((prior.log_prob(&z) + ld, rhs))
        })
        .collect::<Result<_>>()?;
    Ok(BoundReport::from_pairs(
        "gaussian_mode_bound",
        &pairs,
        "log p(x) <= -D/2 log(2 pi sigma^2) + D log L_hat",
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub delta: f64,
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub lipschitz: f64,
    /// Largest `|f(x) − f(y)| / |x − y|` over the sampled pairs.
    pub observed_ratio: f64,
    /// `E|x − μ_x|²`, estimated from the samples.
    pub input_variance: f64,
    pub rows: Vec<ConcentrationRow>,
    pub report: BoundReport,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Empirical check of `P(|f(x) − f(μ_x)| ≥ δ) ≤ L² σ_x² / δ²` for each δ,
/// allowing three binomial standard errors of sampling slack. Fails with
/// [`Error::InvalidLipschitz`] when consecutive sample pairs violate the
/// claimed constant.
pub fn concentration_check<F, S>(
    f: F,
    lipschitz: f64,
    mu_x: &[f64],
    mut sampler: S,
    deltas: &[f64],
    n_samples: usize,
    rng: &mut RngState,
) -> Result<ConcentrationReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
    S: FnMut(&mut RngState) -> Vec<f64>,
{
    if n_samples < 2 {
        return Err(Error::TooFewExamples {
            needed: 2,
            got: n_samples,
        });
    }
    let mu_z = f(mu_x);
    let xs: Vec<Vec<f64>> = (0..n_samples).map(|_| sampler(rng)).collect();
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| f(x)).collect();
    let mut observed: f64 = 0.0;
    for i in 1..n_samples {
        let dx = dist(&xs[i], &xs[i - 1]);
        if dx > 0.0 {
            observed = observed.max(dist(&zs[i], &zs[i - 1]) / dx);
        }
    }
    if observed > lipschitz * (1.0 + 1e-9) {
        return Err(Error::InvalidLipschitz {
            claimed: lipschitz,
            observed,
        });
    }
    let var_x = xs.iter().map(|x| dist(x, mu_x).powi(2)).sum::<f64>() / n_samples as f64;
    let dev: Vec<f64> = zs.iter().map(|z| dist(z, &mu_z)).collect();
    let n = n_samples as f64;
    let rows: Vec<ConcentrationRow> = deltas
        .iter()
        .map(|&delta| {
            let empirical = dev.iter().filter(|&&v| v >= delta).count() as f64 / n;
            let bound = lipschitz * lipschitz * var_x / (delta * delta);
            let slack = 3.0 * (empirical * (1.0 - empirical) / n).sqrt() + 1.0 / n;
            ConcentrationRow {
                delta,
                empirical,
                bound,
                slack,
                satisfied: empirical <= bound + slack,
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.empirical, r.bound + r.slack)).collect();
    Ok(ConcentrationReport {
        lipschitz,
        observed_ratio: observed,
        input_variance: var_x,
        report: BoundReport::from_pairs(
            "concentration",
            &pairs,
            "P(|f(x) - mu_z| >= delta) <= L^2 sigma_x^2 / delta^2 (+ 3 SE slack)",
        ),
        rows,
    })
}
