//! Second-order likelihood-gap analysis for constant-volume flows.
//!
//! For a CV flow the volume term is constant, so the gap between two input
//! distributions is driven by the prior term alone. With zero coupling nets
//! a CV flow is linear per pixel, `z_p = W x_p` with `W = U_K ⋯ U_1`.
//!
//! Two per-channel sensitivities are carried side by side:
//!
//! * `alpha[c] = Π_k Σ_j U_k[c, j]`, the product of kernel row sums, which
//!   drives [`predict_gap_cv`];
//! * the exact quantities of the linear map: `diag(W)` for the Jacobian
//!   diagonal and `−‖W e_c‖² / σ²` for the Hessian diagonal of the prior term.
//!
//! The two agree when every kernel is diagonal. The checks below report both.

use serde::Serialize;

use super::moments::DataMoments;
use crate::error::{Error, Result};
use crate::flow::{FlowLayer, FlowModel};
use crate::likelihood::Prior;
use crate::tensor::{
    finite_diff_gradient, finite_diff_hessian_diag, finite_diff_jacobian, SquareMatrix, DEFAULT_FD_EPS,
};

/// Step for second-difference Hessians; the log-densities here are close to
/// quadratic, so a wide step costs little truncation and avoids cancellation.
pub const HESSIAN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaCoefficients {
    pub alpha: Vec<f64>,
    /// Number of 1×1 kernels in the product.
    pub kernels: usize,
}

impl AlphaCoefficients {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self { alpha, kernels: 0 }
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }
}

/// How input coordinates move through a CV model's rearranging layers.
#[derive(Debug, Clone)]
pub struct ConvStructure {
    pub kernels: Vec<SquareMatrix>,
    /// Channel of the first kernel's input that each input coordinate feeds.
    pub channel_of_dim: Vec<usize>,
    /// Latent index each input coordinate ends up at when couplings act as identity.
    pub z_position_of_dim: Vec<usize>,
}

impl ConvStructure {
    /// `W = U_K ⋯ U_1`.
    pub fn total_kernel(&self) -> SquareMatrix {
        let c = self.kernels[0].order();
        self.kernels
            .iter()
            .fold(SquareMatrix::identity(c), |acc, u| u.matmul(&acc))
    }

    pub fn channels(&self) -> usize {
        self.kernels[0].order()
    }
}

pub fn conv_structure(model: &FlowModel) -> Result<ConvStructure> {
    if !model.is_constant_volume() {
        return Err(Error::NotConstantVolume(
            "alpha coefficients need additive couplings and 1x1 convolutions only".into(),
        ));
    }
    let d = model.dim();
    let mut cur: Vec<usize> = (0..d).collect();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    let mut kernels = Vec::new();
    let mut channel_of_dim: Option<Vec<usize>> = None;
    // A rearranging layer after the first kernel ends the product.
    let mut closed = false;
    for layer in model.layers() {
        match layer {
            FlowLayer::InvConv1x1(conv) => {
                if closed {
                    return Err(Error::InvalidConfig(
                        "1x1 convolutions must not be separated by squeeze, factor-out or permutation layers".into(),
                    ));
                }
                if channel_of_dim.is_none() {
                    let c = conv.shape.c;
                    let mut ch = vec![0; d];
                    for (pos, &tag) in cur.iter().enumerate() {
                        ch[tag] = pos % c;
                    }
                    channel_of_dim = Some(ch);
                }
                kernels.push(conv.kernel.clone());
            }
            FlowLayer::Squeeze { perm, .. }
            | FlowLayer::FixedPermutation { perm, .. }
            | FlowLayer::FactorOut { perm, .. } => {
                closed |= !kernels.is_empty();
                cur = (0..perm.len()).map(|i| cur[perm.source(i)]).collect();
                if matches!(layer, FlowLayer::FactorOut { .. }) {
                    let kept = layer.out_shape().len();
                    parts.push(cur.split_off(kept));
                }
            }
            FlowLayer::AdditiveCoupling(_) | FlowLayer::AffineCoupling(_) => {}
        }
    }
    let channel_of_dim = channel_of_dim.ok_or_else(|| Error::InvalidConfig("model has no 1x1 convolutions".into()))?;
    parts.push(cur);
    let mut z_position_of_dim = vec![0; d];
    for (pos, &tag) in parts.concat().iter().enumerate() {
        z_position_of_dim[tag] = pos;
    }
    Ok(ConvStructure {
        kernels,
        channel_of_dim,
        z_position_of_dim,
    })
}

/// `α_c = Π_k (row sum c of U_k)`.
pub fn alpha_coeffs(model: &FlowModel) -> Result<AlphaCoefficients> {
    let s = conv_structure(model)?;
    Ok(alpha_from_kernels(&s.kernels))
}

pub fn alpha_from_kernels(kernels: &[SquareMatrix]) -> AlphaCoefficients {
    let c = kernels.first().map_or(0, SquareMatrix::order);
    let mut alpha = vec![1.0; c];
    for u in kernels {
        for (a, r) in alpha.iter_mut().zip(u.row_sums()) {
            *a *= r;
        }
    }
    AlphaCoefficients {
        alpha,
        kernels: kernels.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPrediction {
    pub alpha: Vec<f64>,
    pub sigma_psi: f64,
    pub s_q: Vec<f64>,
    pub s_p: Vec<f64>,
    /// `−α_c² (S_{q,c} − S_{p,c}) / (2σ_ψ²)`.
    pub contributions: Vec<f64>,
    pub total: f64,
}

/// `E_q[log p] − E_p[log p] ≈ −1/(2σ_ψ²) Σ_c α_c² (S_{q,c} − S_{p,c})`.
pub fn predict_gap_cv(
    alphas: &AlphaCoefficients,
    moments_q: &DataMoments,
    moments_p: &DataMoments,
    sigma_psi: f64,
) -> Result<GapPrediction> {
    predict_gap_from_sums(
        &alphas.alpha,
        &moments_q.channel_variance_sums,
        &moments_p.channel_variance_sums,
        sigma_psi,
    )
}

pub fn predict_gap_from_sums(alpha: &[f64], s_q: &[f64], s_p: &[f64], sigma_psi: f64) -> Result<GapPrediction> {
    if s_q.len() != s_p.len() {
        return Err(Error::ChannelMismatch(s_q.len(), s_p.len()));
    }
    if alpha.len() != s_q.len() {
        return Err(Error::ChannelMismatch(alpha.len(), s_q.len()));
    }
    if !(sigma_psi > 0.0 && sigma_psi.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma_psi must be positive, got {sigma_psi}"
        )));
    }
    let k = -0.5 / (sigma_psi * sigma_psi);
    let contributions: Vec<f64> = alpha
        .iter()
        .zip(s_q.iter().zip(s_p))
        .map(|(a, (q, p))| k * a * a * (q - p))
        .collect();
    Ok(GapPrediction {
        alpha: alpha.to_vec(),
        sigma_psi,
        s_q: s_q.to_vec(),
        s_p: s_p.to_vec(),
        total: contributions.iter().sum(),
        contributions,
    })
}

fn variances_in_conv_channels(s: &ConvStructure, m: &DataMoments) -> Option<Vec<f64>> {
    if m.variance.len() != s.channel_of_dim.len() {
        return None;
    }
    let mut sums = vec![0.0; s.channels()];
    for (d, v) in m.variance.iter().enumerate() {
        sums[s.channel_of_dim[d]] += v;
    }
    Some(sums)
}

/// [`predict_gap_cv`] for a model whose kernels may act on squeezed or
/// rearranged channels: per-dimension variances are summed into the channel
/// each coordinate feeds at the first kernel.
pub fn predict_gap_model(
    model: &FlowModel,
    moments_q: &DataMoments,
    moments_p: &DataMoments,
    sigma_psi: f64,
) -> Result<GapPrediction> {
    let s = conv_structure(model)?;
    let alpha = alpha_from_kernels(&s.kernels);
    match (
        variances_in_conv_channels(&s, moments_q),
        variances_in_conv_channels(&s, moments_p),
    ) {
        (Some(q), Some(p)) => predict_gap_from_sums(&alpha.alpha, &q, &p, sigma_psi),
        _ => predict_gap_cv(&alpha, moments_q, moments_p, sigma_psi),
    }
}

fn log_density_fn<'a>(model: &'a FlowModel, prior: &'a Prior) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let (z, ld) = model.forward_example(x).expect("input length checked by caller");
        prior.log_prob(&z) + ld
    }
}

fn check_point(model: &FlowModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(crate::error::shape_mismatch(model.dim(), x0.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrderGap {
    pub gradient_term: f64,
    pub curvature_term: f64,
    pub total: f64,
}

/// Taylor estimate `∇log p(x₀)·(μ_q − μ_p) + ½ Σ_d H_dd (σ²_{q,d} − σ²_{p,d})`
/// with the gradient and diagonal Hessian of `log p` taken by finite
/// differences at `x₀`. Off-diagonal covariance is ignored.
pub fn second_order_gap(
    model: &FlowModel,
    prior: &Prior,
    x0: &[f64],
    moments_q: &DataMoments,
    moments_p: &DataMoments,
) -> Result<SecondOrderGap> {
    check_point(model, x0)?;
    let d = model.dim();
    for m in [moments_q, moments_p] {
        if m.mean.len() != d || m.variance.len() != d {
            return Err(crate::error::shape_mismatch(d, m.variance.len()));
        }
    }
    let f = log_density_fn(model, prior);
    let grad = finite_diff_gradient(&f, x0, DEFAULT_FD_EPS);
    let hess = finite_diff_hessian_diag(&f, x0, HESSIAN_EPS);
    let gradient_term: f64 = grad
        .iter()
        .zip(moments_q.mean.iter().zip(&moments_p.mean))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    let curvature_term: f64 = 0.5
        * hess
            .iter()
            .zip(moments_q.variance.iter().zip(&moments_p.variance))
            .map(|(h, (a, b))| h * (a - b))
            .sum::<f64>();
    Ok(SecondOrderGap {
        gradient_term,
        curvature_term,
        total: gradient_term + curvature_term,
    })
}

fn gaussian_sigma(prior: &Prior) -> Result<f64> {
    match *prior {
        Prior::Gaussian { sigma } => Ok(sigma),
        other => Err(Error::InvalidConfig(format!(
            "closed-form curvature needs a Gaussian prior, got {other:?}"
        ))),
    }
}

/// Diagonal Jacobian check `∂z_{pos(d)}/∂x_d` against `α` and against `diag(W)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalJacobianCheck {
    pub fd_diag: Vec<f64>,
    pub alpha_diag: Vec<f64>,
    pub exact_diag: Vec<f64>,
    pub residual_alpha: f64,
    pub residual_exact: f64,
}

pub fn jacobian_diag_check(model: &FlowModel, x0: &[f64]) -> Result<DiagonalJacobianCheck> {
    check_point(model, x0)?;
    let s = conv_structure(model)?;
    let alpha = alpha_from_kernels(&s.kernels).alpha;
    let w = s.total_kernel();
    let jac = finite_diff_jacobian(
        |x| model.forward_example(x).expect("length checked").0,
        x0,
        DEFAULT_FD_EPS,
    );
    let d = model.dim();
    let fd_diag: Vec<f64> = (0..d).map(|i| jac.get(s.z_position_of_dim[i], i)).collect();
    let alpha_diag: Vec<f64> = (0..d).map(|i| alpha[s.channel_of_dim[i]]).collect();
    let exact_diag: Vec<f64> = (0..d)
        .map(|i| {
            let c = s.channel_of_dim[i];
            w.get(c, c)
        })
        .collect();
    Ok(DiagonalJacobianCheck {
        residual_alpha: max_abs_diff(&fd_diag, &alpha_diag),
        residual_exact: max_abs_diff(&fd_diag, &exact_diag),
        fd_diag,
        alpha_diag,
        exact_diag,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub const VOLUME_HESSIAN_TOL: f64 = 1e-5;
pub const PRIOR_HESSIAN_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianCheck {
    pub sigma_psi: f64,
    /// FD diagonal Hessian of the volume term.
    pub volume_diag: Vec<f64>,
    /// FD diagonal Hessian of the full log-likelihood.
    pub loglik_diag: Vec<f64>,
    /// `−α_c² / σ_ψ²` per input coordinate.
    pub closed_form: Vec<f64>,
    /// `−‖W e_c‖² / σ_ψ²` per input coordinate.
    pub exact_form: Vec<f64>,
    pub volume_max_abs: f64,
    pub residual_closed_form: f64,
    pub residual_exact_form: f64,
    pub volume_ok: bool,
    pub closed_form_ok: bool,
    pub exact_form_ok: bool,
}

/// Finite-difference verification of the CV curvature at `x₀`. Residuals
/// are meaningful as pass/fail only for zero coupling nets.
pub fn hessian_check_cv(model: &FlowModel, prior: &Prior, x0: &[f64]) -> Result<HessianCheck> {
    check_point(model, x0)?;
    let sigma = gaussian_sigma(prior)?;
    let s = conv_structure(model)?;
    let alpha = alpha_from_kernels(&s.kernels).alpha;
    let col_sq: Vec<f64> = s.total_kernel().column_norms().iter().map(|n| n * n).collect();
    let var = sigma * sigma;
    let volume = |x: &[f64]| model.forward_example(x).expect("length checked").1;
    let volume_diag = finite_diff_hessian_diag(volume, x0, HESSIAN_EPS);
    let loglik_diag = finite_diff_hessian_diag(log_density_fn(model, prior), x0, HESSIAN_EPS);
    let d = model.dim();
    let closed_form: Vec<f64> = (0..d).map(|i| -alpha[s.channel_of_dim[i]].powi(2) / var).collect();
    let exact_form: Vec<f64> = (0..d).map(|i| -col_sq[s.channel_of_dim[i]] / var).collect();
    let volume_max_abs = volume_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual_closed_form = max_abs_diff(&loglik_diag, &closed_form);
    let residual_exact_form = max_abs_diff(&loglik_diag, &exact_form);
    Ok(HessianCheck {
        sigma_psi: sigma,
        volume_ok: volume_max_abs < VOLUME_HESSIAN_TOL,
        closed_form_ok: residual_closed_form < PRIOR_HESSIAN_TOL,
        exact_form_ok: residual_exact_form < PRIOR_HESSIAN_TOL,
        volume_diag,
        loglik_diag,
        closed_form,
        exact_form,
        volume_max_abs,
        residual_closed_form,
        residual_exact_form,
    })
}
