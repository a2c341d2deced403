//! Feasible one-sample limit laws for spiked eigenvalues and eigenvectors.

use std::collections::BTreeMap;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{PanelData, SpectralSummary};
use crate::stats::normal_quantile;

/// Relative spike gap below which `ω̂` is refused.
pub const SPIKE_GAP_TOL: f64 = 1e-6;

/// Plug-in estimate of `σ²_{λ_k} = E z[k]⁴ − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueVarianceEstimate {
    pub k: usize,
    pub sigma2_hat: f64,
}

impl EigenvalueVarianceEstimate {
    /// Values in `(-1, 0]` cannot serve as a variance.
    pub fn is_degenerate(&self) -> bool {
        !(self.sigma2_hat > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalTarget {
    Eigenvalue,
    EigenvalueRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub target: IntervalTarget,
    /// Set when the variance estimate was not positive and the interval
    /// collapsed to the point estimate.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaWeights {
    pub k: usize,
    pub weights: BTreeMap<usize, f64>,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    Ok(())
}

fn check_compatible(panel: &PanelData, summary: &SpectralSummary) -> Result<()> {
    if panel.n_dim() != summary.n_dim() || panel.n_obs() != summary.n_obs() {
        return Err(Error::InvalidInput(format!(
            "panel is {} x {} but the summary describes T = {}, N = {}",
            panel.n_obs(),
            panel.n_dim(),
            summary.n_obs(),
            summary.n_dim()
        )));
    }
    Ok(())
}

fn fourth_moment_estimate(projections: &[f64], lambda: f64) -> f64 {
    let t = projections.len() as f64;
    projections.iter().map(|p| (p * p) * (p * p)).sum::<f64>() / (t * lambda * lambda) - 1.0
}

/// `σ̂²_{λ_k} = (1/(T λ̂_k²)) Σ_t (v̂_kᵀ y_t)⁴ − 1`.
///
/// `panel` must be the data `summary` was computed from (demeaned if the
/// covariance was).
pub fn sigma2_lambda_hat(
    panel: &PanelData,
    summary: &SpectralSummary,
    k: usize,
) -> Result<EigenvalueVarianceEstimate> {
    check_compatible(panel, summary)?;
    summary.check_index(k)?;
    let lambda = summary.eigenvalue(k);
    if !(lambda > 0.0) {
        return Err(Error::DegenerateSpectrum(format!("λ̂_{k} = {lambda}")));
    }
    let v = summary.vector(k);
    let mut proj = vec![0.0; panel.n_obs()];
    for (i, &vi) in v.iter().enumerate() {
        for (p, y) in proj.iter_mut().zip(panel.column(i)) {
            *p += vi * y;
        }
    }
    Ok(EigenvalueVarianceEstimate {
        k,
        sigma2_hat: fourth_moment_estimate(&proj, lambda),
    })
}

/// `σ̂²_{λ_j}` for every retained component `j = 1..=r_used`.
pub fn sigma2_all(panel: &PanelData, summary: &SpectralSummary) -> Result<Vec<EigenvalueVarianceEstimate>> {
    check_compatible(panel, summary)?;
    let r = summary.r_used();
    let mut proj = Mat::zeros(panel.n_obs(), r);
    matmul(&mut proj, Accum::Replace, panel.values(), summary.top_vectors(), 1.0, Par::Seq);
    (1..=r)
        .map(|k| {
            let lambda = summary.eigenvalue(k);
            if !(lambda > 0.0) {
                return Err(Error::DegenerateSpectrum(format!("λ̂_{k} = {lambda}")));
            }
            Ok(EigenvalueVarianceEstimate {
                k,
                sigma2_hat: fourth_moment_estimate(proj.col_as_slice(k - 1), lambda),
            })
        })
        .collect()
}

/// Wald interval for `λ_k` built on the ratio scale `λ̂_k / λ_k`.
///
/// The upper end is `+inf` once `z √(σ̂²/T) >= 1`.
pub fn eigenvalue_ci(
    summary: &SpectralSummary,
    sigma2: &EigenvalueVarianceEstimate,
    k: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    check_level(level)?;
    summary.check_index(k)?;
    let lambda = summary.eigenvalue(k);
    if sigma2.is_degenerate() {
        return Ok(ConfidenceInterval {
            lower: lambda,
            upper: lambda,
            level,
            target: IntervalTarget::Eigenvalue,
            degenerate: true,
        });
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    let half = z * (sigma2.sigma2_hat / summary.n_obs() as f64).sqrt();
    let lower = lambda / (1.0 + half);
    let upper = if half < 1.0 {
        lambda / (1.0 - half)
    } else {
        f64::INFINITY
    };
    Ok(ConfidenceInterval {
        lower: lower.min(upper),
        upper: lower.max(upper),
        level,
        target: IntervalTarget::Eigenvalue,
        degenerate: false,
    })
}

/// Variance of the ratio `λ̂_k / (tr − λ̂_k)`:
///
/// `σ̂²_{−k} = λ̂_k²/(tr−λ̂_k)² · [σ̂²_{λ_k} + Σ_{j≠k, j≤r} λ̂_j² σ̂²_{λ_j} / (tr−λ̂_k)²]`.
pub fn sigma2_minus_k(
    summary: &SpectralSummary,
    all_sigma2: &[EigenvalueVarianceEstimate],
    k: usize,
) -> Result<f64> {
    summary.check_index(k)?;
    let r = summary.r_used();
    let lookup = |j: usize| -> Result<f64> {
        all_sigma2
            .iter()
            .find(|e| e.k == j)
            .map(|e| e.sigma2_hat)
            .ok_or_else(|| Error::InvalidInput(format!("missing σ̂² for component {j}")))
    };
    let lambda = summary.eigenvalue(k);
    let rest = summary.trace() - lambda;
    if !(rest > 0.0) {
        return Err(Error::DegenerateSpectrum(format!(
            "tr − λ̂_{k} = {rest} is not positive"
        )));
    }
    let mut cross = 0.0;
    for j in (1..=r).filter(|&j| j != k) {
        let lj = summary.eigenvalue(j);
        cross += lj * lj * lookup(j)?;
    }
    let scale = (lambda / rest).powi(2);
    Ok(scale * (lookup(k)? + cross / (rest * rest)))
}

/// Interval for `ϱ_k = λ_k / tr(Σ)`: a Wald interval for `λ_k / (tr − λ_k)`
/// mapped through `x -> x / (1 + x)`.
pub fn ratio_ci(
    summary: &SpectralSummary,
    all_sigma2: &[EigenvalueVarianceEstimate],
    k: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let var = sigma2_minus_k(summary, all_sigma2, k)?;
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance(format!("σ̂²_(−{k}) = {var}")));
    }
    let lambda = summary.eigenvalue(k);
    let center = lambda / (summary.trace() - lambda);
    let z = normal_quantile((1.0 + level) / 2.0);
    let half = z * (var / summary.n_obs() as f64).sqrt();
    let to_share = |x: f64| x / (1.0 + x);
    Ok(ConfidenceInterval {
        lower: to_share((center - half).max(0.0)),
        upper: to_share(center + half),
        level,
        target: IntervalTarget::EigenvalueRatio,
        degenerate: false,
    })
}

/// `ω̂ = λ̂_k λ̂_i / (λ̂_k − λ̂_i)²`.
pub fn omega_hat(lambda_k: f64, lambda_i: f64) -> f64 {
    lambda_k * lambda_i / ((lambda_k - lambda_i) * (lambda_k - lambda_i))
}

/// `ω̂_{ki}` for every retained `i ≠ k`.
pub fn omega_weights(summary: &SpectralSummary, k: usize) -> Result<OmegaWeights> {
    summary.check_index(k)?;
    let lk = summary.eigenvalue(k);
    let mut weights = BTreeMap::new();
    for i in (1..=summary.r_used()).filter(|&i| i != k) {
        let li = summary.eigenvalue(i);
        let gap = (lk - li).abs() / lk.abs().max(li.abs());
        if !(gap >= SPIKE_GAP_TOL) {
            return Err(Error::NearDegenerateSpikes { k, i, gap });
        }
        weights.insert(i, omega_hat(lk, li));
    }
    Ok(OmegaWeights { k, weights })
}

/// `T (1 − ⟨v_k, v̂_k⟩² − (1/(T λ̂_k)) Σ_{j>r} λ̂_j / (1 − λ̂_j/λ̂_k)²)`.
///
/// Only meaningful when the population eigenvector is known.
pub fn eigenvector_concentration_stat(
    true_vector: &[f64],
    summary: &SpectralSummary,
    k: usize,
) -> Result<f64> {
    summary.check_index(k)?;
    if true_vector.len() != summary.n_dim() {
        return Err(Error::InvalidInput(format!(
            "vector has length {} but N = {}",
            true_vector.len(),
            summary.n_dim()
        )));
    }
    let norm = true_vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidVector(format!("norm {norm} is not 1")));
    }
    let lk = summary.eigenvalue(k);
    if !(lk > 0.0) {
        return Err(Error::DegenerateSpectrum(format!("λ̂_{k} = {lk}")));
    }
    let mut correction = 0.0;
    for (j, &lj) in summary.eigenvalues().iter().enumerate().skip(summary.r_used()) {
        let denom = 1.0 - lj / lk;
        if denom == 0.0 {
            return Err(Error::NumericalFailure(format!(
                "λ̂_{} equals λ̂_{k}",
                j + 1
            )));
        }
        correction += lj / (denom * denom);
    }
    let t = summary.n_obs() as f64;
    let dot: f64 = true_vector.iter().zip(summary.vector(k)).map(|(a, b)| a * b).sum();
    Ok(t * (1.0 - dot * dot - correction / (t * lk)))
}
