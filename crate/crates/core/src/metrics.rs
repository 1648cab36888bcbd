//! SINR under imperfect CSIT, rates and the ergodic sum-rate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, CMatrix};
use crate::units::linear_to_db;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Which per-realization SINR expression the rate evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinrModel {
    /// Useful power `|g_k^T p_k|²` over `Σ_{i≠k}|g_k^T p_i|² + σn²`, with the
    /// true channel of the realization.
    #[default]
    TrueChannel,
    /// Estimate-referenced form: `|ĝ_k^T p_k|²` over
    /// `d_g + Σ_{i≠k}|(ĝ_k − g̃_k)^T p_i|² + τ²σn²`. The denominator may be
    /// nonpositive for some realizations; those samples are dropped.
    EstimateReferenced,
}

/// Terms of the estimate-referenced SINR of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrBreakdown {
    /// `|ĝ_k^T p_k|²`
    pub signal: f64,
    /// `d_g = |g̃_k^T p_k|² − 2·Re{(ĝ_k^T p_k)*·(g̃_k^T p_k)}`
    pub self_error: f64,
    /// `Σ_{i≠k} |(ĝ_k − g̃_k)^T p_i|²`
    pub interference: f64,
    /// `τ²σn²`
    pub noise: f64,
    pub gamma: f64,
}

impl SinrBreakdown {
    pub fn denominator(&self) -> f64 {
        self.self_error + self.interference + self.noise
    }

    /// `τ²·E|y_k|²`: desired power through the realized channel plus
    /// interference plus noise.
    pub fn received_power_scaled(&self) -> f64 {
        self.signal + self.denominator()
    }
}

fn breakdown_from(x: &CMatrix, e: &CMatrix, k: usize, noise: f64) -> Result<SinrBreakdown> {
    let (xs, es) = (x[(k, k)], e[(k, k)]);
    let signal = xs.norm_sqr();
    let self_error = es.norm_sqr() - 2.0 * (xs.conj() * es).re;
    let interference = (0..x.ncols())
        .filter(|&i| i != k)
        .map(|i| (x[(k, i)] - e[(k, i)]).norm_sqr())
        .sum();
    let mut b = SinrBreakdown {
        signal,
        self_error,
        interference,
        noise,
        gamma: f64::NAN,
    };
    let denom = b.denominator();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Numerical(format!(
            "nonpositive SINR denominator {denom:e} for user {k}"
        )));
    }
    b.gamma = signal / denom;
    Ok(b)
}

fn check_shapes(g_hat: &CMatrix, other: &CMatrix, p: &CMatrix) -> Result<()> {
    if g_hat.shape() != other.shape() || p.shape() != g_hat.shape() {
        return Err(Error::domain(format!(
            "shape mismatch: estimate {:?}, second channel {:?}, precoder {:?}",
            g_hat.shape(),
            other.shape(),
            p.shape()
        )));
    }
    Ok(())
}

/// Estimate-referenced SINR terms of user `k`.
pub fn sinr(
    k: usize,
    g_hat: &CMatrix,
    g_err: &CMatrix,
    p: &CMatrix,
    tau: f64,
    sigma_n2: f64,
) -> Result<SinrBreakdown> {
    check_shapes(g_hat, g_err, p)?;
    if k >= g_hat.ncols() {
        return Err(Error::domain(format!("user {k} out of range")));
    }
    if !(tau >= 1.0) {
        return Err(Error::domain(format!("tau must be at least 1, got {tau}")));
    }
    let x = g_hat.transpose() * p;
    let e = g_err.transpose() * p;
    breakdown_from(&x, &e, k, tau * tau * sigma_n2)
}

/// Estimate-referenced SINR terms for all users at once.
pub fn sinr_all(
    g_hat: &CMatrix,
    g_err: &CMatrix,
    p: &CMatrix,
    tau: f64,
    sigma_n2: f64,
) -> Result<Vec<Result<SinrBreakdown>>> {
    check_shapes(g_hat, g_err, p)?;
    let x = g_hat.transpose() * p;
    let e = g_err.transpose() * p;
    let noise = tau * tau * sigma_n2;
    Ok((0..p.ncols())
        .map(|k| breakdown_from(&x, &e, k, noise))
        .collect())
}

/// `|g_k^T p_k|² / (Σ_{i≠k}|g_k^T p_i|² + σn²)` for every user.
pub fn true_channel_sinr(g_true: &CMatrix, p: &CMatrix, sigma_n2: f64) -> Result<Vec<f64>> {
    check_shapes(g_true, g_true, p)?;
    let x = g_true.transpose() * p;
    Ok((0..p.ncols())
        .map(|k| {
            let row_power: f64 = x.row(k).iter().map(Complex64::norm_sqr).sum();
            let signal = x[(k, k)].norm_sqr();
            signal / ((row_power - signal).max(0.0) + sigma_n2)
        })
        .collect())
}

/// `log2(1 + γ)` in bits/s/Hz.
pub fn instantaneous_rate(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!(
            "SINR must be nonnegative, got {gamma}"
        )));
    }
    Ok(gamma.ln_1p() / std::f64::consts::LN_2)
}

/// Mean of the instantaneous rates observed for one channel estimate.
pub fn average_rate(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("average_rate needs at least one sample"));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Per-user average rate over all channel draws, bits/s/Hz.
    pub per_user_avg_rate: Vec<f64>,
    /// Ergodic sum-rate, bits/s/Hz.
    pub esr: f64,
    /// 95% normal-approximation half-width of the ESR; 0 for a single draw.
    pub ci_halfwidth: f64,
    pub n_channel_draws: usize,
    pub n_error_draws: usize,
}

impl RateReport {
    pub fn ci(&self) -> (f64, f64) {
        (self.esr - self.ci_halfwidth, self.esr + self.ci_halfwidth)
    }
}

/// ESR from per-draw average user rates (`per_draw[d][k]`), summed in draw order.
pub fn ergodic_sum_rate(per_draw: &[Vec<f64>], n_error_draws: usize) -> Result<RateReport> {
    let draws = per_draw.len();
    if draws == 0 {
        return Err(Error::domain(
            "ergodic_sum_rate needs at least one channel draw",
        ));
    }
    let k = per_draw[0].len();
    if per_draw.iter().any(|r| r.len() != k) {
        return Err(Error::domain("per-draw rate vectors differ in length"));
    }
    let sums: Vec<f64> = per_draw.iter().map(|r| r.iter().sum()).collect();
    let esr = sums.iter().sum::<f64>() / draws as f64;
    let ci_halfwidth = if draws > 1 {
        let var = sums.iter().map(|s| (s - esr).powi(2)).sum::<f64>() / (draws - 1) as f64;
        Z95 * (var / draws as f64).sqrt()
    } else {
        0.0
    };
    let per_user_avg_rate = (0..k)
        .map(|u| per_draw.iter().map(|r| r[u]).sum::<f64>() / draws as f64)
        .collect();
    Ok(RateReport {
        per_user_avg_rate,
        esr,
        ci_halfwidth,
        n_channel_draws: draws,
        n_error_draws,
    })
}

/// `10·log10(P_t·tr(G^T G*) / (N·K·σn²))`.
pub fn realized_snr(g_true: &CMatrix, p_t: f64, sigma_n2: f64) -> f64 {
    let (n, k) = g_true.shape();
    linear_to_db(p_t * frobenius_sq(g_true) / (n as f64 * k as f64 * sigma_n2))
}
