//! Conditional evidence of the effect given the cause.
//!
//! With `y = f(x) + eps`, `f` a zero-mean Gaussian process with stationary
//! kernel `F` and white noise of variance `s2`, the mechanism integrates out
//! exactly:
//!
//! ```text
//! -log p(y | x) = 0.5 log|G| + 0.5 y.G^{-1}.y + (N/2) log(2 pi),   G = F~ + s2 I
//! ```
//!
//! where `F~_ij = F(x_i, x_j)` is the Gram matrix of the samples.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::spectra::{PowerSpectrum, StationaryKernel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectModelConfig {
    pub f_spectrum: PowerSpectrum,
    pub noise_variance: f64,
    pub kernel_modes: usize,
}

impl EffectModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        if self.kernel_modes == 0 {
            return Err(Error::InvalidConfig("kernel_modes must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> StationaryKernel {
        StationaryKernel::new(&self.f_spectrum, self.kernel_modes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectLikelihood {
    /// `0.5 log|F~ + s2 I|`
    pub half_logdet: f64,
    /// `0.5 y.(F~ + s2 I)^{-1}.y`
    pub quad: f64,
    /// `(N/2) log(2 pi)`
    pub gauss_const: f64,
    pub total: f64,
}

fn check_unit_interval(x: &[f64]) -> Result<()> {
    for &v in x {
        if !v.is_finite() {
            return Err(Error::NonFinite("cause values"));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { value: v });
        }
    }
    Ok(())
}

fn gram_with_kernel(x: &[f64], kernel: &StationaryKernel) -> DMatrix<f64> {
    let n = x.len();
    let mut g = DMatrix::zeros(n, n);
    let variance = kernel.variance();
    for i in 0..n {
        g[(i, i)] = variance;
        for j in 0..i {
            let v = kernel.eval(x[i], x[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `F~_ij = F(x_i, x_j)`.
pub fn gram_matrix(x: &[f64], cfg: &EffectModelConfig) -> Result<DMatrix<f64>> {
    check_unit_interval(x)?;
    Ok(gram_with_kernel(x, &cfg.kernel()))
}

/// Negative log-density of `y` given `x`.
pub fn effect_hamiltonian(
    x: &[f64],
    y: &[f64],
    cfg: &EffectModelConfig,
) -> Result<EffectLikelihood> {
    effect_hamiltonian_with_kernel(x, y, cfg, &cfg.kernel())
}

pub(crate) fn effect_hamiltonian_with_kernel(
    x: &[f64],
    y: &[f64],
    cfg: &EffectModelConfig,
    kernel: &StationaryKernel,
) -> Result<EffectLikelihood> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidConfig(
            "effect likelihood needs at least one sample".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("effect values"));
    }
    check_unit_interval(x)?;

    let n = x.len();
    let mut g = gram_with_kernel(x, kernel);
    for i in 0..n {
        g[(i, i)] += cfg.noise_variance;
    }
    let chol = Cholesky::new(g)
        .ok_or_else(|| Error::NotPositiveDefinite(" (effect Gram matrix)".into()))?;
    let l = chol.l_dirty();
    let half_logdet = l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let yv = DVector::from_column_slice(y);
    let whitened = l
        .solve_lower_triangular(&yv)
        .ok_or_else(|| Error::NotPositiveDefinite(" (effect Gram matrix)".into()))?;
    let quad = 0.5 * whitened.norm_squared();
    let gauss_const = 0.5 * n as f64 * TAU.ln();
    Ok(EffectLikelihood {
        half_logdet,
        quad,
        gauss_const,
        total: half_logdet + quad + gauss_const,
    })
}
