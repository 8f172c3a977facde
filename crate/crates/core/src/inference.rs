//! Bayes factor between `X -> Y` and `Y -> X`.
//!
//! Both columns are mapped affinely onto `[0, 1]`. For each orientation the
//! directional Hamiltonian is the cause Hamiltonian of the putative cause plus
//! the effect Hamiltonian of the other column given it. The natural-log odds
//! in favour of `X -> Y` are `H(Y -> X) - H(X -> Y)`; `X -> Y` is returned
//! only when the odds are strictly positive.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cause::{
    cause_hamiltonian_from_counts, CauseModelConfig, CausePosterior, GradientTolerance,
    NewtonSolver,
};
use crate::effect::{effect_hamiltonian_with_kernel, EffectLikelihood, EffectModelConfig};
use crate::forward::bin_data;
use crate::spectra::{build_grid_covariance, GridConfig, PowerSpectrum, StationaryKernel};
use crate::{Direction, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub grid: GridConfig,
    pub beta_spectrum: PowerSpectrum,
    pub f_spectrum: PowerSpectrum,
    pub noise_variance: f64,
    pub rho: f64,
    /// Cosine modes of the effect kernel; `None` uses `n_bins`.
    pub kernel_modes: Option<usize>,
    pub newton_tolerance: GradientTolerance,
    pub max_newton_iterations: usize,
    pub solver: NewtonSolver,
}

impl InferenceConfig {
    /// Defaults on a grid of `n_bins` bins: `P_beta = P_f = 1000 / (q^4 + 1)`,
    /// noise variance 0.01, `rho = 1`.
    pub fn with_bins(n_bins: usize) -> Self {
        let spectrum = PowerSpectrum::new(1000.0, 4.0).expect("valid default spectrum");
        InferenceConfig {
            grid: GridConfig::new(n_bins.max(1)).expect("positive bin count"),
            beta_spectrum: spectrum,
            f_spectrum: spectrum,
            noise_variance: 0.01,
            rho: 1.0,
            kernel_modes: None,
            newton_tolerance: GradientTolerance::default(),
            max_newton_iterations: 100,
            solver: NewtonSolver::Auto,
        }
    }

    pub fn effect_config(&self) -> EffectModelConfig {
        EffectModelConfig {
            f_spectrum: self.f_spectrum,
            noise_variance: self.noise_variance,
            kernel_modes: self.kernel_modes.unwrap_or(self.grid.n_bins()),
        }
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig::with_bins(512)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianBreakdown {
    pub direction: Direction,
    pub cause: CausePosterior,
    pub effect: EffectLikelihood,
    pub total: f64,
}

impl HamiltonianBreakdown {
    /// Named terms in reporting order, ending with the direction total.
    pub fn terms(&self) -> Vec<(&'static str, f64)> {
        let c = &self.cause.terms;
        vec![
            ("cause_half_logdet", c.half_logdet),
            ("cause_log_k_factorial", c.log_k_factorial),
            ("cause_minus_k_beta", c.minus_k_beta),
            ("cause_rho_exp", c.rho_exp),
            ("cause_prior_quad", c.prior_quad),
            ("cause_total", self.cause.total),
            ("effect_half_logdet", self.effect.half_logdet),
            ("effect_quad", self.effect.quad),
            ("effect_gauss_const", self.effect.gauss_const),
            ("effect_total", self.effect.total),
            ("total", self.total),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    /// `ln O(X -> Y) = H(Y -> X) - H(X -> Y)`.
    pub log_odds: f64,
    pub decided_direction: Direction,
    pub breakdown_xy: HamiltonianBreakdown,
    pub breakdown_yx: HamiltonianBreakdown,
}

/// Maps a column affinely so that its minimum is 0 and maximum is 1.
pub fn rescale_column(values: &[f64], column: usize) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input column"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::DegenerateColumn { column });
    }
    let range = hi - lo;
    Ok(values.iter().map(|v| (v - lo) / range).collect())
}

pub fn rescale(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok((rescale_column(x, 0)?, rescale_column(y, 1)?))
}

/// Precomputed prior covariance and kernel for one hyperparameter set.
#[derive(Debug, Clone)]
pub struct CausalModel {
    cfg: InferenceConfig,
    cause: CauseModelConfig,
    effect: EffectModelConfig,
    kernel: StationaryKernel,
}

impl CausalModel {
    pub fn new(cfg: &InferenceConfig) -> Result<Self> {
        let beta_cov = Arc::new(build_grid_covariance(&cfg.beta_spectrum, &cfg.grid)?);
        let cause = CauseModelConfig {
            beta_covariance: beta_cov,
            rho: cfg.rho,
            newton_tolerance: cfg.newton_tolerance,
            max_newton_iterations: cfg.max_newton_iterations,
            solver: cfg.solver,
        };
        cause.validate()?;
        let effect = cfg.effect_config();
        effect.validate()?;
        Ok(CausalModel {
            cfg: cfg.clone(),
            kernel: effect.kernel(),
            cause,
            effect,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn cause_config(&self) -> &CauseModelConfig {
        &self.cause
    }

    pub fn effect_config(&self) -> &EffectModelConfig {
        &self.effect
    }

    /// Hamiltonian of the hypothesis "`cause` causes `effect`"; both columns
    /// must already lie in `[0, 1]`.
    pub fn directional_hamiltonian(
        &self,
        cause: &[f64],
        effect: &[f64],
        direction: Direction,
    ) -> Result<HamiltonianBreakdown> {
        let run = || -> Result<HamiltonianBreakdown> {
            let counts = bin_data(cause, &self.cfg.grid)?;
            let cause_post = cause_hamiltonian_from_counts(&counts, &self.cause)?;
            let effect_lik =
                effect_hamiltonian_with_kernel(cause, effect, &self.effect, &self.kernel)?;
            Ok(HamiltonianBreakdown {
                direction,
                total: cause_post.total + effect_lik.total,
                cause: cause_post,
                effect: effect_lik,
            })
        };
        run().map_err(|e| e.in_direction(direction))
    }

    pub fn infer(&self, x: &[f64], y: &[f64]) -> Result<InferenceResult> {
        let (xs, ys) = rescale(x, y)?;
        let (xy, yx) = rayon::join(
            || self.directional_hamiltonian(&xs, &ys, Direction::XToY),
            || self.directional_hamiltonian(&ys, &xs, Direction::YToX),
        );
        let (xy, yx) = (xy?, yx?);
        let log_odds = yx.total - xy.total;
        let decided_direction = if log_odds > 0.0 {
            Direction::XToY
        } else {
            Direction::YToX
        };
        Ok(InferenceResult {
            log_odds,
            decided_direction,
            breakdown_xy: xy,
            breakdown_yx: yx,
        })
    }
}

/// Hamiltonian of `X -> Y` for columns already in `[0, 1]`.
pub fn directional_hamiltonian(
    x: &[f64],
    y: &[f64],
    cfg: &InferenceConfig,
) -> Result<HamiltonianBreakdown> {
    CausalModel::new(cfg)?.directional_hamiltonian(x, y, Direction::XToY)
}

/// Rescales the data, evaluates both orientations and decides.
pub fn infer_direction(x: &[f64], y: &[f64], cfg: &InferenceConfig) -> Result<InferenceResult> {
    CausalModel::new(cfg)?.infer(x, y)
}
