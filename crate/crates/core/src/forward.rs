//! Synthetic cause-effect pairs drawn from the generative model.
//!
//! One draw:
//!
//! 1. sample a log-density field `beta ~ N(0, B)` on the grid midpoints;
//! 2. set Poisson means `lambda_j = target * exp(beta_j) / sum_l exp(beta_l)`,
//!    so the expected sample count is `target`;
//! 3. draw counts `k_j ~ Poisson(lambda_j)` and repeat midpoint `z_j` `k_j`
//!    times to form the cause sample `x`;
//! 4. sample a mechanism `f ~ N(0, F)` on the grid and map it affinely onto
//!    `[0, 1]`;
//! 5. `y_i = f(x_i) + eps_i` with i.i.d. `eps_i ~ N(0, noise_variance)`;
//! 6. with probability one half the columns are swapped and the label flips.
//!
//! The realised sample count `N = sum_j k_j` is random around the target.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::{self, SeededRng};
use crate::spectra::{
    build_grid_covariance, sample_field_with, CovarianceMatrix, GridConfig, PowerSpectrum,
};
use crate::{Direction, Error, Result};

const MAX_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub beta_spectrum: PowerSpectrum,
    pub f_spectrum: PowerSpectrum,
    /// Zero is accepted and yields noiseless effects.
    pub noise_variance: f64,
    pub n_bins: usize,
    pub target_samples: usize,
    pub seed: u64,
}

impl ForwardConfig {
    /// Benchmark defaults on `n_bins` bins: spectra `n_bins / (q^4 + 1)`,
    /// noise variance 0.05, 300 target samples.
    ///
    /// Grid covariances are normalized per bin, so the amplitude is scaled by
    /// `n_bins` to keep the field variance independent of the resolution
    /// (a unit-amplitude spectrum on the continuum).
    pub fn with_bins(n_bins: usize) -> Self {
        let spectrum = PowerSpectrum::new(n_bins.max(1) as f64, 4.0).expect("positive amplitude");
        ForwardConfig {
            beta_spectrum: spectrum,
            f_spectrum: spectrum,
            noise_variance: 0.05,
            n_bins,
            target_samples: 300,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if self.target_samples == 0 {
            return Err(Error::InvalidConfig(
                "target_samples must be at least 1".into(),
            ));
        }
        if self.n_bins < 2 {
            return Err(Error::InvalidConfig(
                "the forward model needs at least two bins".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig::with_bins(512)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub true_direction: Direction,
}

impl LabeledPair {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    counts: Vec<u64>,
}

impl BinCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        BinCounts { counts }
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.counts.len(), self.counts.iter().map(|&k| k as f64))
    }
}

/// Histogram of `x` on `grid`. Values outside `[0, 1]` are rejected.
pub fn bin_data(x: &[f64], grid: &GridConfig) -> Result<BinCounts> {
    let mut counts = vec![0u64; grid.n_bins()];
    for &v in x {
        let j = grid.bin_index(v).ok_or(Error::OutOfRange { value: v })?;
        counts[j] += 1;
    }
    Ok(BinCounts { counts })
}

/// Everything drawn for one pair, before the optional column swap is undone.
#[derive(Debug, Clone)]
pub struct ForwardDraw {
    pub pair: LabeledPair,
    /// Cause values in generation order (before any swap).
    pub cause: Vec<f64>,
    /// Noiseless mechanism values `f(cause_i)`.
    pub mechanism: Vec<f64>,
    pub beta: DVector<f64>,
    pub lambda: Vec<f64>,
    pub counts: BinCounts,
    /// Rescaled mechanism on the grid midpoints.
    pub f_grid: Vec<f64>,
}

/// Precomputed covariances for repeated draws with one configuration.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    cfg: ForwardConfig,
    grid: GridConfig,
    beta_cov: Arc<CovarianceMatrix>,
    f_cov: Arc<CovarianceMatrix>,
}

impl ForwardModel {
    pub fn new(cfg: &ForwardConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = GridConfig::new(cfg.n_bins)?;
        let beta_cov = Arc::new(build_grid_covariance(&cfg.beta_spectrum, &grid)?);
        let f_cov = if cfg.f_spectrum == cfg.beta_spectrum {
            Arc::clone(&beta_cov)
        } else {
            Arc::new(build_grid_covariance(&cfg.f_spectrum, &grid)?)
        };
        Ok(ForwardModel {
            cfg: cfg.clone(),
            grid,
            beta_cov,
            f_cov,
        })
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    /// One labelled pair; `seed` overrides the configured seed.
    pub fn sample(&self, seed: u64) -> Result<LabeledPair> {
        self.draw(seed).map(|d| d.pair)
    }

    pub fn draw(&self, seed: u64) -> Result<ForwardDraw> {
        for attempt in 0..MAX_ATTEMPTS {
            let stream_seed = if attempt == 0 {
                seed
            } else {
                rng::derive_seed(seed, attempt)
            };
            let mut rng = rng::seeded(stream_seed);
            if let Some(draw) = self.try_draw(&mut rng)? {
                return Ok(draw);
            }
        }
        Err(Error::Degenerate(format!(
            "no non-empty sample after {MAX_ATTEMPTS} attempts"
        )))
    }

    fn try_draw(&self, rng: &mut SeededRng) -> Result<Option<ForwardDraw>> {
        let m = self.grid.n_bins();
        let beta = sample_field_with(&self.beta_cov, rng);
        let peak = beta.max();
        let weights: Vec<f64> = beta.iter().map(|b| (b - peak).exp()).collect();
        let norm: f64 = weights.iter().sum();
        let target = self.cfg.target_samples as f64;
        let lambda: Vec<f64> = weights.iter().map(|w| target * w / norm).collect();

        let mut counts = Vec::with_capacity(m);
        for &l in &lambda {
            let k = if l > 0.0 {
                Poisson::new(l)
                    .map_err(|e| Error::Degenerate(format!("Poisson mean {l}: {e}")))?
                    .sample(rng) as u64
            } else {
                0
            };
            counts.push(k);
        }
        let counts = BinCounts { counts };
        if counts.total() == 0 {
            return Ok(None);
        }

        let Some(f_grid) = self.draw_mechanism(rng) else {
            return Ok(None);
        };

        let mut cause = Vec::with_capacity(counts.total() as usize);
        let mut mechanism = Vec::with_capacity(cause.capacity());
        for (j, &k) in counts.as_slice().iter().enumerate() {
            let z = self.grid.midpoint(j);
            for _ in 0..k {
                cause.push(z);
                mechanism.push(f_grid[j]);
            }
        }

        let effect: Vec<f64> = if self.cfg.noise_variance > 0.0 {
            let noise = Normal::new(0.0, self.cfg.noise_variance.sqrt())
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            mechanism.iter().map(|f| f + noise.sample(rng)).collect()
        } else {
            mechanism.clone()
        };

        let pair = if rng.random_bool(0.5) {
            LabeledPair {
                x: effect,
                y: cause.clone(),
                true_direction: Direction::YToX,
            }
        } else {
            LabeledPair {
                x: cause.clone(),
                y: effect,
                true_direction: Direction::XToY,
            }
        };

        Ok(Some(ForwardDraw {
            pair,
            cause,
            mechanism,
            beta,
            lambda,
            counts,
            f_grid,
        }))
    }

    fn draw_mechanism(&self, rng: &mut SeededRng) -> Option<Vec<f64>> {
        for _ in 0..MAX_ATTEMPTS {
            let f = sample_field_with(&self.f_cov, rng);
            let (lo, hi) = (f.min(), f.max());
            let range = hi - lo;
            if range > 0.0 && range.is_finite() {
                return Some(f.iter().map(|v| (v - lo) / range).collect());
            }
        }
        None
    }
}

/// One labelled pair from `cfg`, seeded by `cfg.seed`.
pub fn sample_pair(cfg: &ForwardConfig) -> Result<LabeledPair> {
    ForwardModel::new(cfg)?.sample(cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_edges() {
        let g2 = GridConfig::new(2).unwrap();
        assert_eq!(bin_data(&[0.5], &g2).unwrap().as_slice(), &[0, 1]);
        let g4 = GridConfig::new(4).unwrap();
        assert_eq!(bin_data(&[1.0], &g4).unwrap().as_slice(), &[0, 0, 0, 1]);
        assert_eq!(
            bin_data(&[0.0, 0.25, 0.2499], &g4).unwrap().as_slice(),
            &[2, 1, 0, 0]
        );
        assert!(matches!(
            bin_data(&[1.5], &g4),
            Err(Error::OutOfRange { .. })
        ));
        assert!(bin_data(&[-0.1], &g4).is_err());
    }

    #[test]
    fn uniform_binning_is_multinomial() {
        let mut r = rng::seeded(3);
        let x: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
        let counts = bin_data(&x, &GridConfig::new(10).unwrap()).unwrap();
        assert_eq!(counts.total(), 1000);
        // Multinomial(1000, 0.1): sd = sqrt(1000 * 0.1 * 0.9).
        let sd = (1000.0f64 * 0.1 * 0.9).sqrt();
        for &k in counts.as_slice() {
            assert!((k as f64 - 100.0).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn noiseless_pairs_follow_mechanism() {
        let mut cfg = ForwardConfig::with_bins(64);
        cfg.noise_variance = 0.0;
        let model = ForwardModel::new(&cfg).unwrap();
        for seed in 0..5 {
            let d = model.draw(seed).unwrap();
            let (cause, effect) = match d.pair.true_direction {
                Direction::XToY => (&d.pair.x, &d.pair.y),
                Direction::YToX => (&d.pair.y, &d.pair.x),
            };
            assert_eq!(cause, &d.cause);
            assert_eq!(effect, &d.mechanism);
            for (c, e) in cause.iter().zip(effect) {
                let j = model.grid().bin_index(*c).unwrap();
                assert_eq!(*e, d.f_grid[j]);
            }
        }
    }

    #[test]
    fn mechanism_spans_unit_interval() {
        let model = ForwardModel::new(&ForwardConfig::with_bins(128)).unwrap();
        for seed in 0..5 {
            let d = model.draw(seed).unwrap();
            let lo = d.f_grid.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.f_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
            assert_eq!(d.counts.total() as usize, d.pair.len());
            assert!((d.lambda.iter().sum::<f64>() - 300.0).abs() < 1e-9);
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let cfg = ForwardConfig::with_bins(64);
        assert_eq!(sample_pair(&cfg).unwrap(), sample_pair(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(sample_pair(&cfg).unwrap(), sample_pair(&other).unwrap());
    }

    #[test]
    fn default_pairs_live_on_the_grid() {
        let cfg = ForwardConfig::default();
        assert_eq!(
            (cfg.n_bins, cfg.target_samples, cfg.noise_variance),
            (512, 300, 0.05)
        );
        let d = ForwardModel::new(&cfg).unwrap().draw(0).unwrap();
        let mut distinct = d.cause.clone();
        distinct.dedup();
        assert!(distinct.len() <= 512);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = ForwardConfig::with_bins(16);
        cfg.noise_variance = -1.0;
        assert!(ForwardModel::new(&cfg).is_err());
        let mut cfg = ForwardConfig::with_bins(16);
        cfg.target_samples = 0;
        assert!(ForwardModel::new(&cfg).is_err());
    }
}
