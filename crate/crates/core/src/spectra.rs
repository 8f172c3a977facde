//! Grids, power spectra and Fourier-diagonal covariances on the unit interval.
//!
//! A stationary covariance on the periodic unit interval is fixed by its
//! power spectrum. On an equidistant grid of `m` bins the covariance matrix is
//! circulant,
//!
//! ```text
//! B_jl = (1/m) * sum_{k=0}^{m-1} P(q_k) cos(2 pi k (j - l) / m),   q_k = min(k, m - k)
//! ```
//!
//! so its eigenvalues are exactly `P(q_k)`. A flat spectrum `P = c` gives
//! `B = c * I`. Off-grid evaluations use the same truncated cosine series with
//! `K` modes (see [`covariance_at`]), which reproduces the grid entries when
//! `K = m` and both arguments are grid midpoints.
//!
//! The boundary is periodic: points near 0 and near 1 are strongly
//! correlated.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Equidistant binning of `[0, 1]` with midpoints `z_j = (j + 0.5) / n_bins`
/// (zero-based `j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridConfig {
    n_bins: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    n_bins: usize,
}

impl TryFrom<GridRepr> for GridConfig {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        GridConfig::new(r.n_bins)
    }
}

impl From<GridConfig> for GridRepr {
    fn from(g: GridConfig) -> Self {
        GridRepr { n_bins: g.n_bins }
    }
}

impl GridConfig {
    /// A single bin is accepted so that scalar reference computations can run
    /// through the same code path; real grids have at least two bins.
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidConfig("n_bins must be positive".into()));
        }
        Ok(GridConfig { n_bins })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.n_bins as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_bins).map(|j| self.midpoint(j)).collect()
    }

    /// Bin index of `x` in `[0, 1]`: bin `j` is `[j/m, (j+1)/m)`, except the
    /// last bin which also contains 1.
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        let j = (x * self.n_bins as f64).floor() as usize;
        Some(j.min(self.n_bins - 1))
    }
}

/// Folded integer Fourier mode of DFT index `k` on `m` points.
pub fn folded_mode(k: usize, m: usize) -> usize {
    k.min(m - k)
}

/// The spectral family `P(q) = amplitude / (q^exponent + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumRepr", into = "SpectrumRepr")]
pub struct PowerSpectrum {
    amplitude: f64,
    exponent: f64,
}

#[derive(Serialize, Deserialize)]
struct SpectrumRepr {
    amplitude: f64,
    exponent: f64,
}

impl TryFrom<SpectrumRepr> for PowerSpectrum {
    type Error = Error;
    fn try_from(r: SpectrumRepr) -> Result<Self> {
        PowerSpectrum::new(r.amplitude, r.exponent)
    }
}

impl From<PowerSpectrum> for SpectrumRepr {
    fn from(p: PowerSpectrum) -> Self {
        SpectrumRepr {
            amplitude: p.amplitude,
            exponent: p.exponent,
        }
    }
}

impl PowerSpectrum {
    pub fn new(amplitude: f64, exponent: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spectrum amplitude must be positive, got {amplitude}"
            )));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spectrum exponent must be positive, got {exponent}"
            )));
        }
        Ok(PowerSpectrum {
            amplitude,
            exponent,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn value(&self, q: f64) -> f64 {
        self.amplitude / (q.powf(self.exponent) + 1.0)
    }

    pub fn at_mode(&self, q: usize) -> f64 {
        self.value(q as f64)
    }
}

/// Stationary kernel given by a truncated cosine series in the lag.
///
/// Holds `c_q = (multiplicity of q among the K folded modes) * P(q) / K`, so
/// that `k(lag) = sum_q c_q cos(2 pi q lag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryKernel {
    coefficients: Vec<f64>,
}

// Re-anchor the cosine recurrence every few terms to bound round-off growth.
const ANCHOR_STRIDE: usize = 16;

impl StationaryKernel {
    pub fn new(spectrum: &PowerSpectrum, modes: usize) -> Self {
        Self::from_mode_values(modes, |q| spectrum.at_mode(q))
    }

    fn from_mode_values(modes: usize, value: impl Fn(usize) -> f64) -> Self {
        assert!(modes > 0, "kernel needs at least one mode");
        let mut coefficients = vec![0.0; modes / 2 + 1];
        for k in 0..modes {
            let q = folded_mode(k, modes);
            coefficients[q] += value(q);
        }
        for c in &mut coefficients {
            *c /= modes as f64;
        }
        StationaryKernel { coefficients }
    }

    pub fn modes(&self) -> usize {
        self.coefficients.len()
    }

    /// Value at zero lag, `(1/K) sum_k P(q_k)`.
    pub fn variance(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    pub fn at_lag(&self, lag: f64) -> f64 {
        // cos(2 pi q lag) has period 1 in the lag and is even.
        let lag = (lag - lag.round()).abs();
        if lag == 0.0 {
            return self.variance();
        }
        let theta = TAU * lag;
        let (s1, c1) = theta.sin_cos();
        let mut sum = 0.0;
        for (block, chunk) in self.coefficients.chunks(ANCHOR_STRIDE).enumerate() {
            let (mut s, mut c) = ((block * ANCHOR_STRIDE) as f64 * theta).sin_cos();
            for &a in chunk {
                sum += a * c;
                let next_c = c * c1 - s * s1;
                s = s * c1 + c * s1;
                c = next_c;
            }
        }
        sum
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.at_lag(s - t)
    }
}

/// Kernel value `F(s, t)` of `spectrum` truncated to `modes` Fourier modes.
pub fn covariance_at(spectrum: &PowerSpectrum, s: f64, t: f64, modes: usize) -> f64 {
    StationaryKernel::new(spectrum, modes).eval(s, t)
}

#[derive(Clone)]
struct Circulant {
    eigenvalues: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Circulant {
    fn new(eigenvalues: Vec<f64>) -> Self {
        let mut planner = FftPlanner::new();
        let m = eigenvalues.len();
        Circulant {
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
            eigenvalues,
        }
    }

    fn apply(&self, v: &[f64], filter: impl Fn(f64) -> f64) -> DVector<f64> {
        let m = self.eigenvalues.len();
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, &lambda) in buf.iter_mut().zip(&self.eigenvalues) {
            *b *= filter(lambda);
        }
        self.inverse.process(&mut buf);
        DVector::from_iterator(m, buf.iter().map(|b| b.re / m as f64))
    }
}

/// Symmetric positive definite covariance with its factorizations computed
/// once at construction.
///
/// Matrices built from a power spectrum on a grid also remember their
/// circulant eigenvalues; products and solves then go through the FFT, which
/// is both faster and better conditioned than the dense factor.
#[derive(Clone)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
    circulant: Option<Circulant>,
}

impl fmt::Debug for CovarianceMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceMatrix")
            .field("size", &self.size())
            .field("log_det", &self.log_det)
            .field("jitter", &self.jitter)
            .field("circulant", &self.circulant.is_some())
            .finish()
    }
}

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-12;
const JITTER_RETRIES: u32 = 3;

fn factor_with_jitter(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok((chol.l(), 0.0));
    }
    let m = matrix.nrows();
    let base = JITTER_SCALE * matrix.trace() / m as f64;
    for attempt in 0..JITTER_RETRIES {
        let jitter = base * 10f64.powi(attempt as i32);
        let mut shifted = matrix.clone();
        for i in 0..m {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((chol.l(), jitter));
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        " (Cholesky failed after {JITTER_RETRIES} jitter retries)"
    )))
}

fn circulant_from_eigenvalues(eigenvalues: &[f64]) -> DMatrix<f64> {
    let m = eigenvalues.len();
    // Eigenvalues are indexed by DFT index; a symmetric circulant has
    // lambda_k = lambda_{m-k}, so reading them at the folded mode is exact.
    let kernel = StationaryKernel::from_mode_values(m, |q| eigenvalues[q]);
    let mut row = vec![0.0; m];
    for d in 0..=m / 2 {
        let v = kernel.at_lag(d as f64 / m as f64);
        row[d] = v;
        row[(m - d) % m] = v;
    }
    DMatrix::from_fn(m, m, |j, l| row[(j + m - l) % m])
}

impl CovarianceMatrix {
    /// Wraps an arbitrary symmetric positive definite matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || matrix.ncols() != m {
            return Err(Error::InvalidConfig(format!(
                "covariance must be square and non-empty, got {}x{}",
                m,
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance matrix"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for j in 0..m {
            for l in 0..j {
                if (matrix[(j, l)] - matrix[(l, j)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::InvalidConfig(format!(
                        "covariance is not symmetric at ({j}, {l})"
                    )));
                }
            }
        }
        let mut matrix = (&matrix + matrix.transpose()) * 0.5;
        let (lower, jitter) = factor_with_jitter(&matrix)?;
        for i in 0..m {
            matrix[(i, i)] += jitter;
        }
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite(String::new()))?
            .inverse();
        Ok(CovarianceMatrix {
            matrix,
            lower,
            precision,
            log_det,
            jitter,
            circulant: None,
        })
    }

    fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        let mut matrix = circulant_from_eigenvalues(&eigenvalues);
        let (lower, jitter) = factor_with_jitter(&matrix)?;
        if jitter > 0.0 {
            for e in &mut eigenvalues {
                *e += jitter;
            }
            matrix = circulant_from_eigenvalues(&eigenvalues);
        }
        let log_det = eigenvalues.iter().map(|e| e.ln()).sum();
        let inverse: Vec<f64> = eigenvalues.iter().map(|e| 1.0 / e).collect();
        let precision = circulant_from_eigenvalues(&inverse);
        Ok(CovarianceMatrix {
            matrix,
            lower,
            precision,
            log_det,
            jitter,
            circulant: Some(Circulant::new(eigenvalues)),
        })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn entry(&self, j: usize, l: usize) -> f64 {
        self.matrix[(j, l)]
    }

    /// Lower Cholesky factor `L` with `L L^T = B`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn min_pivot(&self) -> f64 {
        self.lower.diagonal().min()
    }

    /// Dense `B^{-1}`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal shift added to make the factorization succeed (normally 0).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Eigenvalues by DFT index when the matrix is circulant.
    pub fn circulant_eigenvalues(&self) -> Option<&[f64]> {
        self.circulant.as_ref().map(|c| c.eigenvalues.as_slice())
    }

    /// `g(B) v` for a circulant `B`, where `g` acts on the eigenvalues.
    pub fn spectral_apply(&self, v: &[f64], g: impl Fn(f64) -> f64) -> Option<DVector<f64>> {
        assert_eq!(
            v.len(),
            self.size(),
            "vector length must match covariance size"
        );
        self.circulant.as_ref().map(|c| c.apply(v, g))
    }

    /// `B v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.spectral_apply(v.as_slice(), |lambda| lambda)
            .unwrap_or_else(|| &self.matrix * v)
    }

    /// `B^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        if let Some(x) = self.spectral_apply(v.as_slice(), |lambda| 1.0 / lambda) {
            return x;
        }
        let y = self
            .lower
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }
}

/// Circulant covariance of `spectrum` on `grid`.
pub fn build_grid_covariance(
    spectrum: &PowerSpectrum,
    grid: &GridConfig,
) -> Result<CovarianceMatrix> {
    let m = grid.n_bins();
    let eigenvalues = (0..m)
        .map(|k| spectrum.at_mode(folded_mode(k, m)))
        .collect();
    CovarianceMatrix::from_eigenvalues(eigenvalues)
}

/// Draws `L u` with `u` standard normal from the given stream.
pub fn sample_field_with<R: Rng + ?Sized>(cov: &CovarianceMatrix, rng: &mut R) -> DVector<f64> {
    let m = cov.size();
    let u = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
    cov.cholesky_factor() * u
}

/// Draws one field sample from `N(0, B)`, deterministic in `seed`.
pub fn sample_field(cov: &CovarianceMatrix, seed: u64) -> DVector<f64> {
    sample_field_with(cov, &mut rng::seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_entry(p: &PowerSpectrum, m: usize, j: usize, l: usize) -> f64 {
        let d = j as f64 - l as f64;
        (0..m)
            .map(|k| p.at_mode(folded_mode(k, m)) * (TAU * k as f64 * d / m as f64).cos())
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn grid_midpoints() {
        let g = GridConfig::new(4).unwrap();
        assert_eq!(g.midpoints(), vec![0.125, 0.375, 0.625, 0.875]);
        assert!(GridConfig::new(0).is_err());
    }

    #[test]
    fn bin_index_edges() {
        let g = GridConfig::new(2).unwrap();
        assert_eq!(g.bin_index(0.5), Some(1));
        assert_eq!(g.bin_index(0.0), Some(0));
        let g = GridConfig::new(4).unwrap();
        assert_eq!(g.bin_index(1.0), Some(3));
        assert_eq!(g.bin_index(1.0 + 1e-12), None);
        assert_eq!(g.bin_index(-1e-300), None);
        assert_eq!(g.bin_index(f64::NAN), None);
    }

    #[test]
    fn spectrum_validation_and_monotonicity() {
        assert!(PowerSpectrum::new(0.0, 4.0).is_err());
        assert!(PowerSpectrum::new(1.0, -1.0).is_err());
        assert!(PowerSpectrum::new(f64::INFINITY, 4.0).is_err());
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        assert_eq!(p.at_mode(0), 1000.0);
        assert_eq!(p.at_mode(1), 500.0);
        for q in 0..600 {
            assert!(p.at_mode(q) > 0.0);
            assert!(p.at_mode(q + 1) <= p.at_mode(q));
        }
    }

    #[test]
    fn flat_spectrum_gives_scaled_identity() {
        // a / (q^n + 1) is flat only in the limit; use the eigenvalue route.
        for m in [1, 2, 5, 8, 13] {
            let cov = CovarianceMatrix::from_eigenvalues(vec![2.5; m]).unwrap();
            for j in 0..m {
                for l in 0..m {
                    let expected = if j == l { 2.5 } else { 0.0 };
                    assert!(
                        (cov.entry(j, l) - expected).abs() < 1e-14,
                        "m={m} ({j},{l})"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_covariance_matches_direct_cosine_sum() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let m = 8;
        let cov = build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap();
        for j in 0..m {
            for l in 0..m {
                let oracle = direct_entry(&p, m, j, l);
                assert!(
                    (cov.entry(j, l) - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
                    "({j},{l}): {} vs {oracle}",
                    cov.entry(j, l)
                );
            }
        }
    }

    #[test]
    fn grid_covariance_is_exactly_circulant() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let m = 512;
        let cov = build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap();
        for j in 0..m {
            for l in 0..m {
                assert_eq!(cov.entry(j, l), cov.entry((j + 1) % m, (l + 1) % m));
                assert_eq!(cov.entry(j, l), cov.entry(l, j));
            }
        }
        assert!(cov.min_pivot() > 0.0);
        assert_eq!(cov.jitter(), 0.0);
    }

    #[test]
    fn spectral_round_trip_recovers_power() {
        let p = PowerSpectrum::new(3.0, 2.0).unwrap();
        let m = 16;
        let cov = build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap();
        for k in 0..m {
            let dft: f64 = (0..m)
                .map(|d| cov.entry(0, d) * (TAU * (k * d) as f64 / m as f64).cos())
                .sum();
            let expected = p.at_mode(folded_mode(k, m));
            assert!((dft - expected).abs() <= 1e-10 * expected, "k={k}");
        }
    }

    #[test]
    fn spectral_and_dense_routes_agree() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let m = 32;
        let cov = build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap();
        let v = DVector::from_fn(m, |i, _| (i as f64 * 0.37).sin());
        let dense = cov.matrix() * &v;
        let fast = cov.mul_vec(&v);
        assert!((dense - fast).amax() < 1e-9);
        let solved = cov.solve(&v);
        let dense_solve = cov.precision() * &v;
        assert!((&solved - dense_solve).amax() <= 1e-8 * solved.amax());
        assert!((cov.matrix() * solved - &v).amax() < 1e-6);
        let chol_logdet = 2.0 * cov.cholesky_factor().diagonal().map(f64::ln).sum();
        assert!((chol_logdet - cov.log_det()).abs() < 1e-8 * cov.log_det().abs());
    }

    #[test]
    fn covariance_at_consistent_with_grid() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let grid = GridConfig::new(32).unwrap();
        let cov = build_grid_covariance(&p, &grid).unwrap();
        let z = grid.midpoints();
        for i in 0..32 {
            for j in 0..32 {
                let v = covariance_at(&p, z[i], z[j], 32);
                assert!((v - cov.entry(i, j)).abs() <= 1e-11 * cov.entry(0, 0));
            }
        }
    }

    #[test]
    fn covariance_at_zero_lag_and_direct_sum() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let k = 8;
        let zero_lag: f64 = (0..k).map(|i| p.at_mode(folded_mode(i, k))).sum::<f64>() / k as f64;
        for s in [0.0, 0.1, 0.5, 0.99, 1.0] {
            assert!((covariance_at(&p, s, s, k) - zero_lag).abs() < 1e-12 * zero_lag);
        }
        let oracle: f64 = (0..k)
            .map(|i| {
                let q = folded_mode(i, k) as f64;
                p.value(q) * (TAU * q * (0.3 - 0.7)).cos()
            })
            .sum::<f64>()
            / k as f64;
        let v = covariance_at(&p, 0.3, 0.7, k);
        assert!(
            (v - oracle).abs() < 1e-12 * oracle.abs().max(1.0),
            "{v} vs {oracle}"
        );
        assert_eq!(
            covariance_at(&p, 0.3, 0.7, k),
            covariance_at(&p, 0.7, 0.3, k)
        );
    }

    #[test]
    fn kernel_many_modes_matches_direct_sum() {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        let kernel = StationaryKernel::new(&p, 512);
        for lag in [0.001, 0.123456, 0.5, 0.777, -0.31] {
            let oracle: f64 = (0..512)
                .map(|i| {
                    let q = folded_mode(i, 512) as f64;
                    p.value(q) * (TAU * q * lag).cos()
                })
                .sum::<f64>()
                / 512.0;
            assert!((kernel.at_lag(lag) - oracle).abs() < 1e-12 * kernel.variance());
        }
    }

    #[test]
    fn identity_sampling_returns_raw_normals() {
        let cov = CovarianceMatrix::from_matrix(DMatrix::identity(6, 6)).unwrap();
        let sample = sample_field(&cov, 11);
        let mut rng = rng::seeded(11);
        let raw: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        assert_eq!(sample.as_slice(), raw.as_slice());
        assert_eq!(sample_field(&cov, 11), sample_field(&cov, 11));
    }

    #[test]
    fn sample_moments_match_covariance() {
        let p = PowerSpectrum::new(10.0, 2.0).unwrap();
        let m = 8;
        let cov = build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap();
        let n = 10_000;
        let mut rng = rng::seeded(5);
        let mut sum = DVector::zeros(m);
        let mut sq = DVector::<f64>::zeros(m);
        for _ in 0..n {
            let s = sample_field_with(&cov, &mut rng);
            sum += &s;
            sq += s.component_mul(&s);
        }
        for j in 0..m {
            let var = cov.entry(j, j);
            let mean = sum[j] / n as f64;
            // Gaussian: SE(mean) = sqrt(var/n), SE(var) = var * sqrt(2/n).
            assert!(mean.abs() < 5.0 * (var / n as f64).sqrt());
            let sample_var = sq[j] / n as f64 - mean * mean;
            assert!((sample_var - var).abs() < 5.0 * var * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let mut a = DMatrix::identity(3, 3);
        a[(0, 1)] = 0.5;
        assert!(CovarianceMatrix::from_matrix(a).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CovarianceMatrix::from_matrix(b),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn steep_spectrum_triggers_no_failure() {
        let p = PowerSpectrum::new(1000.0, 6.0).unwrap();
        let cov = build_grid_covariance(&p, &GridConfig::new(512).unwrap()).unwrap();
        assert!(cov.min_pivot() > 0.0);
    }
}
