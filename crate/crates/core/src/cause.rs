//! Evidence of the cause sample under the Poisson-lognormal model.
//!
//! With bin counts `k`, prior covariance `B` and intensity scale `rho`, the
//! field is marginalized around the minimizer `beta0` of the convex energy
//!
//! ```text
//! gamma(beta) = -k.beta + rho * sum_j exp(beta_j) + 0.5 * beta.B^{-1}.beta
//! ```
//!
//! and the Laplace approximation gives the information Hamiltonian (negative
//! log-evidence, without the data-independent constant and the `log N!` term
//! shared by both directions)
//!
//! ```text
//! H(x) = 0.5 log|rho B diag(exp beta0) + I| + sum_j log k_j! + gamma(beta0)
//! ```
//!
//! `gamma(beta0)` is stored as its three parts so that every term can be
//! reported on its own.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::forward::{bin_data, BinCounts};
use crate::spectra::{CovarianceMatrix, GridConfig};
use crate::{Error, Result};

/// Exponent arguments are clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub const EXP_CLAMP: f64 = 700.0;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const CG_RELATIVE_TOLERANCE: f64 = 1e-11;

/// Stopping rule on the infinity norm of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GradientTolerance {
    Absolute(f64),
    /// `scale * max(1, N)` for a sample of `N` points.
    PerSample(f64),
}

impl GradientTolerance {
    pub fn resolve(&self, n: u64) -> f64 {
        match *self {
            GradientTolerance::Absolute(t) => t,
            GradientTolerance::PerSample(s) => s * (n.max(1) as f64),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            GradientTolerance::Absolute(t) | GradientTolerance::PerSample(t) => t,
        }
    }
}

impl Default for GradientTolerance {
    fn default() -> Self {
        GradientTolerance::PerSample(1e-8)
    }
}

/// Linear solver for the Newton system `(diag(rho e^beta) + B^{-1}) d = -g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonSolver {
    /// Conjugate gradients when `B` is circulant, dense Cholesky otherwise.
    #[default]
    Auto,
    Direct,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct CauseModelConfig {
    pub beta_covariance: Arc<CovarianceMatrix>,
    pub rho: f64,
    pub newton_tolerance: GradientTolerance,
    pub max_newton_iterations: usize,
    pub solver: NewtonSolver,
}

impl CauseModelConfig {
    pub fn new(beta_covariance: Arc<CovarianceMatrix>) -> Self {
        CauseModelConfig {
            beta_covariance,
            rho: 1.0,
            newton_tolerance: GradientTolerance::default(),
            max_newton_iterations: 100,
            solver: NewtonSolver::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        let tol = self.newton_tolerance.scale();
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Newton tolerance must be positive, got {tol}"
            )));
        }
        if self.max_newton_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_newton_iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    fn size(&self) -> usize {
        self.beta_covariance.size()
    }
}

fn clamped_exp(beta: &DVector<f64>) -> (DVector<f64>, bool) {
    let mut clamped = false;
    let e = beta.map(|b| {
        if b.abs() > EXP_CLAMP {
            clamped = true;
        }
        b.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    });
    (e, clamped)
}

fn check_len(beta: &DVector<f64>, counts: &BinCounts, cfg: &CauseModelConfig) {
    assert_eq!(
        beta.len(),
        cfg.size(),
        "beta length must match the covariance size"
    );
    assert_eq!(
        counts.len(),
        cfg.size(),
        "counts length must match the covariance size"
    );
}

struct Energy<'a> {
    k: DVector<f64>,
    cfg: &'a CauseModelConfig,
}

struct Evaluation {
    value: f64,
    gradient: DVector<f64>,
    weights: DVector<f64>,
    clamped: bool,
}

impl<'a> Energy<'a> {
    fn new(counts: &BinCounts, cfg: &'a CauseModelConfig) -> Self {
        Energy {
            k: counts.to_vector(),
            cfg,
        }
    }

    fn parts(&self, beta: &DVector<f64>) -> (f64, f64, f64, DVector<f64>, DVector<f64>, bool) {
        let (e, clamped) = clamped_exp(beta);
        let precision_beta = self.cfg.beta_covariance.solve(beta);
        let minus_k_beta = -self.k.dot(beta);
        let rho_exp = self.cfg.rho * e.sum();
        let prior_quad = 0.5 * beta.dot(&precision_beta);
        (
            minus_k_beta,
            rho_exp,
            prior_quad,
            e,
            precision_beta,
            clamped,
        )
    }

    fn value(&self, beta: &DVector<f64>) -> (f64, bool) {
        let (a, b, c, _, _, clamped) = self.parts(beta);
        (a + b + c, clamped)
    }

    fn evaluate(&self, beta: &DVector<f64>) -> Evaluation {
        let (a, b, c, e, precision_beta, clamped) = self.parts(beta);
        let weights = e * self.cfg.rho;
        let gradient = &weights - &self.k + precision_beta;
        Evaluation {
            value: a + b + c,
            gradient,
            weights,
            clamped,
        }
    }
}

/// `gamma(beta)` for the given counts.
pub fn gamma(beta: &DVector<f64>, counts: &BinCounts, cfg: &CauseModelConfig) -> f64 {
    check_len(beta, counts, cfg);
    Energy::new(counts, cfg).value(beta).0
}

/// `-k + rho e^beta + B^{-1} beta`.
pub fn gamma_gradient(
    beta: &DVector<f64>,
    counts: &BinCounts,
    cfg: &CauseModelConfig,
) -> DVector<f64> {
    check_len(beta, counts, cfg);
    Energy::new(counts, cfg).evaluate(beta).gradient
}

/// `diag(rho e^beta) + B^{-1}`.
pub fn gamma_curvature(
    beta: &DVector<f64>,
    counts: &BinCounts,
    cfg: &CauseModelConfig,
) -> DMatrix<f64> {
    check_len(beta, counts, cfg);
    let (e, _) = clamped_exp(beta);
    curvature_from_weights(&(e * cfg.rho), cfg)
}

fn curvature_from_weights(weights: &DVector<f64>, cfg: &CauseModelConfig) -> DMatrix<f64> {
    let mut h = cfg.beta_covariance.precision().clone();
    for (i, w) in weights.iter().enumerate() {
        h[(i, i)] += w;
    }
    h
}

/// Result of the Newton minimization of `gamma`.
#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub beta0: DVector<f64>,
    pub gradient_norm: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub exp_clamped: bool,
    /// `gamma` after each accepted iterate, starting with `gamma(0)`.
    pub gamma_trace: Vec<f64>,
}

fn direct_newton_step(
    weights: &DVector<f64>,
    gradient: &DVector<f64>,
    cfg: &CauseModelConfig,
) -> Result<DVector<f64>> {
    let h = curvature_from_weights(weights, cfg);
    let chol =
        Cholesky::new(h).ok_or_else(|| Error::NotPositiveDefinite(" (Newton curvature)".into()))?;
    Ok(-chol.solve(gradient))
}

/// Preconditioned CG on the circulant structure of `B`. The preconditioner
/// is `(B^{-1} + mean(w) I)^{-1}`, applied in Fourier space.
fn cg_newton_step(
    weights: &DVector<f64>,
    gradient: &DVector<f64>,
    cfg: &CauseModelConfig,
) -> Option<DVector<f64>> {
    let cov = &cfg.beta_covariance;
    cov.circulant_eigenvalues()?;
    let m = gradient.len();
    let mean_w = weights.mean();
    let precondition = |r: &DVector<f64>| {
        cov.spectral_apply(r.as_slice(), |lambda| lambda / (1.0 + mean_w * lambda))
            .expect("circulant")
    };
    let apply = |p: &DVector<f64>| weights.component_mul(p) + cov.solve(p);

    let b = -gradient;
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Some(DVector::zeros(m));
    }
    let mut x = DVector::zeros(m);
    let mut r = b.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..4 * m.max(25) {
        let ap = apply(&p);
        let curvature = p.dot(&ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return None;
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() <= CG_RELATIVE_TOLERANCE * b_norm {
            return Some(x);
        }
        z = precondition(&r);
        let rz_next = r.dot(&z);
        p = &z + p * (rz_next / rz);
        rz = rz_next;
    }
    None
}

fn newton_step(
    weights: &DVector<f64>,
    gradient: &DVector<f64>,
    cfg: &CauseModelConfig,
) -> Result<DVector<f64>> {
    match cfg.solver {
        NewtonSolver::Direct => direct_newton_step(weights, gradient, cfg),
        NewtonSolver::Auto | NewtonSolver::ConjugateGradient => {
            match cg_newton_step(weights, gradient, cfg) {
                Some(step) => Ok(step),
                None => direct_newton_step(weights, gradient, cfg),
            }
        }
    }
}

/// Damped Newton minimization of `gamma`, started at `beta = 0`.
///
/// Each step solves the Newton system and backtracks by halving until the
/// Armijo condition holds. Since `gamma` is strictly convex, the stationary
/// point found is the global minimum.
pub fn minimize_beta(counts: &BinCounts, cfg: &CauseModelConfig) -> Result<NewtonSolution> {
    cfg.validate()?;
    if counts.len() != cfg.size() {
        return Err(Error::DimensionMismatch {
            expected: cfg.size(),
            actual: counts.len(),
        });
    }
    let energy = Energy::new(counts, cfg);
    let tolerance = cfg.newton_tolerance.resolve(counts.total());
    let mut beta = DVector::zeros(cfg.size());
    let mut eval = energy.evaluate(&beta);
    let mut exp_clamped = eval.clamped;
    let mut trace = vec![eval.value];

    for iteration in 0..=cfg.max_newton_iterations {
        let gradient_norm = eval.gradient.amax();
        if gradient_norm <= tolerance {
            return Ok(NewtonSolution {
                beta0: beta,
                gradient_norm,
                tolerance,
                iterations: iteration,
                exp_clamped,
                gamma_trace: trace,
            });
        }
        if iteration == cfg.max_newton_iterations {
            break;
        }

        let mut step = newton_step(&eval.weights, &eval.gradient, cfg)?;
        let mut slope = eval.gradient.dot(&step);
        if slope.is_nan() || slope >= 0.0 {
            step = -&eval.gradient;
            slope = -eval.gradient.norm_squared();
        }

        // Below the resolution of gamma the descent test compares rounding
        // noise, so the full Newton step is taken untested.
        let next = if slope.abs() <= 1e-12 * (1.0 + eval.value.abs()) {
            &beta + &step
        } else {
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let candidate = &beta + &step * t;
                let (value, _) = energy.value(&candidate);
                if value <= eval.value + ARMIJO * t * slope {
                    accepted = Some(candidate);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(c) => c,
                None => break,
            }
        };
        beta = next;
        eval = energy.evaluate(&beta);
        exp_clamped |= eval.clamped;
        trace.push(eval.value);
    }

    Err(Error::NonConvergence {
        iterations: trace.len() - 1,
        gradient_norm: eval.gradient.amax(),
        tolerance,
        last_iterate: beta.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauseTerms {
    /// `0.5 log|rho B diag(e^beta0) + I|`
    pub half_logdet: f64,
    /// `sum_j log k_j!`
    pub log_k_factorial: f64,
    /// `-k.beta0`
    pub minus_k_beta: f64,
    /// `rho sum_j e^beta0_j`
    pub rho_exp: f64,
    /// `0.5 beta0.B^{-1}.beta0`
    pub prior_quad: f64,
}

impl CauseTerms {
    pub fn total(&self) -> f64 {
        self.half_logdet + self.log_k_factorial + self.minus_k_beta + self.rho_exp + self.prior_quad
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausePosterior {
    pub beta0: Vec<f64>,
    pub counts: BinCounts,
    pub gradient_norm_at_solution: f64,
    pub newton_iterations: usize,
    pub exp_clamped: bool,
    pub terms: CauseTerms,
    pub total: f64,
}

/// `0.5 log|rho B diag(e^beta) + I|`, through the similar symmetric matrix
/// `I + W^{1/2} B W^{1/2}` with `W = rho diag(e^beta)`.
pub fn half_log_det_laplace(cov: &CovarianceMatrix, weights: &DVector<f64>) -> Result<f64> {
    let m = cov.size();
    let s = weights.map(f64::sqrt);
    let a = DMatrix::from_fn(m, m, |i, j| {
        let v = s[i] * cov.entry(i, j) * s[j];
        if i == j {
            v + 1.0
        } else {
            v
        }
    });
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::NotPositiveDefinite(" (Laplace determinant)".into()))?;
    Ok(chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum())
}

/// Cause Hamiltonian for already-binned counts.
pub fn cause_hamiltonian_from_counts(
    counts: &BinCounts,
    cfg: &CauseModelConfig,
) -> Result<CausePosterior> {
    let solution = minimize_beta(counts, cfg)?;
    let energy = Energy::new(counts, cfg);
    let (minus_k_beta, rho_exp, prior_quad, e, _, _) = energy.parts(&solution.beta0);
    let half_logdet = half_log_det_laplace(&cfg.beta_covariance, &(e * cfg.rho))?;
    let log_k_factorial = counts.as_slice().iter().map(|&k| ln_factorial(k)).sum();
    let terms = CauseTerms {
        half_logdet,
        log_k_factorial,
        minus_k_beta,
        rho_exp,
        prior_quad,
    };
    Ok(CausePosterior {
        beta0: solution.beta0.iter().copied().collect(),
        counts: counts.clone(),
        gradient_norm_at_solution: solution.gradient_norm,
        newton_iterations: solution.iterations,
        exp_clamped: solution.exp_clamped,
        total: terms.total(),
        terms,
    })
}

/// Bins `x` (already in `[0, 1]`) on `grid` and evaluates the cause
/// Hamiltonian.
pub fn cause_hamiltonian(
    x: &[f64],
    grid: &GridConfig,
    cfg: &CauseModelConfig,
) -> Result<CausePosterior> {
    if grid.n_bins() != cfg.size() {
        return Err(Error::DimensionMismatch {
            expected: cfg.size(),
            actual: grid.n_bins(),
        });
    }
    let counts = bin_data(x, grid)?;
    cause_hamiltonian_from_counts(&counts, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{build_grid_covariance, PowerSpectrum};

    fn identity_cfg(m: usize) -> CauseModelConfig {
        CauseModelConfig::new(Arc::new(
            CovarianceMatrix::from_matrix(DMatrix::identity(m, m)).unwrap(),
        ))
    }

    fn spectral_cfg(m: usize) -> CauseModelConfig {
        let p = PowerSpectrum::new(1000.0, 4.0).unwrap();
        CauseModelConfig::new(Arc::new(
            build_grid_covariance(&p, &GridConfig::new(m).unwrap()).unwrap(),
        ))
    }

    #[test]
    fn gamma_at_zero() {
        let cfg = identity_cfg(2);
        let zero = DVector::zeros(2);
        assert_eq!(gamma(&zero, &BinCounts::new(vec![0, 0]), &cfg), 2.0);
        let cfg = spectral_cfg(8);
        let counts = BinCounts::new(vec![3, 0, 1, 7, 0, 0, 2, 9]);
        assert!((gamma(&DVector::zeros(8), &counts, &cfg) - 8.0).abs() < 1e-12);
        let g = gamma_gradient(&DVector::zeros(8), &counts, &cfg);
        for (gj, kj) in g.iter().zip(counts.as_slice()) {
            assert!((gj - (1.0 - *kj as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_small_instance_by_hand() {
        let cfg = identity_cfg(3);
        let counts = BinCounts::new(vec![2, 0, 1]);
        let beta = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        // -(0.2 + 0.3) + (e^0.1 + e^-0.2 + e^0.3) + 0.5 (0.01 + 0.04 + 0.09)
        let oracle = -0.5 + (0.1f64.exp() + (-0.2f64).exp() + 0.3f64.exp()) + 0.07;
        assert!((gamma(&beta, &counts, &cfg) - oracle).abs() < 1e-14);
    }

    #[test]
    fn curvature_at_zero_identity_prior() {
        let mut cfg = identity_cfg(4);
        cfg.rho = 2.5;
        let h = gamma_curvature(&DVector::zeros(4), &BinCounts::new(vec![1, 2, 3, 4]), &cfg);
        assert_eq!(h, DMatrix::identity(4, 4) * 3.5);
    }

    #[test]
    fn clamp_is_reported() {
        let cfg = identity_cfg(2);
        let (e, clamped) = clamped_exp(&DVector::from_vec(vec![800.0, 0.0]));
        assert!(clamped);
        assert_eq!(e[0], 700f64.exp());
        let counts = BinCounts::new(vec![0, 0]);
        assert!(gamma(&DVector::from_vec(vec![800.0, 0.0]), &counts, &cfg).is_finite());
    }

    #[test]
    fn newton_converges_for_empty_counts() {
        let cfg = spectral_cfg(32);
        let counts = BinCounts::new(vec![0; 32]);
        let sol = minimize_beta(&counts, &cfg).unwrap();
        assert!(sol.gradient_norm <= 1e-8);
        assert!(sol.gamma_trace.last().unwrap() <= &sol.gamma_trace[0]);
    }

    #[test]
    fn cg_and_direct_solvers_agree() {
        let counts = BinCounts::new((0..64).map(|j| ((j * 7) % 5) as u64).collect());
        let mut cfg = spectral_cfg(64);
        cfg.solver = NewtonSolver::Direct;
        let direct = minimize_beta(&counts, &cfg).unwrap();
        cfg.solver = NewtonSolver::ConjugateGradient;
        let cg = minimize_beta(&counts, &cfg).unwrap();
        assert!((direct.beta0 - cg.beta0).amax() < 1e-6);
    }

    #[test]
    fn determinant_term_at_zero() {
        let cfg = identity_cfg(5);
        let w = DVector::from_element(5, 1.0);
        let v = half_log_det_laplace(&cfg.beta_covariance, &w).unwrap();
        assert!((v - 2.5 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn determinant_matches_lu_route() {
        let cfg = spectral_cfg(16);
        let w = DVector::from_fn(16, |i, _| 0.2 + (i as f64 * 0.7).sin().abs() * 3.0);
        let mut a = cfg.beta_covariance.matrix() * DMatrix::from_diagonal(&w);
        for i in 0..16 {
            a[(i, i)] += 1.0;
        }
        let det = a.lu().determinant();
        assert!(det > 0.0);
        let v = half_log_det_laplace(&cfg.beta_covariance, &w).unwrap();
        assert!((v - 0.5 * det.ln()).abs() < 1e-10 * v.abs());
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let cfg = spectral_cfg(8);
        let grid = GridConfig::new(16).unwrap();
        assert!(matches!(
            cause_hamiltonian(&[0.5], &grid, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn iteration_budget_exhaustion_reports_last_iterate() {
        let mut cfg = spectral_cfg(16);
        cfg.max_newton_iterations = 1;
        let counts = BinCounts::new(vec![40; 16]);
        match minimize_beta(&counts, &cfg) {
            Err(Error::NonConvergence {
                iterations,
                last_iterate,
                gradient_norm,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_iterate.len(), 16);
                assert!(gradient_norm > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
