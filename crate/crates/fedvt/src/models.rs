//! Parametric observation models: sampling, log-densities, score vectors,
//! and per-sample Fisher information.
//!
//! Observations are flat `Vec<f64>` so the protocol engine and the
//! enumeration machinery can stay model-agnostic. A Bernoulli draw is the
//! one-element vector `[0.0]` or `[1.0]`; a regression pair is
//! `[z_1, ..., z_d, y]`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::numeric::{mean_se, symmetric_eigenvalues};
use crate::rng::standard_normal;

/// Per-sample Fisher information with its operator norm and trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    pub op_norm: f64,
    pub trace: f64,
}

impl FisherMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let ev = symmetric_eigenvalues(&matrix)?;
        if ev.iter().any(|&l| l < -1e-10) {
            return Err(Error::InvalidParameter(format!(
                "Fisher matrix must be positive semidefinite, smallest eigenvalue {}",
                ev[0]
            )));
        }
        let op_norm = ev.iter().cloned().fold(0.0, f64::max);
        let trace = matrix.trace();
        Ok(FisherMatrix { matrix, op_norm, trace })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// A dominated parametric family with pointwise score and Fisher information.
pub trait ModelFamily: Send + Sync {
    fn param_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn validate_theta(&self, theta: &[f64]) -> Result<()>;
    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
    fn log_density(&self, x: &[f64], theta: &[f64]) -> f64;
    /// Gradient of `log_density` in the parameter.
    fn score(&self, x: &[f64], theta: &[f64]) -> Vec<f64>;
    fn fisher(&self, theta: &[f64]) -> FisherMatrix;
    /// Finite observation support, when one exists; enables exact enumeration.
    fn discrete_support(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// Isotropic Gaussian location model: X ~ N(theta, sigma^2 I_d).
#[derive(Debug, Clone)]
pub struct GaussianMeanFamily {
    pub dim: usize,
    pub sigma: f64,
}

pub fn gaussian_mean_family(dim: usize, sigma: f64) -> Result<GaussianMeanFamily> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and > 0, got {sigma}"
        )));
    }
    Ok(GaussianMeanFamily { dim, sigma })
}

impl ModelFamily for GaussianMeanFamily {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn validate_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta must be a finite vector of length {}",
                self.dim
            )));
        }
        Ok(())
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        theta
            .iter()
            .map(|&t| t + self.sigma * standard_normal(rng))
            .collect()
    }

    fn log_density(&self, x: &[f64], theta: &[f64]) -> f64 {
        let c = (2.0 * std::f64::consts::PI).ln() + 2.0 * self.sigma.ln();
        let mut acc = 0.0;
        for (xi, ti) in x.iter().zip(theta) {
            let z = (xi - ti) / self.sigma;
            acc += -0.5 * z * z - 0.5 * c;
        }
        acc
    }

    fn score(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        x.iter().zip(theta).map(|(xi, ti)| (xi - ti) / s2).collect()
    }

    fn fisher(&self, _theta: &[f64]) -> FisherMatrix {
        let m = DMatrix::identity(self.dim, self.dim) / (self.sigma * self.sigma);
        FisherMatrix::new(m).expect("isotropic Fisher is PSD")
    }
}

/// Bernoulli model on {0,1} with success probability theta in (0,1).
#[derive(Debug, Clone)]
pub struct BernoulliFamily;

pub fn bernoulli_family() -> BernoulliFamily {
    BernoulliFamily
}

impl ModelFamily for BernoulliFamily {
    fn param_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn validate_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 1 || !theta[0].is_finite() || theta[0] <= 0.0 || theta[0] >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "Bernoulli success probability must lie in (0,1), got {theta:?}"
            )));
        }
        Ok(())
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        // 53-bit uniform in [0,1).
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        vec![if u < theta[0] { 1.0 } else { 0.0 }]
    }

    fn log_density(&self, x: &[f64], theta: &[f64]) -> f64 {
        let p = theta[0];
        if x[0] == 1.0 {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn score(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let p = theta[0];
        vec![(x[0] - p) / (p * (1.0 - p))]
    }

    fn fisher(&self, theta: &[f64]) -> FisherMatrix {
        let p = theta[0];
        let m = DMatrix::from_element(1, 1, 1.0 / (p * (1.0 - p)));
        FisherMatrix::new(m).expect("scalar Fisher is PSD")
    }

    fn discrete_support(&self) -> Option<Vec<Vec<f64>>> {
        Some(vec![vec![0.0], vec![1.0]])
    }
}

/// Random-design linear regression: Z ~ N(0, design_cov), Y = Z' theta + eps,
/// eps ~ N(0, noise_sd^2). Observations are `[z..., y]`.
#[derive(Debug, Clone)]
pub struct LinearRegressionFamily {
    pub dim: usize,
    pub noise_sd: f64,
    design_cov: DMatrix<f64>,
    /// Factor L with L L' = design_cov, for sampling.
    design_factor: DMatrix<f64>,
    design_log_det: f64,
    design_inv: DMatrix<f64>,
}

pub fn linear_regression_family(
    design_cov: DMatrix<f64>,
    noise_sd: f64,
) -> Result<LinearRegressionFamily> {
    if design_cov.nrows() != design_cov.ncols() || design_cov.nrows() == 0 {
        return Err(Error::InvalidParameter("design covariance must be square".into()));
    }
    if !noise_sd.is_finite() || noise_sd <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise standard deviation must be finite and > 0, got {noise_sd}"
        )));
    }
    let sym = (&design_cov + design_cov.transpose()) * 0.5;
    let chol = sym.clone().cholesky().ok_or_else(|| {
        Error::InvalidParameter("design covariance must be positive definite".into())
    })?;
    let dim = design_cov.nrows();
    let design_log_det = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let design_inv = chol.inverse();
    Ok(LinearRegressionFamily {
        dim,
        noise_sd,
        design_cov: sym,
        design_factor: chol.l(),
        design_log_det,
        design_inv,
    })
}

impl LinearRegressionFamily {
    pub fn design_cov(&self) -> &DMatrix<f64> {
        &self.design_cov
    }
}

impl ModelFamily for LinearRegressionFamily {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim + 1
    }

    fn validate_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta must be a finite vector of length {}",
                self.dim
            )));
        }
        Ok(())
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let g = DVector::from_iterator(self.dim, (0..self.dim).map(|_| standard_normal(rng)));
        let z = &self.design_factor * g;
        let mean: f64 = z.iter().zip(theta).map(|(zi, ti)| zi * ti).sum();
        let y = mean + self.noise_sd * standard_normal(rng);
        let mut obs: Vec<f64> = z.iter().cloned().collect();
        obs.push(y);
        obs
    }

    fn log_density(&self, x: &[f64], theta: &[f64]) -> f64 {
        let (z, y) = (&x[..self.dim], x[self.dim]);
        let zv = DVector::from_column_slice(z);
        let quad = (self.design_inv.clone() * &zv).dot(&zv);
        let log_pz = -0.5 * quad
            - 0.5 * (self.dim as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * self.design_log_det;
        let mean: f64 = z.iter().zip(theta).map(|(zi, ti)| zi * ti).sum();
        let r = (y - mean) / self.noise_sd;
        let log_py = -0.5 * r * r
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - self.noise_sd.ln();
        log_pz + log_py
    }

    fn score(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let (z, y) = (&x[..self.dim], x[self.dim]);
        let mean: f64 = z.iter().zip(theta).map(|(zi, ti)| zi * ti).sum();
        let resid = (y - mean) / (self.noise_sd * self.noise_sd);
        z.iter().map(|zi| zi * resid).collect()
    }

    fn fisher(&self, _theta: &[f64]) -> FisherMatrix {
        let m = &self.design_cov / (self.noise_sd * self.noise_sd);
        FisherMatrix::new(m).expect("design covariance is PSD")
    }
}

/// Monte Carlo (or exact, for finite-support models) check that
/// `E[score score'] = fisher(theta)` and `E[score] = 0`.
#[derive(Debug, Clone)]
pub struct FisherConsistencyReport {
    pub estimate: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub score_mean: Vec<f64>,
    pub score_mean_se: Vec<f64>,
    /// Entries of the second-moment check off by more than 4 standard errors
    /// (or 1e-10 absolute, on the exact path).
    pub flagged: Vec<(usize, usize)>,
    pub exact: bool,
    pub passed: bool,
}

pub fn check_fisher_consistency(
    family: &dyn ModelFamily,
    theta: &[f64],
    trials: usize,
    seed: u64,
) -> Result<FisherConsistencyReport> {
    family.validate_theta(theta)?;
    let p = family.param_dim();
    let target = family.fisher(theta);

    if let Some(support) = family.discrete_support() {
        let mut second: DMatrix<f64> = DMatrix::zeros(p, p);
        let mut mean = vec![0.0; p];
        for x in &support {
            let w = family.log_density(x, theta).exp();
            let s = family.score(x, theta);
            for i in 0..p {
                mean[i] += w * s[i];
                for j in 0..p {
                    second[(i, j)] += w * s[i] * s[j];
                }
            }
        }
        let mut flagged = Vec::new();
        for i in 0..p {
            for j in 0..p {
                let scale = 1.0 + target.matrix[(i, j)].abs();
                if (second[(i, j)] - target.matrix[(i, j)]).abs() > 1e-10 * scale {
                    flagged.push((i, j));
                }
            }
        }
        let passed = flagged.is_empty() && mean.iter().all(|m| m.abs() <= 1e-10);
        return Ok(FisherConsistencyReport {
            estimate: second,
            se: DMatrix::zeros(p, p),
            score_mean: mean,
            score_mean_se: vec![0.0; p],
            flagged,
            exact: true,
            passed,
        });
    }

    if trials < 2 {
        return Err(Error::InvalidInput("consistency check needs >= 2 trials".into()));
    }
    let mut rng = crate::rng::stream(seed, crate::rng::Scope::Custom { tag: 0x6d6f6465 });
    let mut prods: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); p * p];
    let mut scores: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); p];
    for _ in 0..trials {
        let x = family.sample(theta, &mut rng);
        let s = family.score(&x, theta);
        for i in 0..p {
            scores[i].push(s[i]);
            for j in 0..p {
                prods[i * p + j].push(s[i] * s[j]);
            }
        }
    }
    let mut estimate = DMatrix::zeros(p, p);
    let mut se = DMatrix::zeros(p, p);
    let mut flagged = Vec::new();
    for i in 0..p {
        for j in 0..p {
            let m = mean_se(&prods[i * p + j]);
            estimate[(i, j)] = m.mean;
            se[(i, j)] = m.se;
            if (m.mean - target.matrix[(i, j)]).abs() > 4.0 * m.se.max(1e-12) {
                flagged.push((i, j));
            }
        }
    }
    let mut score_mean = Vec::with_capacity(p);
    let mut score_mean_se = Vec::with_capacity(p);
    let mut score_ok = true;
    for s in &scores {
        let m = mean_se(s);
        if m.mean.abs() > 4.0 * m.se.max(1e-12) {
            score_ok = false;
        }
        score_mean.push(m.mean);
        score_mean_se.push(m.se);
    }
    let passed = flagged.is_empty() && score_ok;
    Ok(FisherConsistencyReport {
        estimate,
        se,
        score_mean,
        score_mean_se,
        flagged,
        exact: false,
        passed,
    })
}
