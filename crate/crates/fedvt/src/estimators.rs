//! Federated estimators and the empirical Bayes-risk harness.
//!
//! These estimators are deliberately simple: their job is to sit above the
//! certified risk floor, not to be rate-optimal. Every private estimator
//! executes a real protocol through the engine, so its budget accounting is
//! checked by the same machinery as everything else. The non-private pooled
//! mean is the one exception: a deterministic exact release admits no finite
//! privacy declaration, so it is computed outside the engine and serves as
//! the no-privacy baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::mechanisms::{adaptive_two_round_mean_protocol, clip_to_ball, ClippedMeanMechanism};
use crate::models::{gaussian_mean_family, linear_regression_family, ModelFamily};
use crate::numeric::{mean_se, norm_sq, normal_log_pdf};
use crate::priors::ProductPrior;
use crate::privacy::{gaussian_noise_sd, ZcdpBudget};
use crate::protocol::{
    account, run_protocol_on_data, sample_local_data, ClientSpec, HistoryView, LocalMechanism,
    MechanismGrid, Message, NullPolicy, Schedule, Transcript,
};
use crate::rng::{derive_seed, standard_normal, stream, Scope};

/// Which estimator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NonprivateMean,
    FedGaussianMean,
    FedGaussianMeanAdaptive,
    FedLinreg,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::NonprivateMean => "nonprivate_mean",
            EstimatorKind::FedGaussianMean => "fed_gaussian_mean",
            EstimatorKind::FedGaussianMeanAdaptive => "fed_gaussian_mean_adaptive",
            EstimatorKind::FedLinreg => "fed_linreg",
        })
    }
}

/// Estimator configuration; `None` fields resolve to scenario-derived
/// defaults (clip radius r + 6 sigma for means, radial quantiles for the
/// regression statistics).
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Clip radius: the observation ball for means, the Frobenius ball of
    /// z z^T for regression.
    pub tau: Option<f64>,
    /// Second radius: adaptive round-two ball (default tau / 2) or the
    /// z y clip for regression.
    pub tau2: Option<f64>,
    /// Budget split across the two releases of the adaptive / regression
    /// protocols.
    pub split: (f64, f64),
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorSpec { kind, tau: None, tau2: None, split: (0.5, 0.5) }
    }
}

/// Pooled sample mean over all clients, ignoring privacy.
pub fn nonprivate_mean(data: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let total: usize = data.iter().map(|d| d.len()).sum();
    if total == 0 {
        return Err(Error::InvalidInput("pooled mean needs at least one sample".into()));
    }
    let dim = data
        .iter()
        .flatten()
        .next()
        .map(|x| x.len())
        .ok_or_else(|| Error::InvalidInput("pooled mean needs at least one sample".into()))?;
    let mut acc = vec![0.0; dim];
    for x in data.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total as f64);
    Ok(acc)
}

/// A private estimate together with the transcript that produced it.
#[derive(Debug, Clone)]
pub struct ProtocolEstimate {
    pub estimate: Vec<f64>,
    pub transcript: Transcript,
}

fn inverse_variance_weights(
    dim: usize,
    sigma: f64,
    clients: &[ClientSpec],
    noise_sds: &[f64],
) -> Result<Vec<f64>> {
    let d = dim as f64;
    let weights: Vec<f64> = clients
        .iter()
        .zip(noise_sds)
        .map(|(c, &sd)| 1.0 / (d * sigma * sigma / c.n as f64 + d * sd * sd))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EstimationFailed("aggregation weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn weighted_round_mean(
    round: &crate::protocol::Round,
    weights: &[f64],
    dim: usize,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    for (rm, &w) in round.messages.iter().zip(weights) {
        let payload = rm
            .message
            .payload()
            .ok_or_else(|| Error::InvalidTranscript("expected a message, found null".into()))?;
        for (a, &v) in acc.iter_mut().zip(payload) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// One-round clipped-mean release per client, aggregated with analytic
/// inverse-variance weights.
pub fn fed_gaussian_mean(
    data: &[Vec<Vec<f64>>],
    clients: &[ClientSpec],
    dim: usize,
    sigma: f64,
    tau: f64,
    seed: u64,
) -> Result<ProtocolEstimate> {
    let schedule = Schedule::Roundwise { clients: clients.len(), rounds: 1 };
    let mechs: Vec<Arc<ClippedMeanMechanism>> = clients
        .iter()
        .map(|c| {
            ClippedMeanMechanism::new(vec![0.0; dim], tau, c.rho_budget, c.n).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise_sds: Vec<f64> = mechs.iter().map(|m| m.noise_sd()).collect();
    let grid = MechanismGrid::new(vec![mechs
        .into_iter()
        .map(|m| Some(m as Arc<dyn LocalMechanism>))
        .collect()]);
    let transcript = run_protocol_on_data(data, clients, &schedule, &grid, &NullPolicy, seed)?;
    let weights = inverse_variance_weights(dim, sigma, clients, &noise_sds)?;
    let estimate = weighted_round_mean(&transcript.rounds[0], &weights, dim)?;
    Ok(ProtocolEstimate { estimate, transcript })
}

/// Two-round release: coarse clipped mean, broadcast, re-clipped mean around
/// the broadcast. The estimate aggregates the second round only.
pub fn fed_gaussian_mean_adaptive(
    data: &[Vec<Vec<f64>>],
    clients: &[ClientSpec],
    dim: usize,
    sigma: f64,
    tau1: f64,
    tau2: f64,
    split: (f64, f64),
    seed: u64,
) -> Result<ProtocolEstimate> {
    let bundle = adaptive_two_round_mean_protocol(clients, dim, split, tau1, tau2)?;
    let transcript = run_protocol_on_data(
        data, clients, &bundle.schedule, &bundle.grid, bundle.policy.as_ref(), seed,
    )?;
    let noise_sds: Vec<f64> = clients
        .iter()
        .map(|c| {
            gaussian_noise_sd(
                2.0 * tau2 / c.n as f64,
                ZcdpBudget::new(split.1 * c.rho_budget.rho())?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = inverse_variance_weights(dim, sigma, clients, &noise_sds)?;
    let estimate = weighted_round_mean(&transcript.rounds[1], &weights, dim)?;
    Ok(ProtocolEstimate { estimate, transcript })
}

// ---------------------------------------------------------------------------
// Linear regression from noisy clipped sufficient statistics.
// ---------------------------------------------------------------------------

/// Releases vec( mean_i clip_F(z_i z_i^T) ) + noise. Replacing one sample
/// moves the mean by at most 2 tau / n in Frobenius norm.
struct SecondMomentRelease {
    dim: usize,
    tau: f64,
    rho: ZcdpBudget,
    noise_sd: f64,
}

/// Releases mean_i clip(z_i y_i) + noise with l2 clip radius tau.
struct CrossMomentRelease {
    dim: usize,
    tau: f64,
    rho: ZcdpBudget,
    noise_sd: f64,
}

fn clipped_outer_mean(data: &[Vec<f64>], dim: usize, tau: f64) -> Vec<f64> {
    // Observation layout: [z_1..z_d, y].
    let mut acc = vec![0.0; dim * dim];
    for obs in data {
        let z = &obs[..dim];
        let norm_sq: f64 = z.iter().map(|v| v * v).sum();
        // ||z z^T||_F = ||z||^2.
        let scale = if norm_sq > tau { tau / norm_sq } else { 1.0 };
        for i in 0..dim {
            for j in 0..dim {
                acc[i * dim + j] += scale * z[i] * z[j];
            }
        }
    }
    let inv = 1.0 / data.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

fn clipped_cross_mean(data: &[Vec<f64>], dim: usize, tau: f64) -> Vec<f64> {
    let zero = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for obs in data {
        let y = obs[dim];
        let zy: Vec<f64> = obs[..dim].iter().map(|&z| z * y).collect();
        let c = clip_to_ball(&zy, &zero, tau);
        for (a, v) in acc.iter_mut().zip(&c) {
            *a += v;
        }
    }
    let inv = 1.0 / data.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

impl LocalMechanism for SecondMomentRelease {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        rng: &mut dyn rand::RngCore,
    ) -> Message {
        let mut v = clipped_outer_mean(data, self.dim, self.tau);
        v.iter_mut().for_each(|c| *c += self.noise_sd * standard_normal(rng));
        Message::Vector(v)
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        let payload = message.payload()?;
        if payload.len() != self.dim * self.dim {
            return None;
        }
        let v = clipped_outer_mean(data, self.dim, self.tau);
        Some(
            payload
                .iter()
                .zip(&v)
                .map(|(&y, &mu)| normal_log_pdf(y, mu, self.noise_sd))
                .sum(),
        )
    }
}

impl LocalMechanism for CrossMomentRelease {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        rng: &mut dyn rand::RngCore,
    ) -> Message {
        let mut v = clipped_cross_mean(data, self.dim, self.tau);
        v.iter_mut().for_each(|c| *c += self.noise_sd * standard_normal(rng));
        Message::Vector(v)
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        let payload = message.payload()?;
        if payload.len() != self.dim {
            return None;
        }
        let v = clipped_cross_mean(data, self.dim, self.tau);
        Some(
            payload
                .iter()
                .zip(&v)
                .map(|(&y, &mu)| normal_log_pdf(y, mu, self.noise_sd))
                .sum(),
        )
    }
}

/// Minimum eigenvalue allowed in the aggregated design moment before the
/// solver shifts the spectrum up to it.
pub const LINREG_EIGENVALUE_FLOOR: f64 = 1e-6;

/// Solves a_hat w = b_hat, shifting the spectrum up only when the smallest
/// eigenvalue sits below `floor` so that well-conditioned noise-free inputs
/// reproduce least squares exactly.
pub fn solve_normal_equations(
    a_hat: &DMatrix<f64>,
    b_hat: &DVector<f64>,
    floor: f64,
) -> Result<Vec<f64>> {
    let sym = (a_hat + a_hat.transpose()) * 0.5;
    let min_eig = crate::numeric::symmetric_eigenvalues(&sym)?
        .first()
        .copied()
        .ok_or_else(|| Error::EstimationFailed("empty design moment".into()))?;
    let shifted = if min_eig < floor {
        &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * (floor - min_eig)
    } else {
        sym
    };
    let solved = shifted
        .lu()
        .solve(b_hat)
        .ok_or_else(|| Error::EstimationFailed("aggregate design moment is singular".into()))?;
    Ok(solved.iter().copied().collect())
}

/// Two-release regression: clipped second moments, then clipped cross
/// moments, aggregated by sample count and solved with the eigenvalue floor.
///
/// Solved coefficients are projected onto the ball of radius
/// `solution_radius`: when the released moment matrix is noise-dominated its
/// smallest eigenvalue can land near the floor and the raw solve explodes;
/// the projection caps that tail without touching well-conditioned solves.
pub fn fed_linreg(
    data: &[Vec<Vec<f64>>],
    clients: &[ClientSpec],
    dim: usize,
    tau_zz: f64,
    tau_zy: f64,
    split: (f64, f64),
    solution_radius: f64,
    seed: u64,
) -> Result<ProtocolEstimate> {
    if !(solution_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "solution radius must be positive, got {solution_radius}"
        )));
    }
    if split.0 <= 0.0 || split.1 <= 0.0 || split.0 + split.1 > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "budget split {:?} must be positive and sum to <= 1",
            split
        )));
    }
    let m = clients.len();
    let schedule = Schedule::Roundwise { clients: m, rounds: 2 };
    let mut zz_row: Vec<Option<Arc<dyn LocalMechanism>>> = Vec::with_capacity(m);
    let mut zy_row: Vec<Option<Arc<dyn LocalMechanism>>> = Vec::with_capacity(m);
    for c in clients {
        let rho_a = ZcdpBudget::new(split.0 * c.rho_budget.rho())?;
        let rho_b = ZcdpBudget::new(split.1 * c.rho_budget.rho())?;
        zz_row.push(Some(Arc::new(SecondMomentRelease {
            dim,
            tau: tau_zz,
            rho: rho_a,
            noise_sd: gaussian_noise_sd(2.0 * tau_zz / c.n as f64, rho_a)?,
        })));
        zy_row.push(Some(Arc::new(CrossMomentRelease {
            dim,
            tau: tau_zy,
            rho: rho_b,
            noise_sd: gaussian_noise_sd(2.0 * tau_zy / c.n as f64, rho_b)?,
        })));
    }
    let grid = MechanismGrid::new(vec![zz_row, zy_row]);
    let transcript = run_protocol_on_data(data, clients, &schedule, &grid, &NullPolicy, seed)?;

    let total_n: usize = clients.iter().map(|c| c.n).sum();
    let mut a_hat = DMatrix::<f64>::zeros(dim, dim);
    let mut b_hat = DVector::<f64>::zeros(dim);
    for (l, c) in clients.iter().enumerate() {
        let w = c.n as f64 / total_n as f64;
        let a = transcript.rounds[0].messages[l].message.payload().unwrap();
        let b = transcript.rounds[1].messages[l].message.payload().unwrap();
        for i in 0..dim {
            for j in 0..dim {
                a_hat[(i, j)] += w * a[i * dim + j];
            }
            b_hat[i] += w * b[i];
        }
    }
    let mut estimate = solve_normal_equations(&a_hat, &b_hat, LINREG_EIGENVALUE_FLOOR)?;
    let norm = norm_sq(&estimate).sqrt();
    if norm > solution_radius {
        let scale = solution_radius / norm;
        estimate.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(ProtocolEstimate { estimate, transcript })
}

// ---------------------------------------------------------------------------
// Empirical Bayes risk.
// ---------------------------------------------------------------------------

/// The generative scenario an estimator runs in.
#[derive(Debug, Clone)]
pub enum RiskModel {
    /// Observations x = theta + N(0, sigma^2 I_d).
    Mean { dim: usize, sigma: f64 },
    /// Observations (z, y), y = theta . z + N(0, noise_sd^2).
    Linreg { design: DMatrix<f64>, noise_sd: f64 },
}

impl RiskModel {
    pub fn dim(&self) -> usize {
        match self {
            RiskModel::Mean { dim, .. } => *dim,
            RiskModel::Linreg { design, .. } => design.nrows(),
        }
    }

    fn family(&self) -> Result<Box<dyn ModelFamily>> {
        match self {
            RiskModel::Mean { dim, sigma } => {
                Ok(Box::new(gaussian_mean_family(*dim, *sigma)?))
            }
            RiskModel::Linreg { design, noise_sd } => {
                Ok(Box::new(linear_regression_family(design.clone(), *noise_sd)?))
            }
        }
    }
}

/// Filled-in clip radii for one scenario.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolvedClips {
    pub tau: f64,
    pub tau2: f64,
}

/// Scenario-derived clip defaults: prior radius plus six noise deviations
/// for means; radial quantiles of the statistic norms for regression.
pub fn resolve_clips(spec: &EstimatorSpec, model: &RiskModel, prior_radius: f64) -> ResolvedClips {
    match model {
        RiskModel::Mean { sigma, .. } => {
            let tau = spec.tau.unwrap_or(prior_radius + 6.0 * sigma);
            let tau2 = spec.tau2.unwrap_or(tau / 2.0);
            ResolvedClips { tau, tau2 }
        }
        RiskModel::Linreg { design, noise_sd } => {
            let d = design.nrows() as f64;
            let op = crate::numeric::symmetric_eigenvalues(design)
                .map(|ev| ev.last().copied().unwrap_or(1.0))
                .unwrap_or(1.0);
            let z_norm = op.sqrt() * (d.sqrt() + 4.0);
            let tau_zz = spec.tau.unwrap_or(z_norm * z_norm);
            let y_mag = prior_radius * d.sqrt() * z_norm + 4.0 * noise_sd;
            let tau_zy = spec.tau2.unwrap_or(z_norm * y_mag);
            ResolvedClips { tau: tau_zz, tau2: tau_zy }
        }
    }
}

/// Measured Bayes risk of one estimator on one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub estimator: EstimatorKind,
    pub risk: f64,
    pub se: f64,
    pub trials: usize,
    pub bound: f64,
    pub bound_certified: bool,
    /// risk - bound; certified bounds require margin >= -3 se.
    pub margin: f64,
    pub passed: bool,
    pub clips: ResolvedClips,
}

/// Draws theta from the prior, data from the model, runs the estimator, and
/// compares mean squared error to the supplied lower bound.
pub fn empirical_bayes_risk(
    spec: &EstimatorSpec,
    model: &RiskModel,
    prior: &ProductPrior,
    clients: &[ClientSpec],
    trials: usize,
    seed: u64,
    bound: &BoundReport,
) -> Result<RiskReport> {
    if trials < 1000 {
        return Err(Error::InvalidParameter(format!(
            "risk estimates need at least 1000 trials, got {trials}"
        )));
    }
    if clients.is_empty() {
        return Err(Error::InvalidInput("risk harness needs at least one client".into()));
    }
    let dim = model.dim();
    if prior.dim() != dim {
        return Err(Error::InvalidInput(format!(
            "prior dimension {} does not match model dimension {dim}",
            prior.dim()
        )));
    }
    if matches!(spec.kind, EstimatorKind::FedLinreg) != matches!(model, RiskModel::Linreg { .. }) {
        return Err(Error::InvalidInput(format!(
            "estimator {} does not run on this scenario model",
            spec.kind
        )));
    }
    let clips = resolve_clips(spec, model, prior.radius_hint());
    let solution_radius = 10.0 * prior.radius_hint() * (dim as f64).sqrt();
    let family = model.family()?;
    let sigma = match model {
        RiskModel::Mean { sigma, .. } => *sigma,
        RiskModel::Linreg { noise_sd, .. } => *noise_sd,
    };

    let run_one = |trial: usize| -> Result<f64> {
        let mut prior_rng = stream(seed, Scope::PriorDraw { trial });
        let theta = prior.sample(&mut prior_rng);
        let trial_seed = derive_seed(seed, Scope::Trial { trial });
        let data = sample_local_data(family.as_ref(), &theta, clients, trial_seed);
        let estimate = match spec.kind {
            EstimatorKind::NonprivateMean => nonprivate_mean(&data)?,
            EstimatorKind::FedGaussianMean => {
                let out =
                    fed_gaussian_mean(&data, clients, dim, sigma, clips.tau, trial_seed)?;
                if trial == 0 {
                    check_budget_honesty(&out.transcript, clients)?;
                }
                out.estimate
            }
            EstimatorKind::FedGaussianMeanAdaptive => {
                let out = fed_gaussian_mean_adaptive(
                    &data, clients, dim, sigma, clips.tau, clips.tau2, spec.split, trial_seed,
                )?;
                if trial == 0 {
                    check_budget_honesty(&out.transcript, clients)?;
                }
                out.estimate
            }
            EstimatorKind::FedLinreg => {
                let out = fed_linreg(
                    &data, clients, dim, clips.tau, clips.tau2, spec.split, solution_radius,
                    trial_seed,
                )?;
                if trial == 0 {
                    check_budget_honesty(&out.transcript, clients)?;
                }
                out.estimate
            }
        };
        let err: Vec<f64> = estimate.iter().zip(&theta).map(|(e, t)| e - t).collect();
        Ok(norm_sq(&err))
    };

    let sq_errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(run_one)
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let stat = mean_se(&sq_errors);
    let margin = stat.mean - bound.value;
    let certified = bound.variant.is_certified();
    Ok(RiskReport {
        estimator: spec.kind,
        risk: stat.mean,
        se: stat.se,
        trials,
        bound: bound.value,
        bound_certified: certified,
        margin,
        passed: margin >= -3.0 * stat.se,
        clips,
    })
}

/// The declared budget of an executed transcript must equal each client's
/// budget bit for bit; the split fractions are chosen to make the sums exact.
fn check_budget_honesty(transcript: &Transcript, clients: &[ClientSpec]) -> Result<()> {
    let acct = account(transcript)?;
    for (l, (got, want)) in acct.per_client.iter().zip(clients).enumerate() {
        if got.rho() != want.rho_budget.rho() {
            return Err(Error::BudgetExceeded {
                client: l,
                round: transcript.num_rounds(),
                charged: got.rho(),
                budget: want.rho_budget.rho(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{linreg_bound, mean_estimation_bound, BoundVariant};
    use approx::assert_relative_eq;

    fn budget(r: f64) -> ZcdpBudget {
        ZcdpBudget::new(r).unwrap()
    }

    fn clients(specs: &[(usize, f64)]) -> Vec<ClientSpec> {
        specs
            .iter()
            .enumerate()
            .map(|(id, &(n, rho))| ClientSpec::new(id, n, budget(rho)).unwrap())
            .collect()
    }

    #[test]
    fn pooled_mean_is_exact() {
        let data = vec![
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![vec![5.0, 6.0]],
        ];
        let m = nonprivate_mean(&data).unwrap();
        assert_relative_eq!(m[0], 3.0);
        assert_relative_eq!(m[1], 4.0);
    }

    #[test]
    fn symmetric_clients_get_equal_weights() {
        let cs = clients(&[(10, 0.5), (10, 0.5)]);
        let data: Vec<Vec<Vec<f64>>> = vec![
            (0..10).map(|i| vec![0.1 * i as f64]).collect(),
            (0..10).map(|i| vec![-0.1 * i as f64]).collect(),
        ];
        let out = fed_gaussian_mean(&data, &cs, 1, 1.0, 5.0, 33).unwrap();
        let y0 = out.transcript.rounds[0].messages[0].message.payload().unwrap()[0];
        let y1 = out.transcript.rounds[0].messages[1].message.payload().unwrap()[0];
        assert_relative_eq!(out.estimate[0], 0.5 * (y0 + y1), epsilon = 1e-12);
    }

    #[test]
    fn noiseless_limit_recovers_weighted_sample_means() {
        // At rho = 1e6 the noise is negligible and weights reduce to
        // sample-count weighting, i.e. the pooled mean.
        let cs = clients(&[(20, 1e6), (40, 1e6)]);
        let data: Vec<Vec<Vec<f64>>> = vec![
            (0..20).map(|i| vec![0.05 * i as f64 - 0.5]).collect(),
            (0..40).map(|i| vec![0.02 * i as f64]).collect(),
        ];
        let out = fed_gaussian_mean(&data, &cs, 1, 1.0, 5.0, 5).unwrap();
        let pooled = nonprivate_mean(&data).unwrap();
        assert!((out.estimate[0] - pooled[0]).abs() < 1e-3);
    }

    #[test]
    fn single_client_release_has_stated_noise_law() {
        // est - sample_mean must be centered Gaussian with sd (2 tau / n) / sqrt(2 rho).
        let cs = clients(&[(20, 0.5)]);
        let tau = 50.0;
        let data: Vec<Vec<Vec<f64>>> =
            vec![(0..20).map(|i| vec![(i as f64 - 9.5) * 0.1]).collect()];
        let sample_mean = nonprivate_mean(&data).unwrap()[0];
        let expected_sd = (2.0 * tau / 20.0) / (2.0f64 * 0.5).sqrt();
        let replicates = 10_000;
        let mut diffs = Vec::with_capacity(replicates);
        for k in 0..replicates {
            let out = fed_gaussian_mean(&data, &cs, 1, 1.0, tau, 9000 + k as u64).unwrap();
            diffs.push(out.estimate[0] - sample_mean);
        }
        let stat = mean_se(&diffs);
        assert!(
            stat.mean.abs() <= 4.0 * stat.se,
            "noise mean {} vs se {}",
            stat.mean,
            stat.se
        );
        let var: f64 = diffs.iter().map(|d| d * d).sum::<f64>() / replicates as f64;
        let rel = var / (expected_sd * expected_sd) - 1.0;
        assert!(rel.abs() < 0.06, "variance off by {rel}");
    }

    #[test]
    fn budgets_account_exactly_for_all_protocol_estimators() {
        let cs = clients(&[(8, 0.5), (12, 0.25)]);
        let data_mean: Vec<Vec<Vec<f64>>> = cs
            .iter()
            .map(|c| (0..c.n).map(|i| vec![0.01 * i as f64]).collect())
            .collect();
        let out = fed_gaussian_mean(&data_mean, &cs, 1, 1.0, 7.0, 3).unwrap();
        check_budget_honesty(&out.transcript, &cs).unwrap();

        let out2 =
            fed_gaussian_mean_adaptive(&data_mean, &cs, 1, 1.0, 7.0, 3.5, (0.5, 0.5), 3).unwrap();
        check_budget_honesty(&out2.transcript, &cs).unwrap();

        let data_lr: Vec<Vec<Vec<f64>>> = cs
            .iter()
            .map(|c| {
                (0..c.n)
                    .map(|i| {
                        let z = 0.1 * i as f64 - 0.4;
                        vec![z, 0.7 * z + 0.01]
                    })
                    .collect()
            })
            .collect();
        let out3 = fed_linreg(&data_lr, &cs, 1, 50.0, 50.0, (0.5, 0.5), 1e6, 3).unwrap();
        check_budget_honesty(&out3.transcript, &cs).unwrap();
    }

    #[test]
    fn normal_equation_solver_matches_least_squares() {
        // Exact statistics from a well-conditioned instance: the floor must
        // stay disengaged and the solution equal the textbook inverse.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let truth = DVector::from_vec(vec![0.8, -0.4]);
        let b = &a * &truth;
        let solved = solve_normal_equations(&a, &b, LINREG_EIGENVALUE_FLOOR).unwrap();
        for (s, t) in solved.iter().zip(truth.iter()) {
            assert!((s - t).abs() < 1e-8, "{s} vs {t}");
        }
        // Degenerate moment: the floor engages instead of failing.
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sol = solve_normal_equations(&singular, &b, LINREG_EIGENVALUE_FLOOR).unwrap();
        assert!(sol.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn linreg_with_huge_budget_approaches_ols() {
        let cs = clients(&[(200, 1e12)]);
        let design = DMatrix::identity(2, 2);
        let family = linear_regression_family(design, 0.5).unwrap();
        let theta = [0.6, -0.3];
        let data = sample_local_data(&family, &theta, &cs, 77);
        let out = fed_linreg(&data, &cs, 2, 50.0, 50.0, (0.5, 0.5), 1e6, 77).unwrap();
        // OLS from the raw sufficient statistics.
        let mut a = DMatrix::<f64>::zeros(2, 2);
        let mut b = DVector::<f64>::zeros(2);
        for obs in &data[0] {
            for i in 0..2 {
                for j in 0..2 {
                    a[(i, j)] += obs[i] * obs[j] / 200.0;
                }
                b[i] += obs[i] * obs[2] / 200.0;
            }
        }
        let ols = solve_normal_equations(&a, &b, LINREG_EIGENVALUE_FLOOR).unwrap();
        for (got, want) in out.estimate.iter().zip(&ols) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn exploding_solves_are_projected_onto_the_cap() {
        // A tiny statistic clip forces the aggregated moment under the
        // eigenvalue floor; the raw solve would be ~1e6 scale.
        let cs = clients(&[(50, 1.0)]);
        let data: Vec<Vec<Vec<f64>>> =
            vec![(0..50).map(|i| vec![1.0 + 0.01 * i as f64, 0.8]).collect()];
        let out = fed_linreg(&data, &cs, 1, 1e-9, 50.0, (0.5, 0.5), 2.0, 5).unwrap();
        let norm = norm_sq(&out.estimate).sqrt();
        assert!(norm <= 2.0 + 1e-12, "norm {norm} exceeds the cap");
        assert!(norm > 1.9, "cap should have engaged, got {norm}");
    }

    #[test]
    fn nonprivate_mean_risk_sits_in_the_classical_band() {
        let cs = clients(&[(100, 0.5)]);
        let model = RiskModel::Mean { dim: 1, sigma: 1.0 };
        let prior = ProductPrior::isotropic(1, 1.0).unwrap();
        let bound = mean_estimation_bound(1, 1.0, &cs, 1.0, BoundVariant::Exact).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::NonprivateMean);
        let report =
            empirical_bayes_risk(&spec, &model, &prior, &cs, 4000, 2718, &bound).unwrap();
        // Sample-mean Bayes risk is exactly sigma^2 / n = 0.01.
        assert!(
            (report.risk - 0.01).abs() <= 4.0 * report.se,
            "risk {} +- {}",
            report.risk,
            report.se
        );
        assert!(report.passed, "floor violated: margin {}", report.margin);
        assert!(report.bound_certified);
    }

    #[test]
    fn private_estimators_respect_the_floor() {
        let cs = clients(&[(50, 0.2); 5]);
        let model = RiskModel::Mean { dim: 1, sigma: 1.0 };
        let prior = ProductPrior::isotropic(1, 1.0).unwrap();
        let bound = mean_estimation_bound(1, 1.0, &cs, 1.0, BoundVariant::Exact).unwrap();
        for kind in [EstimatorKind::FedGaussianMean, EstimatorKind::FedGaussianMeanAdaptive] {
            let report = empirical_bayes_risk(
                &EstimatorSpec::new(kind), &model, &prior, &cs, 1500, 99, &bound,
            )
            .unwrap();
            assert!(report.passed, "{kind}: margin {} se {}", report.margin, report.se);
        }
    }

    #[test]
    fn linreg_risk_respects_its_bound() {
        let cs = clients(&[(100, 1.0); 2]);
        let design = DMatrix::identity(2, 2);
        let model = RiskModel::Linreg { design: design.clone(), noise_sd: 1.0 };
        let prior = ProductPrior::isotropic(2, 1.0).unwrap();
        let bound = linreg_bound(&design, 1.0, &cs, 1.0, BoundVariant::Exact).unwrap();
        let report = empirical_bayes_risk(
            &EstimatorSpec::new(EstimatorKind::FedLinreg),
            &model, &prior, &cs, 1500, 4242, &bound,
        )
        .unwrap();
        assert!(report.passed, "margin {} se {}", report.margin, report.se);
    }

    #[test]
    fn harness_validates_inputs() {
        let cs = clients(&[(10, 0.5)]);
        let model = RiskModel::Mean { dim: 1, sigma: 1.0 };
        let prior = ProductPrior::isotropic(1, 1.0).unwrap();
        let bound = mean_estimation_bound(1, 1.0, &cs, 1.0, BoundVariant::Exact).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::NonprivateMean);
        assert!(empirical_bayes_risk(&spec, &model, &prior, &cs, 10, 1, &bound).is_err());
        let lr = EstimatorSpec::new(EstimatorKind::FedLinreg);
        assert!(empirical_bayes_risk(&lr, &model, &prior, &cs, 1000, 1, &bound).is_err());
    }
}
