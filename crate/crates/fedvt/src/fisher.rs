//! Fisher information carried by public transcripts.
//!
//! The score of the transcript marginal decomposes across clients: with
//! U_l(g) = E[sum_i score(x_i) | g] taken under client l's posterior, the
//! transcript score is sum_l U_l(g), so Tr I_G = E||sum_l U_l||^2 =
//! sum_l E||U_l||^2 + sum_{l != j} E<U_l, U_j>,
//! and the cross terms vanish in expectation because local datasets are
//! independent given theta. Everything here estimates these pieces by Monte
//! Carlo over transcripts, with posteriors computed by exact enumeration of
//! the local data space.

use itertools::Itertools;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::numeric::{log_sum_exp, mean_se, norm_sq, MeanSe};
use crate::protocol::{
    run_protocol, ClientSpec, HistoryView, MechanismGrid, Schedule, ServerPolicy, Transcript,
};
use crate::rng::{derive_seed, Scope};

/// Largest number of local datasets enumerated per client.
pub const ENUMERATION_CAP: u128 = 1 << 20;

/// Instruction replay shared by every posterior evaluation on one transcript.
struct ReplayedTranscript<'a> {
    transcript: &'a Transcript,
    instructions: Vec<Vec<f64>>,
}

impl<'a> ReplayedTranscript<'a> {
    fn new(transcript: &'a Transcript, policy: &dyn ServerPolicy) -> Self {
        let instructions = (0..transcript.num_rounds())
            .map(|t| policy.next_instructions(&transcript.initial_randomness, &transcript.rounds[..t]))
            .collect();
        ReplayedTranscript { transcript, instructions }
    }

    /// Log of client `l`'s transcript factor under hypothetical local data,
    /// excluding the data-independent initial-randomness term.
    fn client_log_factor(
        &self,
        grid: &MechanismGrid,
        client: usize,
        data: &[Vec<f64>],
    ) -> Result<f64> {
        let mut total = 0.0;
        for (t, round) in self.transcript.rounds.iter().enumerate() {
            if let Some(mech) = grid.slot(t, client) {
                let history = HistoryView {
                    initial: &self.transcript.initial_randomness,
                    rounds: &self.transcript.rounds[..t],
                    instructions: &self.instructions[t],
                };
                let lq = mech
                    .message_log_density(&round.messages[client].message, data, &history)
                    .ok_or(Error::DensityUnavailable { client, round: t })?;
                total += lq;
            }
        }
        Ok(total)
    }
}

/// Exact posterior over one client's local dataset given a transcript.
#[derive(Debug, Clone)]
pub struct ClientPosterior {
    pub client: usize,
    /// Enumerated candidate datasets, sample-major.
    pub datasets: Vec<Vec<Vec<f64>>>,
    /// Normalized log posterior weights, aligned with `datasets`.
    pub log_weights: Vec<f64>,
}

impl ClientPosterior {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Posterior mean of the local score sum: U_l(g).
    pub fn expected_score(&self, model: &dyn ModelFamily, theta: &[f64]) -> Vec<f64> {
        let p = model.param_dim();
        let mut u = vec![0.0; p];
        for (dataset, &lw) in self.datasets.iter().zip(&self.log_weights) {
            let w = lw.exp();
            if w == 0.0 {
                continue;
            }
            for x in dataset {
                let s = model.score(x, theta);
                for (acc, si) in u.iter_mut().zip(&s) {
                    *acc += w * si;
                }
            }
        }
        u
    }
}

fn enumeration_size(support: usize, n: usize) -> Result<u128> {
    let mut needed: u128 = 1;
    for _ in 0..n {
        needed = needed.checked_mul(support as u128).ok_or(Error::EnumerationCapExceeded {
            needed: u128::MAX,
            cap: ENUMERATION_CAP,
        })?;
        if needed > ENUMERATION_CAP {
            return Err(Error::EnumerationCapExceeded { needed, cap: ENUMERATION_CAP });
        }
    }
    Ok(needed)
}

/// Exact posterior over client `client`'s dataset by enumerating its data
/// space; requires a discrete observation model.
pub fn posterior_over_data(
    model: &dyn ModelFamily,
    theta: &[f64],
    transcript: &Transcript,
    clients: &[ClientSpec],
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    client: usize,
) -> Result<ClientPosterior> {
    let replay = ReplayedTranscript::new(transcript, policy);
    posterior_with_replay(model, theta, &replay, clients, grid, client)
}

fn posterior_with_replay(
    model: &dyn ModelFamily,
    theta: &[f64],
    replay: &ReplayedTranscript<'_>,
    clients: &[ClientSpec],
    grid: &MechanismGrid,
    client: usize,
) -> Result<ClientPosterior> {
    model.validate_theta(theta)?;
    let support = model.discrete_support().ok_or_else(|| {
        Error::EnumerationUnsupported(
            "posterior enumeration needs a model with finite observation support".into(),
        )
    })?;
    let spec = clients
        .get(client)
        .ok_or_else(|| Error::InvalidInput(format!("no client {client}")))?;
    enumeration_size(support.len(), spec.n)?;

    let log_point: Vec<f64> = support.iter().map(|x| model.log_density(x, theta)).collect();

    let mut datasets = Vec::new();
    let mut log_weights = Vec::new();
    for idx in (0..spec.n).map(|_| 0..support.len()).multi_cartesian_product() {
        let dataset: Vec<Vec<f64>> = idx.iter().map(|&j| support[j].clone()).collect();
        let log_prior: f64 = idx.iter().map(|&j| log_point[j]).sum();
        let log_lik = replay.client_log_factor(grid, client, &dataset)?;
        datasets.push(dataset);
        log_weights.push(log_prior + log_lik);
    }
    let log_z = log_sum_exp(&log_weights);
    if !log_z.is_finite() {
        return Err(Error::EstimationFailed(format!(
            "posterior normalizer for client {client} is not finite (log Z = {log_z})"
        )));
    }
    log_weights.iter_mut().for_each(|lw| *lw -= log_z);
    Ok(ClientPosterior { client, datasets, log_weights })
}

/// Monte Carlo estimate of the transcript Fisher information trace together
/// with its per-client / cross-term decomposition.
#[derive(Debug, Clone)]
pub struct TranscriptFisherReport {
    pub trials: usize,
    /// E || sum_l U_l ||^2, the transcript information trace.
    pub total: MeanSe,
    /// E || U_l ||^2 per client.
    pub per_client: Vec<MeanSe>,
    /// Mean of each off-diagonal pair 2 <U_l, U_j>, l < j.
    pub cross_pairs: Vec<(usize, usize, MeanSe)>,
    /// Per-trial sum of all cross terms; zero in expectation.
    pub cross_total: MeanSe,
    /// Largest per-trial gap | total - (sum per-client + cross) |.
    pub max_identity_gap: f64,
}

struct TrialOutcome {
    total: f64,
    per_client: Vec<f64>,
    cross_pairs: Vec<f64>,
    cross_total: f64,
    identity_gap: f64,
}

fn fisher_trial(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trial_seed: u64,
) -> Result<TrialOutcome> {
    let transcript = run_protocol(model, theta, clients, schedule, grid, policy, trial_seed)?;
    let replay = ReplayedTranscript::new(&transcript, policy);
    let m = clients.len();
    let p = model.param_dim();

    let mut us: Vec<Vec<f64>> = Vec::with_capacity(m);
    for l in 0..m {
        let post = posterior_with_replay(model, theta, &replay, clients, grid, l)?;
        us.push(post.expected_score(model, theta));
    }

    let mut sum_u = vec![0.0; p];
    for u in &us {
        for (acc, v) in sum_u.iter_mut().zip(u) {
            *acc += v;
        }
    }
    let total = norm_sq(&sum_u);
    let per_client: Vec<f64> = us.iter().map(|u| norm_sq(u)).collect();
    let mut cross_pairs = Vec::with_capacity(m * (m - 1) / 2);
    let mut cross_total = 0.0;
    for l in 0..m {
        for j in (l + 1)..m {
            let c = 2.0 * crate::numeric::dot(&us[l], &us[j]);
            cross_pairs.push(c);
            cross_total += c;
        }
    }
    let recombined = per_client.iter().sum::<f64>() + cross_total;
    let identity_gap = (total - recombined).abs();
    Ok(TrialOutcome { total, per_client, cross_pairs, cross_total, identity_gap })
}

/// Estimates Tr I_G over `trials` independent protocol executions.
pub fn transcript_fisher(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
) -> Result<TranscriptFisherReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let outcomes: Vec<Result<TrialOutcome>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_seed = derive_seed(seed, Scope::Trial { trial: i });
            fisher_trial(model, theta, clients, schedule, grid, policy, trial_seed)
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let m = clients.len();
    let totals: Vec<f64> = outcomes.iter().map(|o| o.total).collect();
    let per_client = (0..m)
        .map(|l| mean_se(&outcomes.iter().map(|o| o.per_client[l]).collect::<Vec<_>>()))
        .collect();
    let n_pairs = m * (m - 1) / 2;
    let mut cross_pairs = Vec::with_capacity(n_pairs);
    let mut k = 0;
    for l in 0..m {
        for j in (l + 1)..m {
            let xs: Vec<f64> = outcomes.iter().map(|o| o.cross_pairs[k]).collect();
            cross_pairs.push((l, j, mean_se(&xs)));
            k += 1;
        }
    }
    let cross_total = mean_se(&outcomes.iter().map(|o| o.cross_total).collect::<Vec<_>>());
    let max_identity_gap = outcomes.iter().map(|o| o.identity_gap).fold(0.0, f64::max);
    Ok(TranscriptFisherReport {
        trials,
        total: mean_se(&totals),
        per_client,
        cross_pairs,
        cross_total,
        max_identity_gap,
    })
}

/// Outcome of comparing a Monte Carlo information estimate to a ceiling.
#[derive(Debug, Clone)]
pub struct ContractionCheck {
    pub estimate: MeanSe,
    /// Privacy ceiling: sum_l (e^{2 rho_l} - 1) n_l^2 ||I_x||_op.
    pub privacy_bound: f64,
    /// Data-processing ceiling: sum_l n_l Tr I_x.
    pub sample_bound: f64,
    /// The certified ceiling the estimate is checked against.
    pub bound: f64,
    pub passed: bool,
    /// bound - estimate, in units of the estimate's standard error.
    pub margin_ses: f64,
    pub escalated: bool,
    pub report: TranscriptFisherReport,
}

fn per_client_privacy_terms(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    grid: &MechanismGrid,
) -> (Vec<f64>, Vec<f64>) {
    let fisher = model.fisher(theta);
    let budgets = grid.declared_budgets(clients.len());
    let privacy = clients
        .iter()
        .zip(&budgets)
        .map(|(c, &rho)| {
            let n = c.n as f64;
            ((2.0 * rho).exp() - 1.0) * n * n * fisher.op_norm
        })
        .collect();
    let sample = clients.iter().map(|c| c.n as f64 * fisher.trace).collect();
    (privacy, sample)
}

fn run_contraction_check(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
    bound: f64,
    privacy_bound: f64,
    sample_bound: f64,
) -> Result<ContractionCheck> {
    let mut escalated = false;
    let mut report =
        transcript_fisher(model, theta, clients, schedule, grid, policy, trials, seed)?;
    if report.total.mean > bound && report.total.mean - 3.0 * report.total.se <= bound {
        // Marginal: tighten the standard error before judging.
        escalated = true;
        let seed2 = derive_seed(seed, Scope::Escalation { attempt: 1 });
        report =
            transcript_fisher(model, theta, clients, schedule, grid, policy, trials * 10, seed2)?;
    }
    let passed = report.total.mean - 3.0 * report.total.se <= bound;
    let margin_ses = if report.total.se > 0.0 {
        (bound - report.total.mean) / report.total.se
    } else if bound >= report.total.mean {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    Ok(ContractionCheck {
        estimate: report.total,
        privacy_bound,
        sample_bound,
        bound,
        passed,
        margin_ses,
        escalated,
        report,
    })
}

/// Checks the single-client privacy ceiling (e^{2 rho} - 1) n^2 ||I_x||_op
/// against the Monte Carlo transcript information of a one-client protocol.
pub fn check_single_client_contraction(
    model: &dyn ModelFamily,
    theta: &[f64],
    client: ClientSpec,
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
) -> Result<ContractionCheck> {
    if schedule.clients() != 1 {
        return Err(Error::InvalidInput(format!(
            "single-client check got a schedule for {} clients",
            schedule.clients()
        )));
    }
    let clients = [client];
    let (privacy, sample) = per_client_privacy_terms(model, theta, &clients, grid);
    run_contraction_check(
        model, theta, &clients, schedule, grid, policy, trials, seed,
        privacy[0], privacy[0], sample[0],
    )
}

/// Checks the transcript ceiling sum_l min(privacy_l, sample_l) for a
/// multi-client protocol.
pub fn check_transcript_contraction(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
) -> Result<ContractionCheck> {
    let (privacy, sample) = per_client_privacy_terms(model, theta, clients, grid);
    let bound: f64 = privacy.iter().zip(&sample).map(|(&p, &s)| p.min(s)).sum();
    let privacy_bound = privacy.iter().sum();
    let sample_bound = sample.iter().sum();
    run_contraction_check(
        model, theta, clients, schedule, grid, policy, trials, seed,
        bound, privacy_bound, sample_bound,
    )
}

/// Joint consistency of the per-trial decomposition: the recombination
/// identity is checked to float precision, the cross-term mean to noise.
#[derive(Debug, Clone)]
pub struct DecompositionCheck {
    pub report: TranscriptFisherReport,
    pub identity_holds: bool,
    pub cross_terms_vanish: bool,
    pub passed: bool,
}

pub fn check_information_decomposition(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
) -> Result<DecompositionCheck> {
    let report = transcript_fisher(model, theta, clients, schedule, grid, policy, trials, seed)?;
    let scale = 1.0 + report.total.mean.abs();
    let identity_holds = report.max_identity_gap <= 1e-9 * scale;
    let cross = &report.cross_total;
    let cross_terms_vanish = cross.mean.abs() <= 3.0 * cross.se + 1e-12;
    let passed = identity_holds && cross_terms_vanish;
    Ok(DecompositionCheck { report, identity_holds, cross_terms_vanish, passed })
}

/// Fisher information of the transcript marginal via a central finite
/// difference of theta -> sum_l log Z_l(g; theta); shares trial seeds with
/// [`transcript_fisher`], so the two estimates agree trial by trial up to
/// finite-difference error.
#[derive(Debug, Clone)]
pub struct MarginalGradientReport {
    pub fisher: MeanSe,
    pub score_mean: MeanSe,
    pub step: f64,
    pub trials: usize,
}

pub fn fisher_via_marginal_gradient(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    trials: usize,
    seed: u64,
    step: f64,
) -> Result<MarginalGradientReport> {
    if model.param_dim() != 1 {
        return Err(Error::Unsupported(
            "marginal-gradient cross-check handles scalar parameters only".into(),
        ));
    }
    if !(1e-8..=0.1).contains(&step) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {step} outside [1e-8, 0.1]; smaller steps lose to cancellation"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let support = model.discrete_support().ok_or_else(|| {
        Error::EnumerationUnsupported(
            "marginal-gradient cross-check needs a model with finite observation support".into(),
        )
    })?;
    let theta_hi = [theta[0] + step];
    let theta_lo = [theta[0] - step];
    model.validate_theta(&theta_hi)?;
    model.validate_theta(&theta_lo)?;
    for c in clients {
        enumeration_size(support.len(), c.n)?;
    }

    // log Z_l(g; theta) = log sum over datasets of p_theta(dataset) * q_l(g | dataset).
    let log_marginal_factor = |replay: &ReplayedTranscript<'_>,
                               client: usize,
                               n: usize,
                               th: &[f64]|
     -> Result<f64> {
        let log_point: Vec<f64> = support.iter().map(|x| model.log_density(x, th)).collect();
        let mut terms = Vec::new();
        for idx in (0..n).map(|_| 0..support.len()).multi_cartesian_product() {
            let dataset: Vec<Vec<f64>> = idx.iter().map(|&j| support[j].clone()).collect();
            let log_prior: f64 = idx.iter().map(|&j| log_point[j]).sum();
            terms.push(log_prior + replay.client_log_factor(grid, client, &dataset)?);
        }
        Ok(log_sum_exp(&terms))
    };

    let scores: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_seed = derive_seed(seed, Scope::Trial { trial: i });
            let transcript =
                run_protocol(model, theta, clients, schedule, grid, policy, trial_seed)?;
            let replay = ReplayedTranscript::new(&transcript, policy);
            let mut score = 0.0;
            for (l, c) in clients.iter().enumerate() {
                let hi = log_marginal_factor(&replay, l, c.n, &theta_hi)?;
                let lo = log_marginal_factor(&replay, l, c.n, &theta_lo)?;
                score += (hi - lo) / (2.0 * step);
            }
            Ok(score)
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let squares: Vec<f64> = scores.iter().map(|s| s * s).collect();
    Ok(MarginalGradientReport {
        fisher: mean_se(&squares),
        score_mean: mean_se(&scores),
        step,
        trials,
    })
}

/// Verifies that the joint posterior over all clients' datasets factors into
/// the product of per-client posteriors, by brute-force enumeration of the
/// joint data space on one transcript.
#[derive(Debug, Clone)]
pub struct ProductFormCheck {
    pub joint_configs: usize,
    pub max_gap: f64,
    pub passed: bool,
}

pub fn check_posterior_product_form(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    seed: u64,
) -> Result<ProductFormCheck> {
    let support = model.discrete_support().ok_or_else(|| {
        Error::EnumerationUnsupported(
            "product-form check needs a model with finite observation support".into(),
        )
    })?;
    let mut joint_size: u128 = 1;
    for c in clients {
        joint_size = joint_size
            .checked_mul(enumeration_size(support.len(), c.n)?)
            .ok_or(Error::EnumerationCapExceeded { needed: u128::MAX, cap: ENUMERATION_CAP })?;
        if joint_size > ENUMERATION_CAP {
            return Err(Error::EnumerationCapExceeded {
                needed: joint_size,
                cap: ENUMERATION_CAP,
            });
        }
    }

    let transcript = run_protocol(model, theta, clients, schedule, grid, policy, seed)?;
    let replay = ReplayedTranscript::new(&transcript, policy);

    // Per-client posteriors.
    let posteriors: Vec<ClientPosterior> = (0..clients.len())
        .map(|l| posterior_with_replay(model, theta, &replay, clients, grid, l))
        .collect::<Result<Vec<_>>>()?;

    // Joint posterior over the product space, via the full transcript density.
    let log_point: Vec<f64> = support.iter().map(|x| model.log_density(x, theta)).collect();
    let per_client_configs: Vec<Vec<Vec<usize>>> = clients
        .iter()
        .map(|c| {
            (0..c.n)
                .map(|_| 0..support.len())
                .multi_cartesian_product()
                .collect::<Vec<_>>()
        })
        .collect();
    let mut joint_log: Vec<f64> = Vec::with_capacity(joint_size as usize);
    let mut joint_index: Vec<Vec<usize>> = Vec::with_capacity(joint_size as usize);
    for combo in per_client_configs
        .iter()
        .map(|configs| 0..configs.len())
        .multi_cartesian_product()
    {
        let mut lw = 0.0;
        let mut data: Vec<Vec<Vec<f64>>> = Vec::with_capacity(clients.len());
        for (l, &ci) in combo.iter().enumerate() {
            let idx = &per_client_configs[l][ci];
            lw += idx.iter().map(|&j| log_point[j]).sum::<f64>();
            data.push(idx.iter().map(|&j| support[j].clone()).collect());
        }
        let dens = crate::protocol::transcript_density(&transcript, &data, grid, policy)?;
        joint_log.push(lw + dens.log_joint());
        joint_index.push(combo);
    }
    let log_z = log_sum_exp(&joint_log);
    if !log_z.is_finite() {
        return Err(Error::EstimationFailed("joint posterior normalizer is not finite".into()));
    }

    let mut max_gap: f64 = 0.0;
    for (lw, combo) in joint_log.iter().zip(&joint_index) {
        let joint_w = (lw - log_z).exp();
        let product_w: f64 = combo
            .iter()
            .enumerate()
            .map(|(l, &ci)| posteriors[l].log_weights[ci].exp())
            .product();
        max_gap = max_gap.max((joint_w - product_w).abs());
    }
    Ok(ProductFormCheck {
        joint_configs: joint_log.len(),
        max_gap,
        passed: max_gap <= 1e-10,
    })
}
