//! Grid verification of the information-contraction claims.
//!
//! Runs the Monte Carlo checks from [`crate::fisher`] across a parameter
//! grid of Bernoulli instances and three protocol shapes, and emits one
//! structured record per (claim, cell) suitable for CSV/JSON reporting.

use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::fisher::{
    check_information_decomposition, check_posterior_product_form, check_single_client_contraction,
    check_transcript_contraction, fisher_via_marginal_gradient, transcript_fisher,
};
use crate::mechanisms::{adaptive_two_round_mean_protocol, GaussianSumMechanism};
use crate::models::bernoulli_family;
use crate::privacy::ZcdpBudget;
use crate::protocol::{ClientSpec, MechanismGrid, NullPolicy, Schedule, ServerPolicy};
use crate::rng::derive_seed;

/// Grid axes and Monte Carlo sizes for the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationGridConfig {
    pub thetas: Vec<f64>,
    pub ns: Vec<usize>,
    pub rhos: Vec<f64>,
    pub ms: Vec<usize>,
    /// Trials per contraction / decomposition cell.
    pub trials: usize,
    /// Trials per oracle-agreement cell (seeds are shared between the two
    /// estimators, so the difference needs far fewer trials).
    pub oracle_trials: usize,
    pub seed: u64,
}

impl VerificationGridConfig {
    /// The standard grid: exercises both branches of the clientwise min.
    pub fn standard(seed: u64) -> Self {
        VerificationGridConfig {
            thetas: vec![0.3, 0.5, 0.7],
            ns: vec![2, 4, 8],
            rhos: vec![0.05, 0.5, 2.0],
            ms: vec![1, 2, 3],
            trials: 10_000,
            oracle_trials: 1_000,
            seed,
        }
    }

    /// A thinned grid for quick smoke runs.
    pub fn smoke(seed: u64) -> Self {
        VerificationGridConfig {
            thetas: vec![0.5],
            ns: vec![2, 4],
            rhos: vec![0.5],
            ms: vec![1, 2],
            trials: 400,
            oracle_trials: 200,
            seed,
        }
    }
}

/// Which claim a verification record checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimId {
    SingleClientContraction,
    TranscriptContraction,
    PosteriorProductForm,
    CrossTermsVanish,
    DecompositionIdentity,
    OracleAgreement,
}

impl std::fmt::Display for ClaimId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClaimId::SingleClientContraction => "single_client_contraction",
            ClaimId::TranscriptContraction => "transcript_contraction",
            ClaimId::PosteriorProductForm => "posterior_product_form",
            ClaimId::CrossTermsVanish => "cross_terms_vanish",
            ClaimId::DecompositionIdentity => "decomposition_identity",
            ClaimId::OracleAgreement => "oracle_agreement",
        })
    }
}

/// One verified cell: instance parameters, the estimate, and its ceiling.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationRecord {
    pub claim: ClaimId,
    pub protocol: String,
    pub theta: f64,
    pub n: usize,
    pub rho: f64,
    pub m: usize,
    pub trials: usize,
    pub estimate: f64,
    pub se: f64,
    /// Threshold the estimate is held to (bound + tolerance already folded in).
    pub bound: f64,
    /// bound - estimate; negative means the cell failed.
    pub slack: f64,
    pub passed: bool,
}

/// The protocol shapes exercised by the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridProtocol {
    /// Every client releases one noisy clipped sum, one client per round.
    GaussianSumOnePass,
    /// Two rounds, every client active, budget split evenly.
    RoundwiseSplit,
    /// Clipped mean, then re-clip around the broadcast mean.
    AdaptiveTwoRound,
}

impl GridProtocol {
    pub fn name(self) -> &'static str {
        match self {
            GridProtocol::GaussianSumOnePass => "gaussian_sum_one_pass",
            GridProtocol::RoundwiseSplit => "gaussian_sum_roundwise_t2",
            GridProtocol::AdaptiveTwoRound => "adaptive_two_round_mean",
        }
    }

    /// Builds the schedule/mechanisms/policy for `clients`, charging `rho`
    /// per client in total.
    pub fn build(
        self,
        clients: &[ClientSpec],
        rho: f64,
    ) -> Result<(Schedule, MechanismGrid, Arc<dyn ServerPolicy>)> {
        let m = clients.len();
        match self {
            GridProtocol::GaussianSumOnePass => {
                let schedule = Schedule::OnePass { clients: m };
                let mech = Arc::new(GaussianSumMechanism::new(0.0, 1.0, ZcdpBudget::new(rho)?)?);
                let grid = MechanismGrid::build(&schedule, |_, _| mech.clone() as _);
                Ok((schedule, grid, Arc::new(NullPolicy)))
            }
            GridProtocol::RoundwiseSplit => {
                let schedule = Schedule::Roundwise { clients: m, rounds: 2 };
                let mech =
                    Arc::new(GaussianSumMechanism::new(0.0, 1.0, ZcdpBudget::new(rho / 2.0)?)?);
                let grid = MechanismGrid::build(&schedule, |_, _| mech.clone() as _);
                Ok((schedule, grid, Arc::new(NullPolicy)))
            }
            GridProtocol::AdaptiveTwoRound => {
                let bundle = adaptive_two_round_mean_protocol(clients, 1, (0.5, 0.5), 1.0, 0.5)?;
                Ok((bundle.schedule, bundle.grid, bundle.policy))
            }
        }
    }
}

fn grid_clients(m: usize, n: usize, rho: f64) -> Result<Vec<ClientSpec>> {
    (0..m)
        .map(|id| ClientSpec::new(id, n, ZcdpBudget::new(rho)?))
        .collect()
}

fn cell_seed(master: u64, counter: &mut u64) -> u64 {
    let s = derive_seed(master, crate::rng::Scope::Custom { tag: *counter });
    *counter += 1;
    s
}

/// Claim 1: single-client privacy ceiling over theta x n x rho.
pub fn run_single_client_grid(cfg: &VerificationGridConfig) -> Result<Vec<VerificationRecord>> {
    let model = bernoulli_family();
    let mut records = Vec::new();
    let mut counter = 0u64;
    for &theta in &cfg.thetas {
        for &n in &cfg.ns {
            for &rho in &cfg.rhos {
                let clients = grid_clients(1, n, rho)?;
                let (schedule, grid, policy) =
                    GridProtocol::GaussianSumOnePass.build(&clients, rho)?;
                let seed = cell_seed(cfg.seed, &mut counter);
                let check = check_single_client_contraction(
                    &model, &[theta], clients[0], &schedule, &grid, policy.as_ref(),
                    cfg.trials, seed,
                )?;
                let threshold = check.bound + 3.0 * check.estimate.se;
                records.push(VerificationRecord {
                    claim: ClaimId::SingleClientContraction,
                    protocol: GridProtocol::GaussianSumOnePass.name().into(),
                    theta,
                    n,
                    rho,
                    m: 1,
                    trials: check.report.trials,
                    estimate: check.estimate.mean,
                    se: check.estimate.se,
                    bound: threshold,
                    slack: threshold - check.estimate.mean,
                    passed: check.passed,
                });
            }
        }
    }
    Ok(records)
}

/// Claim 2: clientwise min-sum ceiling over the multi-client grid and all
/// three protocol shapes.
pub fn run_transcript_grid(cfg: &VerificationGridConfig) -> Result<Vec<VerificationRecord>> {
    let model = bernoulli_family();
    let mut records = Vec::new();
    let mut counter = 1_000_000u64;
    let protocols = [
        GridProtocol::GaussianSumOnePass,
        GridProtocol::RoundwiseSplit,
        GridProtocol::AdaptiveTwoRound,
    ];
    for &m in cfg.ms.iter().filter(|&&m| m >= 2) {
        for &theta in &cfg.thetas {
            for &n in &cfg.ns {
                for &rho in &cfg.rhos {
                    for proto in protocols {
                        let clients = grid_clients(m, n, rho)?;
                        let (schedule, grid, policy) = proto.build(&clients, rho)?;
                        let seed = cell_seed(cfg.seed, &mut counter);
                        let check = check_transcript_contraction(
                            &model, &[theta], &clients, &schedule, &grid, policy.as_ref(),
                            cfg.trials, seed,
                        )?;
                        let threshold = check.bound + 3.0 * check.estimate.se;
                        records.push(VerificationRecord {
                            claim: ClaimId::TranscriptContraction,
                            protocol: proto.name().into(),
                            theta,
                            n,
                            rho,
                            m,
                            trials: check.report.trials,
                            estimate: check.estimate.mean,
                            se: check.estimate.se,
                            bound: threshold,
                            slack: threshold - check.estimate.mean,
                            passed: check.passed,
                        });
                    }
                }
            }
        }
    }
    Ok(records)
}

/// Claim 3: exact posterior product form on every m=2, n=2 instance, plus
/// cross-term and recombination checks on the multi-client grid.
pub fn run_identity_checks(cfg: &VerificationGridConfig) -> Result<Vec<VerificationRecord>> {
    let model = bernoulli_family();
    let mut records = Vec::new();
    let mut counter = 2_000_000u64;
    let protocols = [
        GridProtocol::GaussianSumOnePass,
        GridProtocol::RoundwiseSplit,
        GridProtocol::AdaptiveTwoRound,
    ];

    // Product form: one realized transcript per instance, checked exactly.
    for &theta in &cfg.thetas {
        for &rho in &cfg.rhos {
            for proto in protocols {
                let clients = grid_clients(2, 2, rho)?;
                let (schedule, grid, policy) = proto.build(&clients, rho)?;
                let seed = cell_seed(cfg.seed, &mut counter);
                let check = check_posterior_product_form(
                    &model, &[theta], &clients, &schedule, &grid, policy.as_ref(), seed,
                )?;
                records.push(VerificationRecord {
                    claim: ClaimId::PosteriorProductForm,
                    protocol: proto.name().into(),
                    theta,
                    n: 2,
                    rho,
                    m: 2,
                    trials: 1,
                    estimate: check.max_gap,
                    se: 0.0,
                    bound: 1e-10,
                    slack: 1e-10 - check.max_gap,
                    passed: check.passed,
                });
            }
        }
    }

    // Cross terms and the recombination identity, on m >= 2 cells.
    for &m in cfg.ms.iter().filter(|&&m| m >= 2) {
        for &theta in &cfg.thetas {
            for &rho in &cfg.rhos {
                for proto in protocols {
                    let clients = grid_clients(m, 2, rho)?;
                    let (schedule, grid, policy) = proto.build(&clients, rho)?;
                    let seed = cell_seed(cfg.seed, &mut counter);
                    let check = check_information_decomposition(
                        &model, &[theta], &clients, &schedule, &grid, policy.as_ref(),
                        cfg.trials, seed,
                    )?;
                    let cross = &check.report.cross_total;
                    let cross_threshold = 3.0 * cross.se + 1e-12;
                    records.push(VerificationRecord {
                        claim: ClaimId::CrossTermsVanish,
                        protocol: proto.name().into(),
                        theta,
                        n: 2,
                        rho,
                        m,
                        trials: check.report.trials,
                        estimate: cross.mean.abs(),
                        se: cross.se,
                        bound: cross_threshold,
                        slack: cross_threshold - cross.mean.abs(),
                        passed: check.cross_terms_vanish,
                    });
                    let id_threshold = 1e-9 * (1.0 + check.report.total.mean.abs());
                    records.push(VerificationRecord {
                        claim: ClaimId::DecompositionIdentity,
                        protocol: proto.name().into(),
                        theta,
                        n: 2,
                        rho,
                        m,
                        trials: check.report.trials,
                        estimate: check.report.max_identity_gap,
                        se: 0.0,
                        bound: id_threshold,
                        slack: id_threshold - check.report.max_identity_gap,
                        passed: check.identity_holds,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Claim 4: the posterior-score estimator and the marginal-gradient estimator
/// agree on every scalar-theta cell. Trial seeds are shared, so the gap is
/// finite-difference error, not Monte Carlo noise.
pub fn run_oracle_agreement(cfg: &VerificationGridConfig) -> Result<Vec<VerificationRecord>> {
    let model = bernoulli_family();
    let mut records = Vec::new();
    let mut counter = 3_000_000u64;
    let protocols = [
        GridProtocol::GaussianSumOnePass,
        GridProtocol::RoundwiseSplit,
        GridProtocol::AdaptiveTwoRound,
    ];
    for &m in &cfg.ms {
        for &theta in &cfg.thetas {
            for &n in &cfg.ns {
                for &rho in &cfg.rhos {
                    for proto in protocols {
                        let clients = grid_clients(m, n, rho)?;
                        let (schedule, grid, policy) = proto.build(&clients, rho)?;
                        let seed = cell_seed(cfg.seed, &mut counter);
                        let mc = transcript_fisher(
                            &model, &[theta], &clients, &schedule, &grid, policy.as_ref(),
                            cfg.oracle_trials, seed,
                        )?;
                        let fd = fisher_via_marginal_gradient(
                            &model, &[theta], &clients, &schedule, &grid, policy.as_ref(),
                            cfg.oracle_trials, seed, 1e-4,
                        )?;
                        let diff = (mc.total.mean - fd.fisher.mean).abs();
                        let combined_se = (mc.total.se.powi(2) + fd.fisher.se.powi(2)).sqrt();
                        let threshold = 3.0 * combined_se + 1e-3;
                        records.push(VerificationRecord {
                            claim: ClaimId::OracleAgreement,
                            protocol: proto.name().into(),
                            theta,
                            n,
                            rho,
                            m,
                            trials: cfg.oracle_trials,
                            estimate: diff,
                            se: combined_se,
                            bound: threshold,
                            slack: threshold - diff,
                            passed: diff <= threshold,
                        });
                    }
                }
            }
        }
    }
    Ok(records)
}

/// All verification records across the four claim families.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationOutcome {
    pub records: Vec<VerificationRecord>,
}

impl VerificationOutcome {
    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&VerificationRecord> {
        self.records.iter().filter(|r| !r.passed).collect()
    }

    pub fn count_for(&self, claim: ClaimId) -> usize {
        self.records.iter().filter(|r| r.claim == claim).count()
    }
}

/// Runs the full verification suite on one grid configuration.
pub fn run_full_verification(cfg: &VerificationGridConfig) -> Result<VerificationOutcome> {
    let mut records = run_single_client_grid(cfg)?;
    records.extend(run_transcript_grid(cfg)?);
    records.extend(run_identity_checks(cfg)?);
    records.extend(run_oracle_agreement(cfg)?);
    Ok(VerificationOutcome { records })
}
