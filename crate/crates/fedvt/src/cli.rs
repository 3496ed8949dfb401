//! Batch command front-end.
//!
//! Five subcommands, one scenario file each: `bound` computes risk floors,
//! `verify` runs the exact-enumeration claim grid, `risk` measures
//! estimators against the certified floor, `simulate` executes one protocol
//! and writes its transcript log, `audit` checks mechanism budget
//! declarations. Every run writes a manifest that can be fed back through
//! `--config` to reproduce it.

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::bounds::{
    linreg_bound, mean_estimation_bound, nonparam_bound, BoundReport, BoundVariant,
    NONPARAM_P_MAX,
};
use crate::error::{Error, Result};
use crate::estimators::{empirical_bayes_risk, fed_linreg, EstimatorKind, EstimatorSpec, RiskModel};
use crate::mechanisms::{ClippedMeanMechanism, GaussianSumMechanism};
use crate::models::{bernoulli_family, gaussian_mean_family, linear_regression_family};
use crate::priors::ProductPrior;
use crate::privacy::{audit_mechanism, default_alpha_grid, Auditable, ZcdpBudget};
use crate::protocol::{
    account, run_protocol, write_transcript_log, LocalMechanism, MechanismGrid, NullPolicy,
    Schedule,
};
use crate::report::{
    audit_csv, audit_json, bound_csv, bound_json, emit, risk_csv, risk_json, verification_csv,
    verification_json, write_atomic, LabeledAudit, LabeledBound, LabeledRisk, OutputFormat,
};
use crate::rng::{derive_seed, stream, Scope};
use crate::scenario::{
    load_config, ModelSpec, ResolvedClients, RunManifest, Scenario, ScheduleSpec,
};
use crate::verification::{run_full_verification, VerificationGridConfig};

pub const EXIT_OK: i32 = 0;
/// A certified claim or floor failed after escalation.
pub const EXIT_CERTIFIED_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_ENUMERATION_CAP: i32 = 3;
pub const EXIT_BUDGET_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fedvt",
    version,
    about = "Certified risk floors and transcript information for private federated protocols"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute Bayes-risk lower bounds for a scenario (grid-expandable).
    Bound(CommonArgs),
    /// Run the exact-enumeration verification grid on a two-point scenario.
    Verify(CommonArgs),
    /// Measure estimator risk against the certified floor.
    Risk(CommonArgs),
    /// Execute one protocol run and write its transcript log.
    Simulate(CommonArgs),
    /// Audit each deployed mechanism's budget declaration.
    Audit(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario TOML, or a previous run's manifest JSON to reproduce it.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial-count override.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Bound variant override: exact | rho-linear.
    #[arg(long)]
    pub variant: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Table formats to write: csv | json | both.
    #[arg(long, default_value = "both")]
    pub format: String,
}

/// Entry point for the binary: parse, run, map to the exit-code contract.
pub fn main_entry() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    let (name, args) = match &cli.command {
        Command::Bound(a) => ("bound", a),
        Command::Verify(a) => ("verify", a),
        Command::Risk(a) => ("risk", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Audit(a) => ("audit", a),
    };
    match execute(name, args) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("{name}: certified check failed");
            EXIT_CERTIFIED_FAILURE
        }
        Err(e) => {
            eprintln!("{name}: error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::EnumerationCapExceeded { .. } => EXIT_ENUMERATION_CAP,
        Error::BudgetExceeded { .. } => EXIT_BUDGET_MISMATCH,
        _ => EXIT_INVALID_CONFIG,
    }
}

fn parse_variant(s: &str) -> Result<BoundVariant> {
    match s {
        "exact" => Ok(BoundVariant::Exact),
        "rho-linear" | "rho_linear" => Ok(BoundVariant::RhoLinear),
        other => Err(Error::Config(format!(
            "unknown variant {other:?}; expected exact or rho-linear"
        ))),
    }
}

struct CmdOutcome {
    passed: bool,
    outputs: Vec<PathBuf>,
}

/// Loads the config, applies flag overrides, dispatches, and writes the run
/// manifest next to the outputs.
fn execute(command: &str, args: &CommonArgs) -> Result<bool> {
    let loaded = load_config(&args.config)?;
    let mut scenario = loaded.scenario;
    let seed = args.seed.or(loaded.manifest_seed).unwrap_or(scenario.seed);
    scenario.seed = seed;
    if let Some(t) = args.trials {
        scenario.trials = t;
    }
    if let Some(v) = &args.variant {
        scenario.bound_variant = parse_variant(v)?;
    }
    scenario.validate()?;
    let format: OutputFormat = args.format.parse()?;

    let mut manifest = RunManifest::new(command, scenario.clone(), seed)?;
    let outcome = match command {
        "bound" => cmd_bound(&scenario, &args.out, format)?,
        "verify" => cmd_verify(&scenario, &args.out, format)?,
        "risk" => cmd_risk(&scenario, &args.out, format)?,
        "simulate" => cmd_simulate(&scenario, &args.out)?,
        "audit" => cmd_audit(&scenario, &args.out, format)?,
        other => return Err(Error::Config(format!("unknown command {other}"))),
    };
    manifest.finish(
        outcome
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    );
    let manifest_path = args.out.join("manifest.json");
    write_atomic(&manifest_path, &manifest.to_json()?)?;
    println!(
        "{command}: wrote {} file(s) + manifest to {}",
        outcome.outputs.len(),
        args.out.display()
    );
    Ok(outcome.passed)
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn point_bound(point: &Scenario, resolved: &ResolvedClients) -> Result<BoundReport> {
    match &point.model {
        ModelSpec::Mean { dim, sigma } => mean_estimation_bound(
            *dim,
            *sigma,
            &resolved.specs,
            point.prior.radius,
            point.bound_variant,
        ),
        ModelSpec::Linreg { design, noise_sd } => linreg_bound(
            &to_dmatrix(design),
            *noise_sd,
            &resolved.specs,
            point.prior.radius,
            point.bound_variant,
        ),
        ModelSpec::Nonparametric { alpha, dim, radius, sigma } => nonparam_bound(
            *alpha,
            *dim,
            *radius,
            *sigma,
            &resolved.specs,
            NONPARAM_P_MAX,
        ),
        ModelSpec::Bernoulli => Err(Error::Config(
            "model.kind: the two-point family has no risk bound; use verify".into(),
        )),
    }
}

fn cmd_bound(scenario: &Scenario, out: &Path, format: OutputFormat) -> Result<CmdOutcome> {
    let mut rows = Vec::new();
    for (label, point) in scenario.expand()? {
        let resolved = point.resolve_clients()?;
        let report = point_bound(&point, &resolved)?;
        println!(
            "bound {label}: variant={} value={}{}",
            report.variant,
            report.value,
            report
                .best_p
                .map(|p| format!(" best_p={p}"))
                .unwrap_or_default()
        );
        for c in &resolved.conversions {
            println!(
                "  client {}: converted epsilon {} -> rho {}",
                c.client, c.epsilon, c.rho
            );
        }
        rows.push(LabeledBound { scenario: label, conversions: resolved.conversions, report });
    }
    let outputs = emit(out, "bounds", format, Some(bound_csv(&rows)?), Some(bound_json(&rows)?))?;
    Ok(CmdOutcome { passed: true, outputs })
}

fn cmd_verify(scenario: &Scenario, out: &Path, format: OutputFormat) -> Result<CmdOutcome> {
    if !matches!(scenario.model, ModelSpec::Bernoulli) {
        return Err(Error::Config(
            "model.kind: verify needs the enumerable two-point family".into(),
        ));
    }
    let mut cfg = VerificationGridConfig::standard(scenario.seed);
    cfg.trials = scenario.trials;
    cfg.oracle_trials = scenario.trials.clamp(200, 1000);
    let outcome = run_full_verification(&cfg)?;
    let failures = outcome.failures();
    for f in &failures {
        println!(
            "FAIL {} {} theta={} n={} rho={} m={}: estimate {} vs bound {}",
            f.claim, f.protocol, f.theta, f.n, f.rho, f.m, f.estimate, f.bound
        );
    }
    println!(
        "verify: {} records, {} failures",
        outcome.records.len(),
        failures.len()
    );
    let outputs = emit(
        out,
        "verification",
        format,
        Some(verification_csv(&outcome.records)?),
        Some(verification_json(&outcome.records)?),
    )?;
    Ok(CmdOutcome { passed: outcome.all_passed(), outputs })
}

fn default_estimators(model: &ModelSpec) -> Vec<EstimatorKind> {
    match model {
        ModelSpec::Linreg { .. } => vec![EstimatorKind::FedLinreg],
        _ => vec![
            EstimatorKind::NonprivateMean,
            EstimatorKind::FedGaussianMean,
            EstimatorKind::FedGaussianMeanAdaptive,
        ],
    }
}

fn cmd_risk(scenario: &Scenario, out: &Path, format: OutputFormat) -> Result<CmdOutcome> {
    if matches!(scenario.model, ModelSpec::Nonparametric { .. } | ModelSpec::Bernoulli) {
        return Err(Error::Config(
            "model.kind: risk needs a mean or linreg scenario".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut all_passed = true;
    for (idx, (label, point)) in scenario.expand()?.into_iter().enumerate() {
        let resolved = point.resolve_clients()?;
        let estimators = if point.estimators.is_empty() {
            default_estimators(&point.model)
        } else {
            point.estimators.clone()
        };
        let (risk_model, dim) = match &point.model {
            ModelSpec::Mean { dim, sigma } => {
                (RiskModel::Mean { dim: *dim, sigma: *sigma }, *dim)
            }
            ModelSpec::Linreg { design, noise_sd } => {
                let m = to_dmatrix(design);
                let d = m.nrows();
                (RiskModel::Linreg { design: m, noise_sd: *noise_sd }, d)
            }
            _ => unreachable!("filtered above"),
        };
        let bound = point_bound(&point, &resolved)?;
        let prior = ProductPrior::isotropic(dim, point.prior.radius)?;
        let point_seed = derive_seed(point.seed, Scope::Custom { tag: idx as u64 });
        for kind in estimators {
            let report = empirical_bayes_risk(
                &EstimatorSpec::new(kind),
                &risk_model,
                &prior,
                &resolved.specs,
                point.trials,
                point_seed,
                &bound,
            )?;
            println!(
                "risk {label} {kind}: risk={} se={} bound={} margin={} passed={}",
                report.risk, report.se, report.bound, report.margin, report.passed
            );
            if report.bound_certified && !report.passed {
                all_passed = false;
            }
            rows.push(LabeledRisk { scenario: label.clone(), report });
        }
    }
    let outputs = emit(out, "risk", format, Some(risk_csv(&rows)?), Some(risk_json(&rows)?))?;
    Ok(CmdOutcome { passed: all_passed, outputs })
}

fn build_schedule(spec: &ScheduleSpec, m: usize) -> Schedule {
    match spec {
        ScheduleSpec::OnePass => Schedule::OnePass { clients: m },
        ScheduleSpec::Roundwise { rounds } => Schedule::Roundwise { clients: m, rounds: *rounds },
        ScheduleSpec::Sequential { active } => {
            Schedule::Sequential { clients: m, active: active.clone() }
        }
    }
}

fn active_counts(schedule: &Schedule) -> Vec<usize> {
    let m = schedule.clients();
    let mut counts = vec![0usize; m];
    for t in 0..schedule.rounds() {
        for (l, c) in counts.iter_mut().enumerate() {
            if schedule.is_active(t, l) {
                *c += 1;
            }
        }
    }
    counts
}

fn cmd_simulate(scenario: &Scenario, out: &Path) -> Result<CmdOutcome> {
    let resolved = scenario.resolve_clients()?;
    let specs = &resolved.specs;
    let m = specs.len();
    let schedule = build_schedule(&scenario.schedule, m);
    let counts = active_counts(&schedule);
    let theta_or_draw = |dim: usize| -> Result<Vec<f64>> {
        match &scenario.theta {
            Some(t) if t.len() == dim => Ok(t.clone()),
            Some(t) => Err(Error::Config(format!(
                "theta: expected {dim} coordinates, got {}",
                t.len()
            ))),
            None => {
                let prior = ProductPrior::isotropic(dim, scenario.prior.radius)?;
                Ok(prior.sample(&mut stream(scenario.seed, Scope::PriorDraw { trial: 0 })))
            }
        }
    };
    // Per-slot budget: an even split of the client budget over its active
    // rounds, so the composed charge equals the declaration.
    let slot_rho = |l: usize| ZcdpBudget::new(specs[l].rho_budget.rho() / counts[l] as f64);

    let transcript = match &scenario.model {
        ModelSpec::Bernoulli => {
            let theta = scenario.theta.clone().ok_or_else(|| {
                Error::Config("theta: required for a simulated two-point run".into())
            })?;
            let mut rounds = Vec::new();
            for t in 0..schedule.rounds() {
                let mut row: Vec<Option<Arc<dyn LocalMechanism>>> = Vec::with_capacity(m);
                for l in 0..m {
                    row.push(if schedule.is_active(t, l) {
                        Some(Arc::new(GaussianSumMechanism::new(0.0, 1.0, slot_rho(l)?)?))
                    } else {
                        None
                    });
                }
                rounds.push(row);
            }
            let grid = MechanismGrid::new(rounds);
            let family = bernoulli_family();
            run_protocol(&family, &theta, specs, &schedule, &grid, &NullPolicy, scenario.seed)?
        }
        ModelSpec::Mean { dim, sigma } => {
            let theta = theta_or_draw(*dim)?;
            let tau = scenario.prior.radius + 6.0 * sigma;
            let mut rounds = Vec::new();
            for t in 0..schedule.rounds() {
                let mut row: Vec<Option<Arc<dyn LocalMechanism>>> = Vec::with_capacity(m);
                for (l, spec) in specs.iter().enumerate() {
                    row.push(if schedule.is_active(t, l) {
                        Some(Arc::new(ClippedMeanMechanism::new(
                            vec![0.0; *dim],
                            tau,
                            slot_rho(l)?,
                            spec.n,
                        )?))
                    } else {
                        None
                    });
                }
                rounds.push(row);
            }
            let grid = MechanismGrid::new(rounds);
            let family = gaussian_mean_family(*dim, *sigma)?;
            run_protocol(&family, &theta, specs, &schedule, &grid, &NullPolicy, scenario.seed)?
        }
        ModelSpec::Linreg { design, noise_sd } => {
            let d = design.len();
            let theta = theta_or_draw(d)?;
            let family = linear_regression_family(to_dmatrix(design), *noise_sd)?;
            let data =
                crate::protocol::sample_local_data(&family, &theta, specs, scenario.seed);
            let spec = EstimatorSpec::new(EstimatorKind::FedLinreg);
            let clips = crate::estimators::resolve_clips(
                &spec,
                &RiskModel::Linreg { design: to_dmatrix(design), noise_sd: *noise_sd },
                scenario.prior.radius,
            );
            let cap = 10.0 * scenario.prior.radius * (d as f64).sqrt();
            fed_linreg(&data, specs, d, clips.tau, clips.tau2, spec.split, cap, scenario.seed)?
                .transcript
        }
        ModelSpec::Nonparametric { .. } => {
            return Err(Error::Config(
                "model.kind: the smoothness-class calculator has no protocol to simulate".into(),
            ));
        }
    };

    let acct = account(&transcript)?;
    println!(
        "simulate: {m} client(s), {} round(s), total rho charged {}",
        transcript.num_rounds(),
        acct.total()
    );
    let log = write_transcript_log(&transcript);
    let path = out.join("transcript.log");
    write_atomic(&path, log.as_bytes())?;
    Ok(CmdOutcome { passed: true, outputs: vec![path] })
}

/// Scalar stand-in with the same sensitivity and noise scale as a deployed
/// vector release; its divergence curve is identical, so auditing it audits
/// the calibration.
fn scalar_release_audit(
    name: &str,
    tau: f64,
    rho: ZcdpBudget,
    n: usize,
) -> Result<LabeledAudit> {
    let mech = ClippedMeanMechanism::new(vec![0.0], tau, rho, n)?;
    let mut data_a: Vec<Vec<f64>> = vec![vec![0.0]; n];
    let mut data_b = data_a.clone();
    data_a[n - 1] = vec![-2.0 * tau];
    data_b[n - 1] = vec![2.0 * tau];
    let audit = audit_mechanism(&mech, &data_a, &data_b, rho, &default_alpha_grid())?;
    Ok(LabeledAudit { mechanism: name.to_string(), client_n: n, audit })
}

fn cmd_audit(scenario: &Scenario, out: &Path, format: OutputFormat) -> Result<CmdOutcome> {
    let resolved = scenario.resolve_clients()?;
    let mut rows: Vec<LabeledAudit> = Vec::new();
    let mut seen: Vec<(usize, f64)> = Vec::new();
    for spec in &resolved.specs {
        let shape = (spec.n, spec.rho_budget.rho());
        if seen.contains(&shape) {
            continue;
        }
        seen.push(shape);
        match &scenario.model {
            ModelSpec::Bernoulli => {
                let mech = GaussianSumMechanism::new(0.0, 1.0, spec.rho_budget)?;
                let mut data_a: Vec<Vec<f64>> = vec![vec![0.0]; spec.n];
                let data_b = data_a.clone();
                data_a[spec.n - 1] = vec![1.0];
                let audit = audit_mechanism(
                    &mech as &dyn Auditable,
                    &data_a,
                    &data_b,
                    spec.rho_budget,
                    &default_alpha_grid(),
                )?;
                rows.push(LabeledAudit {
                    mechanism: format!("gaussian_sum_rho{}", shape.1),
                    client_n: spec.n,
                    audit,
                });
            }
            ModelSpec::Mean { sigma, .. } => {
                let tau = scenario.prior.radius + 6.0 * sigma;
                rows.push(scalar_release_audit(
                    &format!("clipped_mean_rho{}", shape.1),
                    tau,
                    spec.rho_budget,
                    spec.n,
                )?);
            }
            ModelSpec::Linreg { design, noise_sd } => {
                let clips = crate::estimators::resolve_clips(
                    &EstimatorSpec::new(EstimatorKind::FedLinreg),
                    &RiskModel::Linreg { design: to_dmatrix(design), noise_sd: *noise_sd },
                    scenario.prior.radius,
                );
                let half = ZcdpBudget::new(0.5 * shape.1)?;
                rows.push(scalar_release_audit(
                    &format!("linreg_second_moment_rho{}", half.rho()),
                    clips.tau,
                    half,
                    spec.n,
                )?);
                rows.push(scalar_release_audit(
                    &format!("linreg_cross_moment_rho{}", half.rho()),
                    clips.tau2,
                    half,
                    spec.n,
                )?);
            }
            ModelSpec::Nonparametric { .. } => {
                return Err(Error::Config(
                    "model.kind: the smoothness-class calculator deploys no mechanism".into(),
                ));
            }
        }
    }
    let mut passed = true;
    for r in &rows {
        println!(
            "audit {} n={}: max_excess={} passed={}",
            r.mechanism, r.client_n, r.audit.max_excess, r.audit.passed
        );
        passed &= r.audit.passed;
    }
    let outputs = emit(out, "audit", format, Some(audit_csv(&rows)?), Some(audit_json(&rows)?))?;
    Ok(CmdOutcome { passed, outputs })
}
