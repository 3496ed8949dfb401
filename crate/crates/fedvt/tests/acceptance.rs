//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`). Tolerances are pinned here,
//! not read from configuration.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use fedvt::bounds::{
    linreg_bound, mean_estimation_bound, nonparam_bound, nonparam_rate_fit, BoundVariant,
    RateRegime, NONPARAM_P_MAX,
};
use fedvt::estimators::{empirical_bayes_risk, EstimatorKind, EstimatorSpec, RiskModel};
use fedvt::fisher::{check_posterior_product_form, transcript_fisher};
use fedvt::mechanisms::{GaussianSumMechanism, RandomizedResponseMechanism};
use fedvt::models::bernoulli_family;
use fedvt::priors::ProductPrior;
use fedvt::privacy::{
    audit_mechanism, compose_rounds, default_alpha_grid, pure_dp_to_zcdp,
    renyi_divergence_gaussian, ZcdpBudget,
};
use fedvt::protocol::{
    account, run_protocol, ClientSpec, LocalMechanism, MechanismGrid, NullPolicy, Schedule,
};
use fedvt::verification::{
    run_identity_checks, run_oracle_agreement, run_single_client_grid, run_transcript_grid,
    ClaimId, VerificationGridConfig, VerificationRecord,
};

const MASTER_SEED: u64 = 20250815;

fn report(criterion: usize, name: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion} {name}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
}

fn worst(records: &[VerificationRecord]) -> String {
    let failures = records.iter().filter(|r| !r.passed).count();
    let min_slack = records
        .iter()
        .map(|r| r.slack)
        .fold(f64::INFINITY, f64::min);
    format!(
        "{} records, {} failures, min slack {:.3e}",
        records.len(),
        failures,
        min_slack
    )
}

#[test]
fn criterion_1_single_client_contraction() {
    let t0 = Instant::now();
    let cfg = VerificationGridConfig::standard(MASTER_SEED);
    let records = run_single_client_grid(&cfg).unwrap();
    let elapsed = t0.elapsed();
    let passed = records.len() == 27
        && records.iter().all(|r| r.passed)
        && elapsed.as_secs() <= 600;
    report(
        1,
        "single-client information ceiling",
        passed,
        &format!("{}, {:.1?}", worst(&records), elapsed),
    );
    assert!(passed, "{}", worst(&records));
}

#[test]
fn criterion_2_transcript_contraction() {
    let cfg = VerificationGridConfig::standard(MASTER_SEED);
    let records = run_transcript_grid(&cfg).unwrap();
    let passed = records.len() == 162 && records.iter().all(|r| r.passed);
    report(
        2,
        "multi-client min-sum ceiling",
        passed,
        &worst(&records),
    );
    assert!(passed, "{}", worst(&records));
}

#[test]
fn criterion_3_posterior_identities() {
    let cfg = VerificationGridConfig::standard(MASTER_SEED);
    let records = run_identity_checks(&cfg).unwrap();
    let by = |c: ClaimId| records.iter().filter(|r| r.claim == c).count();
    let passed = by(ClaimId::PosteriorProductForm) == 27
        && by(ClaimId::CrossTermsVanish) == 54
        && by(ClaimId::DecompositionIdentity) == 54
        && records.iter().all(|r| r.passed);
    report(
        3,
        "factorization, cross-term, and recombination identities",
        passed,
        &worst(&records),
    );
    assert!(passed, "{}", worst(&records));
}

#[test]
fn criterion_4_derivative_cross_check() {
    let cfg = VerificationGridConfig::standard(MASTER_SEED);
    let records = run_oracle_agreement(&cfg).unwrap();
    let passed = records.len() == 243 && records.iter().all(|r| r.passed);
    report(
        4,
        "score projection vs marginal gradient",
        passed,
        &worst(&records),
    );
    assert!(passed, "{}", worst(&records));
}

#[test]
fn criterion_5_certified_risk_floor() {
    let t0 = Instant::now();
    let trials = 10_000;
    let prior_radius = 1.0;
    let sigma = 1.0;
    let mut cells = 0usize;
    let mut worst_margin_ses = f64::INFINITY;
    let mut worst_cell = String::new();
    let mut all_passed = true;
    let mut cell_seed = 0u64;

    for d in [1usize, 3] {
        for m in [1usize, 5] {
            for n in [50usize, 200] {
                for rho in [0.1, 1.0] {
                    let clients: Vec<ClientSpec> = (0..m)
                        .map(|id| {
                            ClientSpec::new(id, n, ZcdpBudget::new(rho).unwrap()).unwrap()
                        })
                        .collect();
                    let prior = ProductPrior::isotropic(d, prior_radius).unwrap();

                    let mean_bound =
                        mean_estimation_bound(d, sigma, &clients, prior_radius, BoundVariant::Exact)
                            .unwrap();
                    let mean_model = RiskModel::Mean { dim: d, sigma };
                    for kind in [
                        EstimatorKind::NonprivateMean,
                        EstimatorKind::FedGaussianMean,
                        EstimatorKind::FedGaussianMeanAdaptive,
                    ] {
                        cell_seed += 1;
                        let rep = empirical_bayes_risk(
                            &EstimatorSpec::new(kind),
                            &mean_model,
                            &prior,
                            &clients,
                            trials,
                            MASTER_SEED ^ cell_seed,
                            &mean_bound,
                        )
                        .unwrap();
                        cells += 1;
                        let ses = rep.margin / rep.se;
                        if ses < worst_margin_ses {
                            worst_margin_ses = ses;
                            worst_cell = format!("{kind} d={d} m={m} n={n} rho={rho}");
                        }
                        all_passed &= rep.passed;
                    }

                    let design = DMatrix::identity(d, d);
                    let lr_bound =
                        linreg_bound(&design, sigma, &clients, prior_radius, BoundVariant::Exact)
                            .unwrap();
                    let lr_model = RiskModel::Linreg { design, noise_sd: sigma };
                    cell_seed += 1;
                    let rep = empirical_bayes_risk(
                        &EstimatorSpec::new(EstimatorKind::FedLinreg),
                        &lr_model,
                        &prior,
                        &clients,
                        trials,
                        MASTER_SEED ^ cell_seed,
                        &lr_bound,
                    )
                    .unwrap();
                    cells += 1;
                    let ses = rep.margin / rep.se;
                    if ses < worst_margin_ses {
                        worst_margin_ses = ses;
                        worst_cell = format!("fed_linreg d={d} m={m} n={n} rho={rho}");
                    }
                    all_passed &= rep.passed;
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    let passed = all_passed && elapsed.as_secs() <= 1800;
    report(
        5,
        "estimator risk above the certified floor",
        passed,
        &format!(
            "{cells} cells x {trials} trials, worst margin {worst_margin_ses:+.2} SE at {worst_cell}, {elapsed:.1?}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_6_bound_point_values() {
    // Frozen against an independent high-precision re-derivation
    // (tools/rederive_bounds.py).
    let budget = |rho: f64| ZcdpBudget::new(rho).unwrap();
    let clients = |m: usize, n: usize, rho: f64| -> Vec<ClientSpec> {
        (0..m)
            .map(|id| ClientSpec::new(id, n, budget(rho)).unwrap())
            .collect()
    };
    let rel = |got: f64, want: f64| (got - want).abs() / want;

    let b1 = mean_estimation_bound(1, 1.0, &clients(1, 100, 0.5), 1.0, BoundVariant::Exact)
        .unwrap()
        .value;
    let want1 = 0.009101698376462753;

    let b2 = mean_estimation_bound(5, 1.0, &clients(10, 100, 0.1), 1.0, BoundVariant::Exact)
        .unwrap()
        .value;
    let want2 = 0.004951134263482746;

    let b3 = nonparam_bound(1.0, 1, 1.0, 1.0, &clients(1, 1000, 1.0), NONPARAM_P_MAX).unwrap();
    let want3 = 0.005291005291005291;

    let passed = rel(b1, want1) <= 1e-6
        && rel(b2, want2) <= 1e-6
        && b3.best_p == Some(8)
        && rel(b3.value, want3) <= 1e-6;
    report(
        6,
        "bound calculator point values",
        passed,
        &format!(
            "rel errors {:.1e}, {:.1e}, {:.1e}; best_p={:?}",
            rel(b1, want1),
            rel(b2, want2),
            rel(b3.value, want3),
            b3.best_p
        ),
    );
    assert!(passed, "{b1} vs {want1}; {b2} vs {want2}; {b3:?} vs {want3}");
}

#[test]
fn criterion_7_rate_exponents() {
    let mut passed = true;
    let mut detail = String::new();
    for (alpha, d) in [(1.0, 1usize), (2.0, 1), (2.0, 2)] {
        for regime in [RateRegime::SampleLimited, RateRegime::PrivacyLimited] {
            let fit = nonparam_rate_fit(alpha, d, regime, 8).unwrap();
            let err = (fit.slope - fit.expected).abs();
            passed &= err <= 0.02;
            detail.push_str(&format!("({alpha},{d},{regime:?}):{err:.3} "));
        }
    }
    report(7, "smoothness-class rate exponents", passed, detail.trim());
    assert!(passed, "{detail}");
}

#[test]
fn criterion_8_privacy_accounting() {
    let alphas = default_alpha_grid();
    let mut passed = true;
    let mut detail = String::new();

    // Calibrated Gaussian releases: closed-form divergence equals the
    // envelope at every grid order, and the numeric audit agrees.
    for rho in [0.05, 0.5, 2.0] {
        let budget = ZcdpBudget::new(rho).unwrap();
        let mech = GaussianSumMechanism::new(0.0, 1.0, budget).unwrap();
        let mut tight = 0.0f64;
        for a in &alphas {
            let d = renyi_divergence_gaussian(1.0, mech.noise_sd(), *a).unwrap();
            tight = tight.max((d - a.get() * rho).abs());
        }
        passed &= tight <= 1e-6;
        let data_a: Vec<Vec<f64>> = vec![vec![0.0]; 3];
        let mut data_b = data_a.clone();
        data_b[2] = vec![1.0];
        let audit = audit_mechanism(&mech, &data_a, &data_b, budget, &alphas).unwrap();
        passed &= audit.passed;
        detail.push_str(&format!("gauss(rho={rho}) tight {tight:.1e}; "));
    }

    // Randomized response under the eps^2/2 conversion.
    let rr = RandomizedResponseMechanism::new(0.25).unwrap();
    assert_eq!(rr.rho(), pure_dp_to_zcdp(3.0f64.ln()).unwrap());
    let audit =
        audit_mechanism(&rr, &[vec![0.0]], &[vec![1.0]], rr.rho(), &alphas).unwrap();
    passed &= audit.passed;
    detail.push_str("rr ok; ");

    // Additive composition on constructed schedules, checked bit for bit.
    let rho = ZcdpBudget::new(0.5).unwrap();
    let half = ZcdpBudget::new(0.25).unwrap();
    assert_eq!(compose_rounds(&[half, half]).unwrap(), rho);

    let clients: Vec<ClientSpec> = (0..2)
        .map(|id| ClientSpec::new(id, 2, rho).unwrap())
        .collect();
    let schedule = Schedule::Roundwise { clients: 2, rounds: 2 };
    let grid = MechanismGrid::build(&schedule, |_, _| {
        Arc::new(GaussianSumMechanism::new(0.0, 1.0, half).unwrap()) as Arc<dyn LocalMechanism>
    });
    let model = bernoulli_family();
    let transcript =
        run_protocol(&model, &[0.5], &clients, &schedule, &grid, &NullPolicy, 3).unwrap();
    let acct = account(&transcript).unwrap();
    for b in &acct.per_client {
        passed &= b.rho() == 0.5;
    }
    passed &= acct.total() == 1.0;
    detail.push_str("composition exact");

    report(8, "budget audits and composition", passed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_9_determinism() {
    let model = bernoulli_family();
    let rho = ZcdpBudget::new(0.5).unwrap();
    let clients: Vec<ClientSpec> = (0..2)
        .map(|id| ClientSpec::new(id, 2, rho).unwrap())
        .collect();
    let schedule = Schedule::OnePass { clients: 2 };
    let grid = MechanismGrid::build(&schedule, |_, _| {
        Arc::new(GaussianSumMechanism::new(0.0, 1.0, rho).unwrap()) as Arc<dyn LocalMechanism>
    });

    // Monte Carlo paths: seed-exact across repeated runs.
    let a = transcript_fisher(&model, &[0.4], &clients, &schedule, &grid, &NullPolicy, 500, 77)
        .unwrap();
    let b = transcript_fisher(&model, &[0.4], &clients, &schedule, &grid, &NullPolicy, 500, 77)
        .unwrap();
    let mc_exact =
        a.total.mean.to_bits() == b.total.mean.to_bits() && a.total.se.to_bits() == b.total.se.to_bits();

    let prior = ProductPrior::isotropic(1, 1.0).unwrap();
    let bound =
        mean_estimation_bound(1, 1.0, &clients, 1.0, BoundVariant::Exact).unwrap();
    let spec = EstimatorSpec::new(EstimatorKind::FedGaussianMean);
    let mean_clients: Vec<ClientSpec> = (0..2)
        .map(|id| ClientSpec::new(id, 20, rho).unwrap())
        .collect();
    let risk_model = RiskModel::Mean { dim: 1, sigma: 1.0 };
    let r1 = empirical_bayes_risk(&spec, &risk_model, &prior, &mean_clients, 1000, 5, &bound)
        .unwrap();
    let r2 = empirical_bayes_risk(&spec, &risk_model, &prior, &mean_clients, 1000, 5, &bound)
        .unwrap();
    let risk_exact = r1.risk.to_bits() == r2.risk.to_bits() && r1.se.to_bits() == r2.se.to_bits();

    // Enumeration paths: bit-exact.
    let p1 = check_posterior_product_form(
        &model, &[0.4], &clients, &schedule, &grid, &NullPolicy, 9,
    )
    .unwrap();
    let p2 = check_posterior_product_form(
        &model, &[0.4], &clients, &schedule, &grid, &NullPolicy, 9,
    )
    .unwrap();
    let enum_exact = p1.max_gap.to_bits() == p2.max_gap.to_bits();

    let b1 = mean_estimation_bound(3, 1.0, &mean_clients, 1.0, BoundVariant::Exact)
        .unwrap()
        .value;
    let b2 = mean_estimation_bound(3, 1.0, &mean_clients, 1.0, BoundVariant::Exact)
        .unwrap()
        .value;
    let bound_exact = b1.to_bits() == b2.to_bits();

    let passed = mc_exact && risk_exact && enum_exact && bound_exact;
    report(
        9,
        "seed-exact Monte Carlo, bit-exact enumeration",
        passed,
        &format!("mc={mc_exact} risk={risk_exact} enum={enum_exact} bound={bound_exact}"),
    );
    assert!(passed);
}
