//! Estimate the Fisher information a public transcript carries about the
//! parameter, decompose it across clients, and hold it against the privacy
//! and sample ceilings.
//!
//! The per-trial estimator enumerates each client's local datasets exactly
//! and projects the data score onto the transcript; Monte Carlo enters only
//! through transcript draws. A finite-difference derivative of the marginal
//! log likelihood cross-checks the whole pipeline on shared trial seeds.
//!
//! Run: cargo run --example transcript_information

use std::sync::Arc;

use fedvt::fisher::{
    check_posterior_product_form, check_single_client_contraction,
    check_transcript_contraction, fisher_via_marginal_gradient, transcript_fisher,
};
use fedvt::mechanisms::GaussianSumMechanism;
use fedvt::models::bernoulli_family;
use fedvt::privacy::ZcdpBudget;
use fedvt::protocol::{ClientSpec, LocalMechanism, MechanismGrid, NullPolicy, Schedule};

fn main() -> fedvt::Result<()> {
    let model = bernoulli_family();
    let theta = [0.4];
    let trials = 3000;

    // --- one client, Gaussian noise on the sum of its bits ---
    let rho = ZcdpBudget::new(0.5)?;
    let client = ClientSpec::new(0, 4, rho)?;
    let schedule = Schedule::OnePass { clients: 1 };
    let grid = MechanismGrid::build(&schedule, |_, _| {
        Arc::new(GaussianSumMechanism::new(0.0, 1.0, rho).unwrap()) as Arc<dyn LocalMechanism>
    });
    let check = check_single_client_contraction(
        &model, &theta, client, &schedule, &grid, &NullPolicy, trials, 11,
    )?;
    println!(
        "single client  estimate {:.4} +- {:.4}  privacy ceiling {:.4}  sample ceiling {:.4}  passed={}",
        check.report.total.mean,
        check.report.total.se,
        check.privacy_bound,
        check.sample_bound,
        check.passed
    );

    // --- three clients speaking one pass ---
    let clients: Vec<ClientSpec> = (0..3)
        .map(|id| ClientSpec::new(id, 3, rho).unwrap())
        .collect();
    let schedule = Schedule::OnePass { clients: 3 };
    let grid = MechanismGrid::build(&schedule, |_, _| {
        Arc::new(GaussianSumMechanism::new(0.0, 1.0, rho).unwrap()) as Arc<dyn LocalMechanism>
    });
    let check = check_transcript_contraction(
        &model, &theta, &clients, &schedule, &grid, &NullPolicy, trials, 12,
    )?;
    println!(
        "three clients  estimate {:.4} +- {:.4}  min-sum ceiling {:.4}  passed={}",
        check.report.total.mean, check.report.total.se, check.bound, check.passed
    );
    println!(
        "  per-client means {:?}",
        check
            .report
            .per_client
            .iter()
            .map(|s| (s.mean * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    println!(
        "  cross-term mean {:+.5} +- {:.5} (should straddle zero)",
        check.report.cross_total.mean, check.report.cross_total.se
    );
    println!(
        "  recombination identity max gap {:.2e}",
        check.report.max_identity_gap
    );

    // --- the conditional-posterior factorization, checked by enumeration ---
    let two: Vec<ClientSpec> = (0..2)
        .map(|id| ClientSpec::new(id, 2, rho).unwrap())
        .collect();
    let schedule2 = Schedule::OnePass { clients: 2 };
    let grid2 = MechanismGrid::build(&schedule2, |_, _| {
        Arc::new(GaussianSumMechanism::new(0.0, 1.0, rho).unwrap()) as Arc<dyn LocalMechanism>
    });
    let pf = check_posterior_product_form(
        &model, &theta, &two, &schedule2, &grid2, &NullPolicy, 13,
    )?;
    println!(
        "posterior product form: max |joint - product| = {:.2e} over {} joint configs",
        pf.max_gap, pf.joint_configs
    );

    // --- independent derivative-based estimate on the same trial seeds ---
    let mc = transcript_fisher(
        &model, &theta, &two, &schedule2, &grid2, &NullPolicy, trials, 14,
    )?;
    let fd = fisher_via_marginal_gradient(
        &model, &theta, &two, &schedule2, &grid2, &NullPolicy, trials, 14, 1e-4,
    )?;
    println!(
        "score projection {:.4} +- {:.4}  vs  marginal gradient {:.4} +- {:.4}",
        mc.total.mean, mc.total.se, fd.fisher.mean, fd.fisher.se
    );
    Ok(())
}
