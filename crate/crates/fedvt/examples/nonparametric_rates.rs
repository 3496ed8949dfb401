//! Smoothness-class risk floors: point values, the budget-limited branch,
//! and the rate exponents recovered from log-log slope fits.
//!
//! Run: cargo run --example nonparametric_rates

use fedvt::bounds::{
    homogeneous_reduction, nonparam_bound, nonparam_rate_fit, BoundVariant, RateRegime,
    NONPARAM_P_MAX,
};
use fedvt::privacy::ZcdpBudget;
use fedvt::protocol::ClientSpec;

fn main() -> fedvt::Result<()> {
    // Single client, 1000 samples, unit budget: the resolution sweep picks
    // its working dimension and the floor it implies.
    let clients = vec![ClientSpec::new(0, 1000, ZcdpBudget::new(1.0)?)?];
    let report = nonparam_bound(1.0, 1, 1.0, 1.0, &clients, NONPARAM_P_MAX)?;
    println!(
        "smoothness alpha=1, d=1: best resolution p*={}, value {:.9}",
        report.best_p.unwrap(),
        report.value
    );

    // Heterogeneous budgets: each client contributes through its own branch.
    let mixed = vec![
        ClientSpec::new(0, 1000, ZcdpBudget::new(1.0)?)?,
        ClientSpec::new(1, 200, ZcdpBudget::new(0.05)?)?,
    ];
    let rep = nonparam_bound(1.0, 1, 1.0, 1.0, &mixed, NONPARAM_P_MAX)?;
    for t in &rep.per_client {
        println!(
            "  client {}: {:?}-limited at p*, term {:.4}",
            t.client, t.branch, t.value
        );
    }

    // Identical clients collapse to a closed two-branch display.
    let v = homogeneous_reduction(1, 1.0, 10, 100, 0.5, BoundVariant::Exact)?;
    println!("homogeneous display (m=10, n=100, rho=0.5): {v:.6e}");

    // Rate exponents: resource = total samples in the sample-limited regime,
    // resource = rho n^2 per client in the budget-limited regime.
    println!("\nlog-log slope fits over resource in [1e3, 1e6]:");
    for (alpha, d) in [(1.0, 1), (2.0, 1), (2.0, 2)] {
        for regime in [RateRegime::SampleLimited, RateRegime::PrivacyLimited] {
            let fit = nonparam_rate_fit(alpha, d, regime, 6)?;
            println!(
                "  alpha={alpha}, d={d}, {regime:?}: slope {:+.4} (theory {:+.4})",
                fit.slope, fit.expected
            );
            assert!((fit.slope - fit.expected).abs() < 0.02);
        }
    }
    Ok(())
}
