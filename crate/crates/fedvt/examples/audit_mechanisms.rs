//! Audit budget declarations against measured Renyi divergence curves.
//!
//! Three mechanisms: a Gaussian sum release (closed-form law, tight), a
//! randomized response bit (discrete, budget from the pure-DP conversion),
//! and a deliberately over-claimed Gaussian whose audit must fail.
//!
//! Run: cargo run --example audit_mechanisms

use fedvt::mechanisms::{GaussianSumMechanism, RandomizedResponseMechanism};
use fedvt::privacy::{
    audit_mechanism, compose_rounds, default_alpha_grid, pure_dp_to_zcdp, ZcdpBudget,
};

fn main() -> fedvt::Result<()> {
    let alphas = default_alpha_grid();

    // Adjacent pair realizing full sensitivity for a sum of [0,1] values.
    let data_a: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0], vec![0.0]];
    let mut data_b = data_a.clone();
    data_b[2] = vec![1.0];

    let rho = ZcdpBudget::new(0.3)?;
    let gauss = GaussianSumMechanism::new(0.0, 1.0, rho)?;
    let audit = audit_mechanism(&gauss, &data_a, &data_b, rho, &alphas)?;
    println!(
        "gaussian sum, rho=0.3            max D_a - a*rho = {:+.3e}  passed={}",
        audit.max_excess, audit.passed
    );

    // Randomized response with flip probability 1/4; its budget comes from
    // the epsilon^2/2 conversion of its pure-DP level.
    let rr = RandomizedResponseMechanism::new(0.25)?;
    let bit_a = vec![vec![0.0]];
    let bit_b = vec![vec![1.0]];
    let audit = audit_mechanism(&rr, &bit_a, &bit_b, rr.rho(), &alphas)?;
    println!(
        "randomized response, flip=0.25   rho={:.6} (= eps^2/2 for eps=ln 3)",
        rr.rho().rho()
    );
    println!(
        "                                 max D_a - a*rho = {:+.3e}  passed={}",
        audit.max_excess, audit.passed
    );
    assert_eq!(rr.rho(), pure_dp_to_zcdp(3.0f64.ln())?);

    // A liar: noise calibrated for rho=0.3 but only rho=0.15 declared.
    let liar_claim = ZcdpBudget::new(0.15)?;
    let audit = audit_mechanism(&gauss, &data_a, &data_b, liar_claim, &alphas)?;
    println!(
        "same mechanism claiming rho=0.15 max D_a - a*rho = {:+.3e}  passed={}",
        audit.max_excess, audit.passed
    );
    assert!(!audit.passed, "an under-declared budget must be caught");

    // Additive composition across rounds.
    let total = compose_rounds(&[rho, ZcdpBudget::new(0.1)?, ZcdpBudget::ZERO])?;
    println!("composed 0.3 + 0.1 + 0 = {}", total.rho());
    Ok(())
}
