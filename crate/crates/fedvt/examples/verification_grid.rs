//! Run a compact slice of the claim-verification grid and print one line
//! per record: contraction ceilings, posterior factorization, cross-term
//! cancellation, and the derivative cross-check.
//!
//! The full grid (the one the acceptance suite runs) uses
//! `VerificationGridConfig::standard`; this example uses the smoke config
//! so it finishes in seconds.
//!
//! Run: cargo run --example verification_grid

use fedvt::verification::{run_full_verification, ClaimId, VerificationGridConfig};

fn main() -> fedvt::Result<()> {
    let cfg = VerificationGridConfig::smoke(99);
    let outcome = run_full_verification(&cfg)?;

    for claim in [
        ClaimId::SingleClientContraction,
        ClaimId::TranscriptContraction,
        ClaimId::PosteriorProductForm,
        ClaimId::CrossTermsVanish,
        ClaimId::DecompositionIdentity,
        ClaimId::OracleAgreement,
    ] {
        let n = outcome.count_for(claim);
        println!("{claim:<26} {n:>3} record(s)");
    }

    println!();
    for r in &outcome.records {
        println!(
            "{:<26} {:<28} theta={:.1} n={} rho={:.2} m={}  estimate {:>9.4}  threshold {:>9.4}  {}",
            r.claim.to_string(),
            r.protocol,
            r.theta,
            r.n,
            r.rho,
            r.m,
            r.estimate,
            r.bound,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    assert!(outcome.all_passed());
    println!("\nall {} records passed", outcome.records.len());
    Ok(())
}
