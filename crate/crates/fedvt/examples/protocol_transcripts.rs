//! Run an interactive two-round protocol, write its transcript log, parse
//! it back bit-exactly, and audit the budget accounting.
//!
//! Run: cargo run --example protocol_transcripts

use fedvt::mechanisms::adaptive_two_round_mean_protocol;
use fedvt::models::gaussian_mean_family;
use fedvt::privacy::ZcdpBudget;
use fedvt::protocol::{
    account, parse_transcript_log, run_protocol, transcript_density, write_transcript_log,
    ClientSpec,
};

fn main() -> fedvt::Result<()> {
    let clients = vec![
        ClientSpec::new(0, 6, ZcdpBudget::new(0.4)?)?,
        ClientSpec::new(1, 10, ZcdpBudget::new(0.6)?)?,
    ];

    // Round 1: coarse clipped means. Broadcast their weighted combination.
    // Round 2: re-clipped means around the broadcast center.
    let bundle = adaptive_two_round_mean_protocol(&clients, 1, (0.5, 0.5), 2.0, 1.0)?;
    let model = gaussian_mean_family(1, 1.0)?;
    let transcript = run_protocol(
        &model,
        &[0.7],
        &clients,
        &bundle.schedule,
        &bundle.grid,
        bundle.policy.as_ref(),
        2024,
    )?;

    let log = write_transcript_log(&transcript);
    println!("--- transcript log ---");
    print!("{log}");

    let reparsed = parse_transcript_log(&log)?;
    assert_eq!(transcript, reparsed, "log round-trip must be bit-exact");
    println!("--- round-trip: bit-exact ---");

    let acct = account(&transcript)?;
    for (l, b) in acct.per_client.iter().enumerate() {
        println!("client {l}: charged rho = {}", b.rho());
    }
    println!("total rho = {}", acct.total());

    // The transcript density factorizes across clients by construction; the
    // joint log density is exactly the sum of per-client factors.
    let data: Vec<Vec<Vec<f64>>> = vec![
        vec![vec![0.6]; 6],
        vec![vec![0.8]; 10],
    ];
    let density =
        transcript_density(&transcript, &data, &bundle.grid, bundle.policy.as_ref())?;
    println!(
        "log joint = {:.6} = sum of per-client factors {:?}",
        density.log_joint(),
        density
            .per_client_log
            .iter()
            .map(|v| (v * 1e6).round() / 1e6)
            .collect::<Vec<_>>()
    );
    Ok(())
}
