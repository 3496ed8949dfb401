//! Interactive federated protocols with public transcripts.
//!
//! A protocol runs T rounds over m clients. Every transmission is public:
//! the transcript starts with shared initial randomness, then records one
//! message per (round, client) slot, where inactive slots hold a
//! distinguished null message with zero privacy charge. Server behavior is a
//! deterministic function of the public history, so replaying a transcript
//! recovers every instruction the clients saw.
//!
//! Budgets are declared statically: each client's per-round charges must sum
//! to at most its budget, and the check runs before any data is touched.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::numeric::{compensated_sum, std_normal_log_pdf};
use crate::privacy::{BudgetVector, ZcdpBudget};
use crate::rng::{standard_normal, stream, Scope};

/// One client: identifier, local sample count, zCDP budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientSpec {
    pub id: usize,
    pub n: usize,
    pub rho_budget: ZcdpBudget,
}

impl ClientSpec {
    pub fn new(id: usize, n: usize, rho_budget: ZcdpBudget) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "client {id} needs at least one sample"
            )));
        }
        Ok(ClientSpec { id, n, rho_budget })
    }
}

fn validate_clients(clients: &[ClientSpec]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::InvalidParameter("protocol needs at least one client".into()));
    }
    for (i, c) in clients.iter().enumerate() {
        if c.id != i {
            return Err(Error::InvalidParameter(format!(
                "client ids must be contiguous from 0; position {i} has id {}",
                c.id
            )));
        }
        if c.n == 0 {
            return Err(Error::InvalidParameter(format!("client {i} needs at least one sample")));
        }
    }
    Ok(())
}

/// Public message: a real vector, or the null symbol sent by inactive clients.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Null,
    Vector(Vec<f64>),
}

impl Message {
    pub fn is_null(&self) -> bool {
        matches!(self, Message::Null)
    }

    pub fn payload(&self) -> Option<&[f64]> {
        match self {
            Message::Null => None,
            Message::Vector(v) => Some(v),
        }
    }
}

/// One (round, client) slot of a transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub charged: ZcdpBudget,
    pub message: Message,
}

/// All per-client messages of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub messages: Vec<RoundMessage>,
}

/// Who transmits when.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Client t speaks at round t; T = m.
    OnePass { clients: usize },
    /// Every client speaks in every round.
    Roundwise { clients: usize, rounds: usize },
    /// One active client per round, in the given order.
    Sequential { clients: usize, active: Vec<usize> },
}

impl Schedule {
    pub fn clients(&self) -> usize {
        match self {
            Schedule::OnePass { clients }
            | Schedule::Roundwise { clients, .. }
            | Schedule::Sequential { clients, .. } => *clients,
        }
    }

    pub fn rounds(&self) -> usize {
        match self {
            Schedule::OnePass { clients } => *clients,
            Schedule::Roundwise { rounds, .. } => *rounds,
            Schedule::Sequential { active, .. } => active.len(),
        }
    }

    pub fn is_active(&self, round: usize, client: usize) -> bool {
        match self {
            Schedule::OnePass { .. } => round == client,
            Schedule::Roundwise { .. } => true,
            Schedule::Sequential { active, .. } => active.get(round) == Some(&client),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients() == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one client".into()));
        }
        if let Schedule::Sequential { clients, active } = self {
            if let Some(&bad) = active.iter().find(|&&a| a >= *clients) {
                return Err(Error::InvalidParameter(format!(
                    "sequential schedule activates client {bad}, but there are only {clients}"
                )));
            }
        }
        Ok(())
    }
}

/// Executed protocol: initial randomness plus per-round message vectors,
/// annotated with the schedule that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub initial_randomness: Vec<f64>,
    pub rounds: Vec<Round>,
    pub schedule: Schedule,
}

impl Transcript {
    pub fn clients(&self) -> usize {
        self.schedule.clients()
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }
}

/// What a mechanism sees when called: everything public so far.
/// `rounds` holds completed rounds only; same-round peers are invisible.
pub struct HistoryView<'a> {
    pub initial: &'a [f64],
    pub rounds: &'a [Round],
    /// Current-round server instructions, a deterministic function of the rest.
    pub instructions: &'a [f64],
}

/// A client-side mechanism: declares its per-round budget, produces a message
/// from (local data, public history, private randomness), and can report the
/// log-density of a realized message for posterior replay.
pub trait LocalMechanism: Send + Sync {
    fn round_rho(&self) -> ZcdpBudget;

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        history: &HistoryView<'_>,
        rng: &mut dyn RngCore,
    ) -> Message;

    /// Log-density of `message` given hypothetical `data` and the history.
    /// `None` when the mechanism cannot report densities.
    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        history: &HistoryView<'_>,
    ) -> Option<f64>;
}

/// Deterministic server: computes the next round's broadcast instructions
/// from the public history. No private randomness by construction.
pub trait ServerPolicy: Send + Sync {
    fn next_instructions(&self, initial: &[f64], rounds: &[Round]) -> Vec<f64>;
}

/// Server that never instructs anyone.
pub struct NullPolicy;

impl ServerPolicy for NullPolicy {
    fn next_instructions(&self, _initial: &[f64], _rounds: &[Round]) -> Vec<f64> {
        Vec::new()
    }
}

/// Mechanism assignment per (round, client) slot. Active slots must be
/// filled, inactive slots must stay empty.
pub struct MechanismGrid {
    slots: Vec<Vec<Option<Arc<dyn LocalMechanism>>>>,
}

impl MechanismGrid {
    pub fn new(slots: Vec<Vec<Option<Arc<dyn LocalMechanism>>>>) -> Self {
        MechanismGrid { slots }
    }

    /// Fills every active slot of `schedule` with `make(round, client)`.
    pub fn build(
        schedule: &Schedule,
        mut make: impl FnMut(usize, usize) -> Arc<dyn LocalMechanism>,
    ) -> Self {
        let slots = (0..schedule.rounds())
            .map(|t| {
                (0..schedule.clients())
                    .map(|l| schedule.is_active(t, l).then(|| make(t, l)))
                    .collect()
            })
            .collect();
        MechanismGrid { slots }
    }

    pub fn slot(&self, round: usize, client: usize) -> Option<&Arc<dyn LocalMechanism>> {
        self.slots.get(round).and_then(|r| r.get(client)).and_then(|s| s.as_ref())
    }

    fn check_against(&self, schedule: &Schedule) -> Result<()> {
        if self.slots.len() != schedule.rounds() {
            return Err(Error::ScheduleMismatch(format!(
                "grid has {} rounds, schedule has {}",
                self.slots.len(),
                schedule.rounds()
            )));
        }
        for (t, row) in self.slots.iter().enumerate() {
            if row.len() != schedule.clients() {
                return Err(Error::ScheduleMismatch(format!(
                    "grid round {t} covers {} clients, schedule has {}",
                    row.len(),
                    schedule.clients()
                )));
            }
            for (l, slot) in row.iter().enumerate() {
                match (slot.is_some(), schedule.is_active(t, l)) {
                    (false, true) => {
                        return Err(Error::ScheduleMismatch(format!(
                            "no mechanism for active client {l} at round {t}"
                        )))
                    }
                    (true, false) => {
                        return Err(Error::ScheduleMismatch(format!(
                            "mechanism supplied for inactive client {l} at round {t}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Per-client charges in round order, as they will appear in a transcript.
    pub fn declared_budgets(&self, clients: usize) -> Vec<f64> {
        (0..clients)
            .map(|l| {
                let parts: Vec<f64> = self
                    .slots
                    .iter()
                    .map(|row| row[l].as_ref().map_or(0.0, |m| m.round_rho().rho()))
                    .collect();
                compensated_sum(&parts)
            })
            .collect()
    }
}

fn check_budgets(clients: &[ClientSpec], grid: &MechanismGrid) -> Result<()> {
    for (l, c) in clients.iter().enumerate() {
        let mut cum = 0.0;
        for (t, row) in grid.slots.iter().enumerate() {
            if let Some(m) = &row[l] {
                cum += m.round_rho().rho();
                if cum > c.rho_budget.rho() * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::BudgetExceeded {
                        client: l,
                        round: t,
                        charged: cum,
                        budget: c.rho_budget.rho(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Runs the protocol, sampling each client's data from the model.
pub fn run_protocol(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    seed: u64,
) -> Result<Transcript> {
    model.validate_theta(theta)?;
    validate_clients(clients)?;
    let data = sample_local_data(model, theta, clients, seed);
    run_protocol_on_data(&data, clients, schedule, grid, policy, seed)
}

/// Samples every client's local dataset from the model, using the per-client
/// data streams derived from `seed`.
pub fn sample_local_data(
    model: &dyn ModelFamily,
    theta: &[f64],
    clients: &[ClientSpec],
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    clients
        .iter()
        .map(|c| {
            let mut rng = stream(seed, Scope::ClientData { client: c.id });
            (0..c.n).map(|_| model.sample(theta, &mut rng)).collect()
        })
        .collect()
}

/// Runs the protocol on externally supplied local datasets.
pub fn run_protocol_on_data(
    data: &[Vec<Vec<f64>>],
    clients: &[ClientSpec],
    schedule: &Schedule,
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
    seed: u64,
) -> Result<Transcript> {
    validate_clients(clients)?;
    schedule.validate()?;
    let m = clients.len();
    if schedule.clients() != m {
        return Err(Error::ScheduleMismatch(format!(
            "schedule covers {} clients, got {m}",
            schedule.clients()
        )));
    }
    if data.len() != m {
        return Err(Error::InvalidInput(format!(
            "data for {} clients, expected {m}",
            data.len()
        )));
    }
    for (l, (d, c)) in data.iter().zip(clients).enumerate() {
        if d.len() != c.n {
            return Err(Error::InvalidInput(format!(
                "client {l} declares n={} but has {} samples",
                c.n,
                d.len()
            )));
        }
    }
    grid.check_against(schedule)?;
    check_budgets(clients, grid)?;

    let mut init_rng = stream(seed, Scope::InitialRandomness);
    let initial_randomness = vec![standard_normal(&mut init_rng)];

    let mut rounds: Vec<Round> = Vec::with_capacity(schedule.rounds());
    for t in 0..schedule.rounds() {
        let instructions = policy.next_instructions(&initial_randomness, &rounds);
        let mut messages = Vec::with_capacity(m);
        for l in 0..m {
            if let Some(mech) = grid.slot(t, l) {
                let history = HistoryView {
                    initial: &initial_randomness,
                    rounds: &rounds,
                    instructions: &instructions,
                };
                let mut rng = stream(seed, Scope::Mechanism { client: l, round: t });
                let message = mech.evaluate(&data[l], &history, &mut rng);
                if message.is_null() {
                    return Err(Error::InvalidTranscript(format!(
                        "active client {l} emitted the null message at round {t}"
                    )));
                }
                messages.push(RoundMessage { charged: mech.round_rho(), message });
            } else {
                messages.push(RoundMessage {
                    charged: ZcdpBudget::ZERO,
                    message: Message::Null,
                });
            }
        }
        rounds.push(Round { messages });
    }

    Ok(Transcript {
        initial_randomness,
        rounds,
        schedule: schedule.clone(),
    })
}

/// Per-client cumulative charges of a transcript.
///
/// Fails on structural violations: ragged rounds, null messages with nonzero
/// charge, or activity that contradicts the schedule annotation.
pub fn account(transcript: &Transcript) -> Result<BudgetVector> {
    let m = transcript.clients();
    let mut parts: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (t, round) in transcript.rounds.iter().enumerate() {
        if round.messages.len() != m {
            return Err(Error::InvalidTranscript(format!(
                "round {t} has {} messages for {m} clients",
                round.messages.len()
            )));
        }
        for (l, rm) in round.messages.iter().enumerate() {
            let active = transcript.schedule.is_active(t, l);
            if rm.message.is_null() {
                if active {
                    return Err(Error::InvalidTranscript(format!(
                        "active client {l} holds a null message at round {t}"
                    )));
                }
                if rm.charged.rho() != 0.0 {
                    return Err(Error::InvalidTranscript(format!(
                        "null message with nonzero charge at round {t}, client {l}"
                    )));
                }
            } else if !active {
                return Err(Error::InvalidTranscript(format!(
                    "inactive client {l} holds a message at round {t}"
                )));
            }
            parts[l].push(rm.charged.rho());
        }
    }
    let per_client = parts
        .iter()
        .map(|p| ZcdpBudget::new(compensated_sum(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BudgetVector { per_client })
}

/// Likelihood of a realized transcript under hypothetical local datasets.
///
/// The joint factors exactly into per-client terms; the initial-randomness
/// density is folded into client 0's factor, and the joint is defined as the
/// sum of the per-client log factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptDensity {
    pub per_client_log: Vec<f64>,
}

impl TranscriptDensity {
    pub fn log_joint(&self) -> f64 {
        self.per_client_log.iter().sum()
    }

    pub fn joint(&self) -> f64 {
        self.log_joint().exp()
    }

    pub fn per_client(&self) -> Vec<f64> {
        self.per_client_log.iter().map(|l| l.exp()).collect()
    }
}

/// Evaluates the transcript likelihood given each client's dataset,
/// replaying server instructions with the same policy that produced the run.
pub fn transcript_density(
    transcript: &Transcript,
    data: &[Vec<Vec<f64>>],
    grid: &MechanismGrid,
    policy: &dyn ServerPolicy,
) -> Result<TranscriptDensity> {
    let m = transcript.clients();
    if data.len() != m {
        return Err(Error::InvalidInput(format!(
            "data for {} clients, expected {m}",
            data.len()
        )));
    }
    grid.check_against(&transcript.schedule)?;

    let mut per_client_log = vec![0.0; m];
    let nu0: f64 = transcript
        .initial_randomness
        .iter()
        .map(|&r| std_normal_log_pdf(r))
        .sum();
    per_client_log[0] = nu0;

    for (t, round) in transcript.rounds.iter().enumerate() {
        if round.messages.len() != m {
            return Err(Error::InvalidTranscript(format!(
                "round {t} has {} messages for {m} clients",
                round.messages.len()
            )));
        }
        let prefix = &transcript.rounds[..t];
        let instructions = policy.next_instructions(&transcript.initial_randomness, prefix);
        for (l, rm) in round.messages.iter().enumerate() {
            match grid.slot(t, l) {
                Some(mech) => {
                    let history = HistoryView {
                        initial: &transcript.initial_randomness,
                        rounds: prefix,
                        instructions: &instructions,
                    };
                    let lq = mech
                        .message_log_density(&rm.message, &data[l], &history)
                        .ok_or(Error::DensityUnavailable { client: l, round: t })?;
                    per_client_log[l] += lq;
                }
                None => {
                    if !rm.message.is_null() {
                        return Err(Error::InvalidTranscript(format!(
                            "inactive client {l} holds a message at round {t}"
                        )));
                    }
                    // Null messages are deterministic: density factor 1.
                }
            }
        }
    }
    Ok(TranscriptDensity { per_client_log })
}

// ---------------------------------------------------------------------------
// Line-delimited transcript log.
//
// One record per line, tab-separated:
//   schedule <kind> <clients> [<rounds> | <active list>]
//   init <comma-separated floats>
//   msg <round> <client> <charged rho> <null flag 0|1> <comma-separated payload>
// Floats are written with Rust's shortest round-trip formatting, so parsing
// recovers them bit for bit.
// ---------------------------------------------------------------------------

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::InvalidTranscript(format!("bad float {tok:?} in log")))
        })
        .collect()
}

/// Serializes a transcript to the line-delimited log format.
pub fn write_transcript_log(t: &Transcript) -> String {
    let mut out = String::new();
    match &t.schedule {
        Schedule::OnePass { clients } => {
            out.push_str(&format!("schedule\tone_pass\t{clients}\n"));
        }
        Schedule::Roundwise { clients, rounds } => {
            out.push_str(&format!("schedule\troundwise\t{clients}\t{rounds}\n"));
        }
        Schedule::Sequential { clients, active } => {
            let list = active.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
            out.push_str(&format!("schedule\tsequential\t{clients}\t{list}\n"));
        }
    }
    out.push_str(&format!("init\t{}\n", join_floats(&t.initial_randomness)));
    for (round, r) in t.rounds.iter().enumerate() {
        for (client, rm) in r.messages.iter().enumerate() {
            let (flag, payload) = match &rm.message {
                Message::Null => (1, String::new()),
                Message::Vector(v) => (0, join_floats(v)),
            };
            out.push_str(&format!(
                "msg\t{round}\t{client}\t{}\t{flag}\t{payload}\n",
                rm.charged.rho()
            ));
        }
    }
    out
}

/// Parses the line-delimited log format back into a transcript.
pub fn parse_transcript_log(text: &str) -> Result<Transcript> {
    let mut schedule: Option<Schedule> = None;
    let mut initial: Option<Vec<f64>> = None;
    let mut messages: Vec<(usize, usize, f64, bool, Vec<f64>)> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| {
            Error::InvalidTranscript(format!("line {}: {what}", lineno + 1))
        };
        match fields[0] {
            "schedule" => {
                if fields.len() < 3 {
                    return Err(bad("schedule record too short"));
                }
                let clients: usize =
                    fields[2].parse().map_err(|_| bad("bad client count"))?;
                let sched = match fields[1] {
                    "one_pass" => Schedule::OnePass { clients },
                    "roundwise" => {
                        let rounds = fields
                            .get(3)
                            .ok_or_else(|| bad("roundwise needs a round count"))?
                            .parse()
                            .map_err(|_| bad("bad round count"))?;
                        Schedule::Roundwise { clients, rounds }
                    }
                    "sequential" => {
                        let list = fields.get(3).copied().unwrap_or("");
                        let active = if list.is_empty() {
                            Vec::new()
                        } else {
                            list.split(',')
                                .map(|tok| tok.parse().map_err(|_| bad("bad active index")))
                                .collect::<Result<Vec<usize>>>()?
                        };
                        Schedule::Sequential { clients, active }
                    }
                    other => return Err(bad(&format!("unknown schedule kind {other:?}"))),
                };
                schedule = Some(sched);
            }
            "init" => {
                initial = Some(parse_floats(fields.get(1).copied().unwrap_or(""))?);
            }
            "msg" => {
                if fields.len() != 6 {
                    return Err(bad("msg record needs 6 fields"));
                }
                let round: usize = fields[1].parse().map_err(|_| bad("bad round"))?;
                let client: usize = fields[2].parse().map_err(|_| bad("bad client"))?;
                let rho: f64 = fields[3].parse().map_err(|_| bad("bad budget"))?;
                let null = match fields[4] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("null flag must be 0 or 1")),
                };
                let payload = parse_floats(fields[5])?;
                if null && !payload.is_empty() {
                    return Err(bad("null message with payload"));
                }
                if null && rho != 0.0 {
                    return Err(bad("null message with nonzero charge"));
                }
                messages.push((round, client, rho, null, payload));
            }
            other => return Err(bad(&format!("unknown record {other:?}"))),
        }
    }

    let schedule =
        schedule.ok_or_else(|| Error::InvalidTranscript("log is missing the schedule".into()))?;
    schedule.validate()?;
    let initial = initial
        .ok_or_else(|| Error::InvalidTranscript("log is missing the init record".into()))?;
    let (m, t_count) = (schedule.clients(), schedule.rounds());
    if messages.len() != m * t_count {
        return Err(Error::InvalidTranscript(format!(
            "log has {} msg records, schedule implies {}",
            messages.len(),
            m * t_count
        )));
    }
    let mut rounds: Vec<Round> = (0..t_count)
        .map(|_| Round {
            messages: vec![
                RoundMessage { charged: ZcdpBudget::ZERO, message: Message::Null };
                m
            ],
        })
        .collect();
    let mut seen = vec![vec![false; m]; t_count];
    for (round, client, rho, null, payload) in messages {
        if round >= t_count || client >= m {
            return Err(Error::InvalidTranscript(format!(
                "msg record addresses round {round}, client {client} outside the schedule"
            )));
        }
        if seen[round][client] {
            return Err(Error::InvalidTranscript(format!(
                "duplicate msg record for round {round}, client {client}"
            )));
        }
        seen[round][client] = true;
        rounds[round].messages[client] = RoundMessage {
            charged: ZcdpBudget::new(rho)?,
            message: if null { Message::Null } else { Message::Vector(payload) },
        };
    }
    let transcript = Transcript { initial_randomness: initial, rounds, schedule };
    account(&transcript)?;
    Ok(transcript)
}


#[cfg(test)]
mod tests {
    use super::test_support::NoisySum;
    use super::*;
    use approx::assert_relative_eq;

    fn budget(r: f64) -> ZcdpBudget {
        ZcdpBudget::new(r).unwrap()
    }

    fn three_clients() -> Vec<ClientSpec> {
        (0..3)
            .map(|id| ClientSpec::new(id, 2, budget(1.0)).unwrap())
            .collect()
    }

    fn toy_data(m: usize, n: usize) -> Vec<Vec<Vec<f64>>> {
        (0..m)
            .map(|l| (0..n).map(|i| vec![(l * n + i) as f64 * 0.25]).collect())
            .collect()
    }

    fn noisy_grid(schedule: &Schedule, rho: f64) -> MechanismGrid {
        MechanismGrid::build(schedule, |_, _| {
            Arc::new(NoisySum { noise_sd: 1.0, rho: budget(rho) })
        })
    }

    #[test]
    fn one_pass_matches_equivalent_sequential() {
        let clients = three_clients();
        let data = toy_data(3, 2);
        let one_pass = Schedule::OnePass { clients: 3 };
        let sequential = Schedule::Sequential { clients: 3, active: vec![0, 1, 2] };
        let t1 = run_protocol_on_data(
            &data, &clients, &one_pass, &noisy_grid(&one_pass, 0.2), &NullPolicy, 11,
        )
        .unwrap();
        let t2 = run_protocol_on_data(
            &data, &clients, &sequential, &noisy_grid(&sequential, 0.2), &NullPolicy, 11,
        )
        .unwrap();
        assert_eq!(t1.rounds, t2.rounds);
        assert_eq!(t1.initial_randomness, t2.initial_randomness);
    }

    #[test]
    fn replay_is_bit_identical() {
        let clients = three_clients();
        let data = toy_data(3, 2);
        let schedule = Schedule::Roundwise { clients: 3, rounds: 2 };
        let grid = noisy_grid(&schedule, 0.25);
        let a = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 5).unwrap();
        let b = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_precheck_names_client_and_round() {
        let clients = vec![
            ClientSpec::new(0, 2, budget(0.5)).unwrap(),
            ClientSpec::new(1, 2, budget(0.3)).unwrap(),
        ];
        let schedule = Schedule::Roundwise { clients: 2, rounds: 2 };
        let grid = noisy_grid(&schedule, 0.2);
        let err = run_protocol_on_data(&toy_data(2, 2), &clients, &schedule, &grid, &NullPolicy, 1)
            .unwrap_err();
        match err {
            Error::BudgetExceeded { client, round, .. } => {
                assert_eq!(client, 1);
                assert_eq!(round, 1);
            }
            other => panic!("expected BudgetExceeded, got {other}"),
        }
    }

    #[test]
    fn accounting_sums_per_client() {
        // Active order (0, 1, 0) with charges 0.2, 0.3, 0.1.
        let clients = vec![
            ClientSpec::new(0, 1, budget(1.0)).unwrap(),
            ClientSpec::new(1, 1, budget(1.0)).unwrap(),
        ];
        let schedule = Schedule::Sequential { clients: 2, active: vec![0, 1, 0] };
        let charges = [0.2, 0.3, 0.1];
        let grid = MechanismGrid::build(&schedule, |t, _| {
            Arc::new(NoisySum { noise_sd: 1.0, rho: budget(charges[t]) })
        });
        let t = run_protocol_on_data(&toy_data(2, 1), &clients, &schedule, &grid, &NullPolicy, 3)
            .unwrap();
        let acct = account(&t).unwrap();
        assert_relative_eq!(acct.per_client[0].rho(), 0.3, epsilon = 1e-15);
        assert_relative_eq!(acct.per_client[1].rho(), 0.3, epsilon = 1e-15);
        assert_relative_eq!(acct.total(), 0.6, epsilon = 1e-15);
        // Inactive slots are null with zero charge.
        assert!(t.rounds[0].messages[1].message.is_null());
        assert_eq!(t.rounds[0].messages[1].charged.rho(), 0.0);
    }

    #[test]
    fn all_null_protocol_is_legal() {
        let clients = vec![ClientSpec::new(0, 1, budget(0.0)).unwrap()];
        let schedule = Schedule::Sequential { clients: 1, active: vec![] };
        let grid = MechanismGrid::new(vec![]);
        let t = run_protocol_on_data(&toy_data(1, 1), &clients, &schedule, &grid, &NullPolicy, 9)
            .unwrap();
        assert_eq!(t.num_rounds(), 0);
        let acct = account(&t).unwrap();
        assert_eq!(acct.per_client[0].rho(), 0.0);
    }

    #[test]
    fn missing_mechanism_is_schedule_mismatch() {
        let clients = three_clients();
        let schedule = Schedule::OnePass { clients: 3 };
        let mut slots: Vec<Vec<Option<Arc<dyn LocalMechanism>>>> = vec![vec![None, None, None]; 3];
        slots[0][0] = Some(Arc::new(NoisySum { noise_sd: 1.0, rho: budget(0.1) }));
        // Rounds 1 and 2 miss their active mechanisms.
        let grid = MechanismGrid::new(slots);
        let err = run_protocol_on_data(
            &toy_data(3, 2), &clients, &schedule, &grid, &NullPolicy, 2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ScheduleMismatch(_)));
    }

    #[test]
    fn same_round_messages_ignore_peer_perturbation() {
        // Changing client 1's data must not affect client 0's message in the
        // same round: mechanisms see only completed rounds.
        let clients: Vec<ClientSpec> =
            (0..2).map(|id| ClientSpec::new(id, 2, budget(1.0)).unwrap()).collect();
        let schedule = Schedule::Roundwise { clients: 2, rounds: 1 };
        let grid = noisy_grid(&schedule, 0.5);
        let base = toy_data(2, 2);
        let mut perturbed = base.clone();
        perturbed[1][0][0] += 10.0;
        let ta = run_protocol_on_data(&base, &clients, &schedule, &grid, &NullPolicy, 4).unwrap();
        let tb =
            run_protocol_on_data(&perturbed, &clients, &schedule, &grid, &NullPolicy, 4).unwrap();
        assert_eq!(ta.rounds[0].messages[0], tb.rounds[0].messages[0]);
        assert_ne!(ta.rounds[0].messages[1], tb.rounds[0].messages[1]);
    }

    #[test]
    fn density_factorizes_exactly() {
        let clients = three_clients();
        let data = toy_data(3, 2);
        let schedule = Schedule::Roundwise { clients: 3, rounds: 2 };
        let grid = noisy_grid(&schedule, 0.1);
        let t = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 13).unwrap();
        let dens = transcript_density(&t, &data, &grid, &NullPolicy).unwrap();
        assert_eq!(dens.per_client_log.len(), 3);
        let product: f64 = dens.per_client().iter().product();
        assert_relative_eq!(dens.joint(), product, max_relative = 1e-12);
        assert!(dens.joint() > 0.0);
    }

    #[test]
    fn density_matches_hand_computation() {
        let clients = vec![ClientSpec::new(0, 2, budget(1.0)).unwrap()];
        let data = vec![vec![vec![0.5], vec![1.0]]];
        let schedule = Schedule::OnePass { clients: 1 };
        let grid = noisy_grid(&schedule, 0.5);
        let t = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 21).unwrap();
        let dens = transcript_density(&t, &data, &grid, &NullPolicy).unwrap();
        let y = t.rounds[0].messages[0].message.payload().unwrap()[0];
        let expected = crate::numeric::std_normal_log_pdf(t.initial_randomness[0])
            + crate::numeric::normal_log_pdf(y, 1.5, 1.0);
        assert_relative_eq!(dens.log_joint(), expected, epsilon = 1e-12);
    }

    #[test]
    fn density_unavailable_is_loud() {
        struct Opaque;
        impl LocalMechanism for Opaque {
            fn round_rho(&self) -> ZcdpBudget {
                ZcdpBudget::ZERO
            }
            fn evaluate(
                &self,
                _d: &[Vec<f64>],
                _h: &HistoryView<'_>,
                _r: &mut dyn RngCore,
            ) -> Message {
                Message::Vector(vec![0.0])
            }
            fn message_log_density(
                &self,
                _m: &Message,
                _d: &[Vec<f64>],
                _h: &HistoryView<'_>,
            ) -> Option<f64> {
                None
            }
        }
        let clients = vec![ClientSpec::new(0, 1, budget(0.0)).unwrap()];
        let schedule = Schedule::OnePass { clients: 1 };
        let grid = MechanismGrid::build(&schedule, |_, _| Arc::new(Opaque));
        let data = toy_data(1, 1);
        let t = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 1).unwrap();
        let err = transcript_density(&t, &data, &grid, &NullPolicy).unwrap_err();
        assert!(matches!(err, Error::DensityUnavailable { client: 0, round: 0 }));
    }

    #[test]
    fn log_round_trip_is_bit_exact() {
        let clients = three_clients();
        let data = toy_data(3, 2);
        let schedule = Schedule::Roundwise { clients: 3, rounds: 2 };
        let grid = noisy_grid(&schedule, 0.125);
        let t = run_protocol_on_data(&data, &clients, &schedule, &grid, &NullPolicy, 77).unwrap();
        let text = write_transcript_log(&t);
        let parsed = parse_transcript_log(&text).unwrap();
        assert_eq!(t, parsed);
        // Twice through changes nothing.
        assert_eq!(write_transcript_log(&parsed), text);
    }

    #[test]
    fn log_round_trip_survives_awkward_floats() {
        let schedule = Schedule::Sequential { clients: 2, active: vec![1] };
        let t = Transcript {
            initial_randomness: vec![-0.0, 1e-308, 0.1 + 0.2],
            rounds: vec![Round {
                messages: vec![
                    RoundMessage { charged: ZcdpBudget::ZERO, message: Message::Null },
                    RoundMessage {
                        charged: ZcdpBudget::new(0.1).unwrap(),
                        message: Message::Vector(vec![f64::MIN_POSITIVE, -1.5e300, 3.0]),
                    },
                ],
            }],
            schedule,
        };
        let parsed = parse_transcript_log(&write_transcript_log(&t)).unwrap();
        assert_eq!(t, parsed);
    }

    #[test]
    fn malformed_logs_rejected() {
        assert!(parse_transcript_log("nonsense\t1\n").is_err());
        assert!(parse_transcript_log("schedule\tone_pass\t1\n").is_err()); // missing init+msg
        let bad_null = "schedule\tone_pass\t1\ninit\t0\nmsg\t0\t0\t0.5\t1\t\n";
        assert!(parse_transcript_log(bad_null).is_err()); // null with charge
        let bad_float = "schedule\tone_pass\t1\ninit\t0\nmsg\t0\t0\tx\t0\t1\n";
        assert!(parse_transcript_log(bad_float).is_err());
    }

    #[test]
    fn sequential_schedule_validates_indices() {
        let s = Schedule::Sequential { clients: 2, active: vec![0, 2] };
        assert!(s.validate().is_err());
    }
}
