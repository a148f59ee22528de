//! Session drivers.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{
    schedule_slot, Client, Outcome, Party, PartyMachine, ProtocolMessage, Provider, Server,
    Transcript, TranscriptEntry,
};
use crate::harness::transport;
use crate::harness::wire;
use crate::scenario::{ConfigError, Scenario};
use crate::shuffle::Permutation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in-process" | "inprocess" | "local" => Ok(TransportKind::InProcess),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub transport: TransportKind,
    /// Include hex payloads in the transcript.
    pub debug: bool,
    /// Per-message receive timeout for network transports.
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            transport: TransportKind::InProcess,
            debug: false,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub transcript: Transcript,
    /// Slots the server overwrote, in shuffled layout.
    pub targeted_slots: Vec<usize>,
    /// Permutation the client learned at unmask time.
    pub revealed_permutation: Option<Permutation>,
    /// Every encoded frame that crossed the transport, in schedule order.
    pub frames: Vec<Vec<u8>>,
    /// Secret key bytes of the client and provider, for custody audits.
    pub secret_material: Vec<[u8; 32]>,
}

pub(crate) fn log_entry(
    from: Party,
    to: Party,
    msg: &ProtocolMessage,
    frame: &[u8],
    debug: bool,
    start: Instant,
) -> TranscriptEntry {
    TranscriptEntry {
        seq: schedule_slot(from, to, msg),
        from,
        to,
        tag: msg.name().to_string(),
        shape: msg.shape(),
        digest: hex::encode(Sha256::digest(frame)),
        payload: debug.then(|| hex::encode(&frame[4..])),
        ts_us: start.elapsed().as_micros() as u64,
    }
}

/// Session outcome from the parties' final states: a provider abort wins, otherwise the client's.
pub(crate) fn resolve(client: &Client, provider: &Provider, failure: Option<Outcome>) -> Outcome {
    if let Some(f) = failure {
        return f;
    }
    if let Some(v @ Outcome::Aborted { .. }) = provider.verdict() {
        return v.clone();
    }
    client
        .outcome()
        .cloned()
        .unwrap_or(Outcome::TransportFailure {
            reason: "session ended without an outcome".into(),
        })
}

/// Runs one session. Validates the scenario first.
pub fn run_protocol(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport, ConfigError> {
    scenario.validate()?;
    Ok(match opts.transport {
        TransportKind::InProcess => run_in_process(scenario, opts.debug),
        TransportKind::Tcp => transport::run_tcp_local(scenario, opts),
    })
}

/// Deterministic single-threaded driver: a FIFO of frames, each encoded and decoded on the way.
pub fn run_in_process(scenario: &Scenario, debug: bool) -> RunReport {
    let start = Instant::now();
    let mut client = Client::new(scenario);
    let mut provider = Provider::new(scenario);
    let mut server = Server::new(scenario);
    let mut sent: Vec<(TranscriptEntry, Vec<u8>)> = Vec::new();
    let mut queue: VecDeque<(Party, Party, Vec<u8>)> = VecDeque::new();
    let mut failure = None;

    let enqueue = |from: Party,
                   out: Vec<(Party, ProtocolMessage)>,
                   sent: &mut Vec<_>,
                   q: &mut VecDeque<_>| {
        for (to, msg) in out {
            let frame = wire::encode_frame(&msg);
            sent.push((
                log_entry(from, to, &msg, &frame, debug, start),
                frame.clone(),
            ));
            q.push_back((from, to, frame));
        }
    };

    match client.start() {
        Ok(out) => enqueue(Party::Client, out, &mut sent, &mut queue),
        Err(e) => {
            failure = Some(Outcome::Aborted {
                by: Party::Client,
                reason: e.to_string(),
            })
        }
    }

    while let Some((from, to, frame)) = queue.pop_front() {
        let msg = match wire::decode_frame(&frame) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(Outcome::Aborted {
                    by: to,
                    reason: format!("malformed frame: {e}"),
                });
                break;
            }
        };
        let machine: &mut dyn PartyMachine = match to {
            Party::Client => &mut client,
            Party::Provider => &mut provider,
            Party::Server => &mut server,
        };
        match machine.handle(from, msg) {
            Ok(out) => enqueue(to, out, &mut sent, &mut queue),
            Err(e) => {
                failure = Some(Outcome::Aborted {
                    by: to,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }

    let outcome = resolve(&client, &provider, failure);
    // schedule order, as the network drivers report it
    sent.sort_by_key(|(e, _)| (e.seq, e.from, e.to));
    let mut transcript = Transcript::default();
    let mut frames = Vec::with_capacity(sent.len());
    for (e, f) in sent {
        transcript.push(e);
        frames.push(f);
    }
    transcript
        .views
        .insert(Party::Client, client.view().to_vec());
    transcript
        .views
        .insert(Party::Provider, provider.view().to_vec());
    transcript
        .views
        .insert(Party::Server, server.view().to_vec());
    transcript.outcome = Some(outcome.clone());
    RunReport {
        outcome,
        transcript,
        targeted_slots: server.targeted_slots().to_vec(),
        revealed_permutation: client.permutation().cloned(),
        frames,
        secret_material: vec![client.secret_material(), provider.secret_material()],
    }
}
