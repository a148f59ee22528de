//! TCP transport.
//!
//! Each pair of parties shares one connection. The party with the lower id dials and sends a
//! single preface byte carrying its id; the higher id listens. Every party reads each of its
//! connections on a dedicated thread that forwards frame bodies into one channel, and the party
//! itself stays single-threaded: it blocks on that channel, feeds the state machine, and writes
//! the replies.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::wire;
use crate::protocol::run::{log_entry, resolve, RunOptions, RunReport};
use crate::protocol::{
    Client, Outcome, Party, PartyMachine, Provider, Server, Transcript, TranscriptEntry,
};
use crate::scenario::Scenario;

enum Event {
    Frame(Party, Vec<u8>),
    Closed,
    Broken(Party, String),
}

fn spawn_reader(from: Party, mut stream: TcpStream, tx: Sender<Event>) {
    thread::spawn(move || loop {
        let ev = match wire::read_body(&mut stream) {
            Ok(Some(body)) => Event::Frame(from, body),
            Ok(None) => Event::Closed,
            Err(e) => Event::Broken(from, e.to_string()),
        };
        let last = !matches!(ev, Event::Frame(..));
        if tx.send(ev).is_err() || last {
            return;
        }
    });
}

/// Who dials whom: a party connects to every peer with a larger id.
fn dials(me: Party, peer: Party) -> bool {
    me.id() < peer.id()
}

fn connect_retry(addr: SocketAddr, deadline: Instant) -> io::Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Opens one connection per peer. `listener` must be present when some peer dials us.
pub fn establish(
    me: Party,
    listener: Option<&TcpListener>,
    peers: &BTreeMap<Party, SocketAddr>,
    timeout: Duration,
) -> io::Result<BTreeMap<Party, TcpStream>> {
    let deadline = Instant::now() + timeout;
    let mut conns = BTreeMap::new();
    for (&peer, &addr) in peers {
        if peer != me && dials(me, peer) {
            let mut s = connect_retry(addr, deadline)?;
            s.write_all(&[me.id()])?;
            s.set_nodelay(true)?;
            conns.insert(peer, s);
        }
    }
    let expected = Party::ALL
        .iter()
        .filter(|&&p| p != me && dials(p, me))
        .count();
    if expected > 0 {
        let listener = listener
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no listen address"))?;
        listener.set_nonblocking(true)?;
        let mut accepted = 0;
        while accepted < expected {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_read_timeout(Some(timeout))?;
                    let mut id = [0u8; 1];
                    s.read_exact(&mut id)?;
                    s.set_read_timeout(None)?;
                    s.set_nodelay(true)?;
                    let peer = Party::from_id(id[0])
                        .filter(|&p| p != me && dials(p, me) && !conns.contains_key(&p))
                        .ok_or_else(|| {
                            io::Error::new(io::ErrorKind::InvalidData, "bad connection preface")
                        })?;
                    conns.insert(peer, s);
                    accepted += 1;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(io::Error::new(
                            io::ErrorKind::TimedOut,
                            "peers did not connect",
                        ));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(conns)
}

/// What one party produced: its final state, the frames it sent, and why it stopped early.
pub struct NodeReport<M> {
    pub machine: M,
    pub sent: Vec<(TranscriptEntry, Vec<u8>)>,
    pub failure: Option<Outcome>,
}

/// Drives one party over established connections until it is done or the session breaks.
pub fn drive<M: PartyMachine>(
    mut machine: M,
    conns: BTreeMap<Party, TcpStream>,
    opts: &RunOptions,
) -> NodeReport<M> {
    let me = machine.party();
    let start = Instant::now();
    let (tx, rx): (Sender<Event>, Receiver<Event>) = mpsc::channel();
    for (&peer, s) in &conns {
        match s.try_clone() {
            Ok(r) => spawn_reader(peer, r, tx.clone()),
            Err(e) => {
                return NodeReport {
                    machine,
                    sent: Vec::new(),
                    failure: Some(Outcome::TransportFailure {
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    drop(tx);
    let mut conns = conns;
    let mut sent = Vec::new();
    let mut open: usize = conns.len();

    let send = |out: Vec<(Party, crate::protocol::ProtocolMessage)>,
                conns: &mut BTreeMap<Party, TcpStream>,
                sent: &mut Vec<(TranscriptEntry, Vec<u8>)>|
     -> Result<(), Outcome> {
        for (to, msg) in out {
            let frame = wire::encode_frame(&msg);
            let entry = log_entry(me, to, &msg, &frame, opts.debug, start);
            let stream = conns
                .get_mut(&to)
                .ok_or_else(|| Outcome::TransportFailure {
                    reason: format!("{me} has no connection to {to}"),
                })?;
            stream
                .write_all(&frame)
                .map_err(|e| Outcome::TransportFailure {
                    reason: format!("{me} -> {to}: {e}"),
                })?;
            sent.push((entry, frame));
        }
        Ok(())
    };

    let mut failure = match machine.start() {
        Ok(out) => send(out, &mut conns, &mut sent).err(),
        Err(e) => Some(Outcome::Aborted {
            by: me,
            reason: e.to_string(),
        }),
    };

    while failure.is_none() && !machine.is_done() {
        let ev = match rx.recv_timeout(opts.timeout) {
            Ok(ev) => ev,
            Err(RecvTimeoutError::Timeout) => {
                failure = Some(Outcome::TransportFailure {
                    reason: format!("{me} timed out waiting for a message"),
                });
                break;
            }
            Err(RecvTimeoutError::Disconnected) => {
                failure = Some(Outcome::TransportFailure {
                    reason: format!("{me} lost every connection"),
                });
                break;
            }
        };
        match ev {
            Event::Frame(from, body) => match wire::decode_body(&body) {
                Ok(msg) => match machine.handle(from, msg) {
                    Ok(out) => failure = send(out, &mut conns, &mut sent).err(),
                    Err(e) => {
                        failure = Some(Outcome::Aborted {
                            by: me,
                            reason: e.to_string(),
                        })
                    }
                },
                Err(e) => {
                    failure = Some(Outcome::Aborted {
                        by: me,
                        reason: format!("malformed frame from {from}: {e}"),
                    })
                }
            },
            // A peer that finished may hang up before we are done; only give up once nobody
            // is left to talk to.
            Event::Closed => {
                open -= 1;
                if open == 0 {
                    failure = Some(Outcome::TransportFailure {
                        reason: format!("{me}: all peers closed before the session ended"),
                    });
                }
            }
            Event::Broken(from, reason) => {
                failure = Some(Outcome::TransportFailure {
                    reason: format!("{me} <- {from}: {reason}"),
                });
            }
        }
    }
    for s in conns.values() {
        let _ = s.shutdown(Shutdown::Write);
    }
    NodeReport {
        machine,
        sent,
        failure,
    }
}

fn node_failure(reports: &[&Option<Outcome>]) -> Option<Outcome> {
    // an explicit abort explains a session better than the hang-ups it causes elsewhere
    let mut failures = reports.iter().filter_map(|f| f.as_ref());
    let all: Vec<&Outcome> = failures.by_ref().collect();
    all.iter()
        .find(|f| f.is_aborted())
        .or_else(|| all.first())
        .map(|f| (*f).clone())
}

fn assemble(
    client: NodeReport<Client>,
    provider: NodeReport<Provider>,
    server: NodeReport<Server>,
) -> RunReport {
    let failure = node_failure(&[&client.failure, &provider.failure, &server.failure]);
    let outcome = resolve(&client.machine, &provider.machine, failure);
    let mut sent: Vec<(TranscriptEntry, Vec<u8>)> = client
        .sent
        .into_iter()
        .chain(provider.sent)
        .chain(server.sent)
        .collect();
    sent.sort_by_key(|(e, _)| (e.seq, e.from, e.to));
    let mut transcript = Transcript::default();
    let mut frames = Vec::with_capacity(sent.len());
    for (e, f) in sent {
        transcript.push(e);
        frames.push(f);
    }
    transcript
        .views
        .insert(Party::Client, client.machine.view().to_vec());
    transcript
        .views
        .insert(Party::Provider, provider.machine.view().to_vec());
    transcript
        .views
        .insert(Party::Server, server.machine.view().to_vec());
    transcript.outcome = Some(outcome.clone());
    RunReport {
        outcome,
        transcript,
        targeted_slots: server.machine.targeted_slots().to_vec(),
        revealed_permutation: client.machine.permutation().cloned(),
        frames,
        secret_material: vec![
            client.machine.secret_material(),
            provider.machine.secret_material(),
        ],
    }
}

fn failed_setup(scenario: &Scenario, reason: String) -> RunReport {
    let outcome = Outcome::TransportFailure { reason };
    let transcript = Transcript {
        outcome: Some(outcome.clone()),
        ..Default::default()
    };
    RunReport {
        outcome,
        transcript,
        targeted_slots: Vec::new(),
        revealed_permutation: None,
        frames: Vec::new(),
        secret_material: vec![
            Client::new(scenario).secret_material(),
            Provider::new(scenario).secret_material(),
        ],
    }
}

fn spawn_node<M, F>(
    me: Party,
    listener: Option<TcpListener>,
    peers: BTreeMap<Party, SocketAddr>,
    opts: RunOptions,
    make: F,
) -> thread::JoinHandle<NodeReport<M>>
where
    M: PartyMachine + 'static,
    F: FnOnce() -> M + Send + 'static,
{
    thread::spawn(move || {
        let machine = make();
        match establish(me, listener.as_ref(), &peers, opts.timeout) {
            Ok(conns) => drive(machine, conns, &opts),
            Err(e) => NodeReport {
                machine,
                sent: Vec::new(),
                failure: Some(Outcome::TransportFailure {
                    reason: format!("{me} could not connect: {e}"),
                }),
            },
        }
    })
}

/// Runs the three parties on local threads talking over loopback TCP.
pub fn run_tcp_local(scenario: &Scenario, opts: &RunOptions) -> RunReport {
    let bind = || TcpListener::bind("127.0.0.1:0");
    let (provider_l, server_l) = match (bind(), bind()) {
        (Ok(p), Ok(s)) => (p, s),
        (Err(e), _) | (_, Err(e)) => return failed_setup(scenario, format!("cannot bind: {e}")),
    };
    let mut peers = BTreeMap::new();
    for (party, l) in [(Party::Provider, &provider_l), (Party::Server, &server_l)] {
        match l.local_addr() {
            Ok(a) => {
                peers.insert(party, a);
            }
            Err(e) => return failed_setup(scenario, e.to_string()),
        }
    }

    let (s1, s2, s3) = (scenario.clone(), scenario.clone(), scenario.clone());
    let server = spawn_node(
        Party::Server,
        Some(server_l),
        peers.clone(),
        opts.clone(),
        move || Server::new(&s3),
    );
    let provider = spawn_node(
        Party::Provider,
        Some(provider_l),
        peers.clone(),
        opts.clone(),
        move || Provider::new(&s2),
    );
    let client = spawn_node(Party::Client, None, peers, opts.clone(), move || {
        Client::new(&s1)
    });

    match (client.join(), provider.join(), server.join()) {
        (Ok(c), Ok(p), Ok(s)) => assemble(c, p, s),
        _ => failed_setup(scenario, "a party thread panicked".into()),
    }
}

/// Result of running a single party as its own process.
pub struct ServeReport {
    pub party: Party,
    /// Client: the session outcome. Provider and server: `Delivered` with no value when their
    /// part completed, otherwise the abort or failure they saw.
    pub outcome: Outcome,
    pub transcript: Transcript,
}

fn finish<M: PartyMachine>(report: NodeReport<M>, outcome: Outcome) -> ServeReport {
    let party = report.machine.party();
    let mut transcript = Transcript::default();
    for (e, _) in report.sent {
        transcript.push(e);
    }
    transcript
        .views
        .insert(party, report.machine.view().to_vec());
    transcript.outcome = Some(outcome.clone());
    ServeReport {
        party,
        outcome,
        transcript,
    }
}

/// Runs one party: binds `listen` (needed by provider and server), dials the peers it is
/// responsible for, and plays the session to its end.
pub fn serve(
    party: Party,
    listen: Option<SocketAddr>,
    peers: &BTreeMap<Party, SocketAddr>,
    scenario: &Scenario,
    opts: &RunOptions,
) -> io::Result<ServeReport> {
    let listener = listen.map(TcpListener::bind).transpose()?;
    let conns = establish(party, listener.as_ref(), peers, opts.timeout)?;
    let done = Outcome::Delivered { value: Vec::new() };
    Ok(match party {
        Party::Client => {
            let r = drive(Client::new(scenario), conns, opts);
            let outcome = r.failure.clone().unwrap_or_else(|| {
                r.machine
                    .outcome()
                    .cloned()
                    .unwrap_or(Outcome::TransportFailure {
                        reason: "session ended without an outcome".into(),
                    })
            });
            finish(r, outcome)
        }
        Party::Provider => {
            let r = drive(Provider::new(scenario), conns, opts);
            let outcome = r
                .failure
                .clone()
                .or_else(|| r.machine.verdict().cloned())
                .unwrap_or(done);
            finish(r, outcome)
        }
        Party::Server => {
            let r = drive(Server::new(scenario), conns, opts);
            let outcome = r.failure.clone().unwrap_or(done);
            finish(r, outcome)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tcp_matches_in_process() {
        let s = Scenario::default();
        let local = crate::protocol::run::run_in_process(&s, false);
        let tcp = run_tcp_local(&s, &RunOptions::default());
        assert!(tcp.outcome.is_delivered(), "{:?}", tcp.outcome);
        assert_eq!(local.outcome, tcp.outcome);
        assert_eq!(
            local.transcript.canonical_lines(),
            tcp.transcript.canonical_lines()
        );
        assert_eq!(local.frames, tcp.frames);
    }

    #[test]
    fn server_rejects_unknown_tag() {
        let s = Scenario::default();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let opts = RunOptions {
            timeout: Duration::from_secs(5),
            ..Default::default()
        };
        let handle = thread::spawn(move || {
            let conns = establish(
                Party::Server,
                Some(&listener),
                &BTreeMap::new(),
                opts.timeout,
            )
            .unwrap();
            drive(Server::new(&s), conns, &opts)
        });
        let mut client = TcpStream::connect(addr).unwrap();
        client.write_all(&[1]).unwrap();
        let mut provider = TcpStream::connect(addr).unwrap();
        provider.write_all(&[2]).unwrap();
        provider.write_all(&[0, 0, 0, 2, 0x09, 0]).unwrap();
        let report = handle.join().unwrap();
        match report.failure {
            Some(Outcome::Aborted {
                by: Party::Server,
                reason,
            }) => assert!(reason.contains("malformed")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(report.sent.is_empty());
    }

    #[test]
    fn dropped_connection_is_a_transport_failure() {
        let s = Scenario::default();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let opts = RunOptions {
            timeout: Duration::from_secs(5),
            ..Default::default()
        };
        let handle = thread::spawn(move || {
            let conns = establish(
                Party::Server,
                Some(&listener),
                &BTreeMap::new(),
                opts.timeout,
            )
            .unwrap();
            drive(Server::new(&s), conns, &opts)
        });
        let mut client = TcpStream::connect(addr).unwrap();
        client.write_all(&[1]).unwrap();
        let mut provider = TcpStream::connect(addr).unwrap();
        provider.write_all(&[2]).unwrap();
        // half a length prefix, then hang up
        provider.write_all(&[0, 0]).unwrap();
        drop(provider);
        drop(client);
        let report = handle.join().unwrap();
        assert!(
            matches!(report.failure, Some(Outcome::TransportFailure { .. })),
            "{:?}",
            report.failure
        );
    }
}
