//! Dishonest-party strategies.
//!
//! Each strategy acts only through its party's legitimate interface: the server rewrites the
//! result ciphertext it returns, the provider chooses which positions it asks the client to hash,
//! and the client chooses which digest it sends back. Nothing here reads another party's state.

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, MockCiphertext, PublicKey, SlotVector};
use crate::protocol::run::{run_in_process, RunReport};
use crate::protocol::{Outcome, Party, ProtocolError};
use crate::scenario::{ConfigError, Mode, Scenario};
use crate::shuffle::ShufflePlan;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackStrategy {
    HonestServer,
    /// Server returns an encrypted parameter vector in place of the result.
    BaselineSilverPlatter,
    /// Server overwrites `k` uniformly chosen slots of one result with parameter values.
    OneShotTheft {
        k: usize,
    },
    /// Server steals one parameter per session over `rounds` sessions.
    PerRoundTheft {
        rounds: usize,
    },
    /// Provider asks the client to hash client-data slots instead of canaries.
    MaliciousProviderIndices,
    /// Client answers the check with a fabricated digest.
    LyingClient,
    /// Server overwrites exactly these slots (tamper sweeps).
    TargetedTheft {
        slots: Vec<usize>,
    },
    /// Client answers with a digest captured earlier.
    ReplayClient {
        digest: [u8; 32],
    },
}

impl AttackStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AttackStrategy::HonestServer => "honest",
            AttackStrategy::BaselineSilverPlatter => "silver-platter",
            AttackStrategy::OneShotTheft { .. } => "one-shot",
            AttackStrategy::PerRoundTheft { .. } => "per-round",
            AttackStrategy::MaliciousProviderIndices => "malicious-provider",
            AttackStrategy::LyingClient => "lying-client",
            AttackStrategy::TargetedTheft { .. } => "targeted",
            AttackStrategy::ReplayClient { .. } => "replay-client",
        }
    }

    /// Parses a CLI strategy name; `k` parameterizes the theft strategies.
    pub fn parse(name: &str, k: usize) -> Result<Self, ConfigError> {
        Ok(match name {
            "honest" | "honest-server" => AttackStrategy::HonestServer,
            "silver-platter" | "baseline-silver-platter" => AttackStrategy::BaselineSilverPlatter,
            "one-shot" | "one-shot-theft" => AttackStrategy::OneShotTheft { k },
            "per-round" | "per-round-theft" => AttackStrategy::PerRoundTheft { rounds: k },
            "malicious-provider" | "malicious-provider-indices" => {
                AttackStrategy::MaliciousProviderIndices
            }
            "lying-client" => AttackStrategy::LyingClient,
            other => return Err(ConfigError::Strategy(format!("unknown strategy {other:?}"))),
        })
    }

    pub fn dishonest_party(&self) -> Option<Party> {
        match self {
            AttackStrategy::HonestServer => None,
            AttackStrategy::BaselineSilverPlatter
            | AttackStrategy::OneShotTheft { .. }
            | AttackStrategy::PerRoundTheft { .. }
            | AttackStrategy::TargetedTheft { .. } => Some(Party::Server),
            AttackStrategy::MaliciousProviderIndices => Some(Party::Provider),
            AttackStrategy::LyingClient | AttackStrategy::ReplayClient { .. } => {
                Some(Party::Client)
            }
        }
    }

    pub fn validate(&self, s: &Scenario) -> Result<(), ConfigError> {
        let active = s.active();
        match self {
            AttackStrategy::OneShotTheft { k } if *k < 1 || *k > active => {
                Err(ConfigError::Strategy(format!(
                    "one-shot theft needs 1 <= k <= d+m = {active}, got {k}"
                )))
            }
            AttackStrategy::PerRoundTheft { rounds } if *rounds < 1 => Err(ConfigError::Strategy(
                "per-round theft needs at least one round".into(),
            )),
            AttackStrategy::TargetedTheft { slots } => {
                let mut sorted = slots.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != slots.len()
                    || slots.iter().any(|&p| p >= active)
                    || slots.is_empty()
                {
                    Err(ConfigError::Strategy(format!(
                        "targeted slots must be distinct and below {active}"
                    )))
                } else {
                    Ok(())
                }
            }
            AttackStrategy::MaliciousProviderIndices
            | AttackStrategy::LyingClient
            | AttackStrategy::ReplayClient { .. }
                if s.mode == Mode::Legacy =>
            {
                Err(ConfigError::Strategy(format!(
                    "{} needs the result-checking step (protected mode)",
                    self.name()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// The server's reply under `s.strategy`, plus the slots it overwrote.
pub fn server_result(
    s: &Scenario,
    engine: &Engine,
    client_pk: &PublicKey,
    honest: MockCiphertext,
    param_cts: &[MockCiphertext],
) -> Result<(MockCiphertext, Vec<usize>), ProtocolError> {
    let active = s.active();
    match &s.strategy {
        AttackStrategy::BaselineSilverPlatter => {
            let ct = baseline_silver_platter(engine, client_pk, param_cts, s.round)?;
            Ok((ct, (0..active).collect()))
        }
        AttackStrategy::OneShotTheft { k } => one_shot_theft(
            engine,
            &honest,
            param_cts,
            active,
            *k,
            s.sub_seed(Party::Server, "theft"),
        ),
        AttackStrategy::PerRoundTheft { .. } => one_shot_theft(
            engine,
            &honest,
            param_cts,
            active,
            1,
            s.sub_seed(Party::Server, "theft"),
        ),
        AttackStrategy::TargetedTheft { slots } => {
            let ct = overwrite_slots(engine, &honest, &param_cts[0], slots)?;
            Ok((ct, slots.clone()))
        }
        _ => Ok((honest, Vec::new())),
    }
}

/// Returns a copy of one parameter ciphertext, re-keyed to include the client key by adding a
/// client encryption of zero. Round `r` leaks the coefficient vector of degree `r mod (deg+1)`.
pub fn baseline_silver_platter(
    engine: &Engine,
    client_pk: &PublicKey,
    param_cts: &[MockCiphertext],
    round: u64,
) -> Result<MockCiphertext, ProtocolError> {
    let which = (round % param_cts.len() as u64) as usize;
    let zero = engine.encrypt(&SlotVector::zeros(engine.slots()), client_pk)?;
    Ok(engine.add(&param_cts[which], &zero)?)
}

/// Overwrites `k` distinct uniformly chosen active slots of the honest result with the degree-0
/// parameter at the same slot.
pub fn one_shot_theft(
    engine: &Engine,
    honest: &MockCiphertext,
    param_cts: &[MockCiphertext],
    active: usize,
    k: usize,
    seed: u64,
) -> Result<(MockCiphertext, Vec<usize>), ProtocolError> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut slots = index::sample(&mut rng, active, k).into_vec();
    slots.sort_unstable();
    let ct = overwrite_slots(engine, honest, &param_cts[0], &slots)?;
    Ok((ct, slots))
}

fn overwrite_slots(
    engine: &Engine,
    honest: &MockCiphertext,
    source: &MockCiphertext,
    slots: &[usize],
) -> Result<MockCiphertext, ProtocolError> {
    let n = engine.slots();
    let mut take = vec![0.0; n];
    for &p in slots {
        take[p] = 1.0;
    }
    let keep: Vec<f64> = take.iter().map(|t| 1.0 - t).collect();
    let kept = engine.mult_plain(honest, &SlotVector::new(keep)?)?;
    let stolen = engine.mult_plain(source, &SlotVector::new(take)?)?;
    Ok(engine.add(&kept, &stolen)?)
}

/// A digest unrelated to anything the client decrypted.
pub fn lying_client_digest(s: &Scenario) -> [u8; 32] {
    let mut out = [0u8; 32];
    s.rng(Party::Client, "lie").fill_bytes(&mut out);
    out
}

/// Positions of the first `m` client-data slots in the shuffled layout.
pub fn malicious_positions(plan: &ShufflePlan) -> Vec<u32> {
    let inv = plan.permutation().inverse();
    (0..inv.len())
        .filter(|&p| inv[p] < plan.d())
        .take(plan.m())
        .map(|p| p as u32)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub strategy: String,
    /// The provider's result check caught the deviation.
    pub detected: bool,
    pub aborted: bool,
    /// f-coefficients that reached the client in plaintext, verified against ground truth.
    pub parameters_leaked: usize,
    pub rounds_used: usize,
}

fn leak_tolerance(s: &Scenario) -> f64 {
    (4.0 * s.analytic_noise_bound() / s.r_min).max(1e-12)
}

/// Original slot indices (in `0..d`) whose true coefficient the client received.
pub fn leaked_slots(s: &Scenario, report: &RunReport) -> Vec<usize> {
    let Outcome::Delivered { value } = &report.outcome else {
        return Vec::new();
    };
    let f = s.provider_model();
    let tol = leak_tolerance(s);
    let (degree, candidates): (usize, Vec<usize>) = match &s.strategy {
        AttackStrategy::BaselineSilverPlatter => (
            (s.round % (s.degree as u64 + 1)) as usize,
            (0..s.d).collect(),
        ),
        AttackStrategy::OneShotTheft { .. }
        | AttackStrategy::PerRoundTheft { .. }
        | AttackStrategy::TargetedTheft { .. } => {
            let orig = report
                .targeted_slots
                .iter()
                .map(|&p| match (&report.revealed_permutation, s.mode) {
                    (Some(perm), Mode::Sonni) => perm.inverse()[p],
                    _ => p,
                })
                .filter(|&o| o < s.d)
                .collect();
            (0, orig)
        }
        _ => return Vec::new(),
    };
    candidates
        .into_iter()
        .filter(|&i| (value[i] - f.coeffs()[degree][i]).abs() <= tol)
        .collect()
}

pub fn assess(s: &Scenario, report: &RunReport) -> AttackOutcome {
    let detected = matches!(
        &report.outcome,
        Outcome::Aborted {
            by: Party::Provider,
            ..
        }
    );
    AttackOutcome {
        strategy: s.strategy.name().to_string(),
        detected,
        aborted: report.outcome.is_aborted(),
        parameters_leaked: leaked_slots(s, report).len(),
        rounds_used: 1,
    }
}

/// Runs `rounds` sessions with fresh seeds, stealing one slot per session, until the provider
/// aborts or every round succeeds.
pub fn per_round_theft(base: &Scenario, rounds: usize) -> Result<AttackOutcome, ConfigError> {
    let mut total = AttackOutcome {
        strategy: "per-round".into(),
        detected: false,
        aborted: false,
        parameters_leaked: 0,
        rounds_used: 0,
    };
    for r in 0..rounds {
        let s = Scenario {
            round: base.round + r as u64,
            strategy: AttackStrategy::PerRoundTheft { rounds },
            ..base.clone()
        };
        s.validate()?;
        let report = run_in_process(&s, false);
        let o = assess(&s, &report);
        total.rounds_used += 1;
        total.parameters_leaked += o.parameters_leaked;
        if o.aborted {
            total.detected = o.detected;
            total.aborted = true;
            break;
        }
    }
    Ok(total)
}
