//! The three-party oblivious inference protocol.
//!
//! Parties are sans-IO state machines ([`PartyMachine`]): they consume one message and return
//! the messages to send. Drivers in [`run`] (in-process) and [`crate::harness::transport`] (TCP)
//! move frames between them and assemble the [`Transcript`].
//!
//! Message flow in protected mode, by schedule slot:
//!
//! | slot | from     | to       | message         |
//! |------|----------|----------|-----------------|
//! | 1    | client   | provider | `SubmitInput`   |
//! | 2    | provider | server   | `EvalRequest`   |
//! | 3    | server   | client   | `EvalResult`    |
//! | 4    | server   | provider | `EvalResult`    |
//! | 5    | provider | client   | `CheckRequest`  |
//! | 6    | client   | provider | `CheckResponse` (or `Abort`) |
//! | 7    | provider | client   | `Unmask` (or `Abort`) |
//!
//! Legacy mode stops after slot 5: the provider's `CheckRequest` carries its partial decryption
//! of the unmasked result and the client opens it directly.

mod party;
pub mod run;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EngineError, MockCiphertext, PartialShare, SlotVector};
use crate::shuffle::ShuffleError;
use crate::workload::WorkloadError;

pub use party::{Client, PartyMachine, Provider, Server};
pub use run::{run_protocol, RunReport};
pub use transcript::{Transcript, TranscriptEntry, ViewEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Client,
    Provider,
    Server,
}

impl Party {
    pub const ALL: [Party; 3] = [Party::Client, Party::Provider, Party::Server];

    pub fn id(self) -> u8 {
        match self {
            Party::Client => 1,
            Party::Provider => 2,
            Party::Server => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Party> {
        match id {
            1 => Some(Party::Client),
            2 => Some(Party::Provider),
            3 => Some(Party::Server),
            _ => None,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Client => "client",
            Party::Provider => "provider",
            Party::Server => "server",
        })
    }
}

impl std::str::FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "client" => Ok(Party::Client),
            "provider" => Ok(Party::Provider),
            "server" => Ok(Party::Server),
            other => Err(format!("unknown party {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProtocolMessage {
    SubmitInput {
        ct: MockCiphertext,
    },
    EvalRequest {
        input_ct: MockCiphertext,
        param_cts: Vec<MockCiphertext>,
        degree: u8,
    },
    EvalResult {
        result_ct: MockCiphertext,
    },
    CheckRequest {
        masked_ct: MockCiphertext,
        provider_share: PartialShare,
        canary_positions: Vec<u32>,
    },
    CheckResponse {
        hash_digest: [u8; 32],
    },
    Unmask {
        rand: SlotVector,
        permutation: Vec<u32>,
    },
    Abort {
        reason: String,
    },
}

impl ProtocolMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ProtocolMessage::SubmitInput { .. } => 0x01,
            ProtocolMessage::EvalRequest { .. } => 0x02,
            ProtocolMessage::EvalResult { .. } => 0x03,
            ProtocolMessage::CheckRequest { .. } => 0x04,
            ProtocolMessage::CheckResponse { .. } => 0x05,
            ProtocolMessage::Unmask { .. } => 0x06,
            ProtocolMessage::Abort { .. } => 0x07,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolMessage::SubmitInput { .. } => "SubmitInput",
            ProtocolMessage::EvalRequest { .. } => "EvalRequest",
            ProtocolMessage::EvalResult { .. } => "EvalResult",
            ProtocolMessage::CheckRequest { .. } => "CheckRequest",
            ProtocolMessage::CheckResponse { .. } => "CheckResponse",
            ProtocolMessage::Unmask { .. } => "Unmask",
            ProtocolMessage::Abort { .. } => "Abort",
        }
    }

    /// Observable shape: ciphertext lengths and keysets, vector lengths. No values.
    pub fn shape(&self) -> String {
        fn ct(c: &MockCiphertext) -> String {
            let keys: Vec<String> = c.keyset().iter().map(|k| k.to_string()).collect();
            format!("ct[{}]{{{}}}", c.len(), keys.join(","))
        }
        match self {
            ProtocolMessage::SubmitInput { ct: c } => ct(c),
            ProtocolMessage::EvalRequest {
                input_ct,
                param_cts,
                degree,
            } => format!(
                "{};params={}x{};deg={}",
                ct(input_ct),
                param_cts.len(),
                param_cts.first().map(ct).unwrap_or_default(),
                degree
            ),
            ProtocolMessage::EvalResult { result_ct } => ct(result_ct),
            ProtocolMessage::CheckRequest {
                masked_ct,
                canary_positions,
                ..
            } => format!("{};share;pos[{}]", ct(masked_ct), canary_positions.len()),
            ProtocolMessage::CheckResponse { .. } => "digest[32]".into(),
            ProtocolMessage::Unmask { rand, permutation } => {
                format!("rand[{}];perm[{}]", rand.len(), permutation.len())
            }
            ProtocolMessage::Abort { .. } => "reason".into(),
        }
    }
}

/// Fixed position of a message in the exchange, identical across transports.
pub fn schedule_slot(from: Party, to: Party, msg: &ProtocolMessage) -> u32 {
    use ProtocolMessage::*;
    match (from, to, msg) {
        (Party::Client, Party::Provider, SubmitInput { .. }) => 1,
        (Party::Provider, Party::Server, EvalRequest { .. }) => 2,
        (Party::Server, Party::Client, EvalResult { .. }) => 3,
        (Party::Server, Party::Provider, EvalResult { .. }) => 4,
        (Party::Provider, Party::Client, CheckRequest { .. }) => 5,
        (Party::Client, Party::Provider, CheckResponse { .. } | Abort { .. }) => 6,
        (Party::Provider, Party::Client, Unmask { .. } | Abort { .. }) => 7,
        _ => 99,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Delivered { value: Vec<f64> },
    Aborted { by: Party, reason: String },
    TransportFailure { reason: String },
}

impl Outcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Outcome::Delivered { .. })
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self, Outcome::Aborted { .. })
    }

    pub fn delivered(&self) -> Option<&[f64]> {
        match self {
            Outcome::Delivered { value } => Some(value),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{party} did not expect {message} from {from}")]
    Unexpected {
        party: Party,
        from: Party,
        message: &'static str,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Invalid(String),
}

/// Uniform quantizer: cell index `floor(v / step + 1/2)`.
pub fn quantize(v: f64, step: f64) -> i64 {
    (v / step + 0.5).floor() as i64
}

/// Distance from `v` to the nearest quantization cell boundary, in units of `step`.
pub fn boundary_distance(v: f64, step: f64) -> f64 {
    let t = v / step;
    0.5 - (t - t.round()).abs()
}

const HASH_DOMAIN: u8 = 0x48;

/// SHA-256 over a domain byte and the little-endian cell indices of `values`, in order.
pub fn check_digest(values: &[f64], step: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([HASH_DOMAIN]);
    for &v in values {
        h.update(quantize(v, step).to_le_bytes());
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_rounds_half_up() {
        assert_eq!(quantize(0.0, 1e-3), 0);
        assert_eq!(quantize(0.0014, 1e-3), 1);
        assert_eq!(quantize(0.0016, 1e-3), 2);
        assert_eq!(quantize(-0.0014, 1e-3), -1);
        assert_eq!(quantize(2.5, 1.0), 3);
        assert_eq!(quantize(-2.5, 1.0), -2);
    }

    #[test]
    fn boundary_distance_extremes() {
        assert!((boundary_distance(0.0, 1.0) - 0.5).abs() < 1e-12);
        assert!(boundary_distance(0.5, 1.0).abs() < 1e-12);
        assert!((boundary_distance(0.25, 1.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn digest_sensitivity() {
        let eps = 1e-3;
        let v = [0.1234, -0.5, 0.75];
        let base = check_digest(&v, eps);
        assert_eq!(base, check_digest(&[0.12341, -0.50001, 0.75002], eps));
        let mut tampered = v;
        tampered[1] += 10.0 * eps;
        assert_ne!(base, check_digest(&tampered, eps));
        assert_ne!(base, check_digest(&[0.75, -0.5, 0.1234], eps));
    }

    #[test]
    fn party_ids() {
        for p in Party::ALL {
            assert_eq!(Party::from_id(p.id()), Some(p));
            assert_eq!(p.to_string().parse::<Party>().unwrap(), p);
        }
        assert_eq!(Party::from_id(0), None);
    }
}
