//! Simulator for three-party oblivious inference with canary-based result checking.
//!
//! A client holds private data `x`, a provider holds a private slot-wise polynomial model `f`,
//! and an untrusted server evaluates `f(x)` on multikey ciphertexts. The provider hides `m`
//! canary slots among the client's `d` slots, masks the result, and only reveals the mask after
//! the client proves, by hashing the quantized canaries, that the server computed honestly.
//!
//! The homomorphic engine is a mock with explicit noise bookkeeping, not real cryptography.

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod harness;
pub mod protocol;
pub mod scenario;
pub mod shuffle;
pub mod workload;
