//! Scenario parameters shared by every party, seed derivation, and validation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::AttackStrategy;
use crate::engine::NoiseModel;
use crate::protocol::Party;
use crate::workload::SlotwiseModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("slot count {0} is not a power of two")]
    SlotsNotPowerOfTwo(usize),
    #[error("d + m = {used} exceeds the slot count {slots}")]
    TooManySlots { used: usize, slots: usize },
    #[error("legacy mode carries no canaries but m = {0}")]
    LegacyWithCanaries(usize),
    #[error("protected mode needs at least one canary slot (m = 0)")]
    NoCanaries,
    #[error("model degree must be at least 1")]
    Degree,
    #[error("model file has degree {file} but the scenario asks for {scenario}")]
    ModelDegree { file: usize, scenario: usize },
    #[error("model file governs {file} slots but d = {d}")]
    ModelWidth { file: usize, d: usize },
    #[error("client input has {len} values but d = {d}")]
    InputLength { len: usize, d: usize },
    #[error("quantization step {step} must exceed twice the analytic noise bound {bound:e}")]
    QuantizationTooFine { step: f64, bound: f64 },
    #[error("mask floor r_min = {0} must lie in (0, 1]")]
    MaskFloor(f64),
    #[error("noise parameters must be finite and non-negative")]
    Noise,
    #[error("invalid range [{0}, {1}]")]
    Range(f64, f64),
    #[error("strategy parameter out of range: {0}")]
    Strategy(String),
    #[error("{0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Outsourced inference without canaries or result checking.
    Legacy,
    /// Shuffled canary slots, masked result checking and secure abort.
    Sonni,
}

/// Deterministic test hooks. Never enabled by configuration files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TestHooks {
    pub identity_plan: bool,
    pub identity_mask: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub slots: usize,
    pub d: usize,
    pub m: usize,
    pub degree: usize,
    pub input_range: (f64, f64),
    pub coeff_range: (f64, f64),
    pub quant_step: f64,
    pub encrypt_noise: f64,
    pub op_noise: f64,
    pub r_min: f64,
    pub mode: Mode,
    pub strategy: AttackStrategy,
    pub master_seed: u64,
    /// Per-party seed overrides; otherwise derived from the master seed and round.
    pub client_seed: Option<u64>,
    pub provider_seed: Option<u64>,
    pub server_seed: Option<u64>,
    pub round: u64,
    /// Explicit client input; random from the client seed otherwise.
    pub input: Option<Vec<f64>>,
    /// Explicit provider model; random from the provider seed otherwise.
    pub model: Option<SlotwiseModel>,
    pub boundary_avoidance: bool,
    pub enforce_noise_margin: bool,
    pub hooks: TestHooks,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            slots: 16,
            d: 8,
            m: 2,
            degree: 2,
            input_range: (-1.0, 1.0),
            coeff_range: (-1.0, 1.0),
            quant_step: 1e-3,
            encrypt_noise: 1e-9,
            op_noise: 1e-9,
            r_min: 0.1,
            mode: Mode::Sonni,
            strategy: AttackStrategy::HonestServer,
            master_seed: 1,
            client_seed: None,
            provider_seed: None,
            server_seed: None,
            round: 0,
            input: None,
            model: None,
            boundary_avoidance: true,
            enforce_noise_margin: true,
            hooks: TestHooks::default(),
        }
    }
}

/// Derives an independent 64-bit seed from a parent seed and a label.
pub fn derive_seed(parent: u64, round: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"sonni/seed");
    h.update(parent.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

impl Scenario {
    /// Number of active slots, `d + m`.
    pub fn active(&self) -> usize {
        self.d + self.m
    }

    pub fn party_seed(&self, party: Party) -> u64 {
        let (over, label) = match party {
            Party::Client => (self.client_seed, "client"),
            Party::Provider => (self.provider_seed, "provider"),
            Party::Server => (self.server_seed, "server"),
        };
        over.unwrap_or_else(|| derive_seed(self.master_seed, self.round, label))
    }

    /// Seed for a named purpose inside one party, fresh per round.
    pub fn sub_seed(&self, party: Party, label: &str) -> u64 {
        derive_seed(self.party_seed(party), self.round, label)
    }

    pub fn rng(&self, party: Party, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.sub_seed(party, label))
    }

    pub fn noise_model(&self, party: Party) -> NoiseModel {
        NoiseModel {
            encrypt_noise: self.encrypt_noise,
            op_noise: self.op_noise,
            seed: self.sub_seed(party, "engine"),
        }
    }

    pub fn client_input(&self) -> Vec<f64> {
        use rand::Rng;
        match &self.input {
            Some(x) => x.clone(),
            None => {
                let mut rng = self.rng(Party::Client, "x");
                (0..self.d)
                    .map(|_| rng.gen_range(self.input_range.0..=self.input_range.1))
                    .collect()
            }
        }
    }

    pub fn provider_model(&self) -> SlotwiseModel {
        match &self.model {
            Some(f) => f.clone(),
            None => {
                let mut rng = self.rng(Party::Provider, "f");
                SlotwiseModel::random(self.degree, self.d, self.coeff_range, &mut rng)
            }
        }
    }

    /// Worst-case bound on the noise of the ciphertext the client opens at check time (the
    /// masked result in protected mode, the raw result in legacy mode), from the parameter
    /// ranges alone.
    pub fn analytic_noise_bound(&self) -> f64 {
        const SLACK: f64 = 4.0 * f64::EPSILON;
        let (eta, sigma) = (self.encrypt_noise, self.op_noise);
        let x_mag = self.input_range.0.abs().max(self.input_range.1.abs());
        let c_mag = self.coeff_range.0.abs().max(self.coeff_range.1.abs());

        // Shuffle: every step adds 3 sigma everywhere and, at the destination slot, the noise
        // of the moved value on top of the destination's own (never moved) noise.
        let mut input = eta;
        if self.mode == Mode::Sonni {
            let mut worst = eta;
            for i in 0..self.m {
                let untouched_zero = eta + 3.0 * sigma * i as f64;
                worst = worst + untouched_zero + 3.0 * sigma + 3.0 * SLACK * x_mag;
            }
            // canary insertion adds a fresh provider encryption
            input = worst + eta + SLACK * x_mag;
        }
        let in_mag = x_mag + input;

        let mut acc_noise = eta;
        let mut acc_mag = c_mag + eta;
        for _ in 0..self.degree {
            acc_noise = acc_noise * in_mag + input * acc_mag + acc_noise * input + sigma;
            acc_mag *= in_mag;
            acc_noise += SLACK * acc_mag;
            acc_noise += eta;
            acc_mag += c_mag + eta;
            acc_noise += SLACK * acc_mag;
        }
        if self.mode == Mode::Sonni {
            acc_noise += sigma + SLACK * acc_mag;
        }
        acc_noise
    }

    // negated comparisons below also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.slots.is_power_of_two() {
            return Err(ConfigError::SlotsNotPowerOfTwo(self.slots));
        }
        if self.active() > self.slots {
            return Err(ConfigError::TooManySlots {
                used: self.active(),
                slots: self.slots,
            });
        }
        match self.mode {
            Mode::Legacy if self.m != 0 => return Err(ConfigError::LegacyWithCanaries(self.m)),
            Mode::Sonni if self.m == 0 => return Err(ConfigError::NoCanaries),
            _ => {}
        }
        if self.degree < 1 {
            return Err(ConfigError::Degree);
        }
        for &(lo, hi) in &[self.input_range, self.coeff_range] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ConfigError::Range(lo, hi));
            }
        }
        let noise_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !noise_ok(self.encrypt_noise) || !noise_ok(self.op_noise) {
            return Err(ConfigError::Noise);
        }
        if !(self.r_min > 0.0 && self.r_min <= 1.0) {
            return Err(ConfigError::MaskFloor(self.r_min));
        }
        if let Some(f) = &self.model {
            if f.degree() != self.degree {
                return Err(ConfigError::ModelDegree {
                    file: f.degree(),
                    scenario: self.degree,
                });
            }
            if f.width() != self.d {
                return Err(ConfigError::ModelWidth {
                    file: f.width(),
                    d: self.d,
                });
            }
        }
        if let Some(x) = &self.input {
            if x.len() != self.d {
                return Err(ConfigError::InputLength {
                    len: x.len(),
                    d: self.d,
                });
            }
        }
        if self.enforce_noise_margin {
            let bound = self.analytic_noise_bound();
            if !(self.quant_step > 2.0 * bound) {
                return Err(ConfigError::QuantizationTooFine {
                    step: self.quant_step,
                    bound,
                });
            }
        }
        self.strategy.validate(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Scenario::default().validate().unwrap();
    }

    #[test]
    fn violations_are_named() {
        let bad = Scenario {
            d: 15,
            m: 2,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::TooManySlots {
                used: 17,
                slots: 16
            })
        ));
        let bad = Scenario {
            slots: 12,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::SlotsNotPowerOfTwo(12))
        ));
        let bad = Scenario {
            quant_step: 1e-12,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::QuantizationTooFine { .. })
        ));
        let bad = Scenario {
            mode: Mode::Legacy,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::LegacyWithCanaries(2))
        ));
        let bad = Scenario {
            m: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::NoCanaries)));
        let bad = Scenario {
            r_min: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::MaskFloor(_))));
        let bad = Scenario {
            model: Some(SlotwiseModel::new(vec![vec![1.0; 8]; 4]).unwrap()),
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::ModelDegree {
                file: 3,
                scenario: 2
            })
        ));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let s = Scenario::default();
        assert_eq!(
            s.party_seed(Party::Client),
            Scenario::default().party_seed(Party::Client)
        );
        assert_ne!(s.party_seed(Party::Client), s.party_seed(Party::Provider));
        let next = Scenario {
            round: 1,
            ..Default::default()
        };
        assert_ne!(
            s.sub_seed(Party::Provider, "plan"),
            next.sub_seed(Party::Provider, "plan")
        );
        let pinned = Scenario {
            provider_seed: Some(5),
            ..Default::default()
        };
        assert_eq!(pinned.party_seed(Party::Provider), 5);
    }

    #[test]
    fn bound_grows_with_work() {
        let small = Scenario::default().analytic_noise_bound();
        let more_canaries = Scenario {
            slots: 64,
            m: 24,
            ..Default::default()
        }
        .analytic_noise_bound();
        let deeper = Scenario {
            degree: 4,
            ..Default::default()
        }
        .analytic_noise_bound();
        assert!(small > 0.0 && more_canaries > small && deeper > small);
    }
}
