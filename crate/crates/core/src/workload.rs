//! Slotwise polynomial models: the provider's secret model `f` and the canary function `g`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, MockCiphertext, SlotVector};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("input has {actual} slots but the model governs {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("model degrees differ: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// `out[j] = sum_k coeffs[k][j] * x[j]^k`, one independent polynomial per slot.
///
/// On disk this is a TOML document:
///
/// ```toml
/// degree = 2
/// coeffs = [[0.5, -0.1], [1.0, 2.0], [0.25, 0.0]]   # coeffs[k] multiplies x^k
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotwiseModel {
    degree: usize,
    coeffs: Vec<Vec<f64>>,
}

impl SlotwiseModel {
    pub fn new(coeffs: Vec<Vec<f64>>) -> Result<Self, WorkloadError> {
        if coeffs.len() < 2 {
            return Err(WorkloadError::Invalid("degree must be at least 1".into()));
        }
        let width = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != width) {
            return Err(WorkloadError::Invalid(
                "coefficient vectors must have equal length".into(),
            ));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WorkloadError::Invalid("non-finite coefficient".into()));
        }
        Ok(SlotwiseModel {
            degree: coeffs.len() - 1,
            coeffs,
        })
    }

    pub fn random(degree: usize, slots: usize, range: (f64, f64), rng: &mut impl Rng) -> Self {
        assert!(degree >= 1);
        let coeffs = (0..=degree)
            .map(|_| {
                (0..slots)
                    .map(|_| rng.gen_range(range.0..=range.1))
                    .collect()
            })
            .collect();
        SlotwiseModel { degree, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of slots this model governs.
    pub fn width(&self) -> usize {
        self.coeffs[0].len()
    }

    /// Coefficient vectors indexed by power.
    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Concatenates two models slot-wise. Both must have the same degree.
    pub fn concat(&self, other: &SlotwiseModel) -> Result<SlotwiseModel, WorkloadError> {
        if self.degree != other.degree {
            return Err(WorkloadError::DegreeMismatch(self.degree, other.degree));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(SlotwiseModel {
            degree: self.degree,
            coeffs,
        })
    }

    /// Extends every coefficient vector with zeros up to `n` slots.
    pub fn padded(&self, n: usize) -> SlotwiseModel {
        assert!(n >= self.width());
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(n, 0.0);
                c
            })
            .collect();
        SlotwiseModel {
            degree: self.degree,
            coeffs,
        }
    }

    /// Reorders slots so that slot `i` moves to `forward[i]`.
    pub fn reorder(&self, forward: &[usize]) -> SlotwiseModel {
        assert_eq!(forward.len(), self.width());
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let mut out = vec![0.0; c.len()];
                for (i, &p) in forward.iter().enumerate() {
                    out[p] = c[i];
                }
                out
            })
            .collect();
        SlotwiseModel {
            degree: self.degree,
            coeffs,
        }
    }

    pub fn eval_plain(&self, input: &[f64]) -> Result<Vec<f64>, WorkloadError> {
        if input.len() != self.width() {
            return Err(WorkloadError::LengthMismatch {
                expected: self.width(),
                actual: input.len(),
            });
        }
        Ok(input
            .iter()
            .enumerate()
            .map(|(j, &x)| self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c[j]))
            .collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, WorkloadError> {
        #[derive(Deserialize)]
        struct File {
            degree: usize,
            coeffs: Vec<Vec<f64>>,
        }
        let file: File = toml::from_str(text)?;
        let model = SlotwiseModel::new(file.coeffs)?;
        if model.degree != file.degree {
            return Err(WorkloadError::Invalid(format!(
                "declared degree {} but {} coefficient vectors",
                file.degree,
                model.degree + 1
            )));
        }
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }
}

/// Horner evaluation over ciphertexts: `degree` ciphertext-ciphertext multiplications and
/// `degree` additions. `param_cts[k]` encrypts the (padded) coefficient vector for `x^k`.
pub fn eval_encrypted(
    engine: &Engine,
    param_cts: &[MockCiphertext],
    input_ct: &MockCiphertext,
) -> Result<MockCiphertext, WorkloadError> {
    let (top, rest) = param_cts
        .split_last()
        .ok_or_else(|| WorkloadError::Invalid("no parameter ciphertexts".into()))?;
    if rest.is_empty() {
        return Err(WorkloadError::Invalid("degree must be at least 1".into()));
    }
    let mut acc = top.clone();
    for coeff in rest.iter().rev() {
        acc = engine.mult(&acc, input_ct)?;
        acc = engine.add(&acc, coeff)?;
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanaryInput {
    pub y: SlotVector,
    pub seed: u64,
}

/// Canary inputs drawn uniformly from the client-input range.
pub fn gen_canaries(m: usize, range: (f64, f64), seed: u64) -> CanaryInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = (0..m).map(|_| rng.gen_range(range.0..=range.1)).collect();
    CanaryInput {
        y: SlotVector::new(y).expect("finite range"),
        seed,
    }
}
