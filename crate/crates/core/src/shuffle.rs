//! Masked-rotate ciphertext shuffle and the matching parameter permutation.
//!
//! The client's ciphertext arrives as `x[0..d] ‖ 0[d..d+m]`. The provider picks `m` distinct slots
//! uniformly from `[0, d+m)` by rejection sampling, sorts them, and for each chosen slot `idx`
//! (the `i`-th in sorted order) isolates it with a basis-vector mask, rotates the isolated value
//! to slot `d+i`, clears `idx` and adds the rotated value back. Afterwards the chosen slots hold
//! zeros and the displaced client values sit in the tail, so the canaries inserted at the chosen
//! slots are indistinguishable in position from client data.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{Engine, EngineError, MockCiphertext, PublicKey, SlotVector};
use crate::workload::{SlotwiseModel, WorkloadError};

#[derive(Debug, Error)]
pub enum ShuffleError {
    #[error("invalid shuffle parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Bijection on `[0, n)`. `forward[i]` is where original slot `i` ends up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self, ShuffleError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in forward.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(ShuffleError::Invalid("not a bijection".into()));
            }
            inverse[p] = i;
        }
        Ok(Permutation { forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// `out[forward[i]] = values[i]`.
    pub fn apply<T: Copy + Default>(&self, values: &[T]) -> Vec<T> {
        assert_eq!(values.len(), self.len());
        let mut out = vec![T::default(); values.len()];
        for (i, &p) in self.forward.iter().enumerate() {
            out[p] = values[i];
        }
        out
    }

    /// `out[i] = values[forward[i]]`; undoes [`apply`](Self::apply).
    pub fn unapply<T: Copy>(&self, values: &[T]) -> Vec<T> {
        assert_eq!(values.len(), self.len());
        self.forward.iter().map(|&p| values[p]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShufflePlan {
    d: usize,
    m: usize,
    seed: Option<u64>,
    chosen: Vec<usize>,
    perm: Permutation,
}

impl ShufflePlan {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Chosen slots in ascending order; canary `j` lands on `chosen_indices()[j]`.
    pub fn chosen_indices(&self) -> &[usize] {
        &self.chosen
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Plan that leaves every slot in place (chosen slots are exactly the zero tail).
    pub fn identity(d: usize, m: usize) -> Self {
        Self::from_indices(d, m, (d..d + m).collect()).expect("tail indices are valid")
    }

    /// Builds a plan from an explicit chosen set, deriving the permutation by replaying the
    /// move sequence on slot labels.
    pub fn from_indices(d: usize, m: usize, mut chosen: Vec<usize>) -> Result<Self, ShuffleError> {
        let n = d + m;
        chosen.sort_unstable();
        chosen.dedup();
        if chosen.len() != m || chosen.iter().any(|&i| i >= n) {
            return Err(ShuffleError::Invalid(format!(
                "need {m} distinct indices in [0, {n})"
            )));
        }
        // Each step moves the value at `idx` into the (still zero) slot d+i and leaves a zero at
        // `idx`, which on labels is the transposition (idx, d+i).
        let mut layout: Vec<usize> = (0..n).collect();
        for (i, &idx) in chosen.iter().enumerate() {
            layout.swap(idx, d + i);
        }
        let mut forward = vec![usize::MAX; n];
        for (pos, &label) in layout.iter().enumerate() {
            if label < d {
                forward[label] = pos;
            }
        }
        // Zeros are interchangeable; canary j is assigned to the j-th chosen slot.
        for (j, &pos) in chosen.iter().enumerate() {
            debug_assert!(layout[pos] >= d);
            forward[d + j] = pos;
        }
        let perm = Permutation::from_forward(forward)?;
        Ok(ShufflePlan {
            d,
            m,
            seed: None,
            chosen,
            perm,
        })
    }
}

/// Draws `m` distinct slots from `[0, d+m)` by rejection, sorts them, and derives the permutation.
pub fn plan_shuffle(d: usize, m: usize, seed: u64) -> Result<ShufflePlan, ShuffleError> {
    let n = d + m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = BTreeSet::new();
    for _ in 0..m {
        let mut index = rng.gen_range(0..n);
        while indices.contains(&index) {
            index = rng.gen_range(0..n);
        }
        indices.insert(index);
    }
    let mut plan = ShufflePlan::from_indices(d, m, indices.into_iter().collect())?;
    plan.seed = Some(seed);
    Ok(plan)
}

/// Applies the plan to `ct` with engine operations only: per chosen slot one isolating
/// multiplication, one rotation, one complementary multiplication and one addition.
pub fn shuffle_ciphertext(
    engine: &Engine,
    ct: &MockCiphertext,
    plan: &ShufflePlan,
) -> Result<MockCiphertext, ShuffleError> {
    let n = engine.slots();
    if plan.d + plan.m > n {
        return Err(ShuffleError::Invalid("d + m exceeds slot count".into()));
    }
    let mut ct = ct.clone();
    for (i, &index) in plan.chosen.iter().enumerate() {
        let basis = SlotVector::basis(n, index);
        let complement = SlotVector::new(basis.as_slice().iter().map(|b| 1.0 - b).collect())?;
        let masked = engine.mult_plain(&ct, &basis)?;
        // Engine rotation moves slot j to j - r, so this lands the isolated value on d + i.
        let masked = engine.rotate(&masked, index as i64 - (plan.d + i) as i64)?;
        ct = engine.mult_plain(&ct, &complement)?;
        ct = engine.add(&ct, &masked)?;
    }
    Ok(ct)
}

/// Permutes `f` (over the `d` client slots) and `g` (over the `m` canary slots) with the plan's
/// permutation, giving one model over `d + m` slots aligned with the shuffled ciphertext.
pub fn permute_parameters(
    f: &SlotwiseModel,
    g: &SlotwiseModel,
    plan: &ShufflePlan,
) -> Result<SlotwiseModel, ShuffleError> {
    if f.width() != plan.d || g.width() != plan.m {
        return Err(ShuffleError::Invalid(format!(
            "models govern {}+{} slots, plan expects {}+{}",
            f.width(),
            g.width(),
            plan.d,
            plan.m
        )));
    }
    let joined = f.concat(g)?;
    Ok(joined.reorder(plan.perm.forward()))
}

/// Adds a provider-encrypted vector carrying `y[j]` at the `j`-th chosen slot.
pub fn insert_canaries(
    engine: &Engine,
    ct: &MockCiphertext,
    y: &SlotVector,
    plan: &ShufflePlan,
    provider: &PublicKey,
) -> Result<MockCiphertext, ShuffleError> {
    if y.len() != plan.m {
        return Err(ShuffleError::Invalid(format!(
            "{} canary values for {} canary slots",
            y.len(),
            plan.m
        )));
    }
    let mut v = vec![0.0; engine.slots()];
    for (&pos, &val) in plan.chosen.iter().zip(y.as_slice()) {
        v[pos] = val;
    }
    let enc = engine.encrypt(&SlotVector::new(v)?, provider)?;
    Ok(engine.add(ct, &enc)?)
}
