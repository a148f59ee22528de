//! Semantic mock of a multikey homomorphic vector scheme.
//!
//! Ciphertexts carry their true slot values in the clear (perturbed by injected noise), the set of
//! keys they are encrypted under, and a per-slot analytic noise bound. Nothing here is
//! cryptographically hiding: confidentiality is modelled by custody. Plaintext only leaves a
//! [`MockCiphertext`] through [`Engine::combine`], which demands a partial decryption for every key
//! in the keyset, and secret keys can only be used by the party holding the [`KeyPair`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Rounding slack added per operation, relative to the magnitude of the result.
const ROUNDING_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("length mismatch: expected {expected} slots, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite slot value at index {0}")]
    NonFinite(usize),
    #[error("key {0} is not in the ciphertext keyset")]
    KeyNotInKeyset(KeyId),
    #[error("partial decryption digest does not match the ciphertext")]
    DigestMismatch,
    #[error("partial decryptions do not cover the keyset exactly (have {have:?}, need {need:?})")]
    Coverage { have: Vec<KeyId>, need: Vec<KeyId> },
    #[error("multiplicative depth {depth} exceeds configured maximum {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("truncated or malformed encoding: {0}")]
    Decode(&'static str),
}

/// Party key identifier. Encoded on the wire as a single byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyId(pub u8);

impl KeyId {
    pub const CLIENT: KeyId = KeyId(1);
    pub const PROVIDER: KeyId = KeyId(2);
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KeyId::CLIENT => write!(f, "c"),
            KeyId::PROVIDER => write!(f, "p"),
            KeyId(other) => write!(f, "k{other}"),
        }
    }
}

/// Public half of a key pair. Anyone may encrypt under it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub id: KeyId,
}

/// Secret half of a key pair. Not serializable and not printable.
pub struct SecretKey {
    id: KeyId,
    material: [u8; 32],
}

impl SecretKey {
    pub fn id(&self) -> KeyId {
        self.id
    }

    /// Raw key bytes, exposed only so custody audits can search serialized traffic for them.
    pub fn material(&self) -> &[u8; 32] {
        &self.material
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    pub fn generate(id: KeyId, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut material = [0u8; 32];
        rng.fill_bytes(&mut material);
        KeyPair {
            public: PublicKey { id },
            secret: SecretKey { id, material },
        }
    }
}

/// A fixed-length vector of finite reals.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SlotVector(Vec<f64>);

impl SlotVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EngineError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite(i));
        }
        Ok(SlotVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        SlotVector(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        SlotVector(vec![1.0; n])
    }

    /// Zero vector with a single 1 at `index`.
    pub fn basis(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        SlotVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Canonical encoding: u32 LE slot count, then each slot as f64 LE.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.0.len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one vector from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), EngineError> {
        let head: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or(EngineError::Decode("slot count"))?;
        let n = u32::from_le_bytes(head) as usize;
        let body = bytes
            .get(4..4 + 8 * n)
            .ok_or(EngineError::Decode("slot values"))?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((SlotVector::new(values)?, 4 + 8 * n))
    }
}

impl From<SlotVector> for Vec<f64> {
    fn from(v: SlotVector) -> Self {
        v.0
    }
}

impl TryFrom<Vec<f64>> for SlotVector {
    type Error = EngineError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        SlotVector::new(values)
    }
}

/// Per-type operation counts along the deepest lineage of a ciphertext.
///
/// Binary operations take the elementwise maximum of their operands' counts before adding their
/// own, so `mults` is the multiplicative depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub adds: u32,
    pub mults: u32,
    pub rotations: u32,
}

impl OpCounts {
    fn merge(self, other: OpCounts) -> OpCounts {
        OpCounts {
            adds: self.adds.max(other.adds),
            mults: self.mults.max(other.mults),
            rotations: self.rotations.max(other.rotations),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MockCiphertext {
    payload: Vec<f64>,
    slot_noise: Vec<f64>,
    noise_bound: f64,
    keyset: BTreeSet<KeyId>,
    ops: OpCounts,
    tag: [u8; 32],
}

impl MockCiphertext {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn keyset(&self) -> &BTreeSet<KeyId> {
        &self.keyset
    }

    /// Conservative bound on `|payload - ideal|` over all slots. Never decreases along a lineage.
    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    /// Per-slot noise bounds; each is at most [`noise_bound`](Self::noise_bound).
    pub fn slot_noise(&self) -> &[f64] {
        &self.slot_noise
    }

    pub fn op_counts(&self) -> OpCounts {
        self.ops
    }

    /// Test-only window onto the underlying values. Protocol parties never call this.
    #[doc(hidden)]
    pub fn peek_payload(&self) -> &[f64] {
        &self.payload
    }

    /// Collision-resistant fingerprint of the payload encoding, keyset and randomness tag.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"sonni/ct");
        h.update((self.payload.len() as u32).to_le_bytes());
        for v in &self.payload {
            h.update(v.to_le_bytes());
        }
        h.update([self.keyset.len() as u8]);
        for k in &self.keyset {
            h.update([k.0]);
        }
        h.update(self.tag);
        h.finalize().into()
    }

    /// Wire encoding: payload vector, per-slot noise vector, noise bound (f64 LE), keyset
    /// (count byte then sorted ids), op counts (3 x u32 LE), 32-byte tag.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        SlotVector(self.payload.clone()).encode_into(out);
        SlotVector(self.slot_noise.clone()).encode_into(out);
        out.extend_from_slice(&self.noise_bound.to_le_bytes());
        out.push(self.keyset.len() as u8);
        out.extend(self.keyset.iter().map(|k| k.0));
        for c in [self.ops.adds, self.ops.mults, self.ops.rotations] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.tag);
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), EngineError> {
        let (payload, mut pos) = SlotVector::decode(bytes)?;
        let (slot_noise, used) = SlotVector::decode(&bytes[pos..])?;
        pos += used;
        if slot_noise.len() != payload.len() {
            return Err(EngineError::Decode("noise vector length"));
        }
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], EngineError> {
            let s = bytes
                .get(*pos..*pos + n)
                .ok_or(EngineError::Decode("ciphertext trailer"))?;
            *pos += n;
            Ok(s)
        };
        let noise_bound = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let nkeys = take(&mut pos, 1)?[0] as usize;
        let keyset: BTreeSet<KeyId> = take(&mut pos, nkeys)?.iter().map(|&b| KeyId(b)).collect();
        if keyset.len() != nkeys || keyset.is_empty() {
            return Err(EngineError::Decode("keyset"));
        }
        let mut counts = [0u32; 3];
        for c in &mut counts {
            *c = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        }
        let tag: [u8; 32] = take(&mut pos, 32)?.try_into().unwrap();
        if !noise_bound.is_finite() || noise_bound < 0.0 {
            return Err(EngineError::Decode("noise bound"));
        }
        Ok((
            MockCiphertext {
                payload: payload.into_vec(),
                slot_noise: slot_noise.into_vec(),
                noise_bound,
                keyset,
                ops: OpCounts {
                    adds: counts[0],
                    mults: counts[1],
                    rotations: counts[2],
                },
                tag,
            },
            pos,
        ))
    }
}

/// Partial decryption of one ciphertext under one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialShare {
    ciphertext_digest: [u8; 32],
    removed_key: KeyId,
    payload: [u8; 32],
}

impl PartialShare {
    pub fn ciphertext_digest(&self) -> &[u8; 32] {
        &self.ciphertext_digest
    }

    pub fn removed_key(&self) -> KeyId {
        self.removed_key
    }

    /// Wire encoding: 32-byte digest, key id byte, 32-byte share payload.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ciphertext_digest);
        out.push(self.removed_key.0);
        out.extend_from_slice(&self.payload);
    }

    pub const ENCODED_LEN: usize = 65;

    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), EngineError> {
        let b = bytes
            .get(..Self::ENCODED_LEN)
            .ok_or(EngineError::Decode("partial share"))?;
        Ok((
            PartialShare {
                ciphertext_digest: b[..32].try_into().unwrap(),
                removed_key: KeyId(b[32]),
                payload: b[33..].try_into().unwrap(),
            },
            Self::ENCODED_LEN,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Half-width of the uniform noise injected per slot at encryption.
    pub encrypt_noise: f64,
    /// Half-width of the uniform noise injected per slot by each multiplication or rotation.
    pub op_noise: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn exact(seed: u64) -> Self {
        NoiseModel {
            encrypt_noise: 0.0,
            op_noise: 0.0,
            seed,
        }
    }
}

/// Engine-wide counters of issued operations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub encryptions: u64,
    pub adds: u64,
    pub mults: u64,
    pub rotations: u64,
}

pub struct Engine {
    slots: usize,
    noise: NoiseModel,
    max_depth: Option<u32>,
    calls: AtomicU64,
    encryptions: AtomicU64,
    adds: AtomicU64,
    mults: AtomicU64,
    rotations: AtomicU64,
}

impl Engine {
    pub fn new(slots: usize, noise: NoiseModel) -> Self {
        assert!(slots.is_power_of_two(), "slot count must be a power of two");
        assert!(noise.encrypt_noise >= 0.0 && noise.op_noise >= 0.0);
        Engine {
            slots,
            noise,
            max_depth: None,
            calls: AtomicU64::new(0),
            encryptions: AtomicU64::new(0),
            adds: AtomicU64::new(0),
            mults: AtomicU64::new(0),
            rotations: AtomicU64::new(0),
        }
    }

    pub fn with_max_depth(mut self, max: u32) -> Self {
        self.max_depth = Some(max);
        self
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            encryptions: self.encryptions.load(Ordering::Relaxed),
            adds: self.adds.load(Ordering::Relaxed),
            mults: self.mults.load(Ordering::Relaxed),
            rotations: self.rotations.load(Ordering::Relaxed),
        }
    }

    fn call_rng(&self) -> ChaCha8Rng {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed);
        rng.set_stream(call);
        rng
    }

    fn check_len(&self, n: usize) -> Result<(), EngineError> {
        if n != self.slots {
            return Err(EngineError::LengthMismatch {
                expected: self.slots,
                actual: n,
            });
        }
        Ok(())
    }

    fn derived_tag(op: u8, a: &[u8; 32], b: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"sonni/tag");
        h.update([op]);
        h.update(a);
        h.update(b);
        h.finalize().into()
    }

    fn inject(rng: &mut ChaCha8Rng, values: &mut [f64], half_width: f64) {
        if half_width > 0.0 {
            for v in values {
                *v += rng.gen_range(-half_width..=half_width);
            }
        }
    }

    fn finish(
        &self,
        payload: Vec<f64>,
        mut slot_noise: Vec<f64>,
        floor: f64,
        keyset: BTreeSet<KeyId>,
        ops: OpCounts,
        tag: [u8; 32],
    ) -> Result<MockCiphertext, EngineError> {
        if let Some(i) = payload.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite(i));
        }
        for (n, v) in slot_noise.iter_mut().zip(&payload) {
            *n += ROUNDING_SLACK * v.abs();
        }
        let noise_bound = slot_noise.iter().fold(floor, |acc, &n| acc.max(n));
        Ok(MockCiphertext {
            payload,
            slot_noise,
            noise_bound,
            keyset,
            ops,
            tag,
        })
    }

    pub fn encrypt(&self, pt: &SlotVector, key: &PublicKey) -> Result<MockCiphertext, EngineError> {
        self.check_len(pt.len())?;
        let mut rng = self.call_rng();
        self.encryptions.fetch_add(1, Ordering::Relaxed);
        let eta = self.noise.encrypt_noise;
        let mut payload = pt.as_slice().to_vec();
        Self::inject(&mut rng, &mut payload, eta);
        let mut tag = [0u8; 32];
        rng.fill_bytes(&mut tag);
        Ok(MockCiphertext {
            payload,
            slot_noise: vec![eta; self.slots],
            noise_bound: eta,
            keyset: BTreeSet::from([key.id]),
            ops: OpCounts::default(),
            tag,
        })
    }

    pub fn add(
        &self,
        a: &MockCiphertext,
        b: &MockCiphertext,
    ) -> Result<MockCiphertext, EngineError> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.adds.fetch_add(1, Ordering::Relaxed);
        let payload = a
            .payload
            .iter()
            .zip(&b.payload)
            .map(|(x, y)| x + y)
            .collect();
        let noise = a
            .slot_noise
            .iter()
            .zip(&b.slot_noise)
            .map(|(x, y)| x + y)
            .collect();
        let mut ops = a.ops.merge(b.ops);
        ops.adds += 1;
        self.finish(
            payload,
            noise,
            a.noise_bound.max(b.noise_bound),
            &a.keyset | &b.keyset,
            ops,
            Self::derived_tag(b'a', &a.tag, &b.tag),
        )
    }

    pub fn add_plain(
        &self,
        ct: &MockCiphertext,
        pt: &SlotVector,
    ) -> Result<MockCiphertext, EngineError> {
        self.check_len(ct.len())?;
        self.check_len(pt.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.adds.fetch_add(1, Ordering::Relaxed);
        let payload = ct
            .payload
            .iter()
            .zip(pt.as_slice())
            .map(|(x, y)| x + y)
            .collect();
        let mut ops = ct.ops;
        ops.adds += 1;
        self.finish(
            payload,
            ct.slot_noise.clone(),
            ct.noise_bound,
            ct.keyset.clone(),
            ops,
            Self::derived_tag(b'A', &ct.tag, &pt.encode()),
        )
    }

    fn bump_depth(&self, ops: &mut OpCounts) -> Result<(), EngineError> {
        ops.mults += 1;
        if let Some(max) = self.max_depth {
            if ops.mults > max {
                return Err(EngineError::DepthExceeded {
                    depth: ops.mults,
                    max,
                });
            }
        }
        Ok(())
    }

    pub fn mult(
        &self,
        a: &MockCiphertext,
        b: &MockCiphertext,
    ) -> Result<MockCiphertext, EngineError> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        let mut ops = a.ops.merge(b.ops);
        self.bump_depth(&mut ops)?;
        let mut rng = self.call_rng();
        self.mults.fetch_add(1, Ordering::Relaxed);
        let sigma = self.noise.op_noise;
        let mut payload: Vec<f64> = a
            .payload
            .iter()
            .zip(&b.payload)
            .map(|(x, y)| x * y)
            .collect();
        let noise = (0..self.slots)
            .map(|j| {
                let (ea, eb) = (a.slot_noise[j], b.slot_noise[j]);
                ea * b.payload[j].abs() + eb * a.payload[j].abs() + ea * eb + sigma
            })
            .collect();
        Self::inject(&mut rng, &mut payload, sigma);
        self.finish(
            payload,
            noise,
            a.noise_bound.max(b.noise_bound),
            &a.keyset | &b.keyset,
            ops,
            Self::derived_tag(b'm', &a.tag, &b.tag),
        )
    }

    pub fn mult_plain(
        &self,
        ct: &MockCiphertext,
        pt: &SlotVector,
    ) -> Result<MockCiphertext, EngineError> {
        self.check_len(ct.len())?;
        self.check_len(pt.len())?;
        let mut ops = ct.ops;
        self.bump_depth(&mut ops)?;
        let mut rng = self.call_rng();
        self.mults.fetch_add(1, Ordering::Relaxed);
        let sigma = self.noise.op_noise;
        let mut payload: Vec<f64> = ct
            .payload
            .iter()
            .zip(pt.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let noise = ct
            .slot_noise
            .iter()
            .zip(pt.as_slice())
            .map(|(e, p)| e * p.abs() + sigma)
            .collect();
        Self::inject(&mut rng, &mut payload, sigma);
        self.finish(
            payload,
            noise,
            ct.noise_bound,
            ct.keyset.clone(),
            ops,
            Self::derived_tag(b'M', &ct.tag, &pt.encode()),
        )
    }

    /// Slot `j` of the output holds slot `(j + r) mod N` of the input.
    pub fn rotate(&self, ct: &MockCiphertext, r: i64) -> Result<MockCiphertext, EngineError> {
        self.check_len(ct.len())?;
        let n = self.slots as i64;
        let shift = r.rem_euclid(n) as usize;
        let mut rng = self.call_rng();
        self.rotations.fetch_add(1, Ordering::Relaxed);
        let sigma = self.noise.op_noise;
        let mut payload = ct.payload.clone();
        payload.rotate_left(shift);
        let mut noise = ct.slot_noise.clone();
        noise.rotate_left(shift);
        noise.iter_mut().for_each(|e| *e += sigma);
        Self::inject(&mut rng, &mut payload, sigma);
        let mut ops = ct.ops;
        ops.rotations += 1;
        self.finish(
            payload,
            noise,
            ct.noise_bound,
            ct.keyset.clone(),
            ops,
            Self::derived_tag(b'r', &ct.tag, &r.to_le_bytes()),
        )
    }

    pub fn partial_dec(
        &self,
        ct: &MockCiphertext,
        sk: &SecretKey,
    ) -> Result<PartialShare, EngineError> {
        if !ct.keyset.contains(&sk.id) {
            return Err(EngineError::KeyNotInKeyset(sk.id));
        }
        let digest = ct.digest();
        let mut h = Sha256::new();
        h.update(b"sonni/share");
        h.update(sk.material);
        h.update(digest);
        Ok(PartialShare {
            ciphertext_digest: digest,
            removed_key: sk.id,
            payload: h.finalize().into(),
        })
    }

    /// Recovers the (noisy) plaintext once every key in the keyset has been stripped, either by a
    /// share in `shares` or by `own_sk`.
    pub fn combine(
        &self,
        shares: &[PartialShare],
        ct: &MockCiphertext,
        own_sk: Option<&SecretKey>,
    ) -> Result<SlotVector, EngineError> {
        let digest = ct.digest();
        if shares.iter().any(|s| s.ciphertext_digest != digest) {
            return Err(EngineError::DigestMismatch);
        }
        let mut have: Vec<KeyId> = shares.iter().map(|s| s.removed_key).collect();
        if let Some(sk) = own_sk {
            have.push(sk.id);
        }
        have.sort();
        let need: Vec<KeyId> = ct.keyset.iter().copied().collect();
        if have != need {
            return Err(EngineError::Coverage { have, need });
        }
        Ok(SlotVector(ct.payload.clone()))
    }

    /// Single-party decryption shortcut for ciphertexts under one key.
    pub fn decrypt(&self, ct: &MockCiphertext, sk: &SecretKey) -> Result<SlotVector, EngineError> {
        self.combine(&[], ct, Some(sk))
    }
}
