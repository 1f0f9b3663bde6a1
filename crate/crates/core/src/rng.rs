//! Deterministic random streams indexed by θ-paths.
//!
//! Every node of the recursive sampling tree is addressed by a [`ThetaPath`]
//! (the root is `(0)`, children append a `(level_tag, index)` pair). Each node
//! has a 256-bit key: the SHA-256 digest of its parent's key and its own
//! `(level_tag, index)` pair. The parent of a root path `(r)` is a seed key
//! digested from the master seed, with pair `(r, 0)`.
//!
//! The draws of node `θ ⊕ (t, i)` come from a *site stream* of its parent:
//! a xoshiro256++ generator whose state is the parent key mixed with
//! `(t, i, selector)`. Selector 0 is the node stream, selector `a + 1` the
//! sub-stream of action `a`. Streams therefore depend only on
//! `(seed, path, selector)`, never on visiting order or thread, and a node
//! needs its own key only when it has children.

use std::fmt;

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Identifies the stream construction. Embedded in every experiment report.
pub const STREAM_ALGORITHM_VERSION: &str = "sha256-chain/xoshiro256pp-site/v2";

const SEED_DOMAIN: &[u8] = b"mlfp.seed.v2";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RngError {
    #[error("child index must be at least 1, got 0")]
    ZeroIndex,
    #[error("negative-family children need level_tag <= -1, got {0}")]
    InvalidLevelTag(i64),
}

/// Node address `θ ∈ ⋃ₙ ℤⁿ`: a root entry followed by `(level_tag, index)` pairs.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ThetaPath {
    entries: Vec<i64>,
}

impl ThetaPath {
    /// The path `(0)`.
    pub fn root() -> Self {
        Self::with_root(0)
    }

    /// A one-element path `(r)`. Distinct roots give independent trees.
    pub fn with_root(root: i64) -> Self {
        Self { entries: vec![root] }
    }

    /// `self ⊕ (level_tag, index)`.
    ///
    /// `level_tag >= 0` addresses the positive family `(θ, l, i)`; a negative
    /// tag addresses `(θ, -l, i)`. The two families cannot collide because
    /// the negative family never uses `l = 0`.
    pub fn child(&self, level_tag: i64, index: u64) -> Result<Self, RngError> {
        check_child(index)?;
        let mut entries = Vec::with_capacity(self.entries.len() + 2);
        entries.extend_from_slice(&self.entries);
        entries.push(level_tag);
        entries.push(index as i64);
        Ok(Self { entries })
    }

    /// Positive-family child `(θ, l, i)`.
    pub fn positive_child(&self, level: u32, index: u64) -> Result<Self, RngError> {
        self.child(i64::from(level), index)
    }

    /// Negative-family child `(θ, -l, i)`; requires `l >= 1`.
    pub fn negative_child(&self, level: u32, index: u64) -> Result<Self, RngError> {
        if level == 0 {
            return Err(RngError::InvalidLevelTag(0));
        }
        self.child(-i64::from(level), index)
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Length-prefixed encoding: `len` as u64 LE, then each entry as 8-byte
    /// two's complement LE. Prefix-free and injective.
    pub fn encode(&self) -> Vec<u8> {
        encode_entries(&self.entries)
    }

    /// Parent path and last `(level_tag, index)` pair; `None` for a root.
    fn split_last_pair(&self) -> Option<(ThetaPath, i64, u64)> {
        let n = self.entries.len();
        (n >= 3).then(|| {
            (
                ThetaPath {
                    entries: self.entries[..n - 2].to_vec(),
                },
                self.entries[n - 2],
                self.entries[n - 1] as u64,
            )
        })
    }
}

impl fmt::Debug for ThetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "θ{:?}", self.entries)
    }
}

fn check_child(index: u64) -> Result<(), RngError> {
    if index == 0 {
        return Err(RngError::ZeroIndex);
    }
    Ok(())
}

pub(crate) fn encode_entries(entries: &[i64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (entries.len() + 1));
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out
}

/// Stream selector of the node stream; action `a` uses `a + 1`.
pub const NODE_SELECTOR: u64 = 0;

/// 256-bit derivation key of one θ node.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    /// Parent key of all root paths under `master_seed`.
    pub fn seed(master_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(SEED_DOMAIN);
        h.update(master_seed.to_le_bytes());
        Self(h.finalize().into())
    }

    /// Key of the root path `(root)`.
    pub fn root(master_seed: u64, root: i64) -> Self {
        Self::seed(master_seed).derive(root, 0)
    }

    /// Key of an arbitrary path.
    pub fn for_path(master_seed: u64, path: &ThetaPath) -> Result<Self, RngError> {
        let entries = path.entries();
        let (first, rest) = entries.split_first().expect("theta paths are never empty");
        let mut key = Self::root(master_seed, *first);
        for pair in rest.chunks(2) {
            key = key.child(pair[0], pair[1] as u64)?;
        }
        Ok(key)
    }

    /// Key of `θ ⊕ (level_tag, index)` given the key of `θ`. One SHA-256 block.
    pub fn child(&self, level_tag: i64, index: u64) -> Result<Self, RngError> {
        check_child(index)?;
        Ok(self.derive(level_tag, index))
    }

    #[inline]
    pub(crate) fn derive(&self, level_tag: i64, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(level_tag.to_le_bytes());
        h.update(index.to_le_bytes());
        Self(h.finalize().into())
    }

    /// Node stream of the child `θ ⊕ (level_tag, index)`.
    pub fn site_stream(&self, level_tag: i64, index: u64) -> StreamHandle {
        StreamHandle::new(self, level_tag, index, NODE_SELECTOR)
    }

    /// Sub-stream of the child `θ ⊕ (level_tag, index)` for `action`.
    #[inline]
    pub fn site_action_stream(&self, level_tag: i64, index: u64, action: usize) -> StreamHandle {
        StreamHandle::new(self, level_tag, index, action as u64 + 1)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    fn word(&self, k: usize) -> u64 {
        u64::from_le_bytes(self.0[8 * k..8 * k + 8].try_into().expect("8-byte word"))
    }
}

impl fmt::Debug for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamKey(")?;
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "…)")
    }
}

/// SplitMix64 output function, a bijection on `u64`.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Single-owner random stream. Moves between threads, never shared.
#[derive(Clone)]
pub struct StreamHandle {
    rng: Xoshiro256PlusPlus,
    draws: u64,
}

impl StreamHandle {
    #[inline]
    fn new(parent: &StreamKey, level_tag: i64, index: u64, selector: u64) -> Self {
        let site = mix64(mix64(mix64(level_tag as u64 ^ GOLDEN_GAMMA) ^ index) ^ selector);
        let mut seed = [0u8; 32];
        for k in 0..4 {
            let word = mix64(parent.word(k) ^ site.wrapping_add((k as u64 + 1).wrapping_mul(GOLDEN_GAMMA)));
            seed[8 * k..8 * k + 8].copy_from_slice(&word.to_le_bytes());
        }
        Self {
            rng: Xoshiro256PlusPlus::from_seed(seed),
            draws: 0,
        }
    }

    /// Number of variates drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    #[inline]
    pub fn draw_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn draw_uniform(&mut self) -> f64 {
        (self.draw_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn draw_open_uniform(&mut self) -> f64 {
        ((self.draw_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion of one open uniform.
    pub fn draw_standard_normal(&mut self) -> f64 {
        let u = self.draw_open_uniform();
        Normal::standard().inverse_cdf(u)
    }
}

impl fmt::Debug for StreamHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreamHandle")
            .field("draws", &self.draws)
            .finish_non_exhaustive()
    }
}

/// Stream of `path` with the given selector.
pub fn path_stream(master_seed: u64, path: &ThetaPath, selector: u64) -> Result<StreamHandle, RngError> {
    Ok(match path.split_last_pair() {
        Some((parent, tag, index)) => {
            check_child(index)?;
            StreamHandle::new(&StreamKey::for_path(master_seed, &parent)?, tag, index, selector)
        }
        None => StreamHandle::new(&StreamKey::seed(master_seed), path.entries()[0], 0, selector),
    })
}

/// Stream for the root path `(0)`.
pub fn root_stream(master_seed: u64) -> StreamHandle {
    path_stream(master_seed, &ThetaPath::root(), NODE_SELECTOR).expect("root paths are valid")
}

/// Stream for `parent ⊕ (level_tag, index)`.
pub fn derive_child(
    parent: &ThetaPath,
    level_tag: i64,
    index: u64,
    master_seed: u64,
) -> Result<StreamHandle, RngError> {
    check_child(index)?;
    Ok(StreamKey::for_path(master_seed, parent)?.site_stream(level_tag, index))
}

/// Exact count of sampler invocations, plus the declared unit cost `ℜ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    sampler_calls: u128,
    unit_cost: f64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::with_unit_cost(1.0)
    }

    pub fn with_unit_cost(unit_cost: f64) -> Self {
        Self {
            sampler_calls: 0,
            unit_cost,
        }
    }

    #[inline]
    pub fn record_sample(&mut self) {
        self.sampler_calls += 1;
    }

    pub fn sampler_calls(&self) -> u128 {
        self.sampler_calls
    }

    pub fn unit_cost(&self) -> f64 {
        self.unit_cost
    }

    /// `ℜ · calls`.
    pub fn weighted_cost(&self) -> f64 {
        self.unit_cost * self.sampler_calls as f64
    }

    /// Ledgers of independent calls merge by addition.
    pub fn merge(&mut self, other: &CostLedger) {
        self.sampler_calls += other.sampler_calls;
    }
}
