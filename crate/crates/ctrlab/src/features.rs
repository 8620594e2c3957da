//! Deterministic feature hashing and the layout of the sparse feature space.
//!
//! Every categorical token maps to a feature id through a fixed, seed- and
//! platform-independent FNV-1a hash, so identical inputs always produce
//! identical ids. Fields own contiguous id blocks inside `[0, input_dim)`;
//! ids at `input_dim` and above are reserved for crossed features.

use serde::{Deserialize, Serialize};

/// Default width of the hashed base feature space (2^18).
pub const DEFAULT_INPUT_DIM: usize = 1 << 18;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the token bytes. Stable across runs and platforms.
pub fn hash_token(token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in token.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Combines two feature ids into one hash for a crossed feature. Order
/// matters: `(a, b)` and `(b, a)` are distinct crosses.
pub fn hash_pair(a: u32, b: u32) -> u64 {
    let mut h = FNV_OFFSET;
    for &byte in a.to_le_bytes().iter().chain(b.to_le_bytes().iter()) {
        h ^= byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// One field's contiguous block of feature ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldBlock {
    pub name: String,
    /// First id owned by this field.
    pub start: u32,
    /// Number of ids owned by this field.
    pub size: u32,
}

/// Partition of `[0, input_dim)` into per-field blocks. Field order is fixed
/// at construction, so the same schema always yields the same layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    input_dim: u32,
    blocks: Vec<FieldBlock>,
}

impl FeatureLayout {
    /// Lays out the named fields in order, each sized to its cardinality.
    /// Returns `None` if the blocks do not fit in `input_dim`.
    pub fn from_cardinalities(fields: &[(String, u32)], input_dim: usize) -> Option<Self> {
        let input_dim = u32::try_from(input_dim).ok()?;
        let mut blocks = Vec::with_capacity(fields.len());
        let mut next = 0u32;
        for (name, size) in fields {
            if *size == 0 {
                return None;
            }
            let start = next;
            next = next.checked_add(*size)?;
            blocks.push(FieldBlock { name: name.clone(), start, size: *size });
        }
        if next > input_dim {
            return None;
        }
        Some(Self { input_dim, blocks })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim as usize
    }

    pub fn blocks(&self) -> &[FieldBlock] {
        &self.blocks
    }

    pub fn block(&self, field: &str) -> Option<&FieldBlock> {
        self.blocks.iter().find(|b| b.name == field)
    }

    /// Feature id for a categorical value in a field. Small-cardinality
    /// synthetic fields index directly; string tokens hash into the block.
    pub fn feature_id(&self, field: &str, token: &str) -> Option<u32> {
        let b = self.block(field)?;
        let slot = match token.parse::<u32>() {
            Ok(idx) if idx < b.size => idx,
            _ => (hash_token(token) % b.size as u64) as u32,
        };
        Some(b.start + slot)
    }

    /// Which field owns a feature id, if any.
    pub fn field_of(&self, id: u32) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| id >= b.start && id - b.start < b.size)
            .map(|b| b.name.as_str())
    }
}
