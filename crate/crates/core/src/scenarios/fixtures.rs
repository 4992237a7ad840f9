//! Deterministic content bodies.
//!
//! Each body is split into 256-byte blocks. A block opens with the tag
//! `name#index|` and is filled with ChaCha output seeded from the scenario
//! seed and the content name, so any byte that ends up in the wrong
//! response can be traced back to the content it came from.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::httpsem::ContentName;

pub const BLOCK: usize = 256;

fn tag(name: &ContentName, block: usize) -> Vec<u8> {
    let mut t = format!("{name}#{block}|").into_bytes();
    t.truncate(BLOCK);
    t
}

pub fn fixture(seed: u64, name: &ContentName, size: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_str().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut out = vec![0u8; size];
    rng.fill_bytes(&mut out);
    for (i, block) in out.chunks_mut(BLOCK).enumerate() {
        let t = tag(name, i);
        let n = t.len().min(block.len());
        block[..n].copy_from_slice(&t[..n]);
    }
    out
}

/// Checks that `bytes`, found at `offset` within some body, carry the tags
/// of `name`. Returns the offset of the first mismatching tag byte.
pub fn foreign_tag(name: &ContentName, offset: usize, bytes: &[u8]) -> Option<usize> {
    let first_block = offset / BLOCK;
    let last_block = (offset + bytes.len()).div_ceil(BLOCK);
    for block in first_block..last_block {
        let t = tag(name, block);
        for (j, expected) in t.iter().enumerate() {
            let abs = block * BLOCK + j;
            if abs < offset || abs >= offset + bytes.len() {
                continue;
            }
            if bytes[abs - offset] != *expected {
                return Some(abs);
            }
        }
    }
    None
}
