//! Named random streams derived from a master seed.
//!
//! Each stream is seeded by SHA-256 of the master seed and a label, so adding
//! a population or a phase never shifts an unrelated stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(master, label))
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let d = digest(master, label);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
