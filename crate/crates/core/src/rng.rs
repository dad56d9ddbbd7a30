//! Named random sub-streams derived from one user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent consumers of randomness. Each gets its own ChaCha stream so
/// adding draws to one never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Generator,
    SparseInit,
    Corrupt,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Generator, Stream::SparseInit, Stream::Corrupt];

    pub fn id(self) -> u64 {
        match self {
            Stream::Generator => 1,
            Stream::SparseInit => 2,
            Stream::Corrupt => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Generator => "generator",
            Stream::SparseInit => "sparse-init",
            Stream::Corrupt => "corrupt",
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
