//! Deterministic pseudo-randomness keyed by 32-byte seeds.
//!
//! A stream is identified by `(seed, round, stream-id)`. The triple is hashed
//! with SHA-256 into a ChaCha12 key, so two parties (or a party and the
//! client) holding the same seed regenerate bit-identical noise without
//! talking to each other. Field elements are drawn by rejection sampling on
//! 61-bit words, so they are exactly uniform in `[0, q)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::field::{FieldElement, FieldMatrix, MODULUS};

pub type Seed = [u8; 32];

/// Domain separation for the independent streams drawn from one seed.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum StreamId {
    /// Free-form counter stream used by [`SeededPrf::new`].
    General,
    /// Noise a party adds to read pipeline `pipeline`.
    ReadNoise { pipeline: u16 },
    /// Rotation amount a party applies to read pipeline `pipeline`.
    ReadRotation { pipeline: u16 },
    /// Noise a party injects into write pipeline `pipeline`.
    WriteNoise { pipeline: u16 },
    /// Share re-randomization of the overall noise before upload.
    Reshare,
    /// Dealer-side material for the offline phase.
    Dealer { kind: u16 },
    /// Party-local randomness (multiplicative Beaver shares and the like).
    Local { kind: u16 },
    /// Coefficients of a random row combination, shared by all parties.
    Combination,
}

impl StreamId {
    fn encode(self) -> [u8; 4] {
        let (tag, arg): (u16, u16) = match self {
            StreamId::General => (0, 0),
            StreamId::ReadNoise { pipeline } => (1, pipeline),
            StreamId::ReadRotation { pipeline } => (2, pipeline),
            StreamId::WriteNoise { pipeline } => (3, pipeline),
            StreamId::Reshare => (4, 0),
            StreamId::Dealer { kind } => (5, kind),
            StreamId::Local { kind } => (6, kind),
            StreamId::Combination => (7, 0),
        };
        let mut out = [0u8; 4];
        out[..2].copy_from_slice(&tag.to_le_bytes());
        out[2..].copy_from_slice(&arg.to_le_bytes());
        out
    }
}

/// A seeded, counter-addressed generator of field elements and indices.
#[derive(Clone, Debug)]
pub struct SeededPrf {
    seed: Seed,
    counter: u64,
    rng: ChaCha12Rng,
}

const DOMAIN: &[u8] = b"cryptgnn/prf/v1";

fn stream_key(seed: &Seed, round: u64, stream: StreamId) -> Seed {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(seed);
    h.update(round.to_le_bytes());
    h.update(stream.encode());
    h.finalize().into()
}

impl SeededPrf {
    /// General-purpose stream at `counter`.
    pub fn new(seed: Seed, counter: u64) -> Self {
        Self::derive(&seed, counter, StreamId::General)
    }

    /// The stream for `(seed, round, stream)`.
    pub fn derive(seed: &Seed, round: u64, stream: StreamId) -> Self {
        SeededPrf {
            seed: *seed,
            counter: round,
            rng: ChaCha12Rng::from_seed(stream_key(seed, round, stream)),
        }
    }

    /// Fresh seed from OS entropy.
    pub fn random_seed() -> Seed {
        rand::random()
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// A uniformly random field element.
    #[inline]
    pub fn element(&mut self) -> FieldElement {
        loop {
            let v = self.rng.next_u64() & MODULUS;
            if v < MODULUS {
                return FieldElement::new(v);
            }
        }
    }

    pub fn nonzero_element(&mut self) -> FieldElement {
        loop {
            let v = self.element();
            if !v.is_zero() {
                return v;
            }
        }
    }

    pub fn elements(&mut self, n: usize) -> Vec<FieldElement> {
        (0..n).map(|_| self.element()).collect()
    }

    pub fn fill(&mut self, out: &mut [FieldElement]) {
        for v in out {
            *v = self.element();
        }
    }

    /// Uniform index in `[0, bound)`; `bound` must be positive.
    pub fn index(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound as u64) as usize
    }

    /// Uniform integer below `2^bits`.
    pub fn bits(&mut self, bits: u32) -> u64 {
        debug_assert!(bits <= 64);
        if bits == 64 {
            self.rng.next_u64()
        } else {
            self.rng.next_u64() & ((1u64 << bits) - 1)
        }
    }

    pub fn next_seed(&mut self) -> Seed {
        let mut s = [0u8; 32];
        self.rng.fill_bytes(&mut s);
        s
    }
}

/// The `rows x cols` noise matrix for `(seed, round, stream)`.
pub fn prf_matrix(seed: &Seed, round: u64, stream: StreamId, rows: usize, cols: usize) -> FieldMatrix {
    let mut prf = SeededPrf::derive(seed, round, stream);
    FieldMatrix::random(rows, cols, &mut prf)
}

/// Child seed for `(label, index)` under `master`.
pub fn derive_seed(master: &Seed, label: &str, index: u64) -> Seed {
    let mut h = Sha256::new();
    h.update(b"cryptgnn/seed/v1");
    h.update(master);
    h.update((label.len() as u32).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}
