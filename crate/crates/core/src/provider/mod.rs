//! Correlated randomness for multiplications and non-linear layers.
//!
//! The offline substrate is a dealer: a sampler that runs before any input
//! exists and hands each party its shares. It produces matrix Beaver triples,
//! scalar triples, the link material from which the parties derive
//! additive/multiplicative pairs, and the truncation and comparison streams.
//! Large streams are seed-compressed: every party but the last expands its
//! shares from a private seed, and only the last party stores explicit
//! correction values.

mod offline;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{split_additive, FieldElement, FieldMatrix, MulShare, ShareMatrix};
use crate::prf::{derive_seed, Seed, SeededPrf, StreamId};

pub use offline::{msas_pair_batch, AmLinkMaterial};
pub use store::{AuditEntry, ClientState, OfflineMaterial, OfflineSizing, MatrixShape};

/// Bits of the compared value below its sign position.
pub const COMPARE_BITS: u32 = 31;
/// Statistical masking bits above the compared value.
pub const COMPARE_MASK_BITS: u32 = 29;
/// Values fed to truncation must satisfy `|x| < 2^TRUNC_INPUT_BITS`.
pub const TRUNC_INPUT_BITS: u32 = 47;
/// Truncation masks are drawn below `2^TRUNC_MASK_BITS`.
pub const TRUNC_MASK_BITS: u32 = 60;

/// Multiplications needed by a suffix-OR over `bits` bits (doubling strides).
pub fn suffix_or_mults(bits: u32) -> usize {
    let mut total = 0usize;
    let mut stride = 1u32;
    while stride < bits {
        total += (bits - stride) as usize;
        stride *= 2;
    }
    total
}

/// One party's shares of a matrix triple with `A ⊗ B = C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixBeaverTriple {
    pub a: ShareMatrix,
    pub b: ShareMatrix,
    pub c: ShareMatrix,
}

/// One party's shares of a scalar triple with `a·b = c`.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct ScalarBeaverTriple {
    pub a: FieldElement,
    pub b: FieldElement,
    pub c: FieldElement,
}

/// One party's half of an additive/multiplicative pair.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AMPair {
    pub additive: FieldElement,
    pub multiplicative: MulShare,
}

/// A party's pool of AM pairs, consumed front to back.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AMPool {
    additive: Vec<FieldElement>,
    multiplicative: Vec<FieldElement>,
    cursor: usize,
}

impl AMPool {
    pub fn new(additive: Vec<FieldElement>, multiplicative: Vec<FieldElement>) -> Result<Self> {
        if additive.len() != multiplicative.len() {
            return Err(Error::ShapeMismatch {
                expected: (additive.len(), 1),
                found: (multiplicative.len(), 1),
            });
        }
        if multiplicative.iter().any(|v| v.is_zero()) {
            return Err(Error::ZeroMulShare);
        }
        Ok(AMPool {
            additive,
            multiplicative,
            cursor: 0,
        })
    }

    pub(crate) fn from_parts(
        additive: Vec<FieldElement>,
        multiplicative: Vec<FieldElement>,
        cursor: usize,
    ) -> Result<Self> {
        let mut pool = AMPool::new(additive, multiplicative)?;
        if cursor > pool.len() {
            return Err(Error::Format(format!("pool cursor {cursor} beyond {} pairs", pool.len())));
        }
        pool.cursor = cursor;
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.additive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.additive.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.len() - self.cursor
    }

    pub fn pair(&self, index: usize) -> Option<AMPair> {
        Some(AMPair {
            additive: *self.additive.get(index)?,
            multiplicative: MulShare::new(self.multiplicative[index]).ok()?,
        })
    }

    /// Hands out the next `count` pairs; returns the index of the first.
    pub fn take(&mut self, count: usize) -> Result<(usize, Vec<AMPair>)> {
        if count > self.remaining() {
            return Err(Error::PoolExhausted {
                pool: "AM pair pool",
                requested: count,
                available: self.remaining(),
            });
        }
        let start = self.cursor;
        self.cursor += count;
        let pairs = (start..self.cursor).map(|i| self.pair(i).expect("in range")).collect();
        Ok((start, pairs))
    }

    pub(crate) fn additive(&self) -> &[FieldElement] {
        &self.additive
    }

    pub(crate) fn multiplicative(&self) -> &[FieldElement] {
        &self.multiplicative
    }
}

/// Kinds of seed-compressed dealer streams.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum StreamKind {
    /// `(r, floor(r / 2^f))` with `r < 2^60`.
    Truncation = 1,
    /// Truncation pair plus the low `f` bits of `r` and triples for a
    /// borrow computation, giving exact floor division.
    ExactTruncation = 2,
    /// Mask `r = 2^31·r'' + Σ b_i 2^i`, the bits `b_i` and triples for a
    /// suffix-OR over 31 bits.
    Compare = 3,
}

impl StreamKind {
    pub fn from_u16(v: u16) -> Result<Self> {
        match v {
            1 => Ok(StreamKind::Truncation),
            2 => Ok(StreamKind::ExactTruncation),
            3 => Ok(StreamKind::Compare),
            other => Err(Error::Format(format!("unknown stream kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Truncation => "truncation stream",
            StreamKind::ExactTruncation => "exact truncation stream",
            StreamKind::Compare => "comparison stream",
        }
    }

    /// Field elements per item for `f` fraction bits.
    pub fn item_len(self, fraction_bits: u32) -> usize {
        match self {
            StreamKind::Truncation => 2,
            StreamKind::ExactTruncation => 2 + fraction_bits as usize + 3 * suffix_or_mults(fraction_bits),
            StreamKind::Compare => 1 + COMPARE_BITS as usize + 3 * suffix_or_mults(COMPARE_BITS),
        }
    }

    /// Plaintext item values drawn by the dealer.
    fn sample(self, fraction_bits: u32, prf: &mut SeededPrf) -> Vec<FieldElement> {
        let mut out = Vec::with_capacity(self.item_len(fraction_bits));
        let push_triples = |out: &mut Vec<FieldElement>, prf: &mut SeededPrf, n: usize| {
            for _ in 0..n {
                let a = prf.element();
                let b = prf.element();
                out.extend([a, b, a * b]);
            }
        };
        match self {
            StreamKind::Truncation => {
                let r = prf.bits(TRUNC_MASK_BITS);
                out.extend([FieldElement::new(r), FieldElement::new(r >> fraction_bits)]);
            }
            StreamKind::ExactTruncation => {
                let r = prf.bits(TRUNC_MASK_BITS);
                out.extend([FieldElement::new(r), FieldElement::new(r >> fraction_bits)]);
                out.extend((0..fraction_bits).map(|i| FieldElement::new((r >> i) & 1)));
                push_triples(&mut out, prf, suffix_or_mults(fraction_bits));
            }
            StreamKind::Compare => {
                let low = prf.bits(COMPARE_BITS);
                let high = prf.bits(COMPARE_MASK_BITS);
                out.push(FieldElement::new((high << COMPARE_BITS) | low));
                out.extend((0..COMPARE_BITS).map(|i| FieldElement::new((low >> i) & 1)));
                push_triples(&mut out, prf, suffix_or_mults(COMPARE_BITS));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum StreamSource {
    Seeded(Seed),
    Explicit(Vec<FieldElement>),
}

/// One party's view of a dealer stream: capacity, cursor and share source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DealerStream {
    kind: StreamKind,
    item_len: usize,
    capacity: usize,
    cursor: usize,
    source: StreamSource,
}

impl DealerStream {
    pub(crate) fn from_parts(
        kind: StreamKind,
        item_len: usize,
        capacity: usize,
        cursor: usize,
        source: StreamSource,
    ) -> Result<Self> {
        if let StreamSource::Explicit(v) = &source {
            if v.len() != item_len * capacity {
                return Err(Error::Format(format!(
                    "{} holds {} values, expected {}",
                    kind.name(),
                    v.len(),
                    item_len * capacity
                )));
            }
        }
        if cursor > capacity {
            return Err(Error::Format(format!("{} cursor beyond capacity", kind.name())));
        }
        Ok(DealerStream {
            kind,
            item_len,
            capacity,
            cursor,
            source,
        })
    }

    pub fn empty(kind: StreamKind, fraction_bits: u32) -> Self {
        DealerStream {
            kind,
            item_len: kind.item_len(fraction_bits),
            capacity: 0,
            cursor: 0,
            source: StreamSource::Explicit(Vec::new()),
        }
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn item_len(&self) -> usize {
        self.item_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.cursor
    }

    pub(crate) fn source(&self) -> &StreamSource {
        &self.source
    }

    fn seeded_item(seed: &Seed, kind: StreamKind, index: usize, len: usize) -> Vec<FieldElement> {
        SeededPrf::derive(seed, index as u64, StreamId::Dealer { kind: kind as u16 }).elements(len)
    }

    /// The next `count` items, flattened (`count * item_len` values).
    pub fn take(&mut self, count: usize) -> Result<(usize, Vec<FieldElement>)> {
        if count > self.remaining() {
            return Err(Error::PoolExhausted {
                pool: self.kind.name(),
                requested: count,
                available: self.remaining(),
            });
        }
        let start = self.cursor;
        let values = match &self.source {
            StreamSource::Explicit(v) => v[start * self.item_len..(start + count) * self.item_len].to_vec(),
            StreamSource::Seeded(seed) => {
                let mut out = Vec::with_capacity(count * self.item_len);
                for i in start..start + count {
                    out.extend(Self::seeded_item(seed, self.kind, i, self.item_len));
                }
                out
            }
        };
        self.cursor += count;
        Ok((start, values))
    }
}

/// Dealer emulation: samples correlated randomness and deals it out.
pub struct Dealer {
    prf: SeededPrf,
    seed: Seed,
    parties: usize,
    fraction_bits: u32,
}

impl Dealer {
    pub fn new(seed: Seed, parties: usize, fraction_bits: u32) -> Result<Self> {
        if parties < 2 {
            return Err(Error::Config(format!("need at least 2 parties, got {parties}")));
        }
        Ok(Dealer {
            prf: SeededPrf::derive(&seed, 0, StreamId::Dealer { kind: 0 }),
            seed,
            parties,
            fraction_bits,
        })
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// A uniformly random `n_max x k` by `k x k2` matrix triple.
    pub fn matrix_triple(&mut self, n_max: usize, k: usize, k2: usize) -> Result<Vec<MatrixBeaverTriple>> {
        let a = FieldMatrix::random(n_max, k, &mut self.prf);
        let b = FieldMatrix::random(k, k2, &mut self.prf);
        self.matrix_triple_from(&a, &b)
    }

    /// Deals `C = A ⊗ B` for the given `A` and `B`.
    pub fn matrix_triple_from(&mut self, a: &FieldMatrix, b: &FieldMatrix) -> Result<Vec<MatrixBeaverTriple>> {
        let c = a.matmul(b)?;
        let sa = split_additive(a, self.parties, &mut self.prf)?;
        let sb = split_additive(b, self.parties, &mut self.prf)?;
        let sc = split_additive(&c, self.parties, &mut self.prf)?;
        Ok(sa
            .into_iter()
            .zip(sb)
            .zip(sc)
            .map(|((a, b), c)| MatrixBeaverTriple { a, b, c })
            .collect())
    }

    /// `count` scalar triples per party.
    pub fn scalar_triples(&mut self, count: usize) -> Result<Vec<Vec<ScalarBeaverTriple>>> {
        let mut out = vec![vec![ScalarBeaverTriple::default(); count]; self.parties];
        for i in 0..count {
            let a = self.prf.element();
            let b = self.prf.element();
            let shares = self.share_values(&[a, b, a * b]);
            for (p, s) in shares.into_iter().enumerate() {
                out[p][i] = ScalarBeaverTriple { a: s[0], b: s[1], c: s[2] };
            }
        }
        Ok(out)
    }

    fn share_values(&mut self, values: &[FieldElement]) -> Vec<Vec<FieldElement>> {
        let mut shares = Vec::with_capacity(self.parties);
        let mut last: Vec<FieldElement> = values.to_vec();
        for _ in 0..self.parties - 1 {
            let s = self.prf.elements(values.len());
            for (l, v) in last.iter_mut().zip(&s) {
                *l -= *v;
            }
            shares.push(s);
        }
        shares.push(last);
        shares
    }

    /// Two-party additive-to-multiplicative conversion of a nonzero value.
    pub fn two_party_conversion(&mut self, value: FieldElement) -> Result<(FieldElement, FieldElement)> {
        let m = self.prf.nonzero_element();
        Ok((m, value * m.inverse()?))
    }

    /// Material for `count` AM pairs with link values drawn by the dealer.
    pub fn am_links(&mut self, count: usize) -> Result<Vec<AmLinkMaterial>> {
        let links = self.parties - 1;
        let mut xs = Vec::with_capacity(links);
        for _ in 0..links {
            let mut link = Vec::with_capacity(count);
            for _ in 0..count {
                // Resample until the link value is nonzero so R never is.
                loop {
                    let x0 = self.prf.element();
                    let x1 = self.prf.element();
                    if !(x0 + x1).is_zero() {
                        link.push((x0, x1));
                        break;
                    }
                }
            }
            xs.push(link);
        }
        self.am_links_from(&xs)
    }

    /// AM material for explicit link values: `xs[i][j]` are the additive
    /// shares of `R_i` for pair `j` held by parties `i` and `i + 1`.
    pub fn am_links_from(&mut self, xs: &[Vec<(FieldElement, FieldElement)>]) -> Result<Vec<AmLinkMaterial>> {
        let links = self.parties - 1;
        if xs.len() != links {
            return Err(Error::Config(format!("expected {links} links, got {}", xs.len())));
        }
        let count = xs.first().map_or(0, Vec::len);
        let mut out: Vec<AmLinkMaterial> = (0..self.parties)
            .map(|_| AmLinkMaterial {
                additive: vec![vec![FieldElement::ZERO; count]; links],
                multiplicative: vec![vec![FieldElement::ONE; count]; links],
                fold_triples: Vec::new(),
            })
            .collect();
        for (i, link) in xs.iter().enumerate() {
            if link.len() != count {
                return Err(Error::Config("links must carry the same number of pairs".into()));
            }
            for (j, &(x0, x1)) in link.iter().enumerate() {
                let r = x0 + x1;
                if r.is_zero() {
                    return Err(Error::ZeroMulShare);
                }
                let (m0, m1) = self.two_party_conversion(r)?;
                out[i].additive[i][j] = x0;
                out[i + 1].additive[i][j] = x1;
                out[i].multiplicative[i][j] = m0;
                out[i + 1].multiplicative[i][j] = m1;
            }
        }
        for _ in 1..links {
            let triples = self.scalar_triples(count)?;
            for (p, t) in triples.into_iter().enumerate() {
                out[p].fold_triples.push(t);
            }
        }
        Ok(out)
    }

    /// A seed-compressed stream of `capacity` items, one view per party.
    pub fn stream(&mut self, kind: StreamKind, capacity: usize) -> Result<Vec<DealerStream>> {
        let item_len = kind.item_len(self.fraction_bits);
        let label = format!("stream-{}", kind as u16);
        let nonce = self.prf.bits(64);
        let seeds: Vec<Seed> = (0..self.parties - 1)
            .map(|p| derive_seed(&self.seed, &label, (nonce << 8) | p as u64))
            .collect();
        let mut values_prf = SeededPrf::derive(&derive_seed(&self.seed, &label, nonce), 0, StreamId::General);
        let mut last = Vec::with_capacity(capacity * item_len);
        for i in 0..capacity {
            let mut item = kind.sample(self.fraction_bits, &mut values_prf);
            for seed in &seeds {
                let share = DealerStream::seeded_item(seed, kind, i, item_len);
                for (v, s) in item.iter_mut().zip(share) {
                    *v -= s;
                }
            }
            last.extend(item);
        }
        let mut out: Vec<DealerStream> = seeds
            .into_iter()
            .map(|s| DealerStream {
                kind,
                item_len,
                capacity,
                cursor: 0,
                source: StreamSource::Seeded(s),
            })
            .collect();
        out.push(DealerStream {
            kind,
            item_len,
            capacity,
            cursor: 0,
            source: StreamSource::Explicit(last),
        });
        Ok(out)
    }
}

/// Splits `(⟦r⟧, ⟦r / 2^f⟧)` items out of a flattened truncation stream chunk.
pub fn truncation_pairs(values: &[FieldElement], item_len: usize) -> impl Iterator<Item = (FieldElement, FieldElement)> + '_ {
    values.chunks_exact(item_len).map(|c| (c[0], c[1]))
}
