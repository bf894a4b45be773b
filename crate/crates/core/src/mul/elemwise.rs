use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix, MulShare};
use crate::prf::SeededPrf;
use crate::provider::{AMPair, AMPool, ScalarBeaverTriple};
use crate::transport::{PayloadTag, Session};

use super::beaver_mul_scalars;

/// One party's multiplicative shares of a triple; `c` is the local product.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MulBeaverTriple {
    pub a: MulShare,
    pub b: MulShare,
    pub c: MulShare,
}

/// Samples `count` multiplicative triples locally, without communication.
pub fn beaver_m(prf: &mut SeededPrf, count: usize) -> Vec<MulBeaverTriple> {
    (0..count)
        .map(|_| {
            let a = MulShare::new(prf.nonzero_element()).expect("nonzero");
            let b = MulShare::new(prf.nonzero_element()).expect("nonzero");
            MulBeaverTriple { a, b, c: a * b }
        })
        .collect()
}

/// Converts multiplicative shares to additive ones, one pair per value.
///
/// Each party publishes `α_p = W_p · R_p^{-1}`; the product of all `α_p` is
/// `α = W / R` and `α·⟦R⟧` is an additive sharing of `W`. One open round.
pub fn m_to_a(session: &mut Session, w: &[MulShare], pairs: &[AMPair]) -> Result<Vec<FieldElement>> {
    if w.len() != pairs.len() {
        return Err(Error::ShapeMismatch {
            expected: (w.len(), 1),
            found: (pairs.len(), 1),
        });
    }
    let alpha_shares: Vec<FieldElement> = w
        .iter()
        .zip(pairs)
        .map(|(w, p)| w.value() * p.multiplicative.inverse().value())
        .collect();
    let n = alpha_shares.len();
    let gathered = session.all_gather(
        PayloadTag::AlphaOpen,
        vec![FieldMatrix::from_vec(1, n, alpha_shares)?],
    )?;
    let mut alpha = vec![FieldElement::ONE; n];
    for party in &gathered {
        let shares = party[0].as_slice();
        if shares.len() != n {
            return Err(Error::Protocol(format!("alpha opening carries {} values, expected {n}", shares.len())));
        }
        for (acc, &s) in alpha.iter_mut().zip(shares) {
            if s.is_zero() {
                return Err(Error::ZeroMulShare);
            }
            *acc *= s;
        }
    }
    Ok(alpha.iter().zip(pairs).map(|(&a, p)| a * p.additive).collect())
}

/// Converts multiplicative triples into additive ones with three AM pairs
/// each, batching all openings into one round.
///
/// Returns the pool index of the first pair consumed.
pub fn beaver_m_to_a(
    session: &mut Session,
    triples: &[MulBeaverTriple],
    pool: &mut AMPool,
) -> Result<(usize, Vec<ScalarBeaverTriple>)> {
    let (start, pairs) = pool.take(3 * triples.len())?;
    let w: Vec<MulShare> = triples.iter().flat_map(|t| [t.a, t.b, t.c]).collect();
    let converted = m_to_a(session, &w, &pairs)?;
    Ok((
        start,
        converted
            .chunks_exact(3)
            .map(|c| ScalarBeaverTriple {
                a: c[0],
                b: c[1],
                c: c[2],
            })
            .collect(),
    ))
}

/// Additive triples prepared for one inference, handed out in order.
#[derive(Clone, Debug, Default)]
pub struct TripleBuffer {
    triples: Vec<ScalarBeaverTriple>,
    cursor: usize,
    first_pair: usize,
}

impl TripleBuffer {
    /// Builds `count` fresh triples: local multiplicative sampling, then
    /// one conversion round. No communication when `count` is zero.
    pub fn prepare(session: &mut Session, prf: &mut SeededPrf, pool: &mut AMPool, count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(TripleBuffer {
                first_pair: pool.cursor(),
                ..Default::default()
            });
        }
        let mult = beaver_m(prf, count);
        let (first_pair, triples) = beaver_m_to_a(session, &mult, pool)?;
        Ok(TripleBuffer {
            triples,
            cursor: 0,
            first_pair,
        })
    }

    pub fn from_triples(triples: Vec<ScalarBeaverTriple>) -> Self {
        TripleBuffer {
            triples,
            cursor: 0,
            first_pair: 0,
        }
    }

    pub fn first_pair(&self) -> usize {
        self.first_pair
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.triples.len() - self.cursor
    }

    pub fn take(&mut self, count: usize) -> Result<&[ScalarBeaverTriple]> {
        if count > self.remaining() {
            return Err(Error::PoolExhausted {
                pool: "element-wise triple buffer",
                requested: count,
                available: self.remaining(),
            });
        }
        let start = self.cursor;
        self.cursor += count;
        Ok(&self.triples[start..self.cursor])
    }
}

/// Entrywise product of two shared matrices; one open round.
pub fn elem_mul(
    session: &mut Session,
    x: &FieldMatrix,
    y: &FieldMatrix,
    buffer: &mut TripleBuffer,
) -> Result<FieldMatrix> {
    Ok(elem_mul_many(session, &[(x, y)], buffer)?.pop().expect("one product"))
}

/// Several entrywise products sharing a single open round.
pub fn elem_mul_many(
    session: &mut Session,
    pairs: &[(&FieldMatrix, &FieldMatrix)],
    buffer: &mut TripleBuffer,
) -> Result<Vec<FieldMatrix>> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in pairs {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                expected: x.shape(),
                found: y.shape(),
            });
        }
        xs.extend_from_slice(x.as_slice());
        ys.extend_from_slice(y.as_slice());
    }
    let triples = buffer.take(xs.len())?.to_vec();
    let z = beaver_mul_scalars(session, &xs, &ys, &triples)?;
    let mut out = Vec::with_capacity(pairs.len());
    let mut offset = 0;
    for (x, _) in pairs {
        let n = x.len();
        out.push(FieldMatrix::from_vec(x.rows(), x.cols(), z[offset..offset + n].to_vec())?);
        offset += n;
    }
    Ok(out)
}

/// The local steps of the conversion over an arbitrary prime modulus, for
/// checking against hand computations in small fields.
pub mod small_field {
    use crate::field::mod_inverse;

    /// `w_p · r_p^{-1} mod modulus`; `None` when `r_p` is not invertible.
    pub fn alpha_share(w_share: u64, r_mul_share: u64, modulus: u64) -> Option<u64> {
        let inv = mod_inverse(r_mul_share, modulus)?;
        Some(((w_share as u128 * inv as u128) % modulus as u128) as u64)
    }

    /// Product of the published alpha shares.
    pub fn open_alpha(shares: &[u64], modulus: u64) -> u64 {
        shares
            .iter()
            .fold(1u128, |acc, &s| acc * s as u128 % modulus as u128) as u64
    }

    /// `α·⟦R⟧_p mod modulus`.
    pub fn additive_share(alpha: u64, r_add_share: u64, modulus: u64) -> u64 {
        ((alpha as u128 * r_add_share as u128) % modulus as u128) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::small_field::*;
    use super::*;

    #[test]
    fn z101_worked_example() {
        let q = 101;
        // W = 2·3 = 6, R = 4 with multiplicative shares (1, 4), additive (1, 3).
        let a0 = alpha_share(2, 1, q).unwrap();
        let a1 = alpha_share(3, 4, q).unwrap();
        let alpha = open_alpha(&[a0, a1], q);
        assert_eq!(alpha, 52);
        assert_eq!(alpha * 4 % q, 6);
        let s0 = additive_share(alpha, 1, q);
        let s1 = additive_share(alpha, 3, q);
        assert_eq!((s0 + s1) % q, 6);
    }

    #[test]
    fn beaver_m_example_shares() {
        let a = [2u64, 3].map(|v| MulShare::new(FieldElement::new(v)).unwrap());
        let b = [5u64, 7].map(|v| MulShare::new(FieldElement::new(v)).unwrap());
        let c: Vec<u64> = a.iter().zip(&b).map(|(a, b)| (*a * *b).value().value()).collect();
        assert_eq!(c, vec![10, 21]);
        assert_eq!(c[0] * c[1], 6 * 35);
    }

    #[test]
    fn beaver_m_is_local_and_consistent() {
        let mut prf = SeededPrf::new([3; 32], 0);
        for t in beaver_m(&mut prf, 100) {
            assert_eq!(t.c.value(), t.a.value() * t.b.value());
        }
    }

    #[test]
    fn buffer_refuses_overdraw() {
        let mut b = TripleBuffer::from_triples(vec![ScalarBeaverTriple::default(); 2]);
        b.take(1).unwrap();
        assert!(matches!(b.take(2), Err(Error::PoolExhausted { .. })));
    }
}
