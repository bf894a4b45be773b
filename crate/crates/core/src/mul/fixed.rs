//! Fixed-point truncation and sign tests backed by dealer streams.
//!
//! Truncation opens `c = x + 2^47 + r` for a dealt `r < 2^60`, divides in
//! the clear and subtracts the dealt `floor(r / 2^f)`. Inputs must satisfy
//! `|x| < 2^47`; the mask hides the 48-bit value up to 12 bits of statistical
//! slack. The plain variant rounds stochastically (error below one unit in
//! the last place); the exact variant also computes the borrow of the low
//! `f` bits and returns `floor(x / 2^f)`.
//!
//! The sign test works on `|x| < 2^31`: it opens `x + 2^31 + r` with
//! `r = 2^31·r'' + r'`, compares the low 31 bits against the dealt bits of
//! `r'` with a suffix-OR circuit, and recovers the top bit.

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix};
use crate::provider::{
    suffix_or_mults, DealerStream, ScalarBeaverTriple, StreamKind, COMPARE_BITS, TRUNC_INPUT_BITS,
};
use crate::transport::{PayloadTag, Session};

use super::{beaver_mul_scalars, elem_mul, TripleBuffer};

fn check_kind(stream: &DealerStream, kind: StreamKind) -> Result<()> {
    if stream.kind() != kind {
        return Err(Error::Config(format!(
            "expected a {}, got a {}",
            kind.name(),
            stream.kind().name()
        )));
    }
    Ok(())
}

fn pow2(bits: u32) -> FieldElement {
    FieldElement::new(1u64 << bits)
}

/// Opens `x + 2^47 + r` and returns `(opened, stream values)`.
fn open_masked(
    session: &mut Session,
    x: &FieldMatrix,
    stream: &mut DealerStream,
) -> Result<(Vec<u64>, Vec<FieldElement>)> {
    let n = x.len();
    let len = stream.item_len();
    let (_, vals) = stream.take(n)?;
    let offset = if session.me() == 0 { pow2(TRUNC_INPUT_BITS) } else { FieldElement::ZERO };
    let masked: Vec<FieldElement> = x
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + offset + vals[i * len])
        .collect();
    let opened = session.open(PayloadTag::BeaverOpen, FieldMatrix::from_vec(1, n, masked)?)?;
    Ok((opened.as_slice().iter().map(|v| v.value()).collect(), vals))
}

/// Probabilistic truncation by `fraction_bits`: one open round.
pub fn truncate(
    session: &mut Session,
    x: &FieldMatrix,
    stream: &mut DealerStream,
    fraction_bits: u32,
) -> Result<FieldMatrix> {
    check_kind(stream, StreamKind::Truncation)?;
    let (c, vals) = open_masked(session, x, stream)?;
    let len = stream.item_len();
    let lead = session.me() == 0;
    let shift = pow2(TRUNC_INPUT_BITS - fraction_bits);
    let data = c
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let r_hi = vals[i * len + 1];
            if lead {
                FieldElement::new(c >> fraction_bits) - shift - r_hi
            } else {
                -r_hi
            }
        })
        .collect();
    FieldMatrix::from_vec(x.rows(), x.cols(), data)
}

/// Exact `floor(x / 2^f)`: the open round plus one round per suffix-OR level.
pub fn truncate_exact(
    session: &mut Session,
    x: &FieldMatrix,
    stream: &mut DealerStream,
    fraction_bits: u32,
) -> Result<FieldMatrix> {
    check_kind(stream, StreamKind::ExactTruncation)?;
    let (c, vals) = open_masked(session, x, stream)?;
    let len = stream.item_len();
    let f = fraction_bits as usize;
    let n = c.len();
    let mut r_bits = Vec::with_capacity(n * f);
    let mut triples = Vec::with_capacity(n * suffix_or_mults(fraction_bits));
    for i in 0..n {
        let item = &vals[i * len..(i + 1) * len];
        r_bits.extend_from_slice(&item[2..2 + f]);
        triples.extend(item[2 + f..].chunks_exact(3).map(|t| ScalarBeaverTriple { a: t[0], b: t[1], c: t[2] }));
    }
    let low_mask = (1u64 << fraction_bits) - 1;
    let c_low: Vec<u64> = c.iter().map(|&c| c & low_mask).collect();
    let borrow = bit_lt(session, &c_low, fraction_bits, &r_bits, &triples)?;
    let lead = session.me() == 0;
    let shift = pow2(TRUNC_INPUT_BITS - fraction_bits);
    let data = (0..n)
        .map(|i| {
            let r_hi = vals[i * len + 1];
            let base = if lead {
                FieldElement::new(c[i] >> fraction_bits) - shift
            } else {
                FieldElement::ZERO
            };
            base - r_hi - borrow[i]
        })
        .collect();
    FieldMatrix::from_vec(x.rows(), x.cols(), data)
}

/// Shares of `[c < r]` for public `c` and secret `r` given bitwise.
///
/// `r_bits` holds `bits` shares per element (least significant first) and
/// `triples` holds `suffix_or_mults(bits)` triples per element. Costs one
/// round per doubling level.
pub fn bit_lt(
    session: &mut Session,
    c: &[u64],
    bits: u32,
    r_bits: &[FieldElement],
    triples: &[ScalarBeaverTriple],
) -> Result<Vec<FieldElement>> {
    let n = c.len();
    let w = bits as usize;
    let per = suffix_or_mults(bits);
    if r_bits.len() != n * w || triples.len() != n * per {
        return Err(Error::ShapeMismatch {
            expected: (n * w, n * per),
            found: (r_bits.len(), triples.len()),
        });
    }
    let lead = session.me() == 0;
    let one = if lead { FieldElement::ONE } else { FieldElement::ZERO };
    // d_i = c_i XOR r_i, linear because c is public.
    let mut e: Vec<FieldElement> = (0..n * w)
        .map(|k| {
            let (j, i) = (k / w, k % w);
            if (c[j] >> i) & 1 == 0 {
                r_bits[k]
            } else {
                one - r_bits[k]
            }
        })
        .collect();

    let mut stride = 1usize;
    let mut level_offset = 0usize;
    while stride < w {
        let active = w - stride;
        let mut xs = Vec::with_capacity(n * active);
        let mut ys = Vec::with_capacity(n * active);
        let mut ts = Vec::with_capacity(n * active);
        for j in 0..n {
            for i in 0..active {
                xs.push(e[j * w + i]);
                ys.push(e[j * w + i + stride]);
                ts.push(triples[j * per + level_offset + i]);
            }
        }
        let prods = beaver_mul_scalars(session, &xs, &ys, &ts)?;
        for j in 0..n {
            for i in 0..active {
                let k = j * active + i;
                e[j * w + i] = xs[k] + ys[k] - prods[k];
            }
        }
        level_offset += active;
        stride *= 2;
    }

    // e_i now ORs every d_j with j >= i; the first set position from the top
    // is where c and r differ, and r is larger exactly when c has a 0 there.
    Ok((0..n)
        .map(|j| {
            let mut u = FieldElement::ZERO;
            for i in 0..w {
                if (c[j] >> i) & 1 == 0 {
                    let next = if i + 1 < w { e[j * w + i + 1] } else { FieldElement::ZERO };
                    u += e[j * w + i] - next;
                }
            }
            u
        })
        .collect())
}

/// Shares of the bit `[x >= 0]` (as 0/1, unscaled) for `|x| < 2^31`.
pub fn compare_ge_zero(session: &mut Session, x: &FieldMatrix, stream: &mut DealerStream) -> Result<FieldMatrix> {
    check_kind(stream, StreamKind::Compare)?;
    let n = x.len();
    let len = stream.item_len();
    let w = COMPARE_BITS as usize;
    let (_, vals) = stream.take(n)?;
    let lead = session.me() == 0;
    let offset = if lead { pow2(COMPARE_BITS) } else { FieldElement::ZERO };
    let a: Vec<FieldElement> = x.as_slice().iter().map(|&v| v + offset).collect();
    let masked: Vec<FieldElement> = a.iter().enumerate().map(|(i, &v)| v + vals[i * len]).collect();
    let c = session.open(PayloadTag::BeaverOpen, FieldMatrix::from_vec(1, n, masked)?)?;
    let low_mask = (1u64 << COMPARE_BITS) - 1;
    let c_low: Vec<u64> = c.as_slice().iter().map(|v| v.value() & low_mask).collect();

    let mut r_bits = Vec::with_capacity(n * w);
    let mut triples = Vec::with_capacity(n * suffix_or_mults(COMPARE_BITS));
    for i in 0..n {
        let item = &vals[i * len..(i + 1) * len];
        r_bits.extend_from_slice(&item[1..1 + w]);
        triples.extend(item[1 + w..].chunks_exact(3).map(|t| ScalarBeaverTriple { a: t[0], b: t[1], c: t[2] }));
    }
    let u = bit_lt(session, &c_low, COMPARE_BITS, &r_bits, &triples)?;
    let inv = pow2(COMPARE_BITS).inverse()?;
    let data = (0..n)
        .map(|i| {
            let r_low: FieldElement = r_bits[i * w..(i + 1) * w]
                .iter()
                .enumerate()
                .map(|(b, &s)| s * pow2(b as u32))
                .sum();
            let c_term = if lead { FieldElement::new(c_low[i]) } else { FieldElement::ZERO };
            (a[i] - c_term + r_low - pow2(COMPARE_BITS) * u[i]) * inv
        })
        .collect();
    FieldMatrix::from_vec(x.rows(), x.cols(), data)
}

/// `max(0, x)`: sign test, then one element-wise product with the bit.
pub fn relu(
    session: &mut Session,
    x: &FieldMatrix,
    compare: &mut DealerStream,
    buffer: &mut TripleBuffer,
) -> Result<FieldMatrix> {
    let bit = compare_ge_zero(session, x, compare)?;
    elem_mul(session, &bit, x, buffer)
}
