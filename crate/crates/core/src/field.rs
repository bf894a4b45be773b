//! Arithmetic over the Mersenne prime field `q = 2^61 - 1`, fixed-point
//! encoding of reals, and additive / multiplicative secret sharing.
//!
//! Every share, mask and opened value in the crate is a [`FieldElement`].
//! Matrices are stored row-major in [`FieldMatrix`]; a party's additive share
//! of a matrix is a [`ShareMatrix`].

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};
use crate::prf::SeededPrf;

/// The field modulus, `2^61 - 1`.
pub const MODULUS: u64 = (1u64 << 61) - 1;

/// Values strictly above this decode as negative.
pub const HALF_MODULUS: u64 = (MODULUS - 1) / 2;

#[inline(always)]
fn reduce128(x: u128) -> u64 {
    // x < 2^122 for products of reduced operands.
    let lo = (x as u64) & MODULUS;
    let hi = (x >> 61) as u64;
    reduce64(lo + hi)
}

#[inline(always)]
fn reduce64(x: u64) -> u64 {
    let s = (x & MODULUS) + (x >> 61);
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

/// An element of `Z_q`, always kept in `[0, q)`.
#[derive(Copy, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub fn new(value: u64) -> Self {
        FieldElement(reduce64(value))
    }

    /// Builds an element from a value already known to be below `q`.
    ///
    /// Returns `None` for non-canonical input; used by deserialization.
    pub fn from_canonical(value: u64) -> Option<Self> {
        (value < MODULUS).then_some(FieldElement(value))
    }

    /// Maps a signed integer into the field (negatives become `q - |v|`).
    pub fn from_i64(v: i64) -> Self {
        if v >= 0 {
            FieldElement::new(v as u64)
        } else {
            -FieldElement::new(v.unsigned_abs())
        }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Signed interpretation: values in `((q-1)/2, q)` are negative.
    pub fn to_i64(self) -> i64 {
        if self.0 > HALF_MODULUS {
            -((MODULUS - self.0) as i64)
        } else {
            self.0 as i64
        }
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = FieldElement::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inverse(self) -> Result<Self> {
        mod_inverse(self.0, MODULUS)
            .map(FieldElement)
            .ok_or(Error::ZeroInverse)
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for FieldElement {
    fn from(v: u64) -> Self {
        FieldElement::new(v)
    }
}

impl Add for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        FieldElement(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Sub for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            FieldElement(self.0 - rhs.0)
        } else {
            FieldElement(self.0 + MODULUS - rhs.0)
        }
    }
}

impl Mul for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        FieldElement(reduce128(self.0 as u128 * rhs.0 as u128))
    }
}

impl Neg for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            FieldElement(MODULUS - self.0)
        }
    }
}

impl AddAssign for FieldElement {
    #[inline(always)]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    #[inline(always)]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    #[inline(always)]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl std::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(FieldElement::ZERO, |a, b| a + b)
    }
}

impl std::iter::Product for FieldElement {
    fn product<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(FieldElement::ONE, |a, b| a * b)
    }
}

/// Inverse of `x` modulo `modulus` by the extended Euclidean algorithm.
///
/// Works for any modulus; `None` when `gcd(x, modulus) != 1`.
pub fn mod_inverse(x: u64, modulus: u64) -> Option<u64> {
    let m = modulus as i128;
    let (mut old_r, mut r) = ((x % modulus) as i128, m);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quot = old_r / r;
        (old_r, r) = (r, old_r - quot * r);
        (old_s, s) = (s, old_s - quot * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m) as u64)
}

/// Fixed-point codec: a real `x` is stored as `round(x * 2^f) mod q`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    fraction_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec { fraction_bits: 16 }
    }
}

impl FixedPointCodec {
    pub fn new(fraction_bits: u32) -> Result<Self> {
        if fraction_bits == 0 || fraction_bits > 30 {
            return Err(Error::Config(format!(
                "fraction bits must lie in 1..=30, got {fraction_bits}"
            )));
        }
        Ok(FixedPointCodec { fraction_bits })
    }

    pub fn fraction_bits(&self) -> u32 {
        self.fraction_bits
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.fraction_bits) as f64
    }

    /// Largest magnitude accepted by [`encode`](Self::encode).
    pub fn max_magnitude(&self) -> f64 {
        (1u64 << (60 - self.fraction_bits)) as f64
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement> {
        if !x.is_finite() || x.abs() >= self.max_magnitude() {
            return Err(Error::EncodeOverflow(x));
        }
        Ok(FieldElement::from_i64((x * self.scale()).round() as i64))
    }

    pub fn decode(&self, v: FieldElement) -> f64 {
        v.to_i64() as f64 / self.scale()
    }

    /// Decodes a value carrying two scale factors (an untruncated product).
    pub fn decode_double(&self, v: FieldElement) -> f64 {
        v.to_i64() as f64 / (self.scale() * self.scale())
    }

    pub fn encode_all(&self, xs: &[f64]) -> Result<Vec<FieldElement>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_all(&self, vs: &[FieldElement]) -> Vec<f64> {
        vs.iter().map(|&v| self.decode(v)).collect()
    }
}

/// A dense row-major matrix of field elements.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    data: Vec<FieldElement>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldMatrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter().take(16)).finish()
    }
}

impl FieldMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FieldMatrix {
            rows,
            cols,
            data: vec![FieldElement::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<FieldElement>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(FieldMatrix { rows, cols, data })
    }

    pub fn from_u64(rows: usize, cols: usize, values: &[u64]) -> Result<Self> {
        Self::from_vec(rows, cols, values.iter().map(|&v| FieldElement::new(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, FieldElement::ONE);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[FieldElement] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [FieldElement] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<FieldElement> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> FieldElement {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: FieldElement) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[FieldElement] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [FieldElement] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    fn check_same_shape(&self, other: &FieldMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &FieldMatrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &FieldMatrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(())
    }

    pub fn scale(&self, k: FieldElement) -> FieldMatrix {
        FieldMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        self.check_same_shape(other)?;
        Ok(FieldMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect(),
        })
    }

    /// Field matrix product `self ⊗ other`.
    pub fn matmul(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let (n, m) = (self.rows, other.cols);
        let mut out = FieldMatrix::zeros(n, m);
        let mut acc = vec![0u128; m];
        for i in 0..n {
            acc.iter_mut().for_each(|a| *a = 0);
            let lhs = self.row(i);
            for (t, &a) in lhs.iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                let a = a.0 as u128;
                let rhs = &other.data[t * m..(t + 1) * m];
                for (slot, &b) in acc.iter_mut().zip(rhs) {
                    // Reduced product < 2^61, so 2^67 of them fit in a u128.
                    *slot += reduce128(a * b.0 as u128) as u128;
                }
            }
            for (o, &a) in out.row_mut(i).iter_mut().zip(&acc) {
                *o = FieldElement(reduce128(a));
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> FieldMatrix {
        let mut out = FieldMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> FieldMatrix {
        FieldMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hconcat(parts: &[&FieldMatrix]) -> Result<FieldMatrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::ShapeMismatch {
                expected: (rows, bad.cols),
                found: bad.shape(),
            });
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(FieldMatrix { rows, cols, data })
    }

    /// Column-wise sum, producing a `1 x cols` matrix.
    pub fn sum_rows(&self) -> FieldMatrix {
        let mut out = FieldMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Adds the `1 x cols` matrix `row` to every row.
    pub fn add_row_broadcast(&mut self, row: &FieldMatrix) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::ShapeMismatch {
                expected: (1, self.cols),
                found: row.shape(),
            });
        }
        for r in 0..self.rows {
            for (a, &b) in self.row_mut(r).iter_mut().zip(&row.data) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Repeats a `1 x cols` row `rows` times.
    pub fn broadcast_row(row: &FieldMatrix, rows: usize) -> Result<FieldMatrix> {
        let mut out = FieldMatrix::zeros(rows, row.cols);
        out.add_row_broadcast(row)?;
        Ok(out)
    }

    /// Cyclic row shift: row `i` moves to row `(i + k) mod rows`.
    pub fn rotate_rows(&mut self, k: usize) {
        if self.rows == 0 {
            return;
        }
        let k = k % self.rows;
        self.data.rotate_right(k * self.cols);
    }

    pub fn random(rows: usize, cols: usize, prf: &mut SeededPrf) -> FieldMatrix {
        FieldMatrix {
            rows,
            cols,
            data: prf.elements(rows * cols),
        }
    }
}

/// Index of a party in the ring, `0..P`.
pub type PartyId = usize;

/// One party's additive share of a secret matrix.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ShareMatrix {
    owner: PartyId,
    matrix: FieldMatrix,
}

impl ShareMatrix {
    pub fn new(owner: PartyId, matrix: FieldMatrix) -> Self {
        ShareMatrix { owner, matrix }
    }

    pub fn zeros(owner: PartyId, rows: usize, cols: usize) -> Self {
        ShareMatrix::new(owner, FieldMatrix::zeros(rows, cols))
    }

    /// The share of a public matrix: party 0 holds the value, everyone else zero.
    pub fn from_public(owner: PartyId, public: &FieldMatrix) -> Self {
        if owner == 0 {
            ShareMatrix::new(owner, public.clone())
        } else {
            ShareMatrix::zeros(owner, public.rows(), public.cols())
        }
    }

    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn matrix(&self) -> &FieldMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut FieldMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> FieldMatrix {
        self.matrix
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// Party-wise addition of two shares of different secrets.
    pub fn add(&self, other: &ShareMatrix) -> Result<ShareMatrix> {
        Ok(ShareMatrix::new(self.owner, self.matrix.add(&other.matrix)?))
    }

    pub fn sub(&self, other: &ShareMatrix) -> Result<ShareMatrix> {
        Ok(ShareMatrix::new(self.owner, self.matrix.sub(&other.matrix)?))
    }

    /// Adds a public matrix (only party 0's share changes).
    pub fn add_public(&self, public: &FieldMatrix) -> Result<ShareMatrix> {
        if self.owner == 0 {
            self.add(&ShareMatrix::new(0, public.clone()))
        } else if self.shape() != public.shape() {
            Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: public.shape(),
            })
        } else {
            Ok(self.clone())
        }
    }

    pub fn scale(&self, k: FieldElement) -> ShareMatrix {
        ShareMatrix::new(self.owner, self.matrix.scale(k))
    }
}

/// Splits `secret` into `parties` additive shares.
///
/// The first `parties - 1` shares are drawn from `prf`; the last is the
/// difference, so the entrywise sum mod q equals the secret.
pub fn split_additive(
    secret: &FieldMatrix,
    parties: usize,
    prf: &mut SeededPrf,
) -> Result<Vec<ShareMatrix>> {
    if parties < 2 {
        return Err(Error::Config(format!("need at least 2 parties, got {parties}")));
    }
    let (rows, cols) = secret.shape();
    let mut shares = Vec::with_capacity(parties);
    let mut last = secret.clone();
    for p in 0..parties - 1 {
        let r = FieldMatrix::random(rows, cols, prf);
        last.sub_assign(&r)?;
        shares.push(ShareMatrix::new(p, r));
    }
    shares.push(ShareMatrix::new(parties - 1, last));
    Ok(shares)
}

/// Entrywise mod-q sum of all parties' shares.
pub fn reconstruct_additive(shares: &[ShareMatrix]) -> Result<FieldMatrix> {
    let first = shares.first().ok_or(Error::MissingShares)?;
    let mut out = FieldMatrix::zeros(first.rows(), first.cols());
    for s in shares {
        out.add_assign(s.matrix())?;
    }
    Ok(out)
}

/// Additive shares of a vector of scalars, one `Vec` per party.
pub fn split_scalars(
    secrets: &[FieldElement],
    parties: usize,
    prf: &mut SeededPrf,
) -> Result<Vec<Vec<FieldElement>>> {
    let m = FieldMatrix::from_vec(1, secrets.len(), secrets.to_vec())?;
    Ok(split_additive(&m, parties, prf)?
        .into_iter()
        .map(|s| s.into_matrix().into_vec())
        .collect())
}

/// One party's multiplicative share; never zero.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct MulShare(FieldElement);

impl MulShare {
    pub fn new(value: FieldElement) -> Result<Self> {
        if value.is_zero() {
            return Err(Error::ZeroMulShare);
        }
        Ok(MulShare(value))
    }

    pub fn value(self) -> FieldElement {
        self.0
    }

    pub fn inverse(self) -> MulShare {
        // Nonzero by construction.
        MulShare(self.0.inverse().expect("multiplicative share is nonzero"))
    }
}

impl Mul for MulShare {
    type Output = MulShare;
    fn mul(self, rhs: MulShare) -> MulShare {
        // Product of nonzero elements of a field is nonzero.
        MulShare(self.0 * rhs.0)
    }
}

/// Splits a nonzero secret into `parties` multiplicative shares.
pub fn split_multiplicative(
    secret: FieldElement,
    parties: usize,
    prf: &mut SeededPrf,
) -> Result<Vec<MulShare>> {
    if secret.is_zero() {
        return Err(Error::ZeroMulShare);
    }
    let mut shares = Vec::with_capacity(parties);
    let mut rest = secret;
    for _ in 0..parties - 1 {
        let s = prf.nonzero_element();
        rest *= s.inverse()?;
        shares.push(MulShare(s));
    }
    shares.push(MulShare(rest));
    Ok(shares)
}

pub fn reconstruct_multiplicative(shares: &[MulShare]) -> FieldElement {
    shares.iter().map(|s| s.0).product()
}
