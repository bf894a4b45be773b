use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldMatrix;
use crate::prf::{Seed, SeededPrf, StreamId};
use crate::provider::MatrixBeaverTriple;
use crate::transport::{PayloadTag, Session};

/// A per-request triple obtained by recombining the rows of a dealt one.
///
/// Row `j` of `a` and `c` are the same linear combination of the rows of
/// the dealt `A` and `C`, so `a ⊗ B = c` still holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedTriple {
    pub layer: u32,
    pub id: Seed,
    pub a: FieldMatrix,
    pub b: FieldMatrix,
    pub c: FieldMatrix,
}

/// Coefficients `k_ji` for a request, identical at every party holding the
/// same nonce.
pub fn combination_coefficients(nonce: &Seed, layer: u32, n_req: usize, n_max: usize) -> FieldMatrix {
    let mut prf = SeededPrf::derive(nonce, layer as u64, StreamId::Combination);
    FieldMatrix::random(n_req, n_max, &mut prf)
}

fn derived_id(nonce: &Seed, layer: u32, n_req: usize) -> Seed {
    let mut h = Sha256::new();
    h.update(b"cryptgnn/derived/v1");
    h.update(nonce);
    h.update(layer.to_le_bytes());
    h.update((n_req as u64).to_le_bytes());
    h.finalize().into()
}

/// Recombines `triple` into an `n_req`-row triple. Local, no communication.
pub fn rand_comb(triple: &MatrixBeaverTriple, n_req: usize, nonce: &Seed, layer: u32) -> Result<DerivedTriple> {
    let n_max = triple.a.rows();
    if n_req > n_max {
        return Err(Error::OversizeRequest {
            requested: n_req,
            max: n_max,
        });
    }
    let coeffs = combination_coefficients(nonce, layer, n_req, n_max);
    let mut derived = rand_comb_with(triple, &coeffs)?;
    derived.layer = layer;
    derived.id = derived_id(nonce, layer, n_req);
    Ok(derived)
}

/// Recombination with explicit coefficients (`n_req x n_max`).
pub fn rand_comb_with(triple: &MatrixBeaverTriple, coeffs: &FieldMatrix) -> Result<DerivedTriple> {
    if coeffs.rows() > triple.a.rows() {
        return Err(Error::OversizeRequest {
            requested: coeffs.rows(),
            max: triple.a.rows(),
        });
    }
    Ok(DerivedTriple {
        layer: 0,
        id: [0; 32],
        a: coeffs.matmul(triple.a.matrix())?,
        b: triple.b.matrix().clone(),
        c: coeffs.matmul(triple.c.matrix())?,
    })
}

/// Result of [`mat_mul`]: the product share and the opened masks.
#[derive(Clone, Debug)]
pub struct MatMulOutput {
    pub z: FieldMatrix,
    pub u: FieldMatrix,
    pub v: FieldMatrix,
    pub v_was_cached: bool,
}

/// Shares of `X ⊗ Y` in one open round.
///
/// `U = X - A'` is opened every time; `V = Y - B` only when no cached value
/// is supplied. Party 0 adds the public `U ⊗ V` term.
pub fn mat_mul(
    session: &mut Session,
    x: &FieldMatrix,
    y: &FieldMatrix,
    derived: &DerivedTriple,
    cached_v: Option<&FieldMatrix>,
) -> Result<MatMulOutput> {
    if x.shape() != derived.a.shape() {
        return Err(Error::ShapeMismatch {
            expected: derived.a.shape(),
            found: x.shape(),
        });
    }
    if y.shape() != derived.b.shape() {
        return Err(Error::ShapeMismatch {
            expected: derived.b.shape(),
            found: y.shape(),
        });
    }
    let u_share = x.sub(&derived.a)?;
    let (u, v) = match cached_v {
        Some(v) => {
            if v.shape() != y.shape() {
                return Err(Error::ShapeMismatch {
                    expected: y.shape(),
                    found: v.shape(),
                });
            }
            (session.open(PayloadTag::BeaverOpen, u_share)?, v.clone())
        }
        None => {
            let v_share = y.sub(&derived.b)?;
            let mut opened = session.broadcast_open(PayloadTag::BeaverOpen, vec![u_share, v_share])?;
            let v = opened.pop().expect("two matrices opened");
            (opened.pop().expect("two matrices opened"), v)
        }
    };
    let mut z = u.matmul(&derived.b)?;
    z.add_assign(&derived.a.matmul(&v)?)?;
    z.add_assign(&derived.c)?;
    if session.me() == 0 {
        z.add_assign(&u.matmul(&v)?)?;
    }
    Ok(MatMulOutput {
        z,
        u,
        v,
        v_was_cached: cached_v.is_some(),
    })
}
