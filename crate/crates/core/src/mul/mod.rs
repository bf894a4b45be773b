//! Secure multiplication over additive shares.
//!
//! Matrix products reuse one dealt triple per client and layer by
//! recombining its rows per request ([`rand_comb`], [`mat_mul`]).
//! Element-wise products use fresh triples built from local multiplicative
//! triples and AM pairs ([`beaver_m`], [`beaver_m_to_a`], [`elem_mul`]).
//! [`fixed`] adds the fixed-point truncation and sign-test protocols.

mod elemwise;
pub mod fixed;
mod matmul;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix};
use crate::provider::ScalarBeaverTriple;
use crate::transport::{PayloadTag, Session};

pub use elemwise::{
    beaver_m, beaver_m_to_a, elem_mul, elem_mul_many, m_to_a, small_field, MulBeaverTriple, TripleBuffer,
};
pub use matmul::{combination_coefficients, mat_mul, rand_comb, rand_comb_with, DerivedTriple, MatMulOutput};

/// Batched Beaver multiplication of shared scalars: one open round.
///
/// Party 0 adds the public `d·e` term.
pub fn beaver_mul_scalars(
    session: &mut Session,
    x: &[FieldElement],
    y: &[FieldElement],
    triples: &[ScalarBeaverTriple],
) -> Result<Vec<FieldElement>> {
    if x.len() != y.len() || x.len() != triples.len() {
        return Err(Error::ShapeMismatch {
            expected: (x.len(), 1),
            found: (y.len(), triples.len()),
        });
    }
    let n = x.len();
    let d: Vec<FieldElement> = x.iter().zip(triples).map(|(&v, t)| v - t.a).collect();
    let e: Vec<FieldElement> = y.iter().zip(triples).map(|(&v, t)| v - t.b).collect();
    let opened = session.broadcast_open(
        PayloadTag::BeaverOpen,
        vec![FieldMatrix::from_vec(1, n, d)?, FieldMatrix::from_vec(1, n, e)?],
    )?;
    let (d, e) = (opened[0].as_slice(), opened[1].as_slice());
    let lead = session.me() == 0;
    Ok(triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut z = t.c + d[i] * t.b + e[i] * t.a;
            if lead {
                z += d[i] * e[i];
            }
            z
        })
        .collect())
}
