use crate::error::{Error, Result};
use crate::field::{FieldElement, MulShare};
use crate::mul::beaver_mul_scalars;
use crate::transport::Session;

use super::{AMPool, ScalarBeaverTriple};

/// One party's dealt inputs for building AM pairs.
///
/// Link `i` joins parties `i` and `i + 1`: they hold additive shares of a
/// nonzero `R_i` and, from the two-party conversion, multiplicative shares of
/// the same value. Every other party holds `0` and `1` for that link. The
/// fold triples multiply the link values together, one level per link after
/// the first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmLinkMaterial {
    pub additive: Vec<Vec<FieldElement>>,
    pub multiplicative: Vec<Vec<FieldElement>>,
    pub fold_triples: Vec<Vec<ScalarBeaverTriple>>,
}

impl AmLinkMaterial {
    pub fn pair_count(&self) -> usize {
        self.additive.first().map_or(0, Vec::len)
    }
}

/// Turns dealt link material into a pool of AM pairs.
///
/// The additive sharing of `R = Π R_i` is a left fold of Beaver products
/// (one round per link after the first); the multiplicative sharing is the
/// local product of the link shares.
pub fn msas_pair_batch(session: &mut Session, material: &AmLinkMaterial) -> Result<AMPool> {
    let links = material.additive.len();
    if links + 1 != session.parties() || material.multiplicative.len() != links {
        return Err(Error::Config(format!(
            "AM material has {links} links for {} parties",
            session.parties()
        )));
    }
    if material.fold_triples.len() + 1 != links {
        return Err(Error::Config("AM material lacks fold triples".into()));
    }
    let count = material.pair_count();
    let mut additive = material.additive[0].clone();
    for (link, triples) in material.additive[1..].iter().zip(&material.fold_triples) {
        additive = beaver_mul_scalars(session, &additive, link, triples)?;
    }
    let mut multiplicative = vec![FieldElement::ONE; count];
    for link in &material.multiplicative {
        for (acc, &m) in multiplicative.iter_mut().zip(link) {
            *acc *= MulShare::new(m)?.value();
        }
    }
    AMPool::new(additive, multiplicative)
}
