use crate::error::{Error, Result};
use crate::field::{split_additive, FieldElement, FieldMatrix, ShareMatrix};
use crate::prf::{Seed, SeededPrf, StreamId};

use super::batch::{BatchPlan, BatchedEdges};

/// PRF round for batch `batch` of message-passing layer `layer`.
pub fn mpl_round(layer: u32, batch: usize) -> u64 {
    ((layer as u64) << 32) | batch as u64
}

/// Overrides used by unit tests to make the protocol transparent.
#[cfg(feature = "test-hooks")]
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct TestHooks {
    pub zero_noise: bool,
    /// Fixed read rotation used for every pipeline and batch.
    pub rotation: Option<usize>,
}

/// One party's source of masking noise and read rotations.
///
/// The party and the client build it from the same seed, so both sides
/// derive identical values for every `(layer, batch, pipeline)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseSource {
    seed: Seed,
    #[cfg(feature = "test-hooks")]
    hooks: TestHooks,
}

impl NoiseSource {
    pub fn new(seed: Seed) -> Self {
        NoiseSource {
            seed,
            #[cfg(feature = "test-hooks")]
            hooks: TestHooks::default(),
        }
    }

    #[cfg(feature = "test-hooks")]
    pub fn with_hooks(seed: Seed, hooks: TestHooks) -> Self {
        NoiseSource { seed, hooks }
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    fn zero_noise(&self) -> bool {
        #[cfg(feature = "test-hooks")]
        {
            self.hooks.zero_noise
        }
        #[cfg(not(feature = "test-hooks"))]
        {
            false
        }
    }

    /// Adds this party's read noise for `(layer, batch, pipeline)` to `block`.
    pub fn add_read_noise(&self, block: &mut [FieldElement], layer: u32, batch: usize, pipeline: usize) {
        self.add_noise(block, layer, batch, StreamId::ReadNoise { pipeline: pipeline as u16 });
    }

    /// Adds this party's write noise for `(layer, batch, pipeline)` to `block`.
    pub fn add_write_noise(&self, block: &mut [FieldElement], layer: u32, batch: usize, pipeline: usize) {
        self.add_noise(block, layer, batch, StreamId::WriteNoise { pipeline: pipeline as u16 });
    }

    fn add_noise(&self, block: &mut [FieldElement], layer: u32, batch: usize, stream: StreamId) {
        if self.zero_noise() {
            return;
        }
        let mut prf = SeededPrf::derive(&self.seed, mpl_round(layer, batch), stream);
        for v in block {
            *v += prf.element();
        }
    }

    /// Full noise matrix, as added by [`add_read_noise`](Self::add_read_noise).
    pub fn read_noise(&self, layer: u32, batch: usize, pipeline: usize, rows: usize, cols: usize) -> FieldMatrix {
        let mut m = FieldMatrix::zeros(rows, cols);
        self.add_read_noise(m.as_mut_slice(), layer, batch, pipeline);
        m
    }

    pub fn write_noise(&self, layer: u32, batch: usize, pipeline: usize, rows: usize, cols: usize) -> FieldMatrix {
        let mut m = FieldMatrix::zeros(rows, cols);
        self.add_write_noise(m.as_mut_slice(), layer, batch, pipeline);
        m
    }

    /// Read rotation in `[0, nodes)`.
    pub fn read_rotation(&self, layer: u32, batch: usize, pipeline: usize, nodes: usize) -> usize {
        #[cfg(feature = "test-hooks")]
        if let Some(r) = self.hooks.rotation {
            return r % nodes;
        }
        SeededPrf::derive(
            &self.seed,
            mpl_round(layer, batch),
            StreamId::ReadRotation { pipeline: pipeline as u16 },
        )
        .index(nodes)
    }
}

/// Adds `src` rotated down by `shift` rows into `acc`.
fn add_rotated(acc: &mut FieldMatrix, src: &FieldMatrix, shift: usize) {
    let n = acc.rows();
    for i in 0..n {
        let to = (i + shift) % n;
        for (a, &s) in acc.row_mut(to).iter_mut().zip(src.row(i)) {
            *a += s;
        }
    }
}

/// Replays both ring passes of one message-passing layer on noise alone
/// and returns the total noise `ξ*` left in the aggregated output.
///
/// `edges[p]` and `sources[p]` are party `p`'s index shares and noise
/// source. When `weights` is given (encoded, one per edge), read noise is
/// scaled per edge exactly as the weighted layer scales the read rows.
pub fn overall_noise(
    plan: &BatchPlan,
    edges: &[BatchedEdges],
    sources: &[NoiseSource],
    layer: u32,
    cols: usize,
    weights: Option<&[FieldElement]>,
) -> Result<FieldMatrix> {
    let parties = sources.len();
    if edges.len() != parties || parties < 2 {
        return Err(Error::MissingShares);
    }
    if let Some(w) = weights {
        if w.len() != plan.edges() {
            return Err(Error::ShapeMismatch {
                expected: (plan.edges(), 1),
                found: (w.len(), 1),
            });
        }
    }
    let n = plan.nodes;
    let mut xi = FieldMatrix::zeros(n, cols);
    let edge_list = plan.edge_list();
    for b in 0..plan.batches() {
        let range = edges[0].batch_range(b);
        let mut read_noise = FieldMatrix::zeros(range.len(), cols);
        for o in 0..parties {
            // Pipeline o visits parties o, o+1, ...; noise added by the t-th
            // visitor is read at S + (rotations applied before it).
            let mut offset = 0usize;
            for t in 0..parties {
                let v = (o + t) % parties;
                let x = sources[v].read_noise(layer, b, o, n, cols);
                for (row, e) in range.clone().enumerate() {
                    let at = (edge_list[e].0 + offset) % n;
                    for (acc, &s) in read_noise.row_mut(row).iter_mut().zip(x.row(at)) {
                        *acc += s;
                    }
                }
                offset += sources[v].read_rotation(layer, b, o, n);
            }
        }
        for (row, e) in range.clone().enumerate() {
            let w = weights.map_or(FieldElement::ONE, |w| w[e]);
            let dst = edge_list[e].1;
            for (acc, &s) in xi.row_mut(dst).iter_mut().zip(read_noise.row(row)) {
                *acc += s * w;
            }
        }
        for o in 0..parties {
            // Write noise added by the t-th visitor is rotated by its own
            // destination share and every later one.
            let mut shift: usize = (0..parties).map(|t| edges[(o + t) % parties].dst_first()[b] as usize).sum();
            for t in 0..parties {
                let v = (o + t) % parties;
                let x = sources[v].write_noise(layer, b, o, n, cols);
                add_rotated(&mut xi, &x, shift % n);
                shift -= edges[v].dst_first()[b] as usize;
            }
        }
    }
    Ok(xi)
}

/// Splits `ξ*` into fresh additive shares.
pub fn reshare_noise(xi: &FieldMatrix, parties: usize, seed: &Seed, layer: u32) -> Result<Vec<FieldMatrix>> {
    let mut prf = SeededPrf::derive(seed, layer as u64, StreamId::Reshare);
    Ok(split_additive(xi, parties, &mut prf)?
        .into_iter()
        .map(ShareMatrix::into_matrix)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_agree_and_separate_streams() {
        let a = NoiseSource::new([4; 32]);
        let b = NoiseSource::new([4; 32]);
        assert_eq!(a.read_noise(0, 1, 2, 3, 2), b.read_noise(0, 1, 2, 3, 2));
        assert_ne!(a.read_noise(0, 1, 2, 3, 2), a.write_noise(0, 1, 2, 3, 2));
        assert_ne!(a.read_noise(0, 1, 2, 3, 2), a.read_noise(0, 2, 2, 3, 2));
        assert_ne!(a.read_noise(0, 1, 2, 3, 2), a.read_noise(1, 1, 2, 3, 2));
        assert!(a.read_rotation(0, 0, 0, 7) < 7);
    }

    #[test]
    fn rotated_add() {
        let mut acc = FieldMatrix::zeros(3, 1);
        let src = FieldMatrix::from_u64(3, 1, &[1, 2, 3]).unwrap();
        add_rotated(&mut acc, &src, 1);
        assert_eq!(acc, FieldMatrix::from_u64(3, 1, &[3, 1, 2]).unwrap());
    }

    #[test]
    fn reshare_sums_back() {
        let xi = FieldMatrix::from_u64(2, 2, &[1, 2, 3, 4]).unwrap();
        let shares = reshare_noise(&xi, 3, &[1; 32], 0).unwrap();
        let mut sum = FieldMatrix::zeros(2, 2);
        for s in &shares {
            sum.add_assign(s).unwrap();
        }
        assert_eq!(sum, xi);
        assert_ne!(shares[0], xi);
    }
}
