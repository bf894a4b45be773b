//! Oblivious message passing over secret-shared edge lists.
//!
//! Every party starts a pipeline carrying its own feature share, replicated
//! once per batch. A pipeline circulates the ring: each visitor masks it with
//! fresh noise, rotates every batch block by a private amount and adds its
//! share of the batch's first source index plus that rotation to an index
//! accumulator. After `P - 1` hops the holder reads each edge's row at
//! `accumulator + relative index`. Writes run the same way in reverse: the
//! read rows are scattered at their relative destination, then every visitor
//! masks and rotates by its share of the first destination index. The noise
//! left in the sum is known to the client, who uploads a sharing of it.

mod batch;
mod noise;

pub use batch::{batch_layout, BatchPlan, BatchedEdges};
#[cfg(feature = "test-hooks")]
pub use noise::TestHooks;
pub use noise::{mpl_round, overall_noise, reshare_noise, NoiseSource};

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix};
use crate::mul::fixed::truncate_exact;
use crate::mul::{elem_mul, TripleBuffer};
use crate::provider::DealerStream;
use crate::transport::{PayloadTag, Session};

fn rotate_block(block: &mut [FieldElement], cols: usize, k: usize) {
    if !block.is_empty() {
        let rows = block.len() / cols;
        block.rotate_right((k % rows) * cols);
    }
}

fn expect_shape(m: &FieldMatrix, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Protocol(format!(
            "ring payload has shape {:?}, expected {:?}",
            m.shape(),
            shape
        )));
    }
    Ok(())
}

fn unpack(mut payload: Vec<FieldMatrix>, shapes: &[(usize, usize)]) -> Result<Vec<FieldMatrix>> {
    if payload.len() != shapes.len() {
        return Err(Error::Protocol(format!(
            "ring payload carries {} matrices, expected {}",
            payload.len(),
            shapes.len()
        )));
    }
    for (m, &s) in payload.iter_mut().zip(shapes) {
        expect_shape(m, s)?;
    }
    Ok(payload)
}

/// Reads row `S_e` of the shared matrix for every edge.
///
/// Returns this party's `M x K` share of the read rows, each carrying read
/// noise that the client accounts for. Costs `P - 1` ring hops.
pub fn secure_read(
    session: &mut Session,
    a: &FieldMatrix,
    edges: &BatchedEdges,
    layer: u32,
    noise: &NoiseSource,
) -> Result<FieldMatrix> {
    Ok(secure_read_traced(session, a, edges, layer, noise)?.0)
}

/// [`secure_read`], also returning the row each edge was read from in the
/// masked, rotated stack this party ended up holding.
pub fn secure_read_traced(
    session: &mut Session,
    a: &FieldMatrix,
    edges: &BatchedEdges,
    layer: u32,
    noise: &NoiseSource,
) -> Result<(FieldMatrix, Vec<usize>)> {
    let (n, k) = a.shape();
    if n != edges.nodes() {
        return Err(Error::ShapeMismatch {
            expected: (edges.nodes(), k),
            found: a.shape(),
        });
    }
    let parties = session.parties();
    let me = session.me();
    let r = edges.batches();
    let block = n * k;

    let mut data = Vec::with_capacity(r * block);
    for _ in 0..r {
        data.extend_from_slice(a.as_slice());
    }
    let mut t = FieldMatrix::from_vec(r * n, k, data)?;
    let mut acc = FieldMatrix::zeros(1, r);

    let visit = |t: &mut FieldMatrix, acc: &mut FieldMatrix, pipeline: usize| {
        for (b, chunk) in t.as_mut_slice().chunks_mut(block).enumerate() {
            noise.add_read_noise(chunk, layer, b, pipeline);
            let rot = noise.read_rotation(layer, b, pipeline, n);
            rotate_block(chunk, k, rot);
            let v = acc.get(0, b) + FieldElement::new(edges.src_first()[b] + rot as u64);
            acc.set(0, b, v);
        }
    };

    visit(&mut t, &mut acc, me);
    for hop in 1..parties {
        let mut got = unpack(session.ring_hop(PayloadTag::ReadPass, vec![t, acc])?, &[(r * n, k), (1, r)])?;
        acc = got.pop().expect("two matrices");
        t = got.pop().expect("two matrices");
        visit(&mut t, &mut acc, (me + parties - hop) % parties);
    }

    let mut y = FieldMatrix::zeros(edges.edges(), k);
    let mut rows = Vec::with_capacity(edges.edges());
    for b in 0..r {
        let base = acc.get(0, b).value();
        for e in edges.batch_range(b) {
            let row = ((base + edges.src_rel()[e] as u64) % n as u64) as usize;
            y.row_mut(e).copy_from_slice(t.row(b * n + row));
            rows.push(row);
        }
    }
    Ok((y, rows))
}

/// Scatters row `e` of the shared `y` to row `D_e`, one block per batch.
///
/// Returns this party's `(R * N) x K` share of the stacked batch blocks,
/// masked by write noise. Costs `P - 1` ring hops.
pub fn secure_write(
    session: &mut Session,
    y: &FieldMatrix,
    edges: &BatchedEdges,
    layer: u32,
    noise: &NoiseSource,
) -> Result<FieldMatrix> {
    let (m, k) = y.shape();
    if m != edges.edges() {
        return Err(Error::ShapeMismatch {
            expected: (edges.edges(), k),
            found: y.shape(),
        });
    }
    let parties = session.parties();
    let me = session.me();
    let n = edges.nodes();
    let r = edges.batches();
    let block = n * k;

    let mut g = FieldMatrix::zeros(r * n, k);
    for b in 0..r {
        for e in edges.batch_range(b) {
            let row = b * n + edges.dst_rel()[e] as usize;
            for (acc, &v) in g.row_mut(row).iter_mut().zip(y.row(e)) {
                *acc += v;
            }
        }
    }

    let visit = |g: &mut FieldMatrix, pipeline: usize| {
        for (b, chunk) in g.as_mut_slice().chunks_mut(block).enumerate() {
            noise.add_write_noise(chunk, layer, b, pipeline);
            rotate_block(chunk, k, edges.dst_first()[b] as usize);
        }
    };

    visit(&mut g, me);
    for hop in 1..parties {
        g = unpack(session.ring_hop(PayloadTag::WritePass, vec![g])?, &[(r * n, k)])?
            .pop()
            .expect("one matrix");
        visit(&mut g, (me + parties - hop) % parties);
    }
    Ok(g)
}

/// Adds every `N`-row block of `g` into `acc`. Local, no communication.
pub fn secure_aggregate(acc: &mut FieldMatrix, g: &FieldMatrix) -> Result<()> {
    let (n, k) = acc.shape();
    if g.cols() != k || (n == 0 && g.rows() != 0) || (n != 0 && g.rows() % n != 0) {
        return Err(Error::ShapeMismatch {
            expected: (n, k),
            found: g.shape(),
        });
    }
    if n == 0 {
        return Ok(());
    }
    for chunk in g.as_slice().chunks(n * k) {
        for (a, &v) in acc.as_mut_slice().iter_mut().zip(chunk) {
            *a += v;
        }
    }
    Ok(())
}

fn finish(mut out: FieldMatrix, g: &FieldMatrix, xi: &FieldMatrix) -> Result<FieldMatrix> {
    secure_aggregate(&mut out, g)?;
    out.sub_assign(xi)?;
    Ok(out)
}

/// Aggregates neighbour features, `A*[i] = Σ_{(j, i) ∈ E} A[j]`, over batched
/// edges: two ring passes of `P - 1` hops whatever the edge and batch count.
pub fn batch_crypt_mpl(
    session: &mut Session,
    a: &FieldMatrix,
    edges: &BatchedEdges,
    xi: &FieldMatrix,
    layer: u32,
    noise: &NoiseSource,
) -> Result<FieldMatrix> {
    if xi.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: xi.shape(),
        });
    }
    let y = secure_read(session, a, edges, layer, noise)?;
    let g = secure_write(session, &y, edges, layer, noise)?;
    finish(FieldMatrix::zeros(a.rows(), a.cols()), &g, xi)
}

/// The unbatched layer: one batch per edge, index shares taken as given.
pub fn crypt_mpl(
    session: &mut Session,
    a: &FieldMatrix,
    src: &[u64],
    dst: &[u64],
    xi: &FieldMatrix,
    layer: u32,
    noise: &NoiseSource,
) -> Result<FieldMatrix> {
    let edges = BatchedEdges::unbatched(a.rows(), src.to_vec(), dst.to_vec())?;
    batch_crypt_mpl(session, a, &edges, xi, layer, noise)
}

/// Weighted aggregation `A*[i] = Σ_{(j, i) ∈ E} W_e · A[j]`.
///
/// `w` holds this party's shares of the encoded edge weights (`M x 1`).
/// The read rows are scaled with one element-wise product round, and the
/// result is truncated exactly so that unit weights reproduce the plain
/// layer and zero weights contribute nothing. `xi` must be the client's
/// noise computed with the same weights.
#[allow(clippy::too_many_arguments)]
pub fn weighted_mpl(
    session: &mut Session,
    a: &FieldMatrix,
    edges: &BatchedEdges,
    w: &FieldMatrix,
    xi: &FieldMatrix,
    layer: u32,
    noise: &NoiseSource,
    buffer: &mut TripleBuffer,
    exact: &mut DealerStream,
    fraction_bits: u32,
) -> Result<FieldMatrix> {
    if w.shape() != (edges.edges(), 1) {
        return Err(Error::ShapeMismatch {
            expected: (edges.edges(), 1),
            found: w.shape(),
        });
    }
    if xi.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: xi.shape(),
        });
    }
    let k = a.cols();
    let y = secure_read(session, a, edges, layer, noise)?;
    let mut wide = FieldMatrix::zeros(edges.edges(), k);
    for e in 0..edges.edges() {
        wide.row_mut(e).fill(w.get(e, 0));
    }
    let scaled = elem_mul(session, &y, &wide, buffer)?;
    let g = secure_write(session, &scaled, edges, layer, noise)?;
    let out = finish(FieldMatrix::zeros(a.rows(), k), &g, xi)?;
    truncate_exact(session, &out, exact, fraction_bits)
}

/// Plaintext aggregation in the field, the reference for the layer.
pub fn plain_mpl(a: &FieldMatrix, edges: &[(usize, usize)]) -> FieldMatrix {
    let mut out = FieldMatrix::zeros(a.rows(), a.cols());
    for &(s, d) in edges {
        for (o, &v) in out.row_mut(d).iter_mut().zip(a.row(s)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_rotation_is_per_batch() {
        let mut data: Vec<FieldElement> = (0..8).map(FieldElement::new).collect();
        let (first, second) = data.split_at_mut(4);
        rotate_block(first, 2, 1);
        rotate_block(second, 2, 2);
        let got: Vec<u64> = data.iter().map(|v| v.value()).collect();
        assert_eq!(got, vec![2, 3, 0, 1, 4, 5, 6, 7]);
    }

    #[test]
    fn aggregate_sums_blocks() {
        let mut acc = FieldMatrix::zeros(2, 1);
        let g = FieldMatrix::from_u64(4, 1, &[1, 2, 10, 20]).unwrap();
        secure_aggregate(&mut acc, &g).unwrap();
        assert_eq!(acc, FieldMatrix::from_u64(2, 1, &[11, 22]).unwrap());
        assert!(secure_aggregate(&mut acc, &FieldMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn plain_reference() {
        let a = FieldMatrix::from_u64(3, 1, &[1, 2, 4]).unwrap();
        let out = plain_mpl(&a, &[(0, 2), (1, 2), (2, 0)]);
        assert_eq!(out, FieldMatrix::from_u64(3, 1, &[4, 0, 3]).unwrap());
    }
}
