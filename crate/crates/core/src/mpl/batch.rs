use crate::error::{Error, Result};
use crate::prf::SeededPrf;

/// Number of edges per batch and the resulting batch count for `m` edges
/// split into (at most) `r` batches.
///
/// `r` is clamped to `[1, m]`; with `b = ceil(m / r)` the last batch may
/// be short and fewer than `r` batches may remain.
pub fn batch_layout(m: usize, r: usize) -> (usize, usize) {
    if m == 0 {
        return (1, 0);
    }
    let r = r.clamp(1, m);
    let size = m.div_ceil(r);
    (size, m.div_ceil(size))
}

/// The client's plaintext view of the batched edge list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub nodes: usize,
    pub batch_size: usize,
    pub src_first: Vec<usize>,
    pub dst_first: Vec<usize>,
    pub src_rel: Vec<u32>,
    pub dst_rel: Vec<u32>,
}

impl BatchPlan {
    /// Groups edges into batches of `ceil(M / R)` and computes relative
    /// indices with respect to the first edge of each batch.
    pub fn new(nodes: usize, src: &[usize], dst: &[usize], batches: usize) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::ShapeMismatch {
                expected: (src.len(), 1),
                found: (dst.len(), 1),
            });
        }
        if nodes == 0 || nodes > u32::MAX as usize {
            return Err(Error::Config(format!("node count {nodes} out of range")));
        }
        for &i in src.iter().chain(dst) {
            if i >= nodes {
                return Err(Error::IndexOutOfRange { index: i, bound: nodes });
            }
        }
        let (batch_size, count) = batch_layout(src.len(), batches);
        let mut plan = BatchPlan {
            nodes,
            batch_size,
            src_first: Vec::with_capacity(count),
            dst_first: Vec::with_capacity(count),
            src_rel: Vec::with_capacity(src.len()),
            dst_rel: Vec::with_capacity(src.len()),
        };
        for (s, d) in src.chunks(batch_size).zip(dst.chunks(batch_size)) {
            plan.src_first.push(s[0]);
            plan.dst_first.push(d[0]);
            plan.src_rel.extend(s.iter().map(|&v| ((v + nodes - s[0]) % nodes) as u32));
            plan.dst_rel.extend(d.iter().map(|&v| ((v + nodes - d[0]) % nodes) as u32));
        }
        Ok(plan)
    }

    pub fn batches(&self) -> usize {
        self.src_first.len()
    }

    pub fn edges(&self) -> usize {
        self.src_rel.len()
    }

    /// Original `(src, dst)` of every edge.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.edges())
            .map(|e| {
                let b = e / self.batch_size;
                (
                    (self.src_first[b] + self.src_rel[e] as usize) % self.nodes,
                    (self.dst_first[b] + self.dst_rel[e] as usize) % self.nodes,
                )
            })
            .collect()
    }

    /// Splits the first indices into additive shares modulo `N`.
    pub fn share(&self, parties: usize, prf: &mut SeededPrf) -> Result<Vec<BatchedEdges>> {
        if parties < 2 {
            return Err(Error::Config(format!("need at least 2 parties, got {parties}")));
        }
        let split = |firsts: &[usize], prf: &mut SeededPrf| -> Vec<Vec<u64>> {
            let mut out = vec![Vec::with_capacity(firsts.len()); parties];
            for &v in firsts {
                let mut rest = v;
                for share in out.iter_mut().take(parties - 1) {
                    let r = prf.index(self.nodes);
                    share.push(r as u64);
                    rest = (rest + self.nodes - r) % self.nodes;
                }
                out[parties - 1].push(rest as u64);
            }
            out
        };
        let src = split(&self.src_first, prf);
        let dst = split(&self.dst_first, prf);
        src.into_iter()
            .zip(dst)
            .map(|(s, d)| {
                BatchedEdges::from_parts(
                    self.nodes,
                    self.batch_size,
                    s,
                    d,
                    self.src_rel.clone(),
                    self.dst_rel.clone(),
                )
            })
            .collect()
    }
}

/// One party's view of the batched edges: shares (mod `N`) of the first
/// index of every batch plus the public relative indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchedEdges {
    nodes: usize,
    batch_size: usize,
    src_first: Vec<u64>,
    dst_first: Vec<u64>,
    src_rel: Vec<u32>,
    dst_rel: Vec<u32>,
}

impl BatchedEdges {
    pub fn from_parts(
        nodes: usize,
        batch_size: usize,
        src_first: Vec<u64>,
        dst_first: Vec<u64>,
        src_rel: Vec<u32>,
        dst_rel: Vec<u32>,
    ) -> Result<Self> {
        if nodes == 0 || batch_size == 0 {
            return Err(Error::Config("node count and batch size must be positive".into()));
        }
        let m = src_rel.len();
        if dst_rel.len() != m || src_first.len() != dst_first.len() || src_first.len() != m.div_ceil(batch_size) {
            return Err(Error::Format(format!(
                "inconsistent batch layout: {} edges, {} / {} relative, {} / {} first indices, batch size {batch_size}",
                m,
                src_rel.len(),
                dst_rel.len(),
                src_first.len(),
                dst_first.len()
            )));
        }
        for &v in src_first.iter().chain(&dst_first) {
            if v >= nodes as u64 {
                return Err(Error::IndexOutOfRange { index: v as usize, bound: nodes });
            }
        }
        for (e, &v) in src_rel.iter().chain(&dst_rel).enumerate() {
            if v as usize >= nodes {
                return Err(Error::IndexOutOfRange { index: v as usize, bound: nodes });
            }
            if e % m.max(1) % batch_size == 0 && v != 0 {
                return Err(Error::Format("relative index of a batch's first edge must be 0".into()));
            }
        }
        Ok(BatchedEdges {
            nodes,
            batch_size,
            src_first,
            dst_first,
            src_rel,
            dst_rel,
        })
    }

    /// Unbatched layout: one edge per batch, the index shares are the firsts.
    pub fn unbatched(nodes: usize, src: Vec<u64>, dst: Vec<u64>) -> Result<Self> {
        let m = src.len();
        Self::from_parts(nodes, 1, src, dst, vec![0; m], vec![0; m])
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches(&self) -> usize {
        self.src_first.len()
    }

    pub fn edges(&self) -> usize {
        self.src_rel.len()
    }

    pub fn src_first(&self) -> &[u64] {
        &self.src_first
    }

    pub fn dst_first(&self) -> &[u64] {
        &self.dst_first
    }

    pub fn src_rel(&self) -> &[u32] {
        &self.src_rel
    }

    pub fn dst_rel(&self) -> &[u32] {
        &self.dst_rel
    }

    /// Edge indices belonging to batch `b`.
    pub fn batch_range(&self, b: usize) -> std::ops::Range<usize> {
        let start = b * self.batch_size;
        start..(start + self.batch_size).min(self.edges())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_examples() {
        assert_eq!(batch_layout(6, 2), (3, 2));
        assert_eq!(batch_layout(6, 6), (1, 6));
        assert_eq!(batch_layout(6, 100), (1, 6));
        assert_eq!(batch_layout(10, 4), (3, 4));
        // ceil(10/6) = 2 per batch leaves only 5 batches.
        assert_eq!(batch_layout(10, 6), (2, 5));
        assert_eq!(batch_layout(0, 20), (1, 0));
    }

    #[test]
    fn six_edges_two_batches() {
        let plan = BatchPlan::new(8, &[3, 4, 1, 5, 7, 0], &[2, 2, 2, 6, 0, 1], 2).unwrap();
        assert_eq!(plan.batch_size, 3);
        assert_eq!(plan.src_rel[0], 0);
        assert_eq!(plan.src_rel[3], 0);
        assert_eq!(plan.src_rel[2], 6);
        assert_eq!(plan.dst_rel[4], 2);
    }

    #[test]
    fn one_batch_per_edge_has_zero_relatives() {
        let plan = BatchPlan::new(5, &[1, 2, 3], &[4, 0, 2], 3).unwrap();
        assert!(plan.src_rel.iter().chain(&plan.dst_rel).all(|&r| r == 0));
    }

    #[test]
    fn shares_reconstruct_firsts() {
        let src = [3usize, 9, 0, 4, 4, 1, 8];
        let dst = [0usize, 1, 2, 3, 4, 5, 6];
        let plan = BatchPlan::new(10, &src, &dst, 3).unwrap();
        assert_eq!(plan.edge_list(), src.iter().copied().zip(dst).collect::<Vec<_>>());
        let mut prf = SeededPrf::new([1; 32], 0);
        let shares = plan.share(3, &mut prf).unwrap();
        for b in 0..plan.batches() {
            let s: u64 = shares.iter().map(|e| e.src_first()[b]).sum();
            let d: u64 = shares.iter().map(|e| e.dst_first()[b]).sum();
            assert_eq!(s as usize % 10, plan.src_first[b]);
            assert_eq!(d as usize % 10, plan.dst_first[b]);
        }
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(matches!(
            BatchPlan::new(4, &[4], &[0], 1),
            Err(Error::IndexOutOfRange { index: 4, bound: 4 })
        ));
        assert!(BatchedEdges::from_parts(4, 2, vec![0], vec![0], vec![0, 9], vec![0, 1]).is_err());
        assert!(BatchedEdges::from_parts(4, 2, vec![0], vec![0], vec![1, 0], vec![0, 1]).is_err());
    }
}
