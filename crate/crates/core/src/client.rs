//! Data-owner side: graph files, upload preparation and result decoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{split_additive, FieldMatrix, FixedPointCodec, PartyId, ShareMatrix};
use crate::layers::{plaintext_forward, Architecture, Dense, PlaintextModel};
use crate::mpl::{overall_noise, reshare_noise, BatchPlan, BatchedEdges, NoiseSource};
use crate::prf::{derive_seed, Seed, SeededPrf};
use crate::serial::*;
use crate::transport::SessionId;

/// Batch count used when none is configured.
pub const DEFAULT_BATCHES: usize = 20;

/// A graph as held by the data owner.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaintextGraph {
    pub nodes: usize,
    pub dim: usize,
    /// `nodes x dim`, row-major.
    pub features: Vec<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weights: Option<Vec<f64>>,
}

impl PlaintextGraph {
    pub fn new(
        nodes: usize,
        dim: usize,
        features: Vec<f64>,
        src: Vec<usize>,
        dst: Vec<usize>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let g = PlaintextGraph {
            nodes,
            dim,
            features,
            src,
            dst,
            weights,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.dim == 0 {
            return Err(Error::Format("graph needs at least one node and one feature".into()));
        }
        if self.features.len() != self.nodes * self.dim {
            return Err(Error::Format(format!(
                "expected {} feature values, found {}",
                self.nodes * self.dim,
                self.features.len()
            )));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature value {v}")));
        }
        if self.src.len() != self.dst.len() || self.weights.as_ref().is_some_and(|w| w.len() != self.src.len()) {
            return Err(Error::Format("edge lists have different lengths".into()));
        }
        if let Some(v) = self.weights.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite edge weight {v}")));
        }
        for &i in self.src.iter().chain(&self.dst) {
            if i >= self.nodes {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    bound: self.nodes,
                });
            }
        }
        Ok(())
    }

    pub fn edges(&self) -> usize {
        self.src.len()
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.src.iter().copied().zip(self.dst.iter().copied()).collect()
    }

    pub fn feature_matrix(&self) -> Dense {
        Dense {
            rows: self.nodes,
            cols: self.dim,
            data: self.features.clone(),
        }
    }

    /// Adds an edge `i -> i` for every node (weight 1 when weighted).
    pub fn with_self_loops(mut self) -> Self {
        for i in 0..self.nodes {
            self.src.push(i);
            self.dst.push(i);
            if let Some(w) = &mut self.weights {
                w.push(1.0);
            }
        }
        self
    }

    /// Pads the edge list to `target` edges with zero-weight edges between
    /// random nodes. Unweighted graphs become weighted with unit weights.
    pub fn with_fake_edges(mut self, target: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.edges();
        let weights = self.weights.get_or_insert_with(|| vec![1.0; m]);
        while self.src.len() < target {
            self.src.push(rng.gen_range(0..self.nodes));
            self.dst.push(rng.gen_range(0..self.nodes));
            weights.push(0.0);
        }
        self
    }

    /// Random graph with features in `[-1, 1)` and uniformly random edges.
    pub fn random(nodes: usize, dim: usize, edges: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..nodes * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let src = (0..edges).map(|_| rng.gen_range(0..nodes)).collect();
        let dst = (0..edges).map(|_| rng.gen_range(0..nodes)).collect();
        PlaintextGraph {
            nodes,
            dim,
            features,
            src,
            dst,
            weights: None,
        }
    }

    /// Parses the text format: a header `N K M [directed|undirected]
    /// [weighted]`, `N` rows of `K` features, then `M` rows `src dst
    /// [weight]`. Blank lines and `#` comments are skipped. Undirected edges
    /// are expanded in both directions (self-loops once).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: &str| Error::Format(format!("line {}: {msg}", line + 1));
        let (hl, header) = lines.next().ok_or_else(|| Error::Format("empty graph file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(bad(hl, "header must be `N K M [directed|undirected] [weighted]`"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(hl, &format!("invalid count {s:?}")));
        let (nodes, dim, m) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        let mut directed = true;
        let mut weighted = false;
        for flag in &fields[3..] {
            match *flag {
                "directed" => directed = true,
                "undirected" => directed = false,
                "weighted" => weighted = true,
                other => return Err(bad(hl, &format!("unknown flag {other:?}"))),
            }
        }
        let mut features = Vec::with_capacity(nodes * dim);
        for _ in 0..nodes {
            let (ln, line) = lines.next().ok_or_else(|| Error::Format("missing feature rows".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(ln, &format!("invalid feature {v:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(bad(ln, &format!("expected {dim} features, found {}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(ln, "non-finite feature"));
            }
            features.extend(row);
        }
        let (mut src, mut dst, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..m {
            let (ln, line) = lines.next().ok_or_else(|| Error::Format("missing edge rows".into()))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 + weighted as usize {
                return Err(bad(ln, "malformed edge row"));
            }
            let idx = |s: &str| {
                let i = s.parse::<usize>().map_err(|_| bad(ln, &format!("invalid node {s:?}")))?;
                if i >= nodes {
                    return Err(Error::IndexOutOfRange { index: i, bound: nodes });
                }
                Ok(i)
            };
            let (s, d) = (idx(parts[0])?, idx(parts[1])?);
            let w = if weighted {
                parts[2].parse::<f64>().map_err(|_| bad(ln, "invalid weight"))?
            } else {
                1.0
            };
            src.push(s);
            dst.push(d);
            weights.push(w);
            if !directed && s != d {
                src.push(d);
                dst.push(s);
                weights.push(w);
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(bad(ln, "unexpected trailing content"));
        }
        PlaintextGraph::new(nodes, dim, features, src, dst, weighted.then_some(weights))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Directed text form, re-readable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("{} {} {} directed", self.nodes, self.dim, self.edges());
        if self.weights.is_some() {
            out.push_str(" weighted");
        }
        out.push('\n');
        for row in self.features.chunks(self.dim) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        for e in 0..self.edges() {
            match &self.weights {
                Some(w) => writeln!(out, "{} {} {}", self.src[e], self.dst[e], w[e]).unwrap(),
                None => writeln!(out, "{} {}", self.src[e], self.dst[e]).unwrap(),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// The graph as the protocol sees it: self-loops added when the
/// architecture asks for them.
pub fn effective_graph(graph: &PlaintextGraph, arch: &Architecture) -> PlaintextGraph {
    if arch.self_loops {
        graph.clone().with_self_loops()
    } else {
        graph.clone()
    }
}

/// Double-precision model output for the graph.
pub fn plaintext_reference(graph: &PlaintextGraph, model: &PlaintextModel) -> Result<Dense> {
    let g = effective_graph(graph, &model.architecture);
    plaintext_forward(model, &g.feature_matrix(), &g.edge_list(), g.weights.as_deref())
}

/// Groups the edges into batches with relative indices.
pub fn batch_edges(graph: &PlaintextGraph, batches: usize) -> Result<BatchPlan> {
    BatchPlan::new(graph.nodes, &graph.src, &graph.dst, batches)
}

/// Client-side settings for one upload.
#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub parties: usize,
    pub batches: usize,
    pub fraction_bits: u32,
    /// Everything random in the upload is derived from this seed.
    pub master_seed: Seed,
}

impl ClientConfig {
    pub fn new(parties: usize, master_seed: Seed) -> Self {
        ClientConfig {
            parties,
            batches: DEFAULT_BATCHES,
            fraction_bits: FixedPointCodec::default().fraction_bits(),
            master_seed,
        }
    }

    pub fn party_seed(&self, party: PartyId) -> Seed {
        derive_seed(&self.master_seed, "party", party as u64)
    }

    pub fn session_id(&self) -> SessionId {
        let s = derive_seed(&self.master_seed, "session", 0);
        s[..16].try_into().unwrap()
    }
}

/// The overall noise of every message-passing layer and its re-shared form.
#[derive(Clone, Debug)]
pub struct NoisePlan {
    pub seeds: Vec<Seed>,
    /// `ξ*` per message-passing layer.
    pub overall: Vec<FieldMatrix>,
    /// `shares[p][l]`: party `p`'s share of layer `l`'s `ξ*`.
    pub shares: Vec<Vec<FieldMatrix>>,
}

/// Simulates the noise every party will inject and returns what must be
/// subtracted after each message-passing layer.
pub fn precompute_noise(
    plan: &BatchPlan,
    edges: &[BatchedEdges],
    seeds: &[Seed],
    widths: &[usize],
    weights: Option<&FieldMatrix>,
    reshare_seed: &Seed,
) -> Result<NoisePlan> {
    let sources: Vec<NoiseSource> = seeds.iter().map(|s| NoiseSource::new(*s)).collect();
    let parties = seeds.len();
    let mut overall = Vec::with_capacity(widths.len());
    let mut shares = vec![Vec::with_capacity(widths.len()); parties];
    for (layer, &k) in widths.iter().enumerate() {
        let xi = overall_noise(plan, edges, &sources, layer as u32, k, weights.map(|w| w.as_slice()))?;
        for (p, s) in reshare_noise(&xi, parties, reshare_seed, layer as u32)?.into_iter().enumerate() {
            shares[p].push(s);
        }
        overall.push(xi);
    }
    Ok(NoisePlan {
        seeds: seeds.to_vec(),
        overall,
        shares,
    })
}

/// One party's upload bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphUpload {
    pub session_id: SessionId,
    pub party: PartyId,
    pub parties: usize,
    pub fraction_bits: u32,
    pub features: FieldMatrix,
    pub edges: BatchedEdges,
    /// One share of `ξ*` per message-passing layer.
    pub noise: Vec<FieldMatrix>,
    /// Shares of the encoded edge weights, `M x 1`.
    pub weights: Option<FieldMatrix>,
    pub seed: Seed,
}

const MAGIC: &[u8; 4] = b"CGUP";
const VERSION: u16 = 1;

impl GraphUpload {
    pub fn nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let e = &self.edges;
        w.write_all(MAGIC)?;
        write_u16(w, VERSION)?;
        w.write_all(&self.session_id)?;
        for v in [self.nodes(), self.dim(), e.edges(), e.batches()] {
            write_u32(w, v as u32)?;
        }
        write_u16(w, self.parties as u16)?;
        write_u16(w, self.fraction_bits as u16)?;
        write_u16(w, self.party as u16)?;
        write_u32(w, e.batch_size() as u32)?;
        write_matrix(w, &self.features)?;
        let firsts = |v: &[u64]| FieldMatrix::from_u64(1, v.len(), v);
        write_matrix(w, &firsts(e.src_first())?)?;
        write_matrix(w, &firsts(e.dst_first())?)?;
        write_u32(w, self.noise.len() as u32)?;
        for xi in &self.noise {
            write_matrix(w, xi)?;
        }
        match &self.weights {
            Some(m) => {
                w.write_all(&[1])?;
                write_matrix(w, m)?;
            }
            None => w.write_all(&[0])?,
        }
        for rel in [e.src_rel(), e.dst_rel()] {
            let mut buf = Vec::with_capacity(rel.len() * 4);
            for v in rel {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.write_all(&self.seed)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported upload version {version}")));
        }
        let mut session_id = [0u8; 16];
        read_exact(r, &mut session_id)?;
        let nodes = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        let m = read_u32(r)? as usize;
        let batches = read_u32(r)? as usize;
        let parties = read_u16(r)? as usize;
        let fraction_bits = read_u16(r)? as u32;
        let party = read_u16(r)? as usize;
        let batch_size = read_u32(r)? as usize;
        let features = read_matrix(r)?;
        if features.shape() != (nodes, dim) {
            return Err(Error::Format("feature block does not match the header".into()));
        }
        let to_u64 = |m: FieldMatrix| -> Result<Vec<u64>> {
            if m.shape() != (1, batches) {
                return Err(Error::Format("first-index block does not match the header".into()));
            }
            Ok(m.as_slice().iter().map(|v| v.value()).collect())
        };
        let src_first = to_u64(read_matrix(r)?)?;
        let dst_first = to_u64(read_matrix(r)?)?;
        let mut noise = Vec::new();
        for _ in 0..read_u32(r)? {
            let xi = read_matrix(r)?;
            if xi.rows() != nodes {
                return Err(Error::Format("noise block does not match the node count".into()));
            }
            noise.push(xi);
        }
        let mut flag = [0u8; 1];
        read_exact(r, &mut flag)?;
        let weights = match flag[0] {
            0 => None,
            1 => {
                let w = read_matrix(r)?;
                if w.shape() != (m, 1) {
                    return Err(Error::Format("weight block does not match the edge count".into()));
                }
                Some(w)
            }
            other => return Err(Error::Format(format!("invalid weight flag {other}"))),
        };
        let mut rels = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut buf = vec![0u8; m * 4];
            read_exact(r, &mut buf)?;
            rels.push(
                buf.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<u32>>(),
            );
        }
        let dst_rel = rels.pop().unwrap();
        let src_rel = rels.pop().unwrap();
        let mut seed = [0u8; 32];
        read_exact(r, &mut seed)?;
        let edges = BatchedEdges::from_parts(nodes, batch_size, src_first, dst_first, src_rel, dst_rel)?;
        if edges.batches() != batches {
            return Err(Error::Format("batch count does not match the header".into()));
        }
        Ok(GraphUpload {
            session_id,
            party,
            parties,
            fraction_bits,
            features,
            edges,
            noise,
            weights,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Everything produced for one request: the bundles plus what the client
/// keeps for itself.
#[derive(Clone, Debug)]
pub struct PreparedUpload {
    pub bundles: Vec<GraphUpload>,
    pub plan: BatchPlan,
    pub noise: NoisePlan,
    pub graph: PlaintextGraph,
}

/// Shares the graph, batches the edges and precomputes the noise of every
/// message-passing layer in the architecture.
pub fn assemble_upload(graph: &PlaintextGraph, arch: &Architecture, config: &ClientConfig) -> Result<PreparedUpload> {
    arch.validate()?;
    if graph.dim != arch.input_dim {
        return Err(Error::ShapeMismatch {
            expected: (graph.nodes, arch.input_dim),
            found: (graph.nodes, graph.dim),
        });
    }
    let parties = config.parties;
    if parties < 2 {
        return Err(Error::Config(format!("need at least 2 parties, got {parties}")));
    }
    let codec = FixedPointCodec::new(config.fraction_bits)?;
    let graph = effective_graph(graph, arch);
    let master = &config.master_seed;
    let plan = batch_edges(&graph, config.batches)?;
    let edges = plan.share(parties, &mut SeededPrf::new(derive_seed(master, "index-shares", 0), 0))?;

    let share = |m: &FieldMatrix, label: &str| -> Result<Vec<FieldMatrix>> {
        let mut prf = SeededPrf::new(derive_seed(master, label, 0), 0);
        Ok(split_additive(m, parties, &mut prf)?
            .into_iter()
            .map(ShareMatrix::into_matrix)
            .collect())
    };
    let x = FieldMatrix::from_vec(graph.nodes, graph.dim, codec.encode_all(&graph.features)?)?;
    let x_shares = share(&x, "features")?;
    let weights = match &graph.weights {
        Some(w) => Some(FieldMatrix::from_vec(w.len(), 1, codec.encode_all(w)?)?),
        None => None,
    };
    let w_shares = match &weights {
        Some(w) => Some(share(w, "weights")?),
        None => None,
    };

    let seeds: Vec<Seed> = (0..parties).map(|p| config.party_seed(p)).collect();
    let noise = precompute_noise(
        &plan,
        &edges,
        &seeds,
        &arch.mpl_widths(),
        weights.as_ref(),
        &derive_seed(master, "reshare", 0),
    )?;

    let session_id = config.session_id();
    let bundles = (0..parties)
        .map(|p| GraphUpload {
            session_id,
            party: p,
            parties,
            fraction_bits: config.fraction_bits,
            features: x_shares[p].clone(),
            edges: edges[p].clone(),
            noise: noise.shares[p].clone(),
            weights: w_shares.as_ref().map(|w| w[p].clone()),
            seed: seeds[p],
        })
        .collect();
    Ok(PreparedUpload {
        bundles,
        plan,
        noise,
        graph,
    })
}

/// Decoded model output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Dense,
    /// Row-wise softmax of the logits.
    pub probabilities: Dense,
    pub classes: Vec<usize>,
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Reconstructs the result shares returned by all parties.
pub fn reconstruct_result(shares: &[FieldMatrix], fraction_bits: u32) -> Result<Prediction> {
    if shares.is_empty() {
        return Err(Error::MissingShares);
    }
    let shape = shares[0].shape();
    let mut sum = FieldMatrix::zeros(shape.0, shape.1);
    for s in shares {
        sum.add_assign(s).map_err(|_| Error::MissingShares)?;
    }
    let codec = FixedPointCodec::new(fraction_bits)?;
    let logits = Dense::new(shape.0, shape.1, codec.decode_all(sum.as_slice()))?;
    let mut probs = Vec::with_capacity(logits.data.len());
    let mut classes = Vec::with_capacity(shape.0);
    for i in 0..shape.0 {
        let row = logits.row(i);
        probs.extend(softmax(row));
        classes.push(argmax(row));
    }
    Ok(Prediction {
        probabilities: Dense::new(shape.0, shape.1, probs)?,
        logits,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "# toy graph\n4 2 1 directed\n1 2\n3 4\n5 6\n7 8\n0 1\n";

    #[test]
    fn toy_file() {
        let g = PlaintextGraph::parse(TOY).unwrap();
        assert_eq!((g.nodes, g.dim, g.edges()), (4, 2, 1));
        assert_eq!(g.edge_list(), vec![(0, 1)]);
        assert_eq!(PlaintextGraph::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn undirected_weighted_expansion() {
        let g = PlaintextGraph::parse("3 1 2 undirected weighted\n1\n2\n3\n0 1 0.5\n2 2 2\n").unwrap();
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(g.weights, Some(vec![0.5, 0.5, 2.0]));
    }

    #[test]
    fn empty_edge_list_is_valid() {
        let g = PlaintextGraph::parse("2 1 0\n1\n2\n").unwrap();
        assert_eq!(g.edges(), 0);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(
            PlaintextGraph::parse("2 1 1\n1\n2\n0 2\n"),
            Err(Error::IndexOutOfRange { index: 2, bound: 2 })
        ));
        assert!(PlaintextGraph::parse("2 1 0\n1\nNaN\n").is_err());
        assert!(PlaintextGraph::parse("2 1 0\n1\n").is_err());
        assert!(PlaintextGraph::parse("2 1 0 sideways\n1\n2\n").is_err());
        assert!(PlaintextGraph::parse("2 1 0\n1\n2\n0 1\n").is_err());
    }

    #[test]
    fn fake_edges_have_zero_weight() {
        let g = PlaintextGraph::parse(TOY).unwrap().with_fake_edges(5, 1);
        assert_eq!(g.edges(), 5);
        assert_eq!(g.weights.unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn prediction_examples() {
        let codec = FixedPointCodec::default();
        let logits = FieldMatrix::from_vec(1, 2, codec.encode_all(&[2.0, 1.0]).unwrap()).unwrap();
        let zero = FieldMatrix::zeros(1, 2);
        let p = reconstruct_result(&[logits.clone(), zero], 16).unwrap();
        assert_eq!(p.classes, vec![0]);
        let single = FieldMatrix::from_vec(1, 1, codec.encode_all(&[-3.0]).unwrap()).unwrap();
        let p = reconstruct_result(&[single], 16).unwrap();
        assert_eq!(p.probabilities.data, vec![1.0]);
        assert!(matches!(reconstruct_result(&[], 16), Err(Error::MissingShares)));
    }

    #[test]
    fn upload_bundles_roundtrip_and_reconstruct() {
        let g = PlaintextGraph::random(6, 3, 9, 4);
        let arch = Architecture::gin(3, 4, 2, 2);
        let cfg = ClientConfig::new(3, [9; 32]);
        let up = assemble_upload(&g, &arch, &cfg).unwrap();
        assert_eq!(up.bundles.len(), 3);
        assert_eq!(up.plan.edges(), 9 + 6);
        let mut x = FieldMatrix::zeros(6, 3);
        for b in &up.bundles {
            x.add_assign(&b.features).unwrap();
            let mut buf = Vec::new();
            b.write_to(&mut buf).unwrap();
            assert_eq!(&GraphUpload::read_from(&mut buf.as_slice()).unwrap(), b);
        }
        let codec = FixedPointCodec::default();
        assert_eq!(codec.decode_all(x.as_slice()), codec.decode_all(&codec.encode_all(&g.features).unwrap()));
        assert_eq!(up.noise.shares[0].len(), 2);
        assert_ne!(up.bundles[0].seed, up.bundles[1].seed);
    }

    #[test]
    fn different_master_seeds_change_every_block() {
        let g = PlaintextGraph::random(5, 2, 6, 5);
        let arch = Architecture::gin(2, 2, 2, 1);
        let a = assemble_upload(&g, &arch, &ClientConfig::new(2, [1; 32])).unwrap();
        let b = assemble_upload(&g, &arch, &ClientConfig::new(2, [2; 32])).unwrap();
        for (x, y) in a.bundles.iter().zip(&b.bundles) {
            assert_ne!(x.features, y.features);
            assert_ne!(x.noise, y.noise);
            assert_ne!(x.seed, y.seed);
            assert_ne!(x.session_id, y.session_id);
        }
    }
}
