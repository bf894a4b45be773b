use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldMatrix, PartyId, ShareMatrix};
use crate::prf::Seed;
use crate::serial::*;

use super::{AMPool, DealerStream, MatrixBeaverTriple, StreamKind, StreamSource};

const MAGIC: &[u8; 4] = b"CGOF";
const VERSION: u16 = 1;

/// Shape of the matrix triple reserved for one linear layer.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub layer: u32,
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
}

/// How much correlated randomness one inference needs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineSizing {
    /// Element-wise multiplications; the AM pool holds three pairs each.
    pub elem_mults: usize,
    pub truncations: usize,
    pub exact_truncations: usize,
    pub compares: usize,
    pub matrix_triples: Vec<MatrixShape>,
}

impl OfflineSizing {
    /// Totals for `inferences` runs; matrix triples are reused, not repeated.
    pub fn times(&self, inferences: usize) -> OfflineSizing {
        OfflineSizing {
            elem_mults: self.elem_mults * inferences,
            truncations: self.truncations * inferences,
            exact_truncations: self.exact_truncations * inferences,
            compares: self.compares * inferences,
            matrix_triples: self.matrix_triples.clone(),
        }
    }

    pub fn am_pairs(&self) -> usize {
        3 * self.elem_mults
    }
}

/// Consumption record kept per client, used to prove single use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEntry {
    AmPairs { inference: u64, start: usize, count: usize },
    Stream { inference: u64, kind: StreamKind, start: usize, count: usize },
    DerivedTriple { inference: u64, layer: u32, id: String },
    OpenedU { inference: u64, layer: u32, digest: String },
    OpenedV { inference: u64, layer: u32, digest: String, cached: bool },
}

/// Per-client state that survives between inference requests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientState {
    /// Opened `V = H - B` per linear layer, tagged with the model version.
    pub v_cache: BTreeMap<u32, (u64, FieldMatrix)>,
    pub derived_ids: BTreeSet<Seed>,
    pub audit: Vec<AuditEntry>,
    pub inferences: u64,
}

impl ClientState {
    /// Records a derived triple id, refusing one that was seen before.
    pub fn register_derived(&mut self, id: Seed) -> Result<()> {
        if !self.derived_ids.insert(id) {
            return Err(Error::Reuse(format!(
                "derived triple {} was already used",
                crate::transport::hex_string(&id)
            )));
        }
        Ok(())
    }

    /// Drops cached openings made under a different model version.
    pub fn invalidate_v_cache(&mut self, model_version: u64) {
        self.v_cache.retain(|_, (v, _)| *v == model_version);
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u64(w, self.inferences)?;
        write_len(w, self.v_cache.len())?;
        for (layer, (version, v)) in &self.v_cache {
            write_u32(w, *layer)?;
            write_u64(w, *version)?;
            write_matrix(w, v)?;
        }
        write_len(w, self.derived_ids.len())?;
        for id in &self.derived_ids {
            w.write_all(id)?;
        }
        write_bytes(w, &serde_json::to_vec(&self.audit)?)
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let inferences = read_u64(r)?;
        let mut v_cache = BTreeMap::new();
        for _ in 0..read_len(r)? {
            let layer = read_u32(r)?;
            let version = read_u64(r)?;
            v_cache.insert(layer, (version, read_matrix(r)?));
        }
        let mut derived_ids = BTreeSet::new();
        for _ in 0..read_len(r)? {
            let mut id = [0u8; 32];
            read_exact(r, &mut id)?;
            derived_ids.insert(id);
        }
        let audit = serde_json::from_slice(&read_bytes(r)?)?;
        Ok(ClientState {
            v_cache,
            derived_ids,
            audit,
            inferences,
        })
    }
}

/// Everything one party holds for one client after the offline phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OfflineMaterial {
    pub client_id: String,
    pub party: PartyId,
    pub parties: usize,
    pub fraction_bits: u32,
    pub n_max: usize,
    pub triples: Vec<(MatrixShape, MatrixBeaverTriple)>,
    pub am_pool: AMPool,
    pub truncation: DealerStream,
    pub exact_truncation: DealerStream,
    pub compare: DealerStream,
    pub client: ClientState,
}

impl OfflineMaterial {
    pub fn triple(&self, layer: u32) -> Result<&MatrixBeaverTriple> {
        self.triples
            .iter()
            .find(|(s, _)| s.layer == layer)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no matrix triple was prepared for layer {layer}")))
    }

    pub fn stream_mut(&mut self, kind: StreamKind) -> &mut DealerStream {
        match kind {
            StreamKind::Truncation => &mut self.truncation,
            StreamKind::ExactTruncation => &mut self.exact_truncation,
            StreamKind::Compare => &mut self.compare,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u16(w, VERSION)?;
        write_u16(w, self.party as u16)?;
        write_u16(w, self.parties as u16)?;
        write_u16(w, self.fraction_bits as u16)?;
        write_len(w, self.n_max)?;
        write_bytes(w, self.client_id.as_bytes())?;

        write_len(w, self.triples.len())?;
        for (shape, t) in &self.triples {
            write_u32(w, shape.layer)?;
            write_len(w, shape.rows)?;
            write_len(w, shape.inner)?;
            write_len(w, shape.cols)?;
            write_matrix(w, t.a.matrix())?;
            write_matrix(w, t.b.matrix())?;
            write_matrix(w, t.c.matrix())?;
        }

        write_u64(w, self.am_pool.cursor() as u64)?;
        write_vector(w, self.am_pool.additive())?;
        write_vector(w, self.am_pool.multiplicative())?;

        for s in [&self.truncation, &self.exact_truncation, &self.compare] {
            write_u16(w, s.kind() as u16)?;
            write_u64(w, s.item_len() as u64)?;
            write_u64(w, s.capacity() as u64)?;
            write_u64(w, s.cursor() as u64)?;
            match s.source() {
                StreamSource::Seeded(seed) => {
                    w.write_all(&[0])?;
                    w.write_all(seed)?;
                }
                StreamSource::Explicit(values) => {
                    w.write_all(&[1])?;
                    write_vector(w, values)?;
                }
            }
        }
        self.client.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported offline file version {version}")));
        }
        let party = read_u16(r)? as usize;
        let parties = read_u16(r)? as usize;
        let fraction_bits = read_u16(r)? as u32;
        let n_max = read_len(r)?;
        let client_id = String::from_utf8(read_bytes(r)?)
            .map_err(|_| Error::Format("client id is not UTF-8".into()))?;

        let mut triples = Vec::new();
        for _ in 0..read_len(r)? {
            let shape = MatrixShape {
                layer: read_u32(r)?,
                rows: read_len(r)?,
                inner: read_len(r)?,
                cols: read_len(r)?,
            };
            let a = read_matrix(r)?;
            let b = read_matrix(r)?;
            let c = read_matrix(r)?;
            if a.shape() != (shape.rows, shape.inner)
                || b.shape() != (shape.inner, shape.cols)
                || c.shape() != (shape.rows, shape.cols)
            {
                return Err(Error::Format(format!("triple for layer {} has wrong shapes", shape.layer)));
            }
            triples.push((
                shape,
                MatrixBeaverTriple {
                    a: ShareMatrix::new(party, a),
                    b: ShareMatrix::new(party, b),
                    c: ShareMatrix::new(party, c),
                },
            ));
        }

        let cursor = read_u64(r)? as usize;
        let additive = read_vector(r)?;
        let multiplicative = read_vector(r)?;
        let am_pool = AMPool::from_parts(additive, multiplicative, cursor)?;

        let mut streams = Vec::with_capacity(3);
        for _ in 0..3 {
            let kind = StreamKind::from_u16(read_u16(r)?)?;
            let item_len = read_u64(r)? as usize;
            let capacity = read_u64(r)? as usize;
            let cursor = read_u64(r)? as usize;
            let mut tag = [0u8; 1];
            read_exact(r, &mut tag)?;
            let source = match tag[0] {
                0 => {
                    let mut seed = [0u8; 32];
                    read_exact(r, &mut seed)?;
                    StreamSource::Seeded(seed)
                }
                1 => StreamSource::Explicit(read_vector(r)?),
                other => return Err(Error::Format(format!("unknown stream source {other}"))),
            };
            streams.push(DealerStream::from_parts(kind, item_len, capacity, cursor, source)?);
        }
        let compare = streams.pop().unwrap();
        let exact_truncation = streams.pop().unwrap();
        let truncation = streams.pop().unwrap();
        if truncation.kind() != StreamKind::Truncation
            || exact_truncation.kind() != StreamKind::ExactTruncation
            || compare.kind() != StreamKind::Compare
        {
            return Err(Error::Format("dealer streams out of order".into()));
        }
        let client = ClientState::read_from(r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after offline material".into()));
        }
        Ok(OfflineMaterial {
            client_id,
            party,
            parties,
            fraction_bits,
            n_max,
            triples,
            am_pool,
            truncation,
            exact_truncation,
            compare,
            client,
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
