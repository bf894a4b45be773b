//! Party-side execution of a full model over an uploaded graph, plus the
//! offline sizing and the in-process orchestration used by tests and the CLI.

use sha2::{Digest, Sha256};

use crate::client::{assemble_upload, reconstruct_result, ClientConfig, GraphUpload, PlaintextGraph, Prediction};
use crate::error::{Error, Result};
use crate::field::{FieldMatrix, FixedPointCodec};
use crate::layers::{
    batch_norm_layer, layer_cost, linear_layer, relu_layer, sigmoid_layer, Architecture, LayerSpec, ModelShare,
    PlaintextModel, Readout, Runtime, SharedLayer,
};
use crate::mpl::{batch_crypt_mpl, weighted_mpl, NoiseSource};
use crate::mul::TripleBuffer;
use crate::prf::{derive_seed, Seed, SeededPrf};
use crate::provider::{
    msas_pair_batch, AuditEntry, Dealer, MatrixShape, OfflineMaterial, OfflineSizing, StreamKind,
};
use crate::sim::{run_parties, Backend};
use crate::transport::{Session, SessionConfig, SessionId, Transcript};

/// Correlated randomness one inference consumes on a graph with `nodes`
/// nodes and `edges` edges (after self-loops). Matrix triples are sized for
/// `nodes` rows, or one row after a sum readout.
pub fn resource_plan(arch: &Architecture, nodes: usize, edges: usize, weighted: bool) -> Result<OfflineSizing> {
    arch.validate()?;
    let mut sizing = OfflineSizing::default();
    if weighted {
        for k in arch.mpl_widths() {
            sizing.elem_mults += edges * k;
            sizing.exact_truncations += nodes * k;
        }
    }
    for placed in arch.placed_layers() {
        let rows = if placed.pooled { 1 } else { nodes };
        let (elem, trunc, compare) = layer_cost(&placed.spec, rows, placed.input_dim);
        sizing.elem_mults += elem;
        sizing.truncations += trunc;
        sizing.compares += compare;
        if let LayerSpec::Linear { input, output } = placed.spec {
            sizing.matrix_triples.push(MatrixShape {
                layer: placed.id,
                rows,
                inner: input,
                cols: output,
            });
        }
    }
    Ok(sizing)
}

/// What the provider is asked to prepare for one client.
#[derive(Clone, Debug)]
pub struct OfflineRequest {
    pub client_id: String,
    pub parties: usize,
    pub fraction_bits: u32,
    /// Largest graph the material must serve, counted after self-loops.
    pub n_max: usize,
    pub m_max: usize,
    pub weighted: bool,
    pub inferences: usize,
    pub seed: Seed,
}

impl OfflineRequest {
    pub fn new(client_id: &str, parties: usize, n_max: usize, m_max: usize, seed: Seed) -> Self {
        OfflineRequest {
            client_id: client_id.to_string(),
            parties,
            fraction_bits: FixedPointCodec::default().fraction_bits(),
            n_max,
            m_max,
            weighted: false,
            inferences: 1,
            seed,
        }
    }
}

/// Dealer emulation plus the interactive AM pair generation. Returns one
/// material bundle per party and the transcripts of the pair generation.
pub fn prepare_offline(
    arch: &Architecture,
    request: &OfflineRequest,
    backend: Backend,
) -> Result<(Vec<OfflineMaterial>, Vec<Transcript>)> {
    let parties = request.parties;
    let sizing = resource_plan(arch, request.n_max, request.m_max, request.weighted)?.times(request.inferences);
    let f = request.fraction_bits;
    let mut dealer = Dealer::new(request.seed, parties, f)?;

    let mut triples: Vec<Vec<_>> = vec![Vec::new(); parties];
    for shape in &sizing.matrix_triples {
        for (p, t) in dealer
            .matrix_triple(shape.rows, shape.inner, shape.cols)?
            .into_iter()
            .enumerate()
        {
            triples[p].push((*shape, t));
        }
    }
    let links = dealer.am_links(sizing.am_pairs())?;
    let mut truncation = dealer.stream(StreamKind::Truncation, sizing.truncations)?;
    let mut exact = dealer.stream(StreamKind::ExactTruncation, sizing.exact_truncations)?;
    let mut compare = dealer.stream(StreamKind::Compare, sizing.compares)?;

    let sid = derive_seed(&request.seed, "offline-session", 0);
    let config = SessionConfig::new(sid[..16].try_into().unwrap());
    let outcomes = run_parties(backend, &config, links, |session, m| msas_pair_batch(session, &m))?;

    let mut materials = Vec::with_capacity(parties);
    let mut transcripts = Vec::with_capacity(parties);
    for (p, outcome) in outcomes.into_iter().enumerate().rev() {
        materials.push(OfflineMaterial {
            client_id: request.client_id.clone(),
            party: p,
            parties,
            fraction_bits: f,
            n_max: request.n_max,
            triples: std::mem::take(&mut triples[p]),
            am_pool: outcome.value,
            truncation: truncation.pop().unwrap(),
            exact_truncation: exact.pop().unwrap(),
            compare: compare.pop().unwrap(),
            client: Default::default(),
        });
        transcripts.push(outcome.transcript);
    }
    materials.reverse();
    transcripts.reverse();
    Ok((materials, transcripts))
}

/// One party's share of the model output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferenceResult {
    /// `nodes x classes`, or `1 x classes` after a sum readout.
    pub logits: FieldMatrix,
    pub classes: usize,
}

fn check_inputs(session: &Session, upload: &GraphUpload, model: &ModelShare, material: &OfflineMaterial) -> Result<()> {
    let me = session.me();
    let parties = session.parties();
    let mismatch = |what: &str| Err(Error::Config(format!("{what} does not match this session")));
    if upload.party != me || model.party != me || material.party != me {
        return mismatch("party index");
    }
    if upload.parties != parties || model.parties != parties || material.parties != parties {
        return mismatch("party count");
    }
    if &upload.session_id != session.id() {
        return mismatch("upload session id");
    }
    let f = upload.fraction_bits;
    if model.fraction_bits != f || material.fraction_bits != f {
        return Err(Error::Config("fraction bits differ between upload, model and offline material".into()));
    }
    let arch = &model.architecture;
    if upload.dim() != arch.input_dim {
        return Err(Error::ShapeMismatch {
            expected: (upload.nodes(), arch.input_dim),
            found: upload.features.shape(),
        });
    }
    if upload.nodes() > material.n_max {
        return Err(Error::OversizeRequest {
            requested: upload.nodes(),
            max: material.n_max,
        });
    }
    let widths = arch.mpl_widths();
    if upload.noise.len() != widths.len()
        || upload.noise.iter().zip(&widths).any(|(xi, &k)| xi.shape() != (upload.nodes(), k))
    {
        return Err(Error::Format("upload carries noise for a different architecture".into()));
    }
    if model.layers.len() != arch.placed_layers().len() {
        return Err(Error::Format("model share does not match its architecture".into()));
    }
    Ok(())
}

/// Seed for this party's local Beaver sampling. It is derived from material
/// the client never sees, so runs are reproducible without the client
/// learning the triples.
fn local_seed(material: &OfflineMaterial, inference: u64) -> Seed {
    let mut h = Sha256::new();
    h.update(b"cryptgnn/beaver-m");
    h.update((material.party as u64).to_le_bytes());
    h.update(inference.to_le_bytes());
    for v in material.am_pool.additive().iter().take(64) {
        h.update(v.value().to_le_bytes());
    }
    for (_, t) in material.triples.iter().take(1) {
        for v in t.a.matrix().as_slice().iter().take(64) {
            h.update(v.value().to_le_bytes());
        }
    }
    h.finalize().into()
}

fn request_nonce(session: &SessionId) -> Seed {
    let mut h = Sha256::new();
    h.update(b"cryptgnn/nonce");
    h.update(session);
    h.finalize().into()
}

fn phase_name(spec: &LayerSpec, id: u32) -> String {
    let kind = match spec {
        LayerSpec::Linear { .. } => "linear",
        LayerSpec::BatchNorm { .. } => "batch_norm",
        LayerSpec::Relu => "relu",
        LayerSpec::Sigmoid => "sigmoid",
    };
    format!("{kind}/{id}")
}

fn apply_layer(rt: &mut Runtime, x: &FieldMatrix, id: u32, spec: &LayerSpec, params: &SharedLayer) -> Result<FieldMatrix> {
    rt.session.set_phase(&phase_name(spec, id));
    match (spec, params) {
        (LayerSpec::Linear { .. }, SharedLayer::Linear { weight, bias }) => linear_layer(rt, x, id, weight, bias),
        (LayerSpec::BatchNorm { .. }, SharedLayer::Affine { scale, shift }) => batch_norm_layer(rt, x, scale, shift),
        (LayerSpec::Relu, _) => relu_layer(rt, x),
        (LayerSpec::Sigmoid, _) => sigmoid_layer(rt, x),
        _ => Err(Error::Format(format!("layer {id} has parameters of the wrong kind"))),
    }
}

/// Runs the model described by `model` over the uploaded graph.
///
/// Message-passing layer `i` uses noise layer id `i`; feature layers use
/// their position in the architecture. Consumption of every pool is
/// recorded in the client's audit log.
pub fn run_gin(
    session: &mut Session,
    upload: &GraphUpload,
    model: &ModelShare,
    material: &mut OfflineMaterial,
) -> Result<InferenceResult> {
    check_inputs(session, upload, model, material)?;
    let arch = &model.architecture;
    let classes = arch.classes()?;
    let f = upload.fraction_bits;
    let weighted = upload.weights.is_some();
    let sizing = resource_plan(arch, upload.nodes(), upload.edges.edges(), weighted)?;

    material.client.invalidate_v_cache(model.version);
    let inference = material.client.inferences;
    material.client.inferences += 1;
    let cursors_before = [
        material.truncation.cursor(),
        material.exact_truncation.cursor(),
        material.compare.cursor(),
    ];

    session.set_phase("prepare");
    let mut prf = SeededPrf::new(local_seed(material, inference), 0);
    let buffer = TripleBuffer::prepare(session, &mut prf, &mut material.am_pool, sizing.elem_mults)?;
    let (first_pair, buffered) = (buffer.first_pair(), buffer.len());
    let noise = NoiseSource::new(upload.seed);

    let mut rt = Runtime {
        session,
        material,
        buffer,
        nonce: request_nonce(&upload.session_id),
        model_version: model.version,
        inference,
        codec: FixedPointCodec::new(f)?,
    };
    let placed = arch.placed_layers();
    let mut layers = placed.iter().zip(&model.layers);
    let mut x = upload.features.clone();
    let mut outputs = Vec::with_capacity(arch.blocks.len());
    let mut mpl = 0usize;
    for block in &arch.blocks {
        if block.message_passing {
            rt.session.set_phase(&format!("mpl/{mpl}"));
            let xi = &upload.noise[mpl];
            x = match &upload.weights {
                Some(w) => weighted_mpl(
                    rt.session,
                    &x,
                    &upload.edges,
                    w,
                    xi,
                    mpl as u32,
                    &noise,
                    &mut rt.buffer,
                    &mut rt.material.exact_truncation,
                    f,
                )?,
                None => batch_crypt_mpl(rt.session, &x, &upload.edges, xi, mpl as u32, &noise)?,
            };
            mpl += 1;
        }
        for _ in &block.layers {
            let (p, params) = layers.next().expect("validated layer count");
            x = apply_layer(&mut rt, &x, p.id, &p.spec, params)?;
        }
        outputs.push(x.clone());
    }
    if arch.concat {
        let parts: Vec<&FieldMatrix> = outputs.iter().collect();
        x = FieldMatrix::hconcat(&parts)?;
    }
    if arch.readout == Readout::Sum {
        x = x.sum_rows();
    }
    for (p, params) in layers {
        x = apply_layer(&mut rt, &x, p.id, &p.spec, params)?;
    }
    if rt.buffer.remaining() != 0 {
        return Err(Error::Protocol(format!(
            "{} element-wise triples left unused; sizing is inconsistent",
            rt.buffer.remaining()
        )));
    }

    let material = rt.material;
    let audit = &mut material.client.audit;
    audit.push(AuditEntry::AmPairs {
        inference,
        start: first_pair,
        count: 3 * buffered,
    });
    let kinds = [StreamKind::Truncation, StreamKind::ExactTruncation, StreamKind::Compare];
    let after = [
        material.truncation.cursor(),
        material.exact_truncation.cursor(),
        material.compare.cursor(),
    ];
    for ((kind, start), end) in kinds.into_iter().zip(cursors_before).zip(after) {
        if end > start {
            audit.push(AuditEntry::Stream {
                inference,
                kind,
                start,
                count: end - start,
            });
        }
    }
    Ok(InferenceResult { logits: x, classes })
}

/// Everything the parties return from one in-process inference.
#[derive(Clone, Debug)]
pub struct InferenceRun {
    pub shares: Vec<FieldMatrix>,
    pub materials: Vec<OfflineMaterial>,
    pub transcripts: Vec<Transcript>,
}

/// Runs `run_gin` for all parties in one process. Materials are returned
/// with their cursors advanced so they can serve the next request.
pub fn run_inference(
    backend: Backend,
    uploads: Vec<GraphUpload>,
    models: Vec<ModelShare>,
    materials: Vec<OfflineMaterial>,
) -> Result<InferenceRun> {
    let parties = uploads.len();
    if models.len() != parties || materials.len() != parties {
        return Err(Error::Config("need one upload, model share and material per party".into()));
    }
    let config = SessionConfig::new(uploads.first().ok_or(Error::MissingShares)?.session_id);
    let inputs: Vec<_> = uploads.into_iter().zip(models).zip(materials).collect();
    let outcomes = run_parties(backend, &config, inputs, |session, ((upload, model), mut material)| {
        let result = run_gin(session, &upload, &model, &mut material).inspect_err(|e| {
            log::error!("party {} aborted in phase {}: {e}", session.me(), session.phase());
        })?;
        Ok((result.logits, material))
    })?;
    let mut run = InferenceRun {
        shares: Vec::with_capacity(parties),
        materials: Vec::with_capacity(parties),
        transcripts: Vec::with_capacity(parties),
    };
    for o in outcomes {
        run.shares.push(o.value.0);
        run.materials.push(o.value.1);
        run.transcripts.push(o.transcript);
    }
    Ok(run)
}

/// Result of [`secure_inference`].
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub prediction: Prediction,
    pub run: InferenceRun,
    pub offline: Vec<Transcript>,
}

/// Splits the model, prepares offline material sized for this graph,
/// uploads, runs and reconstructs. Every random choice follows from
/// `config.master_seed`.
pub fn secure_inference(
    graph: &PlaintextGraph,
    model: &PlaintextModel,
    config: &ClientConfig,
    backend: Backend,
) -> Result<PipelineOutput> {
    let arch = &model.architecture;
    let master = &config.master_seed;
    let shares = model.split(config.parties, config.fraction_bits, &derive_seed(master, "model", 0))?;
    let upload = assemble_upload(graph, arch, config)?;
    let mut request = OfflineRequest::new(
        "client",
        config.parties,
        upload.graph.nodes,
        upload.graph.edges(),
        derive_seed(master, "dealer", 0),
    );
    request.fraction_bits = config.fraction_bits;
    request.weighted = upload.graph.weights.is_some();
    let (materials, offline) = prepare_offline(arch, &request, backend)?;
    let run = run_inference(backend, upload.bundles, shares, materials)?;
    let prediction = reconstruct_result(&run.shares, config.fraction_bits)?;
    Ok(PipelineOutput {
        prediction,
        run,
        offline,
    })
}
