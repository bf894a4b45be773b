use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cryptgnn::client::{
    assemble_upload, plaintext_reference, precompute_noise, reconstruct_result, ClientConfig, GraphUpload,
    PlaintextGraph, Prediction,
};
use cryptgnn::engine::{prepare_offline, run_gin, run_inference, secure_inference, OfflineRequest};
use cryptgnn::field::{split_additive, FieldMatrix, ShareMatrix};
use cryptgnn::layers::{Architecture, ModelShare, PlaintextModel};
use cryptgnn::mpl::{batch_crypt_mpl, BatchPlan, NoiseSource};
use cryptgnn::prf::{derive_seed, Seed, SeededPrf};
use cryptgnn::provider::{AuditEntry, OfflineMaterial};
use cryptgnn::serial::{read_matrix, write_matrix};
use cryptgnn::sim::{run_parties, Backend};
use cryptgnn::transport::{Session, SessionConfig, SocketConfig, TcpChannel, Transcript};

/// Secure GNN inference across simulated or networked parties.
#[derive(Parser)]
#[command(name = "cryptgnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Protocol {
    /// Number of computing parties.
    #[arg(long, env = "CRYPTGNN_PARTIES", default_value_t = 3)]
    parties: usize,
    /// Number of edge batches per message-passing layer.
    #[arg(long, env = "CRYPTGNN_BATCHES", default_value_t = cryptgnn::client::DEFAULT_BATCHES)]
    batches: usize,
    #[arg(long, env = "CRYPTGNN_FRACTION_BITS", default_value_t = 16)]
    fraction_bits: u32,
    /// loopback (threads in this process) or socket (local TCP).
    #[arg(long, env = "CRYPTGNN_BACKEND", default_value = "loopback")]
    backend: Backend,
    /// Master seed; fixes every random choice of the run.
    #[arg(long, env = "CRYPTGNN_SEED", default_value_t = 0)]
    seed: u64,
}

impl Protocol {
    fn check(&self) -> Result<()> {
        if self.parties < 2 {
            bail!(cryptgnn::Error::Config(format!("need at least 2 parties, got {}", self.parties)));
        }
        if self.batches == 0 {
            bail!(cryptgnn::Error::Config("batch count must be at least 1".into()));
        }
        Ok(())
    }

    fn client(&self) -> ClientConfig {
        let mut cfg = ClientConfig::new(self.parties, master_seed(self.seed));
        cfg.batches = self.batches;
        cfg.fraction_bits = self.fraction_bits;
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialized GIN model (plaintext JSON).
    GenModel {
        #[arg(long, default_value_t = 7)]
        input_dim: usize,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        #[arg(long, env = "CRYPTGNN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "CRYPTGNN_FRACTION_BITS", default_value_t = 16)]
        fraction_bits: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a random graph in the text format.
    GenGraph {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        features: usize,
        #[arg(long)]
        edges: usize,
        /// Attach random edge weights in [-2, 2).
        #[arg(long)]
        weighted: bool,
        #[arg(long, env = "CRYPTGNN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a plaintext model into one share file per party.
    SplitModel {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        protocol: Protocol,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Prepare correlated randomness for a client.
    Offline {
        /// Plaintext model, model share or architecture JSON.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n_max: usize,
        #[arg(long)]
        m_max: usize,
        #[arg(long, default_value_t = 1)]
        inferences: usize,
        #[arg(long)]
        weighted: bool,
        #[arg(long, default_value = "client")]
        client_id: String,
        #[command(flatten)]
        protocol: Protocol,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one inference with prepared shares and offline material.
    Infer {
        #[arg(long)]
        graph: PathBuf,
        /// Directory written by split-model.
        #[arg(long)]
        shares: PathBuf,
        /// Directory written by offline; updated in place.
        #[arg(long)]
        offline: PathBuf,
        #[command(flatten)]
        protocol: Protocol,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run split, offline and inference in one go and compare with the
    /// plaintext reference.
    Verify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[command(flatten)]
        protocol: Protocol,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time one message-passing layer over a grid of synthetic graphs.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "500")]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4")]
        features: Vec<usize>,
        /// Average in-degree; edges = nodes * degree.
        #[arg(long, value_delimiter = ',', default_value = "4")]
        degree: Vec<usize>,
        #[arg(long = "party-counts", value_delimiter = ',', default_value = "3")]
        party_counts: Vec<usize>,
        #[arg(long = "batch-counts", value_delimiter = ',', default_value = "20")]
        batch_counts: Vec<usize>,
        #[arg(long, env = "CRYPTGNN_BACKEND", default_value = "loopback")]
        backend: Backend,
        #[arg(long, env = "CRYPTGNN_SEED", default_value_t = 0)]
        seed: u64,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize offline material: remaining pools and the audit log.
    Report {
        #[arg(long)]
        offline: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the per-party upload bundles for a graph.
    Upload {
        #[arg(long)]
        graph: PathBuf,
        /// Plaintext model, model share or architecture JSON.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        protocol: Protocol,
        #[arg(long)]
        out: PathBuf,
    },
    /// Act as one party over TCP.
    Party {
        #[arg(long)]
        index: usize,
        /// host:port of every party, in party order.
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<SocketAddr>,
        #[arg(long)]
        upload: PathBuf,
        #[arg(long)]
        share: PathBuf,
        /// Offline material file; updated in place.
        #[arg(long)]
        offline: PathBuf,
        /// Where to write this party's result share.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine result shares written by `party` and print the prediction.
    Reconstruct {
        #[arg(long, value_delimiter = ',', required = true)]
        results: Vec<PathBuf>,
        #[arg(long, env = "CRYPTGNN_FRACTION_BITS", default_value_t = 16)]
        fraction_bits: u32,
    },
}

/// Raised when secure and plaintext outputs disagree.
#[derive(Debug, thiserror::Error)]
#[error("secure output differs from the plaintext reference by {diff:.3e} (tolerance {tolerance:.1e})")]
struct VerificationFailed {
    diff: f64,
    tolerance: f64,
}

fn master_seed(seed: u64) -> Seed {
    derive_seed(&[0; 32], "master", seed)
}

fn share_path(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("model.p{p}.cgms"))
}

fn offline_path(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("offline.p{p}.cgof"))
}

fn upload_path(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("upload.p{p}.cgup"))
}

fn load_architecture(path: &Path) -> Result<Architecture> {
    if let Ok(model) = PlaintextModel::load(path) {
        return Ok(model.architecture);
    }
    if let Ok(share) = ModelShare::load(path) {
        return Ok(share.architecture);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Architecture::from_json(&text).with_context(|| format!("{} is not a model or architecture", path.display()))
}

fn load_graph(path: &Path) -> Result<PlaintextGraph> {
    PlaintextGraph::load(path).with_context(|| format!("loading graph {}", path.display()))
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn print_prediction(p: &Prediction) {
    for (i, class) in p.classes.iter().enumerate() {
        let probs: Vec<String> = p.probabilities.row(i).iter().map(|v| format!("{v:.4}")).collect();
        if p.classes.len() == 1 {
            println!("class {class} (probabilities {})", probs.join(" "));
        } else {
            println!("row {i}: class {class} (probabilities {})", probs.join(" "));
        }
    }
}

fn print_transcripts(transcripts: &[Transcript]) {
    let t0 = &transcripts[0];
    println!("{:<16} {:>7} {:>14}", "phase", "rounds", "bytes sent (p0)");
    for ph in &t0.phases {
        println!("{:<16} {:>7} {:>14}", ph.name, ph.rounds, ph.bytes_sent);
    }
    for (p, t) in transcripts.iter().enumerate() {
        println!(
            "party {p}: {} rounds, {} bytes sent, {} bytes received",
            t.rounds_used,
            t.total_sent(),
            t.total_received()
        );
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel {
            input_dim,
            hidden,
            classes,
            blocks,
            seed,
            fraction_bits,
            out,
        } => {
            let model = PlaintextModel::random(Architecture::gin(input_dim, hidden, classes, blocks), seed, fraction_bits)?;
            model.save(&out)?;
            println!("wrote {} (version {:016x})", out.display(), model.version());
        }
        Command::GenGraph {
            nodes,
            features,
            edges,
            weighted,
            seed,
            out,
        } => {
            if nodes == 0 || features == 0 {
                bail!(cryptgnn::Error::Config("graph needs at least one node and one feature".into()));
            }
            let mut g = PlaintextGraph::random(nodes, features, edges, seed);
            if weighted {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4947);
                g.weights = Some((0..edges).map(|_| rng.gen_range(-2.0..2.0)).collect());
            }
            g.save(&out)?;
            println!("wrote {} ({nodes} nodes, {edges} edges)", out.display());
        }
        Command::SplitModel { model, protocol, out } => {
            protocol.check()?;
            let model = PlaintextModel::load(&model).with_context(|| format!("loading model {}", model.display()))?;
            fs::create_dir_all(&out)?;
            let shares = model.split(
                protocol.parties,
                protocol.fraction_bits,
                &derive_seed(&master_seed(protocol.seed), "model", 0),
            )?;
            for s in &shares {
                s.save(&share_path(&out, s.party))?;
            }
            println!("wrote {} model shares to {}", shares.len(), out.display());
        }
        Command::Offline {
            model,
            n_max,
            m_max,
            inferences,
            weighted,
            client_id,
            protocol,
            out,
        } => {
            protocol.check()?;
            let arch = load_architecture(&model)?;
            let mut request = OfflineRequest::new(
                &client_id,
                protocol.parties,
                n_max,
                m_max,
                derive_seed(&master_seed(protocol.seed), "dealer", 0),
            );
            request.fraction_bits = protocol.fraction_bits;
            request.weighted = weighted;
            request.inferences = inferences;
            let start = Instant::now();
            let (materials, transcripts) = prepare_offline(&arch, &request, protocol.backend)?;
            fs::create_dir_all(&out)?;
            for m in &materials {
                m.save(&offline_path(&out, m.party))?;
            }
            let m = &materials[0];
            println!(
                "prepared material for {inferences} inference(s) in {:.0} ms: {} AM pairs, {} truncations, {} exact truncations, {} comparisons, {} matrix triples",
                ms(start.elapsed()),
                m.am_pool.len(),
                m.truncation.capacity(),
                m.exact_truncation.capacity(),
                m.compare.capacity(),
                m.triples.len()
            );
            println!("pair generation: {} rounds", transcripts[0].rounds_used);
        }
        Command::Infer {
            graph,
            shares,
            offline,
            protocol,
            out,
        } => {
            protocol.check()?;
            let graph = load_graph(&graph)?;
            let parties = protocol.parties;
            let models = (0..parties)
                .map(|p| ModelShare::load(&share_path(&shares, p)))
                .collect::<cryptgnn::Result<Vec<_>>>()
                .with_context(|| format!("loading model shares from {}", shares.display()))?;
            let materials = (0..parties)
                .map(|p| OfflineMaterial::load(&offline_path(&offline, p)))
                .collect::<cryptgnn::Result<Vec<_>>>()
                .with_context(|| format!("loading offline material from {}", offline.display()))?;

            let t = Instant::now();
            let upload = assemble_upload(&graph, &models[0].architecture, &protocol.client())?;
            let client_ms = ms(t.elapsed());
            let t = Instant::now();
            let run = run_inference(protocol.backend, upload.bundles, models, materials)?;
            let online_ms = ms(t.elapsed());
            for m in &run.materials {
                m.save(&offline_path(&offline, m.party))?;
            }
            let t = Instant::now();
            let prediction = reconstruct_result(&run.shares, protocol.fraction_bits)?;
            let reconstruct_ms = ms(t.elapsed());

            print_prediction(&prediction);
            println!("wall time: client {client_ms:.1} ms, online {online_ms:.1} ms, reconstruct {reconstruct_ms:.1} ms");
            print_transcripts(&run.transcripts);
            if let Some(out) = out {
                emit(
                    Some(&out),
                    &json!({
                        "classes": prediction.classes,
                        "logits": prediction.logits.data,
                        "probabilities": prediction.probabilities.data,
                        "wall_ms": {"client": client_ms, "online": online_ms, "reconstruct": reconstruct_ms},
                        "transcripts": run.transcripts,
                    }),
                )?;
            }
        }
        Command::Verify {
            graph,
            model,
            tolerance,
            protocol,
            out,
        } => {
            protocol.check()?;
            let graph = load_graph(&graph)?;
            let model = PlaintextModel::load(&model).with_context(|| format!("loading model {}", model.display()))?;
            let secure = secure_inference(&graph, &model, &protocol.client(), protocol.backend)?;
            let plain = plaintext_reference(&graph, &model)?;
            let got = &secure.prediction.logits.data;
            let diff = got.iter().zip(&plain.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let mean = got.iter().zip(&plain.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / got.len().max(1) as f64;
            print_prediction(&secure.prediction);
            println!("max abs diff {diff:.3e}, mean abs diff {mean:.3e}");
            if let Some(out) = &out {
                emit(
                    Some(out),
                    &json!({
                        "secure": got,
                        "plaintext": plain.data,
                        "max_abs_diff": diff,
                        "mean_abs_diff": mean,
                        "transcripts": secure.run.transcripts,
                    }),
                )?;
            }
            if !(diff <= tolerance) {
                return Err(VerificationFailed { diff, tolerance }.into());
            }
        }
        Command::Bench {
            nodes,
            features,
            degree,
            party_counts,
            batch_counts,
            backend,
            seed,
            out,
        } => {
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(io::stdout()),
            };
            let mut csv = csv::Writer::from_writer(sink);
            csv.write_record([
                "nodes",
                "features",
                "edges",
                "parties",
                "batches",
                "wall_ms_client",
                "wall_ms_online",
                "rounds",
                "bytes_per_party",
                "table3_bytes",
            ])?;
            let mut run_index = 0u64;
            for &n in &nodes {
                for &k in &features {
                    for &d in &degree {
                        for &p in &party_counts {
                            for &r in &batch_counts {
                                let row = bench_mpl(n, k, n * d, p, r, backend, derive_seed(&master_seed(seed), "bench", run_index))?;
                                csv.write_record(row.iter().map(|v| v.to_string()))?;
                                csv.flush()?;
                                run_index += 1;
                            }
                        }
                    }
                }
            }
        }
        Command::Report { offline, out } => {
            let mut parties = Vec::new();
            for p in 0.. {
                let path = offline_path(&offline, p);
                if !path.exists() {
                    break;
                }
                let m = OfflineMaterial::load(&path)?;
                let mut pair_ranges = 0;
                let mut stream_ranges = 0;
                for e in &m.client.audit {
                    match e {
                        AuditEntry::AmPairs { .. } => pair_ranges += 1,
                        AuditEntry::Stream { .. } => stream_ranges += 1,
                        _ => {}
                    }
                }
                parties.push(json!({
                    "party": m.party,
                    "client_id": m.client_id,
                    "inferences": m.client.inferences,
                    "am_pairs": {"total": m.am_pool.len(), "remaining": m.am_pool.remaining()},
                    "truncation": {"total": m.truncation.capacity(), "remaining": m.truncation.remaining()},
                    "exact_truncation": {"total": m.exact_truncation.capacity(), "remaining": m.exact_truncation.remaining()},
                    "compare": {"total": m.compare.capacity(), "remaining": m.compare.remaining()},
                    "cached_v_layers": m.client.v_cache.keys().collect::<Vec<_>>(),
                    "derived_triples": m.client.derived_ids.len(),
                    "audit": {"am_pair_ranges": pair_ranges, "stream_ranges": stream_ranges, "entries": m.client.audit},
                }));
            }
            if parties.is_empty() {
                bail!(cryptgnn::Error::Config(format!("no offline material in {}", offline.display())));
            }
            emit(out.as_deref(), &json!({ "parties": parties }))?;
        }
        Command::Upload {
            graph,
            model,
            protocol,
            out,
        } => {
            protocol.check()?;
            let graph = load_graph(&graph)?;
            let arch = load_architecture(&model)?;
            let upload = assemble_upload(&graph, &arch, &protocol.client())?;
            fs::create_dir_all(&out)?;
            for b in &upload.bundles {
                b.save(&upload_path(&out, b.party))?;
            }
            println!(
                "wrote {} bundles to {} ({} nodes, {} edges after self-loops)",
                upload.bundles.len(),
                out.display(),
                upload.graph.nodes,
                upload.graph.edges()
            );
        }
        Command::Party {
            index,
            peers,
            upload,
            share,
            offline,
            out,
        } => {
            let upload = GraphUpload::load(&upload)?;
            let model = ModelShare::load(&share)?;
            let mut material = OfflineMaterial::load(&offline)?;
            let channel = TcpChannel::establish(&SocketConfig {
                peers,
                me: index,
                session_id: upload.session_id,
                connect_timeout: Duration::from_secs(30),
            })?;
            let mut session = Session::new(Box::new(channel), SessionConfig::new(upload.session_id));
            let result = run_gin(&mut session, &upload, &model, &mut material)
                .with_context(|| format!("party {index} aborted in phase {}", session.phase()))?;
            material.save(&offline)?;
            let mut f = io::BufWriter::new(fs::File::create(&out)?);
            write_matrix(&mut f, &result.logits)?;
            f.flush()?;
            let t = session.finish();
            println!("party {index}: {} rounds, {} bytes sent", t.rounds_used, t.total_sent());
        }
        Command::Reconstruct { results, fraction_bits } => {
            let shares = results
                .iter()
                .map(|p| -> Result<FieldMatrix> {
                    let mut f = io::BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?);
                    Ok(read_matrix(&mut f)?)
                })
                .collect::<Result<Vec<_>>>()?;
            print_prediction(&reconstruct_result(&shares, fraction_bits)?);
        }
    }
    Ok(())
}

/// One message-passing layer on a random graph with field-valued features.
fn bench_mpl(
    n: usize,
    k: usize,
    m: usize,
    parties: usize,
    batches: usize,
    backend: Backend,
    seed: Seed,
) -> Result<Vec<f64>> {
    if n == 0 || k == 0 || parties < 2 || batches == 0 {
        bail!(cryptgnn::Error::Config("bench sizes must be positive and parties at least 2".into()));
    }
    let mut prf = SeededPrf::new(seed, 0);
    let a = FieldMatrix::random(n, k, &mut prf);
    let src: Vec<usize> = (0..m).map(|_| prf.index(n)).collect();
    let dst: Vec<usize> = (0..m).map(|_| prf.index(n)).collect();

    let t = Instant::now();
    let plan = BatchPlan::new(n, &src, &dst, batches)?;
    let edges = plan.share(parties, &mut prf)?;
    let seeds: Vec<Seed> = (0..parties).map(|p| derive_seed(&seed, "party", p as u64)).collect();
    let noise = precompute_noise(&plan, &edges, &seeds, &[k], None, &derive_seed(&seed, "reshare", 0))?;
    let a_shares: Vec<FieldMatrix> = split_additive(&a, parties, &mut prf)?
        .into_iter()
        .map(ShareMatrix::into_matrix)
        .collect();
    let client_ms = ms(t.elapsed());

    let inputs: Vec<_> = (0..parties)
        .map(|p| (a_shares[p].clone(), edges[p].clone(), noise.shares[p][0].clone(), NoiseSource::new(seeds[p])))
        .collect();
    let config = SessionConfig::new(seed[..16].try_into().unwrap());
    let t = Instant::now();
    let out = run_parties(backend, &config, inputs, |s, (a, e, xi, src)| batch_crypt_mpl(s, &a, &e, &xi, 0, &src))?;
    let online_ms = ms(t.elapsed());
    let rounds = out[0].transcript.rounds_used;
    let bytes = out.iter().map(|o| o.transcript.total_sent()).max().unwrap_or(0);
    let formula_bytes = (n * k * plan.batches() + m) * parties * 8;
    Ok(vec![
        n as f64,
        k as f64,
        m as f64,
        parties as f64,
        plan.batches() as f64,
        (client_ms * 1e3).round() / 1e3,
        (online_ms * 1e3).round() / 1e3,
        rounds as f64,
        bytes as f64,
        formula_bytes as f64,
    ])
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 4;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cryptgnn::Error>() {
            return if e.is_protocol_abort() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CRYPTGNN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
