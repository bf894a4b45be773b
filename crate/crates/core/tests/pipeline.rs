use cryptgnn::client::{assemble_upload, plaintext_reference, ClientConfig, PlaintextGraph};
use cryptgnn::engine::{prepare_offline, run_inference, secure_inference, OfflineRequest};
use cryptgnn::layers::{Architecture, BlockSpec, LayerParams, LayerSpec, PlaintextModel, Readout};
use cryptgnn::provider::AuditEntry;
use cryptgnn::sim::Backend;
use cryptgnn::Error;

fn seed(b: u8) -> [u8; 32] {
    [b; 32]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn single_node_without_edges_matches_affine_chain() {
    let arch = Architecture {
        input_dim: 2,
        self_loops: false,
        blocks: vec![BlockSpec {
            message_passing: false,
            layers: vec![LayerSpec::Linear { input: 2, output: 2 }],
        }],
        concat: false,
        readout: Readout::None,
        head: vec![LayerSpec::Linear { input: 2, output: 2 }],
    };
    let model = PlaintextModel {
        architecture: arch,
        parameters: vec![
            LayerParams::Linear {
                weight: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                bias: vec![0.5, -0.25],
            },
            LayerParams::Linear {
                weight: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
                bias: vec![0.0, 1.0],
            },
        ],
    };
    let g = PlaintextGraph::new(1, 2, vec![0.75, -1.5], vec![], vec![], None).unwrap();
    let out = secure_inference(&g, &model, &ClientConfig::new(3, seed(1)), Backend::Loopback).unwrap();
    let expected = plaintext_reference(&g, &model).unwrap();
    assert_eq!(expected.data, vec![2.5, -0.75]);
    assert!(max_abs_diff(&out.prediction.logits.data, &expected.data) < 1e-3);
}

#[test]
fn toy_graph_through_two_block_gin() {
    let g = PlaintextGraph::parse("4 2 1\n1 2\n3 4\n5 6\n7 8\n0 1\n").unwrap();
    let model = PlaintextModel::random(Architecture::gin(2, 4, 3, 2), 7, 16).unwrap();
    let out = secure_inference(&g, &model, &ClientConfig::new(3, seed(2)), Backend::Loopback).unwrap();
    let expected = plaintext_reference(&g, &model).unwrap();
    assert_eq!(out.prediction.logits.rows, 1);
    assert!(max_abs_diff(&out.prediction.logits.data, &expected.data) < 1e-3);
    let plain_class = cryptgnn::client::argmax(&expected.data);
    assert_eq!(out.prediction.classes, vec![plain_class]);
}

#[test]
fn random_graphs_match_reference() {
    for (i, parties) in [2usize, 3, 5].into_iter().enumerate() {
        let g = PlaintextGraph::random(40 + 10 * i, 3, 120, i as u64);
        let model = PlaintextModel::random(Architecture::gin(3, 8, 2, 3), 100 + i as u64, 16).unwrap();
        let mut cfg = ClientConfig::new(parties, seed(10 + i as u8));
        cfg.batches = 5;
        let out = secure_inference(&g, &model, &cfg, Backend::Loopback).unwrap();
        let expected = plaintext_reference(&g, &model).unwrap();
        let err = max_abs_diff(&out.prediction.logits.data, &expected.data);
        assert!(err < 2e-3, "P={parties}: {err}");
    }
}

#[test]
fn weighted_graph_and_sigmoid_head() {
    let mut arch = Architecture::gin(2, 4, 2, 1);
    arch.head.push(LayerSpec::Sigmoid);
    let model = PlaintextModel::random(arch, 3, 16).unwrap();
    let mut g = PlaintextGraph::random(12, 2, 20, 9);
    g.weights = Some((0..20).map(|e| [0.5, 1.0, -0.25, 2.0][e % 4]).collect());
    let out = secure_inference(&g, &model, &ClientConfig::new(2, seed(3)), Backend::Loopback).unwrap();
    let expected = plaintext_reference(&g, &model).unwrap();
    let err = max_abs_diff(&out.prediction.logits.data, &expected.data);
    assert!(err < 1.2e-2, "{err}");
}

#[test]
fn repeated_requests_reuse_v_and_audit_pools() {
    let arch = Architecture::gin(2, 4, 2, 1);
    let model = PlaintextModel::random(arch.clone(), 5, 16).unwrap();
    let shares = model.split(2, 16, &seed(4)).unwrap();
    let g = PlaintextGraph::random(8, 2, 10, 1);
    let mut request = OfflineRequest::new("c", 2, 8, 10 + 8, seed(5));
    request.inferences = 3;
    let (mut materials, _) = prepare_offline(&arch, &request, Backend::Loopback).unwrap();
    for r in 0..3u8 {
        let upload = assemble_upload(&g, &arch, &ClientConfig::new(2, seed(20 + r))).unwrap();
        let run = run_inference(Backend::Loopback, upload.bundles, shares.clone(), materials).unwrap();
        materials = run.materials;
    }
    let audit = &materials[0].client.audit;
    let cached: Vec<bool> = audit
        .iter()
        .filter_map(|e| match e {
            AuditEntry::OpenedV { layer: 0, cached, .. } => Some(*cached),
            _ => None,
        })
        .collect();
    assert_eq!(cached, vec![false, true, true]);
    let mut next = 0;
    for e in audit {
        if let AuditEntry::AmPairs { start, count, .. } = e {
            assert_eq!(*start, next);
            next += count;
        }
    }
    assert!(next > 0);

    // A fourth request finds the pools empty.
    let upload = assemble_upload(&g, &arch, &ClientConfig::new(2, seed(30))).unwrap();
    let err = run_inference(Backend::Loopback, upload.bundles, shares, materials).err().expect("pools exhausted");
    assert!(matches!(err, Error::PoolExhausted { .. }), "{err}");
}

#[test]
fn replaying_a_request_is_refused() {
    let arch = Architecture::gin(2, 4, 2, 1);
    let model = PlaintextModel::random(arch.clone(), 5, 16).unwrap();
    let shares = model.split(2, 16, &seed(4)).unwrap();
    let g = PlaintextGraph::random(8, 2, 10, 1);
    let mut request = OfflineRequest::new("c", 2, 16, 18, seed(5));
    request.inferences = 2;
    let (materials, _) = prepare_offline(&arch, &request, Backend::Loopback).unwrap();
    let upload = assemble_upload(&g, &arch, &ClientConfig::new(2, seed(20))).unwrap();
    let run = run_inference(Backend::Loopback, upload.bundles.clone(), shares.clone(), materials).unwrap();
    let err = run_inference(Backend::Loopback, upload.bundles, shares, run.materials).err().expect("replay refused");
    assert!(matches!(err, Error::Reuse(_)), "{err}");
}

#[test]
fn same_seed_gives_identical_transcripts() {
    let g = PlaintextGraph::random(10, 2, 15, 2);
    let model = PlaintextModel::random(Architecture::gin(2, 4, 2, 2), 8, 16).unwrap();
    let cfg = ClientConfig::new(3, seed(6));
    let a = secure_inference(&g, &model, &cfg, Backend::Loopback).unwrap();
    let b = secure_inference(&g, &model, &cfg, Backend::Socket).unwrap();
    assert_eq!(a.prediction, b.prediction);
    for (x, y) in a.run.transcripts.iter().zip(&b.run.transcripts) {
        assert!(x.digest.is_some());
        assert_eq!(x.digest, y.digest);
        assert_eq!(x.bytes_sent, y.bytes_sent);
    }
}

#[test]
fn phase_bytes_reconcile_with_totals() {
    let g = PlaintextGraph::random(10, 2, 15, 2);
    let model = PlaintextModel::random(Architecture::gin(2, 4, 2, 3), 8, 16).unwrap();
    let out = secure_inference(&g, &model, &ClientConfig::new(3, seed(7)), Backend::Loopback).unwrap();
    for t in &out.run.transcripts {
        let phases: u64 = t.phases.iter().map(|p| p.bytes_sent).sum();
        assert_eq!(phases, t.total_sent());
        let rounds: u64 = t.phases.iter().map(|p| p.rounds).sum();
        assert_eq!(rounds, t.rounds_used);
        for i in 0..3 {
            assert_eq!(t.phase(&format!("mpl/{i}")).unwrap().rounds, 4);
        }
    }
}

#[test]
fn oversized_graph_is_rejected() {
    let arch = Architecture::gin(2, 4, 2, 1);
    let model = PlaintextModel::random(arch.clone(), 5, 16).unwrap();
    let shares = model.split(2, 16, &seed(4)).unwrap();
    let request = OfflineRequest::new("c", 2, 4, 8, seed(5));
    let (materials, _) = prepare_offline(&arch, &request, Backend::Loopback).unwrap();
    let upload = assemble_upload(&PlaintextGraph::random(8, 2, 3, 1), &arch, &ClientConfig::new(2, seed(1))).unwrap();
    let err = run_inference(Backend::Loopback, upload.bundles, shares, materials).err().expect("oversized");
    assert!(matches!(err, Error::OversizeRequest { .. }), "{err}");
}
