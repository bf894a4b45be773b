#![allow(dead_code)]

use cryptgnn::field::{reconstruct_additive, split_additive, FieldMatrix, FixedPointCodec, ShareMatrix};
use cryptgnn::prf::SeededPrf;
use cryptgnn::sim::{run_parties, session_id, Backend, PartyOutcome};
use cryptgnn::transport::{Session, SessionConfig};
use cryptgnn::Result;

pub fn codec() -> FixedPointCodec {
    FixedPointCodec::default()
}

pub fn config(label: &str) -> SessionConfig {
    SessionConfig::new(session_id(label))
}

/// Runs one closure per party on the loopback backend.
pub fn run<I: Send, T: Send>(
    label: &str,
    inputs: Vec<I>,
    f: impl Fn(&mut Session, I) -> Result<T> + Sync,
) -> Vec<PartyOutcome<T>> {
    run_parties(Backend::Loopback, &config(label), inputs, f).expect("protocol run")
}

pub fn share(m: &FieldMatrix, parties: usize, seed: u8) -> Vec<FieldMatrix> {
    let mut prf = SeededPrf::new([seed; 32], 99);
    split_additive(m, parties, &mut prf)
        .unwrap()
        .into_iter()
        .map(ShareMatrix::into_matrix)
        .collect()
}

pub fn open(shares: &[FieldMatrix]) -> FieldMatrix {
    let s: Vec<ShareMatrix> = shares
        .iter()
        .enumerate()
        .map(|(p, m)| ShareMatrix::new(p, m.clone()))
        .collect();
    reconstruct_additive(&s).unwrap()
}

pub fn open_outcomes(out: &[PartyOutcome<FieldMatrix>]) -> FieldMatrix {
    open(&out.iter().map(|o| o.value.clone()).collect::<Vec<_>>())
}

pub fn encode_matrix(rows: usize, cols: usize, values: &[f64]) -> FieldMatrix {
    FieldMatrix::from_vec(rows, cols, codec().encode_all(values).unwrap()).unwrap()
}

pub fn decode_matrix(m: &FieldMatrix) -> Vec<f64> {
    codec().decode_all(m.as_slice())
}

/// Zips per-party inputs into one vector of tuples.
pub fn zip2<A, B>(a: Vec<A>, b: Vec<B>) -> Vec<(A, B)> {
    a.into_iter().zip(b).collect()
}
