mod common;

use common::*;
use cryptgnn::field::{FieldElement, FieldMatrix, MulShare, MODULUS};
use cryptgnn::mul::fixed::{compare_ge_zero, relu, truncate, truncate_exact};
use cryptgnn::mul::{
    beaver_m, beaver_m_to_a, beaver_mul_scalars, elem_mul, m_to_a, mat_mul, rand_comb, rand_comb_with,
    TripleBuffer,
};
use cryptgnn::prf::SeededPrf;
use cryptgnn::provider::{msas_pair_batch, AMPair, Dealer, StreamKind};
use cryptgnn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn dealer(parties: usize, seed: u8) -> Dealer {
    Dealer::new([seed; 32], parties, 16).unwrap()
}

#[test]
fn scalar_beaver_textbook_example() {
    // X=3, Y=4 with triple A=1, B=2, C=2: U=2, V=2, Z = 4+2+2+4 = 12.
    let x = FieldMatrix::from_u64(1, 1, &[3]).unwrap();
    let y = FieldMatrix::from_u64(1, 1, &[4]).unwrap();
    let mut d = dealer(2, 1);
    let t = d
        .matrix_triple_from(
            &FieldMatrix::from_u64(1, 1, &[1]).unwrap(),
            &FieldMatrix::from_u64(1, 1, &[2]).unwrap(),
        )
        .unwrap();
    let inputs = zip2(zip2(share(&x, 2, 1), share(&y, 2, 2)), t);
    let out = run("scalar-beaver", inputs, |s, ((x, y), t)| {
        let derived = rand_comb_with(&t, &FieldMatrix::identity(1))?;
        let r = mat_mul(s, &x, &y, &derived, None)?;
        assert_eq!(r.u.get(0, 0).value(), 2);
        assert_eq!(r.v.get(0, 0).value(), 2);
        Ok(r.z)
    });
    assert_eq!(open_outcomes(&out).get(0, 0).value(), 12);
    assert!(out.iter().all(|o| o.transcript.rounds_used == 1));
}

#[test]
fn rand_comb_identity_selects_rows() {
    let mut d = dealer(3, 2);
    let t = d.matrix_triple(6, 2, 3).unwrap();
    let mut sel = FieldMatrix::zeros(4, 6);
    for i in 0..4 {
        sel.set(i, i, FieldElement::ONE);
    }
    for party in &t {
        let derived = rand_comb_with(party, &sel).unwrap();
        assert_eq!(derived.a, party.a.matrix().slice_rows(0, 4));
        assert_eq!(derived.c, party.c.matrix().slice_rows(0, 4));
    }
}

#[test]
fn rand_comb_rejects_oversize_and_differs_per_nonce() {
    let mut d = dealer(2, 3);
    let t = d.matrix_triple(5, 2, 2).unwrap();
    assert!(matches!(rand_comb(&t[0], 6, &[0; 32], 0), Err(Error::OversizeRequest { .. })));
    let a = rand_comb(&t[0], 3, &[1; 32], 0).unwrap();
    let b = rand_comb(&t[0], 3, &[2; 32], 0).unwrap();
    assert_ne!(a.a, b.a);
    assert_ne!(a.id, b.id);
}

#[test]
fn identity_matmul_after_truncation() {
    let codec = codec();
    let x = encode_matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let y = encode_matrix(2, 3, &[0.5, -1.25, 3.0, 7.75, 0.0, -2.5]);
    let mut d = dealer(3, 4);
    let t = d.matrix_triple(4, 2, 3).unwrap();
    let trunc = d.stream(StreamKind::Truncation, 6).unwrap();
    let inputs = zip2(zip2(share(&x, 3, 5), share(&y, 3, 6)), zip2(t, trunc));
    let out = run("identity-matmul", inputs, |s, ((x, y), (t, mut tr))| {
        let derived = rand_comb(&t, 2, &[9; 32], 0)?;
        let z = mat_mul(s, &x, &y, &derived, None)?.z;
        truncate(s, &z, &mut tr, 16)
    });
    let got = decode_matrix(&open_outcomes(&out));
    for (g, want) in got.iter().zip([0.5, -1.25, 3.0, 7.75, 0.0, -2.5]) {
        assert!((g - want).abs() <= 1.0 / codec.scale(), "{g} vs {want}");
    }
}

#[test]
fn random_matmul_matches_real_product() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let (n, k, k2) = (50, 3, 16);
    let xs: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let ys: Vec<f64> = (0..k * k2).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = encode_matrix(n, k, &xs);
    let y = encode_matrix(k, k2, &ys);
    let mut d = dealer(2, 7);
    let t = d.matrix_triple(64, k, k2).unwrap();
    let trunc = d.stream(StreamKind::Truncation, n * k2).unwrap();
    let inputs = zip2(zip2(share(&x, 2, 8), share(&y, 2, 9)), zip2(t, trunc));
    let out = run("random-matmul", inputs, |s, ((x, y), (t, mut tr))| {
        let derived = rand_comb(&t, 50, &[3; 32], 2)?;
        let z = mat_mul(s, &x, &y, &derived, None)?.z;
        truncate(s, &z, &mut tr, 16)
    });
    let got = decode_matrix(&open_outcomes(&out));
    // Oracle on the encoded (rounded) operands in f64.
    let xr = decode_matrix(&x);
    let yr = decode_matrix(&y);
    for i in 0..n {
        for j in 0..k2 {
            let want: f64 = (0..k).map(|t| xr[i * k + t] * yr[t * k2 + j]).sum();
            assert!((got[i * k2 + j] - want).abs() <= 4.0 / 65536.0);
        }
    }
}

#[test]
fn cached_v_costs_one_round_and_matches() {
    let x = encode_matrix(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = encode_matrix(2, 2, &[1.0, 0.5, -1.0, 2.0]);
    let mut d = dealer(2, 12);
    let t = d.matrix_triple(8, 2, 2).unwrap();
    let inputs = zip2(zip2(share(&x, 2, 1), share(&y, 2, 2)), t);
    let out = run("cached-v", inputs, |s, ((x, y), t)| {
        let first = mat_mul(s, &x, &y, &rand_comb(&t, 3, &[1; 32], 0)?, None)?;
        let before = s.rounds();
        let second = mat_mul(s, &x, &y, &rand_comb(&t, 3, &[2; 32], 0)?, Some(&first.v))?;
        assert_eq!(s.rounds() - before, 1);
        assert_ne!(first.u, second.u);
        Ok(first.z.sub(&second.z)?)
    });
    // Both products reconstruct to the same field value.
    assert_eq!(open_outcomes(&out), FieldMatrix::zeros(3, 2));
}

fn am_pool_run(parties: usize, count: usize, seed: u8) -> Vec<cryptgnn::provider::AMPool> {
    let mut d = dealer(parties, seed);
    let material = d.am_links(count).unwrap();
    run("am-pool", material, |s, m| msas_pair_batch(s, &m))
        .into_iter()
        .map(|o| o.value)
        .collect()
}

fn check_pool(pools: &[cryptgnn::provider::AMPool]) {
    for i in 0..pools[0].len() {
        let add: FieldElement = pools.iter().map(|p| p.pair(i).unwrap().additive).sum();
        let mul: FieldElement = pools.iter().map(|p| p.pair(i).unwrap().multiplicative.value()).product();
        assert_eq!(add, mul);
        assert!(!add.is_zero());
    }
}

#[test]
fn am_pairs_from_explicit_links() {
    let mut d = dealer(2, 13);
    let three = FieldElement::new(3);
    let four = FieldElement::new(4);
    let material = d.am_links_from(&[vec![(three, four)]]).unwrap();
    let pools: Vec<_> = run("am-p2", material, |s, m| msas_pair_batch(s, &m))
        .into_iter()
        .map(|o| o.value)
        .collect();
    let add: FieldElement = pools.iter().map(|p| p.pair(0).unwrap().additive).sum();
    let mul: FieldElement = pools.iter().map(|p| p.pair(0).unwrap().multiplicative.value()).product();
    assert_eq!(add.value(), 7);
    assert_eq!(mul.value(), 7);
}

#[test]
fn am_pairs_three_parties_multiply_links() {
    let mut d = dealer(3, 14);
    let links = vec![
        vec![(FieldElement::new(1), FieldElement::new(2))],
        vec![(FieldElement::new(5), FieldElement::new(6))],
    ];
    let material = d.am_links_from(&links).unwrap();
    let out = run("am-p3", material, |s, m| msas_pair_batch(s, &m));
    let add: FieldElement = out.iter().map(|o| o.value.pair(0).unwrap().additive).sum();
    assert_eq!(add.value(), 3 * 11);
    // One fold multiplication, one round.
    assert!(out.iter().all(|o| o.transcript.rounds_used == 1));
}

#[test]
fn am_pool_pairs_are_consistent() {
    for parties in [2, 3, 5] {
        check_pool(&am_pool_run(parties, 6, 20 + parties as u8));
    }
}

#[test]
fn m_to_a_is_exact_including_boundaries() {
    let parties = 3;
    let count = 10_000;
    let pools = am_pool_run(parties, count, 31);
    let mut prf = SeededPrf::new([5; 32], 0);
    let mut secrets: Vec<FieldElement> = (0..count - 3).map(|_| prf.nonzero_element()).collect();
    secrets.extend([FieldElement::ONE, FieldElement::new(MODULUS - 1), FieldElement::new(2)]);
    let shares: Vec<Vec<MulShare>> = secrets
        .iter()
        .map(|&w| cryptgnn::field::split_multiplicative(w, parties, &mut prf).unwrap())
        .collect();
    let per_party: Vec<(Vec<MulShare>, cryptgnn::provider::AMPool)> = pools
        .into_iter()
        .enumerate()
        .map(|(p, pool)| (shares.iter().map(|s| s[p]).collect(), pool))
        .collect();
    let out = run("m-to-a", per_party, |s, (w, mut pool)| {
        let (_, pairs) = pool.take(w.len())?;
        m_to_a(s, &w, &pairs)
    });
    for (i, &w) in secrets.iter().enumerate() {
        let sum: FieldElement = out.iter().map(|o| o.value[i]).sum();
        assert_eq!(sum, w);
    }
    assert!(out.iter().all(|o| o.transcript.rounds_used == 1));
}

#[test]
fn m_to_a_with_w_equal_r_gives_the_pair() {
    let pools = am_pool_run(2, 1, 41);
    let inputs: Vec<(MulShare, AMPair)> = pools
        .iter()
        .map(|p| {
            let pair = p.pair(0).unwrap();
            (pair.multiplicative, pair)
        })
        .collect();
    let out = run("w-eq-r", inputs, |s, (w, pair)| Ok(m_to_a(s, &[w], &[pair])?[0]));
    for (o, pool) in out.iter().zip(&pools) {
        assert_eq!(o.value, pool.pair(0).unwrap().additive);
    }
}

#[test]
fn beaver_m_to_a_example_and_cursor() {
    let pools = am_pool_run(2, 6, 42);
    let a = [2u64, 3];
    let b = [5u64, 7];
    let inputs: Vec<_> = pools
        .into_iter()
        .enumerate()
        .map(|(p, pool)| {
            let a = MulShare::new(FieldElement::new(a[p])).unwrap();
            let b = MulShare::new(FieldElement::new(b[p])).unwrap();
            let one = MulShare::new(FieldElement::ONE).unwrap();
            (
                vec![
                    cryptgnn::mul::MulBeaverTriple { a, b, c: a * b },
                    cryptgnn::mul::MulBeaverTriple { a: one, b: one, c: one },
                ],
                pool,
            )
        })
        .collect();
    let out = run("beaver-m-to-a", inputs, |s, (t, mut pool)| {
        let (start, triples) = beaver_m_to_a(s, &t, &mut pool)?;
        assert_eq!(start, 0);
        assert_eq!(pool.cursor(), 6);
        Ok(triples)
    });
    let sum = |i: usize, f: fn(&cryptgnn::provider::ScalarBeaverTriple) -> FieldElement| -> u64 {
        out.iter().map(|o| f(&o.value[i])).sum::<FieldElement>().value()
    };
    assert_eq!((sum(0, |t| t.a), sum(0, |t| t.b), sum(0, |t| t.c)), (6, 35, 210));
    assert_eq!((sum(1, |t| t.a), sum(1, |t| t.b), sum(1, |t| t.c)), (1, 1, 1));
    assert!(out.iter().all(|o| o.transcript.rounds_used == 1));
}

#[test]
fn pool_exhaustion_is_reported() {
    let pools = am_pool_run(2, 2, 43);
    let result = cryptgnn::sim::run_parties(
        cryptgnn::sim::Backend::Loopback,
        &config("exhaust"),
        pools,
        |s, mut pool| {
            let mut prf = SeededPrf::new([1; 32], s.me() as u64);
            TripleBuffer::prepare(s, &mut prf, &mut pool, 1)
        },
    );
    assert!(matches!(result, Err(Error::PoolExhausted { .. })));
}

fn elem_mul_run(x: &FieldMatrix, y: &FieldMatrix, label: &str) -> (FieldMatrix, u64) {
    let n = x.len();
    let pools = am_pool_run(3, 3 * n, 44);
    let mut d = dealer(3, 45);
    let trunc = d.stream(StreamKind::Truncation, n).unwrap();
    let inputs = zip2(zip2(share(x, 3, 1), share(y, 3, 2)), zip2(pools, trunc));
    let out = run(label, inputs, |s, ((x, y), (mut pool, mut tr))| {
        let mut prf = SeededPrf::new([7; 32], s.me() as u64);
        let mut buf = TripleBuffer::prepare(s, &mut prf, &mut pool, x.len())?;
        let before = s.rounds();
        let z = elem_mul(s, &x, &y, &mut buf)?;
        assert_eq!(s.rounds() - before, 1);
        truncate(s, &z, &mut tr, 16)
    });
    (open_outcomes(&out), out[0].transcript.rounds_used)
}

#[test]
fn elem_mul_by_one_and_by_zero() {
    let x = encode_matrix(2, 3, &[1.5, -2.25, 0.0, 100.0, -0.001, 3.0]);
    let ones = encode_matrix(2, 3, &[1.0; 6]);
    let (z, rounds) = elem_mul_run(&x, &ones, "elem-one");
    assert_eq!(z, x);
    assert_eq!(rounds, 3);
    let zeros = FieldMatrix::zeros(2, 3);
    let (z, _) = elem_mul_run(&zeros, &x, "elem-zero");
    assert_eq!(z, zeros);
}

#[test]
fn elem_mul_random_vectors() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let ys: Vec<f64> = (0..64).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let x = encode_matrix(8, 8, &xs);
    let y = encode_matrix(8, 8, &ys);
    let (z, _) = elem_mul_run(&x, &y, "elem-random");
    let got = decode_matrix(&z);
    let (xr, yr) = (decode_matrix(&x), decode_matrix(&y));
    for i in 0..64 {
        assert!((got[i] - xr[i] * yr[i]).abs() <= 2.0 / 65536.0);
    }
}

#[test]
fn truncation_of_product() {
    let c = codec();
    let prod = c.encode(1.5).unwrap() * c.encode(2.0).unwrap();
    let x = FieldMatrix::from_vec(1, 1, vec![prod]).unwrap();
    let mut d = dealer(2, 50);
    let trunc = d.stream(StreamKind::Truncation, 1).unwrap();
    let out = run("trunc", zip2(share(&x, 2, 3), trunc), |s, (x, mut tr)| truncate(s, &x, &mut tr, 16));
    let got = open_outcomes(&out).get(0, 0);
    assert!((got.to_i64() - c.encode(3.0).unwrap().to_i64()).abs() <= 1);
}

#[test]
fn exact_truncation_is_floor() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<i64> = (0..200).map(|_| rng.gen_range(-(1i64 << 46)..(1i64 << 46))).collect();
    let x = FieldMatrix::from_vec(1, raw.len(), raw.iter().map(|&v| FieldElement::from_i64(v)).collect()).unwrap();
    let mut d = dealer(3, 51);
    let trunc = d.stream(StreamKind::ExactTruncation, raw.len()).unwrap();
    let out = run("exact-trunc", zip2(share(&x, 3, 4), trunc), |s, (x, mut tr)| {
        truncate_exact(s, &x, &mut tr, 16)
    });
    let got = open_outcomes(&out);
    for (g, &v) in got.as_slice().iter().zip(&raw) {
        assert_eq!(g.to_i64(), v.div_euclid(1 << 16));
    }
    // Open plus four suffix-OR levels.
    assert_eq!(out[0].transcript.rounds_used, 5);
}

#[test]
fn sign_test_and_relu_are_exact() {
    let c = codec();
    let mut values = vec![-1.0, 2.5, 0.0, -0.0000152587890625, 0.0000152587890625, -32767.0, 32767.0];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    values.extend((0..57).map(|_| rng.gen_range(-1000.0..1000.0)));
    let n = values.len();
    let x = encode_matrix(1, n, &values);
    let pools = am_pool_run(2, 3 * n, 52);
    let mut d = dealer(2, 53);
    let cmp = d.stream(StreamKind::Compare, 2 * n).unwrap();
    let inputs = zip2(share(&x, 2, 5), zip2(pools, cmp));
    let out = run("relu", inputs, |s, (x, (mut pool, mut cmp))| {
        let mut prf = SeededPrf::new([8; 32], s.me() as u64);
        let bits = compare_ge_zero(s, &x, &mut cmp)?;
        let mut buf = TripleBuffer::prepare(s, &mut prf, &mut pool, x.len())?;
        let y = relu(s, &x, &mut cmp, &mut buf)?;
        Ok((bits, y))
    });
    let bits = open(&out.iter().map(|o| o.value.0.clone()).collect::<Vec<_>>());
    let y = open(&out.iter().map(|o| o.value.1.clone()).collect::<Vec<_>>());
    for i in 0..n {
        let enc = x.get(0, i);
        assert_eq!(bits.get(0, i).value(), (enc.to_i64() >= 0) as u64, "value {}", values[i]);
        assert_eq!(y.get(0, i).to_i64(), enc.to_i64().max(0));
    }
    assert_eq!(c.decode(y.get(0, 0)), 0.0);
    assert_eq!(c.decode(y.get(0, 1)), 2.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn beaver_scalar_products(seed in any::<u64>()) {
        let mut prf = SeededPrf::new([seed as u8; 32], seed);
        let x: Vec<FieldElement> = prf.elements(20);
        let y: Vec<FieldElement> = prf.elements(20);
        let xm = FieldMatrix::from_vec(1, 20, x.clone()).unwrap();
        let ym = FieldMatrix::from_vec(1, 20, y.clone()).unwrap();
        let mut d = dealer(3, seed as u8);
        let triples = d.scalar_triples(20).unwrap();
        let inputs = zip2(zip2(share(&xm, 3, 1), share(&ym, 3, 2)), triples);
        let out = run("scalar-batch", inputs, |s, ((x, y), t)| {
            beaver_mul_scalars(s, x.as_slice(), y.as_slice(), &t)
        });
        for i in 0..20 {
            let z: FieldElement = out.iter().map(|o| o.value[i]).sum();
            prop_assert_eq!(z, x[i] * y[i]);
        }
    }
}

#[test]
fn beaver_m_triples_convert_to_valid_additive_triples() {
    let pools = am_pool_run(3, 30, 60);
    let out = run("beaver-m-bulk", pools, |s, mut pool| {
        let mut prf = SeededPrf::new([1; 32], s.me() as u64);
        let mult = beaver_m(&mut prf, 10);
        Ok(beaver_m_to_a(s, &mult, &mut pool)?.1)
    });
    for i in 0..10 {
        let a: FieldElement = out.iter().map(|o| o.value[i].a).sum();
        let b: FieldElement = out.iter().map(|o| o.value[i].b).sum();
        let c: FieldElement = out.iter().map(|o| o.value[i].c).sum();
        assert_eq!(a * b, c);
    }
}
