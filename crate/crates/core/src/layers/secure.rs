use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldMatrix, FixedPointCodec};
use crate::mul::fixed::{relu, truncate};
use crate::mul::{elem_mul, mat_mul, rand_comb, TripleBuffer};
use crate::prf::Seed;
use crate::provider::{AuditEntry, OfflineMaterial};
use crate::serial::write_matrix;
use crate::transport::{hex_string, Session};

/// Odd coefficients (`x^1, x^3, ..., x^9`) of the sigmoid approximation
/// `0.5 + Σ c_k x^k` on `[-8, 8]`; maximum error about 8.8e-3.
pub const SIGMOID_COEFFS: [f64; 5] = [
    2.34143321e-01,
    -1.20256034e-02,
    3.93538811e-04,
    -6.17061208e-06,
    3.60430994e-08,
];

/// Inputs are clamped to `[-SIGMOID_CLAMP, SIGMOID_CLAMP]` first.
pub const SIGMOID_CLAMP: f64 = 8.0;

/// Plain evaluation of the approximation, for tests and error bounds.
pub fn sigmoid_approx(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    0.5 + SIGMOID_COEFFS
        .iter()
        .enumerate()
        .map(|(i, c)| c * x.powi(2 * i as i32 + 1))
        .sum::<f64>()
}

/// Per-inference execution state of one party.
pub struct Runtime<'a> {
    pub session: &'a mut Session,
    pub material: &'a mut OfflineMaterial,
    pub buffer: TripleBuffer,
    /// Shared by all parties for this request; seeds row recombinations.
    pub nonce: Seed,
    pub model_version: u64,
    pub inference: u64,
    pub codec: FixedPointCodec,
}

impl Runtime<'_> {
    fn fraction_bits(&self) -> u32 {
        self.codec.fraction_bits()
    }

    fn lead(&self) -> bool {
        self.session.me() == 0
    }

    /// Probabilistic truncation by the fraction bits.
    pub fn truncate(&mut self, x: &FieldMatrix) -> Result<FieldMatrix> {
        let f = self.fraction_bits();
        truncate(self.session, x, &mut self.material.truncation, f)
    }

    /// Adds an encoded public constant to every entry (party 0 only).
    fn add_constant(&self, x: &mut FieldMatrix, value: f64) -> Result<()> {
        if self.lead() {
            let c = self.codec.encode(value)?;
            x.as_mut_slice().iter_mut().for_each(|v| *v += c);
        }
        Ok(())
    }

    /// `x · c` for a public real `c`, truncated.
    fn scale_public(&mut self, x: &FieldMatrix, value: f64) -> Result<FieldMatrix> {
        let c = self.codec.encode(value)?;
        self.truncate(&x.scale(c))
    }

    /// Entrywise product of two encoded matrices, truncated.
    fn mul_trunc(&mut self, x: &FieldMatrix, y: &FieldMatrix) -> Result<FieldMatrix> {
        let z = elem_mul(self.session, x, y, &mut self.buffer)?;
        self.truncate(&z)
    }
}

fn digest(m: &FieldMatrix) -> String {
    let mut buf = Vec::with_capacity(m.len() * 8 + 8);
    write_matrix(&mut buf, m).expect("writing to memory");
    hex_string(&Sha256::digest(&buf)[..16])
}

fn check_width(x: &FieldMatrix, expected: usize) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), expected),
            found: x.shape(),
        });
    }
    Ok(())
}

/// `X ⊗ H + bias` with a recombined matrix triple and the cached opening of
/// `H - B` when one exists for this model version.
pub fn linear_layer(
    rt: &mut Runtime,
    x: &FieldMatrix,
    layer: u32,
    weight: &FieldMatrix,
    bias: &FieldMatrix,
) -> Result<FieldMatrix> {
    check_width(x, weight.rows())?;
    let derived = rand_comb(rt.material.triple(layer)?, x.rows(), &rt.nonce, layer)?;
    rt.material.client.register_derived(derived.id)?;
    let inference = rt.inference;
    rt.material.client.audit.push(AuditEntry::DerivedTriple {
        inference,
        layer,
        id: hex_string(&derived.id),
    });
    let cached = match rt.material.client.v_cache.get(&layer) {
        Some((version, v)) if *version == rt.model_version => Some(v.clone()),
        _ => None,
    };
    let out = mat_mul(rt.session, x, weight, &derived, cached.as_ref())?;
    let client = &mut rt.material.client;
    client.audit.push(AuditEntry::OpenedU {
        inference,
        layer,
        digest: digest(&out.u),
    });
    client.audit.push(AuditEntry::OpenedV {
        inference,
        layer,
        digest: digest(&out.v),
        cached: out.v_was_cached,
    });
    if !out.v_was_cached {
        client.v_cache.insert(layer, (rt.model_version, out.v));
    }
    let mut z = rt.truncate(&out.z)?;
    z.add_row_broadcast(bias)?;
    Ok(z)
}

/// Folded batch norm `scale · x + shift`: one element-wise product.
pub fn batch_norm_layer(
    rt: &mut Runtime,
    x: &FieldMatrix,
    scale: &FieldMatrix,
    shift: &FieldMatrix,
) -> Result<FieldMatrix> {
    check_width(x, scale.cols())?;
    let wide = FieldMatrix::broadcast_row(scale, x.rows())?;
    let mut y = rt.mul_trunc(x, &wide)?;
    y.add_row_broadcast(shift)?;
    Ok(y)
}

/// Exact `max(0, x)`.
pub fn relu_layer(rt: &mut Runtime, x: &FieldMatrix) -> Result<FieldMatrix> {
    relu(rt.session, x, &mut rt.material.compare, &mut rt.buffer)
}

/// Sigmoid via clamping to `[-8, 8]` and the odd degree-9 polynomial,
/// evaluated in `u = x / 8` with Horner's rule in `u²`.
pub fn sigmoid_layer(rt: &mut Runtime, x: &FieldMatrix) -> Result<FieldMatrix> {
    let (rows, cols) = x.shape();
    let bound = rt.codec.encode(SIGMOID_CLAMP)?;
    let lead = rt.lead();
    // Stack [x - 8; -8 - x] so both ReLUs share their rounds.
    let mut data = Vec::with_capacity(2 * x.len());
    data.extend(x.as_slice().iter().map(|&v| if lead { v - bound } else { v }));
    data.extend(x.as_slice().iter().map(|&v| if lead { -v - bound } else { -v }));
    let stacked = FieldMatrix::from_vec(2 * rows, cols, data)?;
    let r = relu(rt.session, &stacked, &mut rt.material.compare, &mut rt.buffer)?;
    let mut clamped = x.sub(&r.slice_rows(0, rows))?;
    clamped.add_assign(&r.slice_rows(rows, 2 * rows))?;

    let powers: Vec<f64> = SIGMOID_COEFFS
        .iter()
        .enumerate()
        .map(|(i, c)| c * SIGMOID_CLAMP.powi(2 * i as i32 + 1))
        .collect();
    let u = rt.scale_public(&clamped, 1.0 / SIGMOID_CLAMP)?;
    let v = rt.mul_trunc(&u, &u)?;
    let mut t = rt.scale_public(&v, powers[4])?;
    rt.add_constant(&mut t, powers[3])?;
    for &c in powers[..3].iter().rev() {
        t = rt.mul_trunc(&v, &t)?;
        rt.add_constant(&mut t, c)?;
    }
    let mut y = rt.mul_trunc(&u, &t)?;
    rt.add_constant(&mut y, 0.5)?;
    Ok(y)
}

/// Element-wise products, truncations and comparisons consumed by one layer
/// on `rows x dim` inputs.
pub fn layer_cost(spec: &super::LayerSpec, rows: usize, dim: usize) -> (usize, usize, usize) {
    use super::LayerSpec::*;
    let n = rows * dim;
    match *spec {
        Linear { output, .. } => (0, rows * output, 0),
        BatchNorm { .. } => (n, n, 0),
        Relu => (n, 0, n),
        Sigmoid => (7 * n, 7 * n, 2 * n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::reference::sigmoid;

    #[test]
    fn approximation_error_is_below_one_percent() {
        let mut worst: f64 = 0.0;
        for i in -20_000..=20_000 {
            let x = i as f64 * 12.0 / 20_000.0;
            worst = worst.max((sigmoid_approx(x) - sigmoid(x)).abs());
        }
        assert!(worst < 9e-3, "{worst}");
        assert!((sigmoid_approx(0.0) - 0.5).abs() < 1e-12);
        assert!(sigmoid_approx(8.0) >= 0.99);
    }

    #[test]
    fn u_space_coefficients_stay_small() {
        let max = SIGMOID_COEFFS
            .iter()
            .enumerate()
            .map(|(i, c)| (c * 8f64.powi(2 * i as i32 + 1)).abs())
            .fold(0.0, f64::max);
        assert!(max < 16.0);
    }
}
