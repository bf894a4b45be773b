use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{split_additive, FieldMatrix, FixedPointCodec, PartyId, ShareMatrix};
use crate::prf::{Seed, SeededPrf, StreamId};
use crate::serial::*;

use super::arch::{Architecture, LayerSpec};

/// Trained parameters of one layer, in plain reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerParams {
    /// `weight[i][j]` maps input `i` to output `j`.
    Linear { weight: Vec<Vec<f64>>, bias: Vec<f64> },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
}

/// Batch norm as `y = scale · x + shift`.
pub fn fold_batch_norm(gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
    (scale, shift)
}

/// A plaintext model as held by its owner: architecture plus parameters for
/// every linear and batch-norm layer, in execution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaintextModel {
    pub architecture: Architecture,
    pub parameters: Vec<LayerParams>,
}

fn quantize(x: f64, codec: &FixedPointCodec) -> f64 {
    (x * codec.scale()).round() / codec.scale()
}

impl PlaintextModel {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let specs: Vec<_> = self
            .architecture
            .placed_layers()
            .into_iter()
            .filter(|l| l.spec.has_parameters())
            .collect();
        if specs.len() != self.parameters.len() {
            return Err(Error::Config(format!(
                "architecture has {} parametrized layers, model provides {}",
                specs.len(),
                self.parameters.len()
            )));
        }
        for (placed, params) in specs.iter().zip(&self.parameters) {
            let id = placed.id;
            match (&placed.spec, params) {
                (LayerSpec::Linear { input, output }, LayerParams::Linear { weight, bias }) => {
                    if weight.len() != *input || weight.iter().any(|r| r.len() != *output) || bias.len() != *output {
                        return Err(Error::Config(format!("layer {id}: linear parameters do not match {input}x{output}")));
                    }
                    if weight.iter().flatten().chain(bias).any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("layer {id}: non-finite parameter")));
                    }
                }
                (
                    LayerSpec::BatchNorm { dim },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        var,
                        eps,
                    },
                ) => {
                    if [gamma, beta, mean, var].iter().any(|v| v.len() != *dim) {
                        return Err(Error::Config(format!("layer {id}: batch norm parameters do not match width {dim}")));
                    }
                    if var.iter().any(|v| !(v + eps > 0.0)) {
                        return Err(Error::Config(format!("layer {id}: variance plus epsilon must be positive")));
                    }
                }
                (spec, _) => {
                    return Err(Error::Config(format!("layer {id}: parameters do not fit a {spec:?} layer")));
                }
            }
        }
        Ok(())
    }

    /// Random parameters drawn on the fixed-point grid of `fraction_bits`,
    /// so the shared model represents them exactly. Batch-norm statistics
    /// are chosen so the folded scale and shift are grid values as well.
    pub fn random(architecture: Architecture, seed: u64, fraction_bits: u32) -> Result<Self> {
        architecture.validate()?;
        let codec = FixedPointCodec::new(fraction_bits)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parameters = Vec::new();
        for placed in architecture.placed_layers() {
            match placed.spec {
                LayerSpec::Linear { input, output } => {
                    let bound = (6.0 / (input + output) as f64).sqrt();
                    let weight = (0..input)
                        .map(|_| {
                            (0..output)
                                .map(|_| quantize(rng.gen_range(-bound..bound), &codec))
                                .collect()
                        })
                        .collect();
                    let bias = (0..output).map(|_| quantize(rng.gen_range(-0.1..0.1), &codec)).collect();
                    parameters.push(LayerParams::Linear { weight, bias });
                }
                LayerSpec::BatchNorm { dim } => {
                    let eps = 1e-5;
                    let mut p = (vec![], vec![], vec![], vec![]);
                    for _ in 0..dim {
                        let scale = quantize(rng.gen_range(0.5..1.5), &codec);
                        let shift = quantize(rng.gen_range(-0.5..0.5), &codec);
                        let mean = quantize(rng.gen_range(-1.0..1.0), &codec);
                        let var: f64 = rng.gen_range(0.5..2.0);
                        p.0.push(scale * (var + eps).sqrt());
                        p.1.push(shift + mean * scale);
                        p.2.push(mean);
                        p.3.push(var);
                    }
                    parameters.push(LayerParams::BatchNorm {
                        gamma: p.0,
                        beta: p.1,
                        mean: p.2,
                        var: p.3,
                        eps,
                    });
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => {}
            }
        }
        let model = PlaintextModel {
            architecture,
            parameters,
        };
        model.validate()?;
        Ok(model)
    }

    /// Content hash, used to invalidate cached openings after a reload.
    pub fn version(&self) -> u64 {
        let text = serde_json::to_vec(self).expect("model serializes");
        let digest = Sha256::digest(text);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: PlaintextModel = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        model.validate()?;
        Ok(model)
    }

    /// Encodes every parameter and splits it into `parties` additive shares.
    pub fn split(&self, parties: usize, fraction_bits: u32, seed: &Seed) -> Result<Vec<ModelShare>> {
        self.validate()?;
        let codec = FixedPointCodec::new(fraction_bits)?;
        let version = self.version();
        let mut prf = SeededPrf::derive(seed, version, StreamId::Reshare);
        let mut per_party: Vec<Vec<SharedLayer>> = vec![Vec::new(); parties];
        let mut params = self.parameters.iter();
        let encode_row = |values: &[f64]| -> Result<FieldMatrix> {
            FieldMatrix::from_vec(1, values.len(), codec.encode_all(values)?)
        };
        let split = |m: &FieldMatrix, prf: &mut SeededPrf| -> Result<Vec<FieldMatrix>> {
            Ok(split_additive(m, parties, prf)?
                .into_iter()
                .map(ShareMatrix::into_matrix)
                .collect())
        };
        for placed in self.architecture.placed_layers() {
            let shared: Vec<SharedLayer> = match (&placed.spec, placed.spec.has_parameters()) {
                (_, false) => vec![SharedLayer::Stateless; parties],
                _ => match params.next().expect("validated") {
                    LayerParams::Linear { weight, bias } => {
                        let flat: Vec<f64> = weight.iter().flatten().copied().collect();
                        let w = FieldMatrix::from_vec(weight.len(), bias.len(), codec.encode_all(&flat)?)?;
                        let ws = split(&w, &mut prf)?;
                        let bs = split(&encode_row(bias)?, &mut prf)?;
                        ws.into_iter()
                            .zip(bs)
                            .map(|(weight, bias)| SharedLayer::Linear { weight, bias })
                            .collect()
                    }
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        var,
                        eps,
                    } => {
                        let (scale, shift) = fold_batch_norm(gamma, beta, mean, var, *eps);
                        let ss = split(&encode_row(&scale)?, &mut prf)?;
                        let hs = split(&encode_row(&shift)?, &mut prf)?;
                        ss.into_iter()
                            .zip(hs)
                            .map(|(scale, shift)| SharedLayer::Affine { scale, shift })
                            .collect()
                    }
                },
            };
            for (p, layer) in shared.into_iter().enumerate() {
                per_party[p].push(layer);
            }
        }
        Ok(per_party
            .into_iter()
            .enumerate()
            .map(|(party, layers)| ModelShare {
                architecture: self.architecture.clone(),
                version,
                party,
                parties,
                fraction_bits,
                layers,
            })
            .collect())
    }
}

/// One party's share of a layer's encoded parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SharedLayer {
    Linear { weight: FieldMatrix, bias: FieldMatrix },
    /// Folded batch norm, both `1 x dim`.
    Affine { scale: FieldMatrix, shift: FieldMatrix },
    Stateless,
}

/// One party's share of a model, aligned with the architecture's layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShare {
    pub architecture: Architecture,
    pub version: u64,
    pub party: PartyId,
    pub parties: usize,
    pub fraction_bits: u32,
    pub layers: Vec<SharedLayer>,
}

const MAGIC: &[u8; 4] = b"CGMS";
const VERSION: u16 = 1;

impl ModelShare {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u16(w, VERSION)?;
        write_u16(w, self.party as u16)?;
        write_u16(w, self.parties as u16)?;
        write_u16(w, self.fraction_bits as u16)?;
        write_u64(w, self.version)?;
        write_bytes(w, self.architecture.to_json().as_bytes())?;
        write_len(w, self.layers.len())?;
        for layer in &self.layers {
            match layer {
                SharedLayer::Linear { weight, bias } => {
                    w.write_all(&[1])?;
                    write_matrix(w, weight)?;
                    write_matrix(w, bias)?;
                }
                SharedLayer::Affine { scale, shift } => {
                    w.write_all(&[2])?;
                    write_matrix(w, scale)?;
                    write_matrix(w, shift)?;
                }
                SharedLayer::Stateless => w.write_all(&[0])?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model share version {version}")));
        }
        let party = read_u16(r)? as usize;
        let parties = read_u16(r)? as usize;
        let fraction_bits = read_u16(r)? as u32;
        let model_version = read_u64(r)?;
        let json = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("architecture is not UTF-8".into()))?;
        let architecture = Architecture::from_json(&json)?;
        let count = read_len(r)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let mut tag = [0u8; 1];
            read_exact(r, &mut tag)?;
            layers.push(match tag[0] {
                0 => SharedLayer::Stateless,
                1 => SharedLayer::Linear {
                    weight: read_matrix(r)?,
                    bias: read_matrix(r)?,
                },
                2 => SharedLayer::Affine {
                    scale: read_matrix(r)?,
                    shift: read_matrix(r)?,
                },
                other => return Err(Error::Format(format!("unknown layer tag {other}"))),
            });
        }
        let share = ModelShare {
            architecture,
            version: model_version,
            party,
            parties,
            fraction_bits,
            layers,
        };
        share.check_shapes()?;
        Ok(share)
    }

    fn check_shapes(&self) -> Result<()> {
        let placed = self.architecture.placed_layers();
        if placed.len() != self.layers.len() {
            return Err(Error::Format(format!(
                "model share has {} layers, architecture {}",
                self.layers.len(),
                placed.len()
            )));
        }
        for (p, layer) in placed.iter().zip(&self.layers) {
            let ok = match (&p.spec, layer) {
                (LayerSpec::Linear { input, output }, SharedLayer::Linear { weight, bias }) => {
                    weight.shape() == (*input, *output) && bias.shape() == (1, *output)
                }
                (LayerSpec::BatchNorm { dim }, SharedLayer::Affine { scale, shift }) => {
                    scale.shape() == (1, *dim) && shift.shape() == (1, *dim)
                }
                (LayerSpec::Relu | LayerSpec::Sigmoid, SharedLayer::Stateless) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Format(format!("layer {} parameters do not match the architecture", p.id)));
            }
        }
        Ok(())
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
