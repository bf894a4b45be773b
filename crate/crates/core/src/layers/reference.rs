use crate::error::{Error, Result};

use super::arch::{LayerSpec, Readout};
use super::model::{LayerParams, PlaintextModel};

/// Row-major real matrix used by the reference engine.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Dense { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn map(mut self, f: impl Fn(f64) -> f64) -> Dense {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Neighbour aggregation `out[d] += w · x[s]` over the edge list.
pub fn aggregate(x: &Dense, edges: &[(usize, usize)], weights: Option<&[f64]>) -> Dense {
    let mut out = Dense {
        rows: x.rows,
        cols: x.cols,
        data: vec![0.0; x.data.len()],
    };
    for (e, &(s, d)) in edges.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[e]);
        for c in 0..x.cols {
            out.data[d * x.cols + c] += w * x.data[s * x.cols + c];
        }
    }
    out
}

fn apply(x: Dense, spec: &LayerSpec, params: Option<&LayerParams>) -> Dense {
    match (spec, params) {
        (LayerSpec::Linear { input, output }, Some(LayerParams::Linear { weight, bias })) => {
            let mut out = vec![0.0; x.rows * output];
            for i in 0..x.rows {
                for j in 0..*output {
                    let mut acc = bias[j];
                    for k in 0..*input {
                        acc += x.data[i * input + k] * weight[k][j];
                    }
                    out[i * output + j] = acc;
                }
            }
            Dense {
                rows: x.rows,
                cols: *output,
                data: out,
            }
        }
        (
            LayerSpec::BatchNorm { dim },
            Some(LayerParams::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            }),
        ) => {
            let mut x = x;
            for (i, v) in x.data.iter_mut().enumerate() {
                let c = i % dim;
                *v = (*v - mean[c]) / (var[c] + eps).sqrt() * gamma[c] + beta[c];
            }
            x
        }
        (LayerSpec::Relu, _) => x.map(|v| v.max(0.0)),
        (LayerSpec::Sigmoid, _) => x.map(sigmoid),
        _ => unreachable!("model validated before evaluation"),
    }
}

/// Double-precision forward pass of the model over a graph.
///
/// `features` is `nodes x input_dim` row-major; `edges` must already
/// contain any self-loops the architecture asks for.
pub fn plaintext_forward(
    model: &PlaintextModel,
    features: &Dense,
    edges: &[(usize, usize)],
    weights: Option<&[f64]>,
) -> Result<Dense> {
    model.validate()?;
    let arch = &model.architecture;
    if features.cols != arch.input_dim {
        return Err(Error::ShapeMismatch {
            expected: (features.rows, arch.input_dim),
            found: (features.rows, features.cols),
        });
    }
    let mut params = model.parameters.iter();
    let mut x = features.clone();
    let mut outputs = Vec::new();
    for block in &arch.blocks {
        if block.message_passing {
            x = aggregate(&x, edges, weights);
        }
        for spec in &block.layers {
            let p = if spec.has_parameters() { params.next() } else { None };
            x = apply(x, spec, p);
        }
        outputs.push(x.clone());
    }
    if arch.concat {
        let cols: usize = outputs.iter().map(|o| o.cols).sum();
        let mut data = Vec::with_capacity(x.rows * cols);
        for i in 0..x.rows {
            for o in &outputs {
                data.extend_from_slice(o.row(i));
            }
        }
        x = Dense::new(x.rows, cols, data)?;
    }
    if arch.readout == Readout::Sum {
        let mut pooled = vec![0.0; x.cols];
        for i in 0..x.rows {
            for (p, v) in pooled.iter_mut().zip(x.row(i)) {
                *p += v;
            }
        }
        x = Dense::new(1, x.cols, pooled)?;
    }
    for spec in &arch.head {
        let p = if spec.has_parameters() { params.next() } else { None };
        x = apply(x, spec, p);
    }
    Ok(x)
}
