use serde::{Deserialize, Serialize};

use super::{Activation, AffineLayer, GateBuilder, Layer, NetError, ReluNetwork, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermDoc {
    pub out: usize,
    pub coef: f64,
    pub inputs: Vec<usize>,
}

/// Serialized layer. Affine weights are dense row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDoc {
    Affine { rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>, activation: Activation },
    Gate { rows: usize, cols: usize, terms: Vec<TermDoc> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub in_dim: usize,
    pub out_dim: usize,
    pub layers: Vec<LayerDoc>,
}

impl NetworkDoc {
    pub fn from_network(net: &ReluNetwork) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Affine(a) => LayerDoc::Affine {
                    rows: a.out_dim(),
                    cols: a.in_dim(),
                    weights: a.to_dense(),
                    biases: a.biases().to_vec(),
                    activation: a.activation(),
                },
                Layer::Gate(g) => LayerDoc::Gate {
                    rows: g.out_dim(),
                    cols: g.in_dim(),
                    terms: (0..g.out_dim())
                        .flat_map(|o| {
                            g.terms(o).map(move |(c, f)| TermDoc {
                                out: o,
                                coef: c,
                                inputs: f.iter().map(|v| *v as usize).collect(),
                            })
                        })
                        .collect(),
                },
            })
            .collect();
        Self { in_dim: net.in_dim(), out_dim: net.out_dim(), layers }
    }

    pub fn into_network(self) -> Result<ReluNetwork> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers {
            layers.push(match l {
                LayerDoc::Affine { rows, cols, weights, biases, activation } => {
                    Layer::Affine(AffineLayer::from_dense(rows, cols, &weights, &biases, activation)?)
                }
                LayerDoc::Gate { rows, cols, mut terms } => {
                    if terms.iter().any(|t| t.out >= rows) {
                        return Err(NetError::Serialization("gate term output out of range".into()));
                    }
                    terms.sort_by_key(|t| t.out);
                    let mut b = GateBuilder::new(cols);
                    let mut it = terms.iter().peekable();
                    for o in 0..rows {
                        while let Some(t) = it.next_if(|t| t.out == o) {
                            b.term(t.coef, &t.inputs);
                        }
                        b.end_output();
                    }
                    Layer::Gate(b.finish()?)
                }
            });
        }
        let net = ReluNetwork::new(layers)?;
        if net.in_dim() != self.in_dim || net.out_dim() != self.out_dim {
            return Err(NetError::Serialization("declared dimensions do not match layers".into()));
        }
        Ok(net)
    }
}
