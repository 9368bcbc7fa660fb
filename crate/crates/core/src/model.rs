//! Differentiable classifiers over flat parameter vectors.
//!
//! Two architectures share one interface: multinomial softmax regression and a
//! one-hidden-layer ReLU MLP. Loss is mean cross-entropy plus
//! `(weight_decay/2)·‖weights‖²`; biases are not decayed.
//!
//! Parameter layout (row-major):
//!
//! * softmax regression: `W[C×m] | b[C]`
//! * mlp: `W1[h×m] | b1[h] | W2[C×h] | b2[C]`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::seed::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SoftmaxRegression,
    #[serde(rename = "mlp-1h")]
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArch {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub weight_decay: f64,
}

impl LossSpec {
    pub fn new(weight_decay: f64) -> Result<Self> {
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::config(
                "model.weight_decay",
                "must be >= 0 and finite",
            ));
        }
        Ok(LossSpec { weight_decay })
    }
}

/// A contiguous block of parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn end(&self) -> usize {
        self.offset + self.len()
    }
}

struct Layout {
    /// (weights, bias) per dense layer, input to output.
    layers: Vec<(Block, Block)>,
}

impl ModelArch {
    pub fn softmax_regression(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::SoftmaxRegression, input_dim, 0, num_classes)
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp, input_dim, hidden_dim, num_classes)
    }

    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be >= 1"));
        }
        if num_classes < 2 {
            return Err(Error::config("model.num_classes", "must be >= 2"));
        }
        if kind == ModelKind::Mlp && hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be >= 1 for mlp-1h"));
        }
        let hidden_dim = if kind == ModelKind::Mlp {
            hidden_dim
        } else {
            0
        };
        Ok(ModelArch {
            kind,
            input_dim,
            hidden_dim,
            num_classes,
        })
    }

    fn layout(&self) -> Layout {
        let dense = |offset: usize, fan_in: usize, fan_out: usize| {
            let w = Block {
                offset,
                rows: fan_out,
                cols: fan_in,
            };
            let b = Block {
                offset: w.end(),
                rows: fan_out,
                cols: 1,
            };
            (w, b)
        };
        match self.kind {
            ModelKind::SoftmaxRegression => Layout {
                layers: vec![dense(0, self.input_dim, self.num_classes)],
            },
            ModelKind::Mlp => {
                let first = dense(0, self.input_dim, self.hidden_dim);
                let second = dense(first.1.end(), self.hidden_dim, self.num_classes);
                Layout {
                    layers: vec![first, second],
                }
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout()
            .layers
            .last()
            .map(|(_, b)| b.end())
            .unwrap_or(0)
    }

    /// Uniform fan-based initialization for weights, zero biases.
    pub fn init_params(&self, rng: &mut SimRng) -> ParamVector {
        let mut x = vec![0.0; self.num_params()];
        for (w, _) in self.layout().layers {
            let bound = (6.0 / (w.cols + w.rows) as f64).sqrt();
            for v in &mut x[w.offset..w.end()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        ParamVector::new(x)
    }

    fn check_params(&self, x: &ParamVector) -> Result<()> {
        if x.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    /// Squared norm of the weight blocks (biases excluded).
    pub fn weight_norm_sq(&self, x: &ParamVector) -> f64 {
        let x = x.as_slice();
        self.layout()
            .layers
            .iter()
            .flat_map(|(w, _)| &x[w.offset..w.end()])
            .fold(0.0, |acc, v| acc + v * v)
    }

    /// Runs the network, returning every layer's pre-activation. The last
    /// entry holds the logits.
    fn pre_activations(&self, x: &[f64], features: &[f64]) -> Vec<Vec<f64>> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(layout.layers.len());
        let mut input: Vec<f64> = features.to_vec();
        for (i, (w, b)) in layout.layers.iter().enumerate() {
            let z: Vec<f64> = (0..w.rows)
                .map(|r| {
                    let row = &x[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                    row.iter()
                        .zip(&input)
                        .fold(x[b.offset + r], |acc, (a, v)| acc + a * v)
                })
                .collect();
            if i + 1 < layout.layers.len() {
                input = z.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(z);
        }
        out
    }

    pub fn logits(&self, x: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
        self.check_params(x)?;
        self.check_features(features)?;
        Ok(self
            .pre_activations(x.as_slice(), features)
            .pop()
            .expect("at least one layer"))
    }

    pub fn forward(&self, x: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x, features)?))
    }

    /// Argmax of the logits, ties to the lowest class.
    pub fn predict(&self, x: &ParamVector, features: &[f64]) -> Result<usize> {
        let z = self.logits(x, features)?;
        let mut best = 0;
        for (c, v) in z.iter().enumerate().skip(1) {
            if *v > z[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Mean cross-entropy over the batch (no decay).
    pub fn cross_entropy<'a, I>(&self, x: &ParamVector, batch: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a LabeledExample>,
    {
        self.check_params(x)?;
        let mut total = 0.0;
        let mut n = 0usize;
        for e in batch {
            self.check_features(&e.features)?;
            let z = self
                .pre_activations(x.as_slice(), &e.features)
                .pop()
                .expect("at least one layer");
            total += log_sum_exp(&z) - z[e.label];
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(total / n as f64)
    }

    pub fn loss<'a, I>(&self, spec: &LossSpec, x: &ParamVector, batch: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a LabeledExample>,
    {
        let ce = self.cross_entropy(x, batch)?;
        Ok(ce + 0.5 * spec.weight_decay * self.weight_norm_sq(x))
    }

    /// Analytic gradient of [`ModelArch::loss`].
    pub fn gradient<'a, I>(&self, spec: &LossSpec, x: &ParamVector, batch: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a LabeledExample>,
    {
        self.check_params(x)?;
        let layout = self.layout();
        let params = x.as_slice();
        let mut grad = vec![0.0; params.len()];
        let mut n = 0usize;

        for e in batch {
            self.check_features(&e.features)?;
            let pre = self.pre_activations(params, &e.features);
            let mut delta = softmax(pre.last().expect("at least one layer"));
            delta[e.label] -= 1.0;

            // Backward through the dense layers.
            for (i, (w, b)) in layout.layers.iter().enumerate().rev() {
                let input: Vec<f64> = if i == 0 {
                    e.features.clone()
                } else {
                    pre[i - 1].iter().map(|v| v.max(0.0)).collect()
                };
                for r in 0..w.rows {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b.offset + r] += d;
                    let row = &mut grad[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                    for (g, v) in row.iter_mut().zip(&input) {
                        *g += d * v;
                    }
                }
                if i > 0 {
                    let below = &pre[i - 1];
                    delta = (0..w.cols)
                        .map(|c| {
                            if below[c] <= 0.0 {
                                return 0.0;
                            }
                            (0..w.rows).fold(0.0, |acc, r| {
                                acc + params[w.offset + r * w.cols + c] * delta[r]
                            })
                        })
                        .collect();
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }

        let inv = 1.0 / n as f64;
        for g in &mut grad {
            *g *= inv;
        }
        if spec.weight_decay != 0.0 {
            for (w, _) in &layout.layers {
                for j in w.offset..w.end() {
                    grad[j] += spec.weight_decay * params[j];
                }
            }
        }
        Ok(ParamVector::new(grad))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
