use std::sync::Arc;

use rand::Rng;

use super::scan::{Sample, NUM_CHANNELS, NUM_CLASSES};
use crate::error::{FedError, Result};
use crate::numerics::{Layout, ParamVector};
use crate::rng::{stream, tag};

pub const W1: &str = "w1";
pub const B1: &str = "b1";
pub const W2: &str = "w2";
pub const B2: &str = "b2";

/// Initial weights are drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.1;

/// Layout of the per-pixel classifier: `w1` is channels x hidden (row-major),
/// `w2` is hidden x classes.
pub fn mlp_layout(hidden: usize) -> Layout {
    Layout::new([
        (W1, vec![NUM_CHANNELS, hidden]),
        (B1, vec![hidden]),
        (W2, vec![hidden, NUM_CLASSES]),
        (B2, vec![NUM_CLASSES]),
    ])
}

/// Two-layer per-pixel classifier, tanh hidden units, softmax output.
/// Parameters are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    params: ParamVector,
    hidden: usize,
}

/// Intermediate activations kept for backpropagation.
struct Activations {
    hidden: Vec<f64>,
    logits: [f64; NUM_CLASSES],
    probs: [f64; NUM_CLASSES],
}

impl MlpModel {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            params: ParamVector::zeros(Arc::new(mlp_layout(hidden))),
            hidden,
        }
    }

    /// Uniform `[-0.1, 0.1]` initialization from `seed`.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let layout = Arc::new(mlp_layout(hidden));
        let mut rng = stream(seed, &[tag::INIT]);
        let values = (0..layout.num_elements())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self {
            params: ParamVector::new(values, layout).expect("length matches layout"),
            hidden,
        }
    }

    /// Wraps a parameter vector, rejecting wrong layouts and non-finite values.
    pub fn from_params(params: ParamVector) -> Result<Self> {
        let (_, hidden) = params
            .layout()
            .span(B1)
            .ok_or_else(|| FedError::State("parameter vector has no hidden bias".into()))?;
        if **params.layout() != mlp_layout(hidden) {
            return Err(FedError::Layout("parameter vector is not an MLP layout".into()));
        }
        if !params.is_finite() {
            return Err(FedError::State("model parameters contain NaN or infinity".into()));
        }
        Ok(Self { params, hidden })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn parts(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let h = self.hidden;
        let v = self.params.values();
        let (w1, rest) = v.split_at(NUM_CHANNELS * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h * NUM_CLASSES);
        (w1, b1, w2, b2)
    }

    /// Output-layer pre-activations.
    pub fn logits(&self, feature: &[f64; NUM_CHANNELS]) -> [f64; NUM_CLASSES] {
        self.activate(feature).1
    }

    fn activate(&self, feature: &[f64; NUM_CHANNELS]) -> (Vec<f64>, [f64; NUM_CLASSES]) {
        let h = self.hidden;
        let (w1, b1, w2, b2) = self.parts();
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let z = b1[j] + (0..NUM_CHANNELS).map(|c| feature[c] * w1[c * h + j]).sum::<f64>();
                z.tanh()
            })
            .collect();
        let mut logits = [0.0; NUM_CLASSES];
        for (k, out) in logits.iter_mut().enumerate() {
            *out = b2[k] + (0..h).map(|j| hidden[j] * w2[j * NUM_CLASSES + k]).sum::<f64>();
        }
        (hidden, logits)
    }

    fn run(&self, feature: &[f64; NUM_CHANNELS]) -> Activations {
        let (hidden, logits) = self.activate(feature);
        Activations {
            hidden,
            probs: softmax(&logits),
            logits,
        }
    }

    /// Class probabilities for one pixel.
    pub fn forward(&self, feature: &[f64; NUM_CHANNELS]) -> [f64; NUM_CLASSES] {
        softmax(&self.logits(feature))
    }

    /// Most probable class; ties go to the lower label.
    pub fn predict(&self, feature: &[f64; NUM_CHANNELS]) -> u8 {
        let logits = self.logits(feature);
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        best as u8
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(FedError::Usage("loss of an empty batch".into()));
        }
        let total: f64 = batch
            .iter()
            .map(|s| {
                let logits = self.logits(&s.feature);
                log_sum_exp(&logits) - logits[s.label as usize]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Analytic gradient of [`MlpModel::loss`] with respect to all parameters.
    pub fn gradient(&self, batch: &[Sample]) -> Result<ParamVector> {
        Ok(self.loss_and_gradient(batch)?.1)
    }

    /// Loss and gradient from a single forward pass.
    pub fn loss_and_gradient(&self, batch: &[Sample]) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(FedError::Usage("gradient of an empty batch".into()));
        }
        let h = self.hidden;
        let (_, _, w2, _) = self.parts();
        let mut grad = ParamVector::zeros(self.params.layout().clone());
        let g = grad.values_mut();
        let (gw1, rest) = g.split_at_mut(NUM_CHANNELS * h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h * NUM_CLASSES);

        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut dhidden = vec![0.0; h];
        for s in batch {
            let act = self.run(&s.feature);
            let label = s.label as usize;
            total += log_sum_exp(&act.logits) - act.logits[label];

            let mut dlogit = act.probs;
            dlogit[label] -= 1.0;
            for d in dlogit.iter_mut() {
                *d *= scale;
            }
            for k in 0..NUM_CLASSES {
                gb2[k] += dlogit[k];
            }
            for j in 0..h {
                let a = act.hidden[j];
                let mut back = 0.0;
                for k in 0..NUM_CLASSES {
                    gw2[j * NUM_CLASSES + k] += a * dlogit[k];
                    back += w2[j * NUM_CLASSES + k] * dlogit[k];
                }
                dhidden[j] = back * (1.0 - a * a);
            }
            for j in 0..h {
                gb1[j] += dhidden[j];
                for c in 0..NUM_CHANNELS {
                    gw1[c * h + j] += s.feature[c] * dhidden[j];
                }
            }
        }
        Ok((total * scale, grad))
    }

    /// In-place SGD step `x <- x - lr * grad`.
    pub(crate) fn sgd_step(&mut self, lr: f64, grad: &ParamVector) {
        for (p, g) in self.params.values_mut().iter_mut().zip(grad.values()) {
            *p -= lr * g;
        }
    }
}

fn log_sum_exp(logits: &[f64; NUM_CLASSES]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|l| (l - max).exp());
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}
