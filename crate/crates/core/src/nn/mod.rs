//! Small self-contained neural network engine.
//!
//! Parameters of each network live in one flat `Vec<f64>` so that the
//! optimizers, the finite-difference checker and the model container can
//! treat every architecture uniformly. All arithmetic is `f64`.

mod calibration;
mod dynamic_net;
mod gradcheck;
mod io;
mod static_net;
mod train;

pub use calibration::{argmax, calibrated_softmax, softmax, CalibrationConfig, DEFAULT_NONE_SCALE};
pub use dynamic_net::{DynamicNet, DYNAMIC_EMBED, DYNAMIC_HIDDEN};
pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use io::{load_model, peek_header, save_model, ModelHeader, MODEL_SCHEMA_VERSION};
pub use static_net::{StaticNet, STATIC_HIDDEN};
pub use train::{train, EpochMetrics, Optimizer, TrainConfig, TrainReport};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("training data contains fewer than two classes")]
    SingleClassData,
    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("incompatible model file: {0}")]
    IncompatibleModelVersion(String),
    #[error("model architecture mismatch: file holds '{found}', expected '{expected}'")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A classifier with a flat parameter vector and a hand-written backward pass.
pub trait Network: Clone + Send + Sync {
    type Input: ?Sized;

    /// Architecture tag stored in model files.
    const ARCH: &'static str;

    fn num_classes(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Architecture sizes, enough to rebuild the parameter layout.
    fn sizes(&self) -> Vec<usize>;

    fn from_parts(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError>;

    fn logits(&self, x: &Self::Input) -> Result<Vec<f64>, NnError>;

    /// Cross-entropy loss of `x` against `target`; adds its parameter
    /// gradient into `grad` and returns the loss.
    fn backprop(&self, x: &Self::Input, target: usize, grad: &mut [f64]) -> Result<f64, NnError>;

    /// Loss only, used by the finite-difference checker.
    fn loss(&self, x: &Self::Input, target: usize) -> Result<f64, NnError> {
        let logits = self.logits(x)?;
        Ok(cross_entropy(&logits, target))
    }
}

/// A trained network together with its class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<N> {
    pub labels: Vec<String>,
    pub net: N,
}

impl<N: Network> Model<N> {
    pub fn new(labels: Vec<String>, net: N) -> Result<Self, NnError> {
        if labels.len() != net.num_classes() {
            return Err(NnError::DimensionMismatch {
                expected: net.num_classes(),
                got: labels.len(),
            });
        }
        Ok(Self { labels, net })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub type StaticModel = Model<StaticNet>;
pub type DynamicModel = Model<DynamicNet>;

/// `-ln softmax(logits)[target]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln() - logits[target]
}

/// Softmax minus one-hot: gradient of the cross-entropy w.r.t. logits.
fn cross_entropy_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    g
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out.iter_mut() {
        *w = rng.gen_range(-limit..=limit);
    }
}

/// `out = W x + b`, with `W` row-major `out.len() × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(cols).zip(b)) {
        *o = bias + dot(row, x);
    }
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and `dx += Wᵀ dy`.
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let cols = x.len();
    for ((g, drow), d) in dy.iter().zip(dw.chunks_exact_mut(cols)).zip(db.iter_mut()) {
        *d += g;
        for (dwij, xj) in drow.iter_mut().zip(x) {
            *dwij += g * xj;
        }
    }
    if let Some(dx) = dx {
        for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
            for (dxj, wij) in dx.iter_mut().zip(row) {
                *dxj += g * wij;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Splits a flat buffer into consecutive slices of the given lengths.
fn split_mut<'a>(mut buf: &'a mut [f64], lens: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    for &n in lens {
        let (head, tail) = buf.split_at_mut(n);
        out.push(head);
        buf = tail;
    }
    out
}

fn split<'a>(mut buf: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    for &n in lens {
        let (head, tail) = buf.split_at(n);
        out.push(head);
        buf = tail;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = [0.3, -1.2, 2.0];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let direct = -(logits[2].exp() / z).ln();
        assert!((cross_entropy(&logits, 2) - direct).abs() < 1e-12);
        // Stable for large logits.
        assert!(cross_entropy(&[1000.0, 0.0], 0).abs() < 1e-12);
    }

    #[test]
    fn affine_small() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        affine(&w, &[0.5, -0.5], &[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, [6.5, 14.5]);
    }
}
