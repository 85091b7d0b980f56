use serde::{Deserialize, Serialize};

/// Scaling constant applied to the `none` probability by default.
pub const DEFAULT_NONE_SCALE: f64 = 2.0;

/// Post-softmax boost of the `none` class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub none_index: usize,
    /// `k >= 1`.
    pub k: f64,
}

impl CalibrationConfig {
    pub fn new(none_index: usize, k: f64) -> Option<Self> {
        (k.is_finite() && k >= 1.0).then_some(Self { none_index, k })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax, then `p[none] *= k` and renormalization.
///
/// The argmax is taken on the scaled values before renormalization so that
/// the ordering among non-`none` classes is exactly the softmax ordering.
pub fn calibrated_softmax(logits: &[f64], cal: Option<&CalibrationConfig>) -> (Vec<f64>, usize) {
    let mut p = softmax(logits);
    let Some(cal) = cal.filter(|c| c.none_index < p.len()) else {
        let best = argmax(&p);
        return (p, best);
    };
    p[cal.none_index] *= cal.k;
    let best = argmax(&p);
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= sum;
    }
    (p, best)
}
