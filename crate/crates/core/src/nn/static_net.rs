use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    affine, affine_backward, cross_entropy, cross_entropy_grad, glorot, split, split_mut, Network,
    NnError,
};
use crate::features::STATIC_LEN;

/// Default hidden width.
pub const STATIC_HIDDEN: usize = 64;

/// Two dense layers with a ReLU between them: `input → hidden → classes`.
///
/// Parameter layout: `w1 (hidden × input)`, `b1`, `w2 (classes × hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticNet {
    input: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

impl StaticNet {
    /// Seeded Glorot-uniform weights, zero biases, 49 inputs.
    pub fn new(hidden: usize, classes: usize, seed: u64) -> Self {
        Self::with_input(STATIC_LEN, hidden, classes, seed)
    }

    pub fn with_input(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input, hidden, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = net.lens();
        let parts = split_mut(&mut net.params, &lens);
        let mut it = parts.into_iter();
        glorot(&mut rng, it.next().unwrap(), input, hidden);
        let _b1 = it.next();
        glorot(&mut rng, it.next().unwrap(), hidden, classes);
        net
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        let len = hidden * input + hidden + classes * hidden + classes;
        Self {
            input,
            hidden,
            classes,
            params: vec![0.0; len],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn lens(&self) -> [usize; 4] {
        [
            self.hidden * self.input,
            self.hidden,
            self.classes * self.hidden,
            self.classes,
        ]
    }

    fn check(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input {
            return Err(NnError::DimensionMismatch {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Returns (pre-activation, hidden activation, logits).
    fn forward_full(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = split(&self.params, &self.lens());
        let mut pre = vec![0.0; self.hidden];
        affine(p[0], p[1], x, &mut pre);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut logits = vec![0.0; self.classes];
        affine(p[2], p[3], &act, &mut logits);
        (pre, act, logits)
    }
}

impl Network for StaticNet {
    type Input = [f64];

    const ARCH: &'static str = "static";

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn sizes(&self) -> Vec<usize> {
        vec![self.input, self.hidden, self.classes]
    }

    fn from_parts(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        let &[input, hidden, classes] = sizes else {
            return Err(NnError::CorruptModelFile(format!(
                "static net needs 3 sizes, got {}",
                sizes.len()
            )));
        };
        let mut net = Self::zeros(input, hidden, classes);
        if params.len() != net.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(x)?;
        Ok(self.forward_full(x).2)
    }

    fn backprop(&self, x: &[f64], target: usize, grad: &mut [f64]) -> Result<f64, NnError> {
        self.check(x)?;
        if target >= self.classes {
            return Err(NnError::LabelOutOfRange {
                label: target,
                classes: self.classes,
            });
        }
        let (pre, act, logits) = self.forward_full(x);
        let loss = cross_entropy(&logits, target);
        let dlogits = cross_entropy_grad(&logits, target);

        let lens = self.lens();
        let p = split(&self.params, &lens);
        let mut g = split_mut(grad, &lens).into_iter();
        let (dw1, db1, dw2, db2) = (
            g.next().unwrap(),
            g.next().unwrap(),
            g.next().unwrap(),
            g.next().unwrap(),
        );

        let mut dact = vec![0.0; self.hidden];
        affine_backward(p[2], &act, &dlogits, dw2, db2, Some(&mut dact));
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&pre)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        affine_backward(p[0], x, &dpre, dw1, db1, None);
        Ok(loss)
    }
}
