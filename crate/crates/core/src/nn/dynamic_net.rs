//! Linear encoder → bidirectional GRU → linear head.
//!
//! Each direction runs the standard GRU cell from a zero initial state:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! The forward direction reads the encoded rows in time order, the backward
//! direction in reverse; the head sees `[h_fwd_final ; h_bwd_final]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    affine, affine_backward, cross_entropy, cross_entropy_grad, glorot, split, split_mut, Network,
    NnError,
};
use crate::features::{DynamicFeatureSequence, DYNAMIC_WIDTH};

pub const DYNAMIC_EMBED: usize = 32;
pub const DYNAMIC_HIDDEN: usize = 64;

/// Parameter layout: `enc_w (E × D)`, `enc_b`, then per direction
/// (forward, backward) `w_i (3G × E)`, `w_h (3G × G)`, `b_i (3G)`, `b_h (3G)`
/// with gate blocks ordered r, z, n; finally `head_w (C × 2G)`, `head_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicNet {
    input: usize,
    embed: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

struct Layout;

impl Layout {
    const ENC_W: usize = 0;
    const ENC_B: usize = 1;
    const FWD: usize = 2;
    const BWD: usize = 6;
    const HEAD_W: usize = 10;
    const HEAD_B: usize = 11;
}

/// Borrowed weights of one GRU direction.
struct Cell<'a> {
    w_i: &'a [f64],
    w_h: &'a [f64],
    b_i: &'a [f64],
    b_h: &'a [f64],
    hidden: usize,
}

struct CellGrad<'a> {
    w_i: &'a mut [f64],
    w_h: &'a mut [f64],
    b_i: &'a mut [f64],
    b_h: &'a mut [f64],
}

/// Values saved from one forward step for the backward pass.
struct Step {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Cell<'_> {
    fn step(&self, x: &[f64], h: &[f64]) -> Step {
        let g = self.hidden;
        let mut gi = vec![0.0; 3 * g];
        let mut gh = vec![0.0; 3 * g];
        affine(self.w_i, self.b_i, x, &mut gi);
        affine(self.w_h, self.b_h, h, &mut gh);
        let r: Vec<f64> = (0..g).map(|j| sigmoid(gi[j] + gh[j])).collect();
        let z: Vec<f64> = (0..g).map(|j| sigmoid(gi[g + j] + gh[g + j])).collect();
        let hn = gh[2 * g..].to_vec();
        let n: Vec<f64> = (0..g)
            .map(|j| (gi[2 * g + j] + r[j] * hn[j]).tanh())
            .collect();
        Step {
            h_prev: h.to_vec(),
            r,
            z,
            n,
            hn,
        }
    }

    /// Runs over `xs` in the given order, returning every step.
    fn run<'x>(&self, xs: impl Iterator<Item = &'x [f64]>) -> (Vec<f64>, Vec<Step>) {
        let mut h = vec![0.0; self.hidden];
        let mut steps = Vec::new();
        for x in xs {
            let s = self.step(x, &h);
            h = s.next_h();
            steps.push(s);
        }
        (h, steps)
    }

    /// Backpropagates `dh_final` through the recorded steps. `xs[i]` must be
    /// the input of `steps[i]`; `dxs[i]` receives its input gradient.
    fn backward(
        &self,
        xs: &[&[f64]],
        steps: &[Step],
        dh_final: &[f64],
        grad: &mut CellGrad,
        dxs: &mut [Vec<f64>],
    ) {
        let g = self.hidden;
        let mut dh = dh_final.to_vec();
        for (i, s) in steps.iter().enumerate().rev() {
            let mut a_i = vec![0.0; 3 * g];
            let mut a_h = vec![0.0; 3 * g];
            let mut dh_prev = vec![0.0; g];
            for j in 0..g {
                let (r, z, n) = (s.r[j], s.z[j], s.n[j]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (s.h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * s.hn[j];
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                a_i[j] = dr_pre;
                a_i[g + j] = dz_pre;
                a_i[2 * g + j] = dn_pre;
                a_h[j] = dr_pre;
                a_h[g + j] = dz_pre;
                a_h[2 * g + j] = dn_pre * r;
            }
            affine_backward(self.w_i, xs[i], &a_i, grad.w_i, grad.b_i, Some(&mut dxs[i]));
            affine_backward(
                self.w_h,
                &s.h_prev,
                &a_h,
                grad.w_h,
                grad.b_h,
                Some(&mut dh_prev),
            );
            dh = dh_prev;
        }
    }
}

impl Step {
    fn next_h(&self) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.n)
            .zip(&self.h_prev)
            .map(|((z, n), h)| (1.0 - z) * n + z * h)
            .collect()
    }
}

struct Forward {
    encoded: Vec<Vec<f64>>,
    fwd_steps: Vec<Step>,
    bwd_steps: Vec<Step>,
    state: Vec<f64>,
    logits: Vec<f64>,
}

impl DynamicNet {
    /// Seeded Glorot-uniform weights, zero biases, 52 inputs.
    pub fn new(embed: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        Self::with_input(DYNAMIC_WIDTH, embed, hidden, classes, seed)
    }

    pub fn with_input(
        input: usize,
        embed: usize,
        hidden: usize,
        classes: usize,
        seed: u64,
    ) -> Self {
        let mut net = Self::zeros(input, embed, hidden, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = net.lens();
        let mut parts = split_mut(&mut net.params, &lens);
        glorot(&mut rng, parts[Layout::ENC_W], input, embed);
        for dir in [Layout::FWD, Layout::BWD] {
            glorot(&mut rng, parts[dir], embed, hidden);
            glorot(&mut rng, parts[dir + 1], hidden, hidden);
        }
        glorot(&mut rng, parts[Layout::HEAD_W], 2 * hidden, classes);
        net
    }

    pub fn zeros(input: usize, embed: usize, hidden: usize, classes: usize) -> Self {
        let mut net = Self {
            input,
            embed,
            hidden,
            classes,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.lens().iter().sum()];
        net
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn lens(&self) -> Vec<usize> {
        let (d, e, g, c) = (self.input, self.embed, self.hidden, self.classes);
        let cell = [3 * g * e, 3 * g * g, 3 * g, 3 * g];
        let mut lens = vec![e * d, e];
        lens.extend(cell);
        lens.extend(cell);
        lens.extend([c * 2 * g, c]);
        lens
    }

    fn cell<'a>(&self, parts: &[&'a [f64]], dir: usize) -> Cell<'a> {
        Cell {
            w_i: parts[dir],
            w_h: parts[dir + 1],
            b_i: parts[dir + 2],
            b_h: parts[dir + 3],
            hidden: self.hidden,
        }
    }

    /// Copies the forward-direction weights onto the backward direction.
    pub fn tie_directions(&mut self) {
        let lens = self.lens();
        let start_fwd: usize = lens[..Layout::FWD].iter().sum();
        let span: usize = lens[Layout::FWD..Layout::BWD].iter().sum();
        let (head, tail) = self.params.split_at_mut(start_fwd + span);
        tail[..span].copy_from_slice(&head[start_fwd..]);
    }

    fn check(&self, seq: &DynamicFeatureSequence) -> Result<(), NnError> {
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if seq.width() != self.input {
            return Err(NnError::DimensionMismatch {
                expected: self.input,
                got: seq.width(),
            });
        }
        Ok(())
    }

    fn forward_full(&self, seq: &DynamicFeatureSequence) -> Forward {
        let parts = split(&self.params, &self.lens());
        let encoded: Vec<Vec<f64>> = seq
            .rows()
            .map(|row| {
                let mut e = vec![0.0; self.embed];
                affine(parts[Layout::ENC_W], parts[Layout::ENC_B], row, &mut e);
                e
            })
            .collect();
        let (h_fwd, fwd_steps) = self
            .cell(&parts, Layout::FWD)
            .run(encoded.iter().map(Vec::as_slice));
        let (h_bwd, bwd_steps) = self
            .cell(&parts, Layout::BWD)
            .run(encoded.iter().rev().map(Vec::as_slice));
        let mut state = h_fwd;
        state.extend(h_bwd);
        let mut logits = vec![0.0; self.classes];
        affine(
            parts[Layout::HEAD_W],
            parts[Layout::HEAD_B],
            &state,
            &mut logits,
        );
        Forward {
            encoded,
            fwd_steps,
            bwd_steps,
            state,
            logits,
        }
    }

    /// Final hidden states of the forward and backward directions.
    pub fn final_states(
        &self,
        seq: &DynamicFeatureSequence,
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        self.check(seq)?;
        let mut state = self.forward_full(seq).state;
        let bwd = state.split_off(self.hidden);
        Ok((state, bwd))
    }
}

impl Network for DynamicNet {
    type Input = DynamicFeatureSequence;

    const ARCH: &'static str = "dynamic";

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
        vec![self.input, self.embed, self.hidden, self.classes]
    }

    fn from_parts(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        let &[input, embed, hidden, classes] = sizes else {
            return Err(NnError::CorruptModelFile(format!(
                "dynamic net needs 4 sizes, got {}",
                sizes.len()
            )));
        };
        let mut net = Self::zeros(input, embed, hidden, classes);
        if params.len() != net.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    fn logits(&self, seq: &DynamicFeatureSequence) -> Result<Vec<f64>, NnError> {
        self.check(seq)?;
        Ok(self.forward_full(seq).logits)
    }

    fn backprop(
        &self,
        seq: &DynamicFeatureSequence,
        target: usize,
        grad: &mut [f64],
    ) -> Result<f64, NnError> {
        self.check(seq)?;
        if target >= self.classes {
            return Err(NnError::LabelOutOfRange {
                label: target,
                classes: self.classes,
            });
        }
        let fw = self.forward_full(seq);
        let loss = cross_entropy(&fw.logits, target);
        let dlogits = cross_entropy_grad(&fw.logits, target);

        let lens = self.lens();
        let parts = split(&self.params, &lens);
        let mut g = split_mut(grad, &lens).into_iter();
        let enc_w = g.next().unwrap();
        let enc_b = g.next().unwrap();
        let mut cell_grad = || CellGrad {
            w_i: g.next().unwrap(),
            w_h: g.next().unwrap(),
            b_i: g.next().unwrap(),
            b_h: g.next().unwrap(),
        };
        let mut fwd_grad = cell_grad();
        let mut bwd_grad = cell_grad();
        let head_w = g.next().unwrap();
        let head_b = g.next().unwrap();

        let mut dstate = vec![0.0; 2 * self.hidden];
        affine_backward(
            parts[Layout::HEAD_W],
            &fw.state,
            &dlogits,
            head_w,
            head_b,
            Some(&mut dstate),
        );

        let t = fw.encoded.len();
        let mut d_enc = vec![vec![0.0; self.embed]; t];
        let xs_fwd: Vec<&[f64]> = fw.encoded.iter().map(Vec::as_slice).collect();
        self.cell(&parts, Layout::FWD).backward(
            &xs_fwd,
            &fw.fwd_steps,
            &dstate[..self.hidden],
            &mut fwd_grad,
            &mut d_enc,
        );

        let xs_bwd: Vec<&[f64]> = fw.encoded.iter().rev().map(Vec::as_slice).collect();
        let mut d_enc_rev = vec![vec![0.0; self.embed]; t];
        self.cell(&parts, Layout::BWD).backward(
            &xs_bwd,
            &fw.bwd_steps,
            &dstate[self.hidden..],
            &mut bwd_grad,
            &mut d_enc_rev,
        );
        for (d, r) in d_enc.iter_mut().zip(d_enc_rev.iter().rev()) {
            for (a, b) in d.iter_mut().zip(r) {
                *a += b;
            }
        }

        for (row, de) in seq.rows().zip(&d_enc) {
            affine_backward(parts[Layout::ENC_W], row, de, enc_w, enc_b, None);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic, seed-free parameters and inputs shared with the
    /// reference computation below.
    fn fixed_net(embed: usize, hidden: usize, classes: usize) -> DynamicNet {
        let mut net = DynamicNet::zeros(DYNAMIC_WIDTH, embed, hidden, classes);
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            *p = 0.5 * (0.37 * i as f64).sin();
        }
        net
    }

    fn fixed_seq(t: usize) -> DynamicFeatureSequence {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|ti| {
                (0..DYNAMIC_WIDTH)
                    .map(|j| 0.3 * (1.3 * ti as f64 + 0.7 * j as f64).cos())
                    .collect()
            })
            .collect();
        DynamicFeatureSequence::from_rows(&rows).unwrap()
    }

    #[test]
    fn matches_scripted_gru_reference() {
        // Reference logits for E=2, G=2, C=3, T=3 computed with an
        // independent NumPy script (tests/oracles/gru_reference.py) implementing the gate equations in the
        // module docs on the same fixed parameters/inputs.
        const EXPECTED: [f64; 3] = [0.37337872375745174, 0.8132862227034394, 0.6156554480260563];
        let net = fixed_net(2, 2, 3);
        let logits = net.logits(&fixed_seq(3)).unwrap();
        for (got, want) in logits.iter().zip(EXPECTED) {
            assert!((got - want).abs() < 1e-12, "{logits:?}");
        }
    }

    #[test]
    fn single_step_is_deterministic() {
        let net = DynamicNet::new(4, 3, 2, 11);
        let seq = fixed_seq(1);
        assert_eq!(net.logits(&seq).unwrap(), net.logits(&seq).unwrap());
    }

    #[test]
    fn tied_directions_swap_under_reversal() {
        let mut net = DynamicNet::new(4, 3, 2, 5);
        net.tie_directions();
        let seq = fixed_seq(5);
        let (f, b) = net.final_states(&seq).unwrap();
        let (rf, rb) = net.final_states(&seq.reversed()).unwrap();
        assert_eq!(f, rb);
        assert_eq!(b, rf);
        // With T=1 both directions see the same single step.
        let (f1, b1) = net.final_states(&fixed_seq(1)).unwrap();
        assert_eq!(f1, b1);
    }

    #[test]
    fn width_and_emptiness_are_checked() {
        let net = DynamicNet::with_input(10, 2, 2, 2, 0);
        assert!(matches!(
            net.logits(&fixed_seq(2)),
            Err(NnError::DimensionMismatch {
                expected: 10,
                got: 52
            })
        ));
    }

    #[test]
    fn default_sizes() {
        let net = DynamicNet::new(DYNAMIC_EMBED, DYNAMIC_HIDDEN, 14, 0);
        assert_eq!(net.sizes(), vec![52, 32, 64, 14]);
        let logits = net.logits(&fixed_seq(20)).unwrap();
        assert_eq!(logits.len(), 14);
        assert!(logits.iter().all(|l| l.is_finite()));
    }
}
