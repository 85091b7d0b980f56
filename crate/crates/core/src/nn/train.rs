use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Network, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 42,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs < 1 {
            return Err(NnError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }

    /// CSV with header `epoch,loss,val_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_accuracy\n");
        for m in &self.history {
            let val = m.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", m.epoch, m.loss, val));
        }
        out
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct OptState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Adam => (vec![0.0; n], vec![0.0; n]),
            Optimizer::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            lr,
            m,
            v,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Fraction of `xs` whose argmax logit equals the target.
pub fn accuracy<N: Network>(net: &N, xs: &[&N::Input], ys: &[usize]) -> Result<f64, NnError> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        if argmax(&net.logits(x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// Mini-batch training on mean cross-entropy.
///
/// Sample order is reshuffled each epoch from `cfg.seed`, so two runs with
/// the same inputs produce identical weights. `on_epoch` observes the
/// metrics as each epoch completes.
pub fn train<N: Network>(
    net: &mut N,
    xs: &[&N::Input],
    ys: &[usize],
    val: Option<(&[&N::Input], &[usize])>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport, NnError> {
    cfg.validate()?;
    if xs.len() != ys.len() {
        return Err(NnError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let classes = net.num_classes();
    if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut seen = vec![false; classes];
    ys.iter().for_each(|&y| seen[y] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(NnError::SingleClassData);
    }

    let n_params = net.params().len();
    let mut opt = OptState::new(cfg.optimizer, cfg.learning_rate, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                total_loss += net.backprop(xs[i], ys[i], &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(net.params_mut(), &grad);
        }
        for (x, &y) in xs.iter().zip(ys) {
            if argmax(&net.logits(x)?) == y {
                correct += 1;
            }
        }
        let val_accuracy = match val {
            Some((vx, vy)) if !vx.is_empty() => Some(accuracy(net, vx, vy)?),
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch,
            loss: total_loss / xs.len() as f64,
            train_accuracy: correct as f64 / xs.len() as f64,
            val_accuracy,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train_acc {:.4}",
            metrics.loss,
            metrics.train_accuracy
        );
        on_epoch(&metrics);
        report.history.push(metrics);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DynamicFeatureSequence, DYNAMIC_WIDTH};
    use crate::nn::{DynamicNet, StaticNet};
    use rand::Rng;

    /// Two Gaussian blobs in 49-D, separated along every axis.
    fn clusters(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let center = if y == 0 { -0.5 } else { 0.5 };
            xs.push((0..49).map(|_| center + rng.gen_range(-0.3..0.3)).collect());
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn separable_clusters_reach_full_accuracy() {
        let (xs, ys) = clusters(200, 1);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut net = StaticNet::new(16, 2, 3);
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let mut first_full = None;
        let report = train(&mut net, &refs, &ys, None, &cfg, |m| {
            if m.train_accuracy == 1.0 && first_full.is_none() {
                first_full = Some(m.epoch);
            }
        })
        .unwrap();
        assert!(first_full.is_some());
        assert_eq!(report.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn same_seed_same_weights() {
        let (xs, ys) = clusters(60, 2);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..Default::default()
        };
        let run = || {
            let mut net = StaticNet::new(8, 2, cfg.seed);
            train(&mut net, &refs, &ys, None, &cfg, |_| {}).unwrap();
            net
        };
        assert_eq!(run().params(), run().params());
    }

    #[test]
    fn sgd_overfit_loss_is_non_increasing() {
        let (xs, ys) = clusters(10, 3);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut net = StaticNet::new(8, 2, 4);
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 10,
            learning_rate: 0.01,
            seed: 1,
            optimizer: Optimizer::Sgd,
        };
        let report = train(&mut net, &refs, &ys, None, &cfg, |_| {}).unwrap();
        for w in report.history.windows(2) {
            assert!(
                w[1].loss <= w[0].loss + 1e-6,
                "{} -> {}",
                w[0].loss,
                w[1].loss
            );
        }
        assert!(report.last().unwrap().loss < report.history[0].loss);
    }

    #[test]
    fn rejects_single_class_and_bad_config() {
        let xs = [vec![0.0; 49], vec![1.0; 49]];
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut net = StaticNet::new(4, 2, 0);
        assert!(matches!(
            train(
                &mut net,
                &refs,
                &[1, 1],
                None,
                &TrainConfig::default(),
                |_| {}
            ),
            Err(NnError::SingleClassData)
        ));
        assert!(matches!(
            train(
                &mut net,
                &refs,
                &[0, 2],
                None,
                &TrainConfig::default(),
                |_| {}
            ),
            Err(NnError::LabelOutOfRange { .. })
        ));
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                train(&mut net, &refs, &[0, 1], None, &bad, |_| {}),
                Err(NnError::InvalidConfig(_))
            ));
        }
        let short = [vec![0.0; 48], vec![0.0; 48]];
        let refs: Vec<&[f64]> = short.iter().map(Vec::as_slice).collect();
        assert!(matches!(
            train(
                &mut net,
                &refs,
                &[0, 1],
                None,
                &TrainConfig::default(),
                |_| {}
            ),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_epochs() {
        assert_eq!(TrainConfig::default().epochs, 50);
        assert_eq!(TrainConfig::default().optimizer, Optimizer::Adam);
    }

    #[test]
    fn dynamic_net_learns_direction() {
        // Class 0: first column rises over time; class 1: it falls.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seqs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let t = rng.gen_range(4..8);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|k| {
                    let mut r = vec![0.0; DYNAMIC_WIDTH];
                    let s = k as f64 / t as f64;
                    r[0] = if y == 0 { s } else { 1.0 - s };
                    r[5] = rng.gen_range(-0.05..0.05);
                    r
                })
                .collect();
            seqs.push(DynamicFeatureSequence::from_rows(&rows).unwrap());
            ys.push(y);
        }
        let refs: Vec<&DynamicFeatureSequence> = seqs.iter().collect();
        let mut net = DynamicNet::new(8, 8, 2, 1);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let report = train(&mut net, &refs, &ys, Some((&refs, &ys)), &cfg, |_| {}).unwrap();
        assert_eq!(report.last().unwrap().val_accuracy, Some(1.0));
    }

    #[test]
    fn metrics_csv() {
        let r = TrainReport {
            history: vec![EpochMetrics {
                epoch: 1,
                loss: 0.5,
                train_accuracy: 0.9,
                val_accuracy: Some(0.75),
            }],
        };
        assert_eq!(r.to_csv(), "epoch,loss,val_accuracy\n1,0.5,0.75\n");
    }
}
