//! Dataset → model training shared by the CLI and the daemon's retrain
//! endpoint.

use std::path::{Path, PathBuf};

use gestop_core::datasets::{
    dynamic_feature_set, encode_labels, label_list, parse_shrec, read_dynamic_dir, split,
    static_features, DatasetError, DynamicSample, StaticSample, DEFAULT_VAL_FRACTION,
};
use gestop_core::features::DynamicFeatureSequence;
use gestop_core::nn::{
    self, DynamicNet, EpochMetrics, Model, StaticNet, TrainConfig, TrainReport, DYNAMIC_EMBED,
    DYNAMIC_HIDDEN, STATIC_HIDDEN,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub train: TrainConfig,
    /// Fraction held out (stratified) for validation; the split uses
    /// `train.seed`.
    pub val_fraction: f64,
    pub static_hidden: usize,
    pub dynamic_embed: usize,
    pub dynamic_hidden: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            val_fraction: DEFAULT_VAL_FRACTION,
            static_hidden: STATIC_HIDDEN,
            dynamic_embed: DYNAMIC_EMBED,
            dynamic_hidden: DYNAMIC_HIDDEN,
        }
    }
}

impl TrainOptions {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.train.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }
}

pub struct Trained<N> {
    pub model: Model<N>,
    pub report: TrainReport,
    pub train_size: usize,
    pub val_size: usize,
}

impl<N> Trained<N> {
    pub fn val_accuracy(&self) -> Option<f64> {
        self.report.last().and_then(|m| m.val_accuracy)
    }
}

pub fn train_static(
    samples: &[StaticSample],
    opts: &TrainOptions,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Trained<StaticNet>, DatasetError> {
    let labels = label_list(samples.iter().map(|(_, l)| l.as_str()));
    let (train_set, val_set) = split(samples, opts.val_fraction, opts.train.seed)?;
    let xs = static_features(&train_set);
    let ys = encode_labels(&labels, train_set.iter().map(|(_, l)| l.as_str()))?;
    let vx = static_features(&val_set);
    let vy = encode_labels(&labels, val_set.iter().map(|(_, l)| l.as_str()))?;
    let x_refs: Vec<&[f64]> = xs.iter().map(|f| f.as_slice()).collect();
    let v_refs: Vec<&[f64]> = vx.iter().map(|f| f.as_slice()).collect();

    let mut net = StaticNet::new(opts.static_hidden, labels.len(), opts.train.seed);
    let report = nn::train(
        &mut net,
        &x_refs,
        &ys,
        Some((&v_refs, &vy)),
        &opts.train,
        on_epoch,
    )?;
    Ok(Trained {
        model: Model::new(labels, net)?,
        report,
        train_size: train_set.len(),
        val_size: val_set.len(),
    })
}

pub fn train_dynamic(
    samples: &[DynamicSample],
    opts: &TrainOptions,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Trained<DynamicNet>, DatasetError> {
    let labels = label_list(samples.iter().map(|(_, l)| l.as_str()));
    let (train_set, val_set) = split(samples, opts.val_fraction, opts.train.seed)?;
    let xs = dynamic_feature_set(&train_set)?;
    let ys = encode_labels(&labels, train_set.iter().map(|(_, l)| l.as_str()))?;
    let vx = dynamic_feature_set(&val_set)?;
    let vy = encode_labels(&labels, val_set.iter().map(|(_, l)| l.as_str()))?;
    let x_refs: Vec<&DynamicFeatureSequence> = xs.iter().collect();
    let v_refs: Vec<&DynamicFeatureSequence> = vx.iter().collect();

    let mut net = DynamicNet::new(
        opts.dynamic_embed,
        opts.dynamic_hidden,
        labels.len(),
        opts.train.seed,
    );
    let report = nn::train(
        &mut net,
        &x_refs,
        &ys,
        Some((&v_refs, &vy)),
        &opts.train,
        on_epoch,
    )?;
    Ok(Trained {
        model: Model::new(labels, net)?,
        report,
        train_size: train_set.len(),
        val_size: val_set.len(),
    })
}

/// Loads a dynamic dataset: a SHREC'17 root (recognised by its index file)
/// or a directory tree of replay files.
pub fn load_dynamic(path: &Path) -> Result<Vec<DynamicSample>, DatasetError> {
    if path.join("train_gestures.txt").is_file() {
        parse_shrec(path)
    } else {
        read_dynamic_dir(path)
    }
}

/// `static.model` → `static.metrics.csv`.
pub fn metrics_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("metrics.csv")
}

pub type StaticTrained = Trained<StaticNet>;
pub type DynamicTrained = Trained<DynamicNet>;

/// Saves the model and its per-epoch metrics next to it.
pub fn save_trained<N: nn::Network>(
    trained: &Trained<N>,
    out: &Path,
) -> Result<PathBuf, DatasetError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    nn::save_model(&trained.model, out)?;
    let metrics = metrics_path(out);
    std::fs::write(&metrics, trained.report.to_csv())?;
    Ok(metrics)
}
