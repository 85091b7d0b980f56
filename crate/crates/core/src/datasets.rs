//! Dataset recording and parsing, stratified splitting, and evaluation.
//!
//! Static datasets are headerless CSV files with rows
//! `x0,y0,z0,...,x20,y20,z20,<L|R>,<label>`. Dynamic datasets are directory
//! trees of replay files, one sequence per file, labelled by the header.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{dynamic_features, static_feature, DynamicFeatureSequence, StaticFeature};
use crate::model::{Handedness, KeypointFrame, NONE_LABEL, NUM_COORDS, NUM_LANDMARKS};
use crate::nn::{argmax, calibrated_softmax, CalibrationConfig, Model, Network, NnError};
use crate::recognizer::{Segment, Segmenter};
use crate::synth::FRAME_INTERVAL_MS;
use crate::wire::{ReplayFile, ReplayHeader, WireError};

pub const REPLAY_EXTENSION: &str = "replay";
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_SPLIT_SEED: u64 = 42;
/// Environment variable naming a local SHREC'17 copy.
pub const SHREC_DIR_ENV: &str = "GESTOP_SHREC_DIR";
pub const SHREC_JOINTS: usize = 22;
pub const SHREC_GESTURES: [&str; 14] = [
    "Grab",
    "Tap",
    "Expand",
    "Pinch",
    "Rotation CW",
    "Rotation CCW",
    "Swipe Right",
    "Swipe Left",
    "Swipe Up",
    "Swipe Down",
    "Swipe X",
    "Swipe +",
    "Swipe V",
    "Shake",
];
/// SHREC joint feeding each landmark; joint 1 (palm centre) is unused.
pub const SHREC_JOINT_MAP: [usize; NUM_LANDMARKS] = [
    0, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21,
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("sample count must be at least 1")]
    EmptyRequest,
    #[error("frame source ended after {got} of {wanted} frames")]
    SourceExhausted { wanted: usize, got: usize },
    #[error("SHREC index file not found: {0}")]
    MissingIndexFile(PathBuf),
    #[error("{path}:{line}: expected {expected} numbers, found {found}")]
    MalformedSkeletonLine {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: replay file has no label")]
    MissingLabel { path: PathBuf },
    #[error("{path}: {source}")]
    Replay { path: PathBuf, source: WireError },
    #[error("class '{label}' has {count} sample(s); stratified split needs at least 2")]
    ClassTooSmall { label: String, count: usize },
    #[error("validation fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("label '{0}' is not known to the model")]
    UnknownLabel(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `(frame, label)` rows; the frame carries handedness.
pub type StaticSample = (KeypointFrame, String);
pub type DynamicSample = (Vec<KeypointFrame>, String);
/// Train and validation halves of a labelled set.
pub type Split<T> = (Vec<(T, String)>, Vec<(T, String)>);

// Appends from different threads must not interleave rows.
static APPEND_LOCK: Mutex<()> = Mutex::new(());

fn append(path: &Path, text: &str) -> io::Result<()> {
    let _guard = APPEND_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()
}

pub fn static_csv_row(frame: &KeypointFrame, label: &str) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let mut fields: Vec<String> = frame.coords().iter().map(|c| c.to_string()).collect();
    fields.push(frame.handedness.as_char().to_string());
    fields.push(label.to_string());
    w.write_record(&fields).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

pub fn write_static_csv(path: impl AsRef<Path>, samples: &[StaticSample]) -> io::Result<()> {
    let text: String = samples.iter().map(|(f, l)| static_csv_row(f, l)).collect();
    fs::write(path, text)
}

/// Takes `n` frames from `source` and appends them under `label`.
/// Nothing is written unless all `n` frames arrive.
pub fn record_static<I>(
    path: impl AsRef<Path>,
    label: &str,
    source: I,
    n: usize,
) -> Result<usize, DatasetError>
where
    I: IntoIterator<Item = KeypointFrame>,
{
    if n == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    let frames: Vec<KeypointFrame> = source.into_iter().take(n).collect();
    if frames.len() < n {
        return Err(DatasetError::SourceExhausted {
            wanted: n,
            got: frames.len(),
        });
    }
    let text: String = frames.iter().map(|f| static_csv_row(f, label)).collect();
    append(path.as_ref(), &text)?;
    Ok(n)
}

pub fn read_static_csv(path: impl AsRef<Path>) -> Result<Vec<StaticSample>, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(i + 1);
        let bad = |reason: String| DatasetError::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        if record.len() != NUM_COORDS + 2 {
            return Err(bad(format!(
                "expected {} fields, found {}",
                NUM_COORDS + 2,
                record.len()
            )));
        }
        let coords = record
            .iter()
            .take(NUM_COORDS)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number '{s}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let hand = &record[NUM_COORDS];
        let handedness = hand
            .trim()
            .chars()
            .next()
            .filter(|_| hand.trim().len() == 1)
            .and_then(Handedness::from_char)
            .ok_or_else(|| bad(format!("bad handedness '{hand}'")))?;
        let label = record[NUM_COORDS + 1].to_string();
        if label.is_empty() {
            return Err(bad("empty label".into()));
        }
        let frame = KeypointFrame::from_coords(&coords, handedness, 0, false)
            .map_err(|e| bad(e.to_string()))?;
        out.push((frame, label));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> DatasetError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        kind => DatasetError::Parse {
            path: path.display().to_string(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes one sequence as `<root>/<label>/<NNNNN>.replay`, picking the next
/// free number.
pub fn save_sequence(
    root: impl AsRef<Path>,
    label: &str,
    frames: &[KeypointFrame],
) -> io::Result<PathBuf> {
    let _guard = APPEND_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let dir = root.as_ref().join(dir_name(label));
    fs::create_dir_all(&dir)?;
    let next = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == REPLAY_EXTENSION)
                .then(|| p.file_stem()?.to_str()?.parse::<u64>().ok())
                .flatten()
        })
        .max()
        .map_or(0, |m| m + 1);
    let path = dir.join(format!("{next:05}.{REPLAY_EXTENSION}"));
    let file = ReplayFile::new(
        ReplayHeader {
            label: Some(label.to_string()),
            fps: None,
        },
        frames.to_vec(),
    );
    file.save(&path)?;
    Ok(path)
}

/// Stores every maximal signal-on run of `source` as one sequence. Runs
/// shorter than `min_frames` are skipped. Returns the files written.
pub fn record_dynamic<I>(
    root: impl AsRef<Path>,
    label: &str,
    source: I,
    min_frames: usize,
) -> Result<Vec<PathBuf>, DatasetError>
where
    I: IntoIterator<Item = KeypointFrame>,
{
    let mut segmenter = Segmenter::new(min_frames);
    let mut written = Vec::new();
    let store = |seg: Segment, written: &mut Vec<PathBuf>| -> io::Result<()> {
        match seg {
            Segment::Complete(frames) => {
                written.push(save_sequence(root.as_ref(), label, &frames)?)
            }
            Segment::Discarded(n) => {
                log::warn!("skipping {n}-frame run for '{label}' (minimum {min_frames})")
            }
        }
        Ok(())
    };
    for frame in source {
        if let Some(seg) = segmenter.push(&frame) {
            store(seg, &mut written)?;
        }
    }
    if let Some(seg) = segmenter.finish() {
        store(seg, &mut written)?;
    }
    Ok(written)
}

/// Loads every `*.replay` file below `root`, in path order.
pub fn read_dynamic_dir(root: impl AsRef<Path>) -> Result<Vec<DynamicSample>, DatasetError> {
    let mut paths = Vec::new();
    collect_replays(root.as_ref(), &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let file = ReplayFile::read(&path).map_err(|source| DatasetError::Replay {
                path: path.clone(),
                source,
            })?;
            let label = file
                .header
                .label
                .ok_or(DatasetError::MissingLabel { path: path.clone() })?;
            if file.frames.is_empty() {
                return Err(DatasetError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    reason: "sequence has no frames".into(),
                });
            }
            Ok((file.frames, label))
        })
        .collect()
}

fn collect_replays(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_replays(&path, out)?;
        } else if path.extension().is_some_and(|e| e == REPLAY_EXTENSION) {
            out.push(path);
        }
    }
    Ok(())
}

/// One line of a skeleton file: 22 joints × (x, y, z) → a frame.
pub fn shrec_frame(line: &str, timestamp_ms: u64) -> Result<KeypointFrame, usize> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| 0usize)?;
    if values.len() != SHREC_JOINTS * 3 {
        return Err(values.len());
    }
    let mut coords = [0.0; NUM_COORDS];
    for (lm, &joint) in SHREC_JOINT_MAP.iter().enumerate() {
        coords[3 * lm..3 * lm + 3].copy_from_slice(&values[3 * joint..3 * joint + 3]);
    }
    KeypointFrame::from_coords(&coords, Handedness::Right, timestamp_ms, true)
        .map_err(|_| values.len())
}

pub fn read_shrec_skeleton(path: &Path) -> Result<Vec<KeypointFrame>, DatasetError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            shrec_frame(line, i as u64 * FRAME_INTERVAL_MS).map_err(|found| {
                DatasetError::MalformedSkeletonLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected: SHREC_JOINTS * 3,
                    found,
                }
            })
        })
        .collect()
}

/// Parses the SHREC'17 track: both index files (`train_gestures.txt`,
/// `test_gestures.txt`) and every sequence they list, using the 14-class
/// labels. Finger-only and whole-hand performances are both included.
pub fn parse_shrec(root: impl AsRef<Path>) -> Result<Vec<DynamicSample>, DatasetError> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for index in ["train_gestures.txt", "test_gestures.txt"] {
        let index_path = root.join(index);
        if !index_path.is_file() {
            return Err(DatasetError::MissingIndexFile(index_path));
        }
        let text = fs::read_to_string(&index_path)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| DatasetError::Parse {
                path: index_path.display().to_string(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("non-integer field"))?;
            if fields.len() < 5 {
                return Err(bad("expected at least 5 fields"));
            }
            let (gesture, finger, subject, essai, label14) =
                (fields[0], fields[1], fields[2], fields[3], fields[4]);
            let name = label14
                .checked_sub(1)
                .and_then(|k| SHREC_GESTURES.get(k))
                .ok_or_else(|| bad("14-class label out of range"))?;
            let skeleton = root
                .join(format!("gesture_{gesture}"))
                .join(format!("finger_{finger}"))
                .join(format!("subject_{subject}"))
                .join(format!("essai_{essai}"))
                .join("skeletons_world.txt");
            out.push((read_shrec_skeleton(&skeleton)?, name.to_string()));
        }
    }
    Ok(out)
}

/// Distinct labels with `none` first (if present), the rest sorted.
pub fn label_list<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = labels.into_iter().collect();
    let mut out: Vec<String> = Vec::with_capacity(set.len());
    if set.contains(NONE_LABEL) {
        out.push(NONE_LABEL.to_string());
    }
    out.extend(
        set.into_iter()
            .filter(|l| *l != NONE_LABEL)
            .map(String::from),
    );
    out
}

/// Stratified, seeded train/validation split. Each class contributes
/// `round(n * val_fraction)` samples to validation, clamped to `[1, n-1]`.
/// Both halves keep the input order.
pub fn split<T: Clone>(
    samples: &[(T, String)],
    val_fraction: f64,
    seed: u64,
) -> Result<Split<T>, DatasetError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(val_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in samples.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; samples.len()];
    for (label, mut idx) in by_class {
        let n = idx.len();
        if n < 2 {
            return Err(DatasetError::ClassTooSmall {
                label: label.to_string(),
                count: n,
            });
        }
        let k = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            in_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (sample, v) in samples.iter().zip(in_val) {
        if v { &mut val } else { &mut train }.push(sample.clone());
    }
    Ok((train, val))
}

/// Maps sample labels to indices in `labels`.
pub fn encode_labels<'a>(
    labels: &[String],
    sample_labels: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<usize>, DatasetError> {
    sample_labels
        .into_iter()
        .map(|l| {
            labels
                .iter()
                .position(|m| m == l)
                .ok_or_else(|| DatasetError::UnknownLabel(l.to_string()))
        })
        .collect()
}

pub fn static_features(samples: &[StaticSample]) -> Vec<StaticFeature> {
    samples.iter().map(|(f, _)| static_feature(f)).collect()
}

pub fn dynamic_feature_set(
    samples: &[DynamicSample],
) -> Result<Vec<DynamicFeatureSequence>, DatasetError> {
    samples
        .iter()
        .map(|(frames, _)| {
            dynamic_features(frames).map_err(|_| DatasetError::Model(NnError::EmptySequence))
        })
        .collect()
}

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// trace / total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("writing to memory");
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
    }
}

/// Confusion matrix over the model's full label list. Every dataset label
/// must be known to the model; the check runs before any prediction.
pub fn evaluate<N: Network>(
    model: &Model<N>,
    inputs: &[&N::Input],
    truths: &[&str],
    cal: Option<&CalibrationConfig>,
) -> Result<ConfusionMatrix, DatasetError> {
    if inputs.len() != truths.len() {
        return Err(NnError::DimensionMismatch {
            expected: truths.len(),
            got: inputs.len(),
        }
        .into());
    }
    let truth_idx = encode_labels(&model.labels, truths.iter().copied())?;
    let mut cm = ConfusionMatrix::new(model.labels.clone());
    for (x, t) in inputs.iter().zip(truth_idx) {
        let logits = model.net.logits(x)?;
        let predicted = match cal {
            Some(c) => calibrated_softmax(&logits, Some(c)).1,
            None => argmax(&logits),
        };
        cm.add(t, predicted);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::StaticNet;
    use crate::synth::{synth_dynamic, synth_static};

    fn frames(n: usize, seed: u64) -> Vec<KeypointFrame> {
        synth_static("fist", n, 0.01, seed).unwrap().frames
    }

    #[test]
    fn static_append_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("static.csv");
        assert!(matches!(
            record_static(&path, "Seven", frames(1, 0), 0),
            Err(DatasetError::EmptyRequest)
        ));
        let a = frames(10, 1);
        let b = frames(10, 2);
        record_static(&path, "Seven", a.clone(), 10).unwrap();
        record_static(&path, "Eight", b.clone(), 10).unwrap();
        let rows = read_static_csv(&path).unwrap();
        assert_eq!(rows.len(), 20);
        for (i, (frame, label)) in rows.iter().enumerate() {
            let (want, want_label) = if i < 10 {
                (&a[i], "Seven")
            } else {
                (&b[i - 10], "Eight")
            };
            assert_eq!(frame.coords(), want.coords());
            assert_eq!(frame.handedness, want.handedness);
            assert_eq!(label, want_label);
        }
        assert!(matches!(
            record_static(&path, "x", frames(3, 0), 5),
            Err(DatasetError::SourceExhausted { wanted: 5, got: 3 })
        ));
        assert_eq!(read_static_csv(&path).unwrap().len(), 20);
    }

    #[test]
    fn labels_with_commas_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        record_static(&path, "a, \"b\"", frames(2, 0), 2).unwrap();
        assert!(read_static_csv(&path)
            .unwrap()
            .iter()
            .all(|(_, l)| l == "a, \"b\""));
    }

    #[test]
    fn corrupt_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut text = static_csv_row(&frames(1, 0)[0], "ok");
        text.push_str("1,2,3,R,short\n");
        fs::write(&path, &text).unwrap();
        match read_static_csv(&path) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_hand = static_csv_row(&frames(1, 0)[0], "ok").replace(",R,", ",Q,");
        fs::write(&path, bad_hand).unwrap();
        assert!(matches!(
            read_static_csv(&path),
            Err(DatasetError::Parse { .. })
        ));
    }

    fn runs(lengths: &[usize]) -> Vec<KeypointFrame> {
        let mut out = Vec::new();
        let mut t = 0;
        for &len in lengths {
            for s in [false, true] {
                let n = if s { len } else { 3 };
                for _ in 0..n {
                    out.push(KeypointFrame::zeroed(Handedness::Right, t).with_signal(s));
                    t += 33;
                }
            }
        }
        out
    }

    #[test]
    fn dynamic_recording() {
        let dir = tempfile::tempdir().unwrap();
        let written = record_dynamic(dir.path(), "Circle", runs(&[12, 4, 15, 10]), 10).unwrap();
        assert_eq!(written.len(), 3);
        let more = record_dynamic(dir.path(), "Swipe +", runs(&[11]), 10).unwrap();
        assert_eq!(more.len(), 1);
        let data = read_dynamic_dir(dir.path()).unwrap();
        let lens: Vec<(usize, &str)> = data.iter().map(|(f, l)| (f.len(), l.as_str())).collect();
        assert_eq!(
            lens,
            vec![
                (12, "Circle"),
                (15, "Circle"),
                (10, "Circle"),
                (11, "Swipe +")
            ]
        );
    }

    #[test]
    fn open_run_at_end_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let src: Vec<_> = (0..12)
            .map(|t| KeypointFrame::zeroed(Handedness::Left, t).with_signal(true))
            .collect();
        assert_eq!(record_dynamic(dir.path(), "x", src, 10).unwrap().len(), 1);
    }

    fn write_shrec_sequence(root: &Path, ids: [usize; 4], lines: &[String]) {
        let dir = root
            .join(format!("gesture_{}", ids[0]))
            .join(format!("finger_{}", ids[1]))
            .join(format!("subject_{}", ids[2]))
            .join(format!("essai_{}", ids[3]));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("skeletons_world.txt"), lines.join("\n")).unwrap();
    }

    fn shrec_line(base: f64) -> String {
        (0..66)
            .map(|i| format!("{}", base + i as f64))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn shrec_mini_tree() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        assert!(matches!(
            parse_shrec(root),
            Err(DatasetError::MissingIndexFile(_))
        ));
        write_shrec_sequence(
            root,
            [1, 1, 1, 1],
            &[shrec_line(0.0), shrec_line(100.0), shrec_line(200.0)],
        );
        write_shrec_sequence(root, [12, 2, 3, 1], &[shrec_line(0.0)]);
        fs::write(root.join("train_gestures.txt"), "1 1 1 1 1 1 3\n").unwrap();
        fs::write(root.join("test_gestures.txt"), "12 2 3 1 12 24 1\n").unwrap();
        let data = parse_shrec(root).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].1, "Grab");
        assert_eq!(data[1].1, "Swipe +");
        let seq = &data[0].0;
        assert_eq!(seq.len(), 3);
        // Palm joint (values 3..6) is dropped; landmark 1 comes from joint 2.
        assert_eq!(seq[0].landmark(0).x, 0.0);
        assert_eq!(seq[0].landmark(1).x, 6.0);
        assert_eq!(seq[1].landmark(20).z, 100.0 + 65.0);
        assert!(seq
            .iter()
            .all(|f| f.signal && f.handedness == Handedness::Right));
        assert_eq!(seq[2].timestamp_ms, 2 * FRAME_INTERVAL_MS);
    }

    #[test]
    fn shrec_short_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let short: Vec<String> = (0..65).map(|i| i.to_string()).collect();
        fs::write(&path, format!("{}\n{}\n", shrec_line(0.0), short.join(" "))).unwrap();
        match read_shrec_skeleton(&path) {
            Err(DatasetError::MalformedSkeletonLine { line, found, .. }) => {
                assert_eq!((line, found), (2, 65))
            }
            other => panic!("{other:?}"),
        }
    }

    fn labelled(per_class: &[(&str, usize)]) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (label, n) in per_class {
            for _ in 0..*n {
                out.push((out.len(), label.to_string()));
            }
        }
        out
    }

    #[test]
    fn split_is_stratified_partition() {
        let data = labelled(&[("a", 100), ("b", 100), ("c", 7)]);
        let (train, val) = split(&data, 0.2, 42).unwrap();
        let count = |v: &[(usize, String)], l: &str| v.iter().filter(|(_, x)| x == l).count();
        assert_eq!((count(&train, "a"), count(&val, "a")), (80, 20));
        assert_eq!((count(&train, "b"), count(&val, "b")), (80, 20));
        assert_eq!(count(&val, "c"), 1);
        let mut ids: Vec<usize> = train.iter().chain(&val).map(|(i, _)| *i).collect();
        ids.sort();
        assert_eq!(ids, (0..data.len()).collect::<Vec<_>>());
        assert_eq!(split(&data, 0.2, 42).unwrap(), (train, val));
        assert_ne!(
            split(&data, 0.2, 43).unwrap().1,
            split(&data, 0.2, 42).unwrap().1
        );
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split(&labelled(&[("a", 5), ("b", 1)]), 0.2, 0),
            Err(DatasetError::ClassTooSmall { count: 1, .. })
        ));
        assert!(matches!(
            split(&labelled(&[("a", 5)]), 1.0, 0),
            Err(DatasetError::InvalidFraction(_))
        ));
        assert!(matches!(
            split(&labelled(&[("a", 5)]), 0.0, 0),
            Err(DatasetError::InvalidFraction(_))
        ));
    }

    #[test]
    fn label_list_puts_none_first() {
        assert_eq!(label_list(["b", "none", "a", "b"]), vec!["none", "a", "b"]);
        assert_eq!(label_list(["z", "y"]), vec!["y", "z"]);
    }

    /// A static model whose prediction is fixed by input[0]: logit c = x0 * w_c.
    fn probe_model() -> Model<StaticNet> {
        let mut net = StaticNet::zeros(49, 1, 2);
        let p = net.params_mut();
        p[0] = 1.0; // w1[0][0]
        p[49 + 1] = -1.0; // w2[a]
        p[49 + 2] = 1.0; // w2[b]
        Model::new(vec!["a".into(), "b".into()], net).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        let model = probe_model();
        let mut xs = vec![vec![0.0; 49]; 3];
        xs[1][0] = 1.0;
        xs[2][0] = 1.0;
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let cm = evaluate(&model, &refs, &["a", "a", "b"], None).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.total(), 3);
        assert_eq!(cm.accuracy(), 2.0 / 3.0);
        assert_eq!(cm.row_sum(0), 2);
        assert_eq!(cm.to_csv(), ",a,b\na,1,1\nb,0,1\n");
        assert!(matches!(
            evaluate(&model, &refs, &["a", "a", "zzz"], None),
            Err(DatasetError::UnknownLabel(l)) if l == "zzz"
        ));
    }

    #[test]
    fn dynamic_dir_round_trip_through_features() {
        let dir = tempfile::tempdir().unwrap();
        let seq = synth_dynamic("circle", 20, 0.0, 1).unwrap().frames;
        save_sequence(dir.path(), "circle", &seq).unwrap();
        let back = read_dynamic_dir(dir.path()).unwrap();
        assert_eq!(back[0].0, seq);
        assert_eq!(dynamic_feature_set(&back).unwrap()[0].len(), 20);
    }
}
