#![allow(dead_code)]

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gestop::training::{save_trained, train_dynamic, train_static, TrainOptions};
use gestop::DaemonConfig;
use gestop_core::model::KeypointFrame;
use gestop_core::recognizer::RecognizerConfig;
use gestop_core::synth;
use gestop_core::wire::{ReplayFile, ReplayHeader};

/// Small networks so retraining in tests takes seconds.
pub fn quick_options() -> TrainOptions {
    let mut opts = TrainOptions::default().with_epochs(8);
    opts.static_hidden = 32;
    opts.dynamic_embed = 8;
    opts.dynamic_hidden = 8;
    opts
}

/// Trains a static model on the synthetic poses and a dynamic model on the
/// synthetic templates, writing them to `dir`.
pub fn train_fixture_models(dir: &Path) -> (PathBuf, PathBuf) {
    let mut opts = TrainOptions::default().with_epochs(30);
    opts.train.batch_size = 16;
    opts.dynamic_embed = 16;
    opts.dynamic_hidden = 16;
    let static_path = dir.join("static.model");
    let data = synth::static_dataset(300, 0.01, 7).unwrap();
    let trained = train_static(&data, &opts, |_| {}).unwrap();
    assert!(trained.val_accuracy().unwrap() > 0.97);
    save_trained(&trained, &static_path).unwrap();

    let dynamic_path = dir.join("dynamic.model");
    let data = synth::dynamic_dataset(40, 15..=25, 0.003, 7).unwrap();
    let trained = train_dynamic(&data, &opts, |_| {}).unwrap();
    assert!(
        trained.val_accuracy().unwrap() > 0.95,
        "{:?}",
        trained.val_accuracy()
    );
    save_trained(&trained, &dynamic_path).unwrap();
    (static_path, dynamic_path)
}

/// Fixture models, trained once per test binary and copied into `dir`.
pub fn fixture_models(dir: &Path) -> (PathBuf, PathBuf) {
    static TRAINED: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    let (_keep, s, d) = TRAINED.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let (s, d) = train_fixture_models(tmp.path());
        (tmp, s, d)
    });
    let (s_out, d_out) = (dir.join("static.model"), dir.join("dynamic.model"));
    std::fs::copy(s, &s_out).unwrap();
    std::fs::copy(d, &d_out).unwrap();
    (s_out, d_out)
}

pub const MAPPING: &str = r#"{
    "fist": ["py", "take_screenshot"],
    "open_palm": ["py", "no_func"],
    "point": ["py", "mouse_left_click"],
    "swipe_up": ["py", "scroll_up"],
    "swipe_down": ["py", "scroll_down"]
}"#;

/// A daemon configuration rooted in `dir` with ephemeral ports.
pub fn daemon_config(dir: &Path, mapping: &str) -> DaemonConfig {
    let (s, d) = fixture_models(dir);
    std::fs::write(dir.join("mapping.json"), mapping).unwrap();
    let mut cfg = DaemonConfig::from_home(dir);
    cfg.ingress_addr = SocketAddr::from((Ipv4Addr::LOCALHOST, 0));
    cfg.control_addr = SocketAddr::from((Ipv4Addr::LOCALHOST, 0));
    cfg.static_model = s;
    cfg.dynamic_model = d;
    cfg.recognizer = RecognizerConfig::default();
    cfg.training = quick_options();
    cfg
}

pub fn wait_until(what: &str, timeout: Duration, mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + timeout;
    while !cond() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(10));
    }
}

/// Concatenates streams, renumbering timestamps at 33 ms spacing.
pub fn concat(parts: &[Vec<KeypointFrame>]) -> ReplayFile {
    let frames = parts
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, f)| f.with_timestamp(i as u64 * synth::FRAME_INTERVAL_MS))
        .collect();
    ReplayFile::new(ReplayHeader::default(), frames)
}

pub fn pose(name: &str, n: usize, seed: u64) -> Vec<KeypointFrame> {
    synth::synth_static(name, n, 0.005, seed).unwrap().frames
}

pub fn motion(template: &str, n: usize, seed: u64) -> Vec<KeypointFrame> {
    synth::synth_dynamic(template, n, 0.003, seed)
        .unwrap()
        .frames
}

/// `runs` signal-marked performances of `template`, separated by idle
/// open-palm frames.
pub fn signal_runs(template: &str, runs: usize, len: usize) -> ReplayFile {
    let mut parts = Vec::new();
    for r in 0..runs {
        parts.push(pose("open_palm", 4, 100 + r as u64));
        parts.push(motion(template, len, r as u64));
    }
    parts.push(pose("open_palm", 4, 99));
    concat(&parts)
}

pub fn read_dispatch_log(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
