mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use futures_util::StreamExt;
use gestop::DaemonHandle;
use gestop_core::executor::{LoggingSink, SinkCall};
use gestop_core::ingress::send_replay;
use gestop_core::wire::Speed;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

const WAIT: Duration = Duration::from_secs(20);

struct Fixture {
    _dir: tempfile::TempDir,
    daemon: Option<DaemonHandle>,
    sink: Arc<LoggingSink>,
    http: reqwest::blocking::Client,
    log: std::path::PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = daemon_config(dir.path(), MAPPING);
        let log = cfg.dispatch_log.clone().unwrap();
        let sink = Arc::new(LoggingSink::new());
        let daemon = DaemonHandle::start(cfg, sink.clone()).unwrap();
        Self {
            _dir: dir,
            daemon: Some(daemon),
            sink,
            http: reqwest::blocking::Client::new(),
            log,
        }
    }

    fn daemon(&self) -> &DaemonHandle {
        self.daemon.as_ref().unwrap()
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.daemon().control_addr())
    }

    fn processed(&self) -> u64 {
        self.status()["frames_processed"].as_u64().unwrap()
    }

    fn status(&self) -> Value {
        self.http
            .get(self.url("/status"))
            .send()
            .unwrap()
            .json()
            .unwrap()
    }

    fn send(&self, file: &gestop_core::wire::ReplayFile) {
        let before = self.processed();
        send_replay(self.daemon().ingress_addr(), file, Speed::Max).unwrap();
        let want = before + file.len() as u64;
        wait_until("frames processed", WAIT, || self.processed() >= want);
    }

    fn post(&self, path: &str, body: Value) -> reqwest::blocking::Response {
        self.http.post(self.url(path)).json(&body).send().unwrap()
    }

    fn stop(&mut self) -> Vec<Value> {
        self.daemon.take().unwrap().shutdown().unwrap();
        read_dispatch_log(&self.log)
    }
}

#[test]
fn replayed_frames_become_ordered_cursor_records() {
    let mut fx = Fixture::new();
    let file = concat(&[pose("open_palm", 100, 1)]);
    fx.send(&file);
    let log = fx.stop();
    let cursors: Vec<&Value> = log.iter().filter(|r| r["gesture"] == "cursor").collect();
    assert!(cursors.len() >= 100, "{}", cursors.len());
    let ts: Vec<u64> = cursors.iter().map(|r| r["ts"].as_u64().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    let moves = fx
        .sink
        .calls()
        .iter()
        .filter(|c| matches!(c, SinkCall::MoveCursor { .. }))
        .count();
    assert_eq!(moves, 100);
}

#[test]
fn static_gesture_dispatches_mapped_action() {
    let mut fx = Fixture::new();
    fx.send(&concat(&[pose("fist", 30, 2)]));
    let log = fx.stop();
    let fists: Vec<&Value> = log.iter().filter(|r| r["gesture"] == "fist").collect();
    assert_eq!(fists.len(), 1, "{log:?}");
    assert_eq!(fists[0]["target"], "take_screenshot");
    assert!(fx.sink.calls().contains(&SinkCall::TakeScreenshot));
}

#[test]
fn mapping_swap_takes_effect_and_bad_tables_are_rejected() {
    let mut fx = Fixture::new();
    let original: Value = fx
        .http
        .get(fx.url("/config"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(original["fist"], json!(["py", "take_screenshot"]));

    let rejected = fx
        .http
        .put(fx.url("/config"))
        .body(r#"{"fist": ["rb", "x"]}"#)
        .send()
        .unwrap();
    assert_eq!(rejected.status(), 400);
    assert!(rejected.text().unwrap().contains("rb"));
    let unchanged: Value = fx
        .http
        .get(fx.url("/config"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(unchanged, original);

    let swapped = r#"{"fist": ["py", "no_func"], "open_palm": ["py", "take_screenshot"]}"#;
    let resp = fx.http.put(fx.url("/config")).body(swapped).send().unwrap();
    assert_eq!(resp.status(), 200);
    let now: Value = fx
        .http
        .get(fx.url("/config"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(now["open_palm"], json!(["py", "take_screenshot"]));

    fx.send(&concat(&[pose("open_palm", 20, 3), pose("fist", 20, 4)]));
    let log = fx.stop();
    let gestures: Vec<(String, String)> = log
        .iter()
        .filter(|r| r["gesture"] != "cursor")
        .map(|r| {
            (
                r["gesture"].as_str().unwrap().into(),
                r["outcome"].as_str().unwrap().into(),
            )
        })
        .collect();
    assert_eq!(
        gestures,
        vec![
            ("open_palm".into(), "ok".into()),
            ("fist".into(), "noop".into())
        ]
    );
    // The new table was persisted for the next start.
    let saved = std::fs::read_to_string(fx._dir.path().join("mapping.json")).unwrap();
    assert!(saved.contains("take_screenshot") && saved.contains("no_func"));
}

#[test]
fn dynamic_gestures_and_labels() {
    let mut fx = Fixture::new();
    let labels: Value = fx
        .http
        .get(fx.url("/labels"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(labels["static"]
        .as_array()
        .unwrap()
        .contains(&json!("none")));
    assert!(labels["dynamic"]
        .as_array()
        .unwrap()
        .contains(&json!("swipe_up")));

    fx.send(&signal_runs("swipe_up", 3, 20));
    let log = fx.stop();
    let dynamic: Vec<&Value> = log
        .iter()
        .filter(|r| r["gesture"].as_str().unwrap().starts_with("swipe") || r["gesture"] == "circle")
        .collect();
    assert_eq!(dynamic.len(), 3, "{log:?}");
    assert!(
        dynamic.iter().all(|r| r["gesture"] == "swipe_up"),
        "{dynamic:?}"
    );
}

#[test]
fn signal_endpoint_marks_frames() {
    let mut fx = Fixture::new();
    for bad in ["sideways", ""] {
        assert_eq!(
            fx.http
                .post(fx.url("/signal"))
                .body(bad)
                .send()
                .unwrap()
                .status(),
            400
        );
    }
    assert_eq!(
        fx.http
            .post(fx.url("/signal"))
            .body("on")
            .send()
            .unwrap()
            .status(),
        200
    );
    assert_eq!(fx.status()["signal_on"], true);
    // Producer frames carry no signal; the override turns them into a run.
    let mut unmarked = motion("swipe_down", 20, 5);
    for f in &mut unmarked {
        f.signal = false;
    }
    fx.send(&concat(&[unmarked]));
    assert_eq!(fx.post("/signal", json!({"on": false})).status(), 200);
    fx.send(&concat(&[pose("open_palm", 3, 6)]));
    let log = fx.stop();
    assert!(log.iter().any(|r| r["gesture"] == "swipe_down"), "{log:?}");
}

#[test]
fn recording_errors() {
    let fx = Fixture::new();
    assert_eq!(fx.post("/record/stop", json!({})).status(), 409);
    assert_eq!(
        fx.post("/record/start", json!({"kind": "static", "label": "  "}))
            .status(),
        400
    );
    assert_eq!(
        fx.post("/record/start", json!({"kind": "wiggle", "label": "x"}))
            .status(),
        400
    );
    assert_eq!(
        fx.post("/record/start", json!({"kind": "static", "label": "Seven"}))
            .status(),
        200
    );
    assert_eq!(
        fx.post("/record/start", json!({"kind": "static", "label": "Eight"}))
            .status(),
        409
    );
    assert_eq!(
        fx.post("/retrain", json!({"kind": "sideways"})).status(),
        400
    );
}

#[test]
fn record_static_then_retrain_adds_label() {
    let fx = Fixture::new();
    // Seed the dataset with the existing classes so retraining keeps them.
    let data = gestop_core::synth::static_dataset(40, 0.01, 11).unwrap();
    let csv = fx.daemon().shared().config.static_data();
    std::fs::create_dir_all(csv.parent().unwrap()).unwrap();
    gestop_core::datasets::write_static_csv(&csv, &data).unwrap();

    assert_eq!(
        fx.post("/record/start", json!({"kind": "static", "label": "Seven"}))
            .status(),
        200
    );
    let seven: Vec<_> = pose("peace", 40, 12)
        .into_iter()
        .map(|f| f.with_handedness(gestop_core::model::Handedness::Left))
        .collect();
    fx.send(&concat(&[seven]));
    let stopped: Value = fx.post("/record/stop", json!({})).json().unwrap();
    assert_eq!(stopped["count"], 40);
    assert_eq!(
        gestop_core::datasets::read_static_csv(&csv).unwrap().len(),
        data.len() + 40
    );

    let resp = fx.post("/retrain", json!({"kind": "static"}));
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["epochs"], 8);
    let labels: Value = fx
        .http
        .get(fx.url("/labels"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(
        labels["static"]
            .as_array()
            .unwrap()
            .contains(&json!("Seven")),
        "{labels}"
    );
    assert!(fx
        .daemon()
        .shared()
        .config
        .static_model
        .with_extension("metrics.csv")
        .exists());
}

#[test]
fn record_dynamic_then_retrain_over_websocket() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    let url = format!("ws://{}/events", fx.daemon().control_addr());
    let (mut ws, _) = rt.block_on(tokio_tungstenite::connect_async(url)).unwrap();
    let first: Value = match rt.block_on(ws.next()).unwrap().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(first["type"], "status");

    // Existing dynamic classes plus a new "Circle" recorded live.
    let root = fx.daemon().shared().config.dynamic_data();
    for (frames, label) in gestop_core::synth::dynamic_dataset(6, 15..=20, 0.003, 3).unwrap() {
        if label != "circle" {
            gestop_core::datasets::save_sequence(&root, &label, &frames).unwrap();
        }
    }
    assert_eq!(
        fx.post(
            "/record/start",
            json!({"kind": "dynamic", "label": "Circle"})
        )
        .status(),
        200
    );
    fx.send(&signal_runs("circle", 4, 20));
    let stopped: Value = fx.post("/record/stop", json!({})).json().unwrap();
    assert_eq!(stopped["count"], 4);

    let resp = fx.post("/retrain", json!({"kind": "dynamic"}));
    assert_eq!(resp.status(), 200, "{:?}", resp.text());
    let labels: Value = fx
        .http
        .get(fx.url("/labels"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(
        labels["dynamic"]
            .as_array()
            .unwrap()
            .contains(&json!("Circle")),
        "{labels}"
    );

    // Frame, cursor, status and training messages all reached the subscriber.
    let mut seen = std::collections::BTreeSet::new();
    let mut training_epochs = 0;
    let deadline = Instant::now() + WAIT;
    while training_epochs < 8 && Instant::now() < deadline {
        let msg =
            rt.block_on(async { tokio::time::timeout(Duration::from_secs(5), ws.next()).await });
        let Ok(Some(Ok(Message::Text(t)))) = msg else {
            break;
        };
        let v: Value = serde_json::from_str(&t).unwrap();
        if v["type"] == "training" {
            training_epochs += 1;
            assert!(v["loss"].as_f64().unwrap().is_finite());
        }
        seen.insert(v["type"].as_str().unwrap().to_string());
    }
    assert_eq!(training_epochs, 8);
    for kind in ["frame", "cursor", "status", "training"] {
        assert!(seen.contains(kind), "missing {kind}: {seen:?}");
    }
}

#[test]
fn stalled_subscriber_does_not_slow_frames() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    let url = format!("ws://{}/events", fx.daemon().control_addr());
    // Connected but never read from.
    let (_ws, _) = rt.block_on(tokio_tungstenite::connect_async(url)).unwrap();
    let file = concat(&[pose("open_palm", 5000, 8)]);
    let start = Instant::now();
    fx.send(&file);
    assert!(start.elapsed() < Duration::from_secs(15));
    assert_eq!(fx.processed(), 5000);
}

#[test]
fn shutdown_drains_queue_and_flushes() {
    let mut fx = Fixture::new();
    send_replay(
        fx.daemon().ingress_addr(),
        &concat(&[pose("open_palm", 200, 9)]),
        Speed::Max,
    )
    .unwrap();
    let log = fx.stop();
    assert_eq!(log.iter().filter(|r| r["gesture"] == "cursor").count(), 200);
}
