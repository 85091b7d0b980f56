//! Messages streamed to dashboard subscribers over `/events`.

use gestop_core::model::{EventPayload, GestureEvent, KeypointFrame};
use gestop_core::nn::EpochMetrics;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WsEvent {
    Frame {
        landmarks: Vec<[f64; 3]>,
        handedness: String,
        signal: bool,
        ts: u64,
    },
    Gesture {
        name: String,
        kind: String,
        confidence: f64,
        ts: u64,
    },
    Cursor {
        x: i32,
        y: i32,
        ts: u64,
    },
    Training {
        kind: String,
        epoch: usize,
        loss: f64,
        val_acc: Option<f64>,
    },
    Status(Status),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub frames_processed: u64,
    pub malformed_records: u64,
    pub dropped_events: u64,
    pub signal_on: bool,
    pub recording: Option<RecordingStatus>,
    pub retraining: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingStatus {
    pub kind: String,
    pub label: String,
    pub count: usize,
}

impl WsEvent {
    pub fn frame(frame: &KeypointFrame) -> Self {
        WsEvent::Frame {
            landmarks: frame.landmarks().iter().map(|p| [p.x, p.y, p.z]).collect(),
            handedness: frame.handedness.as_char().to_string(),
            signal: frame.signal,
            ts: frame.timestamp_ms,
        }
    }

    pub fn from_event(event: &GestureEvent) -> Self {
        match &event.payload {
            EventPayload::CursorMove { x_px, y_px } => WsEvent::Cursor {
                x: *x_px,
                y: *y_px,
                ts: event.timestamp_ms,
            },
            EventPayload::Gesture(label) => WsEvent::Gesture {
                name: label.name.clone(),
                kind: label.kind.to_string(),
                confidence: event.confidence,
                ts: event.timestamp_ms,
            },
        }
    }

    pub fn training(kind: &str, m: &EpochMetrics) -> Self {
        WsEvent::Training {
            kind: kind.to_string(),
            epoch: m.epoch,
            loss: m.loss,
            val_acc: m.val_accuracy,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gestop_core::model::Handedness;

    #[test]
    fn wire_shapes() {
        let f = KeypointFrame::zeroed(Handedness::Left, 7).with_signal(true);
        let v: serde_json::Value = serde_json::from_str(&WsEvent::frame(&f).to_json()).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["landmarks"].as_array().unwrap().len(), 21);
        assert_eq!(v["handedness"], "L");
        assert_eq!(v["signal"], true);

        let v: serde_json::Value =
            serde_json::from_str(&WsEvent::from_event(&GestureEvent::cursor(1, 2, 3)).to_json())
                .unwrap();
        assert_eq!(
            (v["type"].as_str(), v["x"].as_i64(), v["y"].as_i64()),
            (Some("cursor"), Some(1), Some(2))
        );

        let v: serde_json::Value =
            serde_json::from_str(&WsEvent::Status(Status::default()).to_json()).unwrap();
        assert_eq!(v["type"], "status");
        assert_eq!(v["frames_processed"], 0);
    }
}
