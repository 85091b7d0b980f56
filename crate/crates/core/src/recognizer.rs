//! Streaming recognizer: per-frame static classification with debouncing,
//! signal-delimited dynamic segments, and fingertip cursor tracking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{dynamic_features, static_feature};
use crate::model::{
    landmark, validate_label_set, GestureEvent, GestureKind, GestureLabel, KeypointFrame,
    LabelSetError, NONE_LABEL,
};
use crate::nn::{
    argmax, calibrated_softmax, softmax, CalibrationConfig, DynamicModel, Network, NnError,
    StaticModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    /// Consecutive identical static classifications needed to emit an event.
    pub stability_frames: usize,
    /// Shorter signal-on runs are discarded.
    pub min_segment_frames: usize,
    /// Cursor smoothing factor in `(0, 1]`.
    pub ema_alpha: f64,
    pub screen_width: u32,
    pub screen_height: u32,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            stability_frames: 5,
            min_segment_frames: 10,
            ema_alpha: 0.5,
            screen_width: 1920,
            screen_height: 1080,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("invalid recognizer configuration: {0}")]
    InvalidConfig(String),
    #[error("static model labels: {0}")]
    Labels(#[from] LabelSetError),
    #[error(transparent)]
    Model(#[from] NnError),
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<(), RecognizerError> {
        if self.stability_frames < 1 {
            return Err(RecognizerError::InvalidConfig(
                "stability_frames must be >= 1".into(),
            ));
        }
        if self.min_segment_frames < 1 {
            return Err(RecognizerError::InvalidConfig(
                "min_segment_frames must be >= 1".into(),
            ));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(RecognizerError::InvalidConfig(
                "ema_alpha must be in (0, 1]".into(),
            ));
        }
        if self.screen_width == 0 || self.screen_height == 0 {
            return Err(RecognizerError::InvalidConfig(
                "screen dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The two classifiers plus the `none` calibration.
#[derive(Debug, Clone)]
pub struct Models {
    pub static_model: StaticModel,
    pub dynamic_model: DynamicModel,
    pub calibration: Option<CalibrationConfig>,
}

impl Models {
    /// Validates label sets and resolves the calibration's `none` index from
    /// the static labels. `none_scale` of `None` disables calibration.
    pub fn new(
        static_model: StaticModel,
        dynamic_model: DynamicModel,
        none_scale: Option<f64>,
    ) -> Result<Self, RecognizerError> {
        validate_label_set(&static_model.labels, GestureKind::Static)?;
        validate_label_set(&dynamic_model.labels, GestureKind::Dynamic)?;
        let calibration = match none_scale {
            Some(k) => {
                let none_index = static_model.index_of(NONE_LABEL).expect("validated above");
                Some(CalibrationConfig::new(none_index, k).ok_or_else(|| {
                    RecognizerError::InvalidConfig(format!("calibration k must be >= 1, got {k}"))
                })?)
            }
            None => None,
        };
        Ok(Self {
            static_model,
            dynamic_model,
            calibration,
        })
    }

    /// Calibrated static classification: (label index, confidence).
    pub fn classify_static(&self, frame: &KeypointFrame) -> Result<(usize, f64), NnError> {
        let logits = self
            .static_model
            .net
            .logits(static_feature(frame).as_slice())?;
        let (p, best) = calibrated_softmax(&logits, self.calibration.as_ref());
        Ok((best, p[best]))
    }

    pub fn classify_dynamic(&self, frames: &[KeypointFrame]) -> Result<(usize, f64), NnError> {
        let seq = dynamic_features(frames).map_err(|_| NnError::EmptySequence)?;
        let p = softmax(&self.dynamic_model.net.logits(&seq)?);
        let best = argmax(&p);
        Ok((best, p[best]))
    }
}

/// What closing a signal-on run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Complete(Vec<KeypointFrame>),
    /// Run too short; carries its length.
    Discarded(usize),
}

/// Splits a frame stream into maximal signal-on runs.
#[derive(Debug, Clone)]
pub struct Segmenter {
    min_frames: usize,
    buffer: Vec<KeypointFrame>,
    open: bool,
}

impl Segmenter {
    pub fn new(min_frames: usize) -> Self {
        Self {
            min_frames: min_frames.max(1),
            buffer: Vec::new(),
            open: false,
        }
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Feeds one frame; returns the closed segment on a falling edge.
    pub fn push(&mut self, frame: &KeypointFrame) -> Option<Segment> {
        if frame.signal {
            self.open = true;
            self.buffer.push(*frame);
            None
        } else if self.open {
            self.close()
        } else {
            None
        }
    }

    /// Closes a segment left open at end of stream.
    pub fn finish(&mut self) -> Option<Segment> {
        self.open.then(|| self.close()).flatten()
    }

    fn close(&mut self) -> Option<Segment> {
        self.open = false;
        let frames = std::mem::take(&mut self.buffer);
        Some(if frames.len() >= self.min_frames {
            Segment::Complete(frames)
        } else {
            Segment::Discarded(frames.len())
        })
    }
}

/// EMA-smoothed cursor projected from the index fingertip.
#[derive(Debug, Clone)]
pub struct CursorTracker {
    alpha: f64,
    width: f64,
    height: f64,
    smoothed: Option<(f64, f64)>,
}

impl CursorTracker {
    pub fn new(alpha: f64, width: u32, height: u32) -> Self {
        Self {
            alpha,
            width: width as f64,
            height: height as f64,
            smoothed: None,
        }
    }

    pub fn position(&self) -> Option<(f64, f64)> {
        self.smoothed
    }

    /// Sets the smoothed position directly (used when restoring state).
    pub fn set_position(&mut self, pos: Option<(f64, f64)>) {
        self.smoothed = pos;
    }

    pub fn track(&mut self, frame: &KeypointFrame) -> GestureEvent {
        let tip = frame.landmark(landmark::INDEX_TIP);
        let target = (
            tip.x.clamp(0.0, 1.0) * self.width,
            tip.y.clamp(0.0, 1.0) * self.height,
        );
        let next = match self.smoothed {
            None => target,
            Some((px, py)) => (
                self.alpha * target.0 + (1.0 - self.alpha) * px,
                self.alpha * target.1 + (1.0 - self.alpha) * py,
            ),
        };
        self.smoothed = Some(next);
        GestureEvent::cursor(
            next.0.round() as i32,
            next.1.round() as i32,
            frame.timestamp_ms,
        )
    }
}

/// Per-stream recognizer state. Owned by a single consumer.
#[derive(Debug, Clone)]
pub struct Recognizer {
    config: RecognizerConfig,
    segmenter: Segmenter,
    cursor: CursorTracker,
    streak: Option<(usize, usize)>,
    discarded: u64,
}

impl Recognizer {
    pub fn new(config: RecognizerConfig) -> Result<Self, RecognizerError> {
        config.validate()?;
        Ok(Self {
            segmenter: Segmenter::new(config.min_segment_frames),
            cursor: CursorTracker::new(config.ema_alpha, config.screen_width, config.screen_height),
            config,
            streak: None,
            discarded: 0,
        })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    /// Current static streak as (label index, consecutive count).
    pub fn streak(&self) -> Option<(usize, usize)> {
        self.streak
    }

    pub fn discarded_segments(&self) -> u64 {
        self.discarded
    }

    pub fn buffering(&self) -> bool {
        self.segmenter.is_open()
    }

    /// Forgets the static streak. Call after swapping in models whose label
    /// indices may differ.
    pub fn reset_streak(&mut self) {
        self.streak = None;
    }

    pub fn mouse_track(&mut self, frame: &KeypointFrame) -> GestureEvent {
        self.cursor.track(frame)
    }

    /// Processes one frame. Always emits a cursor event first; then at most
    /// one dynamic event (on a signal falling edge) and at most one static
    /// event (when a non-`none` streak reaches exactly `stability_frames`).
    pub fn process_frame(
        &mut self,
        frame: &KeypointFrame,
        models: &Models,
    ) -> Result<Vec<GestureEvent>, NnError> {
        let mut events = vec![self.cursor.track(frame)];

        if frame.signal && !self.segmenter.is_open() {
            self.streak = None;
        }
        if let Some(segment) = self.segmenter.push(frame) {
            if let Some(e) = self.close_segment(segment, frame.timestamp_ms, models)? {
                events.push(e);
            }
        }
        if frame.signal {
            return Ok(events);
        }

        let (label, confidence) = models.classify_static(frame)?;
        let count = match self.streak {
            Some((l, c)) if l == label => c + 1,
            _ => 1,
        };
        self.streak = Some((label, count));
        let name = &models.static_model.labels[label];
        if name != NONE_LABEL && count == self.config.stability_frames {
            events.push(GestureEvent::gesture(
                GestureLabel::new(name.clone(), GestureKind::Static),
                confidence,
                frame.timestamp_ms,
                1,
            ));
        }
        Ok(events)
    }

    /// Closes a segment still open at end of stream.
    pub fn finish(
        &mut self,
        timestamp_ms: u64,
        models: &Models,
    ) -> Result<Option<GestureEvent>, NnError> {
        match self.segmenter.finish() {
            Some(segment) => self.close_segment(segment, timestamp_ms, models),
            None => Ok(None),
        }
    }

    fn close_segment(
        &mut self,
        segment: Segment,
        ts: u64,
        models: &Models,
    ) -> Result<Option<GestureEvent>, NnError> {
        match segment {
            Segment::Complete(frames) => {
                let (label, confidence) = models.classify_dynamic(&frames)?;
                let name = models.dynamic_model.labels[label].clone();
                Ok(Some(GestureEvent::gesture(
                    GestureLabel::new(name, GestureKind::Dynamic),
                    confidence,
                    ts,
                    frames.len(),
                )))
            }
            Segment::Discarded(len) => {
                self.discarded += 1;
                log::info!(
                    "discarded {len}-frame segment (minimum {})",
                    self.config.min_segment_frames
                );
                Ok(None)
            }
        }
    }
}
