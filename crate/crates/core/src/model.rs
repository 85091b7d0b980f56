//! Domain vocabulary shared by every stage of the pipeline: keypoint frames,
//! the 21-landmark hand topology, gesture labels and emitted events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of tracked hand landmarks per frame.
pub const NUM_LANDMARKS: usize = 21;
/// Flattened coordinate count of one frame (21 × xyz).
pub const NUM_COORDS: usize = NUM_LANDMARKS * 3;

/// Reserved static label for "no relevant gesture".
pub const NONE_LABEL: &str = "none";

/// Landmark indices of the hand topology.
///
/// 0 is the wrist; each digit contributes four points from base to tip:
/// thumb 1..=4, index 5..=8, middle 9..=12, ring 13..=16, pinky 17..=20.
pub mod landmark {
    pub const WRIST: usize = 0;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_BASE: usize = 5;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_BASE: usize = 9;
    pub const RING_BASE: usize = 13;
    pub const PINKY_BASE: usize = 17;

    /// The 20 skeleton edges: each digit chain starts at the wrist.
    pub const BONES: [(usize, usize); 20] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (0, 5),
        (5, 6),
        (6, 7),
        (7, 8),
        (0, 9),
        (9, 10),
        (10, 11),
        (11, 12),
        (0, 13),
        (13, 14),
        (14, 15),
        (15, 16),
        (0, 17),
        (17, 18),
        (18, 19),
        (19, 20),
    ];
}

/// A single landmark position in normalized camera coordinates.
///
/// `x` and `y` are nominally in `[0, 1]`; `z` is a unit-free relative depth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;

    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;

    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    /// Feature encoding: Left is 0.0, Right is 1.0.
    pub fn as_feature(self) -> f64 {
        match self {
            Handedness::Left => 0.0,
            Handedness::Right => 1.0,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Handedness::Left => 'L',
            Handedness::Right => 'R',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'L' => Some(Handedness::Left),
            'R' => Some(Handedness::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("expected {NUM_LANDMARKS} landmarks, got {0}")]
    WrongLandmarkCount(usize),
    #[error("landmark {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("negative timestamp {0}")]
    NegativeTimestamp(i64),
}

/// Unvalidated frame as received from a producer.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub landmarks: Vec<Point3>,
    pub handedness: Handedness,
    pub timestamp_ms: i64,
    pub signal: bool,
}

/// One validated hand observation.
///
/// Always holds exactly 21 finite landmarks and a non-negative timestamp;
/// the only way to build one is through [`KeypointFrame::validate`] (or
/// [`KeypointFrame::new`], which validates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointFrame {
    landmarks: [Point3; NUM_LANDMARKS],
    pub handedness: Handedness,
    pub timestamp_ms: u64,
    pub signal: bool,
}

impl KeypointFrame {
    pub fn new(
        landmarks: [Point3; NUM_LANDMARKS],
        handedness: Handedness,
        timestamp_ms: u64,
        signal: bool,
    ) -> Result<Self, FrameError> {
        check_finite(&landmarks)?;
        Ok(Self {
            landmarks,
            handedness,
            timestamp_ms,
            signal,
        })
    }

    /// Validates a candidate frame. Never repairs data.
    pub fn validate(raw: RawFrame) -> Result<Self, FrameError> {
        let count = raw.landmarks.len();
        let landmarks: [Point3; NUM_LANDMARKS] = raw
            .landmarks
            .try_into()
            .map_err(|_| FrameError::WrongLandmarkCount(count))?;
        check_finite(&landmarks)?;
        if raw.timestamp_ms < 0 {
            return Err(FrameError::NegativeTimestamp(raw.timestamp_ms));
        }
        let frame = Self {
            landmarks,
            handedness: raw.handedness,
            timestamp_ms: raw.timestamp_ms as u64,
            signal: raw.signal,
        };
        if frame.out_of_view() {
            log::debug!("frame t={} has landmarks outside [0,1]", frame.timestamp_ms);
        }
        Ok(frame)
    }

    /// A frame with every landmark at the origin.
    pub fn zeroed(handedness: Handedness, timestamp_ms: u64) -> Self {
        Self {
            landmarks: [Point3::default(); NUM_LANDMARKS],
            handedness,
            timestamp_ms,
            signal: false,
        }
    }

    pub fn landmarks(&self) -> &[Point3; NUM_LANDMARKS] {
        &self.landmarks
    }

    pub fn landmark(&self, index: usize) -> Point3 {
        self.landmarks[index]
    }

    /// Coordinates in landmark order: x0, y0, z0, ..., x20, y20, z20.
    pub fn coords(&self) -> [f64; NUM_COORDS] {
        let mut out = [0.0; NUM_COORDS];
        for (i, p) in self.landmarks.iter().enumerate() {
            out[3 * i] = p.x;
            out[3 * i + 1] = p.y;
            out[3 * i + 2] = p.z;
        }
        out
    }

    pub fn from_coords(
        coords: &[f64],
        handedness: Handedness,
        timestamp_ms: u64,
        signal: bool,
    ) -> Result<Self, FrameError> {
        if coords.len() != NUM_COORDS {
            return Err(FrameError::WrongLandmarkCount(coords.len() / 3));
        }
        let mut landmarks = [Point3::default(); NUM_LANDMARKS];
        for (i, p) in landmarks.iter_mut().enumerate() {
            *p = Point3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]);
        }
        Self::new(landmarks, handedness, timestamp_ms, signal)
    }

    /// Returns a copy with every landmark shifted by `offset`.
    pub fn translated(&self, offset: Point3) -> Result<Self, FrameError> {
        let mut landmarks = self.landmarks;
        for p in landmarks.iter_mut() {
            *p = *p + offset;
        }
        Self::new(landmarks, self.handedness, self.timestamp_ms, self.signal)
    }

    pub fn with_signal(mut self, signal: bool) -> Self {
        self.signal = signal;
        self
    }

    pub fn with_timestamp(mut self, timestamp_ms: u64) -> Self {
        self.timestamp_ms = timestamp_ms;
        self
    }

    pub fn with_handedness(mut self, handedness: Handedness) -> Self {
        self.handedness = handedness;
        self
    }

    fn out_of_view(&self) -> bool {
        self.landmarks
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y))
    }
}

impl From<KeypointFrame> for RawFrame {
    fn from(f: KeypointFrame) -> Self {
        RawFrame {
            landmarks: f.landmarks.to_vec(),
            handedness: f.handedness,
            timestamp_ms: f.timestamp_ms as i64,
            signal: f.signal,
        }
    }
}

fn check_finite(landmarks: &[Point3]) -> Result<(), FrameError> {
    match landmarks.iter().position(|p| !p.is_finite()) {
        Some(index) => Err(FrameError::NonFiniteCoordinate { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GestureKind {
    Static,
    Dynamic,
}

impl std::fmt::Display for GestureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GestureKind::Static => f.write_str("static"),
            GestureKind::Dynamic => f.write_str("dynamic"),
        }
    }
}

impl std::str::FromStr for GestureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(GestureKind::Static),
            "dynamic" => Ok(GestureKind::Dynamic),
            other => Err(format!("unknown gesture kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GestureLabel {
    pub name: String,
    pub kind: GestureKind,
}

impl GestureLabel {
    pub fn new(name: impl Into<String>, kind: GestureKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelSetError {
    #[error("duplicate label '{0}'")]
    Duplicate(String),
    #[error("empty label name")]
    Empty,
    #[error("static label set is missing the reserved '{NONE_LABEL}' class")]
    MissingNone,
}

/// Checks label-set invariants: non-empty unique names, and for static
/// sets the presence of the `none` class.
pub fn validate_label_set(labels: &[String], kind: GestureKind) -> Result<(), LabelSetError> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if l.is_empty() {
            return Err(LabelSetError::Empty);
        }
        if !seen.insert(l.as_str()) {
            return Err(LabelSetError::Duplicate(l.clone()));
        }
    }
    if kind == GestureKind::Static && !seen.contains(NONE_LABEL) {
        return Err(LabelSetError::MissingNone);
    }
    Ok(())
}

/// What an event reports: a classified gesture or a cursor position.
#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    Gesture(GestureLabel),
    CursorMove { x_px: i32, y_px: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureEvent {
    pub payload: EventPayload,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub timestamp_ms: u64,
    /// 1 for static and cursor events, segment length for dynamic ones.
    pub source_frame_count: usize,
}

impl GestureEvent {
    pub fn gesture(label: GestureLabel, confidence: f64, timestamp_ms: u64, frames: usize) -> Self {
        Self {
            payload: EventPayload::Gesture(label),
            confidence: confidence.clamp(0.0, 1.0),
            timestamp_ms,
            source_frame_count: frames.max(1),
        }
    }

    pub fn cursor(x_px: i32, y_px: i32, timestamp_ms: u64) -> Self {
        Self {
            payload: EventPayload::CursorMove { x_px, y_px },
            confidence: 1.0,
            timestamp_ms,
            source_frame_count: 1,
        }
    }

    pub fn label(&self) -> Option<&GestureLabel> {
        match &self.payload {
            EventPayload::Gesture(l) => Some(l),
            EventPayload::CursorMove { .. } => None,
        }
    }

    pub fn is_cursor(&self) -> bool {
        matches!(self.payload, EventPayload::CursorMove { .. })
    }
}
