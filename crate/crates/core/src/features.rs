//! Network input features.
//!
//! Static feature (49 values): the 16 relative bone vectors below, xyz each,
//! followed by the handedness code (Left 0.0, Right 1.0).
//!
//! Dynamic row (52 values): wrist x, y; wrist dx, dy against the previous
//! frame (zero on the first row); then the same 48 relative-vector values.
//!
//! The bone order is frozen ([`FEATURE_LAYOUT_VERSION`]) because trained
//! model files depend on it. See `docs/feature-layout.md`.

use thiserror::Error;

use crate::model::KeypointFrame;

pub const FEATURE_LAYOUT_VERSION: u32 = 1;

pub const NUM_BONES: usize = 16;
pub const RELATIVE_LEN: usize = NUM_BONES * 3;
pub const STATIC_LEN: usize = RELATIVE_LEN + 1;
pub const DYNAMIC_WIDTH: usize = 2 + 2 + RELATIVE_LEN;

/// (start, end) landmark pairs; each vector is `end - start`.
pub const BONES: [(usize, usize); NUM_BONES] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (9, 10),
    (10, 11),
    (11, 12),
    (13, 14),
    (14, 15),
    (15, 16),
    (17, 18),
    (18, 19),
    (19, 20),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cannot build features from an empty sequence")]
    EmptySequence,
}

pub fn relative_vectors(frame: &KeypointFrame) -> [f64; RELATIVE_LEN] {
    let mut out = [0.0; RELATIVE_LEN];
    for (i, &(start, end)) in BONES.iter().enumerate() {
        let v = frame.landmark(end) - frame.landmark(start);
        out[3 * i] = v.x;
        out[3 * i + 1] = v.y;
        out[3 * i + 2] = v.z;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticFeature(pub [f64; STATIC_LEN]);

impl StaticFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn static_feature(frame: &KeypointFrame) -> StaticFeature {
    let mut values = [0.0; STATIC_LEN];
    values[..RELATIVE_LEN].copy_from_slice(&relative_vectors(frame));
    values[RELATIVE_LEN] = frame.handedness.as_feature();
    StaticFeature(values)
}

/// `T × 52` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicFeatureSequence {
    data: Vec<f64>,
}

impl DynamicFeatureSequence {
    /// Builds a sequence from raw rows; every row must be [`DYNAMIC_WIDTH`] long.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != DYNAMIC_WIDTH) {
            return None;
        }
        Some(Self {
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / DYNAMIC_WIDTH
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        DYNAMIC_WIDTH
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * DYNAMIC_WIDTH..(t + 1) * DYNAMIC_WIDTH]
    }

    pub fn rows(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.data.chunks_exact(DYNAMIC_WIDTH)
    }

    /// Same rows in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in self.rows().rev() {
            data.extend_from_slice(r);
        }
        Self { data }
    }
}

pub fn dynamic_features(frames: &[KeypointFrame]) -> Result<DynamicFeatureSequence, FeatureError> {
    if frames.is_empty() {
        return Err(FeatureError::EmptySequence);
    }
    let mut data = Vec::with_capacity(frames.len() * DYNAMIC_WIDTH);
    let mut prev: Option<&KeypointFrame> = None;
    for frame in frames {
        let wrist = frame.landmark(0);
        let (dx, dy) = match prev {
            Some(p) => {
                let pw = p.landmark(0);
                (wrist.x - pw.x, wrist.y - pw.y)
            }
            None => (0.0, 0.0),
        };
        data.extend_from_slice(&[wrist.x, wrist.y, dx, dy]);
        data.extend_from_slice(&relative_vectors(frame));
        prev = Some(frame);
    }
    Ok(DynamicFeatureSequence { data })
}
