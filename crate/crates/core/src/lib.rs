//! Core of a hand-gesture recognition pipeline: keypoint frames, feature
//! extraction, small from-scratch classifiers, the streaming recognizer and
//! gesture-to-action dispatch.

pub mod datasets;
pub mod executor;
pub mod features;
pub mod ingress;
pub mod model;
pub mod nn;
pub mod recognizer;
pub mod synth;
pub mod wire;
