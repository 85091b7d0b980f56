//! Gesture recognition daemon: wires frame ingress, the recognizer and the
//! action executor together and exposes a control plane for the dashboard.

pub mod config;
pub mod control;
pub mod daemon;
pub mod events;
pub mod training;

pub use config::{gestop_home, DaemonConfig, HomeLayout};
pub use daemon::DaemonHandle;
