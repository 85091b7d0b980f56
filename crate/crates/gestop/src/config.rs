use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use gestop_core::ingress::DEFAULT_INGRESS_PORT;
use gestop_core::nn::DEFAULT_NONE_SCALE;
use gestop_core::recognizer::RecognizerConfig;

use crate::training::TrainOptions;

pub const DEFAULT_CONTROL_PORT: u16 = 8765;
pub const HOME_ENV: &str = "GESTOP_HOME";

/// `$GESTOP_HOME`, else `~/.gestop`, else `./.gestop`.
pub fn gestop_home() -> PathBuf {
    if let Some(dir) = std::env::var_os(HOME_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".gestop"))
        .unwrap_or_else(|| PathBuf::from(".gestop"))
}

/// Default file locations inside a home directory.
#[derive(Debug, Clone)]
pub struct HomeLayout {
    pub root: PathBuf,
}

impl HomeLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn static_model(&self) -> PathBuf {
        self.root.join("static.model")
    }

    pub fn dynamic_model(&self) -> PathBuf {
        self.root.join("dynamic.model")
    }

    pub fn mapping(&self) -> PathBuf {
        self.root.join("mapping.json")
    }

    pub fn dispatch_log(&self) -> PathBuf {
        self.root.join("dispatch.log")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub ingress_addr: SocketAddr,
    pub control_addr: SocketAddr,
    pub static_model: PathBuf,
    pub dynamic_model: PathBuf,
    pub mapping: PathBuf,
    /// JSON-lines dispatch log; `None` disables it.
    pub dispatch_log: Option<PathBuf>,
    /// Holds `static.csv` and the `dynamic/` tree written by recording.
    pub data_dir: PathBuf,
    pub recognizer: RecognizerConfig,
    /// Score multiplier for the `none` class; `None` disables calibration.
    pub none_scale: Option<f64>,
    /// Used by the retrain endpoint.
    pub training: TrainOptions,
}

impl DaemonConfig {
    pub fn from_home(home: &Path) -> Self {
        let layout = HomeLayout::new(home);
        Self {
            ingress_addr: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_INGRESS_PORT)),
            control_addr: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_CONTROL_PORT)),
            static_model: layout.static_model(),
            dynamic_model: layout.dynamic_model(),
            mapping: layout.mapping(),
            dispatch_log: Some(layout.dispatch_log()),
            data_dir: layout.data_dir(),
            recognizer: RecognizerConfig::default(),
            none_scale: Some(DEFAULT_NONE_SCALE),
            training: TrainOptions::default(),
        }
    }

    pub fn static_data(&self) -> PathBuf {
        self.data_dir.join("static.csv")
    }

    pub fn dynamic_data(&self) -> PathBuf {
        self.data_dir.join("dynamic")
    }

    pub fn validate(&self) -> Result<()> {
        if self.ingress_addr.port() != 0 && self.ingress_addr.port() == self.control_addr.port() {
            bail!(
                "ingress and control ports must differ (both {})",
                self.ingress_addr.port()
            );
        }
        for (what, path) in [
            ("static model", &self.static_model),
            ("dynamic model", &self.dynamic_model),
            ("mapping", &self.mapping),
        ] {
            if !path.is_file() {
                bail!("{what} not found at {}", path.display());
            }
        }
        self.recognizer.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_ports_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DaemonConfig::from_home(dir.path());
        cfg.control_addr.set_port(cfg.ingress_addr.port());
        assert!(cfg.validate().unwrap_err().to_string().contains("differ"));
    }

    #[test]
    fn missing_files_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = DaemonConfig::from_home(dir.path())
            .validate()
            .unwrap_err()
            .to_string();
        assert!(err.contains("static model"), "{err}");
    }
}
