//! Run directory layout.
//!
//! ```text
//! run_<timestamp>/
//!   config.snapshot        JSON run configuration
//!   metrics.csv            one row per iteration
//!   timings.csv            wall-clock per phase and iteration
//!   solutions/sol_<k>.case-params
//!   checkpoints/iter_<k>.ckpt, final.ckpt
//!   env_<id>/episodes.csv  per-environment step log
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const WORKSPACE_ENV: &str = "HMRL_WORKSPACE";

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Creates a fresh `run_<timestamp>` directory under `base`.
    pub fn create(base: &Path) -> Result<Self> {
        std::fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
        let stamp = chrono::Local::now().format("%Y%m%d_%H%M%S").to_string();
        let mut root = base.join(format!("run_{stamp}"));
        let mut k = 1;
        while root.exists() {
            root = base.join(format!("run_{stamp}_{k}"));
            k += 1;
        }
        Self::open_new(root)
    }

    /// Uses `root` itself as the run directory.
    pub fn at(root: &Path) -> Result<Self> {
        Self::open_new(root.to_path_buf())
    }

    fn open_new(root: PathBuf) -> Result<Self> {
        let ws = Self { root };
        for dir in [ws.root.clone(), ws.solutions_dir(), ws.checkpoints_dir()] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(ws)
    }

    /// Opens an existing run directory for reading.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "no such run directory")));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn timings_path(&self) -> PathBuf {
        self.root.join("timings.csv")
    }

    pub fn solutions_dir(&self) -> PathBuf {
        self.root.join("solutions")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.checkpoints_dir().join(format!("iter_{iteration}.ckpt"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.checkpoints_dir().join("final.ckpt")
    }
}

/// `HMRL_WORKSPACE` if set, otherwise `./runs`.
pub fn default_base() -> PathBuf {
    std::env::var_os(WORKSPACE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_created() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::create(dir.path()).unwrap();
        assert!(ws.root().file_name().unwrap().to_str().unwrap().starts_with("run_"));
        assert!(ws.solutions_dir().is_dir());
        assert!(ws.checkpoints_dir().is_dir());
        let again = Workspace::create(dir.path()).unwrap();
        assert_ne!(ws.root(), again.root());
    }
}
