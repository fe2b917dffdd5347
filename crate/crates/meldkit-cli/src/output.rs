//! Run directories: `chains/`, `estimates/`, `reports/` and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const OUTPUT_ROOT_VAR: &str = "MELDKIT_OUTPUT_ROOT";
pub const META_FORMAT: &str = "meldkit-run";
pub const META_VERSION: u32 = 1;

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// `out` if given, else `name` under the output root.
    pub fn create(out: Option<&Path>, name: &str) -> Result<Self, CliError> {
        let root = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let base = std::env::var_os(OUTPUT_ROOT_VAR)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"));
                base.join(name)
            }
        };
        for sub in ["chains", "estimates", "reports"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| CliError::io(format!("cannot create {}", d.display()), e))?;
        }
        Ok(RunDir { root })
    }

    pub fn chains(&self) -> PathBuf {
        self.root.join("chains")
    }

    pub fn estimates(&self) -> PathBuf {
        self.root.join("estimates")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn write_meta<T: Serialize>(&self, meta: &T) -> Result<(), CliError> {
        meldkit::io::write_json(&self.root.join("meta.json"), meta)?;
        Ok(())
    }
}
