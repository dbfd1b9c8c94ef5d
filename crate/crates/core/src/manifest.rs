use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run, stored beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub outputs: Vec<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config: None,
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(now());
    }

    /// Writes `manifest.json` into `dir` through a temporary file and a
    /// rename, so readers never see a partial manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.{}.tmp", std::process::id()));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("stats", vec!["--corpus".into(), "x".into()]);
        m.seed = Some(3);
        m.finish();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
