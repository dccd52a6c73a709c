//! Run manifests and output bookkeeping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const TOOL: &str = "vinescan";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    /// Seconds per stage, in execution order.
    pub runtimes: Vec<StageTime>,
    pub total_seconds: f64,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file except the manifest itself.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::input("manifest", format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Files and directories created by one command; removed again if the
/// command fails.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, String)>,
    created_dirs: Vec<PathBuf>,
    inputs: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates `dir` (and parents), remembering which ones are new.
    pub fn dir(&mut self, dir: &Path) -> Result<(), CliError> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::internal("output", format!("{}: {e}", dir.display())))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            self.dir(parent)?;
        }
        std::fs::write(path, bytes)
            .map_err(|e| CliError::internal("output", format!("{}: {e}", path.display())))?;
        self.files.push((path.to_path_buf(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::internal("output", e.to_string()))?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let d = digest_file(path)?;
        self.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(p, d)| (p.display().to_string(), d.clone()))
            .collect()
    }

    /// Deletes everything written so far, newest first.
    pub fn cleanup(&mut self) {
        for (f, _) in self.files.drain(..).rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.created_dirs.drain(..).rev() {
            let _ = std::fs::remove_dir(d);
        }
    }

    pub fn manifest(
        &self,
        command: &str,
        config: &PipelineConfig,
        runtimes: Vec<StageTime>,
        total_seconds: f64,
    ) -> RunManifest {
        RunManifest {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            config: config.clone(),
            runtimes,
            total_seconds,
            inputs: self.inputs.clone(),
            outputs: self.output_digests(),
        }
    }
}

/// Wall-clock stage timer.
pub struct Timer {
    start: std::time::Instant,
    stages: Vec<StageTime>,
}

impl Timer {
    pub fn start() -> Self {
        Self {
            start: std::time::Instant::now(),
            stages: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = std::time::Instant::now();
        let out = f();
        self.stages.push(StageTime {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn record(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageTime {
            stage: stage.to_string(),
            seconds,
        });
    }

    /// Seconds recorded so far under `stage`.
    pub fn seconds(&self, stage: &str) -> f64 {
        self.stages.iter().filter(|s| s.stage == stage).map(|s| s.seconds).sum()
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn finish(self) -> (Vec<StageTime>, f64) {
        (self.stages, self.start.elapsed().as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cleanup_removes_files_and_new_dirs() {
        let root = tempfile::tempdir().unwrap();
        let deep = root.path().join("a/b");
        let mut o = Outputs::new();
        o.write(&deep.join("x.json"), b"{}").unwrap();
        o.write(&root.path().join("y.txt"), b"y").unwrap();
        assert_eq!(o.output_digests().len(), 2);
        o.cleanup();
        assert!(!root.path().join("a").exists());
        assert!(!root.path().join("y.txt").exists());
        assert!(root.path().exists());
    }

    #[test]
    fn digest_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn timer_total_covers_stages() {
        let mut t = Timer::start();
        t.time("a", || std::thread::sleep(std::time::Duration::from_millis(5)));
        t.time("b", || ());
        let (stages, total) = t.finish();
        assert_eq!(stages.len(), 2);
        assert!(stages.iter().all(|s| s.seconds >= 0.0));
        assert!(total >= stages.iter().map(|s| s.seconds).sum::<f64>());
    }
}
