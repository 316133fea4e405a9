//! Run manifests and the output directory they describe.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::process::RngSpec;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeed {
    pub stage: String,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
}

/// Everything needed to rerun an experiment bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub threads: usize,
    pub timings: Vec<StageTiming>,
    pub seeds: Vec<StageSeed>,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory that records every file written into it.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    manifest: RunManifest,
    stage_start: Option<(String, Instant)>,
}

impl RunOutput {
    pub fn create(dir: impl AsRef<Path>, config: &ExperimentConfig) -> Result<Self, Error> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            manifest: RunManifest {
                config: config.clone(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                threads: rayon::current_num_threads(),
                timings: Vec::new(),
                seeds: Vec::new(),
                outputs: Vec::new(),
            },
            stage_start: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn record_seed(&mut self, stage: impl Into<String>, rng: RngSpec) {
        self.manifest.seeds.push(StageSeed {
            stage: stage.into(),
            seed: rng.seed,
            stream: rng.stream,
        });
    }

    /// Starts timing a stage, closing the previous one.
    pub fn stage(&mut self, name: impl Into<String>) {
        self.finish_stage();
        let name = name.into();
        tracing::info!(stage = %name, "stage start");
        self.stage_start = Some((name, Instant::now()));
    }

    fn finish_stage(&mut self) {
        if let Some((stage, t)) = self.stage_start.take() {
            let seconds = t.elapsed().as_secs_f64();
            tracing::info!(stage = %stage, seconds, "stage done");
            self.manifest.timings.push(StageTiming { stage, seconds });
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Error> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.retain(|o| o.path != name);
        self.manifest.outputs.push(OutputEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<PathBuf, Error>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), Error>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// Closes the last stage and writes `manifest.json`.
    pub fn finish(mut self) -> Result<RunManifest, Error> {
        self.finish_stage();
        let path = self.dir.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ExperimentKind, Scale};

    #[test]
    fn every_file_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset(ExperimentKind::TableOne, Scale::Desk, 3);
        let mut out = RunOutput::create(dir.path(), &cfg).unwrap();
        out.stage("a");
        out.write_bytes("x.csv", b"1,2\n").unwrap();
        out.write_json("sub/y.json", &vec![1, 2]).unwrap();
        out.record_seed("a", RngSpec::new(3, 1));
        let m = out.finish().unwrap();
        let listed: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert_eq!(listed, vec!["x.csv", "sub/y.json"]);
        assert_eq!(m.timings.len(), 1);
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back.config, cfg);
    }
}
