//! Experiment drivers, run directories and exit codes.
//!
//! Every experiment writes a self-describing directory
//!
//! ```text
//! <root>/<kind>-<hash12>-<k>/
//!     manifest.json
//!     config.toml
//!     diagnostics.csv      (run)
//!     snapshots/           (run)
//!     members/             (sweep-eps)
//!     reports/
//! ```
//!
//! where `hash12` is a prefix of the config hash and `k` the smallest integer
//! that makes the name unused.

pub mod config;
mod experiments;
pub mod store;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use config::ExperimentConfig;
pub use experiments::{kernel_selftest, measure_report, run, sweep_eps, weak_strong};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EULER_ALIGN_OUT";

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes; stable across releases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    IoError,
    ConfigError,
    CflAbort,
    DensityFloorAbort,
    ReferenceRejected,
    CheckFailed,
    MemberAborted,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::IoError => 1,
            Self::ConfigError => 2,
            Self::CflAbort => 3,
            Self::DensityFloorAbort => 4,
            Self::ReferenceRejected => 5,
            Self::CheckFailed => 6,
            Self::MemberAborted => 7,
        }
    }

    pub fn of_error(err: &Error) -> Self {
        match err {
            Error::Io(_) => Self::IoError,
            Error::Cfl { .. } => Self::CflAbort,
            Error::DensityFloor { .. } => Self::DensityFloorAbort,
            Error::ReferenceRejected { .. } => Self::ReferenceRejected,
            Error::MemberAborted { .. } => Self::MemberAborted,
            Error::Calibration { .. } => Self::CheckFailed,
            _ => Self::ConfigError,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    SweepEps,
    WeakStrong,
    KernelSelftest,
    MeasureReport,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::SweepEps => "sweep-eps",
            Self::WeakStrong => "weak-strong",
            Self::KernelSelftest => "kernel-selftest",
            Self::MeasureReport => "measure-report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub status: Status,
    pub exit_code: i32,
    pub message: Option<String>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub headline: BTreeMap<String, Value>,
    pub kernel_certificate: Option<Value>,
}

/// What an experiment reports back to the CLI.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub status: Status,
    pub message: Option<String>,
    pub headline: BTreeMap<String, Value>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.status.code()
    }
}

/// An open run directory collecting outputs for the manifest.
pub struct RunDir {
    path: PathBuf,
    kind: ExperimentKind,
    config: ExperimentConfig,
    outputs: Vec<String>,
}

impl RunDir {
    /// Creates `<root>/<kind>-<hash12>-<k>` with the smallest unused `k`.
    pub fn create(root: &Path, kind: ExperimentKind, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        let hash = config.hash();
        let mut k = 0usize;
        let path = loop {
            let candidate = root.join(format!("{}-{}-{k}", kind.name(), &hash[..12]));
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
                Err(e) => return Err(e.into()),
            }
        };
        let mut dir = Self { path, kind, config: config.clone(), outputs: Vec::new() };
        dir.write_text("config.toml", &config.to_toml()?)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Absolute path for `rel`, creating parent directories and recording the
    /// output.
    pub fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(rel.to_string());
        Ok(p)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.output(rel)?;
        fs::write(p, text)?;
        Ok(())
    }

    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let p = self.output(rel)?;
        fs::write(p, buf)?;
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        self.write_text(rel, &text)
    }

    /// Writes `manifest.json` and returns the outcome.
    pub fn finish(
        mut self,
        status: Status,
        message: Option<String>,
        headline: BTreeMap<String, Value>,
        kernel_certificate: Option<Value>,
    ) -> Result<Outcome> {
        self.outputs.sort();
        self.outputs.dedup();
        let manifest = Manifest {
            kind: self.kind,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: self.config.hash(),
            config: self.config.clone(),
            status,
            exit_code: status.code(),
            message: message.clone(),
            outputs: self.outputs.clone(),
            headline: headline.clone(),
            kernel_certificate,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.path.join("manifest.json"), text)?;
        Ok(Outcome { run_dir: self.path, status, message, headline })
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

/// Output root: the explicit argument, else `$EULER_ALIGN_OUT`, else `out`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
    }
}

/// Runs `kind` on an already loaded configuration.
pub fn execute(kind: ExperimentKind, config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    config.validate()?;
    match kind {
        ExperimentKind::Run => run(config, root),
        ExperimentKind::SweepEps => sweep_eps(config, root),
        ExperimentKind::WeakStrong => weak_strong(config, root),
        ExperimentKind::KernelSelftest => kernel_selftest(config, root),
        ExperimentKind::MeasureReport => measure_report(config, root),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let all = [
            Status::Ok,
            Status::IoError,
            Status::ConfigError,
            Status::CflAbort,
            Status::DensityFloorAbort,
            Status::ReferenceRejected,
            Status::CheckFailed,
            Status::MemberAborted,
        ];
        let codes: Vec<i32> = all.iter().map(|s| s.code()).collect();
        assert_eq!(codes, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn error_classification() {
        assert_eq!(Status::of_error(&Error::Cfl { dt: 1.0, admissible: 0.5 }), Status::CflAbort);
        assert_eq!(Status::of_error(&Error::DensityFloor { t: 0.1, min: 0.0, floor: 0.1 }), Status::DensityFloorAbort);
        assert_eq!(Status::of_error(&Error::Config("x".into())), Status::ConfigError);
        let inner = Box::new(Error::DensityFloor { t: 0.1, min: 0.0, floor: 0.1 });
        assert_eq!(Status::of_error(&Error::MemberAborted { epsilon: 1e-3, source: inner }), Status::MemberAborted);
    }

    #[test]
    fn run_directories_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let a = RunDir::create(root.path(), ExperimentKind::Run, &cfg).unwrap();
        let b = RunDir::create(root.path(), ExperimentKind::Run, &cfg).unwrap();
        assert_ne!(a.path(), b.path());
        assert!(a.path().file_name().unwrap().to_str().unwrap().ends_with("-0"));
        assert!(b.path().file_name().unwrap().to_str().unwrap().ends_with("-1"));
        assert!(a.path().join("config.toml").exists());
    }
}
