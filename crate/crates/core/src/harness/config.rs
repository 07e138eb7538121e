//! Experiment configuration files.
//!
//! Every section is optional and falls back to the benchmark defaults;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::Method;
use crate::dynamics::{FieldName, InitialData, Mode, SolverConfig};
use crate::error::{Error, Result};
use crate::functionals::GronwallConstants;
use crate::kernel::{FarField, DEFAULT_TRUNCATION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dim: 1, n: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub m: u32,
    pub density_floor: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self { gamma: 2.0, lambda: 0.5, epsilon: 1e-3, m: 1, density_floor: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub truncation: usize,
    pub farfield: FarField,
    pub method: Method,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { truncation: DEFAULT_TRUNCATION, farfield: FarField::Complete, method: Method::Fft }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub cfl: f64,
    pub dt: Option<f64>,
    pub records: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { t_end: 1.0, cfl: 0.4, dt: None, records: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write one binary snapshot per record.
    pub snapshots: bool,
    /// Also write 1D snapshots as CSV (`x,rho,u_x`).
    pub csv_snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { snapshots: true, csv_snapshots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub rho_mean: f64,
    pub u_mean: Vec<f64>,
    pub mollify_width: f64,
    pub modes: Vec<Mode>,
}

impl Default for InitialSection {
    fn default() -> Self {
        let b = InitialData::benchmark();
        Self { rho_mean: b.rho_mean, u_mean: b.u_mean, mollify_width: 0.0, modes: b.modes }
    }
}

impl InitialSection {
    pub fn data(&self) -> InitialData {
        InitialData { rho_mean: self.rho_mean, u_mean: self.u_mean.clone(), modes: self.modes.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub epsilons: Vec<f64>,
    /// Existing ensemble directory read by `measure-report`; when absent the
    /// ensemble is computed.
    pub store: Option<String>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { epsilons: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4], store: None }
    }
}

/// Perturbation direction; amplitudes are scaled by the entries of
/// `amplitudes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationMode {
    pub field: FieldName,
    pub k: Vec<i64>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakStrongSection {
    /// Fine-grid factor of the reference solution.
    pub refine: usize,
    /// Step of the reference run; adaptive when absent.
    pub reference_dt: Option<f64>,
    /// Viscosity of the coarse runs.
    pub epsilon: f64,
    pub amplitudes: Vec<f64>,
    pub perturbation: Vec<PerturbationMode>,
    pub gronwall: GronwallConstants,
}

impl Default for WeakStrongSection {
    fn default() -> Self {
        Self {
            refine: 4,
            reference_dt: None,
            epsilon: 0.0,
            amplitudes: vec![1e-2, 5e-3],
            perturbation: vec![
                PerturbationMode { field: FieldName::Rho, k: vec![2], weight: 1.0, phase: 0.3 },
                PerturbationMode { field: FieldName::UX, k: vec![3], weight: 1.0, phase: 1.1 },
            ],
            gronwall: GronwallConstants::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestSection {
    pub dim: usize,
    pub lambdas: Vec<f64>,
    pub truncations: Vec<usize>,
    pub ns: Vec<usize>,
}

impl Default for SelftestSection {
    fn default() -> Self {
        Self { dim: 1, lambdas: vec![0.25, 0.5, 0.75], truncations: vec![DEFAULT_TRUNCATION], ns: vec![256] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub kernel: KernelSection,
    pub time: TimeSection,
    pub output: OutputSection,
    pub initial: InitialSection,
    pub ensemble: EnsembleSection,
    pub weak_strong: WeakStrongSection,
    pub selftest: SelftestSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; a missing or unreadable file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            dim: self.grid.dim,
            n: self.grid.n,
            gamma: self.physics.gamma,
            lambda: self.physics.lambda,
            epsilon: self.physics.epsilon,
            m: self.physics.m,
            truncation: self.kernel.truncation,
            farfield: self.kernel.farfield,
            method: self.kernel.method,
            cfl: self.time.cfl,
            dt: self.time.dt,
            t_end: self.time.t_end,
            records: self.time.records,
            density_floor: self.physics.density_floor,
            mollify_width: self.initial.mollify_width,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.solver().validate()?;
        self.initial.data().sample(&self.solver().grid()?)?;
        if self.weak_strong.refine < 1 {
            return Err(Error::Config("weak_strong.refine must be >= 1".into()));
        }
        Ok(())
    }
}
