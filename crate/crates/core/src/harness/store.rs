//! On-disk trajectories and ensemble sample stores.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunDir;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fields::io::Snapshot;
use crate::fields::Grid;
use crate::measures::{EnsembleMeasure, Member};

/// Index file of an ensemble directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleIndex {
    pub config_hash: String,
    pub dim: usize,
    pub n: usize,
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    /// Member directories relative to the ensemble directory.
    pub members: Vec<String>,
}

pub const ENSEMBLE_INDEX: &str = "ensemble.json";

pub fn snapshot_name(k: usize) -> String {
    format!("snap_{k:04}.bin")
}

/// Writes `<prefix>diagnostics.csv` and, if requested, one snapshot per record
/// under `<prefix>snapshots/`.
pub fn write_trajectory(dir: &mut RunDir, prefix: &str, traj: &Trajectory, snapshots: bool, csv: bool) -> Result<()> {
    dir.write_with(&format!("{prefix}diagnostics.csv"), |w| traj.write_csv(w))?;
    if snapshots {
        for (k, s) in traj.states.iter().enumerate() {
            let snap = Snapshot::from_state(&traj.grid, s);
            dir.write_with(&format!("{prefix}snapshots/{}", snapshot_name(k)), |w| snap.write_to(w))?;
            if csv && traj.grid.dim() == 1 {
                dir.write_with(&format!("{prefix}snapshots/snap_{k:04}.csv"), |w| snap.write_csv(w))?;
            }
        }
    }
    Ok(())
}

/// Column values of a diagnostics CSV by header name.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?.split(',').collect();
    let idx = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Format(format!("{} has no column {n}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        for (c, &i) in idx.iter().enumerate() {
            let v = fields
                .get(i)
                .ok_or_else(|| Error::Format(format!("short row in {}", path.display())))?
                .parse::<f64>()
                .map_err(|e| Error::Format(e.to_string()))?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Loads an ensemble written by `sweep-eps`.
pub fn load_ensemble(dir: &Path) -> Result<EnsembleMeasure> {
    let text = fs::read_to_string(dir.join(ENSEMBLE_INDEX))?;
    let index: EnsembleIndex = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let grid = Grid::new(index.dim, index.n).map_err(|e| Error::Format(e.to_string()))?;
    let mut members = Vec::with_capacity(index.members.len());
    for (rel, &epsilon) in index.members.iter().zip(&index.epsilons) {
        let mdir = dir.join(rel);
        let states = (0..index.times.len())
            .map(|k| Snapshot::load(&mdir.join("snapshots").join(snapshot_name(k)))?.to_state())
            .collect::<Result<Vec<_>>>()?;
        let mut cols = read_columns(&mdir.join("diagnostics.csv"), &["energy", "align_accum", "visc_accum"])?;
        let visc_accum = cols.pop().unwrap_or_default();
        let align_accum = cols.pop().unwrap_or_default();
        let energy = cols.pop().unwrap_or_default();
        members.push(Member { epsilon, states, energy, align_accum, visc_accum });
    }
    EnsembleMeasure::new(grid, index.gamma, members)
}
