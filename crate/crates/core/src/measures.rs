//! Empirical Young measures generated by families of viscous runs.
//!
//! Each member contributes one sample `(s, v) = (ρ_ε, u_ε)` per node and
//! snapshot, with weight `1/members`. Two-point observables are averaged
//! either over the same member at both points (`Paired`) or over all ordered
//! member pairs (`Product`).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentForm;
use crate::dynamics::{InitialData, Solver, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{mean, Grid, Spectral, State, VectorField};
use crate::functionals::total_energy;
use crate::kernel::{build_kernel_table, PeriodizedKernel};
use crate::numeric::{compensated_sum, cumulative_trapezoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorMode {
    Paired,
    Product,
}

impl std::str::FromStr for TensorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(Self::Paired),
            "product" => Ok(Self::Product),
            other => Err(Error::Config(format!("unknown tensor mode {other:?}"))),
        }
    }
}

/// Samples of one ensemble member at the shared snapshot times.
#[derive(Clone, Debug)]
pub struct Member {
    pub epsilon: f64,
    pub states: Vec<State>,
    pub energy: Vec<f64>,
    /// Step-level accumulated alignment dissipation.
    pub align_accum: Vec<f64>,
    pub visc_accum: Vec<f64>,
}

impl Member {
    pub fn from_trajectory(epsilon: f64, traj: &Trajectory) -> Self {
        Self {
            epsilon,
            states: traj.states.clone(),
            energy: traj.diagnostics.iter().map(|d| d.energy).collect(),
            align_accum: traj.diagnostics.iter().map(|d| d.align_accum).collect(),
            visc_accum: traj.diagnostics.iter().map(|d| d.visc_accum).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleMeasure {
    grid: Grid,
    gamma: f64,
    times: Vec<f64>,
    members: Vec<Member>,
}

impl EnsembleMeasure {
    pub fn new(grid: Grid, gamma: f64, members: Vec<Member>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        let times: Vec<f64> = first.states.iter().map(|s| s.t).collect();
        for m in &members {
            if m.states.len() != times.len() || m.energy.len() != times.len() || m.align_accum.len() != times.len() {
                return Err(Error::ShapeMismatch { expected: times.len(), found: m.states.len() });
            }
            for (s, t) in m.states.iter().zip(&times) {
                if (s.t - t).abs() > 1e-12 * (1.0 + t.abs()) {
                    return Err(Error::Config(format!("member snapshot times differ: {} vs {t}", s.t)));
                }
                grid.check_len(s.rho.len())?;
                s.u.check(&grid)?;
                s.check_positive()?;
            }
        }
        Ok(Self { grid, gamma, times, members })
    }

    /// Measure built from bare snapshot sequences; accumulations are zero.
    pub fn from_states(grid: Grid, gamma: f64, members: Vec<(f64, Vec<State>)>) -> Result<Self> {
        let members = members
            .into_iter()
            .map(|(epsilon, states)| {
                let energy = states.iter().map(|s| total_energy(&grid, s, gamma)).collect::<Result<Vec<_>>>()?;
                let zeros = vec![0.0; states.len()];
                Ok(Member { epsilon, states, energy, align_accum: zeros.clone(), visc_accum: zeros })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, gamma, members)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.epsilon).collect()
    }

    pub fn is_atomic(&self) -> bool {
        self.members.len() == 1
    }

    fn check_snapshot(&self, k: usize) -> Result<()> {
        if k >= self.times.len() {
            return Err(Error::UnknownSnapshot(k));
        }
        Ok(())
    }

    /// `⟨ν_{t_k,x}; g⟩` at every node.
    pub fn moment(&self, k: usize, g: impl Fn(f64, [f64; 2]) -> f64) -> Result<Vec<f64>> {
        self.check_snapshot(k)?;
        let weight = 1.0 / self.members.len() as f64;
        Ok((0..self.grid.len())
            .map(|i| weight * compensated_sum(self.members.iter().map(|m| g(m.states[k].rho[i], m.states[k].u.at(i)))))
            .collect())
    }

    /// `h^{2d} Σ_{x,y} ⟨ν²_{t_k,x,y}; g(s, v, s′, v′, x, y)⟩` with the two-point
    /// average taken according to `mode`. Node indices are passed so that `g`
    /// can include kernel weights or test functions.
    pub fn tensor_moment<G>(&self, k: usize, mode: TensorMode, g: G) -> Result<f64>
    where
        G: Fn(f64, [f64; 2], f64, [f64; 2], usize, usize) -> f64 + Sync,
    {
        self.check_snapshot(k)?;
        let len = self.grid.len();
        let members = &self.members;
        let count = members.len();
        let pairs: Vec<(usize, usize)> = match mode {
            TensorMode::Paired => (0..count).map(|a| (a, a)).collect(),
            TensorMode::Product => (0..count).flat_map(|a| (0..count).map(move |b| (a, b))).collect(),
        };
        let weight = 1.0 / pairs.len() as f64;
        let rows: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|i| {
                compensated_sum((0..len).flat_map(|j| {
                    pairs.iter().map({
                        let g = &g;
                        move |&(a, b)| {
                            let sa = &members[a].states[k];
                            let sb = &members[b].states[k];
                            g(sa.rho[i], sa.u.at(i), sb.rho[j], sb.u.at(j), i, j)
                        }
                    })
                }))
            })
            .collect();
        let cell = self.grid.cell_volume();
        Ok(weight * cell * cell * compensated_sum(rows))
    }

    /// Measure energy `h^d Σ_x ⟨ν; ½s|v|² + P(s)⟩` at every snapshot.
    pub fn measure_energy(&self) -> Vec<f64> {
        let weight = 1.0 / self.members.len() as f64;
        (0..self.times.len())
            .map(|k| weight * compensated_sum(self.members.iter().map(|m| m.energy[k])))
            .collect()
    }

    /// Relative alignment dissipation
    /// `½ h^{2d} Σ_{x,y} ⟨ν²; s s′ |(v − U(x)) − (v′ − U(y))|²⟩ W_{xy}` at
    /// snapshot `k`, computed in `O(members · N^d log N)` through convolutions.
    /// `big_u = None` gives the plain alignment dissipation.
    pub fn relative_tensor_dissipation(
        &self,
        k: usize,
        form: &AlignmentForm,
        big_u: Option<&VectorField>,
        mode: TensorMode,
    ) -> Result<f64> {
        self.check_snapshot(k)?;
        let relative = |m: &Member| -> VectorField {
            match big_u {
                Some(u) => m.states[k].u.sub(u),
                None => m.states[k].u.clone(),
            }
        };
        match mode {
            TensorMode::Paired => {
                let rates = self
                    .members
                    .iter()
                    .map(|m| form.dissipation_rate_fast(&m.states[k].rho, &relative(m)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(&rates))
            }
            TensorMode::Product => {
                // ½ Σ W [Ā_x S̄_y + S̄_x Ā_y − 2 B̄_x·B̄_y] with S̄ = ⟨s⟩, B̄ = ⟨s w⟩, Ā = ⟨s|w|²⟩
                let len = self.grid.len();
                let d = self.grid.dim();
                let weight = 1.0 / self.members.len() as f64;
                let mut s_bar = vec![0.0; len];
                let mut a_bar = vec![0.0; len];
                let mut b_bar = vec![vec![0.0; len]; d];
                for m in &self.members {
                    let w = relative(m);
                    let rho = &m.states[k].rho;
                    for i in 0..len {
                        let wi = w.at(i);
                        s_bar[i] += weight * rho[i];
                        a_bar[i] += weight * rho[i] * (wi[0] * wi[0] + wi[1] * wi[1]);
                        for (a, b) in b_bar.iter_mut().enumerate() {
                            b[i] += weight * rho[i] * wi[a];
                        }
                    }
                }
                let kernel = form.kernel();
                let conv = |f: &[f64]| convolve(kernel, f);
                let cell = self.grid.cell_volume();
                let ws = conv(&s_bar);
                let mut total = 2.0 * compensated_sum(a_bar.iter().zip(&ws).map(|(a, w)| a * w));
                for b in &b_bar {
                    let wb = conv(b);
                    total -= 2.0 * compensated_sum(b.iter().zip(&wb).map(|(x, y)| x * y));
                }
                Ok(0.5 * cell * cell * total)
            }
        }
    }
}

/// `(W * f)_i = Σ_j W_{i−j} f_j`, diagonal weight included as stored.
fn convolve(kernel: &PeriodizedKernel, f: &[f64]) -> Vec<f64> {
    let sp = Spectral::new(*kernel.grid());
    let w_hat = sp.raw_forward(kernel.weights());
    sp.convolve_with(&w_hat, f)
}

fn check_epsilons(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    if epsilons.iter().any(|e| !(*e >= 0.0)) || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config(format!("epsilon list must be nonnegative and strictly decreasing, got {epsilons:?}")));
    }
    Ok(())
}

/// Runs one member per `ε` in parallel; failures are returned per member as
/// [`Error::MemberAborted`].
pub fn run_members(base: &SolverConfig, epsilons: &[f64], initial: &InitialData) -> Result<Vec<Result<Trajectory>>> {
    check_epsilons(epsilons)?;
    base.validate()?;
    let grid = base.grid()?;
    let kernel = Arc::new(build_kernel_table(&base.kernel_config(), &grid)?);
    let start = initial.sample(&grid)?;
    Ok(epsilons
        .par_iter()
        .map(|&epsilon| {
            let cfg = SolverConfig { epsilon, ..base.clone() };
            let solver = Solver::with_kernel(cfg, Arc::clone(&kernel))?;
            solver.run(&start).map_err(|e| Error::MemberAborted { epsilon, source: Box::new(e) })
        })
        .collect())
}

/// Runs one member per `ε` in parallel from the same initial data; the first
/// aborted member rejects the ensemble.
pub fn collect_ensemble(base: &SolverConfig, epsilons: &[f64], initial: &InitialData) -> Result<EnsembleMeasure> {
    let members = run_members(base, epsilons, initial)?
        .into_iter()
        .zip(epsilons)
        .map(|(traj, &epsilon)| traj.map(|t| Member::from_trajectory(epsilon, &t)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleMeasure::new(base.grid()?, base.gamma, members)
}

/// Absolute defect tolerance relative to the initial measure energy.
pub const DEFECT_TOLERANCE_REL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefectReport {
    pub times: Vec<f64>,
    pub measure_energy: Vec<f64>,
    /// Member average of the step-level alignment accumulation.
    pub paired_dissipation_accum: Vec<f64>,
    /// Snapshot-trapezoid accumulation of the product-mode dissipation.
    pub product_dissipation_accum: Vec<f64>,
    pub paired_rate: Vec<f64>,
    pub product_rate: Vec<f64>,
    /// Member average of the viscous accumulation.
    pub viscous_accum: Vec<f64>,
    /// `E(0) − E(τ) − paired_dissipation_accum(τ)`.
    pub defect: Vec<f64>,
    pub tolerance: f64,
}

impl DefectReport {
    pub const CSV_HEADER: &'static str =
        "t,measure_energy,paired_dissipation_accum,product_dissipation_accum,paired_rate,product_rate,viscous_accum,defect";

    pub fn min_defect(&self) -> f64 {
        self.defect.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn nonnegative(&self) -> bool {
        self.min_defect() >= -self.tolerance
    }

    pub fn nondecreasing(&self) -> bool {
        self.defect.windows(2).all(|w| w[1] >= w[0] - self.tolerance)
    }

    /// `max |D − viscous_accum|`.
    pub fn viscous_mismatch(&self) -> f64 {
        self.defect.iter().zip(&self.viscous_accum).fold(0.0, |m, (d, v)| m.max((d - v).abs()))
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i],
                self.measure_energy[i],
                self.paired_dissipation_accum[i],
                self.product_dissipation_accum[i],
                self.paired_rate[i],
                self.product_rate[i],
                self.viscous_accum[i],
                self.defect[i]
            )?;
        }
        Ok(())
    }
}

pub fn dissipation_defect(measure: &EnsembleMeasure, form: &AlignmentForm) -> Result<DefectReport> {
    let times = measure.times().to_vec();
    let energy = measure.measure_energy();
    let members = measure.members();
    let weight = 1.0 / members.len() as f64;
    let avg = |f: &dyn Fn(&Member) -> &Vec<f64>| -> Vec<f64> {
        (0..times.len()).map(|k| weight * compensated_sum(members.iter().map(|m| f(m)[k]))).collect()
    };
    let paired_accum = avg(&|m| &m.align_accum);
    let viscous_accum = avg(&|m| &m.visc_accum);
    let paired_rate = (0..times.len())
        .map(|k| measure.relative_tensor_dissipation(k, form, None, TensorMode::Paired))
        .collect::<Result<Vec<_>>>()?;
    let product_rate = (0..times.len())
        .map(|k| measure.relative_tensor_dissipation(k, form, None, TensorMode::Product))
        .collect::<Result<Vec<_>>>()?;
    let product_accum = cumulative_trapezoid(&times, &product_rate);
    let e0 = energy[0];
    let defect = energy.iter().zip(&paired_accum).map(|(e, a)| (e0 - e) - a).collect();
    Ok(DefectReport {
        times,
        measure_energy: energy,
        paired_dissipation_accum: paired_accum,
        product_dissipation_accum: product_accum,
        paired_rate,
        product_rate,
        viscous_accum,
        defect,
        tolerance: DEFECT_TOLERANCE_REL * e0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub times: Vec<f64>,
    pub c_lambda: f64,
    pub c_rho: f64,
    /// `h^d Σ_x ⟨ν; |(v − v̄) − (U − Ū)|²⟩` at each snapshot.
    pub lhs_rate: Vec<f64>,
    /// Relative tensor dissipation at each snapshot.
    pub dissipation_rate: Vec<f64>,
    /// Quadrature semi-norm of `⟨ν; v⟩ − U`, summed over components.
    pub seminorm_rate: Vec<f64>,
    pub lhs_accum: Vec<f64>,
    pub dissipation_accum: Vec<f64>,
    pub defect: Vec<f64>,
    /// `(C_λ/c_ρ²)·dissipation_accum + C_λ·D`.
    pub rhs: Vec<f64>,
    /// `max_τ lhs_accum / rhs` over snapshots with positive right side.
    pub ratio: Option<f64>,
    pub mode: TensorMode,
}

impl CompatibilityReport {
    pub const CSV_HEADER: &'static str = "t,lhs_rate,dissipation_rate,seminorm_rate,lhs_accum,dissipation_accum,defect,rhs";

    /// `lhs_rate / seminorm_rate` at snapshot `k`; for an atomic measure this
    /// is the Poincaré ratio of `u − U`.
    pub fn instantaneous_ratio(&self, k: usize) -> Option<f64> {
        let q = self.seminorm_rate[k];
        (q > 0.0 && self.lhs_rate[k] > 0.0).then(|| self.lhs_rate[k] / q)
    }

    pub fn passed(&self) -> bool {
        self.ratio.is_none_or(|r| r <= 1.0)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i],
                self.lhs_rate[i],
                self.dissipation_rate[i],
                self.seminorm_rate[i],
                self.lhs_accum[i],
                self.dissipation_accum[i],
                self.defect[i],
                self.rhs[i]
            )?;
        }
        Ok(())
    }
}

/// Compatibility inequality against a smooth velocity field `big_u[k]` given
/// at every snapshot.
pub fn compatibility_check(
    measure: &EnsembleMeasure,
    big_u: &[VectorField],
    form: &AlignmentForm,
    c_lambda: f64,
    defect: &DefectReport,
    mode: TensorMode,
) -> Result<CompatibilityReport> {
    let times = measure.times().to_vec();
    if big_u.len() != times.len() {
        return Err(Error::ShapeMismatch { expected: times.len(), found: big_u.len() });
    }
    let c_rho = support_check(measure, 0.0).c_rho;
    if !(c_rho > 0.0) {
        return Err(Error::NonPositiveSupport(c_rho));
    }
    let grid = measure.grid();
    let d = grid.dim();
    let cell = grid.cell_volume();
    let kernel = form.kernel();
    let mut lhs_rate = Vec::with_capacity(times.len());
    let mut dissipation_rate = Vec::with_capacity(times.len());
    let mut seminorm_rate = Vec::with_capacity(times.len());
    for (k, u) in big_u.iter().enumerate() {
        u.check(grid)?;
        let u_mean: Vec<f64> = u.components().iter().map(|c| mean(c)).collect();
        let mut v_node = Vec::with_capacity(d);
        let mut v_mean = Vec::with_capacity(d);
        for a in 0..d {
            let comp = measure.moment(k, |_, v| v[a])?;
            v_mean.push(mean(&comp));
            v_node.push(comp);
        }
        let mut total = 0.0;
        for m in measure.members() {
            let state = &m.states[k];
            let mut per_node = vec![0.0; grid.len()];
            for a in 0..d {
                for (i, p) in per_node.iter_mut().enumerate() {
                    let w = (state.u.comp(a)[i] - v_mean[a]) - (u.comp(a)[i] - u_mean[a]);
                    *p += w * w;
                }
            }
            total += compensated_sum(per_node);
        }
        lhs_rate.push(cell * total / measure.members().len() as f64);
        dissipation_rate.push(measure.relative_tensor_dissipation(k, form, Some(u), mode)?);
        let mut q = 0.0;
        for a in 0..d {
            let diff: Vec<f64> = v_node[a].iter().zip(u.comp(a)).map(|(v, w)| v - w).collect();
            q += kernel.quadrature_seminorm(&diff);
        }
        seminorm_rate.push(q);
    }
    let lhs_accum = cumulative_trapezoid(&times, &lhs_rate);
    let dissipation_accum = cumulative_trapezoid(&times, &dissipation_rate);
    let defect_values: Vec<f64> = defect.defect.iter().map(|v| v.max(0.0)).collect();
    if defect_values.len() != times.len() {
        return Err(Error::ShapeMismatch { expected: times.len(), found: defect_values.len() });
    }
    let rhs: Vec<f64> = dissipation_accum
        .iter()
        .zip(&defect_values)
        .map(|(a, dv)| c_lambda / (c_rho * c_rho) * a + c_lambda * dv)
        .collect();
    let ratio = lhs_accum
        .iter()
        .zip(&rhs)
        .filter(|(l, r)| **r > 0.0 && **l > 0.0)
        .map(|(l, r)| l / r)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    Ok(CompatibilityReport {
        times,
        c_lambda,
        c_rho,
        lhs_rate,
        dissipation_rate,
        seminorm_rate,
        lhs_accum,
        dissipation_accum,
        defect: defect_values,
        rhs,
        ratio,
        mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportReport {
    pub c_rho: f64,
    pub floor: f64,
    pub passed: bool,
}

/// Smallest sampled density over members, snapshots and nodes.
pub fn support_check(measure: &EnsembleMeasure, floor: f64) -> SupportReport {
    let c_rho = measure
        .members()
        .iter()
        .flat_map(|m| m.states.iter())
        .map(State::min_density)
        .fold(f64::INFINITY, f64::min);
    SupportReport { c_rho, floor, passed: c_rho >= floor }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundednessReport {
    /// `max_t h^d Σ_x ⟨ν; s^γ + s|v|²⟩`.
    pub sup_value: f64,
    /// `max(γ − 1, 2) · E(0)`.
    pub bound: f64,
    pub passed: bool,
}

pub fn boundedness_check(measure: &EnsembleMeasure) -> Result<BoundednessReport> {
    let gamma = measure.gamma();
    let cell = measure.grid().cell_volume();
    let mut sup_value = 0.0f64;
    for k in 0..measure.times().len() {
        let field = measure.moment(k, |s, v| s.powf(gamma) + s * (v[0] * v[0] + v[1] * v[1]))?;
        sup_value = sup_value.max(cell * compensated_sum(field));
    }
    let bound = (gamma - 1.0).max(2.0) * measure.measure_energy()[0];
    Ok(BoundednessReport { sup_value, bound, passed: sup_value <= bound * (1.0 + 1e-12) })
}

/// Test functions `cos(k·x)`, `sin(k·x)` with `0 < max_a |k_a| ≤ 4`, one
/// representative per `±k` pair.
pub fn test_function_bank(grid: &Grid) -> Vec<(String, Vec<f64>, VectorField)> {
    const KMAX: i64 = 4;
    let mut wavevectors = Vec::new();
    if grid.dim() == 1 {
        wavevectors.extend((1..=KMAX).map(|k| [k, 0]));
    } else {
        for kx in 0..=KMAX {
            for ky in -KMAX..=KMAX {
                if kx > 0 || ky > 0 {
                    wavevectors.push([kx, ky]);
                }
            }
        }
    }
    let d = grid.dim();
    let mut out = Vec::new();
    for k in wavevectors {
        for (label, cosine) in [("cos", true), ("sin", false)] {
            let phase = |x: &[f64]| k[0] as f64 * x[0] + if d == 2 { k[1] as f64 * x[1] } else { 0.0 };
            let psi = grid.sample(|x| if cosine { phase(x).cos() } else { phase(x).sin() });
            let grad = (0..d)
                .map(|a| {
                    grid.sample(|x| {
                        let ka = k[a] as f64;
                        if cosine { -ka * phase(x).sin() } else { ka * phase(x).cos() }
                    })
                })
                .collect();
            let name = if d == 1 { format!("{label}({}x)", k[0]) } else { format!("{label}({}x+{}y)", k[0], k[1]) };
            out.push((name, psi, VectorField::from_components(grad).expect("components share a grid")));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakResidual {
    pub test_function: String,
    pub continuity: f64,
    /// Momentum residual per component; reported only.
    pub momentum: Vec<f64>,
}

/// Weak-form residuals of the measure over the test-function bank,
/// accumulated at the final snapshot with the snapshot trapezoid rule.
pub fn weak_residuals(measure: &EnsembleMeasure, form: &AlignmentForm, m_order: u32) -> Result<Vec<WeakResidual>> {
    let grid = *measure.grid();
    let d = grid.dim();
    let sp = Spectral::new(grid);
    let times = measure.times().to_vec();
    let last = times.len() - 1;
    let cell = grid.cell_volume();
    let gamma = measure.gamma();
    let bank = test_function_bank(&grid);
    let weight = 1.0 / measure.members().len() as f64;
    let mut out = Vec::with_capacity(bank.len());
    for (name, psi, grad) in bank {
        let pair = |f: &[f64], g: &[f64]| cell * compensated_sum(f.iter().zip(g).map(|(a, b)| a * b));
        let mass_flux: Vec<f64> = (0..times.len())
            .map(|k| {
                let mut acc = 0.0;
                for a in 0..d {
                    let sv = measure.moment(k, |s, v| s * v[a]).expect("snapshot index in range");
                    acc += pair(&sv, grad.comp(a));
                }
                acc
            })
            .collect();
        let density = |k: usize| -> Result<f64> { Ok(pair(&measure.moment(k, |s, _| s)?, &psi)) };
        let continuity = density(last)? - density(0)? - cumulative_trapezoid(&times, &mass_flux)[last];

        let mut momentum = Vec::with_capacity(d);
        for a in 0..d {
            let mut rate = Vec::with_capacity(times.len());
            for k in 0..times.len() {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += pair(&measure.moment(k, |s, v| s * v[a] * v[b])?, grad.comp(b));
                }
                acc += pair(&measure.moment(k, |s, _| s.powf(gamma))?, grad.comp(a));
                for m in measure.members() {
                    let state = &m.states[k];
                    let l = form.commutator(&state.rho, &state.u)?;
                    acc += weight * pair(l.comp(a), &psi);
                    if m.epsilon > 0.0 {
                        let visc = sp.hyperviscous_operator(state.u.comp(a), m_order);
                        acc -= weight * m.epsilon * pair(&visc, &psi);
                    }
                }
                rate.push(acc);
            }
            let mom = |k: usize| -> Result<f64> { Ok(pair(&measure.moment(k, |s, v| s * v[a])?, &psi)) };
            momentum.push(mom(last)? - mom(0)? - cumulative_trapezoid(&times, &rate)[last]);
        }
        out.push(WeakResidual { test_function: name, continuity, momentum });
    }
    Ok(out)
}
