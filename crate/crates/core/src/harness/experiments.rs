use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use super::store::{self, EnsembleIndex, ENSEMBLE_INDEX};
use super::{ExperimentConfig, ExperimentKind, Outcome, RunDir, Status};
use crate::dynamics::{make_reference, InitialData, Mode, Solver, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::functionals::{energy_budget, gronwall_certificate, poincare_constant, tol_conv, EnergyBudget};
use crate::kernel::{selftest, KernelConfig, SelftestRow};
use crate::measures::{
    boundedness_check, compatibility_check, dissipation_defect, run_members, support_check, weak_residuals,
    EnsembleMeasure, Member, TensorMode,
};

type Headline = BTreeMap<String, Value>;

fn certificate(cfg: &SolverConfig) -> Option<Value> {
    selftest(&cfg.kernel_config()).ok().and_then(|row| serde_json::to_value(row).ok())
}

fn write_budget(w: &mut Vec<u8>, b: &EnergyBudget) -> Result<()> {
    writeln!(w, "t,energy,align_accum,visc_accum,residual")?;
    for i in 0..b.times.len() {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            b.times[i], b.energy[i], b.align_accum[i], b.visc_accum[i], b.residual[i]
        )?;
    }
    Ok(())
}

fn drift(first: f64, last: f64) -> f64 {
    if first == 0.0 { (last - first).abs() } else { ((last - first) / first).abs() }
}

fn trajectory_headline(h: &mut Headline, traj: &Trajectory) {
    let d0 = &traj.diagnostics[0];
    let dl = traj.diagnostics.last().expect("initial record present");
    let budget = energy_budget(traj);
    h.insert("t_final".into(), json!(dl.t));
    h.insert("energy_initial".into(), json!(d0.energy));
    h.insert("energy_final".into(), json!(dl.energy));
    h.insert("mass_drift_rel".into(), json!(drift(d0.mass, dl.mass)));
    let mom = (0..d0.momentum.len()).map(|a| (dl.momentum[a] - d0.momentum[a]).abs()).fold(0.0, f64::max);
    h.insert("momentum_drift_rel_mass".into(), json!(mom / d0.mass));
    h.insert("max_abs_budget_residual".into(), json!(budget.max_abs_residual()));
    h.insert("min_density".into(), json!(traj.diagnostics.iter().map(|d| d.min_density).fold(f64::INFINITY, f64::min)));
    h.insert("steps".into(), json!(traj.diagnostics.iter().map(|d| d.steps).sum::<usize>()));
}

/// Single run: diagnostics, snapshots and the energy budget.
pub fn run(config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let cfg = config.solver();
    let solver = Solver::new(cfg.clone())?;
    let initial = config.initial.data().sample(solver.grid())?;
    let mut dir = RunDir::create(root, ExperimentKind::Run, config)?;
    let out = solver.run_partial(&initial)?;
    let traj = &out.trajectory;
    store::write_trajectory(&mut dir, "", traj, config.output.snapshots, config.output.csv_snapshots)?;
    let budget = energy_budget(traj);
    dir.write_with("reports/energy_budget.csv", |w| write_budget(w, &budget))?;
    let mut h = Headline::new();
    trajectory_headline(&mut h, traj);
    let (status, message) = match out.abort {
        None => (Status::Ok, None),
        Some(e) => (Status::of_error(&e), Some(e.to_string())),
    };
    dir.finish(status, message, h, certificate(&cfg))
}

fn reference_config(config: &ExperimentConfig) -> SolverConfig {
    let base = config.solver();
    SolverConfig {
        n: base.n * config.weak_strong.refine,
        epsilon: 0.0,
        dt: config.weak_strong.reference_dt,
        mollify_width: 0.0,
        ..base
    }
}

fn ensemble_reports(
    dir: &mut RunDir,
    h: &mut Headline,
    config: &ExperimentConfig,
    measure: &EnsembleMeasure,
    reference_u: Option<&[VectorField]>,
) -> Result<Vec<String>> {
    let solver = Solver::new(config.solver())?;
    let form = solver.form();
    let mut failed = Vec::new();

    let defect = dissipation_defect(measure, form)?;
    dir.write_with("reports/defect.csv", |w| defect.write_csv(w))?;
    h.insert("defect_min".into(), json!(defect.min_defect()));
    h.insert("defect_final".into(), json!(defect.defect.last()));
    h.insert("defect_tolerance".into(), json!(defect.tolerance));
    h.insert("defect_viscous_mismatch".into(), json!(defect.viscous_mismatch()));
    let last = defect.times.len() - 1;
    let gap = (defect.paired_dissipation_accum[last] - defect.product_dissipation_accum[last]).abs();
    h.insert("paired_product_accum_gap".into(), json!(gap));
    if !defect.nonnegative() {
        failed.push("defect_nonnegative".to_string());
    }

    let support = support_check(measure, config.physics.density_floor);
    h.insert("c_rho".into(), json!(support.c_rho));
    if !support.passed {
        failed.push("support".to_string());
    }
    let bounded = boundedness_check(measure)?;
    dir.write_json("reports/support.json", &json!({ "support": support, "boundedness": bounded }))?;
    h.insert("linf_sup".into(), json!(bounded.sup_value));
    h.insert("linf_bound".into(), json!(bounded.bound));
    if !bounded.passed {
        failed.push("boundedness".to_string());
    }

    if let Some(us) = reference_u {
        let c_lambda = poincare_constant(solver.kernel());
        h.insert("c_lambda".into(), json!(c_lambda));
        for mode in [TensorMode::Paired, TensorMode::Product] {
            let rep = compatibility_check(measure, us, form, c_lambda, &defect, mode)?;
            let name = match mode {
                TensorMode::Paired => "paired",
                TensorMode::Product => "product",
            };
            dir.write_with(&format!("reports/compatibility_{name}.csv"), |w| rep.write_csv(w))?;
            h.insert(format!("compatibility_ratio_{name}"), json!(rep.ratio));
            if mode == TensorMode::Paired && !rep.passed() {
                failed.push("compatibility".to_string());
            }
        }
    }

    let residuals = weak_residuals(measure, form, config.physics.m)?;
    dir.write_with("reports/weak_residuals.csv", |w| {
        writeln!(w, "test_function,continuity,momentum_x,momentum_y")?;
        for r in &residuals {
            let my = r.momentum.get(1).copied().unwrap_or(0.0);
            writeln!(w, "{},{:.17e},{:.17e},{:.17e}", r.test_function, r.continuity, r.momentum[0], my)?;
        }
        Ok(())
    })?;
    let worst = residuals.iter().fold(0.0f64, |m, r| m.max(r.continuity.abs()));
    h.insert("continuity_residual_max".into(), json!(worst));
    Ok(failed)
}

/// ε-sweep: ensemble store, defect, compatibility and support reports.
pub fn sweep_eps(config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let base = config.solver();
    let epsilons = config.ensemble.epsilons.clone();
    let data = config.initial.data();
    let fine = reference_config(config);
    fine.validate()?;
    let results = run_members(&base, &epsilons, &data)?;
    let mut dir = RunDir::create(root, ExperimentKind::SweepEps, config)?;
    let mut h = Headline::new();
    let mut members = Vec::new();
    let mut dirs = Vec::new();
    let mut kept = Vec::new();
    let mut abort = None;
    for (i, (res, &eps)) in results.into_iter().zip(&epsilons).enumerate() {
        match res {
            Ok(traj) => {
                let rel = format!("members/member_{i}");
                store::write_trajectory(&mut dir, &format!("{rel}/"), &traj, true, false)?;
                members.push(Member::from_trajectory(eps, &traj));
                dirs.push(rel);
                kept.push(eps);
            }
            Err(e) => {
                if abort.is_none() {
                    abort = Some(e);
                }
            }
        }
    }
    let times = members.first().map(|m| m.states.iter().map(|s| s.t).collect()).unwrap_or_default();
    let index = EnsembleIndex {
        config_hash: config.hash(),
        dim: base.dim,
        n: base.n,
        gamma: base.gamma,
        epsilons: kept,
        times,
        members: dirs,
    };
    dir.write_json(ENSEMBLE_INDEX, &index)?;
    h.insert("members_completed".into(), json!(members.len()));
    h.insert("members_requested".into(), json!(epsilons.len()));
    if let Some(e) = abort {
        return dir.finish(Status::MemberAborted, Some(e.to_string()), h, certificate(&base));
    }
    let measure = EnsembleMeasure::new(base.grid()?, base.gamma, members)?;
    let reference = match make_reference(&fine, &data) {
        Ok(r) => r,
        Err(e) => return dir.finish(Status::of_error(&e), Some(e.to_string()), h, certificate(&base)),
    };
    let us: Vec<VectorField> = reference.restrict_all(measure.grid())?.into_iter().map(|s| s.u).collect();
    h.insert("reference_tail_ratio".into(), json!(reference.max_tail_ratio));
    let failed = ensemble_reports(&mut dir, &mut h, config, &measure, Some(&us))?;
    finish_checks(dir, failed, h, certificate(&base))
}

fn finish_checks(dir: RunDir, failed: Vec<String>, h: Headline, cert: Option<Value>) -> Result<Outcome> {
    if failed.is_empty() {
        dir.finish(Status::Ok, None, h, cert)
    } else {
        dir.finish(Status::CheckFailed, Some(format!("failed checks: {}", failed.join(", "))), h, cert)
    }
}

fn perturbed(data: &InitialData, config: &ExperimentConfig, amplitude: f64) -> InitialData {
    let mut out = data.clone();
    if amplitude != 0.0 {
        for p in &config.weak_strong.perturbation {
            out.modes.push(Mode { field: p.field, k: p.k.clone(), amplitude: amplitude * p.weight, phase: p.phase });
        }
    }
    out
}

/// Relative energy of coarse runs against a fine smooth reference: the
/// zero-perturbation test plus the configured amplitudes.
pub fn weak_strong(config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let ws = &config.weak_strong;
    let fine = reference_config(config);
    fine.validate()?;
    let coarse = SolverConfig { epsilon: ws.epsilon, ..config.solver() };
    let solver = Solver::new(coarse.clone())?;
    let grid = *solver.grid();
    let data = config.initial.data();
    for &a in &ws.amplitudes {
        perturbed(&data, config, a).sample(&grid)?;
    }
    let mut dir = RunDir::create(root, ExperimentKind::WeakStrong, config)?;
    let mut h = Headline::new();
    let cert = certificate(&coarse);
    let reference = match make_reference(&fine, &data) {
        Ok(r) => r,
        Err(e) => return dir.finish(Status::of_error(&e), Some(e.to_string()), h, cert),
    };
    h.insert("reference_tail_ratio".into(), json!(reference.max_tail_ratio));
    let refs = reference.restrict_all(&grid)?;
    let unresolved = reference.unresolved_energy(&grid);
    h.insert("reference_unresolved_energy".into(), json!(unresolved));
    let mut amplitudes = vec![0.0];
    amplitudes.extend(ws.amplitudes.iter().copied().filter(|a| *a != 0.0));
    let mut failed = Vec::new();
    let mut finals = Vec::new();
    for (i, &a) in amplitudes.iter().enumerate() {
        let out = solver.run_partial(&perturbed(&data, config, a).sample(&grid)?)?;
        if let Some(e) = out.abort {
            return dir.finish(Status::of_error(&e), Some(format!("amplitude {a:e}: {e}")), h, cert);
        }
        let traj = out.trajectory;
        let dt_max = traj.diagnostics.iter().map(|d| d.dt_last).fold(0.0, f64::max);
        let rep = gronwall_certificate(&traj, &refs, solver.form(), ws.gronwall, tol_conv(dt_max, unresolved))?;
        dir.write_with(&format!("reports/relative_energy_{i}.csv"), |w| rep.write_csv(w))?;
        h.insert(format!("amplitude_{i}"), json!(a));
        h.insert(format!("final_e_rel_{i}"), json!(rep.final_e_rel()));
        h.insert(format!("max_e_rel_{i}"), json!(rep.max_e_rel()));
        if a == 0.0 {
            h.insert("zero_test_tolerance".into(), json!(rep.zero_test_tolerance));
            if rep.zero_test_violation {
                failed.push("zero_test".to_string());
            }
        }
        if !rep.sigma_within_bound {
            failed.push(format!("sigma_bound[{i}]"));
        }
        if rep.d_rel_rate.iter().any(|d| *d < 0.0) {
            failed.push(format!("relative_dissipation_sign[{i}]"));
        }
        if a != 0.0 {
            finals.push((a, rep.final_e_rel()));
        }
        h.insert(format!("grad_u_max_{i}"), json!(rep.grad_u_max));
    }
    for w in finals.windows(2) {
        let ratio = w[0].1 / w[1].1;
        h.insert(format!("e_rel_ratio_{:e}_{:e}", w[0].0, w[1].0), json!(ratio));
    }
    finish_checks(dir, failed, h, cert)
}

fn selftest_failures(row: &SelftestRow) -> Vec<&'static str> {
    let mut out = Vec::new();
    if row.max_symmetry_defect != 0.0 {
        out.push("symmetry");
    }
    if !row.tail_monotone {
        out.push("tail");
    }
    if !(row.calibration_c > 0.0) {
        out.push("calibration");
    }
    if row.spectral_rel_error.is_some_and(|e| e > row.spectral_tolerance) {
        out.push("spectral_equivalence");
    }
    out
}

/// Kernel certificate over the configured `(λ, M, N)` lists.
pub fn kernel_selftest(config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let st = &config.selftest;
    let mut cfgs = Vec::new();
    for &lambda in &st.lambdas {
        for &m in &st.truncations {
            for &n in &st.ns {
                cfgs.push(KernelConfig::new(st.dim, lambda, m, n)?.with_farfield(config.kernel.farfield));
            }
        }
    }
    if cfgs.is_empty() {
        return Err(Error::Config("selftest lists are empty".into()));
    }
    let rows = cfgs.iter().map(selftest).collect::<Result<Vec<_>>>()?;
    let mut dir = RunDir::create(root, ExperimentKind::KernelSelftest, config)?;
    dir.write_with("reports/kernel_certificate.csv", |w| {
        writeln!(w, "lambda,M,N,tail_bound,calibration_c,max_symmetry_defect,spectral_rel_error,spectral_tolerance,status")?;
        for r in &rows {
            let spectral = r.spectral_rel_error.map_or_else(|| "skipped".to_string(), |e| format!("{e:.6e}"));
            let status = if !r.passed {
                "fail"
            } else if r.spectral_rel_error.is_none() {
                "partial"
            } else {
                "pass"
            };
            writeln!(
                w,
                "{},{},{},{:.17e},{:.17e},{:.3e},{},{:.6e},{}",
                r.lambda, r.truncation, r.n, r.tail_bound, r.calibration_c, r.max_symmetry_defect, spectral, r.spectral_tolerance, status
            )?;
        }
        Ok(())
    })?;
    dir.write_json("reports/kernel_certificate.json", &rows)?;
    let mut h = Headline::new();
    h.insert("rows".into(), json!(rows.len()));
    h.insert("partial".into(), json!(rows.iter().any(|r| r.spectral_rel_error.is_none())));
    let worst = rows.iter().filter_map(|r| r.spectral_rel_error).fold(0.0, f64::max);
    h.insert("max_spectral_rel_error".into(), json!(worst));
    let mut failed = Vec::new();
    for r in &rows {
        for check in selftest_failures(r) {
            failed.push(format!("{check} (lambda={}, M={}, N={})", r.lambda, r.truncation, r.n));
        }
    }
    finish_checks(dir, failed, h, None)
}

/// Measure-level reports for a stored ensemble (`[ensemble].store`) or a
/// freshly computed one.
pub fn measure_report(config: &ExperimentConfig, root: &Path) -> Result<Outcome> {
    let base = config.solver();
    let measure = match &config.ensemble.store {
        Some(path) => store::load_ensemble(Path::new(path))?,
        None => {
            let trajs = run_members(&base, &config.ensemble.epsilons, &config.initial.data())?;
            let members = trajs
                .into_iter()
                .zip(&config.ensemble.epsilons)
                .map(|(t, &e)| t.map(|t| Member::from_trajectory(e, &t)))
                .collect::<Result<Vec<_>>>()?;
            EnsembleMeasure::new(base.grid()?, base.gamma, members)?
        }
    };
    if measure.grid() != &base.grid()? {
        return Err(Error::Config("stored ensemble grid differs from [grid]".into()));
    }
    let mut dir = RunDir::create(root, ExperimentKind::MeasureReport, config)?;
    let mut h = Headline::new();
    h.insert("members".into(), json!(measure.members().len()));
    let k = measure.times().len() - 1;
    let s_mean = measure.moment(k, |s, _| s)?;
    let v_mean = measure.moment(k, |_, v| v[0])?;
    let v_sq = measure.moment(k, |_, v| v[0] * v[0])?;
    let energy_density = measure.moment(k, |s, v| 0.5 * s * (v[0] * v[0] + v[1] * v[1]))?;
    let norm = measure.moment(k, |_, _| 1.0)?;
    dir.write_with("reports/moments_final.csv", |w| {
        writeln!(w, "node,normalization,mean_s,mean_v_x,var_v_x,mean_kinetic")?;
        for i in 0..s_mean.len() {
            let var = (v_sq[i] - v_mean[i] * v_mean[i]).max(0.0);
            writeln!(w, "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", norm[i], s_mean[i], v_mean[i], var, energy_density[i])?;
        }
        Ok(())
    })?;
    let failed = ensemble_reports(&mut dir, &mut h, config, &measure, None)?;
    finish_checks(dir, failed, h, certificate(&base))
}
