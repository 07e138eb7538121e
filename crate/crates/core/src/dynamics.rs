//! Time integration of the hyperviscous Euler alignment system
//!
//! ```text
//! ∂_t ρ + div(ρu) = 0
//! ∂_t(ρu) + div(ρu⊗u) + ∇ρ^γ = L[ρ, u] − ε Δ^{2m} u
//! ```
//!
//! Transport, pressure and alignment are advanced with SSP-RK3 on `(ρ, ρu)`;
//! the hyperviscous term is then treated by one backward-Euler step on the
//! velocity, `(ρ + ε dt (−Δ)^{2m}) u⁺ = ρu`, solved by preconditioned CG.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentForm, Method};
use crate::error::{Error, Result};
use crate::fields::{integral, mean, Grid, Spectral, State, VectorField};
use crate::functionals::total_energy;
use crate::kernel::{build_kernel_table, FarField, KernelConfig, PeriodizedKernel, DEFAULT_TRUNCATION};
use crate::numeric::compensated_sum;

/// `p(ρ) = ρ^γ`.
pub fn pressure(rho: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_positive(rho)?;
    Ok(rho.iter().map(|r| r.powf(gamma)).collect())
}

/// `P(ρ) = ρ^γ / (γ − 1)`.
pub fn pressure_potential(rho: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_positive(rho)?;
    Ok(rho.iter().map(|r| r.powf(gamma) / (gamma - 1.0)).collect())
}

fn check_positive(rho: &[f64]) -> Result<()> {
    match rho.iter().position(|&r| !(r > 0.0)) {
        Some(node) => Err(Error::NonPositiveDensity { node, value: rho[node] }),
        None => Ok(()),
    }
}

/// Parameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dim: usize,
    pub n: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Hyperviscosity order `m` in `Δ^{2m}`.
    pub m: u32,
    pub truncation: usize,
    pub farfield: FarField,
    pub method: Method,
    pub cfl: f64,
    /// Requested step; `None` selects the admissible step adaptively.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Number of diagnostic intervals on `[0, t_end]`.
    pub records: usize,
    pub density_floor: f64,
    pub mollify_width: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 256,
            gamma: 2.0,
            lambda: 0.5,
            epsilon: 1e-3,
            m: 1,
            truncation: DEFAULT_TRUNCATION,
            farfield: FarField::Complete,
            method: Method::Fft,
            cfl: 0.4,
            dt: None,
            t_end: 1.0,
            records: 50,
            density_floor: 1e-2,
            mollify_width: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma >= 2.0) {
            return bad(format!("gamma must be >= 2, got {}", self.gamma));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.m < 1 {
            return bad("hyperviscosity order m must be >= 1".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be finite and >= 0, got {}", self.t_end));
        }
        if self.records < 1 {
            return bad("records must be >= 1".into());
        }
        if !(self.density_floor > 0.0) {
            return bad(format!("density_floor must be > 0, got {}", self.density_floor));
        }
        if !(self.mollify_width >= 0.0) {
            return bad(format!("mollify_width must be >= 0, got {}", self.mollify_width));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad(format!("dt must be > 0, got {dt}"));
            }
        }
        Grid::new(self.dim, self.n)?;
        self.kernel_config().validate()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n)
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig { dim: self.dim, lambda: self.lambda, truncation: self.truncation, n: self.n, farfield: self.farfield }
    }
}

/// Trigonometric initial data: `mean + Σ a cos(k·x + phase)` per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub rho_mean: f64,
    #[serde(default)]
    pub u_mean: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldName {
    Rho,
    UX,
    UY,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub field: FieldName,
    pub k: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl InitialData {
    /// `ρ = 1 + 0.2 cos x`, `u = 0.1 + 0.1 sin x`.
    pub fn benchmark() -> Self {
        Self {
            rho_mean: 1.0,
            u_mean: vec![0.1],
            modes: vec![
                Mode { field: FieldName::Rho, k: vec![1], amplitude: 0.2, phase: 0.0 },
                Mode { field: FieldName::UX, k: vec![1], amplitude: 0.1, phase: -std::f64::consts::FRAC_PI_2 },
            ],
        }
    }

    pub fn constant(rho: f64, u: &[f64]) -> Self {
        Self { rho_mean: rho, u_mean: u.to_vec(), modes: Vec::new() }
    }

    /// Adds a mode and returns the modified data.
    pub fn with_mode(mut self, field: FieldName, k: &[i64], amplitude: f64, phase: f64) -> Self {
        self.modes.push(Mode { field, k: k.to_vec(), amplitude, phase });
        self
    }

    pub fn sample(&self, grid: &Grid) -> Result<State> {
        let d = grid.dim();
        let mut u_mean = self.u_mean.clone();
        if u_mean.is_empty() {
            u_mean = vec![0.0; d];
        }
        if u_mean.len() != d {
            return Err(Error::Config(format!("u_mean has {} components on a {d}D grid", u_mean.len())));
        }
        let mut rho = vec![self.rho_mean; grid.len()];
        let mut comps: Vec<Vec<f64>> = u_mean.iter().map(|&v| vec![v; grid.len()]).collect();
        for mode in &self.modes {
            if mode.k.len() != d {
                return Err(Error::Config(format!("mode wavevector {:?} does not match dimension {d}", mode.k)));
            }
            let target = match mode.field {
                FieldName::Rho => &mut rho,
                FieldName::UX => &mut comps[0],
                FieldName::UY if d == 2 => &mut comps[1],
                FieldName::UY => return Err(Error::Config("u_y mode on a 1D grid".into())),
            };
            for (i, v) in target.iter_mut().enumerate() {
                let x = grid.node(i);
                let arg = (0..d).map(|a| mode.k[a] as f64 * x[a]).sum::<f64>() + mode.phase;
                *v += mode.amplitude * arg.cos();
            }
        }
        State::new(grid, 0.0, rho, VectorField::from_components(comps)?)
    }
}

/// Quantities recorded at each diagnostic time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    /// `∫₀ᵗ` alignment dissipation, trapezoid rule per step.
    pub align_accum: f64,
    /// Energy removed by the implicit hyperviscous steps.
    pub visc_accum: f64,
    pub min_density: f64,
    /// Instantaneous alignment dissipation rate.
    pub align_rate: f64,
    /// Instantaneous `ε‖Δ^m u‖²`.
    pub visc_rate: f64,
    /// Explicit stability bound on the alignment decay rate.
    pub rate_bound: f64,
    /// Steps taken since the previous record.
    pub steps: usize,
    pub dt_last: f64,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str =
        "t,mass,momentum_x,momentum_y,energy,align_accum,visc_accum,min_density,align_rate,visc_rate,rate_bound,steps,dt_last";

    pub fn csv_row(&self) -> String {
        let my = self.momentum.get(1).copied().unwrap_or(0.0);
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
            self.t,
            self.mass,
            self.momentum[0],
            my,
            self.energy,
            self.align_accum,
            self.visc_accum,
            self.min_density,
            self.align_rate,
            self.visc_rate,
            self.rate_bound,
            self.steps,
            self.dt_last
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub gamma: f64,
    pub states: Vec<State>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.t).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial record")
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "{}", Diagnostics::CSV_HEADER)?;
        for d in &self.diagnostics {
            writeln!(w, "{}", d.csv_row())?;
        }
        Ok(())
    }
}

/// A run that may have stopped early.
#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub abort: Option<Error>,
}

/// Result of one time step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: State,
    pub align_increment: f64,
    pub visc_increment: f64,
}

/// Right-hand side of the explicit part.
#[derive(Clone, Debug)]
pub struct Rates {
    pub drho: Vec<f64>,
    pub dm: VectorField,
}

pub struct Solver {
    cfg: SolverConfig,
    grid: Grid,
    spectral: Spectral,
    form: AlignmentForm,
}

const CG_TOLERANCE: f64 = 1e-14;
const CG_MAX_ITER: usize = 500;

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let kernel = Arc::new(build_kernel_table(&cfg.kernel_config(), &grid)?);
        Self::with_kernel(cfg, kernel)
    }

    /// Reuses an already built kernel table.
    pub fn with_kernel(cfg: SolverConfig, kernel: Arc<PeriodizedKernel>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let form = AlignmentForm::new(kernel, &grid)?.with_method(cfg.method);
        Ok(Self { spectral: Spectral::new(grid), grid, form, cfg })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn form(&self) -> &AlignmentForm {
        &self.form
    }

    pub fn kernel(&self) -> &PeriodizedKernel {
        self.form.kernel()
    }

    fn check_floor(&self, rho: &[f64], t: f64) -> Result<()> {
        let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= self.cfg.density_floor) {
            return Err(Error::DensityFloor { t, min, floor: self.cfg.density_floor });
        }
        Ok(())
    }

    /// `(−div(ρu), −div(ρu⊗u) − ∇p + L[ρ,u])` with dealiased products.
    pub fn rhs(&self, state: &State) -> Result<Rates> {
        self.check_floor(&state.rho, state.t)?;
        let d = self.grid.dim();
        let sp = &self.spectral;
        let rho = &state.rho;
        let u = &state.u;
        let flux: Vec<Vec<f64>> = (0..d).map(|a| sp.dealias(&product(rho, u.comp(a)))).collect();
        let mut drho = vec![0.0; rho.len()];
        for (a, f) in flux.iter().enumerate() {
            for (o, v) in drho.iter_mut().zip(sp.derivative(f, a)) {
                *o -= v;
            }
        }
        remove_mean(&mut drho);

        let p = sp.dealias(&pressure(rho, self.cfg.gamma)?);
        let align = self.form.commutator(rho, u)?;
        let mut dm = Vec::with_capacity(d);
        for a in 0..d {
            let mut out = sp.derivative(&p, a);
            for v in out.iter_mut() {
                *v = -*v;
            }
            for b in 0..d {
                let stress = sp.dealias(&product(&flux[b], u.comp(a)));
                for (o, v) in out.iter_mut().zip(sp.derivative(&stress, b)) {
                    *o -= v;
                }
            }
            for (o, v) in out.iter_mut().zip(align.comp(a)) {
                *o += v;
            }
            remove_mean(&mut out);
            dm.push(out);
        }
        Ok(Rates { drho, dm: VectorField::from_components(dm)? })
    }

    /// `cfl · min(h / max(|u| + c_s), 1 / rate_bound)` with `c_s = √(γρ^{γ−1})`.
    pub fn admissible_dt(&self, state: &State) -> f64 {
        let gamma = self.cfg.gamma;
        let speed = (0..self.grid.len())
            .map(|i| {
                let v = state.u.at(i);
                (v[0] * v[0] + v[1] * v[1]).sqrt() + (gamma * state.rho[i].powf(gamma - 1.0)).sqrt()
            })
            .fold(0.0, f64::max);
        let transport = if speed > 0.0 { self.grid.h() / speed } else { f64::INFINITY };
        let rate = self.form.rate_bound(&state.rho);
        let align = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
        self.cfg.cfl * transport.min(align)
    }

    fn stage(&self, base: &(Vec<f64>, VectorField), incs: &[(f64, &Rates)], dt: f64, t: f64) -> Result<State> {
        let mut rho = base.0.clone();
        let mut m = base.1.clone();
        for (w, r) in incs {
            for (o, v) in rho.iter_mut().zip(&r.drho) {
                *o += dt * w * v;
            }
            for a in 0..m.dim() {
                for (o, v) in m.comp_mut(a).iter_mut().zip(r.dm.comp(a)) {
                    *o += dt * w * v;
                }
            }
        }
        self.check_floor(&rho, t)?;
        let u = m.map_components(|c| c.iter().zip(&rho).map(|(mv, r)| mv / r).collect());
        Ok(State { t, rho, u })
    }

    /// One SSP-RK3 step followed by the implicit hyperviscous solve.
    pub fn step(&self, state: &State, dt: f64) -> Result<StepOutput> {
        let admissible = self.admissible_dt(state);
        if dt > admissible * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, admissible });
        }
        let d0 = self.form.dissipation_rate_fast(&state.rho, &state.u)?;
        let base = (state.rho.clone(), state.momentum());
        let t = state.t;
        let k0 = self.rhs(state)?;
        let s1 = self.stage(&base, &[(1.0, &k0)], dt, t + dt)?;
        let k1 = self.rhs(&s1)?;
        let s2 = self.stage(&base, &[(0.25, &k0), (0.25, &k1)], dt, t + 0.5 * dt)?;
        let k2 = self.rhs(&s2)?;
        let third = 1.0 / 6.0;
        let explicit = self.stage(&base, &[(third, &k0), (third, &k1), (4.0 * third, &k2)], dt, t + dt)?;
        let d1 = self.form.dissipation_rate_fast(&explicit.rho, &explicit.u)?;
        let align_increment = 0.5 * dt * (d0 + d1);

        let (u_new, visc_increment) = self.implicit_viscous(&explicit.rho, &explicit.u, dt)?;
        let state = State { t: t + dt, rho: explicit.rho, u: u_new };
        Ok(StepOutput { state, align_increment, visc_increment })
    }

    /// Solves `(ρ + ε dt A) u⁺ = ρu` with `A = (−Δ)^{2m}`, then restores the
    /// total momentum exactly with a constant velocity shift. Returns the new
    /// velocity and the kinetic energy removed,
    /// `ε dt ‖Δ^m u⁺‖² + ½ h^d Σ ρ|u⁺ − u|²`.
    fn implicit_viscous(&self, rho: &[f64], u: &VectorField, dt: f64) -> Result<(VectorField, f64)> {
        let eps = self.cfg.epsilon;
        if eps == 0.0 {
            return Ok((u.clone(), 0.0));
        }
        let coeff = eps * dt;
        let m = self.cfg.m;
        let rho_bar = mean(rho);
        let sp = &self.spectral;
        let apply = |v: &[f64]| -> Vec<f64> {
            let av = sp.hyperviscous_operator(v, m);
            v.iter().zip(rho).zip(av).map(|((x, r), a)| r * x + coeff * a).collect()
        };
        let precond = |r: &[f64]| -> Vec<f64> {
            let scaled: Vec<f64> = r.iter().map(|v| v / rho_bar).collect();
            sp.hyperdiffusion_solve_scalar(&scaled, coeff / rho_bar, m)
        };
        let mut comps = Vec::with_capacity(u.dim());
        for a in 0..u.dim() {
            let b = product(rho, u.comp(a));
            let mut x = precond(&b);
            let ax = apply(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let b_norm = dot(&b, &b).sqrt();
            if dot(&r, &r).sqrt() > CG_TOLERANCE * b_norm {
                let mut z = precond(&r);
                let mut p = z.clone();
                let mut rz = dot(&r, &z);
                let mut converged = false;
                for _ in 0..CG_MAX_ITER {
                    let ap = apply(&p);
                    let alpha = rz / dot(&p, &ap);
                    for i in 0..x.len() {
                        x[i] += alpha * p[i];
                        r[i] -= alpha * ap[i];
                    }
                    if dot(&r, &r).sqrt() <= CG_TOLERANCE * b_norm {
                        converged = true;
                        break;
                    }
                    z = precond(&r);
                    let rz_new = dot(&r, &z);
                    let beta = rz_new / rz;
                    rz = rz_new;
                    for i in 0..p.len() {
                        p[i] = z[i] + beta * p[i];
                    }
                }
                if !converged {
                    // CG stagnates at round-off for extremely stiff coefficients; the
                    // momentum shift below still restores conservation exactly
                    let rel = dot(&r, &r).sqrt() / b_norm;
                    if rel > 1e-10 {
                        return Err(Error::Config(format!("implicit hyperviscous solve did not converge (residual {rel:e})")));
                    }
                }
            }
            let target = compensated_sum(b.iter().copied());
            let got = compensated_sum(rho.iter().zip(&x).map(|(r, v)| r * v));
            let shift = (target - got) / compensated_sum(rho.iter().copied());
            if shift != 0.0 {
                for v in x.iter_mut() {
                    *v += shift;
                }
            }
            comps.push(x);
        }
        let u_new = VectorField::from_components(comps)?;
        let cell = self.grid.cell_volume();
        let jump = cell * compensated_sum(u_new.sub(u).norm_sq().iter().zip(rho).map(|(d, r)| r * d));
        let dissipated = coeff * sp.hyperviscous_energy(&u_new, m) + 0.5 * jump;
        Ok((u_new, dissipated))
    }

    fn diagnostics(&self, state: &State, align_accum: f64, visc_accum: f64, steps: usize, dt_last: f64) -> Result<Diagnostics> {
        let mom = state.momentum();
        Ok(Diagnostics {
            t: state.t,
            mass: integral(&self.grid, &state.rho),
            momentum: mom.components().iter().map(|c| integral(&self.grid, c)).collect(),
            energy: total_energy(&self.grid, state, self.cfg.gamma)?,
            align_accum,
            visc_accum,
            min_density: state.min_density(),
            align_rate: self.form.dissipation_rate_fast(&state.rho, &state.u)?,
            visc_rate: self.cfg.epsilon * self.spectral.hyperviscous_energy(&state.u, self.cfg.m),
            rate_bound: self.form.rate_bound(&state.rho),
            steps,
            dt_last,
        })
    }

    /// Applies the configured mollification to initial data.
    pub fn prepare_initial(&self, initial: &State) -> Result<State> {
        initial.u.check(&self.grid)?;
        self.grid.check_len(initial.rho.len())?;
        let w = self.cfg.mollify_width;
        let rho = self.spectral.mollify(&initial.rho, w);
        let u = initial.u.map_components(|c| self.spectral.mollify(c, w));
        State::new(&self.grid, initial.t, rho, u)
    }

    /// Integrates to `t_end`, keeping whatever was computed before an abort.
    pub fn run_partial(&self, initial: &State) -> Result<RunOutcome> {
        let mut state = self.prepare_initial(initial)?;
        state.check_positive()?;
        self.check_floor(&state.rho, state.t)?;
        let t0 = state.t;
        let mut align_accum = 0.0;
        let mut visc_accum = 0.0;
        let mut traj = Trajectory {
            grid: self.grid,
            gamma: self.cfg.gamma,
            states: vec![state.clone()],
            diagnostics: vec![self.diagnostics(&state, 0.0, 0.0, 0, 0.0)?],
        };
        if self.cfg.t_end == 0.0 {
            return Ok(RunOutcome { trajectory: traj, abort: None });
        }
        let records = self.cfg.records;
        let interval = self.cfg.t_end / records as f64;
        for k in 1..=records {
            let t_target = t0 + k as f64 * interval;
            let mut steps = 0usize;
            let mut dt_last = 0.0;
            let outcome: Result<()> = (|| {
                if let Some(dt_req) = self.cfg.dt {
                    // uniform steps landing exactly on the record time
                    let count = ((t_target - state.t) / dt_req - 1e-9).ceil().max(1.0) as usize;
                    let t_start = state.t;
                    let dt = (t_target - t_start) / count as f64;
                    for s in 0..count {
                        let out = self.step(&state, dt)?;
                        state = out.state;
                        state.t = if s + 1 == count { t_target } else { t_start + (s + 1) as f64 * dt };
                        align_accum += out.align_increment;
                        visc_accum += out.visc_increment;
                        steps += 1;
                        dt_last = dt;
                    }
                } else {
                    while state.t < t_target {
                        let remaining = t_target - state.t;
                        let mut dt = self.admissible_dt(&state);
                        let last = dt >= remaining * (1.0 - 1e-12);
                        if last {
                            dt = remaining;
                        } else if dt > 0.5 * remaining {
                            dt = 0.5 * remaining;
                        }
                        let out = self.step(&state, dt)?;
                        state = out.state;
                        if last {
                            state.t = t_target;
                        }
                        align_accum += out.align_increment;
                        visc_accum += out.visc_increment;
                        steps += 1;
                        dt_last = dt;
                    }
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                return Ok(RunOutcome { trajectory: traj, abort: Some(e) });
            }
            traj.diagnostics.push(self.diagnostics(&state, align_accum, visc_accum, steps, dt_last)?);
            traj.states.push(state.clone());
        }
        Ok(RunOutcome { trajectory: traj, abort: None })
    }

    /// Integrates to `t_end`; any abort is returned as the error.
    pub fn run(&self, initial: &State) -> Result<Trajectory> {
        let out = self.run_partial(initial)?;
        match out.abort {
            Some(e) => Err(e),
            None => Ok(out.trajectory),
        }
    }
}

/// Convenience wrapper building the solver from `cfg`.
pub fn run(cfg: &SolverConfig, initial: &State) -> Result<Trajectory> {
    Solver::new(cfg.clone())?.run(initial)
}

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn remove_mean(f: &mut [f64]) {
    let m = mean(f);
    if m != 0.0 {
        for v in f.iter_mut() {
            *v -= m;
        }
    }
}

/// Largest spectral tail ratio allowed for a reference solution.
pub const REFERENCE_TAIL_LIMIT: f64 = 1e-8;

/// A smooth comparison solution computed on a fine grid with `ε = 0`.
#[derive(Clone, Debug)]
pub struct ReferencePair {
    pub trajectory: Trajectory,
    /// Worst spectral tail ratio seen over the run.
    pub max_tail_ratio: f64,
}

impl ReferencePair {
    pub fn grid(&self) -> &Grid {
        &self.trajectory.grid
    }

    pub fn times(&self) -> Vec<f64> {
        self.trajectory.times()
    }

    /// Record `k` interpolated onto `target`.
    pub fn restrict(&self, k: usize, target: &Grid) -> Result<State> {
        let s = self.trajectory.states.get(k).ok_or(Error::UnknownSnapshot(k))?;
        resample_state(s, self.grid(), target)
    }

    /// All records interpolated onto `target`.
    pub fn restrict_all(&self, target: &Grid) -> Result<Vec<State>> {
        (0..self.trajectory.len()).map(|k| self.restrict(k, target)).collect()
    }

    /// Largest energy, over the records, of the modes a solver on `coarse`
    /// cannot carry: `∫ |ρ - Pρ|² + |u - Pu|²` with `P` the two-thirds
    /// truncation of `coarse`.
    pub fn unresolved_energy(&self, coarse: &Grid) -> f64 {
        let sp = Spectral::new(*self.grid());
        let cutoff = coarse.n() as i64 / 3;
        let volume = self.grid().volume();
        let mut worst = 0.0f64;
        for s in &self.trajectory.states {
            let mut acc = 0.0;
            for f in std::iter::once(&s.rho).chain(s.u.components()) {
                for (idx, c) in sp.forward(f).iter().enumerate() {
                    let k = sp.wavevector(idx);
                    if k[0].abs() > cutoff || k[1].abs() > cutoff {
                        acc += c.norm_sqr();
                    }
                }
            }
            worst = worst.max(volume * acc);
        }
        worst
    }
}

/// Spectral interpolation of a whole state between grids.
pub fn resample_state(state: &State, from: &Grid, to: &Grid) -> Result<State> {
    let sp = Spectral::new(*from);
    let rho = sp.resample(&state.rho, to)?;
    let comps = state.u.components().iter().map(|c| sp.resample(c, to)).collect::<Result<Vec<_>>>()?;
    State::new(to, state.t, rho, VectorField::from_components(comps)?)
}

/// Worst tail ratio over `ρ` and the velocity components.
pub fn state_tail_ratio(grid: &Grid, state: &State) -> f64 {
    let sp = Spectral::new(*grid);
    let mut worst = sp.tail_ratio(&state.rho);
    for c in state.u.components() {
        worst = worst.max(sp.tail_ratio(c));
    }
    worst
}

/// Runs `cfg_fine` (which must have `ε = 0`) from `initial` sampled on the
/// fine grid and rejects the result if the spectral tail exceeds
/// [`REFERENCE_TAIL_LIMIT`] at any record.
pub fn make_reference(cfg_fine: &SolverConfig, initial: &InitialData) -> Result<ReferencePair> {
    if cfg_fine.epsilon != 0.0 {
        return Err(Error::Config("the reference solution must be computed with epsilon = 0".into()));
    }
    let grid = cfg_fine.grid()?;
    let solver = Solver::new(cfg_fine.clone())?;
    let trajectory = solver.run(&initial.sample(&grid)?)?;
    let mut worst = 0.0f64;
    for s in &trajectory.states {
        let ratio = state_tail_ratio(&grid, s);
        worst = worst.max(ratio);
        if ratio > REFERENCE_TAIL_LIMIT {
            return Err(Error::ReferenceRejected { t: s.t, ratio, limit: REFERENCE_TAIL_LIMIT });
        }
    }
    Ok(ReferencePair { trajectory, max_tail_ratio: worst })
}
