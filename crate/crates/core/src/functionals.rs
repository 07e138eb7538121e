//! Energies, the relative energy, and the checks built on them.

use serde::Serialize;

use crate::alignment::AlignmentForm;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fields::{mean, Grid, Spectral, State};
use crate::kernel::PeriodizedKernel;
use crate::numeric::compensated_sum;

fn check_positive(rho: &[f64]) -> Result<()> {
    match rho.iter().position(|&r| !(r > 0.0)) {
        Some(node) => Err(Error::NonPositiveDensity { node, value: rho[node] }),
        None => Ok(()),
    }
}

/// `h^d Σ (½ρ|u|² + ρ^γ/(γ−1))`.
pub fn total_energy(grid: &Grid, state: &State, gamma: f64) -> Result<f64> {
    grid.check_len(state.rho.len())?;
    state.u.check(grid)?;
    check_positive(&state.rho)?;
    let speed = state.u.norm_sq();
    let density = state.rho.iter().zip(&speed).map(|(r, s)| 0.5 * r * s + r.powf(gamma) / (gamma - 1.0));
    Ok(grid.cell_volume() * compensated_sum(density))
}

/// Bregman divergence of the pressure potential,
/// `P(s) − P′(r)(s − r) − P(r)`. Exactly `(s − r)²` for `γ = 2`.
pub fn pressure_bregman(s: f64, r: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        let d = s - r;
        return d * d;
    }
    bregman_general(s, r, gamma)
}

/// `r^γ/(γ−1) · [(1+y)^γ − 1 − γy]` with `y = (s − r)/r`; the bracket is
/// summed as a binomial series when `|y| ≤ ½` to avoid cancellation.
fn bregman_general(s: f64, r: f64, gamma: f64) -> f64 {
    let y = (s - r) / r;
    let bracket = if y.abs() <= 0.5 {
        let mut coeff = gamma * (gamma - 1.0) / 2.0;
        let mut power = y * y;
        let mut acc = 0.0;
        for k in 2..200u32 {
            let term = coeff * power;
            acc += term;
            if term.abs() <= 1e-18 * acc.abs() || coeff == 0.0 {
                break;
            }
            coeff *= (gamma - k as f64) / (k as f64 + 1.0);
            power *= y;
        }
        acc
    } else {
        (1.0 + y).powf(gamma) - 1.0 - gamma * y
    };
    (r.powf(gamma) / (gamma - 1.0) * bracket).max(0.0)
}

/// `h^d Σ [½ρ|u − U|² + P(ρ) − P′(r)(ρ − r) − P(r)]`.
pub fn relative_energy(grid: &Grid, state: &State, reference: &State, gamma: f64) -> Result<f64> {
    grid.check_len(state.rho.len())?;
    grid.check_len(reference.rho.len())?;
    state.u.check(grid)?;
    reference.u.check(grid)?;
    check_positive(&state.rho)?;
    check_positive(&reference.rho)?;
    let du = state.u.sub(&reference.u).norm_sq();
    let terms = (0..grid.len()).map(|i| {
        let s = state.rho[i];
        0.5 * s * du[i] + pressure_bregman(s, reference.rho[i], gamma)
    });
    Ok(grid.cell_volume() * compensated_sum(terms))
}

/// Energy balance along a trajectory,
/// `residual = E(τ) + ∫₀^τ (alignment + viscous dissipation) − E(0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyBudget {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub align_accum: Vec<f64>,
    pub visc_accum: Vec<f64>,
    pub residual: Vec<f64>,
}

impl EnergyBudget {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn energy_budget(traj: &Trajectory) -> EnergyBudget {
    let d = &traj.diagnostics;
    let e0 = d.first().map_or(0.0, |x| x.energy);
    EnergyBudget {
        times: d.iter().map(|x| x.t).collect(),
        energy: d.iter().map(|x| x.energy).collect(),
        align_accum: d.iter().map(|x| x.align_accum).collect(),
        visc_accum: d.iter().map(|x| x.visc_accum).collect(),
        residual: d.iter().map(|x| (x.energy - e0) + x.align_accum + x.visc_accum).collect(),
    }
}

/// Smallest sampled ratios of the pressure Bregman divergence to its
/// quadratic (near) and polytropic (far) lower bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticBound {
    pub gamma: f64,
    pub delta: f64,
    pub samples: usize,
    /// `min (P(s)−P′(r)(s−r)−P(r)) / (s−r)²` over `s ∈ [δ/4, 1/δ]`, `r ∈ [δ, 1/δ]`, `s ≠ r`.
    pub near_constant: f64,
    pub near_argmin: (f64, f64),
    /// `min (P(s)−P′(r)(s−r)−P(r)) / (1 + s^γ)` over `s ∉ (δ/2, 2/δ)`, `r ∈ [δ, 1/δ]`.
    pub far_constant: f64,
    pub far_argmin: (f64, f64),
}

/// Far-regime samples extend to this multiple of `2/δ`.
const FAR_SPAN: f64 = 1e3;

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

fn logspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(move |i| if i + 1 == n { b } else { (la + (lb - la) * i as f64 / (n - 1) as f64).exp() })
}

/// Samples the two regimes on `samples × samples` grids (endpoints included).
pub fn quadratic_bound_check(gamma: f64, delta: f64, samples: usize) -> Result<QuadraticBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::EmptyRange(format!("delta must lie in (0, 1), got {delta}")));
    }
    if samples < 2 {
        return Err(Error::EmptyRange(format!("need at least 2 samples per axis, got {samples}")));
    }
    if !(gamma >= 2.0) {
        return Err(Error::Config(format!("gamma must be >= 2, got {gamma}")));
    }
    let rs: Vec<f64> = logspace(delta, 1.0 / delta, samples).collect();

    let mut near = (f64::INFINITY, (0.0, 0.0));
    for s in logspace(delta / 4.0, 1.0 / delta, samples) {
        for &r in &rs {
            if s == r {
                continue;
            }
            let ratio = pressure_bregman(s, r, gamma) / ((s - r) * (s - r));
            if ratio < near.0 {
                near = (ratio, (s, r));
            }
        }
    }

    let low = linspace(0.0, delta / 2.0, samples);
    let high = logspace(2.0 / delta, FAR_SPAN * 2.0 / delta, samples);
    let mut far = (f64::INFINITY, (0.0, 0.0));
    for s in low.chain(high) {
        for &r in &rs {
            let ratio = pressure_bregman(s, r, gamma) / (1.0 + s.powf(gamma));
            if ratio < far.0 {
                far = (ratio, (s, r));
            }
        }
    }
    if !near.0.is_finite() || !far.0.is_finite() {
        return Err(Error::EmptyRange("no admissible (s, r) samples".into()));
    }
    Ok(QuadraticBound {
        gamma,
        delta,
        samples,
        near_constant: near.0,
        near_argmin: near.1,
        far_constant: far.0,
        far_argmin: far.1,
    })
}

/// Result of the fractional Poincaré inequality on one field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoincareReport {
    pub variance: f64,
    pub seminorm: f64,
    /// `‖f − f̄‖² / Q(f)`; `None` for constant fields.
    pub ratio: Option<f64>,
    pub budget: f64,
    pub passed: bool,
}

/// Poincaré constant `C_λ = 1/c` implied by the calibrated kernel.
pub fn poincare_constant(kernel: &PeriodizedKernel) -> f64 {
    1.0 / kernel.calibration()
}

/// Checks `‖f − f̄‖² ≤ budget · Q(f)` with `Q` the quadrature semi-norm.
pub fn poincare_check(f: &[f64], kernel: &PeriodizedKernel, budget: f64) -> Result<PoincareReport> {
    let grid = kernel.grid();
    grid.check_len(f.len())?;
    let m = mean(f);
    let variance = grid.cell_volume() * compensated_sum(f.iter().map(|v| (v - m) * (v - m)));
    let seminorm = kernel.quadrature_seminorm(f);
    let ratio = (variance > 0.0 && seminorm > 0.0).then(|| variance / seminorm);
    let passed = ratio.is_none_or(|r| r <= budget * (1.0 + 1e-12));
    Ok(PoincareReport { variance, seminorm, ratio, budget, passed })
}

/// Constants of the a-priori bound `C_T(t) = A·exp(b (1 + max‖∇U‖_∞) t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallConstants {
    pub a: f64,
    pub b: f64,
}

impl Default for GronwallConstants {
    /// Calibrated on the benchmark stability runs and frozen.
    fn default() -> Self {
        Self { a: 1.05, b: 0.5 }
    }
}

/// Time-step part of [`tol_conv`].
pub const TOL_CONV_CONSTANT: f64 = 1e-6;

/// Safety factor on the unresolved reference energy in [`tol_conv`].
pub const TOL_CONV_SPATIAL: f64 = 10.0;

/// Absolute tolerance on the relative energy of a run started from the
/// reference's own data:
/// `TOL_CONV_CONSTANT · dt⁴ + TOL_CONV_SPATIAL · unresolved`, where
/// `unresolved` is the reference energy outside the coarse grid's band
/// (see `ReferencePair::unresolved_energy`). The first term falls at the
/// scheme's temporal order, the second spectrally in `h`.
pub fn tol_conv(dt: f64, unresolved: f64) -> f64 {
    TOL_CONV_CONSTANT * dt.powi(4) + TOL_CONV_SPATIAL * unresolved
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeEnergyReport {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub e_rel: Vec<f64>,
    pub d_align_accum: Vec<f64>,
    pub d_visc_accum: Vec<f64>,
    pub residual: Vec<f64>,
    /// Instantaneous relative alignment dissipation at each record.
    pub d_rel_rate: Vec<f64>,
    /// Trapezoid accumulation of `d_rel_rate` over the records.
    pub d_rel_accum: Vec<f64>,
    /// `(E_rel + D_rel_accum) / E_rel(0)`; `None` when the run starts on the
    /// reference, i.e. `E_rel(0)` is within the zero-test tolerance.
    pub sigma: Vec<Option<f64>>,
    pub c_t: Vec<f64>,
    pub grad_u_max: f64,
    pub constants: GronwallConstants,
    /// Set when the run started on the reference and `E_rel` later exceeded the tolerance.
    pub zero_test_violation: bool,
    pub zero_test_tolerance: f64,
    pub sigma_within_bound: bool,
}

impl RelativeEnergyReport {
    pub const CSV_HEADER: &'static str = "t,E,E_rel,D_align_accum,D_visc_accum,residual,Sigma_measured,C_T";

    pub fn max_e_rel(&self) -> f64 {
        self.e_rel.iter().copied().fold(0.0, f64::max)
    }

    pub fn final_e_rel(&self) -> f64 {
        self.e_rel.last().copied().unwrap_or(0.0)
    }

    pub fn passed(&self) -> bool {
        !self.zero_test_violation && self.sigma_within_bound && self.d_rel_rate.iter().all(|&d| d >= 0.0)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            let sigma = self.sigma[i].map_or_else(|| "nan".to_string(), |s| format!("{s:.17e}"));
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                self.times[i],
                self.energy[i],
                self.e_rel[i],
                self.d_align_accum[i],
                self.d_visc_accum[i],
                self.residual[i],
                sigma,
                self.c_t[i]
            )?;
        }
        Ok(())
    }
}

/// `max_t max_x |∇U|` over reference states on `grid`.
pub fn max_velocity_gradient(grid: &Grid, states: &[State]) -> f64 {
    let sp = Spectral::new(*grid);
    let mut worst = 0.0f64;
    for s in states {
        for c in s.u.components() {
            for a in 0..grid.dim() {
                worst = sp.derivative(c, a).iter().fold(worst, |m, v| m.max(v.abs()));
            }
        }
    }
    worst
}

/// Relative energy of `traj` against reference states sampled at the same
/// record times on the same grid.
pub fn gronwall_certificate(
    traj: &Trajectory,
    reference: &[State],
    form: &AlignmentForm,
    constants: GronwallConstants,
    zero_tolerance: f64,
) -> Result<RelativeEnergyReport> {
    let grid = &traj.grid;
    if reference.len() != traj.len() {
        return Err(Error::ShapeMismatch { expected: traj.len(), found: reference.len() });
    }
    for (s, r) in traj.states.iter().zip(reference) {
        if (s.t - r.t).abs() > 1e-9 * (1.0 + s.t.abs()) {
            return Err(Error::Config(format!("record times differ: {} vs {}", s.t, r.t)));
        }
    }
    let e_rel = traj
        .states
        .iter()
        .zip(reference)
        .map(|(s, r)| relative_energy(grid, s, r, traj.gamma))
        .collect::<Result<Vec<_>>>()?;
    let d_rel_rate = traj
        .states
        .iter()
        .zip(reference)
        .map(|(s, r)| form.relative_alignment_dissipation(&s.rho, &s.u, &r.u))
        .collect::<Result<Vec<_>>>()?;
    let times = traj.times();
    let d_rel_accum = crate::numeric::cumulative_trapezoid(&times, &d_rel_rate);
    let grad = max_velocity_gradient(grid, reference);
    let rate = constants.b * (1.0 + grad);
    let c_t: Vec<f64> = times.iter().map(|t| constants.a * (rate * t).exp()).collect();
    let e0 = e_rel[0];
    let starts_on_reference = e0 <= zero_tolerance;
    let sigma: Vec<Option<f64>> =
        e_rel.iter().zip(&d_rel_accum).map(|(e, d)| (!starts_on_reference).then(|| (e + d) / e0)).collect();
    let sigma_within_bound = sigma.iter().zip(&c_t).all(|(s, c)| s.is_none_or(|s| s <= *c));
    let zero_test_violation = starts_on_reference && e_rel.iter().any(|&e| e > zero_tolerance);
    let budget = energy_budget(traj);
    Ok(RelativeEnergyReport {
        times,
        energy: budget.energy,
        e_rel,
        d_align_accum: budget.align_accum,
        d_visc_accum: budget.visc_accum,
        residual: budget.residual,
        d_rel_rate,
        d_rel_accum,
        sigma,
        c_t,
        grad_u_max: grad,
        constants,
        zero_test_violation,
        zero_test_tolerance: zero_tolerance,
        sigma_within_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::VectorField;
    use crate::kernel::{build_kernel_table, KernelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_state(g: &Grid, rng: &mut ChaCha8Rng) -> State {
        let rho = (0..g.len()).map(|_| rng.random_range(0.3..2.0)).collect();
        let comps = (0..g.dim()).map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        State::new(g, 0.0, rho, VectorField::from_components(comps).unwrap()).unwrap()
    }

    #[test]
    fn energy_of_constant_states() {
        for d in [1, 2] {
            let g = Grid::new(d, 8).unwrap();
            let vol = (2.0 * PI).powi(d as i32);
            let rest = State::constant(&g, 1.0, &vec![0.0; d]).unwrap();
            assert!((total_energy(&g, &rest, 2.0).unwrap() - vol).abs() < 1e-12 * vol);
            let moving = State::constant(&g, 1.0, &vec![1.0; d]).unwrap();
            let want = vol * (d as f64 / 2.0 + 1.0);
            assert!((total_energy(&g, &moving, 2.0).unwrap() - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn energy_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(2, 8).unwrap();
        let s = random_state(&g, &mut rng);
        let mut naive = 0.0;
        for i in 0..g.len() {
            let v = s.u.at(i);
            naive += 0.5 * s.rho[i] * (v[0] * v[0] + v[1] * v[1]) + s.rho[i].powf(2.5) / 1.5;
        }
        naive *= g.h() * g.h();
        let e = total_energy(&g, &s, 2.5).unwrap();
        assert!((e - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn nonpositive_density_is_rejected() {
        let g = Grid::new(1, 8).unwrap();
        let mut s = State::constant(&g, 1.0, &[0.0]).unwrap();
        s.rho[3] = 0.0;
        assert!(matches!(total_energy(&g, &s, 2.0), Err(Error::NonPositiveDensity { node: 3, .. })));
        let r = State::constant(&g, 1.0, &[0.0]).unwrap();
        assert!(relative_energy(&g, &s, &r, 2.0).is_err());
    }

    #[test]
    fn relative_energy_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(1, 16).unwrap();
        let s = random_state(&g, &mut rng);
        assert_eq!(relative_energy(&g, &s, &s, 2.7).unwrap(), 0.0);

        let shifted = State { u: s.u.shifted(&[0.3]), ..s.clone() };
        let mass = crate::fields::integral(&g, &s.rho);
        let e = relative_energy(&g, &shifted, &s, 3.0).unwrap();
        assert!((e - 0.5 * 0.09 * mass).abs() < 1e-13 * mass);

        let r = random_state(&g, &mut rng);
        let same_u = State { u: r.u.clone(), ..s.clone() };
        let want = g.h() * s.rho.iter().zip(&r.rho).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((relative_energy(&g, &same_u, &r, 2.0).unwrap() - want).abs() < 1e-13 * want);
    }

    #[test]
    fn general_bregman_agrees_with_quadratic_at_gamma_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let s: f64 = rng.random_range(0.01..10.0);
            let r: f64 = rng.random_range(0.1..10.0);
            let exact = (s - r) * (s - r);
            assert!((bregman_general(s, r, 2.0) - exact).abs() <= 1e-12 * exact.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn bregman_series_matches_closed_form_for_cubic() {
        // γ = 3: P(s) − P′(r)(s−r) − P(r) = (s−r)²(s+2r)/2
        for (s, r) in [(1.0, 1.2), (0.9, 1.0), (1.0 + 1e-6, 1.0), (5.0, 1.0), (0.1, 1.0)] {
            let want = (s - r) * (s - r) * (s + 2.0 * r) / 2.0;
            let got = pressure_bregman(s, r, 3.0);
            assert!((got - want).abs() <= 1e-14 * want, "{s} {r}: {got} vs {want}");
        }
    }

    #[test]
    fn quadratic_bound_gamma_two_is_exactly_one() {
        let q = quadratic_bound_check(2.0, 0.2, 60).unwrap();
        assert_eq!(q.near_constant, 1.0);
        assert!(q.far_constant > 0.0);
    }

    #[test]
    fn quadratic_bound_gamma_three_near_regime_closed_form() {
        // ratio (s + 2r)/2 is minimized at s = δ/4, r = δ
        let delta = 0.5;
        let q = quadratic_bound_check(3.0, delta, 80).unwrap();
        assert!((q.near_constant - 9.0 * delta / 8.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bound_rejects_bad_ranges() {
        assert!(matches!(quadratic_bound_check(2.0, 0.0, 10), Err(Error::EmptyRange(_))));
        assert!(matches!(quadratic_bound_check(2.0, 1.0, 10), Err(Error::EmptyRange(_))));
        assert!(matches!(quadratic_bound_check(2.0, 0.5, 1), Err(Error::EmptyRange(_))));
    }

    #[test]
    fn quadratic_bound_refinement_is_stable() {
        for gamma in [2.5, 3.0] {
            let a = quadratic_bound_check(gamma, 0.5, 100).unwrap();
            let b = quadratic_bound_check(gamma, 0.5, 200).unwrap();
            assert!(((a.near_constant - b.near_constant) / b.near_constant).abs() < 0.02);
            assert!(((a.far_constant - b.far_constant) / b.far_constant).abs() < 0.02);
        }
    }

    fn kernel(n: usize, lambda: f64) -> PeriodizedKernel {
        let g = Grid::new(1, n).unwrap();
        build_kernel_table(&KernelConfig::new(1, lambda, 8, n).unwrap(), &g).unwrap()
    }

    #[test]
    fn poincare_on_cosine_is_inverse_calibration() {
        let k = kernel(64, 0.5);
        let f = k.grid().sample(|x| x[0].cos());
        let c_lambda = poincare_constant(&k);
        let rep = poincare_check(&f, &k, c_lambda).unwrap();
        assert!((rep.ratio.unwrap() - c_lambda).abs() < 1e-12 * c_lambda);
        assert!(rep.passed);
    }

    #[test]
    fn poincare_constant_field_is_skipped() {
        let k = kernel(32, 0.25);
        let rep = poincare_check(&[2.0; 32], &k, 1.0).unwrap();
        assert_eq!(rep.ratio, None);
        assert!(rep.passed);
    }

    #[test]
    fn poincare_worst_mode_is_the_first() {
        for lambda in [0.25, 0.5, 0.75] {
            let k = kernel(64, lambda);
            let ratios: Vec<f64> = (1..=16)
                .map(|m| {
                    let f = k.grid().sample(|x| (m as f64 * x[0]).sin());
                    poincare_check(&f, &k, f64::INFINITY).unwrap().ratio.unwrap()
                })
                .collect();
            assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn tolerance_scales_with_dt() {
        assert!((tol_conv(0.01, 0.0) / tol_conv(0.005, 0.0) - 16.0).abs() < 1e-9);
        assert_eq!(tol_conv(0.0, 1e-20), 1e-19);
    }
}
