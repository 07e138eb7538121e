use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use euler_align::alignment::{pairing, AlignmentForm};
use euler_align::dynamics::{FieldName, InitialData, Solver, SolverConfig};
use euler_align::fields::io::Snapshot;
use euler_align::fields::{Grid, State, VectorField};
use euler_align::functionals::{pressure_bregman, relative_energy, total_energy};
use euler_align::kernel::{build_kernel_table, KernelConfig, PeriodizedKernel};

const N: usize = 16;

fn grid() -> Grid {
    Grid::new(1, N).unwrap()
}

fn kernel() -> Arc<PeriodizedKernel> {
    static K: OnceLock<Arc<PeriodizedKernel>> = OnceLock::new();
    K.get_or_init(|| {
        let g = grid();
        Arc::new(build_kernel_table(&KernelConfig::new(1, 0.5, 4, N).unwrap(), &g).unwrap())
    })
    .clone()
}

fn density() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..3.0, N)
}

fn velocity() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, N)
}

fn state(rho: Vec<f64>, u: Vec<f64>) -> State {
    State::new(&grid(), 0.0, rho, VectorField::scalar(u)).unwrap()
}

proptest! {
    #[test]
    fn bregman_is_nonnegative_and_vanishes_on_the_diagonal(s in 1e-3f64..50.0, r in 1e-3f64..50.0, gamma in 1.05f64..4.0) {
        prop_assert!(pressure_bregman(s, r, gamma) >= 0.0);
        prop_assert!(pressure_bregman(r, r, gamma).abs() <= 1e-12 * r.powf(gamma).max(1.0));
    }

    #[test]
    fn relative_energy_is_nonnegative_and_zero_on_itself(
        rho in density(), u in velocity(), r in density(), v in velocity(), gamma in 1.2f64..3.5
    ) {
        let g = grid();
        let a = state(rho.clone(), u.clone());
        let b = state(r, v);
        prop_assert!(relative_energy(&g, &a, &b, gamma).unwrap() >= 0.0);
        let e = total_energy(&g, &a, gamma).unwrap();
        prop_assert!(relative_energy(&g, &a, &a, gamma).unwrap() <= 1e-12 * e);
    }

    #[test]
    fn commutator_conserves_momentum_and_dissipates(rho in density(), u in velocity()) {
        let g = grid();
        let form = AlignmentForm::new(kernel(), &g).unwrap();
        let uf = VectorField::scalar(u);
        let l = form.commutator(&rho, &uf).unwrap();
        let scale: f64 = l.comp(0).iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
        prop_assert!(l.comp(0).iter().sum::<f64>().abs() <= 1e-12 * scale);
        prop_assert!(pairing(&g, &l, &uf) <= 1e-12 * scale);
        prop_assert!(form.dissipation_rate(&rho, &uf).unwrap() >= 0.0);
    }

    #[test]
    fn commutator_ignores_constant_velocity_shifts(rho in density(), u in velocity(), c in -5.0f64..5.0) {
        let g = grid();
        let form = AlignmentForm::new(kernel(), &g).unwrap();
        let uf = VectorField::scalar(u);
        let a = form.commutator(&rho, &uf).unwrap();
        let b = form.commutator(&rho, &uf.shifted(&[c])).unwrap();
        prop_assert!(b.sub(&a).max_norm() <= 1e-12 * (1.0 + a.max_norm()) * (1.0 + c.abs()));
    }

    #[test]
    fn snapshots_roundtrip_exactly(rho in density(), u in velocity(), t in 0.0f64..10.0) {
        let g = grid();
        let s = State::new(&g, t, rho, VectorField::scalar(u)).unwrap();
        let snap = Snapshot::from_state(&g, &s);
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        let back = Snapshot::read_from(&mut buf.as_slice()).unwrap().to_state().unwrap();
        prop_assert_eq!(back, s);
    }
}

/// Rolls a 1D field by `j` nodes: `out[i] = f[i - j]`.
fn roll(f: &[f64], j: usize) -> Vec<f64> {
    let n = f.len();
    (0..n).map(|i| f[(i + n - j) % n]).collect()
}

#[test]
fn solution_is_galilean_invariant() {
    let n = 64;
    let t_end = 0.25;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    // shift by exactly two grid cells over the run
    let c = 2.0 * h / t_end;
    let data = InitialData::benchmark().with_mode(FieldName::Rho, &[2], 0.05, 0.4);
    let run = |shift: f64| {
        let cfg = SolverConfig { n, t_end, dt: Some(1e-3), records: 1, ..SolverConfig::default() };
        let solver = Solver::new(cfg).unwrap();
        let mut d = data.clone();
        d.u_mean[0] += shift;
        solver.run(&d.sample(solver.grid()).unwrap()).unwrap()
    };
    let a = run(0.0);
    let b = run(c);
    let (sa, sb) = (a.last(), b.last());
    let rho_err = roll(&sa.rho, 2).iter().zip(&sb.rho).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let u_err = roll(sa.u.comp(0), 2).iter().zip(sb.u.comp(0)).map(|(x, y)| (x + c - y).abs()).fold(0.0, f64::max);
    assert!(rho_err <= 1e-9, "density {rho_err:e}");
    assert!(u_err <= 1e-9, "velocity {u_err:e}");
}
