use std::f64::consts::PI;

use nsf_plate::chgvar::{DiffeoMap, Metrics};
use nsf_plate::cli_io::scenario::{clamped_bump, shear_vortex, thermal_spot, with_background};
use nsf_plate::fixed_point::{
    conserved_quantities, decay_observable, local_existence_time, run_global, run_local, IterationConfig,
    IterationStatus,
};
use nsf_plate::grid::{BoundaryField, DiffOps, Grid2D};
use nsf_plate::linear::{
    heat_error, plate_error, solve_lift_dv, step_density, velocity_error, PhysParams, PlateStepper,
    TemperatureStepper, TimeScheme, VelocityStepper,
};
use nsf_plate::sources::{
    check_compatibility, eval_global_sources, eval_local_sources, split_mean, F3ShearFactor, FullState, Mode,
    TimeDerivs,
};
use nsf_plate::sparse;
use nsf_plate::Error;
use proptest::prelude::*;

fn grid(n: usize) -> Grid2D {
    Grid2D::new(1.0, 1.0, n, n).unwrap()
}

#[test]
fn manufactured_errors_frozen_at_n16() {
    assert!((heat_error(16).unwrap() / 9.899411304468e-4 - 1.0).abs() < 1e-6);
    assert!((velocity_error(16).unwrap() / 9.163318792285e-4 - 1.0).abs() < 1e-6);
    assert!((plate_error(16, 32).unwrap() / 3.558266139980e-4 - 1.0).abs() < 1e-6);
}

#[test]
fn backward_euler_plate_is_first_order_in_time() {
    let e1 = plate_error(32, 64).unwrap();
    let e2 = plate_error(32, 128).unwrap();
    let order = (e1 / e2).log2();
    assert!((order - 1.0).abs() < 0.2, "{order}");
}

#[test]
fn plate_generator_is_dissipative() {
    let g = grid(16);
    let st = PlateStepper::new(&g, 0.01, TimeScheme::BackwardEuler).unwrap();
    let ev = sparse::eigenvalues(&st.generator()).unwrap();
    assert!(ev.iter().all(|z| z.re < 0.0));
}

#[test]
fn crank_nicolson_plate_energy_decreases() {
    let g = grid(16);
    let st = PlateStepper::new(&g, 0.05, TimeScheme::CrankNicolson).unwrap();
    let mut e1 = clamped_bump(&g, 0.1);
    let mut e2 = g.beam_zeros();
    let zero = g.beam_zeros();
    let mut en = st.energy(&e1, &e2);
    for _ in 0..200 {
        let (a, b) = st.step(&e1, &e2, &zero).unwrap();
        let next = st.energy(&a, &b);
        assert!(next <= en);
        en = next;
        e1 = a;
        e2 = b;
    }
}

#[test]
fn heat_stepper_conserves_mass_without_sources() {
    let g = grid(12);
    let n = g.n_nodes();
    let p = PhysParams::default();
    let st = TemperatureStepper::new(&g, &Metrics::identity(n), &vec![1.0; n], &p, 0.01, 0.0, TimeScheme::BackwardEuler)
        .unwrap();
    let mut th = thermal_spot(&g, 1.0);
    let m0 = sparse::dot(st.mass(), &th);
    let zero = g.zeros();
    let gb = BoundaryField::zeros(&g);
    for _ in 0..50 {
        th = st.step(&th, &zero, &gb).unwrap();
    }
    assert!((sparse::dot(st.mass(), &th) - m0).abs() < 1e-12 * m0.abs());
}

#[test]
fn shifted_heat_decays_the_mean_at_rate_gamma() {
    let g = grid(8);
    let n = g.n_nodes();
    let p = PhysParams::default();
    let dt = 0.01;
    let st = TemperatureStepper::new(&g, &Metrics::identity(n), &vec![1.0; n], &p, dt, 1.0, TimeScheme::BackwardEuler)
        .unwrap();
    let th = st.step(&vec![1.0; n], &g.zeros(), &BoundaryField::zeros(&g)).unwrap();
    for v in th {
        assert!((v - 1.0 / (1.0 + dt)).abs() < 1e-13);
    }
}

#[test]
fn velocity_stepper_imposes_beam_trace() {
    let g = grid(8);
    let n = g.n_nodes();
    let p = PhysParams::default();
    let st = VelocityStepper::new(&g, &Metrics::identity(n), &vec![1.0; n], &p, 0.01, TimeScheme::BackwardEuler).unwrap();
    let eta2 = g.sample_beam(|x| (PI * x).sin());
    let v = st.step(&g.zeros_vec(), &eta2, &g.zeros_vec()).unwrap();
    for i in 1..g.nx {
        assert_eq!(v[1][g.idx(i, g.ny)], eta2[i]);
        assert_eq!(v[0][g.idx(i, g.ny)], 0.0);
    }
    assert_eq!(v[1][g.idx(3, 0)], 0.0);
}

#[test]
fn lift_matches_trace_and_solves_lame() {
    let g = grid(8);
    let eta2 = g.sample_beam(|x| x * (1.0 - x));
    let w = solve_lift_dv(&g, &eta2, &PhysParams::default()).unwrap();
    for i in 1..g.nx {
        assert!((w[1][g.idx(i, g.ny)] - eta2[i]).abs() < 1e-14);
    }
    assert!(w[0].iter().chain(&w[1]).all(|x| x.is_finite()));
}

#[test]
fn density_step_without_flow_only_integrates_sources() {
    let g = grid(6);
    let n = g.n_nodes();
    let rho = vec![1.0; n];
    let f = vec![0.5; n];
    let out = step_density(&g, &rho, &g.zeros_vec(), &g.zeros_vec(), &f, &f, &Metrics::identity(n), &rho, 0.1);
    assert!(out.iter().all(|r| (r - 1.05).abs() < 1e-15));
}

#[test]
fn sources_vanish_at_rest() {
    let g = grid(8);
    let p = PhysParams::default();
    let z = FullState::zeros(&g);
    let id = DiffeoMap::identity(&g);
    let d = TimeDerivs::zeros(&g);
    let s = eval_global_sources(&g, &z, &id, &p, &d, &split_mean(&g, &z.rho), &split_mean(&g, &z.theta), F3ShearFactor::default())
        .unwrap();
    let worst = s.f1.iter().chain(&s.f2[0]).chain(&s.f2[1]).chain(&s.f3).chain(&s.h_tilde).chain(&s.h_hat).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-14, "{worst}");
    assert!(s.split_defect < 1e-14);

    let bg = with_background(&z, &p);
    let n = g.n_nodes();
    let l = eval_local_sources(&g, &bg, &id, &Metrics::identity(n), &bg.rho, &p, &d).unwrap();
    let worst = l.f1.iter().chain(&l.f2[0]).chain(&l.f2[1]).chain(&l.f3).chain(&l.h).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn sources_reject_mismatched_state() {
    let g = grid(8);
    let mut s = FullState::zeros(&g);
    s.eta1.pop();
    let id = DiffeoMap::identity(&g);
    let r = eval_global_sources(&g, &s, &id, &PhysParams::default(), &TimeDerivs::zeros(&g), &split_mean(&g, &s.rho), &split_mean(&g, &s.theta), F3ShearFactor::Consistent);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn compatibility_flags_unclamped_beam_and_bad_trace() {
    let g = grid(8);
    let p = PhysParams::default();
    let a0 = vec![nsf_plate::mat2::IDENTITY; g.n_nodes()];
    let mut s = with_background(&FullState::zeros(&g), &p);
    assert!(check_compatibility(&g, &s, &a0, &p, Mode::Local, 4.0, 4.0).all_pass());
    s.eta1[0] = 1e-3;
    s.v[0][g.idx(0, 3)] = 0.2;
    let r = check_compatibility(&g, &s, &a0, &p, Mode::Local, 4.0, 4.0);
    assert!(!r.get("beam clamped").unwrap().pass);
    assert!(!r.get("velocity trace").unwrap().pass);
    assert_eq!(r.failures().len(), 2);
}

#[test]
fn shear_vortex_is_discretely_divergence_free_to_truncation() {
    let g = grid(32);
    let v = shear_vortex(&g, 1.0);
    let d = DiffOps::new(g).div(&v);
    let worst = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn iteration_config_reports_every_violation() {
    let c = IterationConfig { t_end: 0.1, dt: 0.03, p: 2.0, q: 3.0, rho_k: 2, gamma1: 0.0, ..Default::default() };
    let v = c.violations();
    assert!(v.len() >= 4, "{v:?}");
    assert!(c.validate().is_err());
    assert!(IterationConfig::default().validate().is_ok());
}

#[test]
fn global_run_requires_positive_beta() {
    let g = grid(8);
    let r = run_global(&g, &PhysParams::default(), &FullState::zeros(&g), &IterationConfig::default());
    assert!(r.is_err());
}

#[test]
fn global_run_rejects_non_equilibrium_pressure() {
    let g = grid(8);
    let p = PhysParams { pi0: 0.3, ..PhysParams::default() };
    let cfg = IterationConfig { t_end: 1.0, dt: 0.1, beta: 0.1, ..Default::default() };
    assert!(run_global(&g, &p, &FullState::zeros(&g), &cfg).is_err());
}

#[test]
fn local_run_at_rest_converges_immediately() {
    let g = grid(8);
    let p = PhysParams::default();
    let s = with_background(&FullState::zeros(&g), &p);
    let cfg = IterationConfig { t_end: 0.02, dt: 0.005, ..Default::default() };
    let (tr, rep) = run_local(&g, &p, &s, &cfg).unwrap();
    assert_eq!(rep.status, IterationStatus::Converged);
    assert_eq!(tr.states.len(), 5);
    assert!(tr.states.iter().all(|st| st.rho.iter().all(|r| (r - 1.0).abs() < 1e-14)));
}

#[test]
fn local_existence_time_accepts_small_data() {
    let g = grid(8);
    let p = PhysParams::default();
    let mut s = FullState::zeros(&g);
    s.eta1 = clamped_bump(&g, 1e-3);
    let s = with_background(&s, &p);
    let cfg = IterationConfig { t_end: 0.04, dt: 0.005, ..Default::default() };
    let (t, attempts) = local_existence_time(&g, &p, &s, &cfg, 2).unwrap();
    assert_eq!(t, Some(0.04));
    assert_eq!(attempts.len(), 1);
}

#[test]
fn local_run_rejects_inadmissible_initial_beam() {
    let g = grid(8);
    let p = PhysParams::default();
    let mut s = FullState::zeros(&g);
    s.eta1 = clamped_bump(&g, 0.45);
    let s = with_background(&s, &p);
    let cfg = IterationConfig { t_end: 0.02, dt: 0.005, ..Default::default() };
    assert!(run_local(&g, &p, &s, &cfg).is_err());
}

#[test]
fn linear_global_run_decays_and_conserves() {
    let g = grid(8);
    let p = PhysParams::default();
    let mut s = FullState::zeros(&g);
    s.eta1 = clamped_bump(&g, 1e-2);
    let cfg = IterationConfig { t_end: 10.0, dt: 0.05, beta: 0.1, linear_only: true, ..Default::default() };
    let (tr, rep) = run_global(&g, &p, &s, &cfg).unwrap();
    assert!(rep.converged());
    let first = decay_observable(&g, &tr.states[10]);
    let last = decay_observable(&g, tr.states.last().unwrap());
    assert!(last < 0.2 * first, "{first} {last}");
    assert!(conserved_quantities(&g, &p, &tr).max_drift < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mean_split_has_zero_mean_and_reconstructs(vals in prop::collection::vec(-5.0f64..5.0, 49)) {
        let g = grid(6);
        let s = split_mean(&g, &vals);
        prop_assert!(g.mean(&s.tilde).abs() < 1e-13);
        for k in 0..vals.len() {
            prop_assert!((s.tilde[k] + s.avg - vals[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn backward_euler_plate_energy_never_grows(amp in -0.2f64..0.2, vel in -1.0f64..1.0, dt in 1e-3f64..0.5) {
        let g = grid(12);
        let st = PlateStepper::new(&g, dt, TimeScheme::BackwardEuler).unwrap();
        let mut e1 = clamped_bump(&g, amp);
        let mut e2 = g.sample_beam(|x| vel * (PI * x).sin().powi(2));
        let zero = g.beam_zeros();
        let mut en = st.energy(&e1, &e2);
        for _ in 0..50 {
            let (a, b) = st.step(&e1, &e2, &zero).unwrap();
            let next = st.energy(&a, &b);
            prop_assert!(next <= en);
            en = next;
            e1 = a;
            e2 = b;
        }
    }

    #[test]
    fn global_sources_are_quadratic_in_small_states(s in 0.01f64..0.1) {
        let g = grid(8);
        let p = PhysParams::default();
        let mut base = FullState::zeros(&g);
        base.theta = g.sample(|x, y| (x * y).cos() - 0.8);
        base.v = g.sample_vec(|x, y| { let b = (PI * x).sin() * (PI * y).sin(); [b, 0.5 * b] });
        let id = DiffeoMap::identity(&g);
        let eval = |k: f64| {
            let st = base.scaled(k);
            let d = TimeDerivs { dv: st.v.clone(), dtheta: st.theta.clone() };
            let r = eval_global_sources(&g, &st, &id, &p, &d, &split_mean(&g, &st.rho), &split_mean(&g, &st.theta), F3ShearFactor::default()).unwrap();
            r.f2[0].iter().chain(&r.f2[1]).chain(&r.f3).fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let ratio = eval(s) / eval(0.5 * s);
        prop_assert!((ratio - 4.0).abs() < 0.1, "{}", ratio);
    }
}
