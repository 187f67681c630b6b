use std::f64::consts::PI;

use nsf_plate::chgvar::{
    check_diffeo, initial_diffeo, metric_tensors, CutoffProfile, DiffeoMap, MapTracker, Metrics,
};
use nsf_plate::grid::{
    beam_laplacian_matrix, clamped_biharmonic_matrix, discrete_norm, trapezoid_weights, weighted_time_norm, DiffOps,
    FieldRef, Grid2D, NormSpec,
};
use nsf_plate::mat2::{self, Mat2};
use nsf_plate::sparse::{self, Csr, SparseLu};
use proptest::prelude::*;

fn grid(nx: usize, ny: usize) -> Grid2D {
    Grid2D::new(1.0, 1.0, nx, ny).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn first_and_second_differences_are_exact_on_quadratics() {
    let g = Grid2D::new(2.0, 0.5, 10, 7).unwrap();
    let ops = DiffOps::new(g);
    let u = g.sample(|x, y| 1.0 + 2.0 * x - 3.0 * y + 0.5 * x * x + x * y - 4.0 * y * y);
    assert!(max_diff(&ops.dx(&u), &g.sample(|x, y| 2.0 + x + y)) < 1e-11);
    assert!(max_diff(&ops.dy(&u), &g.sample(|x, y| -3.0 + x - 8.0 * y)) < 1e-11);
    assert!(max_diff(&ops.dxx(&u), &vec![1.0; g.n_nodes()]) < 1e-9);
    assert!(max_diff(&ops.dyy(&u), &vec![-8.0; g.n_nodes()]) < 1e-9);
}

#[test]
fn trapezoid_quadrature_is_exact_on_bilinear_functions() {
    let g = Grid2D::new(1.5, 0.75, 9, 6).unwrap();
    // Integral of (1 + x)(2 - y) over (0, 1.5) x (-0.75, 0).
    let f = g.sample(|x, y| (1.0 + x) * (2.0 - y));
    let exact = (1.5 + 1.5 * 1.5 / 2.0) * (2.0 * 0.75 + 0.75 * 0.75 / 2.0);
    assert!((g.integrate(&f) - exact).abs() < 1e-12);
    assert!((g.area() - 1.125).abs() < 1e-15);
    let w = trapezoid_weights(4, 0.25);
    assert_eq!(w, vec![0.125, 0.25, 0.25, 0.25, 0.125]);
}

#[test]
fn clamped_biharmonic_stencil_uses_ghost_reflection() {
    // Interior rows are (1, -4, 6, -4, 1) / h^4; the clamped ghost value equals
    // the first interior neighbour, so the first diagonal becomes 7 / h^4.
    let g = grid(8, 8);
    let k4 = clamped_biharmonic_matrix(&g);
    let s = 8f64.powi(4);
    assert_eq!(k4.nrows(), 7);
    assert_eq!(k4[(0, 0)], 7.0 * s);
    assert_eq!(k4[(3, 3)], 6.0 * s);
    assert_eq!(k4[(3, 2)], -4.0 * s);
    assert_eq!(k4[(3, 1)], s);
    assert_eq!(k4[(3, 0)], 0.0);
    let d2 = beam_laplacian_matrix(&g);
    assert_eq!(d2[(0, 0)], -128.0);
    assert_eq!(d2[(0, 1)], 64.0);
    for r in 0..7 {
        for c in 0..7 {
            assert_eq!(k4[(r, c)], k4[(c, r)]);
        }
    }
}

/// First root of `cos k cosh k = 1`, by bisection.
fn clamped_beam_root() -> f64 {
    let f = |k: f64| k.cos() * k.cosh() - 1.0;
    let (mut a, mut b) = (4.0, 5.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(a) * f(m) <= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn biharmonic_ground_state_approaches_clamped_beam_frequency() {
    let exact = clamped_beam_root().powi(4);
    assert!((exact - 500.5639).abs() < 1e-3);
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let k4 = clamped_biharmonic_matrix(&grid(n, 4));
        let ev = sparse::eigenvalues(&k4).unwrap();
        let min = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        errs.push((min - exact).abs() / exact);
    }
    assert!(errs[2] < 5e-3, "{errs:?}");
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn discrete_norm_of_constant_and_linear_fields() {
    let g = grid(8, 8);
    let one = vec![1.0; g.n_nodes()];
    let spec = NormSpec::new(0, 2.0, 2.0, 0.0);
    assert!((discrete_norm(&g, FieldRef::Scalar(&one), &spec).unwrap() - 1.0).abs() < 1e-14);
    // |u|^2 + |grad u|^2 = x^2 + 1 integrates to 4/3 over the unit square.
    let u = g.sample(|x, _| x);
    let n1 = discrete_norm(&g, FieldRef::Scalar(&u), &spec.with_k(1)).unwrap();
    let trap = 1.0 + (0..=8).map(|i| trapezoid_weights(8, 1.0 / 8.0)[i] * (i as f64 / 8.0).powi(2)).sum::<f64>();
    assert!((n1 - trap.sqrt()).abs() < 1e-13);
    assert!((trap - 4.0 / 3.0).abs() < 5e-3);
}

#[test]
fn weighted_time_norm_matches_direct_sum() {
    let spec = NormSpec::new(0, 2.0, 2.0, 0.5);
    let s = [1.0, 0.5, 0.25];
    let dt = 0.1;
    let direct: f64 = s.iter().enumerate().map(|(n, v)| ((0.5 * n as f64 * dt).exp() * v).powi(2) * dt).sum::<f64>();
    assert!((weighted_time_norm(&s, dt, &spec).unwrap() - direct.sqrt()).abs() < 1e-14);
}

#[test]
fn norm_spec_rejects_bad_exponents() {
    assert!(NormSpec::new(0, 0.5, 2.0, 0.0).validate().is_err());
    assert!(NormSpec::new(3, 2.0, 2.0, 0.0).validate().is_err());
}

#[test]
fn cutoff_profile_plateau_and_support() {
    let g = grid(16, 16);
    let c = CutoffProfile::default_for(&g);
    assert_eq!(c.eval(0.0), 1.0);
    assert_eq!(c.eval(-0.3), 1.0);
    assert_eq!(c.eval(-0.5), 0.0);
    assert_eq!(c.eval(-0.9), 0.0);
    assert!(c.admits(&[0.0, 0.1, -0.2]).is_ok());
    assert!(c.admits(&[0.0, 0.4]).is_err());
    assert!(CutoffProfile::new(&g, -1.0, 0.5, 0.25).is_err());
    assert!(CutoffProfile::new(&g, 0.1, 0.5, 0.25).is_err());
}

#[test]
fn initial_diffeo_translates_inside_the_plateau() {
    let g = grid(16, 16);
    let c = CutoffProfile::default_for(&g);
    let eta = g.sample_beam(|x| 0.05 * (PI * x).sin().powi(2));
    let map = initial_diffeo(&g, &eta, &c, 32).unwrap();
    for i in 0..=g.nx {
        for j in [g.ny, g.ny - 2, g.ny - 4] {
            let k = g.idx(i, j);
            assert!((map.x[1][k] - (g.y(j) + eta[i])).abs() < 1e-12, "node ({i}, {j})");
            assert_eq!(map.x[0][k], g.x(i));
        }
    }
    // Below the support the map is the identity.
    let k = g.idx(5, 2);
    assert_eq!(map.x[1][k], g.y(2));
    assert!(check_diffeo(&g, &map, 0.5).pass);
}

#[test]
fn initial_diffeo_rejects_unclamped_or_large_displacement() {
    let g = grid(8, 8);
    let c = CutoffProfile::default_for(&g);
    let mut eta = g.beam_zeros();
    eta[0] = 0.01;
    assert!(initial_diffeo(&g, &eta, &c, 8).is_err());
    let big = g.sample_beam(|x| 0.9 * (PI * x).sin());
    assert!(initial_diffeo(&g, &big, &c, 8).is_err());
}

#[test]
fn folded_map_is_rejected_with_node() {
    let g = grid(8, 8);
    let x = g.sample_vec(|x, y| [-x, y]);
    assert!(metric_tensors(&g, &x).is_err());
}

fn small_mat() -> impl Strategy<Value = Mat2> {
    prop::array::uniform2(prop::array::uniform2(-0.4f64..0.4))
}

fn near_identity() -> impl Strategy<Value = Mat2> {
    small_mat().prop_map(|m| mat2::add(&mat2::IDENTITY, &m))
}

proptest! {
    #[test]
    fn metric_a_is_symmetric_positive_with_unit_determinant(g in near_identity()) {
        prop_assume!(mat2::det(&g) > 0.05);
        let grid = grid(4, 4);
        let m = Metrics::from_grad(&grid, &vec![g; grid.n_nodes()]).unwrap();
        let a = m.a[0];
        prop_assert!((a[0][1] - a[1][0]).abs() < 1e-14);
        prop_assert!((mat2::det(&a) - 1.0).abs() < 1e-10);
        prop_assert!(mat2::sym_min_eig(&a) > 0.0);
        prop_assert!((m.delta[0] - mat2::det(&g)).abs() < 1e-15);
        // B^T grad X = delta I.
        let p = mat2::mul(&mat2::transpose(&m.b[0]), &g);
        prop_assert!(mat2::max_abs_diff(&p, &mat2::scale(&mat2::IDENTITY, m.delta[0])) < 1e-13);
    }

    #[test]
    fn cofactor_is_an_involution(m in small_mat()) {
        prop_assert!(mat2::max_abs_diff(&mat2::cof(&mat2::cof(&m)), &m) == 0.0);
    }

    #[test]
    fn discrete_piola_identity_holds(c in prop::array::uniform4(-0.05f64..0.05)) {
        // Tensor-product difference operators commute, so div Cof(grad X) = 0.
        let g = grid(12, 10);
        let x = g.sample_vec(|x, y| [
            x + c[0] * (PI * x).sin() * (2.0 * y).cos() + c[1] * x * y * y,
            y + c[2] * (3.0 * x).cos() * y * y + c[3] * (x * y).sin(),
        ]);
        let (_, m) = metric_tensors(&g, &x).unwrap();
        let d = DiffOps::new(g).div_tensor(&m.b);
        let worst = d[0].iter().chain(&d[1]).fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(worst < 1e-11, "{}", worst);
    }

    #[test]
    fn cutoff_derivative_matches_difference_quotient(y in -0.49f64..0.49) {
        let g = grid(8, 8);
        let c = CutoffProfile::default_for(&g);
        let h = 1e-6;
        let fd = (c.eval(y + h) - c.eval(y - h)) / (2.0 * h);
        prop_assert!((fd - c.deriv(y)).abs() < 1e-5);
        prop_assert!((0.0..=1.0).contains(&c.eval(y)));
    }

    #[test]
    fn tracker_is_exact_for_steady_linear_velocity(m in small_mat(), steps in 1usize..6) {
        let g = grid(6, 6);
        let v = g.sample_vec(|x, y| [m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y]);
        let dt = 0.1;
        let mut tr = MapTracker::new(&g, &DiffeoMap::identity(&g), 0.01);
        for _ in 0..steps {
            tr.advance(&v, &v, dt).unwrap();
        }
        let t = steps as f64 * dt;
        let want = mat2::add(&mat2::IDENTITY, &mat2::scale(&m, t));
        for k in 0..g.n_nodes() {
            prop_assert!(mat2::max_abs_diff(&tr.map.grad[k], &want) < 1e-12);
        }
    }

    #[test]
    fn sparse_lu_solves_diagonally_dominant_systems(
        vals in prop::collection::vec(-1.0f64..1.0, 30),
        b in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let n = 10;
        let mut t = Vec::new();
        for (k, v) in vals.iter().enumerate() {
            t.push(((k * 7) % n, (k * 3 + 1) % n, *v));
        }
        for i in 0..n {
            t.push((i, i, 12.0));
        }
        let a = Csr::from_triplets(n, n, &t);
        let x = SparseLu::new(&a).unwrap().solve(&b);
        prop_assert!(max_diff(&a.matvec(&x), &b) < 1e-12);
        // Transpose agrees with the transposed product.
        let y = a.tmatvec(&b);
        prop_assert!(max_diff(&y, &a.transpose().matvec(&b)) < 1e-14);
    }
}
