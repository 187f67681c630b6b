//! Implicit steppers for the frozen-coefficient linear subsystems (density,
//! velocity, temperature, plate), the shifted heat problem, the steady Lame
//! lifting and a manufactured-solution harness.

use faer::Mat;

use crate::chgvar::Metrics;
use crate::error::{Error, Result};
use crate::grid::{
    beam_laplacian_matrix, clamped_biharmonic_matrix, discrete_norm, weighted_time_norm, BeamField,
    BoundaryField, DiffOps, FieldRef, Grid2D, NormSpec, ScalarField, Side, VectorField,
};
use crate::mat2::{self, Mat2};
use crate::sparse::{dense_matvec, norm2, Csr, DenseLu, SparseLu, Triplets};

/// Physical constants. `pi0` is the reference pressure offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub mu: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub cv: f64,
    pub r0: f64,
    pub pi0: f64,
    pub rho_bar: f64,
    pub theta_bar: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams { mu: 1.0, alpha: 0.0, kappa: 1.0, cv: 1.0, r0: 1.0, pi0: -1.0, rho_bar: 1.0, theta_bar: 1.0 }
    }
}

impl PhysParams {
    pub fn kappa_bar(&self) -> f64 {
        self.kappa / (self.cv * self.rho_bar)
    }

    /// Pressure offset that makes `(rho_bar, 0, theta_bar)` a rest state.
    pub fn equilibrium_pi0(&self) -> f64 {
        -self.r0 * self.rho_bar * self.theta_bar
    }

    /// All violated constraints; empty when admissible.
    pub fn violations(&self, global: bool) -> Vec<String> {
        let mut v = Vec::new();
        let pos = |name: &str, x: f64, v: &mut Vec<String>| {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{name} must be positive, got {x}"));
            }
        };
        pos("mu", self.mu, &mut v);
        pos("kappa", self.kappa, &mut v);
        pos("cv", self.cv, &mut v);
        pos("R0", self.r0, &mut v);
        pos("rho_bar", self.rho_bar, &mut v);
        pos("theta_bar", self.theta_bar, &mut v);
        if !self.alpha.is_finite() || !(self.alpha + 2.0 * self.mu / 3.0 > 0.0) {
            v.push(format!(
                "viscosity relation alpha + 2 mu / 3 > 0 violated: alpha + 2 mu / 3 = {:.6}",
                self.alpha + 2.0 * self.mu / 3.0
            ));
        }
        if !self.pi0.is_finite() {
            v.push(format!("pi0 must be finite, got {}", self.pi0));
        }
        if global && v.is_empty() {
            let want = self.equilibrium_pi0();
            if (self.pi0 - want).abs() > 1e-12 * want.abs().max(1.0) {
                v.push(format!("global mode requires pi0 = -R0 rho_bar theta_bar = {want}, got {}", self.pi0));
            }
        }
        v
    }

    pub fn validate(&self, global: bool) -> Result<()> {
        let v = self.violations(global);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeScheme {
    #[default]
    BackwardEuler,
    CrankNicolson,
}

/// Source time series `(f1, f2, f3, g, h)` on a shared uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBundle {
    pub f1: Vec<ScalarField>,
    pub f2: Vec<VectorField>,
    pub f3: Vec<ScalarField>,
    pub g: Vec<BoundaryField>,
    pub h: Vec<BeamField>,
}

impl SourceBundle {
    pub fn zeros(grid: &Grid2D, n_levels: usize) -> Self {
        SourceBundle {
            f1: vec![grid.zeros(); n_levels],
            f2: vec![grid.zeros_vec(); n_levels],
            f3: vec![grid.zeros(); n_levels],
            g: vec![BoundaryField::zeros(grid); n_levels],
            h: vec![grid.beam_zeros(); n_levels],
        }
    }

    pub fn len(&self) -> usize {
        self.f1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f1.is_empty()
    }

    /// `self - other`, levelwise.
    pub fn difference(&self, other: &SourceBundle) -> SourceBundle {
        let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
        let mut g = self.g.clone();
        for (gi, go) in g.iter_mut().zip(&other.g) {
            gi.axpy(-1.0, go);
        }
        SourceBundle {
            f1: self.f1.iter().zip(&other.f1).map(|(a, b)| sub(a, b)).collect(),
            f2: self.f2.iter().zip(&other.f2).map(|(a, b)| [sub(&a[0], &b[0]), sub(&a[1], &b[1])]).collect(),
            f3: self.f3.iter().zip(&other.f3).map(|(a, b)| sub(a, b)).collect(),
            g,
            h: self.h.iter().zip(&other.h).map(|(a, b)| sub(a, b)).collect(),
        }
    }

    /// Sum of the component norms: spatial `q`-norm (order `rho_k` on `f1`,
    /// zero elsewhere) at every level, then the weighted temporal `p`-norm.
    pub fn norm(&self, grid: &Grid2D, dt: f64, spec: &NormSpec, rho_k: u8) -> Result<f64> {
        let s0 = spec.with_k(0);
        let s1 = spec.with_k(rho_k);
        let mut series: [Vec<f64>; 5] = Default::default();
        for n in 0..self.len() {
            series[0].push(discrete_norm(grid, FieldRef::Scalar(&self.f1[n]), &s1)?);
            series[1].push(discrete_norm(grid, FieldRef::Vector(&self.f2[n]), &s0)?);
            series[2].push(discrete_norm(grid, FieldRef::Scalar(&self.f3[n]), &s0)?);
            series[3].push(self.g[n].norm(grid, spec.q));
            series[4].push(discrete_norm(grid, FieldRef::Beam(&self.h[n]), &s0)?);
        }
        let mut total = 0.0;
        for s in &series {
            total += weighted_time_norm(s, dt, spec)?;
        }
        Ok(total)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

fn check_residual(a_x: &[f64], b: &[f64], what: &str) -> Result<()> {
    let r: Vec<f64> = a_x.iter().zip(b).map(|(x, y)| x - y).collect();
    let rel = norm2(&r) / norm2(b).max(f64::MIN_POSITIVE);
    if !(rel < 1e-8) && norm2(b) > 0.0 {
        return Err(Error::Solver(format!("{what}: relative residual {rel:.3e}")));
    }
    Ok(())
}

fn interior_of(beam: &[f64]) -> Vec<f64> {
    beam[1..beam.len() - 1].to_vec()
}

fn beam_from_interior(v: &[f64]) -> BeamField {
    let mut out = vec![0.0; v.len() + 2];
    out[1..=v.len()].copy_from_slice(v);
    out
}

/// Damped clamped plate in first-order form, `eta1' = eta2`,
/// `eta2' = -K4 eta1 + D2 eta2 + h`.
pub struct PlateStepper {
    pub k4: Mat<f64>,
    pub d2: Mat<f64>,
    sys: Mat<f64>,
    lu: DenseLu,
    dt: f64,
    scheme: TimeScheme,
    hx: f64,
}

impl PlateStepper {
    pub fn new(grid: &Grid2D, dt: f64, scheme: TimeScheme) -> Result<Self> {
        check_dt(dt)?;
        let k4 = clamped_biharmonic_matrix(grid);
        let d2 = beam_laplacian_matrix(grid);
        let m = k4.nrows();
        let (a, b) = match scheme {
            TimeScheme::BackwardEuler => (dt * dt, dt),
            TimeScheme::CrankNicolson => (0.25 * dt * dt, 0.5 * dt),
        };
        let sys = Mat::<f64>::from_fn(m, m, |r, c| (if r == c { 1.0 } else { 0.0 }) + a * k4[(r, c)] - b * d2[(r, c)]);
        let lu = DenseLu::new(&sys);
        Ok(PlateStepper { k4, d2, sys, lu, dt, scheme, hx: grid.hx })
    }

    pub fn step(&self, eta1: &[f64], eta2: &[f64], h: &[f64]) -> Result<(BeamField, BeamField)> {
        let e1 = interior_of(eta1);
        let e2 = interior_of(eta2);
        let hs = interior_of(h);
        let dt = self.dt;
        let k1 = dense_matvec(&self.k4, &e1);
        let mut rhs: Vec<f64> = (0..e1.len()).map(|r| e2[r] - dt * k1[r] + dt * hs[r]).collect();
        if self.scheme == TimeScheme::CrankNicolson {
            let k2 = dense_matvec(&self.k4, &e2);
            let d = dense_matvec(&self.d2, &e2);
            for r in 0..rhs.len() {
                rhs[r] += -0.25 * dt * dt * k2[r] + 0.5 * dt * d[r];
            }
        }
        let n2 = self.lu.solve(&rhs);
        check_residual(&dense_matvec(&self.sys, &n2), &rhs, "plate step")?;
        let n1: Vec<f64> = match self.scheme {
            TimeScheme::BackwardEuler => (0..e1.len()).map(|r| e1[r] + dt * n2[r]).collect(),
            TimeScheme::CrankNicolson => (0..e1.len()).map(|r| e1[r] + 0.5 * dt * (e2[r] + n2[r])).collect(),
        };
        Ok((beam_from_interior(&n1), beam_from_interior(&n2)))
    }

    /// `hx/2 (|eta2|^2 + eta1^T K4 eta1)`.
    pub fn energy(&self, eta1: &[f64], eta2: &[f64]) -> f64 {
        let e1 = interior_of(eta1);
        let e2 = interior_of(eta2);
        let k = dense_matvec(&self.k4, &e1);
        0.5 * self.hx * (e2.iter().map(|x| x * x).sum::<f64>() + e1.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Dense `[[0, I], [-K4, D2]]` on the interior beam nodes.
    pub fn generator(&self) -> Mat<f64> {
        let m = self.k4.nrows();
        Mat::<f64>::from_fn(2 * m, 2 * m, |r, c| match (r < m, c < m) {
            (true, true) => 0.0,
            (true, false) => {
                if c - m == r {
                    1.0
                } else {
                    0.0
                }
            }
            (false, true) => -self.k4[(r - m, c)],
            (false, false) => self.d2[(r - m, c - m)],
        })
    }
}

pub fn step_plate(grid: &Grid2D, eta1: &[f64], eta2: &[f64], h: &[f64], dt: f64) -> Result<(BeamField, BeamField)> {
    PlateStepper::new(grid, dt, TimeScheme::BackwardEuler)?.step(eta1, eta2, h)
}

/// Interior nodes in lexicographic order.
pub fn interior_nodes(grid: &Grid2D) -> Vec<usize> {
    let mut v = Vec::with_capacity((grid.nx - 1) * (grid.ny - 1));
    for j in 1..grid.ny {
        for i in 1..grid.nx {
            v.push(grid.idx(i, j));
        }
    }
    v
}

pub fn boundary_nodes(grid: &Grid2D) -> Vec<usize> {
    (0..grid.n_nodes())
        .filter(|&k| {
            let (i, j) = grid.ij(k);
            !grid.is_interior(i, j)
        })
        .collect()
}

/// Adds the rows of `div(K grad w)` at the given interior nodes, with `K`
/// indexed `[outer][inner]`. Same-direction terms use the compact stencil with
/// face-averaged coefficients, mixed terms the centered product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn push_div_k_grad(
    grid: &Grid2D,
    trip: &mut Triplets,
    rows: &[usize],
    row_offset: usize,
    col_offset: usize,
    row_scale: &dyn Fn(usize) -> f64,
    k: &dyn Fn(usize) -> Mat2,
) {
    let (hx, hy) = (grid.hx, grid.hy);
    for (r, &p) in rows.iter().enumerate() {
        let (i, j) = grid.ij(p);
        let s = row_scale(p);
        let row = row_offset + r;
        let kp = k(p);
        let e = grid.idx(i + 1, j);
        let w = grid.idx(i - 1, j);
        let n = grid.idx(i, j + 1);
        let so = grid.idx(i, j - 1);
        let ke = 0.5 * (kp[0][0] + k(e)[0][0]);
        let kw = 0.5 * (kp[0][0] + k(w)[0][0]);
        let kn = 0.5 * (kp[1][1] + k(n)[1][1]);
        let ks = 0.5 * (kp[1][1] + k(so)[1][1]);
        trip.push(row, col_offset + e, s * ke / (hx * hx));
        trip.push(row, col_offset + w, s * kw / (hx * hx));
        trip.push(row, col_offset + n, s * kn / (hy * hy));
        trip.push(row, col_offset + so, s * ks / (hy * hy));
        trip.push(row, col_offset + p, -s * ((ke + kw) / (hx * hx) + (kn + ks) / (hy * hy)));
        let c = s / (4.0 * hx * hy);
        let kxy_e = k(e)[0][1];
        let kxy_w = k(w)[0][1];
        let kyx_n = k(n)[1][0];
        let kyx_s = k(so)[1][0];
        let ne = grid.idx(i + 1, j + 1);
        let se = grid.idx(i + 1, j - 1);
        let nw = grid.idx(i - 1, j + 1);
        let sw = grid.idx(i - 1, j - 1);
        trip.push(row, col_offset + ne, c * (kxy_e + kyx_n));
        trip.push(row, col_offset + se, c * (-kxy_e - kyx_s));
        trip.push(row, col_offset + nw, c * (-kxy_w - kyx_n));
        trip.push(row, col_offset + sw, c * (kxy_w + kyx_s));
    }
}

/// `L v = (1 / (rho0 delta0)) div(mu grad v A0 + ((mu + alpha) / delta0) B0 grad v^T B0)`
/// at interior nodes: rows `c * nI + r`, columns `c * N + k` over all nodes.
pub fn lame_operator(grid: &Grid2D, metrics: &Metrics, rho0: &[f64], mu: f64, alpha: f64) -> Result<Csr> {
    if let Some((k, &r)) = rho0.iter().enumerate().find(|(_, &r)| !(r > 0.0)) {
        let (i, j) = grid.ij(k);
        return Err(Error::Numerical(format!("reference density must be positive; rho0 = {r} at node ({i}, {j})")));
    }
    let rows = interior_nodes(grid);
    let ni = rows.len();
    let nn = grid.n_nodes();
    let mut trip = Triplets::new(2 * ni, 2 * nn);
    let scale = |p: usize| 1.0 / (rho0[p] * metrics.delta[p]);
    for eq in 0..2 {
        for var in 0..2 {
            let kf = |p: usize| -> Mat2 {
                let b = &metrics.b[p];
                let c = (mu + alpha) / metrics.delta[p];
                let mut m = mat2::ZERO;
                for (o, mo) in m.iter_mut().enumerate() {
                    for (inn, v) in mo.iter_mut().enumerate() {
                        *v = c * b[var][o] * b[eq][inn];
                        if eq == var {
                            *v += mu * metrics.a[p][o][inn];
                        }
                    }
                }
                m
            };
            push_div_k_grad(grid, &mut trip, &rows, eq * ni, var * nn, &scale, &kf);
        }
    }
    Ok(trip.to_csr())
}

/// Fluid Dirichlet data: `eta2 e2` on `Gamma_S`, zero on `Gamma_0`.
pub fn velocity_trace(grid: &Grid2D, eta2: &[f64]) -> VectorField {
    let mut v = grid.zeros_vec();
    for i in 1..grid.nx {
        v[1][grid.idx(i, grid.ny)] = eta2[i];
    }
    v
}

/// Frozen-coefficient velocity stepper with Dirichlet trace rows.
pub struct VelocityStepper {
    grid: Grid2D,
    interior: Vec<usize>,
    l_ii: Csr,
    l_ib: Csr,
    sys: Csr,
    lu: SparseLu,
    dt: f64,
    scheme: TimeScheme,
}

fn stacked_cols(grid: &Grid2D, nodes: &[usize]) -> Vec<usize> {
    let nn = grid.n_nodes();
    nodes.iter().copied().chain(nodes.iter().map(|k| k + nn)).collect()
}

impl VelocityStepper {
    pub fn new(grid: &Grid2D, metrics: &Metrics, rho0: &[f64], params: &PhysParams, dt: f64, scheme: TimeScheme) -> Result<Self> {
        check_dt(dt)?;
        let l = lame_operator(grid, metrics, rho0, params.mu, params.alpha)?;
        let interior = interior_nodes(grid);
        let boundary = boundary_nodes(grid);
        let all_rows: Vec<usize> = (0..l.rows).collect();
        let l_ii = l.select(&all_rows, &stacked_cols(grid, &interior));
        let l_ib = l.select(&all_rows, &stacked_cols(grid, &boundary));
        let theta = if scheme == TimeScheme::BackwardEuler { 1.0 } else { 0.5 };
        let sys = Csr::lincomb(1.0, &Csr::identity(l_ii.rows), -theta * dt, &l_ii);
        let lu = SparseLu::new(&sys)?;
        Ok(VelocityStepper { grid: *grid, interior, l_ii, l_ib, sys, lu, dt, scheme })
    }

    fn boundary_vec(&self, v: &VectorField) -> Vec<f64> {
        let b = boundary_nodes(&self.grid);
        b.iter().map(|&k| v[0][k]).chain(b.iter().map(|&k| v[1][k])).collect()
    }

    /// One step; `eta2` is the new beam velocity, `f2` the source at the
    /// implicit time level (midpoint for Crank-Nicolson).
    pub fn step(&self, v: &VectorField, eta2: &[f64], f2: &VectorField) -> Result<VectorField> {
        let dt = self.dt;
        let vb_new = velocity_trace(&self.grid, eta2);
        let bn = self.boundary_vec(&vb_new);
        let vi: Vec<f64> = self.interior.iter().map(|&k| v[0][k]).chain(self.interior.iter().map(|&k| v[1][k])).collect();
        let fi: Vec<f64> =
            self.interior.iter().map(|&k| f2[0][k]).chain(self.interior.iter().map(|&k| f2[1][k])).collect();
        let mut rhs: Vec<f64> = match self.scheme {
            TimeScheme::BackwardEuler => {
                let lb = self.l_ib.matvec(&bn);
                (0..vi.len()).map(|r| vi[r] + dt * (lb[r] + fi[r])).collect()
            }
            TimeScheme::CrankNicolson => {
                let bo = self.boundary_vec(v);
                let lb: Vec<f64> = self.l_ib.matvec(&bn).iter().zip(self.l_ib.matvec(&bo)).map(|(a, b)| a + b).collect();
                let li = self.l_ii.matvec(&vi);
                (0..vi.len()).map(|r| vi[r] + 0.5 * dt * (li[r] + lb[r]) + dt * fi[r]).collect()
            }
        };
        if rhs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite data in velocity step".into()));
        }
        let x = self.lu.solve(&rhs);
        check_residual(&self.sys.matvec(&x), &rhs, "velocity step")?;
        rhs.clear();
        let ni = self.interior.len();
        let mut out = vb_new;
        for (r, &k) in self.interior.iter().enumerate() {
            out[0][k] = x[r];
            out[1][k] = x[ni + r];
        }
        Ok(out)
    }
}

pub fn step_velocity(
    grid: &Grid2D,
    v: &VectorField,
    eta2: &[f64],
    f2: &VectorField,
    metrics: &Metrics,
    rho0: &[f64],
    params: &PhysParams,
    dt: f64,
) -> Result<VectorField> {
    VelocityStepper::new(grid, metrics, rho0, params, dt, TimeScheme::BackwardEuler)?.step(v, eta2, f2)
}

/// Steady Lame lifting: `mu Lap w + (mu + alpha) grad div w = 0` with
/// `w = eta2 e2` on `Gamma_S` and `w = 0` on `Gamma_0`.
pub fn solve_lift_dv(grid: &Grid2D, eta2: &[f64], params: &PhysParams) -> Result<VectorField> {
    let n = grid.n_nodes();
    let rho = vec![params.rho_bar; n];
    let l = lame_operator(grid, &Metrics::identity(n), &rho, params.mu, params.alpha)?;
    let interior = interior_nodes(grid);
    let boundary = boundary_nodes(grid);
    let all_rows: Vec<usize> = (0..l.rows).collect();
    let l_ii = l.select(&all_rows, &stacked_cols(grid, &interior));
    let l_ib = l.select(&all_rows, &stacked_cols(grid, &boundary));
    let wb = velocity_trace(grid, eta2);
    let bvec: Vec<f64> = boundary.iter().map(|&k| wb[0][k]).chain(boundary.iter().map(|&k| wb[1][k])).collect();
    let rhs: Vec<f64> = l_ib.matvec(&bvec).iter().map(|x| -x).collect();
    let lu = SparseLu::new(&l_ii)?;
    let x = lu.solve(&rhs);
    check_residual(&l_ii.matvec(&x), &rhs, "lifting solve")?;
    let ni = interior.len();
    let mut out = wb;
    for (r, &k) in interior.iter().enumerate() {
        out[0][k] = x[r];
        out[1][k] = x[ni + r];
    }
    Ok(out)
}

/// Finite-volume flux operator on the dual cells: `(F theta)_k` is the net
/// conormal flux `A grad(theta) . n` through the faces of cell `k`.
pub fn conormal_flux_operator(grid: &Grid2D, a: &[Mat2]) -> Csr {
    let n = grid.n_nodes();
    let (hx, hy) = (grid.hx, grid.hy);
    let wx = grid.weights_x();
    let wy = grid.weights_y();
    let mut trip = Triplets::new(n, n);
    // Second-order first-derivative stencil along a grid line.
    let d1 = |m: usize, len: usize, h: f64| -> Vec<(usize, f64)> {
        if m == 0 {
            vec![(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]
        } else if m == len {
            vec![(len, 1.5 / h), (len - 1, -2.0 / h), (len - 2, 0.5 / h)]
        } else {
            vec![(m + 1, 0.5 / h), (m - 1, -0.5 / h)]
        }
    };
    let mut add_face = |p: usize, q: usize, coeffs: &[(usize, f64)]| {
        for &(c, v) in coeffs {
            trip.push(p, c, v);
            trip.push(q, c, -v);
        }
    };
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            let p = grid.idx(i, j);
            let q = grid.idx(i + 1, j);
            let af = mat2::scale(&mat2::add(&a[p], &a[q]), 0.5);
            let len = wy[j];
            let mut c = vec![(q, len * af[0][0] / hx), (p, -len * af[0][0] / hx)];
            for ii in [i, i + 1] {
                for (jj, v) in d1(j, grid.ny, hy) {
                    c.push((grid.idx(ii, jj), 0.5 * len * af[0][1] * v));
                }
            }
            add_face(p, q, &c);
        }
    }
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            let p = grid.idx(i, j);
            let q = grid.idx(i, j + 1);
            let af = mat2::scale(&mat2::add(&a[p], &a[q]), 0.5);
            let len = wx[i];
            let mut c = vec![(q, len * af[1][1] / hy), (p, -len * af[1][1] / hy)];
            for jj in [j, j + 1] {
                for (ii, v) in d1(i, grid.nx, hx) {
                    c.push((grid.idx(ii, jj), 0.5 * len * af[1][0] * v));
                }
            }
            add_face(p, q, &c);
        }
    }
    trip.to_csr()
}

/// Boundary load `g` times the boundary face length at each node.
pub fn boundary_load(grid: &Grid2D, g: &BoundaryField) -> ScalarField {
    let mut b = grid.zeros();
    for side in Side::ALL {
        let nodes = grid.side_nodes(side);
        let w = grid.side_weights(side);
        for ((&k, &wk), &gk) in nodes.iter().zip(&w).zip(g.side(side)) {
            b[k] += wk * gk;
        }
    }
    b
}

/// Conservative temperature stepper for
/// `theta' + gamma1 theta = (kappa / (cv rho0 delta0)) div(A0 grad theta) + f3`
/// with `A0 grad theta . n = g`.
pub struct TemperatureStepper {
    grid: Grid2D,
    flux: Csr,
    mass: Vec<f64>,
    sys: Csr,
    lu: SparseLu,
    dt: f64,
    gamma1: f64,
    scheme: TimeScheme,
}

impl TemperatureStepper {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Grid2D,
        metrics: &Metrics,
        rho0: &[f64],
        params: &PhysParams,
        dt: f64,
        gamma1: f64,
        scheme: TimeScheme,
    ) -> Result<Self> {
        check_dt(dt)?;
        if !(gamma1 >= 0.0) {
            return Err(Error::Config(format!("gamma1 must be >= 0, got {gamma1}")));
        }
        let w = grid.node_weights();
        let mass: Vec<f64> =
            (0..grid.n_nodes()).map(|k| params.cv * rho0[k] * metrics.delta[k] * w[k] / params.kappa).collect();
        let flux = conormal_flux_operator(grid, &metrics.a);
        let (sd, sf) = match scheme {
            TimeScheme::BackwardEuler => (1.0 + gamma1 * dt, dt),
            TimeScheme::CrankNicolson => (1.0 + 0.5 * gamma1 * dt, 0.5 * dt),
        };
        let diag: Vec<(usize, usize, f64)> = mass.iter().enumerate().map(|(k, m)| (k, k, m * sd)).collect();
        let sys = Csr::lincomb(1.0, &Csr::from_triplets(mass.len(), mass.len(), &diag), -sf, &flux);
        let lu = SparseLu::new(&sys)?;
        Ok(TemperatureStepper { grid: *grid, flux, mass, sys, lu, dt, gamma1, scheme })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn flux(&self) -> &Csr {
        &self.flux
    }

    pub fn step(&self, theta: &[f64], f3: &[f64], g: &BoundaryField) -> Result<ScalarField> {
        let dt = self.dt;
        let b = boundary_load(&self.grid, g);
        let mut rhs: Vec<f64> = (0..theta.len()).map(|k| self.mass[k] * (theta[k] + dt * f3[k]) + dt * b[k]).collect();
        if self.scheme == TimeScheme::CrankNicolson {
            let ft = self.flux.matvec(theta);
            for k in 0..rhs.len() {
                rhs[k] += 0.5 * dt * ft[k] - 0.5 * dt * self.gamma1 * self.mass[k] * theta[k];
            }
        }
        let x = self.lu.solve(&rhs);
        check_residual(&self.sys.matvec(&x), &rhs, "temperature step")?;
        Ok(x)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn step_temperature(
    grid: &Grid2D,
    theta: &[f64],
    f3: &[f64],
    g: &BoundaryField,
    metrics: &Metrics,
    rho0: &[f64],
    params: &PhysParams,
    dt: f64,
    gamma1: f64,
) -> Result<ScalarField> {
    TemperatureStepper::new(grid, metrics, rho0, params, dt, gamma1, TimeScheme::BackwardEuler)?.step(theta, f3, g)
}

/// `-(rho0 / delta0) grad v : B0` nodewise.
pub fn density_rate(grid: &Grid2D, v: &VectorField, metrics: &Metrics, rho0: &[f64]) -> ScalarField {
    let gv = DiffOps::new(*grid).grad_vec(v);
    (0..grid.n_nodes()).map(|k| -rho0[k] / metrics.delta[k] * mat2::ddot(&gv[k], &metrics.b[k])).collect()
}

/// Trapezoid update of the nodewise continuity ODE between two time levels.
#[allow(clippy::too_many_arguments)]
pub fn step_density(
    grid: &Grid2D,
    rho: &[f64],
    v_prev: &VectorField,
    v_next: &VectorField,
    f1_prev: &[f64],
    f1_next: &[f64],
    metrics: &Metrics,
    rho0: &[f64],
    dt: f64,
) -> ScalarField {
    let rp = density_rate(grid, v_prev, metrics, rho0);
    let rn = density_rate(grid, v_next, metrics, rho0);
    (0..rho.len()).map(|k| rho[k] + 0.5 * dt * (rp[k] + f1_prev[k] + rn[k] + f1_next[k])).collect()
}

/// Errors and observed orders of a refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub name: String,
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
}

impl ConvergenceStudy {
    fn from_errors(name: &str, resolutions: Vec<usize>, errors: Vec<f64>, spacing: impl Fn(usize) -> f64) -> Self {
        let orders = (1..errors.len())
            .map(|k| (errors[k - 1] / errors[k]).ln() / (spacing(resolutions[k - 1]) / spacing(resolutions[k])).ln())
            .collect();
        ConvergenceStudy { name: name.into(), resolutions, errors, orders }
    }

    pub fn last_order(&self) -> f64 {
        self.orders.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepperId {
    Heat,
    Velocity,
    Plate,
}

fn l2_error(grid: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    grid.integrate(&d).sqrt()
}

const PI: f64 = std::f64::consts::PI;

/// Heat stepper on `exp(-t) cos(pi x) cos(pi y)` over the unit square,
/// Crank-Nicolson with `dt = h / 2` up to `t = 0.5`.
pub fn heat_error(n: usize) -> Result<f64> {
    let grid = Grid2D::new(1.0, 1.0, n, n)?;
    let params = PhysParams::default();
    let t_end = 0.5;
    let steps = n;
    let dt = t_end / steps as f64;
    let nn = grid.n_nodes();
    let st = TemperatureStepper::new(&grid, &Metrics::identity(nn), &vec![1.0; nn], &params, dt, 0.0, TimeScheme::CrankNicolson)?;
    let shape = grid.sample(|x, y| (PI * x).cos() * (PI * y).cos());
    let mut theta = shape.clone();
    let g = BoundaryField::zeros(&grid);
    for s in 0..steps {
        let tm = (s as f64 + 0.5) * dt;
        let f3: Vec<f64> = shape.iter().map(|p| (2.0 * PI * PI - 1.0) * (-tm).exp() * p).collect();
        theta = st.step(&theta, &f3, &g)?;
    }
    let exact: Vec<f64> = shape.iter().map(|p| (-t_end).exp() * p).collect();
    Ok(l2_error(&grid, &theta, &exact))
}

/// Velocity stepper on `exp(-t) (sin(pi x) sin(pi y), 0)` with identity
/// metrics and unit density, Crank-Nicolson with `dt = h / 2`.
pub fn velocity_error(n: usize) -> Result<f64> {
    let grid = Grid2D::new(1.0, 1.0, n, n)?;
    let params = PhysParams { alpha: 0.5, ..PhysParams::default() };
    let (mu, alpha) = (params.mu, params.alpha);
    let t_end = 0.5;
    let steps = n;
    let dt = t_end / steps as f64;
    let nn = grid.n_nodes();
    let st = VelocityStepper::new(&grid, &Metrics::identity(nn), &vec![1.0; nn], &params, dt, TimeScheme::CrankNicolson)?;
    let ss = grid.sample(|x, y| (PI * x).sin() * (PI * y).sin());
    let cc = grid.sample(|x, y| (PI * x).cos() * (PI * y).cos());
    let mut v = [ss.clone(), grid.zeros()];
    let eta2 = grid.beam_zeros();
    for s in 0..steps {
        let e = (-(s as f64 + 0.5) * dt).exp();
        let f2 = [
            ss.iter().map(|p| e * p * (-1.0 + 2.0 * PI * PI * mu + (mu + alpha) * PI * PI)).collect(),
            cc.iter().map(|p| -(mu + alpha) * PI * PI * e * p).collect(),
        ];
        v = st.step(&v, &eta2, &f2)?;
    }
    let e = (-t_end).exp();
    let ex: Vec<f64> = ss.iter().map(|p| e * p).collect();
    let e0 = l2_error(&grid, &v[0], &ex);
    let e1 = l2_error(&grid, &v[1], &grid.zeros());
    Ok((e0 * e0 + e1 * e1).sqrt())
}

/// Backward-Euler plate on `cos(t) x^2 (1 - x)^2`, forced with the
/// semi-discrete operators so only the temporal error remains.
pub fn plate_error(nx: usize, steps: usize) -> Result<f64> {
    let grid = Grid2D::new(1.0, 1.0, nx, 4.max(nx / 4))?;
    let t_end = 1.0;
    let dt = t_end / steps as f64;
    let st = PlateStepper::new(&grid, dt, TimeScheme::BackwardEuler)?;
    let p = grid.sample_beam(|x| x * x * (1.0 - x) * (1.0 - x));
    let pi = interior_of(&p);
    let kp = beam_from_interior(&dense_matvec(&st.k4, &pi));
    let dp = beam_from_interior(&dense_matvec(&st.d2, &pi));
    let mut e1 = p.clone();
    let mut e2 = grid.beam_zeros();
    for s in 1..=steps {
        let t = s as f64 * dt;
        let h: Vec<f64> = (0..p.len()).map(|i| -t.cos() * p[i] + t.cos() * kp[i] + t.sin() * dp[i]).collect();
        let (a, b) = st.step(&e1, &e2, &h)?;
        e1 = a;
        e2 = b;
    }
    let err: f64 = (0..p.len())
        .map(|i| (e1[i] - t_end.cos() * p[i]).powi(2) + (e2[i] + t_end.sin() * p[i]).powi(2))
        .sum::<f64>()
        * grid.hx;
    Ok(err.sqrt())
}

/// Richardson slopes for a stepper: grid sizes for the spatial studies, step
/// counts for the plate's temporal study.
pub fn manufactured_convergence(id: StepperId, resolutions: &[usize]) -> Result<ConvergenceStudy> {
    let res = resolutions.to_vec();
    match id {
        StepperId::Heat => {
            let e = res.iter().map(|&n| heat_error(n)).collect::<Result<Vec<_>>>()?;
            Ok(ConvergenceStudy::from_errors("heat", res, e, |n| 1.0 / n as f64))
        }
        StepperId::Velocity => {
            let e = res.iter().map(|&n| velocity_error(n)).collect::<Result<Vec<_>>>()?;
            Ok(ConvergenceStudy::from_errors("velocity", res, e, |n| 1.0 / n as f64))
        }
        StepperId::Plate => {
            let e = res.iter().map(|&s| plate_error(32, s)).collect::<Result<Vec<_>>>()?;
            Ok(ConvergenceStudy::from_errors("plate", res, e, |n| 1.0 / n as f64))
        }
    }
}
