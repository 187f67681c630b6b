//! Nonlinear source terms of the transformed system in the local and global
//! regimes, the mean/fluctuation split and initial-data compatibility checks.

use crate::chgvar::{DiffeoMap, Metrics};
use crate::error::{Error, Result};
use crate::grid::{BeamField, BoundaryField, DiffOps, Grid2D, ScalarField, Side, VectorField};
use crate::linear::PhysParams;
use crate::mat2::{self, Mat2};

/// Factor on the shear-dissipation term of the temperature source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F3ShearFactor {
    /// `mu / (2 delta)` in the local regime, `2 mu / delta` in the global one.
    #[default]
    AsPrinted,
    /// `mu / (2 delta)` in both regimes.
    Consistent,
}

impl F3ShearFactor {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as-printed" | "as_printed" => Some(F3ShearFactor::AsPrinted),
            "consistent" => Some(F3ShearFactor::Consistent),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            F3ShearFactor::AsPrinted => "as-printed",
            F3ShearFactor::Consistent => "consistent",
        }
    }

    fn global_coefficient(self, mu: f64) -> f64 {
        match self {
            F3ShearFactor::AsPrinted => 2.0 * mu,
            F3ShearFactor::Consistent => 0.5 * mu,
        }
    }
}

/// Fluid and plate fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub rho: ScalarField,
    pub v: VectorField,
    pub theta: ScalarField,
    pub eta1: BeamField,
    pub eta2: BeamField,
    pub t: f64,
}

impl FullState {
    pub fn zeros(grid: &Grid2D) -> Self {
        FullState {
            rho: grid.zeros(),
            v: grid.zeros_vec(),
            theta: grid.zeros(),
            eta1: grid.beam_zeros(),
            eta2: grid.beam_zeros(),
            t: 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rho
            .iter()
            .chain(&self.v[0])
            .chain(&self.v[1])
            .chain(&self.theta)
            .chain(&self.eta1)
            .chain(&self.eta2)
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let sc = |a: &[f64]| -> Vec<f64> { a.iter().map(|x| s * x).collect() };
        FullState {
            rho: sc(&self.rho),
            v: [sc(&self.v[0]), sc(&self.v[1])],
            theta: sc(&self.theta),
            eta1: sc(&self.eta1),
            eta2: sc(&self.eta2),
            t: self.t,
        }
    }
}

/// `f = tilde + avg` with `tilde` of zero discrete mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFluctSplit {
    pub tilde: ScalarField,
    pub avg: f64,
}

pub fn split_mean(grid: &Grid2D, f: &[f64]) -> MeanFluctSplit {
    let avg = grid.mean(f);
    MeanFluctSplit { tilde: f.iter().map(|x| x - avg).collect(), avg }
}

/// Time derivatives of the velocity and temperature taken from the latest
/// time difference of the outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDerivs {
    pub dv: VectorField,
    pub dtheta: ScalarField,
}

impl TimeDerivs {
    pub fn zeros(grid: &Grid2D) -> Self {
        TimeDerivs { dv: grid.zeros_vec(), dtheta: grid.zeros() }
    }

    pub fn backward(prev: &FullState, next: &FullState, dt: f64) -> Self {
        let d = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect() };
        TimeDerivs { dv: [d(&prev.v[0], &next.v[0]), d(&prev.v[1], &next.v[1])], dtheta: d(&prev.theta, &next.theta) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSources {
    pub f1: ScalarField,
    pub f2: VectorField,
    pub f3: ScalarField,
    pub g: BoundaryField,
    pub h: BeamField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSources {
    pub f1: ScalarField,
    pub f2: VectorField,
    pub f3: ScalarField,
    pub g: BoundaryField,
    pub h_tilde: BeamField,
    pub h_hat: BeamField,
    /// `max |H_tilde + H_hat - H|` on the beam.
    pub split_defect: f64,
}

impl GlobalSources {
    pub fn h(&self) -> BeamField {
        self.h_tilde.iter().zip(&self.h_hat).map(|(a, b)| a + b).collect()
    }
}

fn check_lengths(grid: &Grid2D, s: &FullState) -> Result<()> {
    let n = grid.n_nodes();
    let b = grid.beam_len();
    if s.rho.len() != n || s.theta.len() != n || s.v[0].len() != n || s.v[1].len() != n {
        return Err(Error::Config("state fluid fields do not match the grid".into()));
    }
    if s.eta1.len() != b || s.eta2.len() != b {
        return Err(Error::Config("state beam fields do not match the grid".into()));
    }
    Ok(())
}

/// `grad v B^T + B grad v^T`.
fn sym_piola(gv: &Mat2, b: &Mat2) -> Mat2 {
    let p = mat2::mul(gv, &mat2::transpose(b));
    mat2::add(&p, &mat2::transpose(&p))
}

/// `(1/delta) B grad v^T B`.
fn lame_flux(gv: &Mat2, b: &Mat2, delta: f64) -> Mat2 {
    mat2::scale(&mat2::mul(&mat2::mul(b, &mat2::transpose(gv)), b), 1.0 / delta)
}

/// Interface traction piece `((1/delta)(grad v B^T + B grad v^T) [-eta', 1]) . e2`
/// at every top-row node.
fn top_normal_stress(grid: &Grid2D, gv: &[Mat2], m: &Metrics, eta1: &[f64]) -> BeamField {
    let slope = DiffOps::new(*grid).beam_dx(eta1);
    (0..=grid.nx)
        .map(|i| {
            let k = grid.idx(i, grid.ny);
            let s = sym_piola(&gv[k], &m.b[k]);
            (s[1][0] * -slope[i] + s[1][1]) / m.delta[k]
        })
        .collect()
}

/// Sources of the local-in-time problem, relative to the reference metrics
/// `m0` and density `rho0`.
#[allow(clippy::too_many_arguments)]
pub fn eval_local_sources(
    grid: &Grid2D,
    state: &FullState,
    map: &DiffeoMap,
    m0: &Metrics,
    rho0: &[f64],
    params: &PhysParams,
    derivs: &TimeDerivs,
) -> Result<LocalSources> {
    check_lengths(grid, state)?;
    let ops = DiffOps::new(*grid);
    let n = grid.n_nodes();
    let mx = &map.metrics;
    let gv = ops.grad_vec(&state.v);
    let p = params;

    let f1: ScalarField = (0..n)
        .map(|k| {
            rho0[k] / m0.delta[k] * mat2::ddot(&gv[k], &m0.b[k]) - state.rho[k] / mx.delta[k] * mat2::ddot(&gv[k], &mx.b[k])
        })
        .collect();

    let visc: Vec<Mat2> = (0..n)
        .map(|k| {
            let t1 = mat2::scale(&mat2::mul(&gv[k], &mat2::sub(&mx.a[k], &m0.a[k])), p.mu);
            let t2 = mat2::scale(
                &mat2::sub(&lame_flux(&gv[k], &mx.b[k], mx.delta[k]), &lame_flux(&gv[k], &m0.b[k], m0.delta[k])),
                p.mu + p.alpha,
            );
            mat2::add(&t1, &t2)
        })
        .collect();
    let dvisc = ops.div_tensor(&visc);
    let rt: Vec<f64> = (0..n).map(|k| state.rho[k] * state.theta[k]).collect();
    let grt = ops.grad(&rt);
    let mut f2 = grid.zeros_vec();
    for k in 0..n {
        let w = 1.0 / (rho0[k] * m0.delta[k]);
        let inertia = rho0[k] * m0.delta[k] - state.rho[k] * mx.delta[k];
        let press = mat2::mul_vec(&mx.b[k], [grt[0][k], grt[1][k]]);
        for c in 0..2 {
            f2[c][k] = w * (inertia * derivs.dv[c][k] + dvisc[c][k] - p.r0 * press[c]);
        }
    }

    let gt = ops.grad(&state.theta);
    let heat_flux: VectorField = {
        let mut q = grid.zeros_vec();
        for k in 0..n {
            let d = mat2::mul_vec(&mat2::sub(&mx.a[k], &m0.a[k]), [gt[0][k], gt[1][k]]);
            q[0][k] = d[0];
            q[1][k] = d[1];
        }
        q
    };
    let dq = ops.div(&heat_flux);
    let f3: ScalarField = (0..n)
        .map(|k| {
            let bv = mat2::ddot(&mx.b[k], &gv[k]);
            let shear_term = 0.5 * p.mu / mx.delta[k] * mat2::frob2(&sym_piola(&gv[k], &mx.b[k]));
            let bracket = p.cv * (rho0[k] * m0.delta[k] - state.rho[k] * mx.delta[k]) * derivs.dtheta[k]
                + p.kappa * dq[k]
                + p.alpha / mx.delta[k] * bv * bv
                + shear_term
                - (p.r0 * state.rho[k] * state.theta[k] + p.pi0) * bv;
            bracket / (p.cv * rho0[k] * m0.delta[k])
        })
        .collect();

    let da: Vec<Mat2> = (0..n).map(|k| mat2::sub(&m0.a[k], &mx.a[k])).collect();
    let g = ops.conormal_derivative(&state.theta, Some(&da));

    let ns = top_normal_stress(grid, &gv, mx, &state.eta1);
    let h: BeamField = (0..=grid.nx)
        .map(|i| {
            let k = grid.idx(i, grid.ny);
            -p.mu * ns[i] - p.alpha / mx.delta[k] * mat2::ddot(&gv[k], &mx.b[k])
                + p.r0 * state.rho[k] * state.theta[k]
                + p.pi0
        })
        .collect();

    Ok(LocalSources { f1, f2, f3, g, h })
}

/// Sources of the global problem in perturbation variables around
/// `(rho_bar, 0, theta_bar)`, with the interface source split as
/// `H = H_tilde + H_hat` according to the given density and temperature splits.
#[allow(clippy::too_many_arguments)]
pub fn eval_global_sources(
    grid: &Grid2D,
    state: &FullState,
    map: &DiffeoMap,
    params: &PhysParams,
    derivs: &TimeDerivs,
    rho_split: &MeanFluctSplit,
    theta_split: &MeanFluctSplit,
    shear: F3ShearFactor,
) -> Result<GlobalSources> {
    check_lengths(grid, state)?;
    let ops = DiffOps::new(*grid);
    let n = grid.n_nodes();
    let mx = &map.metrics;
    let gv = ops.grad_vec(&state.v);
    let p = params;
    let (rb, tb) = (p.rho_bar, p.theta_bar);
    let rho = &state.rho;
    let theta = &state.theta;

    let binv = |k: usize| mat2::sub(&mat2::scale(&mx.b[k], 1.0 / mx.delta[k]), &mat2::IDENTITY);
    let divv: Vec<f64> = gv.iter().map(|g| g[0][0] + g[1][1]).collect();
    let f1: ScalarField =
        (0..n).map(|k| -rho[k] * divv[k] - (rho[k] + rb) * mat2::ddot(&binv(k), &gv[k])).collect();

    let visc: Vec<Mat2> = (0..n)
        .map(|k| {
            let t1 = mat2::scale(&mat2::mul(&gv[k], &mat2::sub(&mx.a[k], &mat2::IDENTITY)), p.mu);
            let t2 = mat2::scale(
                &mat2::sub(&lame_flux(&gv[k], &mx.b[k], mx.delta[k]), &mat2::transpose(&gv[k])),
                p.mu + p.alpha,
            );
            mat2::add(&t1, &t2)
        })
        .collect();
    let dvisc = ops.div_tensor(&visc);
    let rt: Vec<f64> = (0..n).map(|k| rho[k] * theta[k]).collect();
    let grt = ops.grad(&rt);
    let gr = ops.grad(rho);
    let gt = ops.grad(theta);
    let mut f2 = grid.zeros_vec();
    for k in 0..n {
        let bm = mat2::sub(&mx.b[k], &mat2::IDENTITY);
        let p1 = mat2::mul_vec(&mx.b[k], [grt[0][k], grt[1][k]]);
        let lin = [rb * gt[0][k] + tb * gr[0][k], rb * gt[1][k] + tb * gr[1][k]];
        let p2 = mat2::mul_vec(&bm, lin);
        let inertia = rb * (mx.delta[k] - 1.0) + rho[k] * mx.delta[k];
        for c in 0..2 {
            f2[c][k] = (-inertia * derivs.dv[c][k] + dvisc[c][k] - p.r0 * p1[c] - p.r0 * p2[c]) / rb;
        }
    }

    let mut hq = grid.zeros_vec();
    for k in 0..n {
        let d = mat2::mul_vec(&mat2::sub(&mx.a[k], &mat2::IDENTITY), [gt[0][k], gt[1][k]]);
        hq[0][k] = d[0];
        hq[1][k] = d[1];
    }
    let dq = ops.div(&hq);
    let sc = shear.global_coefficient(p.mu);
    let f3: ScalarField = (0..n)
        .map(|k| {
            let bv = mat2::ddot(&mx.b[k], &gv[k]);
            let bracket = -p.cv * (mx.delta[k] * rho[k] + rb * (mx.delta[k] - 1.0)) * derivs.dtheta[k]
                - p.r0 * (rho[k] * theta[k] + rb * theta[k] + tb * rho[k]) * bv
                + p.kappa * dq[k]
                + p.alpha / mx.delta[k] * bv * bv
                + sc / mx.delta[k] * mat2::frob2(&sym_piola(&gv[k], &mx.b[k]));
            bracket / (p.cv * rb)
        })
        .collect();

    let da: Vec<Mat2> = (0..n).map(|k| mat2::sub(&mat2::IDENTITY, &mx.a[k])).collect();
    let g = ops.conormal_derivative(theta, Some(&da));

    let ns = top_normal_stress(grid, &gv, mx, &state.eta1);
    let mut h_full = grid.beam_zeros();
    let mut h_tilde = grid.beam_zeros();
    let h_hat = vec![p.r0 * rho_split.avg * theta_split.avg; grid.beam_len()];
    let mut defect = 0.0_f64;
    for i in 0..=grid.nx {
        let k = grid.idx(i, grid.ny);
        let d2 = 2.0 * gv[k][1][1];
        let visc_part = -p.mu * (ns[i] - d2) - p.alpha * mat2::ddot(&binv(k), &gv[k]);
        h_full[i] = visc_part + p.r0 * rho[k] * theta[k];
        let (rt_, ra) = (rho_split.tilde[k], rho_split.avg);
        let (tt, ta) = (theta_split.tilde[k], theta_split.avg);
        h_tilde[i] = visc_part + p.r0 * (rt_ * tt + rt_ * ta + ra * tt);
        defect = defect.max((h_tilde[i] + h_hat[i] - h_full[i]).abs());
    }
    Ok(GlobalSources { f1, f2, f3, g, h_tilde, h_hat, split_defect: defect })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub applies: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub conditions: Vec<Condition>,
}

impl CompatibilityReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<String> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: residual {:.3e} > tol {:.3e}", c.name, c.residual, c.tol))
            .collect()
    }
}

/// Initial-data conditions. The Neumann and slope conditions are gated on
/// `1/p + 1/(2q) < 1/2` and use an `O(h^2)` tolerance scaled by the data.
pub fn check_compatibility(grid: &Grid2D, init: &FullState, a0: &[Mat2], params: &PhysParams, mode: Mode, p: f64, q: f64) -> CompatibilityReport {
    let mut c = Vec::new();
    let mut push = |name: &str, residual: f64, tol: f64, applies: bool| {
        let pass = !applies || residual <= tol;
        c.push(Condition { name: name.into(), residual, tol, applies, pass });
    };
    let shift = if mode == Mode::Global { params.rho_bar } else { 0.0 };
    let min_rho = init.rho.iter().map(|r| r + shift).fold(f64::INFINITY, f64::min);
    push("density positive", if min_rho > 0.0 { 0.0 } else { -min_rho + f64::MIN_POSITIVE }, 0.0, true);

    let nx = grid.nx;
    let clamp = init.eta1[0].abs().max(init.eta1[nx].abs()).max(init.eta2[0].abs()).max(init.eta2[nx].abs());
    push("beam clamped", clamp, 1e-12, true);

    let mut tr: f64 = 0.0;
    for side in Side::ALL {
        for k in grid.side_nodes(side) {
            let (i, j) = grid.ij(k);
            let want = if j == grid.ny && i > 0 && i < nx { init.eta2[i] } else { 0.0 };
            tr = tr.max(init.v[0][k].abs()).max((init.v[1][k] - want).abs());
        }
    }
    push("velocity trace", tr, 1e-12, true);

    let regime = 1.0 / p + 1.0 / (2.0 * q) < 0.5;
    let h = grid.hx.max(grid.hy);
    let ops = DiffOps::new(*grid);
    let tmax = init.theta.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let neu = ops.conormal_derivative(&init.theta, Some(a0)).max_abs();
    push("conormal temperature flux", neu, 100.0 * h * h * tmax.max(1e-300), regime);
    let slope = ops.beam_dx(&init.eta2);
    let emax = init.eta2.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    push("beam velocity slope", slope[0].abs().max(slope[nx].abs()), 100.0 * h * h * emax.max(1e-300), regime);
    CompatibilityReport { conditions: c }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_of_constant() {
        let g = Grid2D::new(1.0, 1.0, 8, 8).unwrap();
        let s = split_mean(&g, &vec![3.0; g.n_nodes()]);
        assert!((s.avg - 3.0).abs() < 1e-14);
        assert!(s.tilde.iter().all(|x| x.abs() < 1e-14));
    }
}
