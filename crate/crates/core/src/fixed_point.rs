//! Picard iteration drivers: the local-in-time map on `[0, T]` and the global
//! small-data map on a truncated horizon with exponential time weights.
//!
//! One iteration marches the linear cascade with the current source bundle,
//! rebuilds the Lagrangian map from the velocity, and evaluates the nonlinear
//! sources along the new trajectory.

use crate::chgvar::{check_diffeo, default_c0, initial_diffeo, CutoffProfile, DiffeoMap, MapTracker, Metrics};
use crate::error::{Error, Result};
use crate::fs_operator::{assemble_afs, Layout};
use crate::grid::{clamped_biharmonic_matrix, discrete_norm, FieldRef, Grid2D, NormSpec, ScalarField};
use crate::linear::{
    interior_nodes, step_density, PhysParams, PlateStepper, SourceBundle, TemperatureStepper, TimeScheme,
    VelocityStepper,
};
use crate::sources::{
    check_compatibility, eval_global_sources, eval_local_sources, split_mean, F3ShearFactor, FullState, Mode,
    TimeDerivs,
};
use crate::sparse::{self, Csr, SparseLu};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    /// Horizon `T` (local) or `T_max` (global).
    pub t_end: f64,
    pub dt: f64,
    /// Ball radius; `None` uses ten times the data norm, capped at 1.
    pub radius: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    /// Exponential weight of the global norms.
    pub beta: f64,
    pub p: f64,
    pub q: f64,
    /// Spatial order of the density norm.
    pub rho_k: u8,
    /// Shift of the auxiliary heat problem.
    pub gamma1: f64,
    pub shear: F3ShearFactor,
    /// Disables the nonlinear sources (linear cascade only).
    pub linear_only: bool,
    pub flow_steps: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            t_end: 0.1,
            dt: 1e-2,
            radius: None,
            max_iters: 30,
            tol: 1e-8,
            beta: 0.0,
            p: 4.0,
            q: 4.0,
            rho_k: 1,
            gamma1: 1.0,
            shear: F3ShearFactor::default(),
            linear_only: false,
            flow_steps: 32,
        }
    }
}

impl IterationConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let pos = |name: &str, x: f64, v: &mut Vec<String>| {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{name} must be positive, got {x}"));
            }
        };
        pos("T", self.t_end, &mut v);
        pos("dt", self.dt, &mut v);
        pos("tol", self.tol, &mut v);
        if let Some(r) = self.radius {
            pos("R", r, &mut v);
        }
        if self.t_end > 0.0 && self.dt > 0.0 {
            let n = self.t_end / self.dt;
            if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
                v.push(format!("dt = {} does not divide T = {}", self.dt, self.t_end));
            }
        }
        if self.max_iters == 0 {
            v.push("max_iters must be at least 1".into());
        }
        if !(self.p > 2.0) {
            v.push(format!("time exponent p = {} must satisfy 2 < p < inf", self.p));
        }
        if !(self.q > 3.0 && self.q.is_finite()) {
            v.push(format!("space exponent q = {} must satisfy 3 < q < inf", self.q));
        }
        if self.p > 2.0 && self.q > 3.0 && (1.0 / self.p + 0.5 / self.q - 0.5).abs() < 1e-12 {
            v.push(format!("exponents p = {}, q = {} hit the excluded case 1/p + 1/(2q) = 1/2", self.p, self.q));
        }
        if !(self.beta >= 0.0) {
            v.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.rho_k > 1 {
            v.push(format!("rho_k must be 0 or 1, got {}", self.rho_k));
        }
        if !(self.gamma1 > 0.0) {
            v.push(format!("gamma1 must be positive, got {}", self.gamma1));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn norm_spec(&self, beta: f64) -> NormSpec {
        NormSpec::new(0, self.p, self.q, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationStatus {
    Converged,
    BallExit,
    DiffeoFailure,
    MaxIters,
}

impl IterationStatus {
    pub fn name(self) -> &'static str {
        match self {
            IterationStatus::Converged => "converged",
            IterationStatus::BallExit => "ball-exit",
            IterationStatus::DiffeoFailure => "diffeo-failure",
            IterationStatus::MaxIters => "max-iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub mode: Mode,
    pub radius: f64,
    pub data_norm: f64,
    pub bundle_norms: Vec<f64>,
    pub diff_norms: Vec<f64>,
    pub ratios: Vec<f64>,
    pub status: IterationStatus,
    pub message: Option<String>,
    /// Global mode: the weighted state norm grew over the horizon.
    pub decay_violation: bool,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.bundle_norms.len()
    }

    pub fn converged(&self) -> bool {
        self.status == IterationStatus::Converged
    }
}

/// States at every time level; `delta` is the map Jacobian per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub dt: f64,
    pub states: Vec<FullState>,
    pub delta: Vec<ScalarField>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

/// Sum of the spatial norms of the components; density and temperature are
/// measured against `reference`.
pub fn state_norm(grid: &Grid2D, s: &FullState, spec: &NormSpec, rho_k: u8, reference: (f64, f64)) -> Result<f64> {
    let rho: Vec<f64> = s.rho.iter().map(|x| x - reference.0).collect();
    let th: Vec<f64> = s.theta.iter().map(|x| x - reference.1).collect();
    let s0 = spec.with_k(0);
    Ok(discrete_norm(grid, FieldRef::Scalar(&rho), &spec.with_k(rho_k))?
        + discrete_norm(grid, FieldRef::Vector(&s.v), &s0)?
        + discrete_norm(grid, FieldRef::Scalar(&th), &s0)?
        + discrete_norm(grid, FieldRef::Beam(&s.eta1), &spec.with_k(2))?
        + discrete_norm(grid, FieldRef::Beam(&s.eta2), &spec.with_k(1))?)
}

/// Absolute floor of the stopping test; below it the iterates differ by
/// round-off only and the relative test can stall.
const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;

fn default_radius(data_norm: f64) -> f64 {
    if data_norm > 0.0 {
        (10.0 * data_norm).min(1.0)
    } else {
        1.0
    }
}

fn derivs_at(states: &[FullState], n: usize, dt: f64, grid: &Grid2D) -> TimeDerivs {
    if states.len() < 2 {
        return TimeDerivs::zeros(grid);
    }
    if n == 0 {
        TimeDerivs::backward(&states[0], &states[1], dt)
    } else {
        TimeDerivs::backward(&states[n - 1], &states[n], dt)
    }
}

struct Driver {
    grid: Grid2D,
    cfg: IterationConfig,
    x0: DiffeoMap,
    c0: f64,
}

impl Driver {
    fn new(grid: &Grid2D, init: &FullState, cfg: &IterationConfig) -> Result<Self> {
        cfg.validate()?;
        if init.eta1.len() != grid.beam_len() || init.rho.len() != grid.n_nodes() {
            return Err(Error::Config("initial state does not match the grid".into()));
        }
        let chi = CutoffProfile::default_for(grid);
        let x0 = initial_diffeo(grid, &init.eta1, &chi, cfg.flow_steps)?;
        let c0 = default_c0(&x0);
        let cert = check_diffeo(grid, &x0, c0);
        if !cert.pass {
            let (i, j) = cert.worst_node;
            return Err(Error::Diffeo { i, j, delta: cert.min_delta });
        }
        Ok(Driver { grid: *grid, cfg: cfg.clone(), x0, c0 })
    }

    /// Maps along a trajectory and the Jacobian per level.
    fn maps(&self, states: &[FullState]) -> Result<Vec<DiffeoMap>> {
        let mut tr = MapTracker::new(&self.grid, &self.x0, self.c0);
        let mut out = Vec::with_capacity(states.len());
        out.push(self.x0.clone());
        for w in states.windows(2) {
            out.push(tr.advance(&w[0].v, &w[1].v, self.cfg.dt)?.clone());
        }
        Ok(out)
    }

    fn iterate(
        &self,
        mode: Mode,
        data_norm: f64,
        beta: f64,
        march: &dyn Fn(&SourceBundle) -> Result<Vec<FullState>>,
        sources: &dyn Fn(&[FullState], &[DiffeoMap]) -> Result<SourceBundle>,
    ) -> Result<(Trajectory, IterationReport)> {
        let g = &self.grid;
        let cfg = &self.cfg;
        let spec = cfg.norm_spec(beta);
        let radius = cfg.radius.unwrap_or_else(|| default_radius(data_norm));
        let mut report = IterationReport {
            mode,
            radius,
            data_norm,
            bundle_norms: Vec::new(),
            diff_norms: Vec::new(),
            ratios: Vec::new(),
            status: IterationStatus::MaxIters,
            message: None,
            decay_violation: false,
        };
        let levels = cfg.steps() + 1;
        let mut bundle = SourceBundle::zeros(g, levels);
        let mut states = march(&bundle)?;
        let mut maps = match self.maps(&states) {
            Ok(m) => m,
            Err(e @ Error::Diffeo { .. }) => {
                report.status = IterationStatus::DiffeoFailure;
                report.message = Some(e.to_string());
                return Ok((self.trajectory(mode, states, None), report));
            }
            Err(e) => return Err(e),
        };
        if cfg.linear_only {
            report.status = IterationStatus::Converged;
            report.bundle_norms.push(0.0);
            report.diff_norms.push(0.0);
            return Ok((self.trajectory(mode, states, Some(&maps)), report));
        }
        for _ in 0..cfg.max_iters {
            let next = sources(&states, &maps)?;
            let nb = next.norm(g, cfg.dt, &spec, cfg.rho_k)?;
            let diff = next.difference(&bundle).norm(g, cfg.dt, &spec, cfg.rho_k)?;
            report.bundle_norms.push(nb);
            if let Some(&prev) = report.diff_norms.last() {
                if prev > 0.0 {
                    report.ratios.push(diff / prev);
                }
            }
            report.diff_norms.push(diff);
            if !nb.is_finite() {
                return Err(Error::Numerical("source bundle norm is not finite".into()));
            }
            if nb > radius {
                report.status = IterationStatus::BallExit;
                report.message = Some(format!("source norm {nb:.3e} left the ball of radius {radius:.3e}; try a shorter horizon"));
                return Ok((self.trajectory(mode, states, Some(&maps)), report));
            }
            if diff == 0.0 {
                report.status = IterationStatus::Converged;
                break;
            }
            bundle = next;
            let done = diff <= cfg.tol * nb || diff <= ROUNDOFF_FLOOR;
            states = march(&bundle)?;
            maps = match self.maps(&states) {
                Ok(m) => m,
                Err(e @ Error::Diffeo { .. }) => {
                    report.status = IterationStatus::DiffeoFailure;
                    report.message = Some(e.to_string());
                    return Ok((self.trajectory(mode, states, None), report));
                }
                Err(e) => return Err(e),
            };
            if done {
                report.status = IterationStatus::Converged;
                break;
            }
        }
        Ok((self.trajectory(mode, states, Some(&maps)), report))
    }

    fn trajectory(&self, mode: Mode, states: Vec<FullState>, maps: Option<&[DiffeoMap]>) -> Trajectory {
        let delta = match maps {
            Some(m) => m.iter().map(|x| x.metrics.delta.clone()).collect(),
            None => Vec::new(),
        };
        Trajectory { mode, dt: self.cfg.dt, states, delta }
    }
}

/// Local-in-time iteration around the initial configuration. Density and
/// temperature are absolute values; the reference coefficients are frozen at
/// the initial map and density.
pub fn run_local(
    grid: &Grid2D,
    params: &PhysParams,
    initial: &FullState,
    cfg: &IterationConfig,
) -> Result<(Trajectory, IterationReport)> {
    params.validate(false)?;
    let drv = Driver::new(grid, initial, cfg)?;
    let g = *grid;
    let m0: Metrics = drv.x0.metrics.clone();
    let compat = check_compatibility(grid, initial, &m0.a, params, Mode::Local, cfg.p, cfg.q);
    if !compat.all_pass() {
        return Err(Error::Validation(compat.failures()));
    }
    let rho0 = initial.rho.clone();
    let dt = cfg.dt;
    let scheme = TimeScheme::BackwardEuler;
    let plate = PlateStepper::new(grid, dt, scheme)?;
    let vel = VelocityStepper::new(grid, &m0, &rho0, params, dt, scheme)?;
    let heat = TemperatureStepper::new(grid, &m0, &rho0, params, dt, 0.0, scheme)?;
    let spec = cfg.norm_spec(0.0);
    let data_norm = state_norm(grid, initial, &spec, cfg.rho_k, (params.rho_bar, params.theta_bar))?;
    let steps = cfg.steps();

    let march = |b: &SourceBundle| -> Result<Vec<FullState>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut s = initial.clone();
        s.t = 0.0;
        out.push(s.clone());
        for n in 0..steps {
            let (e1, e2) = plate.step(&s.eta1, &s.eta2, &b.h[n + 1])?;
            let v = vel.step(&s.v, &e2, &b.f2[n + 1])?;
            let th = heat.step(&s.theta, &b.f3[n + 1], &b.g[n + 1])?;
            let rho = step_density(&g, &s.rho, &s.v, &v, &b.f1[n], &b.f1[n + 1], &m0, &rho0, dt);
            s = FullState { rho, v, theta: th, eta1: e1, eta2: e2, t: (n + 1) as f64 * dt };
            out.push(s.clone());
        }
        Ok(out)
    };
    let sources = |states: &[FullState], maps: &[DiffeoMap]| -> Result<SourceBundle> {
        let mut b = SourceBundle::zeros(&g, states.len());
        for n in 0..states.len() {
            let d = derivs_at(states, n, dt, &g);
            let s = eval_local_sources(&g, &states[n], &maps[n], &m0, &rho0, params, &d)?;
            b.f1[n] = s.f1;
            b.f2[n] = s.f2;
            b.f3[n] = s.f3;
            b.g[n] = s.g;
            b.h[n] = s.h;
        }
        Ok(b)
    };
    drv.iterate(Mode::Local, data_norm, 0.0, &march, &sources)
}

/// Largest horizon among `T, T/2, ...` (at most `max_halvings` halvings) at
/// which the local iteration converges, with the reports of every attempt.
pub fn local_existence_time(
    grid: &Grid2D,
    params: &PhysParams,
    initial: &FullState,
    cfg: &IterationConfig,
    max_halvings: usize,
) -> Result<(Option<f64>, Vec<(f64, IterationReport)>)> {
    let mut attempts = Vec::new();
    let mut c = cfg.clone();
    for _ in 0..=max_halvings {
        let (_, rep) = run_local(grid, params, initial, &c)?;
        let ok = rep.converged();
        attempts.push((c.t_end, rep));
        if ok {
            return Ok((Some(c.t_end), attempts));
        }
        c.t_end *= 0.5;
    }
    Ok((None, attempts))
}

/// Global iteration in perturbation variables around `(rho_bar, 0, theta_bar)`.
///
/// The temperature is split as `theta = theta_y + theta_s + theta_c`: `theta_s`
/// solves the shifted heat problem with all thermal data, `theta_c` is the
/// spatially constant integral of `gamma1 mean(theta_s)`, and `theta_y` is
/// carried by the coupled operator. The density mean driven by `mean(f1)` is
/// tracked separately so that the coupled part stays on the conserved subspace.
pub fn run_global(
    grid: &Grid2D,
    params: &PhysParams,
    initial: &FullState,
    cfg: &IterationConfig,
) -> Result<(Trajectory, IterationReport)> {
    params.validate(true)?;
    if !(cfg.beta > 0.0) {
        return Err(Error::Validation(vec!["global mode requires beta > 0".into()]));
    }
    let drv = Driver::new(grid, initial, cfg)?;
    let g = *grid;
    let p = *params;
    let compat = check_compatibility(grid, initial, &drv.x0.metrics.a, params, Mode::Global, cfg.p, cfg.q);
    if !compat.all_pass() {
        return Err(Error::Validation(compat.failures()));
    }
    let dt = cfg.dt;
    let steps = cfg.steps();
    let lay = Layout::new(grid);
    let afs = assemble_afs(grid, params)?;
    let sys = Csr::lincomb(1.0, &Csr::identity(lay.dim()), -dt, &afs.matrix);
    let lu = SparseLu::new(&sys)?;
    let n_nodes = g.n_nodes();
    let ident = Metrics::identity(n_nodes);
    let rho_ref = vec![p.rho_bar; n_nodes];
    let heat = TemperatureStepper::new(grid, &ident, &rho_ref, params, dt, cfg.gamma1, TimeScheme::BackwardEuler)?;
    let interior = interior_nodes(grid);
    let spec = cfg.norm_spec(0.0);
    let data_norm = state_norm(grid, initial, &spec, cfg.rho_k, (0.0, 0.0))?;
    let gamma1 = cfg.gamma1;
    let area = g.area();

    let march = |b: &SourceBundle| -> Result<Vec<FullState>> {
        let mut y = vec![0.0; lay.dim()];
        let mut rho_c = (g.integrate(&initial.rho) + p.rho_bar * g.integrate_beam(&initial.eta1)) / area;
        let mut theta_c = 0.0;
        let mut theta_s = initial.theta.clone();
        for k in 0..n_nodes {
            y[lay.rho() + k] = initial.rho[k] - rho_c;
        }
        for (r, &k) in interior.iter().enumerate() {
            y[lay.v(0) + r] = initial.v[0][k];
            y[lay.v(1) + r] = initial.v[1][k];
        }
        for i in 0..lay.m {
            y[lay.eta1() + i] = initial.eta1[i + 1];
            y[lay.eta2() + i] = initial.eta2[i + 1];
        }
        let unpack = |y: &[f64], rho_c: f64, theta_c: f64, theta_s: &[f64], t: f64| -> FullState {
            let mut s = FullState::zeros(&g);
            for k in 0..n_nodes {
                s.rho[k] = y[lay.rho() + k] + rho_c;
                s.theta[k] = y[lay.theta() + k] + theta_s[k] + theta_c;
            }
            for (r, &k) in interior.iter().enumerate() {
                s.v[0][k] = y[lay.v(0) + r];
                s.v[1][k] = y[lay.v(1) + r];
            }
            for i in 0..lay.m {
                s.eta1[i + 1] = y[lay.eta1() + i];
                s.eta2[i + 1] = y[lay.eta2() + i];
                s.v[1][g.idx(i + 1, g.ny)] = y[lay.eta2() + i];
            }
            s.t = t;
            s
        };
        let mut out = Vec::with_capacity(steps + 1);
        out.push(unpack(&y, rho_c, theta_c, &theta_s, 0.0));
        for n in 0..steps {
            let l = n + 1;
            theta_s = heat.step(&theta_s, &b.f3[l], &b.g[l])?;
            let ts_avg = g.mean(&theta_s);
            let f1_avg = g.mean(&b.f1[l]);
            theta_c += dt * gamma1 * ts_avg;
            rho_c += dt * f1_avg;
            let mut rhs = y.clone();
            for k in 0..n_nodes {
                rhs[lay.rho() + k] += dt * (b.f1[l][k] - f1_avg);
                rhs[lay.theta() + k] += dt * gamma1 * (theta_s[k] - ts_avg);
            }
            for (r, &k) in interior.iter().enumerate() {
                let (i, j) = g.ij(k);
                let gx = (theta_s[g.idx(i + 1, j)] - theta_s[g.idx(i - 1, j)]) / (2.0 * g.hx);
                let gy = (theta_s[g.idx(i, j + 1)] - theta_s[g.idx(i, j - 1)]) / (2.0 * g.hy);
                rhs[lay.v(0) + r] += dt * (b.f2[l][0][k] - p.r0 * gx);
                rhs[lay.v(1) + r] += dt * (b.f2[l][1][k] - p.r0 * gy);
            }
            for i in 0..lay.m {
                let tr = 0.5 * (theta_s[g.idx(i + 1, g.ny)] + theta_s[g.idx(i + 1, g.ny - 1)]);
                rhs[lay.eta2() + i] += dt
                    * (b.h[l][i + 1] + p.r0 * p.rho_bar * tr + p.r0 * p.theta_bar * rho_c + p.r0 * p.rho_bar * theta_c);
            }
            y = lu.solve(&rhs);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at step {l} of the global march")));
            }
            out.push(unpack(&y, rho_c, theta_c, &theta_s, l as f64 * dt));
        }
        Ok(out)
    };
    let shear = cfg.shear;
    let sources = |states: &[FullState], maps: &[DiffeoMap]| -> Result<SourceBundle> {
        let mut b = SourceBundle::zeros(&g, states.len());
        for n in 0..states.len() {
            let d = derivs_at(states, n, dt, &g);
            let rs = split_mean(&g, &states[n].rho);
            let ts = split_mean(&g, &states[n].theta);
            let s = eval_global_sources(&g, &states[n], &maps[n], &p, &d, &rs, &ts, shear)?;
            b.h[n] = s.h();
            b.f1[n] = s.f1;
            b.f2[n] = s.f2;
            b.f3[n] = s.f3;
            b.g[n] = s.g;
        }
        Ok(b)
    };
    let (traj, mut rep) = drv.iterate(Mode::Global, data_norm, cfg.beta, &march, &sources)?;
    rep.decay_violation = weighted_growth(grid, &traj, cfg.beta);
    Ok((traj, rep))
}

/// `true` when `e^{beta t} |state(t)|` over the last quarter exceeds its
/// maximum over the first quarter.
fn weighted_growth(grid: &Grid2D, traj: &Trajectory, beta: f64) -> bool {
    let n = traj.states.len();
    if n < 8 {
        return false;
    }
    let w: Vec<f64> = traj.states.iter().map(|s| (beta * s.t).exp() * decay_observable(grid, s)).collect();
    let q = n / 4;
    let head = w[..q].iter().cloned().fold(0.0, f64::max);
    let tail = w[n - q..].iter().sum::<f64>() / q as f64;
    tail > head * (1.0 + 1e-9) && head > 0.0
}

/// `L^2` norm of `(rho - mean rho, v, theta - mean theta, eta2)`, which
/// excludes the conserved equilibrium directions.
pub fn decay_observable(grid: &Grid2D, s: &FullState) -> f64 {
    let w = grid.node_weights();
    let rm = grid.mean(&s.rho);
    let tm = grid.mean(&s.theta);
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += w[k] * ((s.rho[k] - rm).powi(2) + s.v[0][k].powi(2) + s.v[1][k].powi(2) + (s.theta[k] - tm).powi(2));
    }
    let e2: Vec<f64> = s.eta2.iter().map(|x| x * x).collect();
    acc += grid.integrate_beam(&e2);
    acc.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares fit of `log y = c - rate t` over the tail half of the series.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    let n = times.len().min(values.len());
    let start = n / 2;
    let pts: Vec<(f64, f64)> =
        (start..n).filter(|&i| values[i] > 0.0 && values[i].is_finite()).map(|i| (times[i], values[i].ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Numerical("too few positive samples for an exponential fit".into()));
    }
    let m = pts.len() as f64;
    let tx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ty = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ty).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(DecayFit { rate: -slope, intercept: ty - slope * tx, r2, points: pts.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservedSeries {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub max_drift: f64,
    /// `max_drift / t_end`.
    pub drift_rate: f64,
}

/// Mass `int rho delta_X` (local) or `int rho + rho_bar int eta1` (global),
/// and the kinetic plus plate energy.
pub fn conserved_quantities(grid: &Grid2D, params: &PhysParams, traj: &Trajectory) -> ConservedSeries {
    let k4 = clamped_biharmonic_matrix(grid);
    let w = grid.node_weights();
    let mut mass = Vec::with_capacity(traj.states.len());
    let mut energy = Vec::with_capacity(traj.states.len());
    for (n, s) in traj.states.iter().enumerate() {
        let m = match traj.mode {
            Mode::Local => {
                let d = traj.delta.get(n);
                let f: Vec<f64> = (0..s.rho.len()).map(|k| s.rho[k] * d.map_or(1.0, |d| d[k])).collect();
                grid.integrate(&f)
            }
            Mode::Global => grid.integrate(&s.rho) + params.rho_bar * grid.integrate_beam(&s.eta1),
        };
        mass.push(m);
        let kin: f64 = (0..w.len()).map(|k| w[k] * (s.v[0][k].powi(2) + s.v[1][k].powi(2))).sum();
        let e1 = &s.eta1[1..s.eta1.len() - 1];
        let pe = sparse::dot(e1, &sparse::dense_matvec(&k4, e1));
        let e2: f64 = s.eta2.iter().map(|x| x * x).sum();
        energy.push(0.5 * (params.rho_bar * kin + grid.hx * (pe + e2)));
    }
    let m0 = mass.first().copied().unwrap_or(0.0);
    let max_drift = mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    let t_end = traj.states.last().map_or(0.0, |s| s.t);
    ConservedSeries {
        times: traj.times(),
        mass,
        energy,
        max_drift,
        drift_rate: if t_end > 0.0 { max_drift / t_end } else { 0.0 },
    }
}

/// Norm of the global sources at one level for the state `s * base`, map
/// `Id + s * w` and time derivatives `s * derivs`.
pub fn source_norm_at_scale(
    grid: &Grid2D,
    params: &PhysParams,
    base: &FullState,
    w: &crate::grid::VectorField,
    derivs: &TimeDerivs,
    scale: f64,
    spec: &NormSpec,
    rho_k: u8,
) -> Result<f64> {
    let st = base.scaled(scale);
    let id = DiffeoMap::identity(grid);
    let mut x = id.x.clone();
    for c in 0..2 {
        for k in 0..x[c].len() {
            x[c][k] += scale * w[c][k];
        }
    }
    let map = DiffeoMap::from_samples(grid, x)?;
    let d = TimeDerivs {
        dv: [derivs.dv[0].iter().map(|v| v * scale).collect(), derivs.dv[1].iter().map(|v| v * scale).collect()],
        dtheta: derivs.dtheta.iter().map(|v| v * scale).collect(),
    };
    let rs = split_mean(grid, &st.rho);
    let ts = split_mean(grid, &st.theta);
    let s = eval_global_sources(grid, &st, &map, params, &d, &rs, &ts, F3ShearFactor::default())?;
    let mut b = SourceBundle::zeros(grid, 1);
    b.h[0] = s.h();
    b.f1[0] = s.f1;
    b.f2[0] = s.f2;
    b.f3[0] = s.f3;
    b.g[0] = s.g;
    b.norm(grid, 1.0, spec, rho_k)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_flags_resonant_exponents() {
        let c = IterationConfig { p: 2.5, q: 5.0, ..Default::default() };
        assert!(c.violations().iter().any(|m| m.contains("1/p + 1/(2q)")));
        let c = IterationConfig { t_end: 0.1, dt: 0.03, ..Default::default() };
        assert!(c.violations().iter().any(|m| m.contains("does not divide")));
    }

    #[test]
    fn exponential_fit_is_exact_on_exponentials() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_exponential(&t, &y).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 5.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
