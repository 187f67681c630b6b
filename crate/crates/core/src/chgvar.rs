//! Change of variables onto the fixed reference domain: the initial geometric
//! diffeomorphism, the Lagrangian map and its metric tensors `(B, delta, A)`.

use crate::error::{Error, Result};
use crate::grid::{DiffOps, Grid2D, VectorField};
use crate::mat2::{self, Mat2};

/// Nodewise `B = Cof grad X`, `delta = det grad X`, `A = B^T B / delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub b: Vec<Mat2>,
    pub delta: Vec<f64>,
    pub a: Vec<Mat2>,
}

impl Metrics {
    pub fn identity(n: usize) -> Self {
        Metrics { b: vec![mat2::IDENTITY; n], delta: vec![1.0; n], a: vec![mat2::IDENTITY; n] }
    }

    /// Fails with the first node where `delta <= 0`.
    pub fn from_grad(grid: &Grid2D, grad: &[Mat2]) -> Result<Self> {
        let n = grad.len();
        let mut b = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for (k, g) in grad.iter().enumerate() {
            let d = mat2::det(g);
            if !(d > 0.0) {
                let (i, j) = grid.ij(k);
                return Err(Error::Diffeo { i, j, delta: d });
            }
            let bk = mat2::cof(g);
            let ak = mat2::scale(&mat2::mul(&mat2::transpose(&bk), &bk), 1.0 / d);
            let off = 0.5 * (ak[0][1] + ak[1][0]);
            a.push([[ak[0][0], off], [off, ak[1][1]]]);
            b.push(bk);
            delta.push(d);
        }
        Ok(Metrics { b, delta, a })
    }
}

/// Map samples, their gradient and the derived metric triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoMap {
    pub x: VectorField,
    pub grad: Vec<Mat2>,
    pub metrics: Metrics,
}

impl DiffeoMap {
    pub fn identity(grid: &Grid2D) -> Self {
        let x = grid.sample_vec(|x, y| [x, y]);
        let n = grid.n_nodes();
        DiffeoMap { x, grad: vec![mat2::IDENTITY; n], metrics: Metrics::identity(n) }
    }

    /// Gradient by second-order differences of the samples.
    pub fn from_samples(grid: &Grid2D, x: VectorField) -> Result<Self> {
        let grad = DiffOps::new(*grid).grad_vec(&x);
        let metrics = Metrics::from_grad(grid, &grad)?;
        Ok(DiffeoMap { x, grad, metrics })
    }

    /// `y -> m X(y)` for a constant matrix `m`.
    pub fn compose_linear(&self, grid: &Grid2D, m: &Mat2) -> Result<Self> {
        let n = grid.n_nodes();
        let mut x = grid.zeros_vec();
        for k in 0..n {
            let p = mat2::mul_vec(m, [self.x[0][k], self.x[1][k]]);
            x[0][k] = p[0];
            x[1][k] = p[1];
        }
        let grad: Vec<Mat2> = self.grad.iter().map(|g| mat2::mul(m, g)).collect();
        let metrics = Metrics::from_grad(grid, &grad)?;
        Ok(DiffeoMap { x, grad, metrics })
    }

    pub fn top_edge(&self, grid: &Grid2D) -> Vec<[f64; 2]> {
        (0..=grid.nx)
            .map(|i| {
                let k = grid.idx(i, grid.ny);
                [self.x[0][k], self.x[1][k]]
            })
            .collect()
    }
}

/// `(grad X, B, delta, A)` from map samples.
pub fn metric_tensors(grid: &Grid2D, x: &VectorField) -> Result<(Vec<Mat2>, Metrics)> {
    let grad = DiffOps::new(*grid).grad_vec(x);
    let m = Metrics::from_grad(grid, &grad)?;
    Ok((grad, m))
}

fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn smoothstep5_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Vertical cutoff: `chi = 1` on `((1 - eps) eta_minus, (1 - eps) eta_plus)`,
/// supported in `(eta_minus, eta_plus)`, quintic `C^2` blend in between.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffProfile {
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub eps: f64,
    pub values: Vec<f64>,
}

impl CutoffProfile {
    pub fn new(grid: &Grid2D, eta_minus: f64, eta_plus: f64, eps: f64) -> Result<Self> {
        if !(eta_minus < 0.0 && eta_plus > 0.0) {
            return Err(Error::Config(format!(
                "cutoff box must straddle the interface: eta_minus = {eta_minus}, eta_plus = {eta_plus}"
            )));
        }
        if -eta_minus >= grid.h {
            return Err(Error::Config(format!(
                "cutoff support must stay above the bottom wall: eta_minus = {eta_minus}, H = {}",
                grid.h
            )));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("cutoff margin eps = {eps} must lie in (0, 1)")));
        }
        let mut c = CutoffProfile { eta_minus, eta_plus, eps, values: Vec::new() };
        c.values = grid.sample(|_, y| c.eval(y));
        Ok(c)
    }

    /// Box `(-H/2, H/2)` with `eps = 1/4`.
    pub fn default_for(grid: &Grid2D) -> Self {
        Self::new(grid, -0.5 * grid.h, 0.5 * grid.h, 0.25).expect("default cutoff is admissible")
    }

    pub fn eval(&self, y: f64) -> f64 {
        let lo_in = (1.0 - self.eps) * self.eta_minus;
        let hi_in = (1.0 - self.eps) * self.eta_plus;
        if y <= self.eta_minus || y >= self.eta_plus {
            0.0
        } else if y < lo_in {
            smoothstep5((y - self.eta_minus) / (lo_in - self.eta_minus))
        } else if y > hi_in {
            smoothstep5((self.eta_plus - y) / (self.eta_plus - hi_in))
        } else {
            1.0
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        let lo_in = (1.0 - self.eps) * self.eta_minus;
        let hi_in = (1.0 - self.eps) * self.eta_plus;
        if y <= self.eta_minus || y >= self.eta_plus {
            0.0
        } else if y < lo_in {
            let w = lo_in - self.eta_minus;
            smoothstep5_deriv((y - self.eta_minus) / w) / w
        } else if y > hi_in {
            let w = self.eta_plus - hi_in;
            -smoothstep5_deriv((self.eta_plus - y) / w) / w
        } else {
            0.0
        }
    }

    /// The interface displacement must keep the top edge inside the plateau.
    pub fn admits(&self, eta1: &[f64]) -> std::result::Result<(), String> {
        let lo = (1.0 - self.eps) * self.eta_minus;
        let hi = (1.0 - self.eps) * self.eta_plus;
        for (i, &e) in eta1.iter().enumerate() {
            if !(e > lo && e < hi) {
                return Err(format!("beam node {i}: eta1 = {e:.6e} outside the admissible band ({lo:.4e}, {hi:.4e})"));
            }
        }
        Ok(())
    }
}

/// Flows `Lambda(y) = eta1_0(y_1) chi(y_2) e_2` for unit time with RK4 and
/// returns `X0 = zeta(1, .)` with its metrics.
pub fn initial_diffeo(grid: &Grid2D, eta1_0: &[f64], chi: &CutoffProfile, n_flow_steps: usize) -> Result<DiffeoMap> {
    if eta1_0.len() != grid.beam_len() {
        return Err(Error::Config(format!("eta1_0 has {} samples, beam has {}", eta1_0.len(), grid.beam_len())));
    }
    if n_flow_steps == 0 {
        return Err(Error::Config("flow step count must be positive".into()));
    }
    let scale = eta1_0.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if eta1_0[0].abs() > 1e-12 * scale || eta1_0[grid.nx].abs() > 1e-12 * scale {
        return Err(Error::Geometry(format!(
            "eta1_0 is not clamped: endpoint values {:.3e}, {:.3e}",
            eta1_0[0], eta1_0[grid.nx]
        )));
    }
    chi.admits(eta1_0).map_err(Error::Geometry)?;

    let h = 1.0 / n_flow_steps as f64;
    let mut x = grid.zeros_vec();
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let k = grid.idx(i, j);
            let a = eta1_0[i];
            let f = |z: f64| a * chi.eval(z);
            let mut z = grid.y(j);
            if a != 0.0 {
                for _ in 0..n_flow_steps {
                    let k1 = f(z);
                    let k2 = f(z + 0.5 * h * k1);
                    let k3 = f(z + 0.5 * h * k2);
                    let k4 = f(z + h * k3);
                    z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
            }
            x[0][k] = grid.x(i);
            x[1][k] = z;
        }
    }
    // Nodes outside the plateau's reach and the interface row are pinned to
    // their exact images so round-off does not leak into Gamma_0.
    for i in 0..=grid.nx {
        x[1][grid.idx(i, grid.ny)] = eta1_0[i];
    }
    DiffeoMap::from_samples(grid, x)
}

/// Certificate of `delta >= c0` and `A >= c0 I` over all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoCertificate {
    pub min_delta: f64,
    pub min_eig_a: f64,
    pub worst_node: (usize, usize),
    pub c0: f64,
    pub pass: bool,
}

pub fn check_diffeo(grid: &Grid2D, map: &DiffeoMap, c0: f64) -> DiffeoCertificate {
    let mut min_delta = f64::INFINITY;
    let mut min_eig = f64::INFINITY;
    let mut worst = 0;
    for k in 0..map.metrics.delta.len() {
        let d = map.metrics.delta[k];
        let e = mat2::sym_min_eig(&map.metrics.a[k]);
        if d < min_delta {
            min_delta = d;
            worst = k;
        }
        min_eig = min_eig.min(e);
    }
    DiffeoCertificate {
        min_delta,
        min_eig_a: min_eig,
        worst_node: grid.ij(worst),
        c0,
        pass: min_delta >= c0 && min_eig >= c0,
    }
}

/// Default lower bound `c0 = min(delta0) / 2`.
pub fn default_c0(map: &DiffeoMap) -> f64 {
    0.5 * map.metrics.delta.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Lagrangian map `X(t) = X0 + int_0^t v`, advanced by the trapezoid rule.
#[derive(Debug, Clone)]
pub struct MapTracker {
    grid: Grid2D,
    ops: DiffOps,
    pub map: DiffeoMap,
    pub c0: f64,
}

impl MapTracker {
    pub fn new(grid: &Grid2D, x0: &DiffeoMap, c0: f64) -> Self {
        MapTracker { grid: *grid, ops: DiffOps::new(*grid), map: x0.clone(), c0 }
    }

    /// One trapezoid increment with `v` at the two ends of the step.
    pub fn advance(&mut self, v_prev: &VectorField, v_next: &VectorField, dt: f64) -> Result<&DiffeoMap> {
        let n = self.grid.n_nodes();
        let gp = self.ops.grad_vec(v_prev);
        let gn = self.ops.grad_vec(v_next);
        let w = 0.5 * dt;
        for c in 0..2 {
            for k in 0..n {
                self.map.x[c][k] += w * (v_prev[c][k] + v_next[c][k]);
            }
        }
        for k in 0..n {
            self.map.grad[k] = mat2::add(&self.map.grad[k], &mat2::scale(&mat2::add(&gp[k], &gn[k]), w));
        }
        self.map.metrics = Metrics::from_grad(&self.grid, &self.map.grad)?;
        if let Some((k, &d)) =
            self.map.metrics.delta.iter().enumerate().find(|(_, &d)| d <= self.c0)
        {
            let (i, j) = self.grid.ij(k);
            return Err(Error::Diffeo { i, j, delta: d });
        }
        Ok(&self.map)
    }
}

/// `X(t_N) = X0 + trapezoid sum of v_history` with uniform spacing `dt`.
pub fn update_map(grid: &Grid2D, x0: &DiffeoMap, v_history: &[VectorField], dt: f64, c0: f64) -> Result<DiffeoMap> {
    let mut tr = MapTracker::new(grid, x0, c0);
    for w in v_history.windows(2) {
        tr.advance(&w[0], &w[1], dt)?;
    }
    Ok(tr.map)
}
