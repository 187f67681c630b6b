//! Collocated rectangular fluid grid on `(0, L) x (-H, 0)`, the aligned beam
//! grid on the top edge, finite-difference operators, traces and discrete norms.
//!
//! Node `(i, j)` sits at `(i hx, -H + j hy)` and is stored at `j (nx + 1) + i`.
//! The top row `j = ny` is the interface; its interior nodes form `Gamma_S`,
//! every other boundary node (corners included) belongs to `Gamma_0`.

use crate::error::{Error, Result};
use crate::mat2::{self, Mat2};

pub type ScalarField = Vec<f64>;
pub type VectorField = [Vec<f64>; 2];
/// Beam samples at all `nx + 1` top-edge x-nodes, endpoints included.
pub type BeamField = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub l: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    GammaS,
    Gamma0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Outward unit normal of the fluid domain.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

impl Grid2D {
    pub fn new(l: f64, h: f64, nx: usize, ny: usize) -> Result<Self> {
        let mut bad = Vec::new();
        if !(l.is_finite() && l > 0.0) {
            bad.push(format!("L must be positive, got {l}"));
        }
        if !(h.is_finite() && h > 0.0) {
            bad.push(format!("H must be positive, got {h}"));
        }
        if nx < 4 {
            bad.push(format!("nx must be at least 4, got {nx}"));
        }
        if ny < 4 {
            bad.push(format!("ny must be at least 4, got {ny}"));
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        Ok(Grid2D { l, h, nx, ny, hx: l / nx as f64, hy: h / ny as f64 })
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % (self.nx + 1), k / (self.nx + 1))
    }

    /// x-coordinate of column `i`; the beam uses the same function, so the two
    /// grids agree bit for bit.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny {
            0.0
        } else {
            -self.h + j as f64 * self.hy
        }
    }

    pub fn beam_len(&self) -> usize {
        self.nx + 1
    }

    pub fn beam_x(&self) -> Vec<f64> {
        (0..=self.nx).map(|i| self.x(i)).collect()
    }

    pub fn top_x(&self) -> Vec<f64> {
        (0..=self.nx).map(|i| self.x(i)).collect()
    }

    pub fn kind(&self, i: usize, j: usize) -> NodeKind {
        let on_side = i == 0 || i == self.nx;
        if j == self.ny && !on_side {
            NodeKind::GammaS
        } else if j == 0 || j == self.ny || on_side {
            NodeKind::Gamma0
        } else {
            NodeKind::Interior
        }
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && i < self.nx && j > 0 && j < self.ny
    }

    pub fn area(&self) -> f64 {
        self.l * self.h
    }

    pub fn weights_x(&self) -> Vec<f64> {
        trapezoid_weights(self.nx, self.hx)
    }

    pub fn weights_y(&self) -> Vec<f64> {
        trapezoid_weights(self.ny, self.hy)
    }

    /// Tensor trapezoid weights at every node.
    pub fn node_weights(&self) -> Vec<f64> {
        let wx = self.weights_x();
        let wy = self.weights_y();
        let mut w = vec![0.0; self.n_nodes()];
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                w[self.idx(i, j)] = wx[i] * wy[j];
            }
        }
        w
    }

    /// Nodes on a side, ordered by increasing tangential index, corners included.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::Bottom => (0..=self.nx).map(|i| self.idx(i, 0)).collect(),
            Side::Top => (0..=self.nx).map(|i| self.idx(i, self.ny)).collect(),
            Side::Left => (0..=self.ny).map(|j| self.idx(0, j)).collect(),
            Side::Right => (0..=self.ny).map(|j| self.idx(self.nx, j)).collect(),
        }
    }

    /// Quadrature weights along a side (trapezoid in the tangential variable).
    pub fn side_weights(&self, side: Side) -> Vec<f64> {
        match side {
            Side::Bottom | Side::Top => self.weights_x(),
            Side::Left | Side::Right => self.weights_y(),
        }
    }

    pub fn zeros(&self) -> ScalarField {
        vec![0.0; self.n_nodes()]
    }

    pub fn zeros_vec(&self) -> VectorField {
        [self.zeros(), self.zeros()]
    }

    pub fn beam_zeros(&self) -> BeamField {
        vec![0.0; self.beam_len()]
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut out = self.zeros();
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                out[self.idx(i, j)] = f(self.x(i), self.y(j));
            }
        }
        out
    }

    pub fn sample_vec(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> VectorField {
        let mut out = self.zeros_vec();
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let k = self.idx(i, j);
                let v = f(self.x(i), self.y(j));
                out[0][k] = v[0];
                out[1][k] = v[1];
            }
        }
        out
    }

    pub fn sample_beam(&self, f: impl Fn(f64) -> f64) -> BeamField {
        (0..=self.nx).map(|i| f(self.x(i))).collect()
    }

    /// Trapezoid mean over the fluid domain.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.area()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let wx = self.weights_x();
        let wy = self.weights_y();
        let mut s = 0.0;
        for j in 0..=self.ny {
            let row = &f[j * (self.nx + 1)..(j + 1) * (self.nx + 1)];
            let mut r = 0.0;
            for i in 0..=self.nx {
                r += wx[i] * row[i];
            }
            s += wy[j] * r;
        }
        s
    }

    pub fn integrate_beam(&self, f: &[f64]) -> f64 {
        self.weights_x().iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Values on the top row, aligned with the beam nodes.
    pub fn trace_top(&self, f: &[f64]) -> BeamField {
        (0..=self.nx).map(|i| f[self.idx(i, self.ny)]).collect()
    }
}

pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

/// Scalar samples on the four sides, corners repeated per side.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub bottom: Vec<f64>,
    pub right: Vec<f64>,
    pub top: Vec<f64>,
    pub left: Vec<f64>,
}

impl BoundaryField {
    pub fn zeros(grid: &Grid2D) -> Self {
        BoundaryField {
            bottom: vec![0.0; grid.nx + 1],
            right: vec![0.0; grid.ny + 1],
            top: vec![0.0; grid.nx + 1],
            left: vec![0.0; grid.ny + 1],
        }
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Bottom => &self.bottom,
            Side::Right => &self.right,
            Side::Top => &self.top,
            Side::Left => &self.left,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut Vec<f64> {
        match side {
            Side::Bottom => &mut self.bottom,
            Side::Right => &mut self.right,
            Side::Top => &mut self.top,
            Side::Left => &mut self.left,
        }
    }

    pub fn max_abs(&self) -> f64 {
        Side::ALL
            .iter()
            .flat_map(|&s| self.side(s).iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Boundary L^q norm with trapezoid weights on each side.
    pub fn norm(&self, grid: &Grid2D, q: f64) -> f64 {
        let mut s = 0.0;
        for side in Side::ALL {
            let w = grid.side_weights(side);
            for (wi, v) in w.iter().zip(self.side(side)) {
                s += wi * v.abs().powf(q);
            }
        }
        s.powf(1.0 / q)
    }

    pub fn axpy(&mut self, a: f64, other: &BoundaryField) {
        for side in Side::ALL {
            let o = other.side(side).to_vec();
            for (x, y) in self.side_mut(side).iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> BoundaryField {
        let f = |v: &Vec<f64>| v.iter().map(|x| a * x).collect();
        BoundaryField { bottom: f(&self.bottom), right: f(&self.right), top: f(&self.top), left: f(&self.left) }
    }
}

/// Closure used at the first and last node of a first-derivative stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Second-order one-sided `(-3, 4, -1) / 2h`.
    SecondOrder,
    /// First-order one-sided `(-1, 1) / h`; with trapezoid weights this is the
    /// summation-by-parts pair of the centered interior stencil.
    Sbp,
}

/// Finite-difference operators on a grid: centered in the interior, one-sided
/// at the boundary, clamped closure on the beam.
#[derive(Debug, Clone, Copy)]
pub struct DiffOps {
    pub grid: Grid2D,
}

fn d1_line(u: &dyn Fn(usize) -> f64, n: usize, h: f64, k: usize, closure: Closure) -> f64 {
    if k == 0 {
        match closure {
            Closure::SecondOrder => (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * h),
            Closure::Sbp => (u(1) - u(0)) / h,
        }
    } else if k == n {
        match closure {
            Closure::SecondOrder => (3.0 * u(n) - 4.0 * u(n - 1) + u(n - 2)) / (2.0 * h),
            Closure::Sbp => (u(n) - u(n - 1)) / h,
        }
    } else {
        (u(k + 1) - u(k - 1)) / (2.0 * h)
    }
}

fn d2_line(u: &dyn Fn(usize) -> f64, n: usize, h: f64, k: usize) -> f64 {
    let h2 = h * h;
    if k == 0 {
        (2.0 * u(0) - 5.0 * u(1) + 4.0 * u(2) - u(3)) / h2
    } else if k == n {
        (2.0 * u(n) - 5.0 * u(n - 1) + 4.0 * u(n - 2) - u(n - 3)) / h2
    } else {
        (u(k + 1) - 2.0 * u(k) + u(k - 1)) / h2
    }
}

impl DiffOps {
    pub fn new(grid: Grid2D) -> Self {
        DiffOps { grid }
    }

    pub fn dx_with(&self, u: &[f64], closure: Closure) -> ScalarField {
        let g = &self.grid;
        let mut out = g.zeros();
        for j in 0..=g.ny {
            let row = |i: usize| u[g.idx(i, j)];
            for i in 0..=g.nx {
                out[g.idx(i, j)] = d1_line(&row, g.nx, g.hx, i, closure);
            }
        }
        out
    }

    pub fn dy_with(&self, u: &[f64], closure: Closure) -> ScalarField {
        let g = &self.grid;
        let mut out = g.zeros();
        for i in 0..=g.nx {
            let col = |j: usize| u[g.idx(i, j)];
            for j in 0..=g.ny {
                out[g.idx(i, j)] = d1_line(&col, g.ny, g.hy, j, closure);
            }
        }
        out
    }

    pub fn dx(&self, u: &[f64]) -> ScalarField {
        self.dx_with(u, Closure::SecondOrder)
    }

    pub fn dy(&self, u: &[f64]) -> ScalarField {
        self.dy_with(u, Closure::SecondOrder)
    }

    pub fn dxx(&self, u: &[f64]) -> ScalarField {
        let g = &self.grid;
        let mut out = g.zeros();
        for j in 0..=g.ny {
            let row = |i: usize| u[g.idx(i, j)];
            for i in 0..=g.nx {
                out[g.idx(i, j)] = d2_line(&row, g.nx, g.hx, i);
            }
        }
        out
    }

    pub fn dyy(&self, u: &[f64]) -> ScalarField {
        let g = &self.grid;
        let mut out = g.zeros();
        for i in 0..=g.nx {
            let col = |j: usize| u[g.idx(i, j)];
            for j in 0..=g.ny {
                out[g.idx(i, j)] = d2_line(&col, g.ny, g.hy, j);
            }
        }
        out
    }

    pub fn grad(&self, u: &[f64]) -> VectorField {
        [self.dx(u), self.dy(u)]
    }

    /// Velocity gradient samples, `m[i][j] = d v_i / d y_j`.
    pub fn grad_vec_with(&self, v: &VectorField, closure: Closure) -> Vec<Mat2> {
        let d = [
            [self.dx_with(&v[0], closure), self.dy_with(&v[0], closure)],
            [self.dx_with(&v[1], closure), self.dy_with(&v[1], closure)],
        ];
        (0..self.grid.n_nodes())
            .map(|k| [[d[0][0][k], d[0][1][k]], [d[1][0][k], d[1][1][k]]])
            .collect()
    }

    pub fn grad_vec(&self, v: &VectorField) -> Vec<Mat2> {
        self.grad_vec_with(v, Closure::SecondOrder)
    }

    pub fn div_with(&self, v: &VectorField, closure: Closure) -> ScalarField {
        let a = self.dx_with(&v[0], closure);
        let b = self.dy_with(&v[1], closure);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    pub fn div(&self, v: &VectorField) -> ScalarField {
        self.div_with(v, Closure::SecondOrder)
    }

    /// Row divergence of a tensor field: `(div T)_i = sum_k d_k T_ik`.
    pub fn div_tensor(&self, t: &[Mat2]) -> VectorField {
        let n = self.grid.n_nodes();
        let comp = |i: usize, k: usize| -> Vec<f64> { (0..n).map(|m| t[m][i][k]).collect() };
        let mut out = self.grid.zeros_vec();
        for i in 0..2 {
            let a = self.dx(&comp(i, 0));
            let b = self.dy(&comp(i, 1));
            for m in 0..n {
                out[i][m] = a[m] + b[m];
            }
        }
        out
    }

    pub fn sym_grad(&self, v: &VectorField) -> Vec<Mat2> {
        self.grad_vec(v)
            .iter()
            .map(|g| mat2::scale(&mat2::add(g, &mat2::transpose(g)), 0.5))
            .collect()
    }

    /// Five-point Laplacian in the interior, one-sided second differences on
    /// the boundary; annihilates constants everywhere.
    pub fn laplacian(&self, u: &[f64]) -> ScalarField {
        let a = self.dxx(u);
        let b = self.dyy(u);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    /// Outward normal derivative on each side (second-order one-sided).
    pub fn normal_derivative(&self, u: &[f64]) -> BoundaryField {
        self.conormal_derivative(u, None)
    }

    /// `A grad(u) . n` on each side; `a = None` means the identity.
    pub fn conormal_derivative(&self, u: &[f64], a: Option<&[Mat2]>) -> BoundaryField {
        let g = &self.grid;
        let gx = self.dx(u);
        let gy = self.dy(u);
        let mut out = BoundaryField::zeros(g);
        for side in Side::ALL {
            let n = side.normal();
            let nodes = g.side_nodes(side);
            let vals: Vec<f64> = nodes
                .iter()
                .map(|&k| {
                    let grad = [gx[k], gy[k]];
                    let f = match a {
                        Some(a) => mat2::mul_vec(&a[k], grad),
                        None => grad,
                    };
                    f[0] * n[0] + f[1] * n[1]
                })
                .collect();
            *out.side_mut(side) = vals;
        }
        out
    }

    pub fn beam_dx(&self, u: &[f64]) -> BeamField {
        let n = self.grid.nx;
        let f = |i: usize| u[i];
        (0..=n).map(|i| d1_line(&f, n, self.grid.hx, i, Closure::SecondOrder)).collect()
    }

    /// Dirichlet second difference on the beam interior; zero at the endpoints.
    pub fn beam_dxx(&self, u: &[f64]) -> BeamField {
        let n = self.grid.nx;
        let h2 = self.grid.hx * self.grid.hx;
        let mut out = vec![0.0; n + 1];
        for i in 1..n {
            out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
        }
        out
    }

    /// Clamped biharmonic: ghost values mirror the first interior node, which
    /// enforces zero slope; endpoints are held at zero.
    pub fn beam_biharmonic(&self, u: &[f64]) -> BeamField {
        let n = self.grid.nx as isize;
        let h4 = self.grid.hx.powi(4);
        let get = |k: isize| -> f64 {
            if k < 0 {
                u[(-k) as usize]
            } else if k > n {
                u[(2 * n - k) as usize]
            } else {
                u[k as usize]
            }
        };
        let mut out = vec![0.0; n as usize + 1];
        for i in 1..n {
            out[i as usize] =
                (get(i - 2) - 4.0 * get(i - 1) + 6.0 * get(i) - 4.0 * get(i + 1) + get(i + 2)) / h4;
        }
        out
    }
}

/// Clamped fourth-difference matrix on the `nx - 1` interior beam nodes.
pub fn clamped_biharmonic_matrix(grid: &Grid2D) -> faer::Mat<f64> {
    let m = grid.nx - 1;
    let h4 = grid.hx.powi(4);
    let mut k = faer::Mat::<f64>::zeros(m, m);
    for r in 0..m {
        k[(r, r)] = 6.0 / h4;
        if r >= 1 {
            k[(r, r - 1)] = -4.0 / h4;
        }
        if r + 1 < m {
            k[(r, r + 1)] = -4.0 / h4;
        }
        if r >= 2 {
            k[(r, r - 2)] = 1.0 / h4;
        }
        if r + 2 < m {
            k[(r, r + 2)] = 1.0 / h4;
        }
    }
    k[(0, 0)] = 7.0 / h4;
    k[(m - 1, m - 1)] = 7.0 / h4;
    k
}

/// Dirichlet second-difference matrix on the interior beam nodes.
pub fn beam_laplacian_matrix(grid: &Grid2D) -> faer::Mat<f64> {
    let m = grid.nx - 1;
    let h2 = grid.hx * grid.hx;
    let mut d = faer::Mat::<f64>::zeros(m, m);
    for r in 0..m {
        d[(r, r)] = -2.0 / h2;
        if r >= 1 {
            d[(r, r - 1)] = 1.0 / h2;
        }
        if r + 1 < m {
            d[(r, r + 1)] = 1.0 / h2;
        }
    }
    d
}

/// Spatial order `k`, exponents `p` (time) and `q` (space), decay weight `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub k: u8,
    pub p: f64,
    pub q: f64,
    pub beta: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec { k: 0, p: 2.0, q: 2.0, beta: 0.0 }
    }
}

impl NormSpec {
    pub fn new(k: u8, p: f64, q: f64, beta: f64) -> Self {
        NormSpec { k, p, q, beta }
    }

    pub fn with_k(self, k: u8) -> Self {
        NormSpec { k, ..self }
    }

    /// `p = inf` is accepted as the max-norm proxy in time.
    pub fn validate(&self) -> Result<()> {
        if self.k > 2 {
            return Err(Error::Unsupported(format!("norm order k = {} (only k <= 2)", self.k)));
        }
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("spatial exponent q = {} must lie in (1, inf)", self.q)));
        }
        if !(self.p > 1.0) {
            return Err(Error::Config(format!("temporal exponent p = {} must exceed 1", self.p)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("decay weight beta = {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

pub enum FieldRef<'a> {
    Scalar(&'a [f64]),
    Vector(&'a VectorField),
    Beam(&'a [f64]),
}

/// Discrete Sobolev-type norm: trapezoid quadrature of `|f|^q` plus
/// difference-quotient derivative terms up to order `k`, to the power `1/q`.
pub fn discrete_norm(grid: &Grid2D, field: FieldRef<'_>, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    let q = spec.q;
    let ops = DiffOps::new(*grid);
    match field {
        FieldRef::Beam(u) => {
            let w = grid.weights_x();
            let mut acc: Vec<f64> = u.iter().map(|x| x * x).collect();
            if spec.k >= 1 {
                let d = ops.beam_dx(u);
                acc.iter_mut().zip(&d).for_each(|(a, x)| *a += x * x);
            }
            if spec.k >= 2 {
                let d2: Vec<f64> = {
                    let f = |i: usize| u[i];
                    (0..=grid.nx).map(|i| d2_line(&f, grid.nx, grid.hx, i)).collect()
                };
                acc.iter_mut().zip(&d2).for_each(|(a, x)| *a += x * x);
            }
            let s: f64 = w.iter().zip(&acc).map(|(wi, a)| wi * a.sqrt().powf(q)).sum();
            Ok(s.powf(1.0 / q))
        }
        FieldRef::Scalar(u) => {
            let acc = pointwise_sq(&ops, &[u], spec.k);
            Ok(quad_q(grid, &acc, q))
        }
        FieldRef::Vector(v) => {
            let acc = pointwise_sq(&ops, &[&v[0], &v[1]], spec.k);
            Ok(quad_q(grid, &acc, q))
        }
    }
}

fn pointwise_sq(ops: &DiffOps, comps: &[&[f64]], k: u8) -> Vec<f64> {
    let n = ops.grid.n_nodes();
    let mut acc = vec![0.0; n];
    for u in comps {
        for m in 0..n {
            acc[m] += u[m] * u[m];
        }
        if k >= 1 {
            let gx = ops.dx(u);
            let gy = ops.dy(u);
            for m in 0..n {
                acc[m] += gx[m] * gx[m] + gy[m] * gy[m];
            }
            if k >= 2 {
                let xx = ops.dxx(u);
                let yy = ops.dyy(u);
                let xy = ops.dy(&gx);
                for m in 0..n {
                    acc[m] += xx[m] * xx[m] + 2.0 * xy[m] * xy[m] + yy[m] * yy[m];
                }
            }
        }
    }
    acc
}

fn quad_q(grid: &Grid2D, sq: &[f64], q: f64) -> f64 {
    let vals: Vec<f64> = sq.iter().map(|s| s.sqrt().powf(q)).collect();
    grid.integrate(&vals).max(0.0).powf(1.0 / q)
}

/// `(sum_n |e^{beta t_n} s_n|^p dt)^{1/p}` with `t_n = n dt`; `p = inf` gives
/// the weighted maximum.
pub fn weighted_time_norm(series: &[f64], dt: f64, spec: &NormSpec) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Numerical("weighted time norm of an empty series".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if !(spec.beta >= 0.0) || !(spec.p > 1.0) {
        return Err(Error::Config(format!("invalid temporal norm parameters p = {}, beta = {}", spec.p, spec.beta)));
    }
    let w = |n: usize, s: f64| (spec.beta * n as f64 * dt).exp() * s.abs();
    if spec.p.is_infinite() {
        return Ok(series.iter().enumerate().fold(0.0_f64, |m, (n, &s)| m.max(w(n, s))));
    }
    let sum: f64 = series.iter().enumerate().map(|(n, &s)| w(n, s).powf(spec.p) * dt).sum();
    Ok(sum.powf(1.0 / spec.p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_and_counts() {
        let g = Grid2D::new(2.0, 1.0, 8, 4).unwrap();
        assert_eq!(g.hx, 0.25);
        assert_eq!(g.hy, 0.25);
        let g = Grid2D::new(1.0, 1.0, 8, 8).unwrap();
        assert_eq!(g.n_nodes(), 81);
        assert_eq!(g.trace_top(&g.zeros()).len(), g.beam_len());
    }

    #[test]
    fn rejects_coarse_or_degenerate() {
        assert!(Grid2D::new(1.0, 1.0, 3, 8).is_err());
        assert!(Grid2D::new(0.0, 1.0, 8, 8).is_err());
        assert!(Grid2D::new(1.0, -1.0, 8, 8).is_err());
    }

    #[test]
    fn boundary_classification_partitions() {
        let g = Grid2D::new(1.0, 1.0, 6, 5).unwrap();
        let mut s = 0;
        let mut z = 0;
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                match g.kind(i, j) {
                    NodeKind::GammaS => s += 1,
                    NodeKind::Gamma0 => z += 1,
                    NodeKind::Interior => {}
                }
            }
        }
        assert_eq!(s, g.nx - 1);
        assert_eq!(z, 2 * (g.nx + 1) + 2 * (g.ny - 1) - (g.nx - 1));
        assert_eq!(g.kind(0, g.ny), NodeKind::Gamma0);
    }

    #[test]
    fn beam_nodes_match_top_edge() {
        let g = Grid2D::new(0.7, 1.3, 13, 9).unwrap();
        let b = g.beam_x();
        for i in 0..=g.nx {
            assert_eq!(b[i].to_bits(), g.x(i).to_bits());
        }
    }

    #[test]
    fn sbp_closure_sums_to_boundary_flux() {
        let g = Grid2D::new(1.0, 1.0, 7, 5).unwrap();
        let ops = DiffOps::new(g);
        let u = g.sample(|x, y| (3.0 * x).sin() + y * y * x);
        let d = ops.dx_with(&u, Closure::Sbp);
        let lhs = g.integrate(&d);
        let wy = g.weights_y();
        let rhs: f64 = (0..=g.ny).map(|j| wy[j] * (u[g.idx(g.nx, j)] - u[g.idx(0, j)])).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }
}
