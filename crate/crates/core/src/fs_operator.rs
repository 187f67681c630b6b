//! Discrete linearized fluid-structure operator on the stacked unknown
//! `(rho, v1, v2, theta, eta1, eta2)`: assembly, conserved subspace, spectra,
//! resolvent solves and scalar sector scans.
//!
//! The velocity unknowns live on interior nodes. The full nodal velocity is
//! reconstructed with `eta2 e2` on the interface and zero on the other walls,
//! so the coupling to the beam is built into the operator. Viscous terms come
//! from the symmetric form `mu |grad v|^2 + (mu + alpha) (div v)^2`, whose
//! interface rows give the plate's viscous traction; the density divergence
//! and the pressure gradient form a summation-by-parts pair whose boundary
//! term is the plate's pressure traction.

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{beam_laplacian_matrix, clamped_biharmonic_matrix, Grid2D};
use crate::linear::{conormal_flux_operator, interior_nodes, PhysParams};
use crate::mat2::{self, Mat2};
use crate::sparse::{self, cnorm2, Csr, DenseLu, ShiftedLu, SparseLu, Triplets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Full,
    Xm,
}

/// What a block of unknowns represents; fixes its quadrature weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Density,
    Velocity,
    Temperature,
    Displacement,
    BeamVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    pub name: &'static str,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

impl BlockInfo {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Square operator over a block-structured unknown.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: Csr,
    pub blocks: Vec<BlockInfo>,
    pub domain: Domain,
    pub grid: Grid2D,
    pub params: PhysParams,
    pub name: String,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn block(&self, name: &str) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn block_range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        self.block(name)
            .map(|b| b.range())
            .ok_or_else(|| Error::Numerical(format!("operator {} has no block {name}", self.name)))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn dense(&self) -> Mat<f64> {
        self.matrix.to_dense()
    }

    /// Restriction to a subset of blocks (rows and columns), in the given order.
    pub fn sub_operator(&self, names: &[&str], name: &str) -> Result<OperatorMatrix> {
        let mut idx = Vec::new();
        let mut blocks = Vec::new();
        for n in names {
            let b = self.block(n).ok_or_else(|| Error::Numerical(format!("unknown block {n}")))?;
            blocks.push(BlockInfo { offset: idx.len(), ..b.clone() });
            idx.extend(b.range());
        }
        Ok(OperatorMatrix {
            matrix: self.matrix.select(&idx, &idx),
            blocks,
            domain: Domain::Full,
            grid: self.grid,
            params: self.params,
            name: name.into(),
        })
    }

    pub fn with_matrix(&self, matrix: Csr, name: &str) -> OperatorMatrix {
        OperatorMatrix { matrix, name: name.into(), ..self.clone() }
    }

    /// Block-diagonal Gram matrix of the `L^2`-type norm: node quadrature on
    /// fluid blocks (plus the discrete gradient on density when `rho_k = 1`),
    /// `hx (I + K4)` on the displacement and `hx I` on the beam velocity.
    pub fn gram(&self, rho_k: u8) -> Csr {
        let g = &self.grid;
        let w = g.node_weights();
        let wi: Vec<f64> = interior_nodes(g).iter().map(|&k| w[k]).collect();
        let mut t = Triplets::new(self.dim(), self.dim());
        for b in &self.blocks {
            let o = b.offset;
            match b.kind {
                BlockKind::Density | BlockKind::Temperature => {
                    for (k, wk) in w.iter().enumerate() {
                        t.push(o + k, o + k, *wk);
                    }
                    if b.kind == BlockKind::Density && rho_k >= 1 {
                        let kmat = fv_laplacian(g);
                        for (r, c, v) in kmat.triplets() {
                            t.push(o + r, o + c, -v);
                        }
                    }
                }
                BlockKind::Velocity => {
                    for (r, wk) in wi.iter().enumerate() {
                        t.push(o + r, o + r, *wk);
                    }
                }
                BlockKind::Displacement => {
                    let k4 = clamped_biharmonic_matrix(g);
                    for r in 0..b.len {
                        for c in 0..b.len {
                            let v = g.hx * (k4[(r, c)] + if r == c { 1.0 } else { 0.0 });
                            t.push(o + r, o + c, v);
                        }
                    }
                }
                BlockKind::BeamVelocity => {
                    for r in 0..b.len {
                        t.push(o + r, o + r, g.hx);
                    }
                }
            }
        }
        t.to_csr()
    }
}

/// Finite-volume Neumann Laplacian flux matrix (unweighted, symmetric, NSD).
pub fn fv_laplacian(grid: &Grid2D) -> Csr {
    let a: Vec<Mat2> = vec![mat2::IDENTITY; grid.n_nodes()];
    conormal_flux_operator(grid, &a)
}

/// Density stabilization coefficient `h^2 a / 4` with
/// `a = R0 theta_bar rho_bar / (2 mu + alpha)`.
pub fn density_stabilization(grid: &Grid2D, p: &PhysParams) -> f64 {
    let h = grid.hx.max(grid.hy);
    let a = p.r0 * p.theta_bar * p.rho_bar / (2.0 * p.mu + p.alpha);
    0.25 * h * h * a
}

/// Offsets of the stacked unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub ni: usize,
    pub m: usize,
}

impl Layout {
    pub fn new(grid: &Grid2D) -> Self {
        Layout { n: grid.n_nodes(), ni: (grid.nx - 1) * (grid.ny - 1), m: grid.nx - 1 }
    }
    pub fn rho(&self) -> usize {
        0
    }
    pub fn v(&self, c: usize) -> usize {
        self.n + c * self.ni
    }
    pub fn theta(&self) -> usize {
        self.n + 2 * self.ni
    }
    pub fn eta1(&self) -> usize {
        2 * self.n + 2 * self.ni
    }
    pub fn eta2(&self) -> usize {
        self.eta1() + self.m
    }
    pub fn dim(&self) -> usize {
        self.eta2() + self.m
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        vec![
            BlockInfo { name: "rho", kind: BlockKind::Density, offset: self.rho(), len: self.n },
            BlockInfo { name: "v1", kind: BlockKind::Velocity, offset: self.v(0), len: self.ni },
            BlockInfo { name: "v2", kind: BlockKind::Velocity, offset: self.v(1), len: self.ni },
            BlockInfo { name: "theta", kind: BlockKind::Temperature, offset: self.theta(), len: self.n },
            BlockInfo { name: "eta1", kind: BlockKind::Displacement, offset: self.eta1(), len: self.m },
            BlockInfo { name: "eta2", kind: BlockKind::BeamVelocity, offset: self.eta2(), len: self.m },
        ]
    }
}

/// Map from reconstructed nodal velocity entries `c * N + k` to stacked
/// unknowns: interior nodes to `v`, interface nodes (component 2) to `eta2`.
fn velocity_reconstruction(grid: &Grid2D, lay: &Layout) -> Vec<Option<usize>> {
    let mut map = vec![None; 2 * lay.n];
    for (r, &k) in interior_nodes(grid).iter().enumerate() {
        map[k] = Some(lay.v(0) + r);
        map[lay.n + k] = Some(lay.v(1) + r);
    }
    for i in 1..grid.nx {
        map[lay.n + grid.idx(i, grid.ny)] = Some(lay.eta2() + i - 1);
    }
    map
}

/// Stiffness of `mu |grad v|^2 + (mu + alpha)(div v)^2` over nodal velocities.
pub fn viscous_form(grid: &Grid2D, mu: f64, alpha: f64) -> Csr {
    let n = grid.n_nodes();
    let (hx, hy) = (grid.hx, grid.hy);
    let wx = grid.weights_x();
    let wy = grid.weights_y();
    let mut t = Triplets::new(2 * n, 2 * n);
    let mut edge = |p: usize, q: usize, s: f64| {
        for c in 0..2 {
            let (a, b) = (c * n + p, c * n + q);
            t.push(a, a, s);
            t.push(b, b, s);
            t.push(a, b, -s);
            t.push(b, a, -s);
        }
    };
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            edge(grid.idx(i, j), grid.idx(i + 1, j), mu * wy[j] / hx);
        }
    }
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            edge(grid.idx(i, j), grid.idx(i, j + 1), mu * wx[i] / hy);
        }
    }
    let lam = (mu + alpha) * hx * hy;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (sw, se, nw, ne) = (grid.idx(i, j), grid.idx(i + 1, j), grid.idx(i, j + 1), grid.idx(i + 1, j + 1));
            let cx = 0.5 / hx;
            let cy = 0.5 / hy;
            let d = [(sw, -cx), (nw, -cx), (se, cx), (ne, cx), (n + sw, -cy), (n + se, -cy), (n + nw, cy), (n + ne, cy)];
            for &(a, va) in &d {
                for &(b, vb) in &d {
                    t.push(a, b, lam * va * vb);
                }
            }
        }
    }
    t.to_csr()
}

fn sbp_stencil(m: usize, len: usize, h: f64) -> Vec<(usize, f64)> {
    if m == 0 {
        vec![(1, 1.0 / h), (0, -1.0 / h)]
    } else if m == len {
        vec![(len, 1.0 / h), (len - 1, -1.0 / h)]
    } else {
        vec![(m + 1, 0.5 / h), (m - 1, -0.5 / h)]
    }
}

/// The principal part and the coupling part of the operator.
#[derive(Debug, Clone)]
pub struct AfsSplit {
    pub a0: OperatorMatrix,
    pub b: OperatorMatrix,
    pub full: OperatorMatrix,
}

/// Assembles the operator and its splitting `A = A0 + B`, where `B` holds the
/// pressure gradients and the interface traction.
pub fn assemble_split(grid: &Grid2D, params: &PhysParams) -> Result<AfsSplit> {
    params.validate(true)?;
    let g = grid;
    let p = params;
    let lay = Layout::new(g);
    let dim = lay.dim();
    let n = lay.n;
    let w = g.node_weights();
    let interior = interior_nodes(g);
    let vmap = velocity_reconstruction(g, &lay);
    let s = viscous_form(g, p.mu, p.alpha);
    let kfv = fv_laplacian(g);
    let eps = density_stabilization(g, p);
    let k4 = clamped_biharmonic_matrix(g);
    let d2 = beam_laplacian_matrix(g);
    let mut a0 = Triplets::new(dim, dim);
    let mut bt = Triplets::new(dim, dim);

    // Density: -rho_bar div v + eps T^-1 K rho.
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let k = g.idx(i, j);
            for (ii, c) in sbp_stencil(i, g.nx, g.hx) {
                if let Some(col) = vmap[g.idx(ii, j)] {
                    a0.push(lay.rho() + k, col, -p.rho_bar * c);
                }
            }
            for (jj, c) in sbp_stencil(j, g.ny, g.hy) {
                if let Some(col) = vmap[n + g.idx(i, jj)] {
                    a0.push(lay.rho() + k, col, -p.rho_bar * c);
                }
            }
        }
    }
    for (r, c, v) in kfv.triplets() {
        a0.push(lay.rho() + r, lay.rho() + c, eps * v / w[r]);
        a0.push(lay.theta() + r, lay.theta() + c, p.kappa_bar() * v / w[r]);
    }

    // Velocity: viscous form plus centered pressure gradient.
    for comp in 0..2 {
        for (r, &k) in interior.iter().enumerate() {
            let row = lay.v(comp) + r;
            for (col, v) in s.row(comp * n + k) {
                if let Some(x) = vmap[col] {
                    a0.push(row, x, -v / (p.rho_bar * w[k]));
                }
            }
            let (i, j) = g.ij(k);
            let (plus, minus, h) = if comp == 0 {
                (g.idx(i + 1, j), g.idx(i - 1, j), g.hx)
            } else {
                (g.idx(i, j + 1), g.idx(i, j - 1), g.hy)
            };
            let cr = p.r0 * p.theta_bar / p.rho_bar / (2.0 * h);
            let ct = p.r0 / (2.0 * h);
            bt.push(row, lay.rho() + plus, -cr);
            bt.push(row, lay.rho() + minus, cr);
            bt.push(row, lay.theta() + plus, -ct);
            bt.push(row, lay.theta() + minus, ct);
        }
    }

    // Plate.
    for r in 0..lay.m {
        a0.push(lay.eta1() + r, lay.eta2() + r, 1.0);
        for c in 0..lay.m {
            a0.push(lay.eta2() + r, lay.eta1() + c, -k4[(r, c)]);
            a0.push(lay.eta2() + r, lay.eta2() + c, d2[(r, c)]);
        }
        let i = r + 1;
        let top = g.idx(i, g.ny);
        let below = g.idx(i, g.ny - 1);
        for (col, v) in s.row(n + top) {
            if let Some(x) = vmap[col] {
                bt.push(lay.eta2() + r, x, -v / g.hx);
            }
        }
        for node in [top, below] {
            bt.push(lay.eta2() + r, lay.rho() + node, 0.5 * p.r0 * p.theta_bar);
            bt.push(lay.eta2() + r, lay.theta() + node, 0.5 * p.r0 * p.rho_bar);
        }
    }

    let a0m = a0.to_csr();
    let bm = bt.to_csr();
    let full = a0m.add(&bm);
    let mk = |m: Csr, name: &str| OperatorMatrix {
        matrix: m,
        blocks: lay.blocks(),
        domain: Domain::Full,
        grid: *g,
        params: *p,
        name: name.into(),
    };
    Ok(AfsSplit { a0: mk(a0m, "A0_FS"), b: mk(bm, "B_FS"), full: mk(full, "A_FS") })
}

pub fn assemble_afs(grid: &Grid2D, params: &PhysParams) -> Result<OperatorMatrix> {
    Ok(assemble_split(grid, params)?.full)
}

/// Plate generator `A_S` on `(eta1, eta2)`.
pub fn plate_operator(afs: &OperatorMatrix) -> Result<OperatorMatrix> {
    afs.sub_operator(&["eta1", "eta2"], "A_S")
}

/// Viscous velocity generator `A_v` with homogeneous wall data.
pub fn velocity_operator(split: &AfsSplit) -> Result<OperatorMatrix> {
    split.a0.sub_operator(&["v1", "v2"], "A_v")
}

/// Neumann heat generator `A_theta`.
pub fn temperature_operator(afs: &OperatorMatrix) -> Result<OperatorMatrix> {
    afs.sub_operator(&["theta"], "A_theta")
}

/// The two conserved functionals: total mass with the displaced volume, and
/// the temperature integral.
pub fn constraint_functionals(op: &OperatorMatrix) -> Result<[Vec<f64>; 2]> {
    let g = &op.grid;
    let w = g.node_weights();
    let mut l1 = vec![0.0; op.dim()];
    let mut l2 = vec![0.0; op.dim()];
    let rr = op.block_range("rho")?;
    let tr = op.block_range("theta")?;
    let er = op.block_range("eta1")?;
    for (k, wk) in w.iter().enumerate() {
        l1[rr.start + k] = *wk;
        l2[tr.start + k] = *wk;
    }
    for r in er {
        l1[r] = op.params.rho_bar * g.hx;
    }
    Ok([l1, l2])
}

/// Affine projection onto the conserved subspace: constant shifts of the
/// temperature and of the density.
pub fn project_xm(op: &OperatorMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let [l1, l2] = constraint_functionals(op)?;
    let area = op.grid.area();
    let mut y = x.to_vec();
    let c1 = sparse::dot(&l1, x) / area;
    let c2 = sparse::dot(&l2, x) / area;
    for r in op.block_range("rho")? {
        y[r] -= c1;
    }
    for r in op.block_range("theta")? {
        y[r] -= c2;
    }
    Ok(y)
}

/// Removes the direction `e_p` using `l^T A = 0`: columns
/// `e_k - (l_k / l_p) e_p`, row `p` dropped.
fn deflate(m: &Mat<f64>, l: &[f64], p: usize) -> Mat<f64> {
    let n = m.nrows();
    let keep: Vec<usize> = (0..n).filter(|&k| k != p).collect();
    Mat::<f64>::from_fn(n - 1, n - 1, |r, c| {
        let (rr, cc) = (keep[r], keep[c]);
        m[(rr, cc)] - l[cc] / l[p] * m[(rr, p)]
    })
}

fn pivot_of(l: &[f64]) -> usize {
    let mut best = 0;
    for k in 0..l.len() {
        if l[k].abs() > l[best].abs() {
            best = k;
        }
    }
    best
}

/// Full eigenvalue list. On the conserved subspace the two constraint
/// directions are deflated; the temperature block is treated separately when
/// nothing feeds back into it.
pub fn spectrum(op: &OperatorMatrix, domain: Domain) -> Result<Vec<c64>> {
    if domain == Domain::Full {
        return sparse::eigenvalues(&op.dense());
    }
    let [l1, l2] = constraint_functionals(op)?;
    for l in [&l1, &l2] {
        let d = op.matrix.tmatvec(l);
        let scale = op.matrix.norm_inf() * sparse::norm2(l);
        if sparse::norm_inf(&d) > 1e-9 * scale {
            return Err(Error::Numerical(format!("{} does not conserve its constraint functionals", op.name)));
        }
    }
    let tr = op.block_range("theta")?;
    let rest: Vec<usize> = (0..op.dim()).filter(|k| !tr.contains(k)).collect();
    let theta_idx: Vec<usize> = tr.clone().collect();
    let feedback = op.matrix.select(&theta_idx, &rest).max_abs();
    if feedback == 0.0 {
        let at = op.matrix.select(&theta_idx, &theta_idx).to_dense();
        let ar = op.matrix.select(&rest, &rest).to_dense();
        let lt: Vec<f64> = theta_idx.iter().map(|&k| l2[k]).collect();
        let lr: Vec<f64> = rest.iter().map(|&k| l1[k]).collect();
        let mut ev = sparse::eigenvalues(&deflate(&at, &lt, pivot_of(&lt)))?;
        ev.extend(sparse::eigenvalues(&deflate(&ar, &lr, pivot_of(&lr)))?);
        Ok(ev)
    } else {
        let m = op.dense();
        let p1 = pivot_of(&l1);
        let d1 = deflate(&m, &l1, p1);
        let l2r: Vec<f64> = (0..op.dim()).filter(|&k| k != p1).map(|k| l2[k]).collect();
        sparse::eigenvalues(&deflate(&d1, &l2r, pivot_of(&l2r)))
    }
}

pub fn max_real(ev: &[c64]) -> f64 {
    ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Number of singular values below `rel_tol * sigma_max`.
pub fn nullspace_dimension(op: &OperatorMatrix, rel_tol: f64) -> Result<usize> {
    let s = sparse::singular_values(&op.dense())?;
    let smax = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x <= rel_tol * smax).count())
}

fn residual_check(op: &OperatorMatrix, lambda: c64, x: &[c64], rhs: &[c64]) -> Result<()> {
    let ax = op.matrix.matvec_c(x);
    let r: Vec<c64> = (0..x.len()).map(|k| lambda * x[k] - ax[k] - rhs[k]).collect();
    let fr = cnorm2(rhs);
    let xn = cnorm2(x);
    let scale = fr.max(f64::MIN_POSITIVE);
    let rel = cnorm2(&r) / scale;
    let growth = xn / scale;
    if !rel.is_finite() || rel > 1e-8 || !growth.is_finite() || growth > 1e13 {
        return Err(Error::Singular { re: lambda.re, im: lambda.im, residual: if rel.is_finite() { rel } else { f64::INFINITY } });
    }
    Ok(())
}

/// Solves `(lambda I - A) x = rhs`. At `lambda = 0` on the conserved subspace
/// the system is solved blockwise: beam velocity, temperature with zero mean,
/// density and velocity with zero mean density, then the plate with the
/// mass-coupled density mean.
pub fn resolvent_solve(op: &OperatorMatrix, lambda: c64, rhs: &[c64]) -> Result<Vec<c64>> {
    if rhs.len() != op.dim() {
        return Err(Error::Numerical(format!("rhs length {} does not match operator dimension {}", rhs.len(), op.dim())));
    }
    if lambda == c64::new(0.0, 0.0) && op.domain == Domain::Xm {
        let re: Vec<f64> = rhs.iter().map(|z| z.re).collect();
        let im: Vec<f64> = rhs.iter().map(|z| z.im).collect();
        let xr = solve_zero_xm(op, &re)?;
        let xi = if im.iter().any(|v| *v != 0.0) { solve_zero_xm(op, &im)? } else { vec![0.0; im.len()] };
        let x: Vec<c64> = xr.iter().zip(&xi).map(|(a, b)| c64::new(*a, *b)).collect();
        residual_check(op, lambda, &x, rhs)?;
        return Ok(x);
    }
    if lambda.norm() <= 1e-12 * op.matrix.norm_inf() {
        if let Ok(ls) = constraint_functionals(op) {
            for l in &ls {
                let d = op.matrix.tmatvec(l);
                if sparse::norm_inf(&d) <= 1e-9 * op.matrix.norm_inf() * sparse::norm2(l) {
                    return Err(Error::Singular { re: lambda.re, im: lambda.im, residual: sparse::norm_inf(&d) });
                }
            }
        }
    }
    let lu = ShiftedLu::new(&op.matrix, lambda)?;
    let x = lu.solve(rhs);
    residual_check(op, lambda, &x, rhs)?;
    Ok(x)
}

fn bordered_solve(a: &Csr, weights: &[f64], border_rows: std::ops::Range<usize>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    let mut t = a.triplets();
    for (k, &wk) in weights.iter().enumerate() {
        t.push((n, border_rows.start + k, wk));
        t.push((border_rows.start + k, n, 1.0));
    }
    let m = Csr::from_triplets(n + 1, n + 1, &t);
    let mut b = rhs.to_vec();
    b.push(0.0);
    let x = SparseLu::new(&m)?.solve(&b);
    Ok(x[..n].to_vec())
}

fn solve_zero_xm(op: &OperatorMatrix, f: &[f64]) -> Result<Vec<f64>> {
    let [l1, l2] = constraint_functionals(op)?;
    let fnorm = sparse::norm2(f).max(f64::MIN_POSITIVE);
    for l in [&l1, &l2] {
        let c = sparse::dot(l, f) / (sparse::norm2(l) * fnorm);
        if c.abs() > 1e-10 {
            return Err(Error::Singular { re: 0.0, im: 0.0, residual: c.abs() });
        }
    }
    let g = &op.grid;
    let p = &op.params;
    let a = &op.matrix;
    let rr = op.block_range("rho")?;
    let v1 = op.block_range("v1")?;
    let v2 = op.block_range("v2")?;
    let tr = op.block_range("theta")?;
    let e1 = op.block_range("eta1")?;
    let e2 = op.block_range("eta2")?;
    let w = g.node_weights();
    let mut x = vec![0.0; op.dim()];
    let rows = |r: &std::ops::Range<usize>| -> Vec<usize> { r.clone().collect() };

    for (k, r) in e2.clone().enumerate() {
        x[r] = -f[e1.start + k];
    }

    let ti = rows(&tr);
    let att = a.select(&ti, &ti);
    let rhs_t: Vec<f64> = ti.iter().map(|&r| -f[r]).collect();
    let th = bordered_solve(&att, &w, 0..ti.len(), &rhs_t)?;
    for (k, &r) in ti.iter().enumerate() {
        x[r] = th[k];
    }

    let rv: Vec<usize> = rows(&rr).into_iter().chain(rows(&v1)).chain(rows(&v2)).collect();
    let arv = a.select(&rv, &rv);
    let known: Vec<usize> = ti.iter().copied().chain(rows(&e2)).collect();
    let coupling = a.select(&rv, &known).matvec(&known.iter().map(|&k| x[k]).collect::<Vec<_>>());
    let rhs_rv: Vec<f64> = rv.iter().enumerate().map(|(q, &r)| -f[r] - coupling[q]).collect();
    let sol = bordered_solve(&arv, &w, 0..rr.len(), &rhs_rv)?;
    for (q, &r) in rv.iter().enumerate() {
        x[r] = sol[q];
    }

    // Plate: A_{eta2, eta1} eta1 + R0 theta_bar rho_avg = rest, rho_avg from mass.
    let area = g.area();
    let ei = rows(&e1);
    let e2i = rows(&e2);
    let ae = a.select(&e2i, &ei).to_dense();
    let ones_rho: Vec<f64> = vec![1.0; rr.len()];
    let trace_const = a.select(&e2i, &rows(&rr)).matvec(&ones_rho);
    let m = ei.len();
    let coupled = Mat::<f64>::from_fn(m, m, |r, c| ae[(r, c)] - trace_const[r] * p.rho_bar * g.hx / area);
    let others: Vec<usize> = (0..op.dim()).filter(|k| !e1.contains(k)).collect();
    let ao = a.select(&e2i, &others).matvec(&others.iter().map(|&k| x[k]).collect::<Vec<_>>());
    let rhs_e: Vec<f64> = (0..m).map(|r| -f[e2.start + r] - ao[r]).collect();
    let eta1 = DenseLu::new(&coupled).solve(&rhs_e);
    let mut s1 = 0.0;
    for (k, &r) in ei.iter().enumerate() {
        x[r] = eta1[k];
        s1 += eta1[k];
    }
    let rho_avg = -p.rho_bar * g.hx * s1 / area;
    for r in rr {
        x[r] += rho_avg;
    }
    Ok(x)
}

/// Inverse iteration at a computed eigenvalue; returns the refined
/// eigenvalue, eigenvector and relative residual `|(lambda - A) x| / |x|`.
pub fn eigenpair(op: &OperatorMatrix, lambda: c64, seed: u64) -> Result<(c64, Vec<c64>, f64)> {
    let shift = lambda + c64::new(1e-11 * lambda.norm().max(1.0), 0.0);
    let lu = ShiftedLu::new(&op.matrix, shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<c64> = (0..op.dim()).map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    for _ in 0..3 {
        x = lu.solve(&x);
        let nx = cnorm2(&x);
        x.iter_mut().for_each(|z| *z /= nx);
    }
    let ax = op.matrix.matvec_c(&x);
    let num: c64 = x.iter().zip(&ax).map(|(a, b)| a.conj() * b).sum();
    let lam = num / x.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let r: Vec<c64> = (0..x.len()).map(|k| lam * x[k] - ax[k]).collect();
    let res = cnorm2(&r) / cnorm2(&x);
    Ok((lam, x, res))
}

/// Gram-norm helper with a factored Gram matrix.
pub struct GramNorm {
    g: Csr,
    lu: SparseLu,
}

impl GramNorm {
    pub fn new(op: &OperatorMatrix, rho_k: u8) -> Result<Self> {
        let g = op.gram(rho_k);
        let lu = SparseLu::new(&g)?;
        Ok(GramNorm { g, lu })
    }

    pub fn apply(&self, x: &[c64]) -> Vec<c64> {
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let a = self.g.matvec(&re);
        let b = self.g.matvec(&im);
        a.iter().zip(&b).map(|(p, q)| c64::new(*p, *q)).collect()
    }

    pub fn solve(&self, x: &[c64]) -> Vec<c64> {
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let a = self.lu.solve(&re);
        let b = self.lu.solve(&im);
        a.iter().zip(&b).map(|(p, q)| c64::new(*p, *q)).collect()
    }

    pub fn norm(&self, x: &[c64]) -> f64 {
        let gx = self.apply(x);
        x.iter().zip(&gx).map(|(a, b)| (a.conj() * b).re).sum::<f64>().max(0.0).sqrt()
    }

    pub fn norm_real(&self, x: &[f64]) -> f64 {
        sparse::dot(x, &self.g.matvec(x)).max(0.0).sqrt()
    }
}

/// `|mu (lambda I - A)^-1|` in the Gram norm by power iteration on
/// `G^-1 R^H G R`.
pub fn scaled_resolvent_norm(op: &OperatorMatrix, gram: &GramNorm, lambda: c64, mu: c64, seed: u64) -> Result<f64> {
    let lu = ShiftedLu::new(&op.matrix, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<c64> = (0..op.dim()).map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let nx = gram.norm(&x);
    x.iter_mut().for_each(|z| *z /= nx);
    let mut est = 0.0;
    for it in 0..60 {
        let y: Vec<c64> = lu.solve(&x).into_iter().map(|z| z * mu).collect();
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Singular { re: lambda.re, im: lambda.im, residual: f64::INFINITY });
        }
        let new = gram.norm(&y);
        let gy = gram.apply(&y);
        let z: Vec<c64> = lu.solve_adjoint(&gy).into_iter().map(|z| z * mu.conj()).collect();
        x = gram.solve(&z);
        let n = gram.norm(&x);
        if !(n > 0.0) {
            return Ok(new);
        }
        x.iter_mut().for_each(|z| *z /= n);
        if it > 3 && (new - est).abs() <= 1e-7 * new {
            return Ok(new);
        }
        est = new;
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorSample {
    pub mu: c64,
    pub lambda: c64,
    pub norm: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorScanResult {
    pub operator: String,
    pub beta: f64,
    pub gamma: f64,
    pub rho_k: u8,
    pub samples: Vec<SectorSample>,
    pub m_hat: f64,
}

impl SectorScanResult {
    pub fn any_singular(&self) -> bool {
        self.samples.iter().any(|s| s.singular)
    }
}

/// Samples `lambda = gamma + r exp(+-i phi)` for `phi in {0, beta/2, beta - 0.01}`.
pub fn sector_scan(op: &OperatorMatrix, beta: f64, radii: &[f64], gamma: f64, rho_k: u8) -> Result<SectorScanResult> {
    if !(beta > std::f64::consts::FRAC_PI_2 && beta < std::f64::consts::PI) {
        return Err(Error::Config(format!("sector angle beta = {beta} must lie in (pi/2, pi)")));
    }
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("sector radii must be positive".into()));
    }
    let gram = GramNorm::new(op, rho_k)?;
    let mut samples = Vec::new();
    for (ri, &r) in radii.iter().enumerate() {
        for phi in [0.0, 0.5 * beta, beta - 0.01] {
            let signs: &[f64] = if phi == 0.0 { &[1.0] } else { &[1.0, -1.0] };
            for &s in signs {
                let mu = c64::new(r * phi.cos(), s * r * phi.sin());
                let lambda = mu + c64::new(gamma, 0.0);
                let seed = (ri as u64) << 8 | (samples.len() as u64);
                match scaled_resolvent_norm(op, &gram, lambda, mu, seed) {
                    Ok(nv) if nv.is_finite() => samples.push(SectorSample { mu, lambda, norm: nv, singular: false }),
                    Ok(_) | Err(Error::Singular { .. }) => {
                        samples.push(SectorSample { mu, lambda, norm: f64::INFINITY, singular: true })
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let m_hat = samples.iter().map(|s| s.norm).fold(0.0, f64::max);
    Ok(SectorScanResult { operator: op.name.clone(), beta, gamma, rho_k, samples, m_hat })
}

/// Increases the shift geometrically from 0 until no sample is singular and
/// the bound stays below `cap`.
pub fn find_sector_gamma(op: &OperatorMatrix, beta: f64, radii: &[f64], rho_k: u8, cap: f64) -> Result<SectorScanResult> {
    let mut gamma = 0.0;
    for k in 0..12 {
        let res = sector_scan(op, beta, radii, gamma, rho_k)?;
        if !res.any_singular() && res.m_hat < cap {
            return Ok(res);
        }
        gamma = 0.1 * 2f64.powi(k);
    }
    Err(Error::Numerical(format!("no admissible sector shift found for {}", op.name)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub a: f64,
    pub b: f64,
    pub m_hat: f64,
    /// `a (1 + M_hat) < 1`.
    pub condition: bool,
    pub samples: usize,
}

/// Non-negative least squares for `y ~ a p + b q`.
pub fn nnls2(p: &[f64], q: &[f64], y: &[f64]) -> (f64, f64) {
    let spp = sparse::dot(p, p);
    let sqq = sparse::dot(q, q);
    let spq = sparse::dot(p, q);
    let spy = sparse::dot(p, y);
    let sqy = sparse::dot(q, y);
    let det = spp * sqq - spq * spq;
    if det > 1e-14 * spp * sqq {
        let a = (spy * sqq - sqy * spq) / det;
        let b = (sqy * spp - spy * spq) / det;
        if a >= 0.0 && b >= 0.0 {
            return (a, b);
        }
    }
    let ca = if spp > 0.0 { (spy / spp).max(0.0) } else { 0.0 };
    let cb = if sqq > 0.0 { (sqy / sqq).max(0.0) } else { 0.0 };
    let res = |a: f64, b: f64| -> f64 { (0..y.len()).map(|i| (a * p[i] + b * q[i] - y[i]).powi(2)).sum() };
    if res(ca, 0.0) <= res(0.0, cb) {
        (ca, 0.0)
    } else {
        (0.0, cb)
    }
}

/// Smooth-to-rough random vectors: every block gets a product of cosines at a
/// random frequency (scaled per block to unit Gram norm) plus a little noise.
pub fn multiscale_samples(op: &OperatorMatrix, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let g = op.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = interior_nodes(&g);
    let kmax = (g.nx.min(g.ny) / 2).max(1) as f64;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let freq = kmax.powf(s as f64 / (count.max(2) - 1) as f64);
        let mut x = vec![0.0; op.dim()];
        for b in &op.blocks {
            let (px, py): (f64, f64) = (rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3);
            let amp = rng.random::<f64>() - 0.5;
            let f = |xx: f64, yy: f64| {
                amp * (freq * std::f64::consts::PI * xx / g.l + px).cos() * (freq * std::f64::consts::PI * yy / g.h + py).cos()
            };
            match b.kind {
                BlockKind::Density | BlockKind::Temperature => {
                    for k in 0..b.len {
                        let (i, j) = g.ij(k);
                        x[b.offset + k] = f(g.x(i), g.y(j)) + 0.01 * (rng.random::<f64>() - 0.5);
                    }
                }
                BlockKind::Velocity => {
                    for (r, &k) in interior.iter().enumerate() {
                        let (i, j) = g.ij(k);
                        x[b.offset + r] = f(g.x(i), g.y(j)) + 0.01 * (rng.random::<f64>() - 0.5);
                    }
                }
                BlockKind::Displacement | BlockKind::BeamVelocity => {
                    for r in 0..b.len {
                        let xx = g.x(r + 1);
                        let bump = (std::f64::consts::PI * xx / g.l).sin().powi(2);
                        x[b.offset + r] = bump * f(xx, 0.0);
                    }
                }
            }
        }
        out.push(x);
    }
    out
}

/// Fits `|B x| <= a |A0 x| + b |x|` over multiscale samples and checks the
/// scalar smallness condition against the sector bound of `A0`.
pub fn perturbation_check(a0: &OperatorMatrix, b: &OperatorMatrix, m_hat: f64, samples: usize, seed: u64) -> Result<PerturbationReport> {
    if a0.dim() != b.dim() || a0.blocks != b.blocks {
        return Err(Error::Numerical("perturbation check needs matching block layouts".into()));
    }
    let gram = GramNorm::new(a0, 0)?;
    let xs = multiscale_samples(a0, samples, seed);
    let mut p = Vec::new();
    let mut q = Vec::new();
    let mut y = Vec::new();
    for x in &xs {
        p.push(gram.norm_real(&a0.apply(x)));
        q.push(gram.norm_real(x));
        y.push(gram.norm_real(&b.apply(x)));
    }
    let (a, bb) = nnls2(&p, &q, &y);
    Ok(PerturbationReport { a, b: bb, m_hat, condition: a * (1.0 + m_hat) < 1.0, samples })
}

/// Energy form weights: `R0 theta_bar / rho_bar` on density, `rho_bar` on
/// velocity, the plate energy on `(eta1, eta2)`; temperature carries no weight.
pub fn energy_inner(op: &OperatorMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let g = &op.grid;
    let p = &op.params;
    let w = g.node_weights();
    let wi: Vec<f64> = interior_nodes(g).iter().map(|&k| w[k]).collect();
    let mut s = 0.0;
    for (k, r) in op.block_range("rho")?.enumerate() {
        s += p.r0 * p.theta_bar / p.rho_bar * w[k] * x[r] * y[r];
    }
    for name in ["v1", "v2"] {
        for (k, r) in op.block_range(name)?.enumerate() {
            s += p.rho_bar * wi[k] * x[r] * y[r];
        }
    }
    let e1 = op.block_range("eta1")?;
    let k4 = clamped_biharmonic_matrix(g);
    let xe: Vec<f64> = x[e1.clone()].to_vec();
    let ky = sparse::dense_matvec(&k4, &y[e1.clone()]);
    s += g.hx * sparse::dot(&xe, &ky);
    for r in op.block_range("eta2")? {
        s += g.hx * x[r] * y[r];
    }
    Ok(s)
}
