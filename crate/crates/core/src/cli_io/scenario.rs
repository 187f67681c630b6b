//! Initial-data library. Fields are perturbations of the rest state; local
//! runs add `(rho_bar, theta_bar)` back.

use std::f64::consts::PI;

use crate::grid::Grid2D;
use crate::linear::PhysParams;
use crate::sources::FullState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Steady,
    BeamPluck,
    ThermalSpot,
    ShearStart,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Steady, Scenario::BeamPluck, Scenario::ThermalSpot, Scenario::ShearStart];

    pub fn parse(s: &str) -> Option<Self> {
        Scenario::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Steady => "steady",
            Scenario::BeamPluck => "beam-pluck",
            Scenario::ThermalSpot => "thermal-spot",
            Scenario::ShearStart => "shear-start",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Scenario::ALL.iter().map(|s| s.name()).collect()
    }
}

/// `a 16 x^2 (L - x)^2 / L^4`: clamped, peak `a` at mid-span.
pub fn clamped_bump(grid: &Grid2D, a: f64) -> Vec<f64> {
    let l = grid.l;
    grid.sample_beam(|x| a * 16.0 * x * x * (l - x) * (l - x) / l.powi(4))
}

/// Periodized Gaussian centred in the cavity: `a exp(-(2 + cos 2 pi s + cos 2 pi t) / w)`
/// with `s, t` the scaled coordinates. Its normal derivative vanishes on every wall.
pub fn thermal_spot(grid: &Grid2D, a: f64) -> Vec<f64> {
    let (l, h) = (grid.l, grid.h);
    let w = 0.5;
    grid.sample(|x, y| {
        let s = x / l;
        let t = (y + h) / h;
        a * (-(2.0 + (2.0 * PI * s).cos() + (2.0 * PI * t).cos()) / w).exp()
    })
}

/// Divergence-free vortex from the stream function `a sin^2(pi s) sin^2(pi t)`;
/// it vanishes on the walls, matching a beam at rest.
pub fn shear_vortex(grid: &Grid2D, a: f64) -> [Vec<f64>; 2] {
    let (l, h) = (grid.l, grid.h);
    grid.sample_vec(|x, y| {
        let s = x / l;
        let t = (y + h) / h;
        let ps = (PI * s).sin().powi(2);
        let pt = (PI * t).sin().powi(2);
        let dps = 2.0 * PI * (PI * s).sin() * (PI * s).cos() / l;
        let dpt = 2.0 * PI * (PI * t).sin() * (PI * t).cos() / h;
        [a * ps * dpt, -a * dps * pt]
    })
}

/// Perturbation fields of a scenario at amplitude `a`.
pub fn scenario_state(grid: &Grid2D, id: Scenario, a: f64) -> FullState {
    let mut s = FullState::zeros(grid);
    match id {
        Scenario::Steady => {}
        Scenario::BeamPluck => s.eta1 = clamped_bump(grid, a),
        Scenario::ThermalSpot => s.theta = thermal_spot(grid, a),
        Scenario::ShearStart => s.v = shear_vortex(grid, a),
    }
    s
}

/// Absolute fields for the local driver.
pub fn with_background(s: &FullState, params: &PhysParams) -> FullState {
    let mut out = s.clone();
    out.rho.iter_mut().for_each(|r| *r += params.rho_bar);
    out.theta.iter_mut().for_each(|t| *t += params.theta_bar);
    out
}
