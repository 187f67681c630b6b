//! Run configuration: a flat TOML document, command-line overrides and
//! exhaustive validation.

use serde::{Deserialize, Serialize};

use crate::cli_io::scenario::Scenario;
use crate::error::{Error, Result};
use crate::fixed_point::IterationConfig;
use crate::grid::Grid2D;
use crate::linear::PhysParams;
use crate::sources::F3ShearFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Local,
    Global,
    Spectrum,
    Sector,
    Convergence,
}

impl RunMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "local" => Some(RunMode::Local),
            "global" => Some(RunMode::Global),
            "spectrum" => Some(RunMode::Spectrum),
            "sector" => Some(RunMode::Sector),
            "convergence" => Some(RunMode::Convergence),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Local => "local",
            RunMode::Global => "global",
            RunMode::Spectrum => "spectrum",
            RunMode::Sector => "sector",
            RunMode::Convergence => "convergence",
        }
    }
}

/// The document as written; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ny: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
    #[serde(rename = "R0", skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_k: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f3_shear: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_only: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sector_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolutions: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

/// Validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub grid: Grid2D,
    pub params: PhysParams,
    pub scenario: Scenario,
    pub amplitude: f64,
    pub iteration: IterationConfig,
    pub sector_angle: f64,
    pub radii: Vec<f64>,
    /// Fixed sector shift; `None` searches from 0.
    pub gamma: Option<f64>,
    pub resolutions: Vec<usize>,
    pub snapshot_every: usize,
    pub output_dir: String,
    pub seed: u64,
}

pub const DEFAULT_SECTOR_ANGLE: f64 = 0.6 * std::f64::consts::PI;

fn nonneg_int(name: &str, v: Option<i64>, default: usize, errs: &mut Vec<String>) -> usize {
    match v {
        None => default,
        Some(x) if x >= 0 => x as usize,
        Some(x) => {
            errs.push(format!("{name} must be a non-negative integer, got {x}"));
            default
        }
    }
}

impl RawConfig {
    /// Applies defaults and collects every violated constraint.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut errs = Vec::new();
        let mode = match self.mode.as_deref() {
            None => {
                errs.push("missing field: mode (one of local, global, spectrum, sector, convergence)".into());
                RunMode::Local
            }
            Some(m) => RunMode::parse(m).unwrap_or_else(|| {
                errs.push(format!("unknown mode '{m}' (expected local, global, spectrum, sector or convergence)"));
                RunMode::Local
            }),
        };
        let nx = nonneg_int("nx", self.nx, 16, &mut errs);
        let ny = nonneg_int("ny", self.ny, nx, &mut errs);
        let l = self.l.unwrap_or(1.0);
        let h = self.h.unwrap_or(1.0);
        let grid = match Grid2D::new(l, h, nx, ny) {
            Ok(g) => Some(g),
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        let mut params = PhysParams {
            mu: self.mu.unwrap_or(1.0),
            alpha: self.alpha.unwrap_or(0.0),
            kappa: self.kappa.unwrap_or(1.0),
            cv: self.cv.unwrap_or(1.0),
            r0: self.r0.unwrap_or(1.0),
            pi0: 0.0,
            rho_bar: self.rho_bar.unwrap_or(1.0),
            theta_bar: self.theta_bar.unwrap_or(1.0),
        };
        params.pi0 = self.pi0.unwrap_or_else(|| params.equilibrium_pi0());
        let global_like = matches!(mode, RunMode::Global | RunMode::Spectrum | RunMode::Sector);
        errs.extend(params.violations(global_like));

        let scenario = match self.scenario.as_deref() {
            None => Scenario::Steady,
            Some(s) => Scenario::parse(s).unwrap_or_else(|| {
                errs.push(format!("unknown scenario '{s}' (expected {})", Scenario::names().join(", ")));
                Scenario::Steady
            }),
        };
        let amplitude = self.amplitude.unwrap_or(1e-2);
        if !amplitude.is_finite() {
            errs.push(format!("amplitude must be finite, got {amplitude}"));
        }

        let (t_default, dt_default) = match mode {
            RunMode::Global => (20.0, 0.02),
            _ => (0.1, 1e-3),
        };
        if mode == RunMode::Global && self.beta.is_none() {
            errs.push("missing field: beta (required in global mode)".into());
        }
        let shear = match self.f3_shear.as_deref() {
            None => F3ShearFactor::default(),
            Some(s) => F3ShearFactor::parse(s).unwrap_or_else(|| {
                errs.push(format!("unknown f3_shear '{s}' (expected as-printed or consistent)"));
                F3ShearFactor::default()
            }),
        };
        let rho_k = nonneg_int("rho_k", self.rho_k, 1, &mut errs);
        let iteration = IterationConfig {
            t_end: self.t.unwrap_or(t_default),
            dt: self.dt.unwrap_or(dt_default),
            radius: self.r,
            max_iters: nonneg_int("max_iters", self.max_iters, 30, &mut errs),
            tol: self.tol.unwrap_or(1e-8),
            beta: self.beta.unwrap_or(0.0),
            p: self.p.unwrap_or(4.0),
            q: self.q.unwrap_or(4.0),
            rho_k: rho_k.min(255) as u8,
            gamma1: self.gamma1.unwrap_or(1.0),
            shear,
            linear_only: self.linear_only.unwrap_or(false),
            flow_steps: 32,
        };
        if matches!(mode, RunMode::Local | RunMode::Global) {
            errs.extend(iteration.violations());
            if mode == RunMode::Global && !(iteration.beta > 0.0) && self.beta.is_some() {
                errs.push(format!("beta must be positive in global mode, got {}", iteration.beta));
            }
        } else if rho_k > 1 {
            errs.push(format!("rho_k must be 0 or 1, got {rho_k}"));
        }

        let sector_angle = self.sector_angle.unwrap_or(DEFAULT_SECTOR_ANGLE);
        if !(sector_angle > std::f64::consts::FRAC_PI_2 && sector_angle < std::f64::consts::PI) {
            errs.push(format!("sector_angle = {sector_angle} must lie in (pi/2, pi)"));
        }
        let radii = self.radii.clone().unwrap_or_else(|| vec![1e-2, 1.0, 1e2, 1e4]);
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            errs.push("radii must be a non-empty list of positive numbers".into());
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                errs.push(format!("gamma must be >= 0, got {g}"));
            }
        }
        let resolutions: Vec<usize> = match &self.resolutions {
            None => vec![16, 32, 64],
            Some(v) => {
                if v.len() < 2 || v.iter().any(|&n| n < 4) {
                    errs.push("resolutions must list at least two grid sizes >= 4".into());
                }
                v.iter().map(|&n| n.max(0) as usize).collect()
            }
        };
        let snapshot_every = nonneg_int("snapshot_every", self.snapshot_every, 0, &mut errs);
        let seed = match self.seed {
            None => 0,
            Some(s) if s >= 0 => s as u64,
            Some(s) => {
                errs.push(format!("seed must be non-negative, got {s}"));
                0
            }
        };
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        Ok(RunConfig {
            mode,
            grid: grid.expect("grid validated above"),
            params,
            scenario,
            amplitude,
            iteration,
            sector_angle,
            radii,
            gamma: self.gamma,
            resolutions,
            snapshot_every,
            output_dir: self.output_dir.clone().unwrap_or_else(|| "nsf-plate-out".into()),
            seed,
        })
    }
}

impl RunConfig {
    /// Fully explicit document; `parse_config(&cfg.to_toml())` gives `cfg` back.
    pub fn to_raw(&self) -> RawConfig {
        let it = &self.iteration;
        RawConfig {
            mode: Some(self.mode.name().into()),
            l: Some(self.grid.l),
            h: Some(self.grid.h),
            nx: Some(self.grid.nx as i64),
            ny: Some(self.grid.ny as i64),
            mu: Some(self.params.mu),
            alpha: Some(self.params.alpha),
            kappa: Some(self.params.kappa),
            cv: Some(self.params.cv),
            r0: Some(self.params.r0),
            pi0: Some(self.params.pi0),
            rho_bar: Some(self.params.rho_bar),
            theta_bar: Some(self.params.theta_bar),
            scenario: Some(self.scenario.name().into()),
            amplitude: Some(self.amplitude),
            t: Some(it.t_end),
            dt: Some(it.dt),
            r: it.radius,
            tol: Some(it.tol),
            max_iters: Some(it.max_iters as i64),
            beta: Some(it.beta),
            p: Some(it.p),
            q: Some(it.q),
            rho_k: Some(it.rho_k as i64),
            gamma1: Some(it.gamma1),
            f3_shear: Some(it.shear.name().into()),
            linear_only: Some(it.linear_only),
            sector_angle: Some(self.sector_angle),
            radii: Some(self.radii.clone()),
            gamma: self.gamma,
            resolutions: Some(self.resolutions.iter().map(|&n| n as i64).collect()),
            snapshot_every: Some(self.snapshot_every as i64),
            output_dir: Some(self.output_dir.clone()),
            seed: Some(self.seed as i64),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("flat config serializes")
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(format!("parse error: {e}")))
}

/// Parses `key=value`; values that are not TOML literals are taken as strings.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
    let key = k.trim().to_string();
    if key.is_empty() {
        return Err(Error::Config(format!("override '{s}' has an empty key")));
    }
    let v = v.trim();
    let value = match format!("x = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((key, value))
}

/// Parses a document, applies overrides in order, validates.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table = parse_table(text)?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        table.insert(k, v);
    }
    let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("parse error: {e}")))?;
    raw.resolve()
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}
