//! Dispatch of a validated configuration to the drivers, artifact writing and
//! report assembly.

use std::path::Path;
use std::time::Instant;

use crate::chgvar::Metrics;
use crate::cli_io::config::{RunConfig, RunMode};
use crate::cli_io::output::{eigen_csv, num, snapshot_text, Csv, OutputDir, RunReport};
use crate::cli_io::scenario::{scenario_state, with_background};
use crate::error::{Error, Result};
use crate::fixed_point::{
    conserved_quantities, decay_observable, fit_exponential, run_global, run_local, IterationReport, IterationStatus,
    Trajectory,
};
use crate::fs_operator::{
    assemble_split, find_sector_gamma, max_real, nullspace_dimension, perturbation_check, plate_operator, sector_scan,
    spectrum, temperature_operator, velocity_operator, Domain, OperatorMatrix, SectorScanResult,
};
use crate::grid::Grid2D;
use crate::linear::{manufactured_convergence, step_density, StepperId};

/// Largest stacked dimension for which the full-space SVD is attempted.
const KERNEL_SVD_MAX_DIM: usize = 1500;

/// Runs a configuration, writes every artifact plus `report.txt` (also on
/// failure) and returns the report with its exit code.
pub fn run_scenario(cfg: &RunConfig, out: &Path, command: &str) -> RunReport {
    let start = Instant::now();
    let mut rep = RunReport::new(command, cfg.to_toml());
    let result = OutputDir::create(out).and_then(|dir| execute(cfg, &dir, &mut rep).map(|_| dir));
    match result {
        Ok(_) => rep.exit_code = if rep.passed() { 0 } else { 3 },
        Err(e) => {
            rep.exit_code = e.exit_code();
            rep.error = Some(e.to_string());
        }
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    if let Ok(dir) = OutputDir::create(out) {
        rep.files.push("report.txt".into());
        if let Err(e) = dir.write("report.txt", &rep.render()) {
            rep.error.get_or_insert(e.to_string());
        }
    }
    rep
}

fn execute(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport) -> Result<()> {
    match cfg.mode {
        RunMode::Local | RunMode::Global => run_evolution(cfg, dir, rep),
        RunMode::Spectrum => run_spectrum(cfg, dir, rep),
        RunMode::Sector => run_sector(cfg, dir, rep),
        RunMode::Convergence => run_convergence(cfg, dir, rep),
    }
}

fn iteration_csv(ir: &IterationReport) -> Csv {
    let mut c = Csv::new(&["iteration", "bundle_norm", "diff_norm", "ratio"]);
    for k in 0..ir.bundle_norms.len() {
        let ratio = if k == 0 { String::new() } else { ir.ratios.get(k - 1).map(|r| num(*r)).unwrap_or_default() };
        c.push(vec![(k + 1).to_string(), num(ir.bundle_norms[k]), num(ir.diff_norms[k]), ratio]);
    }
    c
}

fn write_trajectory(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport, traj: &Trajectory) -> Result<()> {
    let g = &cfg.grid;
    let cons = conserved_quantities(g, &cfg.params, traj);
    let mut c = Csv::new(&["time", "state_norm", "mass", "energy"]);
    for (n, s) in traj.states.iter().enumerate() {
        c.push(vec![num(s.t), num(decay_observable(g, s)), num(cons.mass[n]), num(cons.energy[n])]);
    }
    rep.files.push(dir.write("diagnostics.csv", &c.render())?);
    let steps = traj.states.len().saturating_sub(1);
    let every = if cfg.snapshot_every > 0 { cfg.snapshot_every } else { (steps / 10).max(1) };
    for (n, s) in traj.states.iter().enumerate() {
        if n % every == 0 || n == steps {
            rep.files.push(dir.write(&format!("snapshot_{n:06}.txt"), &snapshot_text(g, s))?);
        }
    }
    Ok(())
}

fn run_evolution(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport) -> Result<()> {
    let g = &cfg.grid;
    let pert = scenario_state(g, cfg.scenario, cfg.amplitude);
    let (traj, ir) = if cfg.mode == RunMode::Local {
        run_local(g, &cfg.params, &with_background(&pert, &cfg.params), &cfg.iteration)?
    } else {
        run_global(g, &cfg.params, &pert, &cfg.iteration)?
    };
    rep.files.push(dir.write("iterations.csv", &iteration_csv(&ir).render())?);
    write_trajectory(cfg, dir, rep, &traj)?;
    rep.info("data norm", num(ir.data_norm));
    rep.info("ball radius R", num(ir.radius));
    rep.info("iterations", ir.iterations().to_string());
    rep.check("iteration status", ir.status.name().into(), "converged", ir.converged());
    let max_ratio = ir.ratios.iter().cloned().fold(0.0, f64::max);
    rep.check("max contraction ratio", num(max_ratio), "< 1", max_ratio < 1.0);
    if let Some(m) = &ir.message {
        rep.info("iteration message", m.clone());
    }
    if ir.status == IterationStatus::DiffeoFailure {
        return Err(Error::Geometry(ir.message.clone().unwrap_or_else(|| "map lost invertibility".into())));
    }
    let cons = conserved_quantities(g, &cfg.params, &traj);
    match cfg.mode {
        RunMode::Local => {
            rep.check("mass drift per unit time", num(cons.drift_rate), "<= 1e-5", cons.drift_rate <= 1e-5);
        }
        _ => {
            if cfg.iteration.linear_only {
                rep.check("conserved mass drift", num(cons.max_drift), "<= 1e-10", cons.max_drift <= 1e-10);
            } else {
                rep.info("conserved mass drift", num(cons.max_drift));
            }
            rep.check("weighted norm decay", (!ir.decay_violation).to_string(), "no growth", !ir.decay_violation);
            let obs: Vec<f64> = traj.states.iter().map(|s| decay_observable(g, s)).collect();
            let peak = obs.iter().cloned().fold(0.0, f64::max);
            if peak == 0.0 {
                let m = traj.states.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
                rep.check("rest state preserved", num(m), "<= 1e-12", m <= 1e-12);
            } else {
                let fit = fit_exponential(&traj.times(), &obs)?;
                rep.info("fitted decay rate", num(fit.rate));
                rep.info("fit R^2", num(fit.r2));
            }
        }
    }
    Ok(())
}

fn run_spectrum(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport) -> Result<()> {
    let split = assemble_split(&cfg.grid, &cfg.params)?;
    let afs = split.full;
    let ev = spectrum(&afs, Domain::Xm)?;
    rep.files.push(dir.write("eigenvalues.csv", &eigen_csv(&ev).render())?);
    let m = max_real(&ev);
    rep.info("operator dimension", afs.dim().to_string());
    rep.check("max Re lambda on X_m = -beta0_disc", num(m), "< 0", m < 0.0);
    rep.info("beta0_disc", num(-m));
    if afs.dim() <= KERNEL_SVD_MAX_DIM {
        let k = nullspace_dimension(&afs, 1e-10)?;
        rep.check("kernel dimension on full space", k.to_string(), "= 2", k == 2);
    } else {
        rep.info("kernel dimension on full space", format!("skipped (dimension > {KERNEL_SVD_MAX_DIM})"));
    }
    Ok(())
}

fn scan(cfg: &RunConfig, op: &OperatorMatrix) -> Result<SectorScanResult> {
    let k = cfg.iteration.rho_k;
    match cfg.gamma {
        Some(gamma) => sector_scan(op, cfg.sector_angle, &cfg.radii, gamma, k),
        None => find_sector_gamma(op, cfg.sector_angle, &cfg.radii, k, 1e6),
    }
}

fn run_sector(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport) -> Result<()> {
    let split = assemble_split(&cfg.grid, &cfg.params)?;
    let ops = vec![
        split.full.clone(),
        plate_operator(&split.full)?,
        velocity_operator(&split)?,
        temperature_operator(&split.full)?,
    ];
    let mut csv = Csv::new(&["operator", "gamma", "lambda_re", "lambda_im", "mu_re", "mu_im", "norm", "singular"]);
    rep.info("sector angle beta", num(cfg.sector_angle));
    rep.info("norm", format!("quadrature-weighted L2 proxy, density order k = {}", cfg.iteration.rho_k));
    for op in &ops {
        let res = scan(cfg, op)?;
        for s in &res.samples {
            csv.push(vec![
                op.name.clone(),
                num(res.gamma),
                num(s.lambda.re),
                num(s.lambda.im),
                num(s.mu.re),
                num(s.mu.im),
                num(s.norm),
                s.singular.to_string(),
            ]);
        }
        rep.info(&format!("{} shift gamma", op.name), num(res.gamma));
        let sing = res.samples.iter().filter(|s| s.singular).count();
        rep.check(&format!("{} singular samples", op.name), sing.to_string(), "= 0", sing == 0);
        rep.check(&format!("{} M_hat", op.name), num(res.m_hat), "finite", res.m_hat.is_finite());
    }
    rep.files.push(dir.write("sector.csv", &csv.render())?);
    let a0 = scan(cfg, &split.a0)?;
    let pc = perturbation_check(&split.a0, &split.b, a0.m_hat, 24, cfg.seed)?;
    rep.info("A0_FS M_hat", num(a0.m_hat));
    rep.info("relative bound a", num(pc.a));
    rep.info("absolute bound b", num(pc.b));
    rep.check("smallness a (1 + M_hat) < 1", num(pc.a * (1.0 + pc.m_hat)), "< 1", pc.condition);
    Ok(())
}

/// Trapezoid density step against the closed form for a velocity linear in
/// space and time; returns the largest nodal error.
pub fn density_closed_form_error(grid: &Grid2D, dt: f64) -> f64 {
    let n = grid.n_nodes();
    let m = Metrics::identity(n);
    let rho0 = grid.sample(|x, y| 1.0 + 0.1 * x - 0.05 * y);
    let shape = grid.sample_vec(|x, y| [0.3 * x - 0.2 * y, 0.1 * x + 0.4 * y]);
    let div = 0.3 + 0.4;
    let f1 = vec![0.02; n];
    let v_at = |t: f64| [shape[0].iter().map(|a| a * t).collect(), shape[1].iter().map(|a| a * t).collect()];
    let mut rho = rho0.clone();
    let mut worst: f64 = 0.0;
    for s in 0..10 {
        let (t0, t1) = (s as f64 * dt, (s + 1) as f64 * dt);
        rho = step_density(grid, &rho, &v_at(t0), &v_at(t1), &f1, &f1, &m, &rho0, dt);
        for k in 0..n {
            let exact = rho0[k] - rho0[k] * div * t1 * t1 / 2.0 + 0.02 * t1;
            worst = worst.max((rho[k] - exact).abs());
        }
    }
    worst
}

fn run_convergence(cfg: &RunConfig, dir: &OutputDir, rep: &mut RunReport) -> Result<()> {
    let mut csv = Csv::new(&["stepper", "resolution", "error", "order"]);
    for (id, expect) in [(StepperId::Heat, 2.0), (StepperId::Velocity, 2.0), (StepperId::Plate, 1.0)] {
        let res: Vec<usize> = if id == StepperId::Plate {
            cfg.resolutions.iter().map(|&n| n * 2).collect()
        } else {
            cfg.resolutions.clone()
        };
        let st = manufactured_convergence(id, &res)?;
        for k in 0..st.resolutions.len() {
            let ord = if k == 0 { String::new() } else { num(st.orders[k - 1]) };
            csv.push(vec![st.name.clone(), st.resolutions[k].to_string(), num(st.errors[k]), ord]);
        }
        let o = st.last_order();
        let kind = if id == StepperId::Plate { "temporal" } else { "spatial" };
        rep.check(
            &format!("{} {kind} order", st.name),
            num(o),
            &format!("{expect:.1} +- 0.2"),
            (o - expect).abs() <= 0.2,
        );
    }
    rep.files.push(dir.write("convergence.csv", &csv.render())?);
    let e = density_closed_form_error(&cfg.grid, 1e-2);
    rep.check("density step closed-form error", num(e), "<= 1e-8", e <= 1e-8);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_step_is_exact_for_linear_rates() {
        let g = Grid2D::new(1.0, 1.0, 8, 8).unwrap();
        assert!(density_closed_form_error(&g, 0.05) < 1e-13);
    }
}
