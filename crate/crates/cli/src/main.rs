//! Command-line driver: single solves, convergence studies, source-term
//! audits, and monitor reruns for the nonlinear poroelasticity solver.

mod config;
mod report;

use config::RunConfig;
use porofem::error::{Error, Result};
use porofem::mesh::{build_uniform_mesh, Rectangle};
use porofem::scenario::residual_audit;
use porofem::stepper::{SchemeConfig, StepReport, Stepper, SystemState};
use porofem::verify::{
    convergence_study_jobs, monitor_log, EnergyConstants, ErrorComputer,
};
use porofem::vtk;
use std::process::ExitCode;

const USAGE: &str = "usage: porofem <run|study|audit|energy> [--config FILE] [flags]

subcommands:
  run     solve one configuration; writes solution_t<T>.vtk and monitors.csv
  study   convergence study over --mesh-list; writes rates.csv
  audit   check the manufactured source terms against the strong form
  energy  monitor-only rerun: conservation and energy diagnostics

common flags (override the config file):
  --config FILE       INI-style config (key = value under [run]/[params]/[newton]/[linear])
  --scenario NAME     test1 | test2 | pure-flux-source | zero-data   (default test1)
  --params NAME       test1-soft | test1-stiff | test2-soft | test2-stiff (default test1-soft)
  --n N               mesh subdivisions per side (default 6)
  --mesh-list A,B,..  mesh levels for `study`
  --theta 0|1         decoupled or monolithic coupling (default 1)
  --dt VALUE|h2|h2/2  time step or policy (default: h2 for run, h2/2 for monolithic study)
  --T VALUE           final time (default 1)
  --out DIR           output directory (default $PF_OUTPUT_DIR or .)
  --jobs N            parallel study levels (default 1)
  --vtk/--no-vtk --monitors/--no-monitors --pretty
  --lambda --mu --alpha --c0 --permeability --mu-f --rho-f V   parameter overrides
  --newton-tol --newton-max-iter --linear-tol V
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first().map(String::as_str) else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    if command == "--help" || command == "-h" || command == "help" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }

    // pull out --config before flag parsing
    let mut flags: Vec<String> = Vec::new();
    let mut config_path: Option<String> = None;
    let mut it = args[1..].iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            match it.next() {
                Some(p) => config_path = Some(p.clone()),
                None => {
                    eprintln!("error: --config needs a path");
                    return ExitCode::from(2);
                }
            }
        } else {
            flags.push(a.clone());
        }
    }

    let config = match config::resolve(config_path.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let outcome = match command {
        "run" => cmd_run(&config),
        "study" => cmd_study(&config),
        "audit" => cmd_audit(&config),
        "energy" => cmd_energy(&config),
        other => {
            eprintln!("error: unknown subcommand '{other}'\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Io { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn scheme_config(config: &RunConfig, for_study: bool, n: usize) -> SchemeConfig {
    let dt = config.dt.policy(config.theta, for_study).dt_for(n);
    SchemeConfig {
        theta: config.theta,
        dt,
        final_time: config.final_time,
        newton_tol: config.newton_tol,
        newton_max_iter: config.newton_max_iter,
        linear_tol: config.linear_tol,
        dt_h2_constant: 1.0,
    }
}

fn fmt_time(t: f64) -> String {
    if t == t.trunc() {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Solve once and emit artifacts.
fn cmd_run(config: &RunConfig) -> Result<ExitCode> {
    if config.mesh_list.is_some() {
        return Err(Error::InvalidArgument(
            "mesh_list is for the study subcommand; single runs take --n".into(),
        ));
    }
    let (_, _, artifacts) = solve_once(config)?;
    emit_run_artifacts(config, &artifacts)?;
    Ok(ExitCode::SUCCESS)
}

struct RunArtifacts {
    final_state: SystemState,
    monitors: Option<porofem::verify::MonitorLog>,
    mesh: porofem::mesh::Mesh,
}

fn solve_once(config: &RunConfig) -> Result<(Stepper, Vec<StepReport>, RunArtifacts)> {
    let scenario = config.scenario()?;
    let mesh = build_uniform_mesh(config.n, Rectangle::unit_square())?;
    let scheme = scheme_config(config, false, config.n);
    let mut stepper = Stepper::new(&mesh, scenario.clone(), scheme)?;
    for w in &stepper.warnings {
        eprintln!("warning: {w}");
    }

    let collect = config.emit_monitors;
    let mut states: Vec<SystemState> = Vec::new();
    let mut reports: Vec<StepReport> = Vec::new();
    let final_state = if collect {
        let (s, r) = stepper.run_trajectory()?;
        states = s;
        reports = r;
        states.last().unwrap().clone()
    } else {
        stepper.run(|_, r| reports.push(r.clone()))?
    };

    let monitors = if collect {
        Some(monitor_log(&stepper, &states, &reports, EnergyConstants::default())?)
    } else {
        None
    };

    // error summary when the scenario knows its exact solution
    if scenario.exact_u.is_some() {
        let computer = ErrorComputer::new(&mesh)?;
        let e = computer.norms(&scenario, &final_state)?;
        println!(
            "t = {}: L2(u) = {:.6e}  H1(u) = {:.6e}  L2(p) = {:.6e}  H1(p) = {:.6e}",
            fmt_time(final_state.time),
            e.l2_u,
            e.h1_u,
            e.l2_p,
            e.h1_p
        );
    }
    let max_newton = reports.iter().map(|r| r.newton_iterations).max().unwrap_or(0);
    println!(
        "completed {} steps (dt = {:.6e}, max Newton iterations {})",
        reports.len(),
        stepper.config.dt,
        max_newton
    );
    Ok((stepper, reports, RunArtifacts { final_state, monitors, mesh }))
}

fn emit_run_artifacts(config: &RunConfig, art: &RunArtifacts) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.display().to_string(),
        message: e.to_string(),
    })?;
    if config.emit_vtk {
        let name = format!("solution_t{}.vtk", fmt_time(art.final_state.time));
        let path = config.output_dir.join(name);
        vtk::write_solution(&path, &art.mesh, &art.final_state)?;
        println!("wrote {}", path.display());
    }
    if let Some(log) = &art.monitors {
        let path = config.output_dir.join("monitors.csv");
        report::write_atomically(&path, &report::monitors_csv(log))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Convergence study over the mesh list; writes rates.csv.
fn cmd_study(config: &RunConfig) -> Result<ExitCode> {
    let levels = config
        .mesh_list
        .clone()
        .ok_or_else(|| Error::InvalidArgument("study needs --mesh-list".into()))?;
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("study needs at least 2 mesh levels".into()));
    }
    let scenario = config.scenario()?;
    let policy = config.dt.policy(config.theta, true);
    let result = convergence_study_jobs(
        &scenario,
        Rectangle::unit_square(),
        &levels,
        config.theta,
        policy,
        config.jobs,
    )?;
    let table = result.table;
    let aborted = result.aborted;

    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let path = config.output_dir.join("rates.csv");
    report::write_atomically(&path, &report::rates_csv(&table))?;
    if config.pretty {
        print!("{}", report::rates_pretty(&table));
    }
    println!("wrote {}", path.display());
    if let Some(msg) = aborted {
        eprintln!("study aborted with partial results: {msg}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

/// Numerical audit of the printed source terms against the strong form.
fn cmd_audit(config: &RunConfig) -> Result<ExitCode> {
    let scenario = config.scenario()?;
    let mesh = build_uniform_mesh(config.n, Rectangle::unit_square())?;
    let report = residual_audit(&scenario, &mesh, 20, 2024)?;
    println!("source-term audit for '{}':", scenario.name);
    println!("  momentum  max |f - (-div sigma~ + alpha grad p)| = {:.3e}", report.momentum_max);
    println!("  flow      max |phi - ((c0 p + alpha div u)_t + div v_f)| = {:.3e}", report.flow_max);
    println!("  traction  max |f1 - (sigma~ n - alpha p n)| = {:.3e}", report.traction_max);
    Ok(ExitCode::SUCCESS)
}

/// Monitor-only rerun: solve and report the conservation/energy diagnostics.
fn cmd_energy(config: &RunConfig) -> Result<ExitCode> {
    let mut config = config.clone();
    config.emit_monitors = true;
    config.emit_vtk = false;
    let (_, _, art) = solve_once(&config)?;
    let log = art.monitors.as_ref().unwrap();
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let path = config.output_dir.join("monitors.csv");
    report::write_atomically(&path, &report::monitors_csv(log))?;

    let mut worst_energy = 0.0f64;
    let mut worst_cons = 0.0f64;
    for row in &log.rows {
        worst_energy = worst_energy.max(row.energy_residual.abs() / row.energy_scale.max(1e-300));
        worst_cons = worst_cons.max(row.conservation_eta.abs());
    }
    println!("max relative energy-identity residual: {worst_energy:.3e}");
    println!("max fluid-content conservation residual: {worst_cons:.3e}");
    if let Some(last) = log.rows.last() {
        println!("J at final step: {:.6e}   S sum: {:.6e}", last.j_value, last.s_value);
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
