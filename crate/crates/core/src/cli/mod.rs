//! Command implementations behind the `spillfree` binary. Each command
//! returns its process exit code.

pub mod config;
mod output;
pub mod sweep;

use std::path::Path;

use serde::Serialize;

use crate::controller::{plan_transfer, TransferPlan};
use crate::functionals::{DerivedConstants, Gains};
use crate::model::{Grid, PhysicalParams};
use crate::solver::{simulate, Flags, SolverConfig, Trajectory};
use crate::verify::{
    check_envelope, check_lyapunov, check_mass, check_spill_free, check_static_inequalities, check_trajectory,
    fitted_decay_rate, lyapunov_tolerance, recorded_dt_max, CheckReport, Location, ENVELOPE_TOLERANCE,
    LYAPUNOV_CONSTANT,
};

pub use config::{load_scenario, ConfigError, Scenario, ScenarioConfig};
pub use output::{read_records_csv, write_records_csv, write_snapshot_csv};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct EndpointSummary {
    pub t: f64,
    #[serde(rename = "V")]
    pub clf: f64,
    pub norm_x: f64,
    pub xi: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: Option<String>,
    pub mode: config::Mode,
    pub params: PhysicalParams,
    #[serde(rename = "N")]
    pub n: usize,
    pub solver: SolverConfig,
    pub gains: Gains,
    pub derived_constants: Option<DerivedConstants>,
    pub transfer_plan: Option<TransferPlan>,
    pub initial: EndpointSummary,
    #[serde(rename = "final")]
    pub final_: EndpointSummary,
    /// Left-wall position `a* + xi` at the end, for transfer runs.
    pub final_lab_position: Option<f64>,
    pub steps: usize,
    pub dt_max_used: f64,
    pub flags: Flags,
    pub failure: Option<String>,
    pub empirical_decay_rate: Option<f64>,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

/// `norm_X(T) <= epsilon` at the planned final time.
pub fn check_transfer_tolerance(traj: &Trajectory, plan: &TransferPlan) -> CheckReport {
    const NAME: &str = "transfer_final_tolerance";
    match traj.snapshots.iter().find(|s| s.t == plan.t_final) {
        None => CheckReport::new(NAME, f64::NEG_INFINITY, None, 0.0).with_detail("run ended before T"),
        Some(snap) => {
            let norm = crate::functionals::state_norm(&snap.state, &traj.params, &traj.grid);
            CheckReport::new(NAME, plan.epsilon - norm, Some(Location::at_time(plan.t_final)), 0.0)
                .with_detail(format!("norm_X(T) = {norm:e}, epsilon = {}", plan.epsilon))
        }
    }
}

/// Every check for a scenario run: trajectory battery, the transfer target
/// and the optional sampled battery.
pub fn scenario_checks(scenario: &Scenario, traj: &Trajectory) -> Vec<CheckReport> {
    let mut checks = check_trajectory(traj, scenario.constants.as_ref());
    if let Some(plan) = &scenario.plan {
        checks.push(check_transfer_tolerance(traj, plan));
    }
    if scenario.config.static_samples > 0 {
        checks.extend(check_static_inequalities(
            scenario.config.static_samples,
            &scenario.params,
            scenario.gains(),
            &scenario.grid,
            scenario.config.seed,
        ));
    }
    checks
}

fn endpoint(r: &crate::solver::Record) -> EndpointSummary {
    EndpointSummary {
        t: r.t,
        clf: r.clf,
        norm_x: r.norm_x,
        xi: r.xi,
        w: r.w,
    }
}

pub fn summarize(scenario: &Scenario, traj: &Trajectory, checks: Vec<CheckReport>) -> RunSummary {
    let first = traj.records.first().expect("trajectory has an initial record");
    let last = traj.records.last().expect("trajectory has an initial record");
    let passed = traj.failure.is_none() && !checks.iter().any(CheckReport::failed);
    RunSummary {
        schema_version: SCHEMA_VERSION,
        name: scenario.config.name.clone(),
        mode: scenario.config.mode,
        params: scenario.params,
        n: scenario.grid.n,
        solver: scenario.solver.clone(),
        gains: *scenario.gains(),
        derived_constants: scenario.constants,
        transfer_plan: scenario.plan,
        initial: endpoint(first),
        final_: endpoint(last),
        final_lab_position: scenario.config.transfer.as_ref().map(|t| t.a_star + last.xi),
        steps: traj.steps,
        dt_max_used: traj.dt_max_used,
        flags: traj.flags,
        failure: traj.failure.as_ref().map(ToString::to_string),
        empirical_decay_rate: fitted_decay_rate(&traj.records),
        checks,
        passed,
    }
}

/// Result of running one validated scenario in memory.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.trajectory.failure.is_some() {
            EXIT_SOLVER
        } else if self.summary.passed {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

pub fn execute(scenario: &Scenario) -> crate::Result<Outcome> {
    let trajectory = simulate(
        &scenario.initial,
        &scenario.params,
        scenario.feedback,
        &scenario.grid,
        &scenario.solver,
    )?;
    let checks = scenario_checks(scenario, &trajectory);
    let summary = summarize(scenario, &trajectory, checks);
    Ok(Outcome { trajectory, summary })
}

/// Writes the time series, snapshots and summary of an executed scenario.
pub fn write_artifacts(scenario: &Scenario, outcome: &Outcome) -> std::io::Result<()> {
    let Some(outputs) = &scenario.config.outputs else {
        return Ok(());
    };
    let csv_path = Path::new(&outputs.csv_path);
    write_records_csv(csv_path, &outcome.trajectory.records)?;
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    for snap in &outcome.trajectory.snapshots {
        write_snapshot_csv(
            &dir.join(format!("snapshot_{}.csv", snap.t)),
            &snap.state,
            &scenario.grid,
        )?;
    }
    let json = serde_json::to_string_pretty(&outcome.summary).map_err(std::io::Error::other)?;
    output::write_atomic(Path::new(&outputs.summary_path), json.as_bytes())
}

/// `run <config.json>`.
pub fn run(config_path: &Path) -> i32 {
    let scenario = match load_scenario(config_path) {
        Ok(s) => s,
        Err(e) => return config_failure(config_path, &e),
    };
    if scenario.config.outputs.is_none() {
        let e = ConfigError {
            line: None,
            message: "outputs section is required for run".into(),
        };
        return config_failure(config_path, &e);
    }
    let outcome = match execute(&scenario) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = write_artifacts(&scenario, &outcome) {
        eprintln!("error: cannot write outputs: {e}");
        return EXIT_SOLVER;
    }
    print_outcome(&outcome);
    outcome.exit_code()
}

fn print_outcome(outcome: &Outcome) {
    let s = &outcome.summary;
    println!(
        "t = {} after {} steps, V = {:e}, norm_X = {:e}",
        s.final_.t, s.steps, s.final_.clf, s.final_.norm_x
    );
    if let Some(f) = &s.failure {
        println!("solver failure: {f}");
    }
    for c in &s.checks {
        let status = match (c.skipped, c.passed, c.hard) {
            (true, _, _) => "skip",
            (false, true, _) => "pass",
            (false, false, true) => "FAIL",
            (false, false, false) => "warn",
        };
        println!(
            "  [{status}] {} (margin {:e}, tolerance {:e})",
            c.name, c.worst_violation, c.tolerance_used
        );
    }
}

pub(crate) fn config_failure(path: &Path, e: &ConfigError) -> i32 {
    eprintln!("config error: {}: {e}", path.display());
    EXIT_CONFIG
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignOutput {
    pub schema_version: u32,
    pub params: PhysicalParams,
    pub epsilon: f64,
    pub xi0: f64,
    pub plan: TransferPlan,
}

/// Planner output as pretty JSON, or the reason no plan exists.
pub fn design_json(params: &PhysicalParams, epsilon: f64, xi0: f64) -> crate::Result<String> {
    params.validate()?;
    let plan = plan_transfer(xi0, epsilon, params)?;
    let out = DesignOutput {
        schema_version: SCHEMA_VERSION,
        params: *params,
        epsilon,
        xi0,
        plan,
    };
    Ok(serde_json::to_string_pretty(&out).expect("plan serializes"))
}

/// `design --g --mu --L --m --hmax --epsilon --xi0`.
pub fn design(params: &PhysicalParams, epsilon: f64, xi0: f64) -> i32 {
    match design_json(params, epsilon, xi0) {
        Ok(json) => {
            println!("{json}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Checks that only need the recorded time series.
pub fn verify_records(records: &[crate::solver::Record], scenario: &Scenario) -> Vec<CheckReport> {
    let dt_max = recorded_dt_max(records);
    let grid: &Grid = &scenario.grid;
    let mut reports = vec![check_mass(records, &scenario.params)];
    let spill = check_spill_free(records, &scenario.params);
    let lyap = check_lyapunov(records, &scenario.feedback, grid, dt_max, LYAPUNOV_CONSTANT);
    let certified = !lyap.skipped;
    reports.extend(spill.map(|r| if certified { r } else { r.descriptive() }));
    reports.push(lyap);
    if let Some(c) = &scenario.constants {
        let tol_v = lyapunov_tolerance(records, grid, dt_max, LYAPUNOV_CONSTANT);
        reports.extend(check_envelope(
            records,
            &scenario.feedback,
            c,
            tol_v,
            ENVELOPE_TOLERANCE,
        ));
    }
    reports
}

/// `verify <trajectory.csv> <config.json>`: re-checks a written time series.
pub fn verify(csv_path: &Path, config_path: &Path) -> i32 {
    let scenario = match load_scenario(config_path) {
        Ok(s) => s,
        Err(e) => return config_failure(config_path, &e),
    };
    let records = match read_records_csv(csv_path) {
        Ok(r) if !r.is_empty() => r,
        Ok(_) => {
            eprintln!("error: {} has no rows", csv_path.display());
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", csv_path.display());
            return EXIT_CONFIG;
        }
    };
    let reports = verify_records(&records, &scenario);
    println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    if reports.iter().any(CheckReport::failed) {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    }
}
