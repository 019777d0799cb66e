//! Scenario files: schema, parsing and validation into runnable inputs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{certify_initial_state, check_gain_condition, plan_transfer, TransferPlan};
use crate::functionals::{classify_state, derived_constants, DerivedConstants, Gains, SpaceClass};
use crate::model::{make_initial_condition, FullState, Grid, PerturbationKind, PhysicalParams};
use crate::solver::{Feedback, SolverConfig};

/// Gains used to evaluate the functional on open-loop runs when none are given.
pub const MONITOR_GAINS: Gains = Gains {
    sigma: 1.0,
    q: 1.0,
    k: 1.0,
    r: 0.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Required except for transfer runs, which default to the planned final time.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub dt_max: Option<f64>,
}

fn default_cfl() -> f64 {
    0.4
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedLoop,
    OpenLoop,
    TransferDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub xi0: f64,
    pub epsilon: f64,
    /// Target position of the left wall in the laboratory frame.
    #[serde(default)]
    pub a_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcSection {
    pub kind: PerturbationKind,
    pub amplitude: f64,
    #[serde(default = "default_mode_number")]
    pub mode_number: u32,
    /// Ignored in transfer runs, where the tank starts at `transfer.xi0`.
    #[serde(default)]
    pub xi0: Option<f64>,
    #[serde(default)]
    pub w0: f64,
}

fn default_mode_number() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv_path: String,
    pub summary_path: String,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub physical: PhysicalParams,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub mode: Mode,
    #[serde(default)]
    pub gains: Option<Gains>,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
    /// Defaults to the equilibrium profile.
    #[serde(default)]
    pub ic: Option<IcSection>,
    #[serde(default)]
    pub outputs: Option<OutputSection>,
    #[serde(default)]
    pub seed: u64,
    /// Random states for the sampled inequality battery; 0 disables it.
    #[serde(default)]
    pub static_samples: usize,
}

/// A configuration problem, with the 1-based source line when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Source text kept alongside the parsed config so that semantic errors can
/// point at the offending key.
#[derive(Debug, Clone)]
pub struct Source {
    text: String,
}

impl Source {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    /// Line of `"key"` inside the object introduced by `"section"`, falling
    /// back to the section line, then to `None`.
    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let section_pat = format!("\"{section}\"");
        let key_pat = format!("\"{key}\"");
        let start = if section.is_empty() {
            Some(0)
        } else {
            self.text.find(&section_pat)
        };
        let start = start?;
        let offset = self.text[start..].find(&key_pat).map(|i| i + start).unwrap_or(start);
        Some(self.text[..offset].matches('\n').count() + 1)
    }

    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line_of(section, key),
            message: message.into(),
        }
    }
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError {
        line: Some(e.line()).filter(|&l| l > 0),
        message: strip_position(&e.to_string()),
    })
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

pub fn read_config_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub params: PhysicalParams,
    pub grid: Grid,
    pub solver: SolverConfig,
    pub feedback: Feedback,
    pub initial: FullState,
    /// Present for feasible closed-loop designs and transfer runs.
    pub constants: Option<DerivedConstants>,
    pub plan: Option<TransferPlan>,
}

impl Scenario {
    pub fn gains(&self) -> &Gains {
        self.feedback.gains()
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = read_config_text(path)?;
    let config: ScenarioConfig = parse_json(&text)?;
    prepare(config, &Source::new(text))
}

pub fn prepare(config: ScenarioConfig, src: &Source) -> Result<Scenario, ConfigError> {
    let params = config.physical;
    for (key, value) in [
        ("g", params.g),
        ("mu", params.mu),
        ("L", params.length),
        ("m", params.mass),
        ("H_max", params.h_max),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(src.error(
                "physical",
                key,
                format!("{key} must be finite and positive, got {value}"),
            ));
        }
    }
    params
        .validate()
        .map_err(|e| src.error("physical", "H_max", e.to_string()))?;

    let grid = Grid::for_params(&params, config.grid.n).map_err(|e| src.error("grid", "N", e.to_string()))?;

    let (feedback, constants, plan) = match config.mode {
        Mode::ClosedLoop => {
            let gains = config
                .gains
                .ok_or_else(|| src.error("", "mode", "closed_loop mode needs a gains section"))?;
            gains
                .validate(&params)
                .map_err(|e| src.error("gains", "sigma", e.to_string()))?;
            let check = check_gain_condition(&params, &gains);
            if !check.is_ok() {
                return Err(src.error(
                    "gains",
                    "k",
                    format!(
                        "gain condition violated: k = {} is not below its bound (margin {:e})",
                        gains.k,
                        check.margin()
                    ),
                ));
            }
            let constants = derived_constants(&params, &gains).map_err(|e| src.error("gains", "r", e.to_string()))?;
            (Feedback::Closed(gains), Some(constants), None)
        }
        Mode::OpenLoop => {
            let gains = config.gains.unwrap_or(MONITOR_GAINS);
            for (key, value) in [("sigma", gains.sigma), ("q", gains.q), ("k", gains.k)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(src.error("gains", key, format!("{key} must be finite and positive, got {value}")));
                }
            }
            (Feedback::Open(gains), None, None)
        }
        Mode::TransferDemo => {
            if config.gains.is_some() {
                return Err(src.error(
                    "",
                    "gains",
                    "transfer_demo mode takes its gains from the planner; remove the gains section",
                ));
            }
            let transfer = config
                .transfer
                .as_ref()
                .ok_or_else(|| src.error("", "mode", "transfer_demo mode needs a transfer section"))?;
            let plan = plan_transfer(transfer.xi0, transfer.epsilon, &params)
                .map_err(|e| src.error("transfer", "epsilon", e.to_string()))?;
            (Feedback::Closed(plan.gains), Some(plan.constants), Some(plan))
        }
    };

    let t_end = match (&plan, config.solver.t_end) {
        (Some(plan), None) => plan.t_final,
        (Some(plan), Some(t)) if t < plan.t_final => {
            return Err(src.error(
                "solver",
                "t_end",
                format!("t_end = {t} ends before the planned final time T = {}", plan.t_final),
            ))
        }
        (_, Some(t)) => t,
        (None, None) => return Err(src.error("", "solver", "solver.t_end is required")),
    };
    let mut solver = SolverConfig::new(t_end);
    solver.cfl = config.solver.cfl;
    solver.record_every = config.solver.record_every;
    solver.dt_max = config.solver.dt_max;
    if let Some(outputs) = &config.outputs {
        solver.snapshot_times = outputs.snapshot_times.clone();
        if let Some(&bad) = outputs.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= t_end)) {
            return Err(src.error(
                "outputs",
                "snapshot_times",
                format!("snapshot time {bad} outside [0, {t_end}]"),
            ));
        }
    }
    if let Some(plan) = &plan {
        solver.snapshot_times.push(plan.t_final);
    }
    solver.validate().map_err(|e| {
        let key = match &e {
            crate::Error::InvalidParams(m) if m.starts_with("cfl") => "cfl",
            crate::Error::InvalidParams(m) if m.starts_with("record_every") => "record_every",
            crate::Error::InvalidParams(m) if m.starts_with("dt_max") => "dt_max",
            _ => "t_end",
        };
        src.error("solver", key, e.to_string())
    })?;

    let initial = initial_state(&config, &params, &grid, plan.as_ref(), src)?;
    let membership = classify_state(&initial, &params, feedback.gains(), &grid);
    if membership.class == SpaceClass::NotInS {
        return Err(src.error(
            "",
            "ic",
            format!(
                "initial state is not admissible: {}",
                membership.reason.unwrap_or_default()
            ),
        ));
    }
    if let Some(plan) = &plan {
        certify_initial_state(plan, &initial, &params, &grid)
            .map_err(|e| src.error("", "ic", format!("initial state cannot be certified: {e}")))?;
    }

    Ok(Scenario {
        config,
        params,
        grid,
        solver,
        feedback,
        initial,
        constants,
        plan,
    })
}

fn initial_state(
    config: &ScenarioConfig,
    params: &PhysicalParams,
    grid: &Grid,
    plan: Option<&TransferPlan>,
    src: &Source,
) -> Result<FullState, ConfigError> {
    let (kind, amplitude, mode_number, xi0, w0) = match &config.ic {
        Some(ic) => (ic.kind, ic.amplitude, ic.mode_number, ic.xi0.unwrap_or(0.0), ic.w0),
        None => (PerturbationKind::LevelMode, 0.0, 1, 0.0, 0.0),
    };
    let xi0 = match plan {
        Some(plan) => {
            if config.ic.as_ref().and_then(|ic| ic.xi0).is_some_and(|x| x != plan.xi0) {
                return Err(src.error("ic", "xi0", "ic.xi0 conflicts with transfer.xi0; leave it out"));
            }
            plan.xi0
        }
        None => xi0,
    };
    make_initial_condition(params, grid, kind, amplitude, mode_number, xi0, w0)
        .map_err(|e| src.error("ic", "amplitude", e.to_string()))
}
