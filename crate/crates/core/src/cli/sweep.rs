//! Parameter sweeps over independent trajectories, and the budget ladder.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{parse_json, prepare, read_config_text, ConfigError, Mode, ScenarioConfig, Source};
use super::{execute, output, SCHEMA_VERSION};
use crate::controller::transfer_time;
use crate::functionals::{derived_constants, gain_bound, state_space_radius, DerivedConstants, Gains};
use crate::solver::Flags;

/// Values to scan; an absent axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    #[serde(default, rename = "N")]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub amplitude: Option<Vec<f64>>,
}

/// Budget ladder `r = fraction * R` with `k = k_fraction * bound(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RLadder {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_k_fraction")]
    pub k_fraction: f64,
    /// Also simulate each rung from the base initial condition.
    #[serde(default)]
    pub simulate: bool,
}

fn default_fractions() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn default_k_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    #[serde(default)]
    pub axes: Axes,
    #[serde(default)]
    pub r_ladder: Option<RLadder>,
    pub summary_path: String,
    /// Directory for per-cell `cell_<i>.csv` time series.
    #[serde(default)]
    pub trajectory_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellParams {
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    pub q: Option<f64>,
    pub k: Option<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub params: CellParams,
    /// Right-hand side of the gain inequality on `k` at this budget.
    pub k_bound: Option<f64>,
    pub omega: Option<f64>,
    #[serde(rename = "Gamma_r")]
    pub gamma_r: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(rename = "M")]
    pub m_const: Option<f64>,
    /// Transfer time for the base transfer section, when one is given.
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub simulated: bool,
    pub passed: Option<bool>,
    pub failed_checks: Vec<String>,
    pub flags: Option<Flags>,
    pub empirical_decay_rate: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn new(index: usize, params: CellParams) -> Self {
        Self {
            index,
            params,
            k_bound: None,
            omega: None,
            gamma_r: None,
            lambda: None,
            m_const: None,
            t_final: None,
            simulated: false,
            passed: None,
            failed_checks: Vec::new(),
            flags: None,
            empirical_decay_rate: None,
            error: None,
        }
    }

    fn fill_constants(&mut self, c: &DerivedConstants, base: &ScenarioConfig) {
        self.k_bound = Some(c.k_bound);
        self.omega = Some(c.omega);
        self.gamma_r = Some(c.gamma_r);
        self.lambda = Some(c.lambda);
        self.m_const = Some(c.m_const);
        self.t_final = base
            .transfer
            .as_ref()
            .map(|t| transfer_time(c.m_const, c.lambda, t.xi0, t.epsilon));
    }

    fn ok(&self) -> bool {
        self.error.is_none() && self.passed != Some(false)
    }
}

/// Strict monotonicity of the ladder constants in `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderTrend {
    pub k_bound_decreasing: bool,
    pub lambda_decreasing: bool,
    pub m_increasing: bool,
}

impl LadderTrend {
    pub fn holds(&self) -> bool {
        self.k_bound_decreasing && self.lambda_decreasing && self.m_increasing
    }
}

pub fn ladder_trend(rows: &[SweepRow]) -> LadderTrend {
    let strictly = |values: Vec<Option<f64>>, increasing: bool| {
        values.iter().all(Option::is_some)
            && values.windows(2).all(|w| {
                let (a, b) = (w[0].unwrap(), w[1].unwrap());
                if increasing {
                    b > a
                } else {
                    b < a
                }
            })
    };
    LadderTrend {
        k_bound_decreasing: strictly(rows.iter().map(|r| r.k_bound).collect(), false),
        lambda_decreasing: strictly(rows.iter().map(|r| r.lambda).collect(), false),
        m_increasing: strictly(rows.iter().map(|r| r.m_const).collect(), true),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
    pub ladder: Option<Vec<SweepRow>>,
    pub ladder_trend: Option<LadderTrend>,
    pub passed: bool,
}

/// Cartesian product of the axes in the order r, sigma, q, k, N, amplitude.
pub fn expand(sweep: &SweepConfig) -> Vec<ScenarioConfig> {
    let base = &sweep.base;
    let axes = &sweep.axes;
    let f = |axis: &Option<Vec<f64>>| axis.clone().map_or(vec![None], |v| v.into_iter().map(Some).collect());
    let mut cells = Vec::new();
    for r in f(&axes.r) {
        for sigma in f(&axes.sigma) {
            for q in f(&axes.q) {
                for k in f(&axes.k) {
                    let ns = axes.n.clone().unwrap_or_else(|| vec![base.grid.n]);
                    for &n in &ns {
                        for amplitude in f(&axes.amplitude) {
                            let mut cell = base.clone();
                            if let Some(g) = cell.gains.as_mut() {
                                g.r = r.unwrap_or(g.r);
                                g.sigma = sigma.unwrap_or(g.sigma);
                                g.q = q.unwrap_or(g.q);
                                g.k = k.unwrap_or(g.k);
                            }
                            cell.grid.n = n;
                            if let (Some(a), Some(ic)) = (amplitude, cell.ic.as_mut()) {
                                ic.amplitude = a;
                            }
                            cell.outputs = None;
                            cells.push(cell);
                        }
                    }
                }
            }
        }
    }
    cells
}

fn cell_params(cell: &ScenarioConfig) -> CellParams {
    let g = cell.gains.as_ref();
    CellParams {
        r: g.map(|g| g.r),
        sigma: g.map(|g| g.sigma),
        q: g.map(|g| g.q),
        k: g.map(|g| g.k),
        n: cell.grid.n,
        amplitude: cell.ic.as_ref().map(|ic| ic.amplitude),
    }
}

fn run_cell(index: usize, cell: ScenarioConfig, src: &Source, trajectory_dir: Option<&Path>) -> SweepRow {
    let mut row = SweepRow::new(index, cell_params(&cell));
    let base = cell.clone();
    let scenario = match prepare(cell, src) {
        Ok(s) => s,
        Err(e) => {
            row.error = Some(e.message);
            return row;
        }
    };
    if let Some(c) = &scenario.constants {
        row.fill_constants(c, &base);
    }
    match execute(&scenario) {
        Err(e) => row.error = Some(e.to_string()),
        Ok(outcome) => {
            row.simulated = true;
            row.passed = Some(outcome.summary.passed);
            row.failed_checks = outcome
                .summary
                .checks
                .iter()
                .filter(|c| c.failed())
                .map(|c| c.name.clone())
                .collect();
            row.flags = Some(outcome.summary.flags);
            row.empirical_decay_rate = outcome.summary.empirical_decay_rate;
            row.error = outcome.summary.failure.clone();
            if let Some(dir) = trajectory_dir {
                let path = dir.join(format!("cell_{index}.csv"));
                if let Err(e) = output::write_records_csv(&path, &outcome.trajectory.records) {
                    row.error = Some(format!("cannot write {}: {e}", path.display()));
                }
            }
        }
    }
    row
}

/// Ladder rows: constants for each rung, optionally with a simulation.
pub fn run_ladder(base: &ScenarioConfig, ladder: &RLadder, src: &Source) -> Result<Vec<SweepRow>, ConfigError> {
    let params = base.physical;
    params
        .validate()
        .map_err(|e| src.error("physical", "H_max", e.to_string()))?;
    let gains = base
        .gains
        .ok_or_else(|| src.error("base", "gains", "r_ladder needs base gains for sigma and q"))?;
    let radius = state_space_radius(&params);
    let rows = ladder
        .fractions
        .par_iter()
        .enumerate()
        .map(|(index, &fraction)| {
            let r = fraction * radius;
            let mut row = SweepRow::new(
                index,
                CellParams {
                    r: Some(r),
                    sigma: Some(gains.sigma),
                    q: Some(gains.q),
                    k: None,
                    n: base.grid.n,
                    amplitude: None,
                },
            );
            let k = match gain_bound(&params, gains.sigma, gains.q, r) {
                Ok(bound) => ladder.k_fraction * bound,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            row.params.k = Some(k);
            let rung = Gains { k, r, ..gains };
            match derived_constants(&params, &rung) {
                Ok(c) => row.fill_constants(&c, base),
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            }
            if ladder.simulate {
                let mut cell = base.clone();
                cell.gains = Some(rung);
                cell.mode = Mode::ClosedLoop;
                cell.outputs = None;
                let sim = run_cell(index, cell, src, None);
                row.simulated = sim.simulated;
                row.passed = sim.passed;
                row.failed_checks = sim.failed_checks;
                row.flags = sim.flags;
                row.empirical_decay_rate = sim.empirical_decay_rate;
                row.error = sim.error;
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Thread count from `SPILLFREE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("SPILLFREE_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

pub fn run_sweep(sweep: &SweepConfig, src: &Source) -> Result<SweepSummary, ConfigError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ConfigError {
        line: None,
        message: format!("cannot start worker pool: {e}"),
    })?;
    let trajectory_dir = sweep.trajectory_dir.as_deref().map(Path::new);
    pool.install(|| {
        let (rows, ladder) = match &sweep.r_ladder {
            Some(ladder) => (Vec::new(), Some(run_ladder(&sweep.base, ladder, src)?)),
            None => {
                let cells = expand(sweep);
                let rows = cells
                    .into_par_iter()
                    .enumerate()
                    .map(|(i, cell)| run_cell(i, cell, src, trajectory_dir))
                    .collect::<Vec<_>>();
                (rows, None)
            }
        };
        let ladder_trend = ladder.as_deref().map(ladder_trend);
        let passed = rows.iter().all(SweepRow::ok)
            && ladder.as_ref().is_none_or(|l| l.iter().all(SweepRow::ok))
            && ladder_trend.is_none_or(|t| t.holds());
        Ok(SweepSummary {
            schema_version: SCHEMA_VERSION,
            rows,
            ladder,
            ladder_trend,
            passed,
        })
    })
}

/// `sweep <config.json>`.
pub fn sweep(config_path: &Path) -> i32 {
    let loaded = read_config_text(config_path).and_then(|text| {
        let sweep: SweepConfig = parse_json(&text)?;
        Ok((sweep, Source::new(text)))
    });
    let (sweep, src) = match loaded {
        Ok(x) => x,
        Err(e) => return super::config_failure(config_path, &e),
    };
    let summary = match run_sweep(&sweep, &src) {
        Ok(s) => s,
        Err(e) => return super::config_failure(config_path, &e),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Err(e) = output::write_atomic(Path::new(&sweep.summary_path), json.as_bytes()) {
        eprintln!("error: cannot write {}: {e}", sweep.summary_path);
        return super::EXIT_SOLVER;
    }
    for row in summary.rows.iter().chain(summary.ladder.iter().flatten()) {
        println!(
            "cell {:>3}: r={:?} sigma={:?} q={:?} k={:?} N={} lambda={:?} M={:?} {}",
            row.index,
            row.params.r,
            row.params.sigma,
            row.params.q,
            row.params.k,
            row.params.n,
            row.lambda,
            row.m_const,
            match (&row.error, row.passed) {
                (Some(e), _) => format!("error: {e}"),
                (None, Some(true)) => "pass".into(),
                (None, Some(false)) => format!("FAIL {:?}", row.failed_checks),
                (None, None) => "constants only".into(),
            }
        );
    }
    if let Some(t) = &summary.ladder_trend {
        println!(
            "ladder trend: k bound decreasing {}, lambda decreasing {}, M increasing {}",
            t.k_bound_decreasing, t.lambda_decreasing, t.m_increasing
        );
    }
    if summary.passed {
        super::EXIT_OK
    } else {
        super::EXIT_CHECK_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_config(extra: &str) -> (SweepConfig, Source) {
        let text = format!(
            r#"{{
  "base": {{
    "physical": {{"g": 1.0, "mu": 1.0, "L": 1.0, "m": 1.0, "H_max": 4.0}},
    "grid": {{"N": 16}},
    "solver": {{"t_end": 0.05, "record_every": 5}},
    "mode": "closed_loop",
    "gains": {{"sigma": 1.0, "q": 6.0, "k": 0.05, "r": 0.1}},
    "ic": {{"kind": "combined", "amplitude": 0.02}}
  }},
  {extra}
  "summary_path": "unused.json"
}}"#
        );
        (parse_json(&text).unwrap(), Source::new(text))
    }

    #[test]
    fn grid_of_nine_in_order() {
        let (cfg, src) = sweep_config(r#""axes": {"sigma": [0.5, 1.0, 2.0], "q": [4.0, 6.0, 8.0]},"#);
        let summary = run_sweep(&cfg, &src).unwrap();
        assert_eq!(summary.rows.len(), 9);
        let order: Vec<_> = summary
            .rows
            .iter()
            .map(|r| (r.params.sigma.unwrap(), r.params.q.unwrap()))
            .collect();
        assert_eq!(order[0], (0.5, 4.0));
        assert_eq!(order[1], (0.5, 6.0));
        assert_eq!(order[8], (2.0, 8.0));
        assert!(summary.passed, "{:#?}", summary.rows);
    }

    #[test]
    fn single_cell_matches_run() {
        let (cfg, src) = sweep_config("");
        let summary = run_sweep(&cfg, &src).unwrap();
        assert_eq!(summary.rows.len(), 1);
        let scenario = prepare(cfg.base.clone(), &src).unwrap();
        let outcome = execute(&scenario).unwrap();
        let row = &summary.rows[0];
        assert_eq!(row.passed, Some(outcome.summary.passed));
        assert_eq!(row.empirical_decay_rate, outcome.summary.empirical_decay_rate);
        assert_eq!(row.lambda, scenario.constants.map(|c| c.lambda));
    }

    #[test]
    fn per_cell_errors_do_not_stop_the_sweep() {
        let (cfg, src) = sweep_config(r#""axes": {"k": [0.05, 100.0]},"#);
        let summary = run_sweep(&cfg, &src).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows[0].error.is_none());
        assert!(summary.rows[1].error.as_deref().unwrap().contains("gain condition"));
        assert!(!summary.passed);
    }

    #[test]
    fn ladder_trends() {
        let (mut cfg, src) = sweep_config(r#""r_ladder": {},"#);
        // with a large q the norm factors saturate at small budgets and M plateaus
        cfg.base.gains.as_mut().unwrap().q = 2.0;
        let summary = run_sweep(&cfg, &src).unwrap();
        let ladder = summary.ladder.unwrap();
        assert_eq!(ladder.len(), 9);
        assert!(ladder.iter().all(|r| r.error.is_none()), "{ladder:#?}");
        assert!(summary.ladder_trend.unwrap().holds());
    }
}
