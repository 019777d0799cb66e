//! Pass/fail checks of trajectories and sampled states against the
//! stabilization estimates, plus a spatial refinement study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{prop1_upper_bound, tolerance_limit};
use crate::error::Result;
use crate::functionals::{
    classify_state, clf_value, dissipation, dissipation_bound, level_bounds, norm_lower_factor, norm_upper_factor,
    state_norm, state_space_radius, DerivedConstants, Gains, SpaceClass,
};
use crate::model::{make_initial_condition, FullState, Grid, PerturbationKind, PhysicalParams};
use crate::solver::{simulate, Feedback, Record, SolverConfig, Trajectory};

/// Relative mass error accepted on every record.
pub const MASS_TOLERANCE: f64 = 1e-10;
/// Default multiplier of `(dt + dx^2) V(0)` in the drift allowance.
pub const LYAPUNOV_CONSTANT: f64 = 10.0;
/// Default relative slack on the exponential envelopes.
pub const ENVELOPE_TOLERANCE: f64 = 0.05;
/// Default multiplier of `dt + dx^2` for the energy balance residuals.
pub const ENERGY_CONSTANT: f64 = 20.0;
/// Relative slack for the sampled inequalities (rounding only).
pub const STATIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

impl Location {
    pub fn at_time(t: f64) -> Self {
        Self {
            t: Some(t),
            index: None,
        }
    }

    pub fn at_index(index: usize) -> Self {
        Self {
            t: None,
            index: Some(index),
        }
    }
}

/// Outcome of one check. `worst_violation` is the smallest signed margin
/// (positive means slack) and `passed == (worst_violation >= -tolerance_used)`,
/// except that spill checks also fail at a zero margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst_violation: f64,
    pub location: Option<Location>,
    pub tolerance_used: f64,
    pub skipped: bool,
    /// Hard checks decide the exit status; descriptive ones are reported only.
    pub hard: bool,
    /// First record at which the margin went below `-tolerance_used`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<Location>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckReport {
    pub fn new(name: &str, worst_violation: f64, location: Option<Location>, tolerance_used: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: worst_violation >= -tolerance_used,
            worst_violation,
            location,
            tolerance_used,
            skipped: false,
            hard: true,
            first_failure: None,
            detail: None,
        }
    }

    pub fn skipped(name: &str, reason: impl Into<String>) -> Self {
        Self {
            skipped: true,
            detail: Some(reason.into()),
            ..Self::new(name, 0.0, None, 0.0)
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn descriptive(mut self) -> Self {
        self.hard = false;
        self
    }

    /// A hard check that ran and did not pass.
    pub fn failed(&self) -> bool {
        self.hard && !self.skipped && !self.passed
    }
}

/// Running minimum of signed margins over a sequence.
struct Worst {
    margin: f64,
    location: Option<Location>,
    first_failure: Option<Location>,
    tolerance: f64,
}

impl Worst {
    fn new(tolerance: f64) -> Self {
        Self {
            margin: f64::INFINITY,
            location: None,
            first_failure: None,
            tolerance,
        }
    }

    fn update(&mut self, margin: f64, location: Location) {
        // NaN margins count as failures; + 0.0 folds -0 into 0
        let margin = if margin.is_nan() {
            f64::NEG_INFINITY
        } else {
            margin + 0.0
        };
        if margin < self.margin {
            self.margin = margin;
            self.location = Some(location);
        }
        if self.first_failure.is_none() && margin < -self.tolerance {
            self.first_failure = Some(location);
        }
    }

    fn report(self, name: &str) -> CheckReport {
        let margin = if self.margin.is_finite() || self.location.is_some() {
            self.margin
        } else {
            0.0
        };
        let mut report = CheckReport::new(name, margin, self.location, self.tolerance);
        report.first_failure = self.first_failure;
        report
    }
}

/// `max |mass - m| / m <= 1e-10` over all records.
pub fn check_mass(records: &[Record], params: &PhysicalParams) -> CheckReport {
    let mut worst = Worst::new(MASS_TOLERANCE);
    for r in records {
        worst.update(-(r.mass - params.mass).abs() / params.mass, Location::at_time(r.t));
    }
    worst.report("mass")
}

/// Wall levels strictly below `H_max`, and separately the stronger bound on
/// every cell level. Margins are `H_max - level`.
pub fn check_spill_free(records: &[Record], params: &PhysicalParams) -> [CheckReport; 2] {
    let mut walls = Worst::new(0.0);
    let mut interior = Worst::new(0.0);
    for r in records {
        let at = Location::at_time(r.t);
        walls.update(params.h_max - r.h_left.max(r.h_right), at);
        interior.update(params.h_max - r.h_max, at);
    }
    let mut walls = walls.report("spill_free_walls");
    let mut interior = interior.report("spill_free_interior");
    // equality means the liquid reaches the rim
    walls.passed &= walls.worst_violation > 0.0;
    interior.passed &= interior.worst_violation > 0.0;
    [walls, interior]
}

/// Allowed growth rate of the functional: `C (dt + dx^2) V(0)`.
pub fn lyapunov_tolerance(records: &[Record], grid: &Grid, dt_max: f64, constant: f64) -> f64 {
    let clf0 = records.first().map_or(0.0, |r| r.clf);
    constant * (dt_max + grid.dx * grid.dx) * clf0
}

/// Largest step recorded in the `dt` column.
pub fn recorded_dt_max(records: &[Record]) -> f64 {
    records.iter().map(|r| r.dt).fold(0.0, f64::max)
}

/// Why a trajectory is outside the scope of the decay estimates, if it is.
fn certification_gap(records: &[Record], feedback: &Feedback) -> Option<String> {
    let Feedback::Closed(gains) = feedback else {
        return Some("open-loop run; decay is not guaranteed".into());
    };
    let clf0 = records.first()?.clf;
    (clf0 > gains.r).then(|| format!("V(0) = {clf0} exceeds the certified budget r = {}", gains.r))
}

/// `(V(t_{k+1}) - V(t_k)) / (t_{k+1} - t_k) <= tol_V` for consecutive
/// records. Margins are `-dV/dt`.
pub fn check_lyapunov(records: &[Record], feedback: &Feedback, grid: &Grid, dt_max: f64, constant: f64) -> CheckReport {
    const NAME: &str = "lyapunov";
    if let Some(reason) = certification_gap(records, feedback) {
        return CheckReport::skipped(NAME, reason);
    }
    let tol = lyapunov_tolerance(records, grid, dt_max, constant);
    let mut worst = Worst::new(tol);
    for pair in records.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt > 0.0 {
            worst.update(-(pair[1].clf - pair[0].clf) / dt, Location::at_time(pair[1].t));
        }
    }
    worst.report(NAME)
}

/// Least-squares exponential rate of the functional, ignoring values at the
/// rounding floor. `None` with fewer than three usable records.
pub fn fitted_decay_rate(records: &[Record]) -> Option<f64> {
    let clf0 = records.first()?.clf;
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.clf > 1e-10 * clf0 && r.clf > 0.0)
        .map(|r| (r.t, r.clf.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
        (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
    });
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Decay envelopes for a certified closed-loop run:
/// (a) `V(t) <= V(0) exp(-omega t / Gamma(r)) (1 + tol) + tol_V t`,
/// (b) `|x(t)| <= M exp(-lambda t) |x(0)| (1 + tol) + sqrt(G1(r) tol_V t)`.
///
/// Margins are relative to the envelope, so `tolerance_used = tol`.
pub fn check_envelope(
    records: &[Record],
    feedback: &Feedback,
    constants: &DerivedConstants,
    tol_v: f64,
    tol: f64,
) -> [CheckReport; 2] {
    if let Some(reason) = certification_gap(records, feedback) {
        return [
            CheckReport::skipped("envelope_clf", reason.clone()),
            CheckReport::skipped("envelope_norm", reason),
        ];
    }
    let first = records[0];
    let (clf0, norm0) = (first.clf, first.norm_x);
    let rate = constants.clf_decay_rate();
    let mut clf_worst = Worst::new(tol);
    let mut norm_worst = Worst::new(tol);
    for r in records {
        let elapsed = r.t - first.t;
        let drift = tol_v * elapsed;
        let at = Location::at_time(r.t);

        let env = clf0 * (-rate * elapsed).exp() + drift / (1.0 + tol);
        clf_worst.update(relative_margin(env, r.clf), at);

        let env = constants.m_const * (-constants.lambda * elapsed).exp() * norm0
            + (constants.g1_r * drift).sqrt() / (1.0 + tol);
        norm_worst.update(relative_margin(env, r.norm_x), at);
    }
    let fitted = fitted_decay_rate(records);
    let detail = format!(
        "guaranteed rate {rate:e}, fitted rate {}",
        fitted.map_or("n/a".to_string(), |f| format!("{f:e}"))
    );
    [
        clf_worst.report("envelope_clf").with_detail(detail.clone()),
        norm_worst.report("envelope_norm").with_detail(detail),
    ]
}

/// `1 - value / envelope`; `value <= (1 + tol) envelope` iff the margin is `>= -tol`.
fn relative_margin(envelope: f64, value: f64) -> f64 {
    if envelope > 0.0 {
        1.0 - value / envelope
    } else if value <= 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Residuals of the two energy balances over densely recorded records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyResiduals {
    /// `max |dE/dt - (-mu int h v_x^2 + f int h v)| / max |rhs|`
    pub kinetic: f64,
    /// `max |dW/dt - (-mu g int h_x^2 + f int phi)| / max |rhs|`
    pub viscous: f64,
    /// Bound `C (dt + dx^2)`.
    pub tolerance: f64,
    /// Interior records used.
    pub samples: usize,
}

/// Three-point derivative on a nonuniform grid at the middle point.
fn centered_derivative(t: [f64; 3], y: [f64; 3]) -> f64 {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    (-h2 * h2 * y[0] + (h2 * h2 - h1 * h1) * y[1] + h1 * h1 * y[2]) / (h1 * h2 * (h1 + h2))
}

fn relative_residual(lhs: &[f64], rhs: &[f64]) -> f64 {
    let scale = rhs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let err = lhs.iter().zip(rhs).fold(0.0f64, |m, (l, r)| m.max((l - r).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Energy balance residuals, endpoints excluded. `None` with fewer than
/// three records.
pub fn energy_residuals(
    records: &[Record],
    params: &PhysicalParams,
    grid: &Grid,
    constant: f64,
) -> Option<EnergyResiduals> {
    if records.len() < 3 {
        return None;
    }
    let mut lhs_e = Vec::with_capacity(records.len());
    let mut rhs_e = Vec::with_capacity(records.len());
    let mut lhs_w = Vec::with_capacity(records.len());
    let mut rhs_w = Vec::with_capacity(records.len());
    for win in records.windows(3) {
        let t = [win[0].t, win[1].t, win[2].t];
        let mid = &win[1];
        // the held force jumps at t[1]; the stencil sees this weighted mean of both sides
        let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
        let f = (h2 * win[0].f + h1 * mid.f) / (h1 + h2);
        lhs_e.push(centered_derivative(t, [win[0].e, mid.e, win[2].e]));
        rhs_e.push(-params.mu * mid.viscous_dissipation + f * mid.momentum);
        lhs_w.push(centered_derivative(t, [win[0].w_energy, mid.w_energy, win[2].w_energy]));
        rhs_w.push(-params.mu * params.g * mid.slope_sq + f * mid.phi_integral);
    }
    let dt_max = recorded_dt_max(records);
    Some(EnergyResiduals {
        kinetic: relative_residual(&lhs_e, &rhs_e),
        viscous: relative_residual(&lhs_w, &rhs_w),
        tolerance: constant * (dt_max + grid.dx * grid.dx),
        samples: lhs_e.len(),
    })
}

/// Both energy balances within `C (dt + dx^2)` relative error. Margins are `-residual`.
pub fn check_energy_identities(
    records: &[Record],
    params: &PhysicalParams,
    grid: &Grid,
    constant: f64,
) -> [CheckReport; 2] {
    let usable = !records.is_empty() && records.iter().all(|r| r.viscous_dissipation.is_finite());
    match energy_residuals(records, params, grid, constant).filter(|_| usable) {
        None => [
            CheckReport::skipped("energy_kinetic", "needs at least three records with energy integrals"),
            CheckReport::skipped("energy_viscous", "needs at least three records with energy integrals"),
        ],
        Some(res) => [
            CheckReport::new("energy_kinetic", -res.kinetic, None, res.tolerance)
                .with_detail(format!("{} interior records", res.samples)),
            CheckReport::new("energy_viscous", -res.viscous, None, res.tolerance)
                .with_detail(format!("{} interior records", res.samples)),
        ],
    }
}

/// Every trajectory check with default tolerances. Envelopes need the
/// design constants and are skipped without them. Spill checks are only
/// hard for certified closed-loop runs.
pub fn check_trajectory(traj: &Trajectory, constants: Option<&DerivedConstants>) -> Vec<CheckReport> {
    let records = &traj.records;
    let mut reports = vec![check_mass(records, &traj.params)];
    let certified = certification_gap(records, &traj.feedback).is_none();
    reports.extend(check_spill_free(records, &traj.params).map(|r| if certified { r } else { r.descriptive() }));
    reports.push(check_lyapunov(
        records,
        &traj.feedback,
        &traj.grid,
        traj.dt_max_used,
        LYAPUNOV_CONSTANT,
    ));
    match constants {
        Some(c) => {
            let tol_v = lyapunov_tolerance(records, &traj.grid, traj.dt_max_used, LYAPUNOV_CONSTANT);
            reports.extend(check_envelope(records, &traj.feedback, c, tol_v, ENVELOPE_TOLERANCE));
        }
        None => {
            reports.push(CheckReport::skipped("envelope_clf", "no design constants"));
            reports.push(CheckReport::skipped("envelope_norm", "no design constants"));
        }
    }
    let dense = traj.records.len() == traj.steps + 1;
    if dense {
        reports.extend(check_energy_identities(
            records,
            &traj.params,
            &traj.grid,
            ENERGY_CONSTANT,
        ));
    } else {
        reports.push(CheckReport::skipped("energy_kinetic", "records are not dense"));
        reports.push(CheckReport::skipped("energy_viscous", "records are not dense"));
    }
    reports
}

/// Random smooth state built from one level and/or velocity mode, with
/// random tank position and velocity. May lie outside `X`.
pub fn sample_state<R: Rng>(rng: &mut R, params: &PhysicalParams, gains: &Gains, grid: &Grid) -> Result<FullState> {
    let kind = match rng.gen_range(0..3) {
        0 => PerturbationKind::LevelMode,
        1 => PerturbationKind::VelocityMode,
        _ => PerturbationKind::Combined,
    };
    let h_star = params.h_star();
    let amplitude = h_star * 10f64.powf(rng.gen_range(-3.0..0.0)) * 0.9;
    let mode = rng.gen_range(1..=4);
    // tank terms alone stay below R within this box
    let radius = state_space_radius(params);
    let span = (radius / gains.q.max(gains.q * gains.k * gains.k).max(f64::MIN_POSITIVE)).sqrt();
    let xi = rng.gen_range(-span..=span);
    let w = rng.gen_range(-span..=span);
    make_initial_condition(params, grid, kind, amplitude, mode, xi, w)
}

/// Margins of the four sampled inequality families for one state.
#[derive(Debug, Clone, Copy)]
struct StaticMargins {
    sandwich: f64,
    dissipation: f64,
    norm: f64,
    tolerance_ball: Option<f64>,
}

fn static_margins(
    state: &FullState,
    clf: f64,
    params: &PhysicalParams,
    gains: &Gains,
    grid: &Grid,
    epsilon: f64,
) -> Result<StaticMargins> {
    let (lo, hi) = level_bounds(clf, params)?;
    let h_star = params.h_star();
    let sandwich = state
        .h
        .iter()
        .map(|&h| (h - lo).min(hi - h) / h_star)
        .fold(f64::INFINITY, f64::min);

    let scale = clf.max(f64::MIN_POSITIVE);
    let gamma = dissipation_bound(clf, params, gains)?;
    let dissipation = (gamma * dissipation(state, gains, grid) - clf) / scale;

    let norm_sq = state_norm(state, params, grid).powi(2);
    let lower = clf / norm_lower_factor(clf, params, gains)?;
    let upper = clf * norm_upper_factor(clf, params, gains)?;
    let norm = (norm_sq - lower).min(upper - norm_sq) / scale;

    let tolerance_ball = prop1_upper_bound(state, params, gains, grid, epsilon)
        .ok()
        .map(|bound| (bound - clf) / scale);
    Ok(StaticMargins {
        sandwich,
        dissipation,
        norm,
        tolerance_ball,
    })
}

/// Sampled inequality battery over explicit states. States outside `X` are
/// rejected, never asserted; the second return value counts them.
pub fn static_inequality_reports(
    states: &[FullState],
    params: &PhysicalParams,
    gains: &Gains,
    grid: &Grid,
) -> (Vec<CheckReport>, usize) {
    let epsilon = 0.5 * tolerance_limit(params);
    let evaluated: Vec<Option<Result<StaticMargins>>> = states
        .par_iter()
        .map(|s| {
            let membership = classify_state(s, params, gains, grid);
            match (membership.class, membership.clf) {
                (SpaceClass::InX, Some(clf)) => Some(static_margins(s, clf, params, gains, grid, epsilon)),
                _ => None,
            }
        })
        .collect();

    let names = [
        "level_sandwich",
        "dissipation_bound",
        "norm_equivalence",
        "tolerance_ball_bound",
    ];
    let tolerances = [STATIC_TOLERANCE; 4];
    let mut worst: Vec<Worst> = tolerances.iter().map(|&t| Worst::new(t)).collect();
    let mut counts = [0usize; 4];
    let mut rejected = 0;
    for (i, item) in evaluated.into_iter().enumerate() {
        let at = Location::at_index(i);
        match item {
            None => rejected += 1,
            Some(Err(_)) => {
                for w in &mut worst {
                    w.update(f64::NEG_INFINITY, at);
                }
            }
            Some(Ok(m)) => {
                let values = [Some(m.sandwich), Some(m.dissipation), Some(m.norm), m.tolerance_ball];
                for (k, v) in values.into_iter().enumerate() {
                    if let Some(v) = v {
                        worst[k].update(v, at);
                        counts[k] += 1;
                    }
                }
            }
        }
    }
    let reports = worst
        .into_iter()
        .zip(names)
        .zip(counts)
        .map(|((w, name), count)| w.report(name).with_detail(format!("{count} states checked")))
        .collect();
    (reports, rejected)
}

/// Draws `n_samples` states in `X` by rejection (seeded, reproducible) and
/// runs the four inequality families on them.
pub fn check_static_inequalities(
    n_samples: usize,
    params: &PhysicalParams,
    gains: &Gains,
    grid: &Grid,
    rng_seed: u64,
) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut states = Vec::with_capacity(n_samples);
    let max_draws = 1000 * n_samples.max(1);
    let mut draws = 0;
    while states.len() < n_samples && draws < max_draws {
        draws += 1;
        let Ok(state) = sample_state(&mut rng, params, gains, grid) else {
            continue;
        };
        match clf_value(&state, params, gains, grid) {
            Ok(clf) if clf < state_space_radius(params) => states.push(state),
            _ => {}
        }
    }
    let (mut reports, _) = static_inequality_reports(&states, params, gains, grid);
    if states.len() < n_samples {
        let short = format!("only {} of {n_samples} states found in X", states.len());
        for r in &mut reports {
            r.passed = false;
            r.detail = Some(short.clone());
        }
    }
    reports
}

/// Result of a three-level refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub n: usize,
    pub t_end: f64,
    /// `|u_N - u_2N|` on the coarse grid.
    pub coarse_difference: f64,
    /// `|u_2N - u_4N|` on the coarse grid.
    pub fine_difference: f64,
    pub order: f64,
}

/// Restriction onto a grid `factor` times coarser: cell averages for `h`,
/// injection for `v`.
pub fn restrict(state: &FullState, factor: usize) -> (Vec<f64>, Vec<f64>) {
    let h = state
        .h
        .chunks(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect();
    let v = state.v.iter().step_by(factor).copied().collect();
    (h, v)
}

fn discrete_l2(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>), dx: f64) -> f64 {
    let dh: f64 = a.0.iter().zip(&b.0).map(|(x, y)| (x - y).powi(2)).sum();
    let dv: f64 = a.1.iter().zip(&b.1).map(|(x, y)| (x - y).powi(2)).sum();
    ((dh + dv) * dx).sqrt()
}

/// Runs the same smooth initial condition on `N`, `2N` and `4N` cells to
/// `t_end` and estimates the spatial order from successive differences
/// measured on the `N` grid.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    params: &PhysicalParams,
    feedback: Feedback,
    n: usize,
    kind: PerturbationKind,
    amplitude: f64,
    mode_number: u32,
    t_end: f64,
    cfl: f64,
) -> Result<ConvergenceStudy> {
    let mut finals = Vec::with_capacity(3);
    for factor in [1usize, 2, 4] {
        let grid = Grid::for_params(params, n * factor)?;
        let initial = make_initial_condition(params, &grid, kind, amplitude, mode_number, 0.0, 0.0)?;
        let mut config = SolverConfig::new(t_end);
        config.cfl = cfl;
        config.record_every = usize::MAX;
        let traj = simulate(&initial, params, feedback, &grid, &config)?;
        if let Some(err) = traj.failure {
            return Err(err);
        }
        finals.push(restrict(&traj.final_state, factor));
    }
    let dx = params.length / n as f64;
    let coarse = discrete_l2(&finals[0], &finals[1], dx);
    let fine = discrete_l2(&finals[1], &finals[2], dx);
    Ok(ConvergenceStudy {
        n,
        t_end,
        coarse_difference: coarse,
        fine_difference: fine,
        order: (coarse / fine).log2(),
    })
}
