//! Explicit time integration of the tank/liquid system on the staggered grid.
//!
//! Mass is advanced in conservative flux form, momentum in the
//! nonconservative velocity form
//! `v_t + v v_x + g h_x = mu h^-1 (h v_x)_x + f`, and the tank obeys
//! `xi' = w`, `w' = -f`. The control force is sampled once per step and held
//! over both Heun stages.

use serde::{Deserialize, Serialize};

use crate::controller::control_force;
use crate::error::{Error, Result};
use crate::functionals::{diagnostics, state_space_radius, Gains};
use crate::model::{FullState, Grid, PhysicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Two-stage Heun method.
    #[default]
    ExplicitRk2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cfl: f64,
    pub t_end: f64,
    /// Record every this many steps; the first and last states are always recorded.
    pub record_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub dt_max: Option<f64>,
    /// Times at which full profiles are stored; steps are shortened to hit them exactly.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Multiplier in the per-unit-time tolerance on growth of the functional.
    #[serde(default = "default_lyapunov_constant")]
    pub lyapunov_constant: f64,
}

fn default_lyapunov_constant() -> f64 {
    10.0
}

impl SolverConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            cfl: 0.4,
            t_end,
            record_every: 1,
            scheme: Scheme::ExplicitRk2,
            dt_max: None,
            snapshot_times: Vec::new(),
            lyapunov_constant: default_lyapunov_constant(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "cfl must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParams("record_every must be at least 1".into()));
        }
        if let Some(cap) = self.dt_max {
            if !(cap > 0.0) {
                return Err(Error::InvalidParams(format!("dt_max must be positive, got {cap}")));
            }
        }
        Ok(())
    }
}

/// Time derivatives of every unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    /// Per cell.
    pub dh: Vec<f64>,
    /// Per face; the two wall entries are zero.
    pub dv: Vec<f64>,
    pub dxi: f64,
    pub dw: f64,
}

fn check_positive(h: &[f64], t: f64) -> Result<()> {
    if let Some((index, &value)) = h.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::PositivityViolation { index, value, t });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rhs_into(
    h: &[f64],
    v: &[f64],
    w: f64,
    f: f64,
    params: &PhysicalParams,
    grid: &Grid,
    dh: &mut [f64],
    dv: &mut [f64],
) -> (f64, f64) {
    let n = grid.n;
    let (h, v, dh, dv) = (&h[..n], &v[..=n], &mut dh[..n], &mut dv[..=n]);
    let inv_dx = 1.0 / grid.dx;
    let (g, mu) = (params.g, params.mu);

    // face j couples cells j-1 and j; F(0) = F(N) = 0
    let mut stress_left = h[0] * (v[1] - v[0]) * inv_dx;
    let mut flux_left = 0.0;
    for j in 1..n {
        let (hl, hr) = (h[j - 1], h[j]);
        let h_face = 0.5 * (hl + hr);
        let flux = h_face * v[j];
        dh[j - 1] = -(flux - flux_left) * inv_dx;
        flux_left = flux;

        let stress_right = hr * (v[j + 1] - v[j]) * inv_dx;
        let v_x = 0.5 * (v[j + 1] - v[j - 1]) * inv_dx;
        let h_x = (hr - hl) * inv_dx;
        let viscous = mu * (stress_right - stress_left) * inv_dx / h_face;
        dv[j] = -v[j] * v_x - g * h_x + viscous + f;
        stress_left = stress_right;
    }
    dh[n - 1] = flux_left * inv_dx;
    dv[0] = 0.0;
    dv[n] = 0.0;
    (w, -f)
}

/// Right-hand side of the semi-discrete system for a given force `f`.
pub fn semidiscrete_rhs(state: &FullState, f: f64, params: &PhysicalParams, grid: &Grid) -> Result<Rhs> {
    check_positive(&state.h, state.t)?;
    let mut dh = vec![0.0; grid.n];
    let mut dv = vec![0.0; grid.n + 1];
    let (dxi, dw) = rhs_into(&state.h, &state.v, state.w, f, params, grid, &mut dh, &mut dv);
    Ok(Rhs { dh, dv, dxi, dw })
}

/// Stable step: `cfl * min(dx / max(|v| + sqrt(g h_face)), dx^2 h_min / (2 mu h_max), dt_max)`.
pub fn stable_dt(state: &FullState, params: &PhysicalParams, grid: &Grid, config: &SolverConfig) -> f64 {
    let n = grid.n;
    let (h, v) = (&state.h[..n], &state.v[..=n]);
    let (mut h_lo, mut h_hi) = (h[0], h[0]);
    let mut v_abs: f64 = 0.0;
    for (&hi, &vi) in h.iter().zip(v) {
        h_lo = if hi < h_lo { hi } else { h_lo };
        h_hi = if hi > h_hi { hi } else { h_hi };
        let a = vi.abs();
        v_abs = if a > v_abs { a } else { v_abs };
    }
    let viscous = grid.dx * grid.dx * h_lo / (2.0 * params.mu * h_hi);
    // face levels never exceed the largest cell level
    let speed_bound = v_abs + (params.g * h_hi).sqrt();
    let limit = if grid.dx / speed_bound >= viscous {
        viscous
    } else {
        viscous.min(grid.dx / max_wave_speed(h, v, params.g))
    };
    let dt = config.cfl * limit;
    match config.dt_max {
        Some(cap) => dt.min(cap),
        None => dt,
    }
}

fn max_wave_speed(h: &[f64], v: &[f64], g: f64) -> f64 {
    let n = h.len();
    (0..=n)
        .map(|j| {
            let h_face = if j == 0 {
                h[0]
            } else if j == n {
                h[n - 1]
            } else {
                0.5 * (h[j - 1] + h[j])
            };
            v[j].abs() + (g * h_face).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Integrator with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Stepper {
    params: PhysicalParams,
    grid: Grid,
    k1_h: Vec<f64>,
    k1_v: Vec<f64>,
    k2_h: Vec<f64>,
    k2_v: Vec<f64>,
    stage_h: Vec<f64>,
    stage_v: Vec<f64>,
}

impl Stepper {
    pub fn new(params: PhysicalParams, grid: Grid) -> Self {
        let n = grid.n;
        Self {
            params,
            grid,
            k1_h: vec![0.0; n],
            k1_v: vec![0.0; n + 1],
            k2_h: vec![0.0; n],
            k2_v: vec![0.0; n + 1],
            stage_h: vec![0.0; n],
            stage_v: vec![0.0; n + 1],
        }
    }

    /// One Heun step in place with `f` held constant.
    pub fn advance(&mut self, state: &mut FullState, f: f64, dt: f64) -> Result<()> {
        let n = self.grid.n;
        let (dxi1, dw1) = rhs_into(
            &state.h,
            &state.v,
            state.w,
            f,
            &self.params,
            &self.grid,
            &mut self.k1_h,
            &mut self.k1_v,
        );
        for i in 0..n {
            self.stage_h[i] = state.h[i] + dt * self.k1_h[i];
        }
        for j in 0..=n {
            self.stage_v[j] = state.v[j] + dt * self.k1_v[j];
        }
        let stage_w = state.w + dt * dw1;
        check_positive(&self.stage_h, state.t + dt)?;

        let (dxi2, dw2) = rhs_into(
            &self.stage_h,
            &self.stage_v,
            stage_w,
            f,
            &self.params,
            &self.grid,
            &mut self.k2_h,
            &mut self.k2_v,
        );
        let half = 0.5 * dt;
        for i in 0..n {
            state.h[i] += half * (self.k1_h[i] + self.k2_h[i]);
        }
        for j in 1..n {
            state.v[j] += half * (self.k1_v[j] + self.k2_v[j]);
        }
        state.v[0] = 0.0;
        state.v[n] = 0.0;
        state.xi += half * (dxi1 + dxi2);
        state.w += half * (dw1 + dw2);
        state.t += dt;
        check_positive(&state.h, state.t)
    }
}

/// One Heun step with the force held constant; wall velocities re-pinned to zero.
pub fn step(state: &FullState, f: f64, dt: f64, params: &PhysicalParams, grid: &Grid) -> Result<FullState> {
    check_positive(&state.h, state.t)?;
    let mut next = state.clone();
    Stepper::new(*params, *grid).advance(&mut next, f, dt)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loop", rename_all = "snake_case")]
pub enum Feedback {
    /// Force from the feedback law with these gains.
    Closed(Gains),
    /// `f = 0`; the gains only weight the tank terms of the recorded functional.
    Open(Gains),
}

impl Feedback {
    pub fn gains(&self) -> &Gains {
        match self {
            Feedback::Closed(g) | Feedback::Open(g) => g,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Feedback::Closed(_))
    }
}

/// One recorded row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub xi: f64,
    pub w: f64,
    /// Force applied over the step that starts at `t`.
    pub f: f64,
    #[serde(rename = "V")]
    pub clf: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "W")]
    pub w_energy: f64,
    pub mass: f64,
    pub norm_x: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Step size that produced this state (zero for the initial record).
    pub dt: f64,
    /// `int h v`
    pub momentum: f64,
    /// `int h v_x^2`
    pub viscous_dissipation: f64,
    /// `int h_x^2`
    pub slope_sq: f64,
    /// `int (h v + mu h_x)`
    pub phi_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub state: FullState,
}

/// First times at which monitored events occurred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Flags {
    /// Functional at or above the state-space radius.
    pub left_state_space: Option<f64>,
    /// A wall level at or above `H_max`.
    pub spill: Option<f64>,
    /// Growth of the functional beyond the drift tolerance.
    pub clf_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub params: PhysicalParams,
    pub grid: Grid,
    pub feedback: Feedback,
    pub records: Vec<Record>,
    pub snapshots: Vec<Snapshot>,
    pub flags: Flags,
    pub steps: usize,
    /// Largest step size used.
    pub dt_max_used: f64,
    /// Set when the run stopped early; the records cover the run up to the failure.
    #[serde(serialize_with = "serialize_failure")]
    pub failure: Option<Error>,
    pub final_state: FullState,
}

fn serialize_failure<S: serde::Serializer>(failure: &Option<Error>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match failure {
        Some(err) => s.serialize_some(&err.to_string()),
        None => s.serialize_none(),
    }
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn initial_clf(&self) -> f64 {
        self.records.first().map_or(0.0, |r| r.clf)
    }

    /// `C (dt + dx^2) V(0)`: per-unit-time allowance for growth of the
    /// functional due to discretization and sample-and-hold.
    pub fn lyapunov_tolerance(&self, constant: f64) -> f64 {
        constant * (self.dt_max_used + self.grid.dx * self.grid.dx) * self.initial_clf()
    }
}

fn make_record(
    state: &FullState,
    f: f64,
    dt: f64,
    params: &PhysicalParams,
    gains: &Gains,
    grid: &Grid,
) -> Result<Record> {
    let d = diagnostics(state, params, gains, grid)?;
    Ok(Record {
        t: state.t,
        xi: state.xi,
        w: state.w,
        f,
        clf: d.clf,
        e: d.e,
        w_energy: d.w_energy,
        mass: state.mass(grid),
        norm_x: d.norm_x,
        h_left: d.h_left,
        h_right: d.h_right,
        h_min: state.h_min(),
        h_max: state.h_max(),
        dt,
        momentum: d.momentum,
        viscous_dissipation: d.viscous_dissipation,
        slope_sq: d.slope_sq,
        phi_integral: d.phi_integral,
    })
}

fn force(feedback: &Feedback, state: &FullState, params: &PhysicalParams, grid: &Grid) -> f64 {
    match feedback {
        Feedback::Closed(gains) => control_force(state, params, gains, grid),
        Feedback::Open(_) => 0.0,
    }
}

/// Integrates from `initial.t` to `config.t_end` with adaptive stable steps.
///
/// Returns `Err` only for invalid inputs. A positivity failure during the
/// run stops integration and is reported in [`Trajectory::failure`] together
/// with everything recorded before it.
pub fn simulate(
    initial: &FullState,
    params: &PhysicalParams,
    feedback: Feedback,
    grid: &Grid,
    config: &SolverConfig,
) -> Result<Trajectory> {
    params.validate()?;
    config.validate()?;
    initial.validate(params, grid)?;
    let gains = *feedback.gains();
    let radius = state_space_radius(params);

    let mut snapshot_times: Vec<f64> = config
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| t >= initial.t && t <= config.t_end)
        .collect();
    snapshot_times.sort_by(f64::total_cmp);
    snapshot_times.dedup();
    let mut next_snapshot = 0usize;

    let mut state = initial.clone();
    let mut stepper = Stepper::new(*params, *grid);
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut flags = Flags::default();
    let mut steps = 0usize;
    let mut dt_max_used: f64 = 0.0;
    let mut failure = None;

    let mut f = force(&feedback, &state, params, grid);
    let mut current = make_record(&state, f, 0.0, params, &gains, grid)?;
    let clf0 = current.clf;
    records.push(current);
    let take_snapshot = |state: &FullState, next: &mut usize, snaps: &mut Vec<Snapshot>| {
        while *next < snapshot_times.len() && snapshot_times[*next] <= state.t {
            snaps.push(Snapshot {
                t: snapshot_times[*next],
                state: state.clone(),
            });
            *next += 1;
        }
    };
    take_snapshot(&state, &mut next_snapshot, &mut snapshots);

    let update_flags = |flags: &mut Flags, prev: &Record, rec: &Record, tol_rate: f64| {
        if flags.left_state_space.is_none() && rec.clf >= radius {
            flags.left_state_space = Some(rec.t);
        }
        if flags.spill.is_none() && rec.h_left.max(rec.h_right) >= params.h_max {
            flags.spill = Some(rec.t);
        }
        if flags.clf_increase.is_none() && rec.clf - prev.clf > tol_rate * (rec.t - prev.t) {
            flags.clf_increase = Some(rec.t);
        }
    };
    update_flags(&mut flags, &current, &current, 0.0);

    let t_end = config.t_end;
    while state.t < t_end {
        let mut dt = stable_dt(&state, params, grid, config);
        let mut target = t_end;
        if next_snapshot < snapshot_times.len() {
            target = target.min(snapshot_times[next_snapshot]);
        }
        let land = state.t + dt >= target;
        if land {
            dt = target - state.t;
        }
        let prev_t = state.t;
        if let Err(err) = stepper.advance(&mut state, f, dt) {
            failure = Some(err);
            break;
        }
        if land {
            // avoid drift from accumulated rounding in t
            state.t = target;
        }
        if !(state.t > prev_t) {
            failure = Some(Error::Domain(format!("time step underflow at t = {prev_t}")));
            break;
        }
        steps += 1;
        dt_max_used = dt_max_used.max(dt);
        f = force(&feedback, &state, params, grid);
        take_snapshot(&state, &mut next_snapshot, &mut snapshots);

        let last = state.t >= t_end;
        if steps.is_multiple_of(config.record_every) || last {
            let rec = make_record(&state, f, dt, params, &gains, grid)?;
            let tol_rate = config.lyapunov_constant * (dt_max_used + grid.dx * grid.dx) * clf0;
            update_flags(&mut flags, &current, &rec, tol_rate);
            records.push(rec);
            current = rec;
        }
    }

    Ok(Trajectory {
        params: *params,
        grid: *grid,
        feedback,
        records,
        snapshots,
        flags,
        steps,
        dt_max_used,
        failure,
        final_state: state,
    })
}
