//! The boundary-measurement feedback law, gain admissibility and the
//! finite-time transfer planner.

use serde::Serialize;

use crate::discrete;
use crate::error::{Error, Result};
use crate::functionals::{
    self, derived_constants, gain_bound, norm_parts, state_space_radius, DerivedConstants, Gains,
};
use crate::model::{FullState, Grid, PhysicalParams};

/// The four quantities the feedback law is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurements {
    pub xi: f64,
    pub w: f64,
    /// Total liquid momentum `int h v`.
    pub momentum: f64,
    /// `h(L) - h(0)`.
    pub wall_level_difference: f64,
}

pub fn measure(state: &FullState, grid: &Grid) -> Measurements {
    let h = &state.h;
    // v vanishes on the walls, so only interior faces contribute
    let momentum = (1..grid.n).map(|j| 0.5 * (h[j - 1] + h[j]) * state.v[j]).sum::<f64>() * grid.dx;
    let (left, right) = discrete::wall_levels(h);
    Measurements {
        xi: state.xi,
        w: state.w,
        momentum,
        wall_level_difference: right - left,
    }
}

/// `f = -sigma (2 int h v + mu (h(L) - h(0)) - q (w + k xi))`.
pub fn feedback(m: &Measurements, params: &PhysicalParams, gains: &Gains) -> f64 {
    -gains.sigma * (2.0 * m.momentum + params.mu * m.wall_level_difference - gains.q * (m.w + gains.k * m.xi))
}

pub fn control_force(state: &FullState, params: &PhysicalParams, gains: &Gains, grid: &Grid) -> f64 {
    feedback(&measure(state, grid), params, gains)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GainCheck {
    Ok { bound: f64, margin: f64 },
    Violated { bound: f64, margin: f64 },
}

impl GainCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, GainCheck::Ok { .. })
    }

    pub fn margin(&self) -> f64 {
        match *self {
            GainCheck::Ok { margin, .. } | GainCheck::Violated { margin, .. } => margin,
        }
    }
}

/// Strict inequality `k < q theta G^-1(-cr) / (b + G^-1(-cr))`; margin is `bound - k`.
/// A budget outside `[0, R)` counts as a violation with an infinite deficit.
pub fn check_gain_condition(params: &PhysicalParams, gains: &Gains) -> GainCheck {
    match gain_bound(params, gains.sigma, gains.q, gains.r) {
        Ok(bound) if gains.k > 0.0 && gains.k < bound => GainCheck::Ok {
            bound,
            margin: bound - gains.k,
        },
        Ok(bound) => GainCheck::Violated {
            bound,
            margin: bound - gains.k,
        },
        Err(_) => GainCheck::Violated {
            bound: f64::NAN,
            margin: f64::NEG_INFINITY,
        },
    }
}

/// `max(mu^2 / (h* - eps sqrt(L)), g, 3 H_max / 2)`.
pub fn tolerance_cap(params: &PhysicalParams, epsilon: f64) -> f64 {
    let denom = params.h_star() - epsilon * params.length.sqrt();
    (params.mu * params.mu / denom).max(params.g).max(1.5 * params.h_max)
}

/// Largest tolerance for which the level stays in `(0, H_max)` on the
/// `eps`-ball: `min(h*, H_max - h*) / sqrt(L)`.
pub fn tolerance_limit(params: &PhysicalParams) -> f64 {
    let hs = params.h_star();
    hs.min(params.h_max - hs) / params.length.sqrt()
}

/// Upper bound on the functional for states in the `eps`-ball around rest
/// (position error excluded):
/// `max(mu^2 (h* - eps sqrt(L))^-1, g, 3H_max/2, q) ||(0, w, h - h*, v)||^2 + (3 q k^2 / 2) xi^2`.
pub fn prop1_upper_bound(
    state: &FullState,
    params: &PhysicalParams,
    gains: &Gains,
    grid: &Grid,
    epsilon: f64,
) -> Result<f64> {
    let limit = tolerance_limit(params);
    if !(epsilon > 0.0 && epsilon < limit) {
        return Err(Error::HypothesisViolated(format!(
            "tolerance {epsilon} must lie in (0, {limit})"
        )));
    }
    let parts = norm_parts(state, params, grid);
    let ball_sq = parts.without_position();
    if ball_sq.sqrt() > epsilon {
        return Err(Error::HypothesisViolated(format!(
            "state is at distance {} from rest, outside the tolerance {epsilon}",
            ball_sq.sqrt()
        )));
    }
    let constant = tolerance_cap(params, epsilon).max(gains.q);
    Ok(constant * ball_sq + 1.5 * gains.q * gains.k * gains.k * state.xi * state.xi)
}

/// Budget fractions tried by the planner, largest first.
pub const BUDGET_LADDER: [f64; 5] = [0.9, 0.7, 0.5, 0.3, 0.1];
/// Force gains tried by the planner, in units of `sqrt(g / L)`.
pub const SIGMA_LADDER: [f64; 3] = [0.1, 1.0, 10.0];
/// Fraction of the admissible `k` interval that the planner uses.
pub const K_SAFETY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferPlan {
    pub gains: Gains,
    pub constants: DerivedConstants,
    /// Planned final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    pub epsilon: f64,
    pub xi0: f64,
    /// `max(mu^2 (h* - eps sqrt(L))^-1, g, 3 H_max / 2)`; also the chosen `q`.
    pub q_cap: f64,
    /// Bound on `k` from the gain inequality.
    pub k_bound_gain: f64,
    /// Bound on `k` that keeps the initial functional below `r`; infinite for `xi0 = 0`.
    pub k_bound_budget: f64,
    pub k_safety: f64,
    /// Guaranteed upper bound on the initial functional over the whole `eps`-ball.
    pub certified_clf_bound: f64,
}

/// `T = ln((M |xi0| + M eps) / eps) / lambda`.
pub fn transfer_time(m_const: f64, lambda: f64, xi0: f64, epsilon: f64) -> f64 {
    ((m_const * xi0.abs() + m_const * epsilon) / epsilon).ln() / lambda
}

/// Plans a rest-to-rest transfer over a distance `|xi0|` that ends within
/// `epsilon` of rest.
///
/// Budgets `r` are scanned from the top of [`BUDGET_LADDER`]; at the first
/// budget with any feasible force gain, the gain from [`SIGMA_LADDER`] giving
/// the shortest transfer time is kept.
pub fn plan_transfer(xi0: f64, epsilon: f64, params: &PhysicalParams) -> Result<TransferPlan> {
    params.validate()?;
    if !xi0.is_finite() {
        return Err(Error::InvalidParams(format!("xi0 must be finite, got {xi0}")));
    }
    let radius = state_space_radius(params);
    let limit = tolerance_limit(params);
    if !(epsilon > 0.0 && epsilon < limit) {
        return Err(Error::ToleranceTooLarge(format!(
            "epsilon = {epsilon} must satisfy 0 < epsilon < min(h*, H_max - h*)/sqrt(L) = {limit}"
        )));
    }
    let q_cap = tolerance_cap(params, epsilon);
    let ball = epsilon * epsilon * q_cap;
    if !(ball < radius) {
        return Err(Error::ToleranceTooLarge(format!(
            "epsilon^2 * max(mu^2/(h* - eps sqrt(L)), g, 3 H_max/2) = {ball} must be below R = {radius}"
        )));
    }

    let q = q_cap;
    let sigma_unit = (params.g / params.length).sqrt();
    let mut last_failure = String::from("no budget on the ladder exceeds the tolerance ball");
    for fraction in BUDGET_LADDER {
        let r = fraction * radius;
        if !(ball < r) {
            continue;
        }
        // q equals the cap, so max(cap, q) is the cap
        let k_bound_budget = if xi0 == 0.0 {
            f64::INFINITY
        } else {
            (2.0 / (3.0 * q)).sqrt() * (r - ball).sqrt() / xi0.abs()
        };
        let mut best: Option<TransferPlan> = None;
        for unit in SIGMA_LADDER {
            let sigma = unit * sigma_unit;
            let k_bound_gain = gain_bound(params, sigma, q, r)?;
            let k = K_SAFETY * k_bound_gain.min(k_bound_budget);
            if !(k > 0.0) {
                last_failure = format!("empty gain interval at r = {r}, sigma = {sigma}");
                continue;
            }
            let gains = Gains::new(sigma, q, k, r);
            let constants = match derived_constants(params, &gains) {
                Ok(c) => c,
                Err(err) => {
                    last_failure = format!("r = {r}, sigma = {sigma}: {err}");
                    continue;
                }
            };
            let certified = q_cap * epsilon * epsilon + 1.5 * q * k * k * xi0 * xi0;
            if certified > r {
                last_failure = format!("r = {r}, sigma = {sigma}: initial bound {certified} exceeds budget");
                continue;
            }
            let t_final = transfer_time(constants.m_const, constants.lambda, xi0, epsilon);
            let plan = TransferPlan {
                gains,
                constants,
                t_final,
                epsilon,
                xi0,
                q_cap,
                k_bound_gain,
                k_bound_budget,
                k_safety: K_SAFETY,
                certified_clf_bound: certified,
            };
            if best.as_ref().is_none_or(|b| plan.t_final < b.t_final) {
                best = Some(plan);
            }
        }
        if let Some(plan) = best {
            return Ok(plan);
        }
    }
    Err(Error::NoFeasibleGain(last_failure))
}

/// Certifies a concrete initial state against a plan: it must lie in the
/// `eps`-ball (position error excluded) and its functional must be within budget.
pub fn certify_initial_state(
    plan: &TransferPlan,
    state: &FullState,
    params: &PhysicalParams,
    grid: &Grid,
) -> Result<(f64, f64)> {
    let bound = prop1_upper_bound(state, params, &plan.gains, grid, plan.epsilon)?;
    let clf = functionals::clf_value(state, params, &plan.gains, grid)?;
    if clf > plan.gains.r {
        return Err(Error::HypothesisViolated(format!(
            "initial functional {clf} exceeds the budget {}",
            plan.gains.r
        )));
    }
    Ok((clf, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::clf_value;
    use crate::model::{equilibrium_state, make_initial_condition, PerturbationKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn params(h_max: f64) -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, 1.0, h_max).unwrap()
    }

    #[test]
    fn force_examples() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 20).unwrap();
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let eq = equilibrium_state(&p, &grid, 0.0);
        assert_eq!(control_force(&eq, &p, &gains, &grid), 0.0);

        let mut s = eq.clone();
        s.w = 1.0;
        assert_relative_eq!(control_force(&s, &p, &gains, &grid), 2.0, max_relative = 1e-15);

        // a symmetric level profile has equal wall levels
        let mut s = make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 0.2, 2, 1.0, 0.0).unwrap();
        s.w = 0.0;
        let f = control_force(&s, &p, &gains, &grid);
        assert!((f - 1.0).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn force_sees_only_measurements() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 24).unwrap();
        let gains = Gains::new(1.3, 2.0, 0.4, 0.0);
        let a = make_initial_condition(&p, &grid, PerturbationKind::Combined, 0.1, 2, 0.3, -0.2).unwrap();
        // mass-preserving bump away from the three cells at each wall, then
        // interior velocity changes that restore the total momentum
        let mut b = a.clone();
        b.h[10] += 0.01;
        b.h[12] -= 0.01;
        let (j1, j2) = (8, 15);
        let weight = |s: &FullState, j: usize| 0.5 * (s.h[j - 1] + s.h[j]) * grid.dx;
        b.v[j2] += 0.05 / weight(&b, j2);
        let deficit = measure(&a, &grid).momentum - measure(&b, &grid).momentum;
        b.v[j1] += deficit / weight(&b, j1);
        let ma = measure(&a, &grid);
        let mb = measure(&b, &grid);
        assert!((ma.momentum - mb.momentum).abs() < 1e-14);
        assert_eq!(ma.wall_level_difference, mb.wall_level_difference);
        assert_relative_eq!(
            control_force(&a, &p, &gains, &grid),
            control_force(&b, &p, &gains, &grid),
            max_relative = 1e-13
        );
    }

    #[test]
    fn gain_condition_examples() {
        let p = params(2.0);
        let check = check_gain_condition(&p, &Gains::new(1.0, 2.0, 0.5, 0.0));
        let bound = 2.0 * 0.5 / (4.0 / (PI * PI) + 1.0);
        match check {
            GainCheck::Ok { bound: b, margin } => {
                assert_relative_eq!(b, bound, max_relative = 1e-14);
                assert!((b - 0.7117).abs() < 2e-4);
                assert_relative_eq!(margin, bound - 0.5, max_relative = 1e-13);
            }
            other => panic!("expected ok, got {other:?}"),
        }
        assert!(!check_gain_condition(&p, &Gains::new(1.0, 2.0, bound, 0.0)).is_ok());
        let r = 0.9 * state_space_radius(&p);
        assert!(check_gain_condition(&p, &Gains::new(1.0, 2.0, 1e-9, r)).is_ok());
    }

    #[test]
    fn tolerance_ball_bound_examples() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 32).unwrap();
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let eq = equilibrium_state(&p, &grid, 0.0);
        assert_eq!(prop1_upper_bound(&eq, &p, &gains, &grid, 0.1).unwrap(), 0.0);
        let s = equilibrium_state(&p, &grid, 1.0);
        let bound = prop1_upper_bound(&s, &p, &gains, &grid, 0.1).unwrap();
        assert_relative_eq!(bound, 1.5 * 2.0 * 0.25, max_relative = 1e-15);
        let v = clf_value(&s, &p, &gains, &grid).unwrap();
        assert_relative_eq!(v, 2.0 * 0.25, max_relative = 1e-15);
        assert!(prop1_upper_bound(&s, &p, &gains, &grid, 1.5).is_err());
        let big = make_initial_condition(&p, &grid, PerturbationKind::VelocityMode, 0.5, 1, 0.0, 0.0).unwrap();
        assert!(prop1_upper_bound(&big, &p, &gains, &grid, 0.1).is_err());
    }

    #[test]
    fn transfer_time_arithmetic() {
        assert_relative_eq!(
            transfer_time(2.0, 0.5, 0.9, 0.1),
            2.0 * 20f64.ln(),
            max_relative = 1e-14
        );
        assert_relative_eq!(transfer_time(2.0, 0.5, 0.0, 0.1), 2.0 * 2f64.ln(), max_relative = 1e-14);
        assert!(transfer_time(2.0, 0.5, 0.9, 0.05) > transfer_time(2.0, 0.5, 0.9, 0.1));
        assert!(transfer_time(2.0, 0.5, 1.9, 0.1) > transfer_time(2.0, 0.5, 0.9, 0.1));
    }

    #[test]
    fn glass_of_water_plan() {
        let p = params(2.0);
        let cap = tolerance_cap(&p, 0.05);
        assert_relative_eq!(cap, 3.0, max_relative = 1e-15);
        assert!(0.05f64.powi(2) * cap < state_space_radius(&p));
        let plan = plan_transfer(1.0, 0.05, &p).unwrap();
        assert!(check_gain_condition(&p, &plan.gains).is_ok());
        assert!(plan.gains.q <= cap);
        assert!(plan.certified_clf_bound <= plan.gains.r);
        assert!(plan.gains.k <= plan.k_bound_budget);
        assert_relative_eq!(
            plan.t_final,
            transfer_time(plan.constants.m_const, plan.constants.lambda, 1.0, 0.05),
            max_relative = 1e-15
        );
    }

    #[test]
    fn degenerate_distance() {
        let p = params(2.0);
        let plan = plan_transfer(0.0, 0.05, &p).unwrap();
        assert!(plan.k_bound_budget.is_infinite());
        assert_relative_eq!(
            plan.t_final,
            plan.constants.m_const.ln() / plan.constants.lambda,
            max_relative = 1e-14
        );
    }

    #[test]
    fn oversized_tolerance_rejected() {
        let p = params(2.0);
        assert!(matches!(plan_transfer(1.0, 0.5, &p), Err(Error::ToleranceTooLarge(_))));
        assert!(matches!(plan_transfer(1.0, 1.5, &p), Err(Error::ToleranceTooLarge(_))));
    }
}
