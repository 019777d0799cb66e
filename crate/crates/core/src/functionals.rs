//! Control Lyapunov functional, its barrier function and the constants of
//! the stabilization theory.
//!
//! The barrier `G(h) = sgn(h - h*) (2/3 h sqrt(h) - 2 h* sqrt(h) + 4/3 h* sqrt(h*))`
//! is evaluated in the factored form `sgn(h - h*) (2/3) (sqrt(h) - sqrt(h*))^2 (sqrt(h) + 2 sqrt(h*))`,
//! which has no cancellation near `h*`. Its inverse is computed by bisection:
//! `G'(h*) = 0` rules out Newton near the point of interest.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discrete;
use crate::error::{Error, Result};
use crate::model::{FullState, Grid, PhysicalParams};

/// Feedback gains `sigma`, `q`, `k` and the Lyapunov budget `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub sigma: f64,
    pub q: f64,
    pub k: f64,
    pub r: f64,
}

impl Gains {
    pub fn new(sigma: f64, q: f64, k: f64, r: f64) -> Self {
        Self { sigma, q, k, r }
    }

    /// Positivity of the gains and `0 <= r < R`. The gain inequality on `k`
    /// is checked separately by [`derived_constants`].
    pub fn validate(&self, params: &PhysicalParams) -> Result<()> {
        for (name, value) in [("sigma", self.sigma), ("q", self.q), ("k", self.k)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        let radius = state_space_radius(params);
        if !(self.r >= 0.0 && self.r < radius) {
            return Err(Error::InvalidParams(format!(
                "budget r = {} must satisfy 0 <= r < R = {radius}",
                self.r
            )));
        }
        Ok(())
    }
}

#[inline]
fn barrier_raw(h: f64, h_star: f64) -> f64 {
    let s = h.sqrt();
    let a = h_star.sqrt();
    let d = (h - h_star) / (s + a);
    let magnitude = (2.0 / 3.0) * d * d * (s + 2.0 * a);
    if h > h_star {
        magnitude
    } else if h < h_star {
        -magnitude
    } else {
        0.0
    }
}

/// Lower end of the range of the barrier, `-(4/3) h* sqrt(h*)`.
pub fn barrier_floor(params: &PhysicalParams) -> f64 {
    let hs = params.h_star();
    -(4.0 / 3.0) * hs * hs.sqrt()
}

/// The increasing barrier function `G`; zero at `h*`.
pub fn barrier(h: f64, params: &PhysicalParams) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("barrier needs h > 0, got {h}")));
    }
    Ok(barrier_raw(h, params.h_star()))
}

/// Inverse of [`barrier`], by bisection to machine precision.
pub fn barrier_inv(y: f64, params: &PhysicalParams) -> Result<f64> {
    let hs = params.h_star();
    let floor = barrier_floor(params);
    if !(y > floor) || !y.is_finite() {
        return Err(Error::Domain(format!("barrier inverse needs y > {floor}, got {y}")));
    }
    if y == 0.0 {
        return Ok(hs);
    }
    let (mut lo, mut hi) = if y > 0.0 {
        let mut hi = 2.0 * hs;
        while barrier_raw(hi, hs) < y {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Domain(format!("barrier inverse overflow for y = {y}")));
            }
        }
        (hs, hi)
    } else {
        (0.0, hs)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if barrier_raw(mid, hs) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = if lo > 0.0 && (barrier_raw(lo, hs) - y).abs() < (barrier_raw(hi, hs) - y).abs() {
        lo
    } else {
        hi
    };
    Ok(h)
}

/// `c = 1 / (mu sqrt(g))`, the scale linking the functional to the barrier.
#[inline]
pub fn barrier_scale(params: &PhysicalParams) -> f64 {
    1.0 / (params.mu * params.g.sqrt())
}

/// Radius `R` of the state space `{V < R}`.
pub fn state_space_radius(params: &PhysicalParams) -> f64 {
    let hs = params.h_star();
    let hm = params.h_max;
    (2.0 * params.mu * params.g.sqrt() / 3.0) * (2.0 * hs * hs.sqrt() + hm.sqrt() * (hm - 3.0 * hs).min(0.0))
}

/// Largest functional value for which the level sandwich holds,
/// `(4/3) mu h* sqrt(g h*)`.
pub fn sandwich_limit(params: &PhysicalParams) -> f64 {
    let hs = params.h_star();
    (4.0 / 3.0) * params.mu * hs * (params.g * hs).sqrt()
}

/// Pointwise level bounds `(G^-1(-cV), G^-1(cV))` implied by a functional value.
pub fn level_bounds(v_value: f64, params: &PhysicalParams) -> Result<(f64, f64)> {
    let limit = sandwich_limit(params);
    if !(v_value >= 0.0 && v_value < limit) {
        return Err(Error::Domain(format!(
            "level bounds need 0 <= V < {limit}, got {v_value}"
        )));
    }
    let c = barrier_scale(params);
    Ok((barrier_inv(-c * v_value, params)?, barrier_inv(c * v_value, params)?))
}

/// Discrete profiles derived once per state.
struct Profiles {
    h_face: Vec<f64>,
    h_x: Vec<f64>,
    v_x: Vec<f64>,
}

impl Profiles {
    fn new(state: &FullState, grid: &Grid) -> Self {
        Self {
            h_face: discrete::face_levels(&state.h),
            h_x: discrete::face_slopes(&state.h, grid.dx),
            v_x: discrete::cell_slopes(&state.v, grid.dx),
        }
    }
}

fn potential_part(state: &FullState, params: &PhysicalParams, grid: &Grid) -> f64 {
    let hs = params.h_star();
    discrete::midpoint(state.h.iter().map(|h| (h - hs) * (h - hs)), grid.dx)
}

fn require_positive_faces(state: &FullState, h_face: &[f64]) -> Result<()> {
    if let Some((index, value)) = state.first_nonpositive() {
        return Err(Error::Domain(format!("level h[{index}] = {value} is not positive")));
    }
    if let Some((j, &value)) = h_face.iter().enumerate().find(|(_, &h)| !(h > 0.0)) {
        return Err(Error::Domain(format!(
            "extrapolated face level {j} = {value} is not positive"
        )));
    }
    Ok(())
}

/// Mechanical energy `E = 1/2 int h v^2 + g/2 int (h - h*)^2`.
pub fn energy_e(state: &FullState, params: &PhysicalParams, grid: &Grid) -> f64 {
    let h_face = discrete::face_levels(&state.h);
    let kinetic = discrete::trapezoid(h_face.iter().zip(&state.v).map(|(h, v)| h * v * v), grid.dx);
    0.5 * kinetic + 0.5 * params.g * potential_part(state, params, grid)
}

/// The field `hv + mu h_x` at faces.
pub fn viscous_momentum_field(state: &FullState, params: &PhysicalParams, grid: &Grid) -> Vec<f64> {
    let h_face = discrete::face_levels(&state.h);
    let h_x = discrete::face_slopes(&state.h, grid.dx);
    h_face
        .iter()
        .zip(&state.v)
        .zip(&h_x)
        .map(|((h, v), hx)| h * v + params.mu * hx)
        .collect()
}

/// `W = 1/2 int h^-1 (hv + mu h_x)^2 + g/2 int (h - h*)^2`.
pub fn energy_w(state: &FullState, params: &PhysicalParams, grid: &Grid) -> Result<f64> {
    let h_face = discrete::face_levels(&state.h);
    require_positive_faces(state, &h_face)?;
    let phi = viscous_momentum_field(state, params, grid);
    let flux_part = discrete::trapezoid(h_face.iter().zip(&phi).map(|(h, p)| p * p / h), grid.dx);
    Ok(0.5 * flux_part + 0.5 * params.g * potential_part(state, params, grid))
}

fn tank_part(state: &FullState, gains: &Gains) -> f64 {
    let z = state.w + gains.k * state.xi;
    0.5 * gains.q * gains.k * gains.k * state.xi * state.xi + 0.5 * gains.q * z * z
}

/// The control Lyapunov functional `V = W + E + (q k^2/2) xi^2 + (q/2)(w + k xi)^2`.
pub fn clf_value(state: &FullState, params: &PhysicalParams, gains: &Gains, grid: &Grid) -> Result<f64> {
    Ok(energy_w(state, params, grid)? + energy_e(state, params, grid) + tank_part(state, gains))
}

/// Squared contributions to the state norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormParts {
    pub xi: f64,
    pub w: f64,
    /// `||h - h*||^2`
    pub deviation: f64,
    /// `||h_x||^2`
    pub slope: f64,
    /// `||v||^2`
    pub velocity: f64,
}

impl NormParts {
    pub fn total(&self) -> f64 {
        self.xi + self.w + self.deviation + self.slope + self.velocity
    }

    /// Squared norm with the position error left out.
    pub fn without_position(&self) -> f64 {
        self.w + self.deviation + self.slope + self.velocity
    }
}

pub fn norm_parts(state: &FullState, params: &PhysicalParams, grid: &Grid) -> NormParts {
    let h_x = discrete::face_slopes(&state.h, grid.dx);
    NormParts {
        xi: state.xi * state.xi,
        w: state.w * state.w,
        deviation: potential_part(state, params, grid),
        slope: discrete::trapezoid(h_x.iter().map(|s| s * s), grid.dx),
        velocity: discrete::trapezoid(state.v.iter().map(|v| v * v), grid.dx),
    }
}

/// `(xi^2 + w^2 + ||h - h*||^2 + ||h_x||^2 + ||v||^2)^(1/2)`.
pub fn state_norm(state: &FullState, params: &PhysicalParams, grid: &Grid) -> f64 {
    norm_parts(state, params, grid).total().sqrt()
}

/// `int h_x^2 + int h v_x^2 + xi^2 + (w + k xi)^2`, the quantity the
/// functional is dominated by along closed-loop solutions.
pub fn dissipation(state: &FullState, gains: &Gains, grid: &Grid) -> f64 {
    let p = Profiles::new(state, grid);
    let slope = discrete::trapezoid(p.h_x.iter().map(|s| s * s), grid.dx);
    let visc = discrete::midpoint(state.h.iter().zip(&p.v_x).map(|(h, vx)| h * vx * vx), grid.dx);
    let z = state.w + gains.k * state.xi;
    slope + visc + state.xi * state.xi + z * z
}

/// Every per-state scalar the solver records, computed in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub e: f64,
    pub w_energy: f64,
    pub clf: f64,
    pub norm_x: f64,
    /// `int h v`
    pub momentum: f64,
    /// `int h v_x^2`
    pub viscous_dissipation: f64,
    /// `int h_x^2`
    pub slope_sq: f64,
    /// `int (h v + mu h_x)`
    pub phi_integral: f64,
    pub h_left: f64,
    pub h_right: f64,
}

pub fn diagnostics(state: &FullState, params: &PhysicalParams, gains: &Gains, grid: &Grid) -> Result<Diagnostics> {
    let p = Profiles::new(state, grid);
    require_positive_faces(state, &p.h_face)?;
    let dx = grid.dx;
    let potential = potential_part(state, params, grid);
    let mut kinetic = 0.0;
    let mut flux_sq = 0.0;
    let mut momentum = 0.0;
    let mut slope_sq = 0.0;
    let mut phi_integral = 0.0;
    let mut vel_sq = 0.0;
    let last = grid.n;
    for j in 0..=last {
        let weight = if j == 0 || j == last { 0.5 } else { 1.0 };
        let h = p.h_face[j];
        let v = state.v[j];
        let hx = p.h_x[j];
        let phi = h * v + params.mu * hx;
        kinetic += weight * h * v * v;
        flux_sq += weight * phi * phi / h;
        momentum += weight * h * v;
        slope_sq += weight * hx * hx;
        phi_integral += weight * phi;
        vel_sq += weight * v * v;
    }
    let (kinetic, flux_sq, momentum, slope_sq, phi_integral, vel_sq) = (
        kinetic * dx,
        flux_sq * dx,
        momentum * dx,
        slope_sq * dx,
        phi_integral * dx,
        vel_sq * dx,
    );
    let viscous_dissipation = discrete::midpoint(state.h.iter().zip(&p.v_x).map(|(h, vx)| h * vx * vx), dx);
    let e = 0.5 * kinetic + 0.5 * params.g * potential;
    let w_energy = 0.5 * flux_sq + 0.5 * params.g * potential;
    let norm_sq = state.xi * state.xi + state.w * state.w + potential + slope_sq + vel_sq;
    Ok(Diagnostics {
        e,
        w_energy,
        clf: e + w_energy + tank_part(state, gains),
        norm_x: norm_sq.sqrt(),
        momentum,
        viscous_dissipation,
        slope_sq,
        phi_integral,
        h_left: p.h_face[0],
        h_right: p.h_face[last],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceClass {
    /// In `S` with `V < R`.
    InX,
    /// In `S` but `V >= R`.
    InSOnly,
    NotInS,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Membership {
    pub class: SpaceClass,
    pub clf: Option<f64>,
    pub radius: f64,
    pub reason: Option<String>,
}

/// Classifies a state against `S` (positive levels, exact mass, zero wall
/// velocities) and the state space `X = {V < R}`.
pub fn classify_state(state: &FullState, params: &PhysicalParams, gains: &Gains, grid: &Grid) -> Membership {
    let radius = state_space_radius(params);
    let not_in_s = |reason: String| Membership {
        class: SpaceClass::NotInS,
        clf: None,
        radius,
        reason: Some(reason),
    };
    if let Err(err) = state.validate(params, grid) {
        return not_in_s(err.to_string());
    }
    match clf_value(state, params, gains, grid) {
        Err(err) => not_in_s(err.to_string()),
        Ok(clf) if clf < radius => Membership {
            class: SpaceClass::InX,
            clf: Some(clf),
            radius,
            reason: None,
        },
        Ok(clf) => Membership {
            class: SpaceClass::InSOnly,
            clf: Some(clf),
            radius,
            reason: Some(format!("V = {clf} >= R = {radius}")),
        },
    }
}

fn check_budget(s: f64, params: &PhysicalParams) -> Result<()> {
    let radius = state_space_radius(params);
    if !(s >= 0.0 && s < radius) {
        return Err(Error::Domain(format!("argument {s} outside [0, R) with R = {radius}")));
    }
    Ok(())
}

fn level_pair(s: f64, params: &PhysicalParams) -> Result<(f64, f64)> {
    check_budget(s, params)?;
    let c = barrier_scale(params);
    Ok((barrier_inv(-c * s, params)?, barrier_inv(c * s, params)?))
}

/// Dissipation constant `Gamma(s)`: `V <= Gamma(V) * dissipation` on `X`.
pub fn dissipation_bound(s: f64, params: &PhysicalParams, gains: &Gains) -> Result<f64> {
    let (lo, hi) = level_pair(s, params)?;
    let l2 = params.length * params.length;
    Ok((3.0 * l2 * hi / (2.0 * PI * PI * lo))
        .max(params.mu * params.mu / lo + params.g * l2)
        .max(gains.q * gains.k * gains.k / 2.0)
        .max(gains.q / 2.0))
}

/// `G1(s)`: `||state||^2 <= V G1(V)` on `X`.
pub fn norm_upper_factor(s: f64, params: &PhysicalParams, gains: &Gains) -> Result<f64> {
    let (lo, _) = level_pair(s, params)?;
    let hm = params.h_max;
    let (q, k, mu) = (gains.q, gains.k, params.mu);
    let denom = (3.0 * hm * lo)
        .min(2.0 * mu * mu)
        .min(3.0 * hm * q * k * k)
        .min(2.0 * hm * q)
        .min(12.0 * hm * params.g);
    Ok(12.0 * hm / denom)
}

/// `G2(s)`: `V / G2(V) <= ||state||^2` on `X`.
pub fn norm_lower_factor(s: f64, params: &PhysicalParams, gains: &Gains) -> Result<f64> {
    let (lo, _) = level_pair(s, params)?;
    let (q, k, mu) = (gains.q, gains.k, params.mu);
    Ok((1.5 * params.h_max)
        .max(mu * mu / lo)
        .max(1.5 * q * k * k)
        .max(q)
        .max(params.g))
}

/// Every constant of the stabilization estimate for a given design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub c: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub theta: f64,
    pub b: f64,
    /// `G^-1(-c r)`
    pub level_lo: f64,
    /// `G^-1(c r)`
    pub level_hi: f64,
    /// Right-hand side of the gain inequality on `k`.
    pub k_bound: f64,
    pub eps_proof: f64,
    pub x_aux: f64,
    pub phi: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub omega: f64,
    #[serde(rename = "Gamma_r")]
    pub gamma_r: f64,
    #[serde(rename = "G1_r")]
    pub g1_r: f64,
    #[serde(rename = "G2_r")]
    pub g2_r: f64,
    pub lambda: f64,
    #[serde(rename = "M")]
    pub m_const: f64,
}

impl DerivedConstants {
    /// Guaranteed exponential rate of the functional, `omega / Gamma(r)`.
    pub fn clf_decay_rate(&self) -> f64 {
        self.omega / self.gamma_r
    }
}

/// `theta = sigma g / (g + mu sigma L)`.
pub fn theta(params: &PhysicalParams, sigma: f64) -> f64 {
    sigma * params.g / (params.g + params.mu * sigma * params.length)
}

/// `b = 4 m L^2 H_max theta / (mu pi^2)`.
pub fn b_coefficient(params: &PhysicalParams, sigma: f64) -> f64 {
    4.0 * params.mass * params.length * params.length * params.h_max / (params.mu * PI * PI) * theta(params, sigma)
}

/// Upper bound on `k` from the gain inequality: `q theta G^-1(-cr) / (b + G^-1(-cr))`.
pub fn gain_bound(params: &PhysicalParams, sigma: f64, q: f64, r: f64) -> Result<f64> {
    check_budget(r, params)?;
    let lo = barrier_inv(-barrier_scale(params) * r, params)?;
    Ok(q * theta(params, sigma) * lo / (b_coefficient(params, sigma) + lo))
}

/// Evaluates all constants of the stability estimate.
///
/// Fails with [`Error::GainConditionViolated`] when `k` is not strictly below
/// [`gain_bound`] and with [`Error::DesignInfeasible`] when `omega <= 0`.
pub fn derived_constants(params: &PhysicalParams, gains: &Gains) -> Result<DerivedConstants> {
    params.validate()?;
    gains.validate(params)?;
    let Gains { sigma, q, k, r } = *gains;
    let (g, mu, length) = (params.g, params.mu, params.length);

    let c = barrier_scale(params);
    let radius = state_space_radius(params);
    let (level_lo, level_hi) = level_pair(r, params)?;
    let theta = theta(params, sigma);
    let b = b_coefficient(params, sigma);
    let ratio = theta * level_lo / (b + level_lo);
    let k_bound = q * ratio;
    if !(k < k_bound) {
        return Err(Error::GainConditionViolated { excess: k - k_bound });
    }

    let eps_proof = q - q / sigma * ratio;
    let x_aux = mu * sigma * length / (g + mu * sigma * length) * level_lo;
    let phi = x_aux / (2.0 * b + 2.0 * x_aux) + 0.5;
    let zeta = x_aux / (b * phi + (phi - 1.0) * x_aux);
    let gamma = k * (b + level_lo) / (q * theta * level_lo);
    let beta = b * phi / (b * phi + (phi - 1.0) * x_aux);
    debug_assert!(theta < sigma);
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    debug_assert!(phi > 0.0 && phi < 1.0);
    debug_assert!(eps_proof > 0.0 && eps_proof < q);
    debug_assert!(zeta > 0.0);

    let omega = (mu * g * (1.0 - phi))
        .min(mu * (1.0 - beta / params.h_max * level_hi))
        .min(q * k * k * k)
        .min(q * q * (1.0 - gamma) * ratio);
    if !(omega > 0.0) {
        return Err(Error::DesignInfeasible { omega });
    }

    let gamma_r = dissipation_bound(r, params, gains)?;
    let g1_r = norm_upper_factor(r, params, gains)?;
    let g2_r = norm_lower_factor(r, params, gains)?;
    Ok(DerivedConstants {
        c,
        radius,
        theta,
        b,
        level_lo,
        level_hi,
        k_bound,
        eps_proof,
        x_aux,
        phi,
        zeta,
        gamma,
        beta,
        omega,
        gamma_r,
        g1_r,
        g2_r,
        lambda: omega / (2.0 * gamma_r),
        m_const: (g1_r * g2_r).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{equilibrium_state, make_initial_condition, PerturbationKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(h_max: f64) -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, 1.0, h_max).unwrap()
    }

    /// The barrier exactly as written in expanded form, for oracles.
    fn barrier_expanded(h: f64, hs: f64) -> f64 {
        let sgn = if h > hs {
            1.0
        } else if h < hs {
            -1.0
        } else {
            0.0
        };
        sgn * ((2.0 / 3.0) * h * h.sqrt() - 2.0 * hs * h.sqrt() + (4.0 / 3.0) * hs * hs.sqrt())
    }

    /// Plain bisection on the expanded formula over a fixed bracket.
    fn bisect_oracle(y: f64, hs: f64) -> f64 {
        let (mut lo, mut hi) = (1e-14, 1e3);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if barrier_expanded(mid, hs) < y {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn barrier_values() {
        let p = params(2.0);
        assert_eq!(barrier(1.0, &p).unwrap(), 0.0);
        assert_relative_eq!(barrier(4.0, &p).unwrap(), 8.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(barrier(1e-14, &p).unwrap(), -4.0 / 3.0, max_relative = 1e-6);
        assert!(barrier(0.0, &p).is_err());
        assert!(barrier(-1.0, &p).is_err());
        for h in [0.1, 0.5, 0.9, 1.3, 2.0, 7.0] {
            assert_relative_eq!(barrier(h, &p).unwrap(), barrier_expanded(h, 1.0), max_relative = 1e-12);
        }
    }

    #[test]
    fn barrier_inverse_values() {
        let p = params(2.0);
        assert_eq!(barrier_inv(0.0, &p).unwrap(), 1.0);
        let oracle = bisect_oracle(8.0 / 3.0, 1.0);
        assert!((oracle - 4.0).abs() < 1e-10);
        assert_relative_eq!(barrier_inv(8.0 / 3.0, &p).unwrap(), 4.0, max_relative = 1e-14);
        let y = barrier(0.25, &p).unwrap();
        assert_relative_eq!(barrier_inv(y, &p).unwrap(), 0.25, max_relative = 1e-13);
        assert!(barrier_inv(-4.0 / 3.0, &p).is_err());
        assert!(barrier_inv(-2.0, &p).is_err());
        for y in [-1.2, -0.5, -0.01, 0.01, 0.5, 3.0, 50.0] {
            let h = barrier_inv(y, &p).unwrap();
            assert!((barrier(h, &p).unwrap() - y).abs() <= 1e-12 * y.abs().max(1.0));
            assert!((h - bisect_oracle(y, 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn barrier_derivative_matches_integrand() {
        let p = params(2.0);
        for h in [0.05, 0.3, 0.7, 0.95, 1.05, 1.5, 3.0, 20.0] {
            let step = 1e-6 * h;
            let fd = (barrier(h + step, &p).unwrap() - barrier(h - step, &p).unwrap()) / (2.0 * step);
            let exact = (h - 1.0f64).abs() / h.sqrt();
            assert_relative_eq!(fd, exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn radius_examples() {
        assert_relative_eq!(state_space_radius(&params(4.0)), 4.0 / 3.0, max_relative = 1e-15);
        let expected = (2.0 / 3.0) * (2.0 - 2f64.sqrt());
        assert_relative_eq!(state_space_radius(&params(2.0)), expected, max_relative = 1e-14);
        let p = PhysicalParams::new(1.0, 2.0, 1.0, 1.0, 4.0).unwrap();
        assert_relative_eq!(state_space_radius(&p), 8.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn energies_vanish_at_equilibrium() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 64).unwrap();
        let s = equilibrium_state(&p, &grid, 0.0);
        assert_eq!(energy_e(&s, &p, &grid), 0.0);
        assert_eq!(energy_w(&s, &p, &grid).unwrap(), 0.0);
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        assert_eq!(clf_value(&s, &p, &gains, &grid).unwrap(), 0.0);
        assert_eq!(state_norm(&s, &p, &grid), 0.0);
    }

    #[test]
    fn kinetic_mode_energy() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 200).unwrap();
        let s = make_initial_condition(&p, &grid, PerturbationKind::VelocityMode, 1.0, 1, 0.0, 0.0).unwrap();
        // 1/2 int_0^1 sin^2(pi x) dx = 1/4
        assert!((energy_e(&s, &p, &grid) - 0.25).abs() < 1e-4);
        assert!((energy_w(&s, &p, &grid).unwrap() - 0.25).abs() < 1e-4);
    }

    #[test]
    fn potential_mode_energy() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 200).unwrap();
        let s = make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 0.1, 1, 0.0, 0.0).unwrap();
        assert!((energy_e(&s, &p, &grid) - 0.0025).abs() < 1e-6);

        // oracle: fine midpoint quadrature of the exact integrand
        let n = 200_000;
        let dx = 1.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * dx;
            let h = 1.0 + 0.1 * (2.0 * PI * x).cos();
            let hx = -0.2 * PI * (2.0 * PI * x).sin();
            integral += hx * hx / h * dx;
        }
        let expected = 0.5 * integral + 0.0025;
        assert!((energy_w(&s, &p, &grid).unwrap() - expected).abs() < 2e-4 * expected);
    }

    #[test]
    fn clf_tank_terms() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 16).unwrap();
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let s = equilibrium_state(&p, &grid, 1.0);
        assert_relative_eq!(clf_value(&s, &p, &gains, &grid).unwrap(), 0.5, max_relative = 1e-15);
        let mut s = equilibrium_state(&p, &grid, 0.0);
        s.w = 1.0;
        assert_relative_eq!(clf_value(&s, &p, &gains, &grid).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn level_bound_examples() {
        let p = params(4.0);
        assert_eq!(level_bounds(0.0, &p).unwrap(), (1.0, 1.0));
        let (lo, hi) = level_bounds(0.5, &p).unwrap();
        assert!(lo < 1.0 && hi > 1.0);
        assert!((lo - bisect_oracle(-0.5, 1.0)).abs() < 1e-9);
        assert!((hi - bisect_oracle(0.5, 1.0)).abs() < 1e-9);
        let (lo2, hi2) = level_bounds(0.8, &p).unwrap();
        assert!(lo2 < lo && hi2 > hi);
        assert!(level_bounds(4.0 / 3.0, &p).is_err());
    }

    #[test]
    fn norm_examples() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 400).unwrap();
        assert_eq!(state_norm(&equilibrium_state(&p, &grid, 3.0), &p, &grid), 3.0);
        let s = make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 0.1, 1, 0.0, 0.0).unwrap();
        let expected = (0.005 + 0.02 * PI * PI).sqrt();
        assert!((state_norm(&s, &p, &grid) - expected).abs() < 1e-4);
    }

    #[test]
    fn classification() {
        let p = params(2.0);
        let grid = Grid::for_params(&p, 32).unwrap();
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let eq = equilibrium_state(&p, &grid, 0.0);
        assert_eq!(classify_state(&eq, &p, &gains, &grid).class, SpaceClass::InX);
        let mut bad = eq.clone();
        bad.v[0] = 0.1;
        assert_eq!(classify_state(&bad, &p, &gains, &grid).class, SpaceClass::NotInS);

        // amplitude sweep until the functional crosses R
        let mut crossed = None;
        for step in 1..200 {
            let a = 0.01 * step as f64;
            let s = make_initial_condition(&p, &grid, PerturbationKind::VelocityMode, a, 1, 0.0, 0.0).unwrap();
            let m = classify_state(&s, &p, &gains, &grid);
            if m.class == SpaceClass::InSOnly {
                crossed = Some((a, m));
                break;
            }
            assert_eq!(m.class, SpaceClass::InX);
        }
        let (_, m) = crossed.expect("sweep never left X");
        assert!(m.clf.unwrap() >= m.radius);
    }

    #[test]
    fn proof_constants_at_zero_budget() {
        let p = params(2.0);
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let expected_gamma = (3.0 / (2.0 * PI * PI)).max(2.0).max(0.25).max(1.0);
        assert_relative_eq!(
            dissipation_bound(0.0, &p, &gains).unwrap(),
            expected_gamma,
            max_relative = 1e-12
        );
        assert_relative_eq!(norm_lower_factor(0.0, &p, &gains).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(norm_upper_factor(0.0, &p, &gains).unwrap(), 12.0, max_relative = 1e-12);
        let r = 0.3;
        assert!(dissipation_bound(r, &p, &gains).is_ok() == (r < state_space_radius(&p)));
        assert!(dissipation_bound(0.5, &p, &gains).is_err());
        assert!(dissipation_bound(-0.1, &p, &gains).is_err());
    }

    #[test]
    fn gamma_composition_oracle() {
        let p = params(4.0);
        let gains = Gains::new(1.0, 2.0, 0.5, 0.3);
        let lo = bisect_oracle(-0.3, 1.0);
        let hi = bisect_oracle(0.3, 1.0);
        let expected = (3.0 * hi / (2.0 * PI * PI * lo)).max(1.0 / lo + 1.0).max(0.25).max(1.0);
        assert_relative_eq!(
            dissipation_bound(0.3, &p, &gains).unwrap(),
            expected,
            max_relative = 1e-8
        );
    }

    #[test]
    fn theta_and_b() {
        let p = params(2.0);
        let gains = Gains::new(1.0, 2.0, 0.5, 0.0);
        let d = derived_constants(&p, &gains).unwrap();
        assert_relative_eq!(d.theta, 0.5, max_relative = 1e-15);
        assert_relative_eq!(d.b, 4.0 / (PI * PI), max_relative = 1e-14);
        assert_relative_eq!(d.k_bound, 2.0 * 0.5 / (4.0 / (PI * PI) + 1.0), max_relative = 1e-14);
        assert_relative_eq!(d.gamma, 0.5 * (d.b + 1.0) / (2.0 * 0.5), max_relative = 1e-14);
        assert!(d.gamma < 1.0 && d.theta < gains.sigma);
        assert_relative_eq!(d.beta, 2.0 * d.phi, max_relative = 1e-12);
        assert_relative_eq!(d.lambda, d.omega / (2.0 * d.gamma_r), max_relative = 1e-15);
    }

    #[test]
    fn gain_condition_enforced() {
        let p = params(2.0);
        let bound = gain_bound(&p, 1.0, 2.0, 0.0).unwrap();
        let gains = Gains::new(1.0, 2.0, bound, 0.0);
        assert!(matches!(
            derived_constants(&p, &gains),
            Err(Error::GainConditionViolated { .. })
        ));
    }

    #[test]
    fn infeasible_design_flagged() {
        // with H_max = 2 the level bound G^-1(cr) at half the radius is too
        // close to the wall for omega to stay positive
        let p = params(2.0);
        let r = 0.5 * state_space_radius(&p);
        let k = 0.5 * gain_bound(&p, 1.0, 2.0, r).unwrap();
        let gains = Gains::new(1.0, 2.0, k, r);
        assert!(matches!(
            derived_constants(&p, &gains),
            Err(Error::DesignInfeasible { .. })
        ));
    }

    proptest! {
        #[test]
        fn barrier_round_trip(h in 0.01f64..100.0) {
            let p = params(200.0);
            let back = barrier_inv(barrier(h, &p).unwrap(), &p).unwrap();
            prop_assert!((back - h).abs() <= 1e-10 * h.max(1.0));
        }

        #[test]
        fn barrier_strictly_increasing(a in 0.001f64..50.0, b in 0.001f64..50.0) {
            prop_assume!(a != b);
            let p = params(200.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(barrier(lo, &p).unwrap() < barrier(hi, &p).unwrap());
        }

        #[test]
        fn theta_below_sigma(sigma in 1e-3f64..1e3, mu in 1e-3f64..10.0, g in 0.1f64..20.0) {
            let p = PhysicalParams::new(g, mu, 1.0, 1.0, 2.0).unwrap();
            prop_assert!(theta(&p, sigma) < sigma);
        }

        #[test]
        fn proof_functions_nondecreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = params(4.0);
            let gains = Gains::new(1.0, 2.0, 0.3, 0.0);
            let radius = state_space_radius(&p);
            let (s1, s2) = if a < b { (a * radius, b * radius) } else { (b * radius, a * radius) };
            prop_assume!(s2 < radius);
            prop_assert!(dissipation_bound(s1, &p, &gains).unwrap() <= dissipation_bound(s2, &p, &gains).unwrap());
            prop_assert!(norm_upper_factor(s1, &p, &gains).unwrap() <= norm_upper_factor(s2, &p, &gains).unwrap());
            prop_assert!(norm_lower_factor(s1, &p, &gains).unwrap() <= norm_lower_factor(s2, &p, &gains).unwrap());
        }
    }
}
