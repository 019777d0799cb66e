//! Physical parameters, the staggered grid, state containers and the
//! mapping between the tank frame and the laboratory frame.
//!
//! Levels `h` live at cell centers and relative velocities `v` at cell
//! faces, so the wall condition `v = 0` is imposed exactly on faces `0`
//! and `N` and the conservative mass update telescopes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fluid and tank constants of the 1-D viscous shallow-water tank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Gravity acceleration.
    pub g: f64,
    /// Kinematic viscosity.
    pub mu: f64,
    /// Tank length.
    #[serde(rename = "L")]
    pub length: f64,
    /// Liquid mass per unit width (area of the liquid column).
    #[serde(rename = "m")]
    pub mass: f64,
    /// Wall height.
    #[serde(rename = "H_max")]
    pub h_max: f64,
}

impl PhysicalParams {
    pub fn new(g: f64, mu: f64, length: f64, mass: f64, h_max: f64) -> Result<Self> {
        let p = Self {
            g,
            mu,
            length,
            mass,
            h_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("g", self.g),
            ("mu", self.mu),
            ("L", self.length),
            ("m", self.mass),
            ("H_max", self.h_max),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.h_star() >= self.h_max {
            return Err(Error::InvalidParams(format!(
                "standing assumption h* < H_max violated: h* = m/L = {} but H_max = {}",
                self.h_star(),
                self.h_max
            )));
        }
        Ok(())
    }

    /// Equilibrium level `m / L`.
    #[inline]
    pub fn h_star(&self) -> f64 {
        self.mass / self.length
    }
}

/// Uniform grid of `n` cells on `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub dx: f64,
    pub length: f64,
}

impl Grid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParams(format!("grid needs at least 4 cells, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParams(format!(
                "grid length must be positive, got {length}"
            )));
        }
        Ok(Self {
            n,
            dx: length / n as f64,
            length,
        })
    }

    pub fn for_params(params: &PhysicalParams, n: usize) -> Result<Self> {
        Self::new(params.length, n)
    }

    #[inline]
    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn face(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.cell_center(i)).collect()
    }

    pub fn faces(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.face(j)).collect()
    }
}

/// Closed-loop state in the tank frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    /// Tank position error.
    pub xi: f64,
    /// Tank velocity.
    pub w: f64,
    /// Cell-centered liquid level, `N` values.
    pub h: Vec<f64>,
    /// Face-centered velocity relative to the tank, `N + 1` values.
    pub v: Vec<f64>,
    pub t: f64,
}

impl FullState {
    /// Discrete mass `sum h dx`.
    pub fn mass(&self, grid: &Grid) -> f64 {
        self.h.iter().sum::<f64>() * grid.dx
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.h.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First cell with a non-positive level, if any.
    pub fn first_nonpositive(&self) -> Option<(usize, f64)> {
        self.h
            .iter()
            .enumerate()
            .find(|(_, &h)| !(h > 0.0))
            .map(|(i, &h)| (i, h))
    }

    /// Checks the structural invariants: shapes, positivity, wall zeros and
    /// the mass constraint to `1e-10 m`.
    pub fn validate(&self, params: &PhysicalParams, grid: &Grid) -> Result<()> {
        if self.h.len() != grid.n || self.v.len() != grid.n + 1 {
            return Err(Error::InvalidParams(format!(
                "state shape (h: {}, v: {}) does not match grid with {} cells",
                self.h.len(),
                self.v.len(),
                grid.n
            )));
        }
        if let Some((index, value)) = self.first_nonpositive() {
            return Err(Error::PositivityViolation {
                index,
                value,
                t: self.t,
            });
        }
        if self.v[0] != 0.0 || self.v[grid.n] != 0.0 {
            return Err(Error::InvalidParams("wall velocities must be exactly zero".into()));
        }
        let mass_err = (self.mass(grid) - params.mass).abs();
        if mass_err > 1e-10 * params.mass {
            return Err(Error::InvalidParams(format!(
                "discrete mass differs from m by {mass_err:e}"
            )));
        }
        Ok(())
    }
}

/// Equilibrium `h = h*`, `v = 0`, `w = 0` at position error `xi`.
pub fn equilibrium_state(params: &PhysicalParams, grid: &Grid, xi: f64) -> FullState {
    FullState {
        xi,
        w: 0.0,
        h: vec![params.h_star(); grid.n],
        v: vec![0.0; grid.n + 1],
        t: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    LevelMode,
    VelocityMode,
    Combined,
}

/// Smooth perturbation of the equilibrium.
///
/// Level mode: `h = h* + A cos(2 pi n x / L)` at cell centers, rescaled so the
/// discrete mass is exactly `m`. Velocity mode: `v = A sin(pi n x / L)` at
/// faces, which vanishes at both walls. `Combined` applies both with the same
/// amplitude and mode number.
pub fn make_initial_condition(
    params: &PhysicalParams,
    grid: &Grid,
    kind: PerturbationKind,
    amplitude: f64,
    mode_number: u32,
    xi0: f64,
    w0: f64,
) -> Result<FullState> {
    if mode_number == 0 {
        return Err(Error::InvalidParams("mode_number must be at least 1".into()));
    }
    if !amplitude.is_finite() {
        return Err(Error::InvalidParams(format!(
            "amplitude must be finite, got {amplitude}"
        )));
    }
    let h_star = params.h_star();
    let n = mode_number as f64;
    let mut state = equilibrium_state(params, grid, xi0);
    state.w = w0;

    if matches!(kind, PerturbationKind::LevelMode | PerturbationKind::Combined) {
        for (i, h) in state.h.iter_mut().enumerate() {
            let x = grid.cell_center(i);
            *h = h_star + amplitude * (2.0 * PI * n * x / grid.length).cos();
        }
        if let Some((index, value)) = state.first_nonpositive() {
            return Err(Error::PositivityViolation { index, value, t: 0.0 });
        }
        let scale = params.mass / state.mass(grid);
        state.h.iter_mut().for_each(|h| *h *= scale);
    }
    if matches!(kind, PerturbationKind::VelocityMode | PerturbationKind::Combined) {
        for j in 1..grid.n {
            let x = grid.face(j);
            state.v[j] = amplitude * (PI * n * x / grid.length).sin();
        }
    }
    Ok(state)
}

/// Laboratory-frame picture of a tank-frame state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabFrameView {
    /// Left-wall position.
    pub a: f64,
    /// Target left-wall position.
    pub a_star: f64,
    /// Lab coordinates of the cell centers.
    pub z_cells: Vec<f64>,
    /// Lab coordinates of the faces.
    pub z_faces: Vec<f64>,
    /// Level at `z_cells`.
    pub level: Vec<f64>,
    /// Absolute liquid velocity at `z_faces`.
    pub velocity: Vec<f64>,
    pub t: f64,
}

pub fn to_lab_frame(state: &FullState, grid: &Grid, a_star: f64) -> LabFrameView {
    let a = state.xi + a_star;
    LabFrameView {
        a,
        a_star,
        z_cells: (0..grid.n).map(|i| a + grid.cell_center(i)).collect(),
        z_faces: (0..=grid.n).map(|j| a + grid.face(j)).collect(),
        level: state.h.clone(),
        velocity: state.v.iter().map(|v| v + state.w).collect(),
        t: state.t,
    }
}

/// Inverse of [`to_lab_frame`]. The tank velocity is read from the left wall,
/// where the liquid moves with the tank.
pub fn to_tank_frame(view: &LabFrameView) -> FullState {
    let w = view.velocity[0];
    let mut v: Vec<f64> = view.velocity.iter().map(|vel| vel - w).collect();
    let last = v.len() - 1;
    v[0] = 0.0;
    v[last] = 0.0;
    FullState {
        xi: view.a - view.a_star,
        w,
        h: view.level.clone(),
        v,
        t: view.t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(h_max: f64) -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, 1.0, h_max).unwrap()
    }

    #[test]
    fn rejects_overfull_tank() {
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(PhysicalParams::new(1.0, 0.0, 1.0, 1.0, 2.0).is_err());
        assert!(Grid::new(1.0, 3).is_err());
    }

    #[test]
    fn grid_spacing_is_exact() {
        let grid = Grid::new(3.0, 7).unwrap();
        assert!((grid.dx * 7.0 - 3.0).abs() < 1e-15);
        assert_eq!(grid.faces().len(), 8);
        assert_eq!(grid.face(7), 3.0);
    }

    #[test]
    fn equilibrium_profiles() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 8).unwrap();
        let s = equilibrium_state(&p, &grid, 3.0);
        assert!(s.h.iter().all(|&h| h == 1.0));
        assert!(s.v.iter().all(|&v| v == 0.0));
        assert_eq!((s.xi, s.w), (3.0, 0.0));

        let p = PhysicalParams::new(1.0, 1.0, 4.0, 2.0, 2.0).unwrap();
        let grid = Grid::for_params(&p, 16).unwrap();
        let s = equilibrium_state(&p, &grid, 0.0);
        assert!(s.h.iter().all(|&h| h == 0.5));
        assert_eq!(s.mass(&grid), 2.0);
        s.validate(&p, &grid).unwrap();
    }

    #[test]
    fn zero_amplitude_is_equilibrium() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 10).unwrap();
        let s = make_initial_condition(&p, &grid, PerturbationKind::Combined, 0.0, 3, 0.0, 0.0).unwrap();
        assert_eq!(s, equilibrium_state(&p, &grid, 0.0));
    }

    #[test]
    fn level_mode_samples_cosine() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 32).unwrap();
        let s = make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 0.1, 1, 0.0, 0.0).unwrap();
        for (i, h) in s.h.iter().enumerate() {
            let x = grid.cell_center(i);
            assert!((h - (1.0 + 0.1 * (2.0 * PI * x).cos())).abs() < 1e-14);
        }
        assert!((s.mass(&grid) - 1.0).abs() < 1e-14);
        s.validate(&p, &grid).unwrap();
    }

    #[test]
    fn velocity_mode_vanishes_at_walls() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 16).unwrap();
        let s = make_initial_condition(&p, &grid, PerturbationKind::VelocityMode, 0.2, 2, 0.0, 0.0).unwrap();
        assert_eq!(s.v[0], 0.0);
        assert_eq!(s.v[16], 0.0);
        assert!((s.v[4] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn negative_levels_rejected() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 16).unwrap();
        let err = make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 1.5, 1, 0.0, 0.0);
        assert!(matches!(err, Err(Error::PositivityViolation { .. })));
        assert!(make_initial_condition(&p, &grid, PerturbationKind::LevelMode, 0.1, 0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lab_frame_shifts() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 8).unwrap();
        let view = to_lab_frame(&equilibrium_state(&p, &grid, 0.0), &grid, 5.0);
        assert_eq!(view.a, 5.0);
        assert!(view.level.iter().all(|&h| h == 1.0));
        assert!(view.velocity.iter().all(|&v| v == 0.0));

        let mut s = equilibrium_state(&p, &grid, 2.0);
        s.w = 1.0;
        let view = to_lab_frame(&s, &grid, 5.0);
        assert_eq!(view.a, 7.0);
        assert!(view.velocity.iter().all(|&v| v == 1.0));
        assert_eq!(view.z_faces[0], 7.0);

        let mut s = equilibrium_state(&p, &grid, -1.0);
        s.w = 0.5;
        s.v[4] = 0.3;
        let view = to_lab_frame(&s, &grid, 0.0);
        assert!((view.velocity[4] - 0.8).abs() < 1e-15);
        // wall condition in the lab frame: liquid moves with the tank
        assert_eq!(view.velocity[0], s.w);
        assert_eq!(view.velocity[8], s.w);
    }

    #[test]
    fn lab_frame_round_trip() {
        let p = unit_params(2.0);
        let grid = Grid::for_params(&p, 12).unwrap();
        let mut s = make_initial_condition(&p, &grid, PerturbationKind::Combined, 0.2, 2, -0.7, 0.3).unwrap();
        s.t = 1.25;
        let back = to_tank_frame(&to_lab_frame(&s, &grid, 4.0));
        assert_eq!(back.h, s.h);
        assert_eq!(back.w, s.w);
        assert_eq!(back.t, s.t);
        // (x + a) - a is exact only up to rounding of the shifted value
        assert!((back.xi - s.xi).abs() <= 4.0 * f64::EPSILON * 4.7);
        for (a, b) in back.v.iter().zip(&s.v) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON);
        }

        // dyadic values survive the round trip bit-for-bit
        let mut s = equilibrium_state(&p, &grid, -0.75);
        s.w = 0.5;
        s.v[3] = 0.25;
        assert_eq!(to_tank_frame(&to_lab_frame(&s, &grid, 4.0)), s);
    }
}
