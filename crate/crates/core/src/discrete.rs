//! Staggered-grid difference and quadrature rules shared by the
//! functionals, the feedback law and the solver.
//!
//! Face integrands use the trapezoid rule over faces (equivalently: face
//! values averaged onto cells, then the midpoint rule). Cell integrands use
//! the midpoint rule. Levels at the walls come from the quadratic through the
//! three nearest cell centers.

/// Second-order extrapolation of the cell levels to `x = 0` and `x = L`.
#[inline]
pub fn wall_levels(h: &[f64]) -> (f64, f64) {
    let n = h.len();
    let left = (15.0 * h[0] - 10.0 * h[1] + 3.0 * h[2]) / 8.0;
    let right = (15.0 * h[n - 1] - 10.0 * h[n - 2] + 3.0 * h[n - 3]) / 8.0;
    (left, right)
}

/// Levels at all `N + 1` faces: arithmetic mean inside, extrapolated at the walls.
pub fn face_levels_into(h: &[f64], out: &mut [f64]) {
    let n = h.len();
    debug_assert_eq!(out.len(), n + 1);
    for j in 1..n {
        out[j] = 0.5 * (h[j - 1] + h[j]);
    }
    let (left, right) = wall_levels(h);
    out[0] = left;
    out[n] = right;
}

pub fn face_levels(h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h.len() + 1];
    face_levels_into(h, &mut out);
    out
}

/// `h_x` at all faces: centered inside, one-sided second order at the walls.
pub fn face_slopes_into(h: &[f64], dx: f64, out: &mut [f64]) {
    let n = h.len();
    debug_assert_eq!(out.len(), n + 1);
    let inv_dx = 1.0 / dx;
    for j in 1..n {
        out[j] = (h[j] - h[j - 1]) * inv_dx;
    }
    out[0] = (-2.0 * h[0] + 3.0 * h[1] - h[2]) * inv_dx;
    out[n] = (2.0 * h[n - 1] - 3.0 * h[n - 2] + h[n - 3]) * inv_dx;
}

pub fn face_slopes(h: &[f64], dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; h.len() + 1];
    face_slopes_into(h, dx, &mut out);
    out
}

/// `v_x` at cell centers from the two adjacent faces.
pub fn cell_slopes_into(v: &[f64], dx: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len() + 1, v.len());
    let inv_dx = 1.0 / dx;
    for (i, o) in out.iter_mut().enumerate() {
        *o = (v[i + 1] - v[i]) * inv_dx;
    }
}

pub fn cell_slopes(v: &[f64], dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len() - 1];
    cell_slopes_into(v, dx, &mut out);
    out
}

/// Trapezoid rule over face samples.
#[inline]
pub fn trapezoid<I: IntoIterator<Item = f64>>(face_values: I, dx: f64) -> f64 {
    let mut iter = face_values.into_iter();
    let first = iter.next().unwrap_or(0.0);
    let mut sum = 0.5 * first;
    let mut last = first;
    let mut count = 1usize;
    for u in iter {
        sum += u;
        last = u;
        count += 1;
    }
    if count > 1 {
        sum -= 0.5 * last;
    }
    sum * dx
}

/// Midpoint rule over cell samples.
#[inline]
pub fn midpoint<I: IntoIterator<Item = f64>>(cell_values: I, dx: f64) -> f64 {
    cell_values.into_iter().sum::<f64>() * dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let dx = 0.1;
        let f = |x: f64| 2.0 - 3.0 * x + 5.0 * x * x;
        let df = |x: f64| -3.0 + 10.0 * x;
        let n = 6;
        let h: Vec<f64> = (0..n).map(|i| f((i as f64 + 0.5) * dx)).collect();
        let (l, r) = wall_levels(&h);
        assert!((l - f(0.0)).abs() < 1e-12);
        assert!((r - f(n as f64 * dx)).abs() < 1e-12);
        let s = face_slopes(&h, dx);
        assert!((s[0] - df(0.0)).abs() < 1e-10);
        assert!((s[n] - df(n as f64 * dx)).abs() < 1e-10);
        assert!((s[3] - df(0.3)).abs() < 1e-10);
    }

    #[test]
    fn quadrature_rules() {
        assert!((trapezoid([1.0, 1.0, 1.0], 0.5) - 1.0).abs() < 1e-15);
        assert!((trapezoid([0.0, 2.0, 0.0], 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(midpoint([1.0, 2.0, 3.0], 0.5), 3.0);
        assert_eq!(cell_slopes(&[0.0, 1.0, 3.0], 0.5), vec![2.0, 4.0]);
    }
}
