//! Classical two-mode dynamics on the Bloch sphere: energy function,
//! equations of motion, fixed points and the linearized frequency.
//!
//! With `H_mf = Lambda z^2 / 2 - sqrt(1 - z^2) cos(phi)` and time measured in
//! units of `1 / 2J`, `z` and `phi` are canonically conjugate:
//! `dz/dt = -dH/dphi` and `dphi/dt = dH/dz`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DimerError, Result};
use crate::model::{reduce_phase, DimerParams};

/// Integration aborts once `|z|` reaches this distance from a pole.
pub const POLE_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub z: f64,
    pub phi: f64,
}

impl MeanFieldState {
    pub fn new(z: f64, phi: f64) -> Result<Self> {
        if !(z.is_finite() && z.abs() <= 1.0 && phi.is_finite()) {
            return Err(DimerError::InvalidInput(format!("invalid mean-field state ({z}, {phi})")));
        }
        Ok(Self { z, phi })
    }
}

pub fn h_mf(state: MeanFieldState, lambda: f64) -> f64 {
    0.5 * lambda * state.z * state.z - (1.0 - state.z * state.z).sqrt() * state.phi.cos()
}

/// `(dz/dt, dphi/dt)` in s^-1. The interaction term is written as
/// `U (N - 1) z`, which equals `2 J Lambda z` and stays finite at J = 0.
pub fn eom(state: MeanFieldState, params: &DimerParams) -> Result<(f64, f64)> {
    let MeanFieldState { z, phi } = state;
    if z.abs() >= 1.0 {
        return Err(DimerError::PoleSingularity(z.abs()));
    }
    let two_j = 2.0 * params.tunneling();
    let interaction = params.interaction() * (params.n_atoms() - 1) as f64;
    let root = (1.0 - z * z).sqrt();
    Ok((
        -two_j * root * phi.sin(),
        interaction * z + two_j * z * phi.cos() / root,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub z: f64,
    pub phi: f64,
    pub stability: Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSet {
    pub lambda: f64,
    pub points: Vec<FixedPoint>,
}

/// `z* = sqrt(1 - 1/Lambda^2)`, the positive self-trapping imbalance.
pub fn self_trapping_imbalance(lambda: f64) -> Result<f64> {
    if !(lambda >= 1.0) {
        return Err(DimerError::NoSelfTrapping(lambda));
    }
    Ok((1.0 - 1.0 / (lambda * lambda)).sqrt())
}

/// The pitchfork at Lambda = 1 turns `(0, pi)` unstable and creates the
/// self-trapping pair `(+-z*, pi)`; at Lambda = 1 exactly `(0, pi)` is
/// reported marginal.
pub fn fixed_points(lambda: f64) -> Result<FixedPointSet> {
    if !(lambda >= 0.0) {
        return Err(DimerError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let fp = |z, phi, stability| FixedPoint { z, phi, stability };
    let mut points = vec![fp(0.0, 0.0, Stability::Stable)];
    if lambda < 1.0 {
        points.push(fp(0.0, PI, Stability::Stable));
    } else if lambda == 1.0 {
        points.push(fp(0.0, PI, Stability::Marginal));
    } else {
        let zs = self_trapping_imbalance(lambda)?;
        points.push(fp(0.0, PI, Stability::Unstable));
        points.push(fp(zs, PI, Stability::Stable));
        points.push(fp(-zs, PI, Stability::Stable));
    }
    Ok(FixedPointSet { lambda, points })
}

/// Small-oscillation frequency about the self-trapping points,
/// `sqrt(Lambda^2 - 1) J / pi` in Hz.
pub fn f_mf(params: &DimerParams) -> Result<f64> {
    let lambda = params.lambda();
    if !(lambda >= 1.0) {
        return Err(DimerError::NoSelfTrapping(lambda));
    }
    let j = params.tunneling();
    if j == 0.0 {
        // sqrt(Lambda^2 - 1) J -> Lambda J = U (N - 1) / 2
        return Ok(params.interaction() * (params.n_atoms() - 1) as f64 / (2.0 * PI));
    }
    Ok((lambda * lambda - 1.0).sqrt() * j / PI)
}

/// Oscillation frequency (Hz) from a central-difference Jacobian of the
/// equations of motion at `state`; `None` when the point is not a center.
pub fn linearized_frequency(state: MeanFieldState, params: &DimerParams) -> Result<Option<f64>> {
    let h = 1e-6;
    let at = |z, phi| eom(MeanFieldState { z, phi }, params);
    let (dz_zp, dp_zp) = at(state.z + h, state.phi)?;
    let (dz_zm, dp_zm) = at(state.z - h, state.phi)?;
    let (dz_pp, dp_pp) = at(state.z, state.phi + h)?;
    let (dz_pm, dp_pm) = at(state.z, state.phi - h)?;
    let a = (dz_zp - dz_zm) / (2.0 * h);
    let b = (dz_pp - dz_pm) / (2.0 * h);
    let c = (dp_zp - dp_zm) / (2.0 * h);
    let d = (dp_pp - dp_pm) / (2.0 * h);
    let trace = a + d;
    let det = a * d - b * c;
    let disc = trace * trace - 4.0 * det;
    if disc >= 0.0 {
        return Ok(None);
    }
    Ok(Some(0.5 * (-disc).sqrt() / (2.0 * PI)))
}

/// RK4 trajectory sampled at `t_grid` (which must start at 0 and increase).
/// `dt = None` uses `0.005 / (2 J + U (N - 1))`.
pub fn integrate_meanfield(
    state0: MeanFieldState,
    params: &DimerParams,
    t_grid: &[f64],
    dt: Option<f64>,
) -> Result<Vec<MeanFieldState>> {
    crate::dynamics::check_time_grid(t_grid)?;
    if t_grid[0] < 0.0 {
        return Err(DimerError::InvalidInput("mean-field time grid must be non-negative".into()));
    }
    if state0.z.abs() >= 1.0 - POLE_MARGIN {
        return Err(DimerError::PoleSingularity(state0.z.abs()));
    }
    let rate = 2.0 * params.tunneling() + params.interaction() * (params.n_atoms() - 1) as f64;
    let dt_max = dt.unwrap_or(if rate > 0.0 { 0.005 / rate } else { 1e-3 });
    if !(dt_max > 0.0) {
        return Err(DimerError::InvalidInput(format!("dt must be positive, got {dt_max}")));
    }
    let f = |s: (f64, f64)| -> Result<(f64, f64)> {
        if s.0.abs() >= 1.0 - POLE_MARGIN {
            return Err(DimerError::PoleSingularity(s.0.abs()));
        }
        eom(MeanFieldState { z: s.0, phi: s.1 }, params)
    };
    let mut s = (state0.z, state0.phi);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        let steps = (span / dt_max).ceil() as usize;
        if steps > 0 {
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1 = f(s)?;
                let k2 = f((s.0 + 0.5 * h * k1.0, s.1 + 0.5 * h * k1.1))?;
                let k3 = f((s.0 + 0.5 * h * k2.0, s.1 + 0.5 * h * k2.1))?;
                let k4 = f((s.0 + h * k3.0, s.1 + h * k3.1))?;
                s.0 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                s.1 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            }
            if s.0.abs() >= 1.0 - POLE_MARGIN {
                return Err(DimerError::PoleSingularity(s.0.abs()));
            }
        }
        t = target;
        out.push(MeanFieldState {
            z: s.0,
            phi: reduce_phase(s.1),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(lambda: f64, j: f64) -> DimerParams {
        DimerParams::from_lambda(40, j, lambda).unwrap()
    }

    #[test]
    fn energy_function_values() {
        assert_eq!(h_mf(MeanFieldState::new(0.0, 0.0).unwrap(), 3.0), -1.0);
        assert_relative_eq!(h_mf(MeanFieldState::new(0.0, PI).unwrap(), 3.0), 1.0);
        let zs = self_trapping_imbalance(5.0).unwrap();
        assert_relative_eq!(h_mf(MeanFieldState::new(zs, PI).unwrap(), 5.0), 2.6, epsilon = 1e-12);
    }

    #[test]
    fn eom_direct_substitution() {
        let p = DimerParams::from_lambda(10, 1.0, 3.0).unwrap();
        let (dz, dphi) = eom(MeanFieldState::new(0.0, PI / 2.0).unwrap(), &p).unwrap();
        assert_relative_eq!(dz, -2.0, epsilon = 1e-15);
        assert_eq!(dphi, 0.0);
        assert!(matches!(
            eom(MeanFieldState::new(1.0, 0.0).unwrap(), &p),
            Err(DimerError::PoleSingularity(_))
        ));
    }

    #[test]
    fn fixed_points_are_stationary() {
        for lambda in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let p = params(lambda, 10.0);
            let set = fixed_points(lambda).unwrap();
            let expected = if lambda > 1.0 { 4 } else { 2 };
            assert_eq!(set.points.len(), expected);
            for fp in &set.points {
                let (dz, dphi) = eom(MeanFieldState::new(fp.z, fp.phi).unwrap(), &p).unwrap();
                assert!(dz.abs() < 1e-12 && dphi.abs() < 1e-12, "{fp:?}: {dz} {dphi}");
            }
        }
        let set = fixed_points(5.0).unwrap();
        assert_relative_eq!(set.points[2].z, 2.0 * 6f64.sqrt() / 5.0, epsilon = 1e-15);
        assert_eq!(fixed_points(1.0).unwrap().points[1].stability, Stability::Marginal);
        assert_eq!(fixed_points(0.5).unwrap().points[1].stability, Stability::Stable);
        assert!(fixed_points(1e8).unwrap().points[2].z > 1.0 - 1e-15);
    }

    #[test]
    fn frequency_formula() {
        assert_eq!(f_mf(&params(1.0, 10.0)).unwrap(), 0.0);
        assert!((f_mf(&params(5.0, 10.0)).unwrap() - 15.59).abs() < 0.005);
        assert_relative_eq!(f_mf(&params(2.0, 1.0)).unwrap(), 3f64.sqrt() / PI, epsilon = 1e-12);
        assert!(matches!(f_mf(&params(0.5, 1.0)), Err(DimerError::NoSelfTrapping(_))));
    }

    #[test]
    fn jacobian_frequency_matches_formula() {
        for lambda in [1.5, 2.0, 5.0, 10.0] {
            let p = params(lambda, 10.0);
            let zs = self_trapping_imbalance(lambda).unwrap();
            let f = linearized_frequency(MeanFieldState::new(zs, PI).unwrap(), &p)
                .unwrap()
                .unwrap();
            assert_relative_eq!(f, f_mf(&p).unwrap(), max_relative = 1e-6);
        }
        // saddle
        let p = params(5.0, 10.0);
        assert_eq!(linearized_frequency(MeanFieldState::new(0.0, PI).unwrap(), &p).unwrap(), None);
    }

    #[test]
    fn trajectory_at_fixed_point_is_constant() {
        let p = params(5.0, 10.0);
        let zs = self_trapping_imbalance(5.0).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let tr = integrate_meanfield(MeanFieldState::new(zs, PI).unwrap(), &p, &grid, None).unwrap();
        for s in tr {
            assert!((s.z - zs).abs() < 1e-12 && (s.phi - PI).abs() < 1e-12);
        }
    }

    #[test]
    fn small_oscillation_period_and_energy() {
        let p = params(5.0, 10.0);
        let zs = self_trapping_imbalance(5.0).unwrap();
        let s0 = MeanFieldState::new(zs - 1e-4, PI).unwrap();
        let dt = 1e-4;
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * dt).collect();
        let tr = integrate_meanfield(s0, &p, &grid, None).unwrap();
        let e0 = h_mf(s0, 5.0);
        for s in &tr {
            assert!(((h_mf(*s, 5.0) - e0) / e0).abs() < 1e-8);
        }
        // upward crossings of z* give the period
        let ups: Vec<f64> = tr
            .windows(2)
            .zip(&grid)
            .filter(|(w, _)| w[0].z < zs && w[1].z >= zs)
            .map(|(w, t)| t + dt * (zs - w[0].z) / (w[1].z - w[0].z))
            .collect();
        let period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
        assert_relative_eq!(1.0 / period, f_mf(&p).unwrap(), max_relative = 1e-3);
    }

    #[test]
    fn pole_is_reported() {
        let p = params(5.0, 10.0);
        let r = integrate_meanfield(MeanFieldState::new(1.0, 0.0).unwrap(), &p, &[0.0], None);
        assert!(matches!(r, Err(DimerError::PoleSingularity(_))));
    }
}
