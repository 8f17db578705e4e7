//! Linear-order transition-state diagnostics in normal-form coordinates.
//!
//! The dividing surface is `q_1 = 0`, the NHIM `q_1 = p_1 = 0`. At quadratic
//! order the flow conserves `I_1 = p_1^2 - q_1^2` and
//! `I_k = p_k^2 + q_k^2`, and a trajectory crosses the dividing surface only
//! if `I_1 > 0`. Reactivity is judged over the recorded horizon.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamsys::CanonicalState;
use crate::normal_form::NormalFormTransform;
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub time: f64,
    pub direction: Direction,
    /// `p_1` interpolated at the crossing.
    pub p1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReactionDiagnostics {
    /// Invariants at the first sample.
    pub invariants: Vec<f64>,
    pub ds_crossings: Vec<Crossing>,
    pub reactive: bool,
    /// Smallest `sqrt(q_1^2 + p_1^2)` along the trajectory.
    pub nhim_distance: f64,
}

/// `I_1 = p_1^2 - q_1^2`, `I_k = p_k^2 + q_k^2`.
pub fn linear_invariants(qp: &[f64]) -> Vec<f64> {
    let n = qp.len() / 2;
    (0..n)
        .map(|k| {
            let (q, p) = (qp[k], qp[n + k]);
            if k == 0 {
                p * p - q * q
            } else {
                p * p + q * q
            }
        })
        .collect()
}

/// Maps every recorded state into normal-form coordinates.
pub fn to_normal_form(t: &NormalFormTransform, traj: &Trajectory) -> Result<Vec<CanonicalState>> {
    traj.states.iter().map(|z| t.to_normal_form(z)).collect()
}

/// Dividing-surface crossings of a sampled normal-form trajectory, located
/// by linear interpolation between samples.
pub fn classify_reactive(times: &[f64], qp: &[CanonicalState]) -> Result<ReactionDiagnostics> {
    if qp.len() < 2 || times.len() != qp.len() {
        return Err(Error::TrajectoryTooShort(qp.len().min(times.len())));
    }
    let n = qp[0].dof();
    let mut crossings = Vec::new();
    for k in 1..qp.len() {
        let (a, b) = (&qp[k - 1], &qp[k]);
        let (qa, qb) = (a[0], b[0]);
        // half-open test so a sample lying exactly on the surface counts once
        if !((qa < 0.0 && qb >= 0.0) || (qa > 0.0 && qb <= 0.0)) {
            continue;
        }
        let s = if qa == qb { 0.0 } else { qa / (qa - qb) };
        let time = times[k - 1] + s * (times[k] - times[k - 1]);
        let p1 = a[n] + s * (b[n] - a[n]);
        let direction = if p1 > 0.0 || (p1 == 0.0 && qb > qa) {
            Direction::Forward
        } else {
            Direction::Backward
        };
        crossings.push(Crossing { time, direction, p1 });
    }
    let nhim_distance = qp.iter().map(|z| z[0].hypot(z[n])).fold(f64::INFINITY, f64::min);
    Ok(ReactionDiagnostics {
        invariants: linear_invariants(&qp[0]),
        reactive: !crossings.is_empty(),
        ds_crossings: crossings,
        nhim_distance,
    })
}

/// Convenience wrapper: transforms the trajectory and classifies it.
pub fn diagnose(t: &NormalFormTransform, traj: &Trajectory) -> Result<ReactionDiagnostics> {
    classify_reactive(&traj.times, &to_normal_form(t, traj)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // exact hyperbolic flow with lambda = 1, sampled every 0.01 up to t_end
    fn hyperbolic(q0: f64, p0: f64, t_end: f64) -> (Vec<f64>, Vec<CanonicalState>) {
        let steps = (t_end / 0.01) as usize;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * 0.01).collect();
        let states = times
            .iter()
            .map(|&t| {
                CanonicalState::new(vec![q0 * t.cosh() + p0 * t.sinh(), q0 * t.sinh() + p0 * t.cosh()]).unwrap()
            })
            .collect();
        (times, states)
    }

    #[test]
    fn invariants() {
        assert_eq!(linear_invariants(&[0.0, 0.0, 1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(linear_invariants(&[1.0, 0.0, 1.0, 0.0])[0], 0.0);
        assert_eq!(linear_invariants(&[0.0, 3.0, 0.0, 4.0])[1], 25.0);
    }

    #[test]
    fn reactive_forward_crossing() {
        let (t, z) = hyperbolic(-1.0, 1.1, 5.0);
        let d = classify_reactive(&t, &z).unwrap();
        assert_abs_diff_eq!(d.invariants[0], 0.21, epsilon = 1e-12);
        assert!(d.reactive);
        assert_eq!(d.ds_crossings.len(), 1);
        let c = d.ds_crossings[0];
        assert_eq!(c.direction, Direction::Forward);
        // q1(t) = 0 at tanh t = 1/1.1
        assert_abs_diff_eq!(c.time, (1.0f64 / 1.1).atanh(), epsilon = 1e-4);
        assert!(c.p1.abs() > 1e-10);
    }

    #[test]
    fn nonreactive() {
        let (t, z) = hyperbolic(-1.0, 0.5, 5.0);
        let d = classify_reactive(&t, &z).unwrap();
        assert!(d.invariants[0] < 0.0);
        assert!(!d.reactive);
        assert!(d.ds_crossings.is_empty());
        // q^2 + p^2 = 1.25 cosh 2t - sinh 2t has minimum sqrt(1.25^2 - 1) = 0.75
        assert_abs_diff_eq!(d.nhim_distance, 0.75f64.sqrt(), epsilon = 1e-3);
    }

    #[test]
    fn backward_crossing() {
        let (t, z) = hyperbolic(1.0, -1.1, 5.0);
        let d = classify_reactive(&t, &z).unwrap();
        assert_eq!(d.ds_crossings.len(), 1);
        assert_eq!(d.ds_crossings[0].direction, Direction::Backward);
    }

    #[test]
    fn too_short() {
        let z = vec![CanonicalState::new(vec![1.0, 0.0]).unwrap()];
        assert!(matches!(classify_reactive(&[0.0], &z), Err(Error::TrajectoryTooShort(1))));
    }
}
