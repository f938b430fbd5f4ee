//! Modified Mitchell–Schaeffer membrane kinetics with a Rush–Larsen update.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    /// Inward current time constant [ms].
    pub tau_in: f64,
    /// Outward current time constant [ms].
    pub tau_out: f64,
    /// Gate opening time constant [ms].
    pub tau_open: f64,
    /// Gate closing time constant [ms].
    pub tau_close: f64,
    /// Gate switching potential [dimensionless].
    pub v_gate: f64,
}

impl Default for CellParams {
    fn default() -> Self {
        Self { tau_in: 0.3, tau_out: 6.0, tau_open: 120.0, tau_close: 150.0, v_gate: 0.13 }
    }
}

impl CellParams {
    pub fn is_valid(&self) -> bool {
        [self.tau_in, self.tau_out, self.tau_open, self.tau_close].iter().all(|t| t.is_finite() && *t > 0.0)
            && self.v_gate > 0.0
            && self.v_gate < 1.0
    }
}

/// Transmembrane potential and gate per node at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueState {
    pub vm: Vec<f64>,
    pub h: Vec<f64>,
    /// Time [ms].
    pub t: f64,
}

impl TissueState {
    /// Fully recovered tissue at rest.
    pub fn resting(n: usize) -> Self {
        Self { vm: vec![0.0; n], h: vec![1.0; n], t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.vm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vm.is_empty()
    }

    pub fn max_vm(&self) -> f64 {
        self.vm.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `h·v(v − v_gate)(1 − v)/τ_in − (1 − h)·v/τ_out`
#[inline]
pub fn reaction_rhs(v: f64, h: f64, p: &CellParams) -> f64 {
    h * v * (v - p.v_gate) * (1.0 - v) / p.tau_in - (1.0 - h) * v / p.tau_out
}

/// Right-hand side of the gate equation; `v == v_gate` opens.
#[inline]
pub fn gate_rhs(v: f64, h: f64, p: &CellParams) -> f64 {
    if v > p.v_gate {
        -h / p.tau_close
    } else {
        (1.0 - h) / p.tau_open
    }
}

/// Rush–Larsen step with precomputed gate decay factors for a fixed `dt`.
#[derive(Debug, Clone, Copy)]
pub struct ReactionStepper {
    pub params: CellParams,
    pub dt: f64,
    open_decay: f64,
    close_decay: f64,
}

impl ReactionStepper {
    pub fn new(params: CellParams, dt: f64) -> Self {
        Self {
            params,
            dt,
            open_decay: math::exp(-dt / params.tau_open),
            close_decay: math::exp(-dt / params.tau_close),
        }
    }

    /// Exact gate relaxation for the side of `v_gate` that `v` is on and a
    /// forward-Euler potential update, both from the old values.
    #[inline]
    pub fn step_point(&self, v: f64, h: f64) -> (f64, f64) {
        let v_new = v + self.dt * reaction_rhs(v, h, &self.params);
        let h_new = if v > self.params.v_gate { h * self.close_decay } else { 1.0 + (h - 1.0) * self.open_decay };
        (v_new, h_new)
    }

    pub fn step(&self, state: &mut TissueState) {
        for (v, h) in state.vm.iter_mut().zip(state.h.iter_mut()) {
            let (vn, hn) = self.step_point(*v, *h);
            *v = vn;
            *h = hn;
        }
    }
}

/// Advances every node by `dt` of pure reaction.
pub fn reaction_step(state: &mut TissueState, dt: f64, p: &CellParams) {
    ReactionStepper::new(*p, dt).step(state);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn rhs_hand_values() {
        let p = CellParams::default();
        assert_eq!(reaction_rhs(0.0, 0.3, &p), 0.0);
        assert_abs_diff_eq!(reaction_rhs(0.5, 1.0, &p), 0.5 * 0.37 * 0.5 / 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(reaction_rhs(0.5, 1.0, &p), 0.308333333333, epsilon = 1e-9);
        assert_abs_diff_eq!(reaction_rhs(1.0, 0.0, &p), -1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn gate_closed_form() {
        let p = CellParams::default();
        let (v, h) = ReactionStepper::new(p, 120.0).step_point(0.0, 0.5);
        assert_eq!(v, 0.0);
        assert_abs_diff_eq!(h, 1.0 - 0.5 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.816060279414, epsilon = 1e-9);
        let (_, h) = ReactionStepper::new(p, 150.0).step_point(0.9, 1.0);
        assert_abs_diff_eq!(h, 0.367879441171, epsilon = 1e-9);
        assert_eq!(ReactionStepper::new(p, 0.25).step_point(0.0, 1.0), (0.0, 1.0));
    }

    #[test]
    fn gate_tie_opens() {
        let p = CellParams::default();
        let (_, h) = ReactionStepper::new(p, 10.0).step_point(p.v_gate, 0.5);
        assert!(h > 0.5);
        assert_eq!(gate_rhs(p.v_gate, 0.5, &p), 0.5 / p.tau_open);
    }

    fn rk4_reference(v0: f64, h0: f64, t_end: f64, dt: f64, p: &CellParams) -> (f64, f64) {
        let f = |v: f64, h: f64| (reaction_rhs(v, h, p), gate_rhs(v, h, p));
        let (mut v, mut h) = (v0, h0);
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            let k1 = f(v, h);
            let k2 = f(v + 0.5 * dt * k1.0, h + 0.5 * dt * k1.1);
            let k3 = f(v + 0.5 * dt * k2.0, h + 0.5 * dt * k2.1);
            let k4 = f(v + dt * k3.0, h + dt * k3.1);
            v += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            h += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (v, h)
    }

    #[test]
    fn first_order_convergence_to_reference() {
        let p = CellParams::default();
        let t_end = 0.4;
        for &(v0, h0) in &[(0.05, 0.9), (0.2, 1.0), (0.5, 0.8), (0.9, 0.6), (0.02, 0.3)] {
            let err = |dt: f64| {
                let stepper = ReactionStepper::new(p, dt);
                let (mut v, mut h) = (v0, h0);
                for _ in 0..(t_end / dt).round() as usize {
                    (v, h) = stepper.step_point(v, h);
                }
                let (vr, hr) = rk4_reference(v0, h0, t_end, dt / 100.0, &p);
                (v - vr).abs().max((h - hr).abs())
            };
            let (e1, e2, e3) = (err(0.01), err(0.005), err(0.0025));
            assert!(e3 < e2 && e2 < e1, "({v0},{h0}): {e1} {e2} {e3}");
            let order = (e2 / e3).log2();
            assert!((0.8..1.3).contains(&order), "({v0},{h0}): order {order}");
        }
    }

    #[test]
    fn rest_is_stationary() {
        let p = CellParams::default();
        let mut s = TissueState::resting(4);
        reaction_step(&mut s, 0.25, &p);
        assert_eq!(s, TissueState::resting(4));
    }

    proptest! {
        #[test]
        fn gate_stays_in_unit_interval(v in -0.1..1.1f64, h in 0.0..=1.0f64, dt in 0.0..1000.0f64) {
            let (_, hn) = ReactionStepper::new(CellParams::default(), dt).step_point(v, h);
            prop_assert!((0.0..=1.0).contains(&hn));
        }
    }
}
